#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "gradcheck.hpp"
#include "parot/nn.hpp"

using namespace parot;
using T = num::Tensor<double>;

TEST_CASE("batchnorm two-point symmetry in training mode") {
  nn::BatchNorm<double> bn(1);
  auto x = T::from({2, 1}, {1, 3});
  auto out = bn.forward(x, true);
  CHECK(out.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(out.data()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("batchnorm eval mode with unit running stats is identity") {
  nn::BatchNorm<double> bn(2);
  auto x = T::from({1, 2}, {0.4, -0.7});
  auto out = bn.forward(x, false);
  CHECK(out.data()[0] == doctest::Approx(0.4).epsilon(1e-5));
  CHECK(out.data()[1] == doctest::Approx(-0.7).epsilon(1e-5));
}

TEST_CASE("batchnorm constant batch maps to zeros") {
  nn::BatchNorm<double> bn(1);
  auto x = T::from({3, 1}, {2, 2, 2});
  auto out = bn.forward(x, true);
  for (double v : out.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("batchnorm training gradient matches finite differences") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> xv(8 * 3);
  for (auto& v : xv) v = u(rng);
  auto x = T::from({8, 3}, xv, true);
  nn::BatchNorm<double> bn(3);
  for (auto& g : bn.gamma.mutable_data()) g = 0.5 + u(rng);
  auto fwd = [&]() { return num::sumsq(num::relu(bn.forward(x, true))); };
  auto grads = num::backward(fwd());
  auto eval = [&]() { return fwd().item(); };
  CHECK(parot::testing::gradcheck_param(x, eval, *grads.find(x.node())) < 1e-4);
  CHECK(parot::testing::gradcheck_param(bn.gamma, eval, *grads.find(bn.gamma.node())) < 1e-4);
  CHECK(parot::testing::gradcheck_param(bn.beta, eval, *grads.find(bn.beta.node())) < 1e-4);
}

TEST_CASE("adam: zero gradient leaves params unchanged except weight decay") {
  nn::ParamMap<double> pm;
  auto p = T::from({2}, {1.0, -2.0}, true);
  pm.add("p", p);
  nn::Adam<double> adam;
  num::GradientMap<double> empty;
  adam.step(pm, empty, 0.1);
  // L2-coupled decay: the only force is the shrinkage term, normalized by
  // Adam to a step of at most ~lr toward zero.
  CHECK(p.data()[0] < 1.0);
  CHECK(p.data()[0] > 1.0 - 0.1 * 1.01);
  CHECK(p.data()[1] > -2.0);
  CHECK(p.data()[1] < -2.0 + 0.1 * 1.01);

  // without decay a zero gradient changes nothing
  auto q = T::from({1}, {0.7}, true);
  nn::ParamMap<double> pm2;
  pm2.add("q", q);
  nn::Adam<double> plain;
  plain.weight_decay = 0;
  plain.step(pm2, empty, 0.1);
  CHECK(q.data()[0] == 0.7);
}

TEST_CASE("adam: unit gradient at step 1 moves by about lr") {
  nn::ParamMap<double> pm;
  auto p = T::from({1}, {0.0}, true);
  pm.add("p", p);
  nn::Adam<double> adam;
  adam.weight_decay = 0;
  num::GradientMap<double> grads;
  grads.accumulate(p.node())[0] = 1.0;
  adam.step(pm, grads, 0.1);
  CHECK(p.data()[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: identical params with identical grads update identically") {
  nn::ParamMap<double> pm;
  auto a = T::from({1}, {0.5}, true);
  auto b = T::from({1}, {0.5}, true);
  pm.add("a", a);
  pm.add("b", b);
  nn::Adam<double> adam;
  num::GradientMap<double> grads;
  grads.accumulate(a.node())[0] = 0.3;
  grads.accumulate(b.node())[0] = 0.3;
  adam.step(pm, grads, 0.05);
  CHECK(a.data()[0] == b.data()[0]);
}

TEST_CASE("adam: NaN gradient aborts naming the block") {
  nn::ParamMap<double> pm;
  auto p = T::from({1}, {0.0}, true);
  pm.add("enc.weight", p);
  nn::Adam<double> adam;
  num::GradientMap<double> grads;
  grads.accumulate(p.node())[0] = std::nan("");
  CHECK_THROWS_WITH_AS(adam.step(pm, grads, 0.1), doctest::Contains("enc.weight"),
                       std::runtime_error);
  CHECK(p.data()[0] == 0.0);  // step aborted before any update
}

TEST_CASE("checkpoint round trip is bit exact") {
  nn::ParamMap<float> pm;
  std::mt19937_64 rng(42);
  pm.add("block.a", nn::init_uniform<float>({4, 3}, 4, rng));
  pm.add("block.b", nn::init_uniform<float>({7}, 7, rng));
  const char* path = "test_ckpt.bin";
  nn::save_params(path, pm);

  nn::ParamMap<float> pm2;
  pm2.add("block.a", num::Tensor<float>::zeros({4, 3}, true));
  pm2.add("block.b", num::Tensor<float>::zeros({7}, true));
  nn::load_params(path, pm2);
  CHECK(pm2.entries[0].tensor.data() == pm.entries[0].tensor.data());
  CHECK(pm2.entries[1].tensor.data() == pm.entries[1].tensor.data());

  // save(load(file)) reproduces the file byte for byte
  nn::save_params("test_ckpt2.bin", pm2);
  std::ifstream f1(path, std::ios::binary), f2("test_ckpt2.bin", std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  CHECK(s1.substr(0, 6) == "PAROT1");
  std::remove(path);
  std::remove("test_ckpt2.bin");
}

TEST_CASE("checkpoint shape mismatch names the block") {
  nn::ParamMap<float> pm;
  std::mt19937_64 rng(1);
  pm.add("enc.w", nn::init_uniform<float>({2, 2}, 2, rng));
  nn::save_params("test_ckpt3.bin", pm);
  nn::ParamMap<float> other;
  other.add("enc.w", num::Tensor<float>::zeros({3, 2}, true));
  CHECK_THROWS_WITH_AS(nn::load_params("test_ckpt3.bin", other),
                       doctest::Contains("enc.w"), std::runtime_error);
  std::remove("test_ckpt3.bin");
}

TEST_CASE("dropout: inverted scaling, disabled in eval") {
  std::mt19937_64 rng(5);
  auto x = T::from({1, 1000}, std::vector<double>(1000, 1.0), true);
  auto eval_out = num::dropout(x, 0.5, rng, false);
  CHECK(eval_out.data() == x.data());
  auto train_out = num::dropout(x, 0.5, rng, true);
  double mean = 0;
  int zeros = 0;
  for (double v : train_out.data()) {
    mean += v;
    zeros += v == 0.0;
  }
  mean /= 1000;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.15));
  CHECK(zeros > 350);
  CHECK(zeros < 650);
}

TEST_CASE("mlp stack produces requested width and gradcheck passes") {
  std::mt19937_64 rng(11);
  nn::Mlp<double> mlp({5, 8, 4}, nn::Activation::kLeakyRelu02, rng);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> xv(6 * 5);
  for (auto& v : xv) v = u(rng);
  auto x = T::from({6, 5}, xv);
  auto out = mlp.forward(x, true);
  CHECK(out.shape() == std::vector<std::size_t>{6, 4});

  auto fwd = [&]() { return num::sumsq(mlp.forward(x, true)); };
  auto grads = num::backward(fwd());
  auto eval = [&]() { return fwd().item(); };
  CHECK(parot::testing::gradcheck_param(mlp.linears[0].weight, eval,
                                        *grads.find(mlp.linears[0].weight.node())) < 1e-4);
  CHECK(parot::testing::gradcheck_param(mlp.linears[1].bias, eval,
                                        *grads.find(mlp.linears[1].bias.node())) < 1e-4);
}
