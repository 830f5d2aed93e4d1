#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "parot/train.hpp"

using namespace parot;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("parot_train_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(bool(is));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(bool(is));
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

net::ModelConfig tiny_cls_cfg() {
  net::ModelConfig cfg;
  cfg.n_local = 8;
  cfg.k_local = 8;
  cfg.k_intra = 4;
  cfg.n_global = 8;
  return cfg;
}

train::TrainConfig tiny_tc(std::size_t epochs, std::uint64_t seed) {
  train::TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 4;
  tc.seed = seed;
  return tc;
}

}  // namespace

TEST_CASE("cosine schedule hits its endpoints and midpoint") {
  CHECK(train::cosine_lr(0, 100, 1e-3, 1e-5) == doctest::Approx(1e-3));
  CHECK(train::cosine_lr(100, 100, 1e-3, 1e-5) == doctest::Approx(1e-5));
  CHECK(train::cosine_lr(50, 100, 1e-3, 1e-5) == doctest::Approx((1e-3 + 1e-5) / 2));
  CHECK(train::cosine_lr(200, 100, 1e-3, 1e-5) == doctest::Approx(1e-5));  // clamps
  // monotone decreasing
  double prev = 1e9;
  for (std::size_t s = 0; s <= 100; ++s) {
    double lr = train::cosine_lr(s, 100, 1e-3, 1e-5);
    CHECK(lr <= prev + 1e-15);
    prev = lr;
  }
}

TEST_CASE("seed stream is deterministic and spreads over (epoch, sample)") {
  CHECK(train::mix_seed(1, 2, 3) == train::mix_seed(1, 2, 3));
  CHECK(train::mix_seed(1, 2, 3) != train::mix_seed(1, 2, 4));
  CHECK(train::mix_seed(1, 2, 3) != train::mix_seed(1, 3, 2));
  CHECK(train::mix_seed(1, 2, 3) != train::mix_seed(2, 2, 3));
}

TEST_CASE("combined loss: weighting and exact removal of zero-weight terms") {
  using T = num::Tensor<double>;
  auto leaf = [](double v) { return T::from({1}, {v}, /*requires_grad=*/true); };
  net::BranchLosses<double> local{leaf(0.5), leaf(0.25), leaf(0.125)};
  net::BranchLosses<double> global{leaf(0.0625), leaf(2.0), leaf(4.0)};
  auto task = leaf(1.0);

  train::TrainConfig tc;
  tc.alpha_local = 0.2;
  tc.alpha_global = 0.1;
  tc.beta_local = 0.0;
  tc.beta_global = 0.0;
  // task + orth_l + orth_g + 0.2*equi_l + 0.1*equi_g
  auto loss = train::total_loss(task, local, global, tc);
  CHECK(loss.item() == doctest::Approx(1.0 + 0.125 + 4.0 + 0.2 * 0.25 + 0.1 * 2.0));

  // a zero weight removes the term from the graph: no gradient reaches it
  auto grads = num::backward(loss);
  CHECK(grads.find(local.inv.node()) == nullptr);
  CHECK(grads.find(global.inv.node()) == nullptr);
  CHECK(grads.find(local.equi.node()) != nullptr);
  CHECK(*grads.find(local.equi.node()) == std::vector<double>{0.2});
  CHECK(*grads.find(local.orth.node()) == std::vector<double>{1.0});

  tc.beta_local = 0.5;
  auto loss2 = train::total_loss(task, local, global, tc);
  CHECK(loss2.item() == doctest::Approx(loss.item() + 0.5 * 0.5));
  auto grads2 = num::backward(loss2);
  REQUIRE(grads2.find(local.inv.node()) != nullptr);
  CHECK(*grads2.find(local.inv.node()) == std::vector<double>{0.5});
}

TEST_CASE("per-shape mIoU conventions") {
  // perfect prediction
  CHECK(train::shape_miou({0, 1, 1, 0}, {0, 1, 1, 0}, 2) == doctest::Approx(1.0));
  // mixed: part0 IoU 1/2, part1 IoU 2/3
  CHECK(train::shape_miou({0, 0, 1, 1}, {0, 1, 1, 1}, 2) ==
        doctest::Approx((0.5 + 2.0 / 3.0) / 2));
  // a part absent from both prediction and ground truth counts as IoU 1
  CHECK(train::shape_miou({0, 0}, {0, 0}, 3) == doctest::Approx(1.0));
  CHECK(train::shape_miou({0, 1}, {1, 0}, 2) == doctest::Approx(0.0));
  // total miss on a single-part shape
  CHECK(train::shape_miou({1, 1}, {0, 0}, 2) == doctest::Approx(0.0));
}

TEST_CASE("metric log: header once, parseable rows") {
  auto dir = temp_dir("csv");
  auto path = dir + "/log.csv";
  train::Metrics m;
  m.loss = 1.25;
  m.accuracy = 0.75;
  m.imiou = 0.5;
  m.cmiou = 0.25;
  m.inv_gap = 1e-7;
  train::append_csv(path, 0, "train", data::Protocol::kZSO3, m);
  train::append_csv(path, 0, "test", data::Protocol::kZSO3, m);
  auto lines = read_lines(path);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "epoch,split,protocol,loss,accuracy,imiou,cmiou,inv_gap");
  CHECK(lines[1].rfind("0,train,zso3,", 0) == 0);
  std::size_t epoch;
  char split[16], proto[16];
  double loss, acc, imiou, cmiou, gap;
  int got = std::sscanf(lines[2].c_str(), "%zu,%15[^,],%15[^,],%lf,%lf,%lf,%lf,%lf",
                        &epoch, split, proto, &loss, &acc, &imiou, &cmiou, &gap);
  REQUIRE(got == 8);
  CHECK(std::string(split) == "test");
  CHECK(loss == doctest::Approx(1.25));
  CHECK(gap == doctest::Approx(1e-7));
  fs::remove_all(dir);
}

TEST_CASE("classification training: smoke run, log shape, checkpoint reproducibility") {
  auto train_set = data::gen_classification_set(2, 64, 100, "train");
  auto test_set = data::gen_classification_set(1, 64, 200, "test");

  auto run = [&](const std::string& tag) {
    std::mt19937_64 rng(7);
    net::ClsModel<float> model(tiny_cls_cfg(), rng);
    auto dir = temp_dir(tag);
    train::train_cls(model, train_set, test_set, tiny_tc(2, 5), dir);
    return dir;
  };
  auto dir_a = run("cls_a");

  auto lines = read_lines(dir_a + "/log.csv");
  REQUIRE(lines.size() == 1 + 2 * 2);  // header + (train,test) per epoch
  CHECK(lines[0] == "epoch,split,protocol,loss,accuracy,imiou,cmiou,inv_gap");
  CHECK(lines[1].rfind("0,train,", 0) == 0);
  CHECK(lines[2].rfind("0,test,", 0) == 0);
  CHECK(lines[4].rfind("1,test,", 0) == 0);
  REQUIRE(fs::exists(dir_a + "/last.ckpt"));
  REQUIRE(fs::exists(dir_a + "/best.ckpt"));

  // identical seeds and data give byte-identical checkpoints
  auto dir_b = run("cls_b");
  CHECK(read_bytes(dir_a + "/last.ckpt") == read_bytes(dir_b + "/last.ckpt"));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("classification training reduces the training loss on a tiny set") {
  auto train_set = data::gen_classification_set(2, 64, 300, "train");
  auto test_set = data::gen_classification_set(1, 64, 400, "test");
  std::mt19937_64 rng(11);
  net::ClsModel<float> model(tiny_cls_cfg(), rng);
  auto dir = temp_dir("cls_loss");
  auto tc = tiny_tc(12, 9);
  tc.augment_scale = false;  // keep each epoch's views comparable
  train::train_cls(model, train_set, test_set, tc, dir);

  auto lines = read_lines(dir + "/log.csv");
  auto train_loss = [&](std::size_t epoch) {
    const std::string& line = lines.at(1 + 2 * epoch);
    auto pos = line.find(",zso3,");  // after "epoch,train"
    REQUIRE(pos != std::string::npos);
    return std::stod(line.substr(pos + 6));
  };
  CHECK(train_loss(11) < train_loss(0));
  fs::remove_all(dir);
}

TEST_CASE("segmentation training: smoke run and metric ranges") {
  auto train_set = data::gen_segmentation_set(4, 256, 500, "train");
  auto test_set = data::gen_segmentation_set(2, 256, 600, "test");
  net::ModelConfig cfg;
  cfg.n_local = 8;
  cfg.k_local = 8;
  cfg.k_intra = 4;
  cfg.k_prop = 5;
  cfg.k_point = 8;
  std::mt19937_64 rng(13);
  net::SegModel<float> model(cfg, rng);
  auto dir = temp_dir("seg");
  train::train_seg(model, train_set, test_set, tiny_tc(1, 17), dir);

  auto lines = read_lines(dir + "/log.csv");
  REQUIRE(lines.size() == 3);
  std::size_t epoch;
  char split[16], proto[16];
  double loss, acc, imiou, cmiou, gap;
  REQUIRE(std::sscanf(lines[2].c_str(), "%zu,%15[^,],%15[^,],%lf,%lf,%lf,%lf,%lf", &epoch,
                      split, proto, &loss, &acc, &imiou, &cmiou, &gap) == 8);
  CHECK(std::string(split) == "test");
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(imiou >= 0.0);
  CHECK(imiou <= 1.0);
  CHECK(cmiou >= 0.0);
  CHECK(cmiou <= 1.0);
  CHECK(loss > 0.0);
  REQUIRE(fs::exists(dir + "/best.ckpt"));
  fs::remove_all(dir);
}
