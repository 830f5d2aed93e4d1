#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "parot/model.hpp"

using namespace parot;
using T = num::Tensor<double>;
using geom::Vec3;

namespace {

T random_features(std::size_t n, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n * c);
  for (auto& x : v) x = u(rng);
  return T::from({n, c}, std::move(v));
}

net::FrameTensors<double> random_unit_frames(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<geom::OrientationFrame> frames(n);
  for (auto& f : frames) {
    auto r = geom::random_rotation_so3(rng);
    f.d1 = {r.m.m[0], r.m.m[1], r.m.m[2]};
    f.d2 = {r.m.m[3], r.m.m[4], r.m.m[5]};
    f.d3 = {r.m.m[6], r.m.m[7], r.m.m[8]};
  }
  return parot::testing::frames_to_tensors<double>(frames);
}

double max_abs_diff(const T& a, const T& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace

TEST_CASE("propagation: shape, determinism, k_prop validation") {
  std::mt19937_64 rng(1);
  net::Propagation<double> prop(3, rng);
  std::vector<Vec3> dense{{0, 0, 0}, {0.5, 0, 0}, {0, 0.5, 0}, {0, 0, 0.5}};
  std::vector<Vec3> sparse{{0.1, 0, 0}, {0, 0.1, 0}, {0, 0, 0.1}};
  auto df = random_features(4, 128, 2);
  auto sf = random_features(3, 128, 3);
  auto frames = random_unit_frames(3, 4);

  auto out = prop.forward(dense, df, sparse, sf, frames, false);
  REQUIRE(out.shape() == std::vector<std::size_t>{4, 128});
  auto again = prop.forward(dense, df, sparse, sf, frames, false);
  CHECK(out.data() == again.data());

  net::Propagation<double> too_many(5, rng);
  CHECK_THROWS_WITH_AS(too_many.forward(dense, df, sparse, sf, frames, false),
                       doctest::Contains("k_prop"), std::invalid_argument);
}

TEST_CASE("propagation sums neighbor terms: duplicated reference doubles the output") {
  // With a single sparse reference the k=1 output is one MLP term; duplicating
  // that reference (same position, features, frame) and using k=2 must add the
  // identical term once more.
  std::mt19937_64 rng(5), rng2(5);
  net::Propagation<double> p1(1, rng);
  net::Propagation<double> p2(2, rng2);  // identical weights, larger k

  std::vector<Vec3> dense{{0.2, -0.1, 0.3}, {-0.4, 0.5, 0.1}};
  auto df = random_features(2, 128, 6);
  std::vector<Vec3> one_ref{{0.05, 0.05, 0.05}};
  auto one_feat = random_features(1, 128, 7);
  auto one_frame = random_unit_frames(1, 8);

  auto single = p1.forward(dense, df, one_ref, one_feat, one_frame, false);

  std::vector<Vec3> two_refs{one_ref[0], one_ref[0]};
  std::vector<double> ff(one_feat.data());
  ff.insert(ff.end(), one_feat.data().begin(), one_feat.data().end());
  auto two_feats = T::from({2, 128}, std::move(ff));
  auto dup = [](const T& t) {
    std::vector<double> v(t.data());
    v.insert(v.end(), t.data().begin(), t.data().end());
    return T::from({2, 3}, std::move(v));
  };
  net::FrameTensors<double> two_frames;
  two_frames.d1 = dup(one_frame.d1);
  two_frames.d2 = dup(one_frame.d2);
  two_frames.d3 = dup(one_frame.d3);

  auto doubled = p2.forward(dense, df, two_refs, two_feats, two_frames, false);
  double worst = 0;
  for (std::size_t i = 0; i < single.data().size(); ++i)
    worst = std::max(worst, std::abs(2 * single.data()[i] - doubled.data()[i]));
  CHECK(worst < 1e-10);
}

TEST_CASE("interp baseline: shape, determinism, and no dependence on frames") {
  std::mt19937_64 rng(9);
  net::Propagation<double> prop(3, rng);
  prop.interp_baseline = true;
  std::vector<Vec3> dense{{0, 0, 0}, {0.3, 0.1, 0}, {0, 0.2, 0.4}};
  std::vector<Vec3> sparse{{0.1, 0, 0}, {0, 0.1, 0}, {0, 0, 0.1}, {0.2, 0.2, 0.2}};
  auto df = random_features(3, 128, 10);
  auto sf = random_features(4, 128, 11);

  auto out = prop.forward(dense, df, sparse, sf, random_unit_frames(4, 12), false);
  REQUIRE(out.shape() == std::vector<std::size_t>{3, 128});
  // frames must be ignored entirely on the interpolation path
  auto out2 = prop.forward(dense, df, sparse, sf, random_unit_frames(4, 99), false);
  CHECK(out.data() == out2.data());
}

TEST_CASE("segmentation head: shapes and one-hot validation") {
  std::mt19937_64 rng(13);
  net::SegHead<double> head(2, rng);
  auto feats = random_features(5, 128, 14);
  std::vector<double> onehot(net::kOneHotWidth, 0.0);
  onehot[3] = 1.0;
  std::mt19937_64 drop_rng(15);
  auto logits = head.forward(feats, onehot, drop_rng, false);
  REQUIRE(logits.shape() == std::vector<std::size_t>{5, 2});

  std::vector<double> short_hot(8, 0.0);
  short_hot[0] = 1.0;
  CHECK_THROWS_WITH_AS(head.forward(feats, short_hot, drop_rng, false),
                       doctest::Contains("width"), std::invalid_argument);
  auto two_ones = onehot;
  two_ones[5] = 1.0;
  CHECK_THROWS_WITH_AS(head.forward(feats, two_ones, drop_rng, false),
                       doctest::Contains("exactly one"), std::invalid_argument);
  auto fractional = onehot;
  fractional[3] = 0.5;
  CHECK_THROWS_AS(head.forward(feats, fractional, drop_rng, false), std::invalid_argument);

  // the class conditioning must actually reach the logits
  std::vector<double> other(net::kOneHotWidth, 0.0);
  other[7] = 1.0;
  auto logits2 = head.forward(feats, other, drop_rng, false);
  CHECK(max_abs_diff(logits, logits2) > 1e-8);
}

TEST_CASE("full segmentation model with oracle features is rotation invariant") {
  auto cloud = parot::testing::random_test_cloud(128, 31);
  cloud.class_id = 1;

  net::ModelConfig cfg;
  cfg.n_local = 16;
  cfg.k_local = 12;
  cfg.k_intra = 6;
  cfg.k_prop = 5;
  cfg.k_point = 8;
  std::mt19937_64 rng(32);
  net::SegModel<double> model(cfg, rng);
  auto oracle = parot::testing::make_scale_oracle<double>();

  auto base = model.forward(cloud, 77, false, &oracle, &oracle);
  REQUIRE(base.logits.shape() == std::vector<std::size_t>{128, 2});

  std::mt19937_64 rot_rng(33);
  double worst = 0;
  for (int t = 0; t < 4; ++t) {
    auto rotated = geom::apply_rotation(cloud, geom::random_rotation_so3(rot_rng));
    auto out = model.forward(rotated, 77, false, &oracle, &oracle);
    worst = std::max(worst, max_abs_diff(base.logits, out.logits));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("segmentation model rejects class ids outside the one-hot range") {
  auto cloud = parot::testing::random_test_cloud(64, 41);
  cloud.class_id = 16;
  net::ModelConfig cfg;
  cfg.n_local = 8;
  cfg.k_local = 8;
  cfg.k_intra = 4;
  cfg.k_prop = 3;
  cfg.k_point = 6;
  std::mt19937_64 rng(42);
  net::SegModel<double> model(cfg, rng);
  CHECK_THROWS_WITH_AS(model.forward(cloud, 1, false), doctest::Contains("class id"),
                       std::invalid_argument);
}
