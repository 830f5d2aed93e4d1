// Command-line entry point: dataset generation, training, evaluation,
// invariance checking, and feature export.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "parot/config.hpp"
#include "parot/data.hpp"
#include "parot/oracle.hpp"
#include "parot/train.hpp"

namespace fs = std::filesystem;
using namespace parot;

namespace {

struct Flags {
  std::string config, seed, out, protocol, relation_mode, k_prop, neighbor_search,
      radius, channels, task, data_dir, checkpoint, epochs;
  std::vector<std::string> sets;  // generic "key=value" overrides
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "key = value configuration file");
  sub->add_option("--seed", f.seed, "master random seed");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--protocol", f.protocol, "rotation protocol: zz|zso3|so3so3");
  sub->add_option("--relation-mode", f.relation_mode,
                  "relation slicing: full|orientation|position|none");
  sub->add_option("--k-prop", f.k_prop, "propagation neighbor count (segmentation)");
  sub->add_option("--neighbor-search", f.neighbor_search, "patch grouping: knn|ball");
  sub->add_option("--radius", f.radius, "ball query radius");
  sub->add_option("--channels", f.channels, "feature channels to export, e.g. 3,17,42");
  sub->add_option("--task", f.task, "cls|seg");
  sub->add_option("--data-dir", f.data_dir, "dataset directory (train/ and test/)");
  sub->add_option("--checkpoint", f.checkpoint, "checkpoint file to load");
  sub->add_option("--epochs", f.epochs, "training epochs");
  sub->add_option("--set", f.sets, "extra key=value override (repeatable)")
      ->type_name("KEY=VALUE");
}

/// Config file first, then generic --set overrides, then the named flags.
cfg::Config effective_config(const CLI::App* sub, const Flags& f) {
  cfg::Config c;
  if (sub->count("--config")) c = cfg::Config::from_file(f.config);
  for (const auto& kv : f.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  const std::pair<const char*, const std::string*> named[] = {
      {"seed", &f.seed},           {"out", &f.out},
      {"protocol", &f.protocol},   {"relation_mode", &f.relation_mode},
      {"k_prop", &f.k_prop},       {"neighbor_search", &f.neighbor_search},
      {"radius", &f.radius},       {"channels", &f.channels},
      {"task", &f.task},           {"data_dir", &f.data_dir},
      {"checkpoint", &f.checkpoint}, {"epochs", &f.epochs}};
  const char* flag_names[] = {"--seed",     "--out",      "--protocol",
                              "--relation-mode", "--k-prop", "--neighbor-search",
                              "--radius",   "--channels", "--task",
                              "--data-dir", "--checkpoint", "--epochs"};
  for (std::size_t i = 0; i < std::size(named); ++i)
    if (sub->count(flag_names[i])) c.set(named[i].first, *named[i].second);
  return c;
}

/// Echo the effective configuration to stdout and into the output directory so
/// every run is reproducible from its artifacts alone.
void echo_config(const cfg::Config& c) {
  std::cout << "# effective configuration\n" << c.render();
  fs::create_directories(c.get_string("out"));
  std::ofstream os(c.get_string("out") + "/effective_config.txt");
  os << c.render();
}

net::ModelConfig model_config(const cfg::Config& c) {
  net::ModelConfig mc;
  mc.n_local = std::size_t(c.get_int("n_local"));
  mc.k_local = std::size_t(c.get_int("k_local"));
  mc.k_intra = std::size_t(c.get_int("k_intra"));
  mc.n_global = std::size_t(c.get_int("n_global"));
  mc.k_prop = std::size_t(c.get_int("k_prop"));
  mc.relation_mode = net::relation_mode_from_string(c.get_string("relation_mode"));
  mc.disable_intra = c.get_bool("disable_intra");
  mc.disable_inter = c.get_bool("disable_inter");
  mc.interp_baseline = c.get_bool("interp_baseline");
  mc.search = c.get_string("neighbor_search") == "ball" ? geom::NeighborSearch::kBall
                                                        : geom::NeighborSearch::kKnn;
  mc.ball_radius = c.get_real("radius");
  return mc;
}

train::TrainConfig train_config(const cfg::Config& c) {
  train::TrainConfig tc;
  tc.epochs = std::size_t(c.get_int("epochs"));
  tc.batch_size = std::size_t(c.get_int("batch_size"));
  tc.lr_start = c.get_real("lr_start");
  tc.lr_end = c.get_real("lr_end");
  tc.weight_decay = c.get_real("weight_decay");
  tc.alpha_local = c.get_real("alpha_local");
  tc.alpha_global = c.get_real("alpha_global");
  tc.beta_local = c.get_real("beta_local");
  tc.beta_global = c.get_real("beta_global");
  tc.augment_scale = c.get_bool("augment_scale");
  tc.protocol = data::protocol_from_string(c.get_string("protocol"));
  tc.seed = c.get_u64("seed");
  return tc;
}

std::pair<data::Dataset, data::Dataset> load_splits(const cfg::Config& c) {
  const std::string dir = c.get_string("data_dir");
  if (dir.empty())
    throw std::invalid_argument("data_dir is required (flag --data-dir or config)");
  return {data::load_dataset(dir + "/train"), data::load_dataset(dir + "/test")};
}

void print_metrics(const train::Metrics& m, const std::string& protocol) {
  std::printf("%-10s %-10s %-10s %-10s %-10s %-12s\n", "protocol", "loss", "accuracy",
              "imiou", "cmiou", "inv_gap");
  std::printf("%-10s %-10.4f %-10.4f %-10.4f %-10.4f %-12.4g\n", protocol.c_str(), m.loss,
              m.accuracy, m.imiou, m.cmiou, m.inv_gap);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const cfg::Config& c) {
  echo_config(c);
  const std::string out = c.get_string("out");
  const std::uint64_t seed = c.get_u64("seed");
  const std::size_t n = std::size_t(c.get_int("n_points"));
  data::Dataset train_set, test_set;
  if (c.get_string("task") == "cls") {
    train_set = data::gen_classification_set(std::size_t(c.get_int("train_per_class")), n,
                                             seed, "train");
    test_set = data::gen_classification_set(std::size_t(c.get_int("test_per_class")), n,
                                            seed + 1, "test");
  } else {
    train_set =
        data::gen_segmentation_set(std::size_t(c.get_int("train_samples")), n, seed, "train");
    test_set =
        data::gen_segmentation_set(std::size_t(c.get_int("test_samples")), n, seed + 1, "test");
  }
  data::save_dataset(train_set, out + "/train");
  data::save_dataset(test_set, out + "/test");
  std::cout << "wrote " << train_set.samples.size() << " train and "
            << test_set.samples.size() << " test samples to " << out << "\n";
  return 0;
}

int cmd_train_cls(const cfg::Config& c) {
  echo_config(c);
  auto [train_set, test_set] = load_splits(c);
  auto mc = model_config(c);
  mc.num_classes = std::max<std::size_t>(train_set.num_classes, 2);
  std::mt19937_64 rng(c.get_u64("seed"));
  net::ClsModel<float> model(mc, rng);
  model.head.dropout_p = float(c.get_real("dropout"));
  train::train_cls(model, train_set, test_set, train_config(c), c.get_string("out"));
  std::cout << "training finished; log and checkpoints in " << c.get_string("out") << "\n";
  return 0;
}

int cmd_train_seg(const cfg::Config& c) {
  echo_config(c);
  auto [train_set, test_set] = load_splits(c);
  auto mc = model_config(c);
  mc.num_parts = std::max<std::size_t>(train_set.num_part_labels, 2);
  std::mt19937_64 rng(c.get_u64("seed"));
  net::SegModel<float> model(mc, rng);
  model.head.dropout_p = float(c.get_real("dropout"));
  train::train_seg(model, train_set, test_set, train_config(c), c.get_string("out"));
  std::cout << "training finished; log and checkpoints in " << c.get_string("out") << "\n";
  return 0;
}

int cmd_eval(const cfg::Config& c) {
  echo_config(c);
  const std::string ckpt = c.get_string("checkpoint");
  if (ckpt.empty())
    throw std::invalid_argument("checkpoint is required (flag --checkpoint or config)");
  auto [train_set, test_set] = load_splits(c);
  auto mc = model_config(c);
  auto tc = train_config(c);
  std::mt19937_64 rng(c.get_u64("seed"));
  train::Metrics m;
  if (c.get_string("task") == "cls") {
    mc.num_classes = std::max<std::size_t>(test_set.num_classes, 2);
    net::ClsModel<float> model(mc, rng);
    nn::ParamMap<float> pm;
    model.collect(pm);
    nn::load_params(ckpt, pm);
    m = train::evaluate_cls(model, test_set, tc);
  } else {
    mc.num_parts = std::max<std::size_t>(test_set.num_part_labels, 2);
    net::SegModel<float> model(mc, rng);
    nn::ParamMap<float> pm;
    model.collect(pm);
    nn::load_params(ckpt, pm);
    m = train::evaluate_seg(model, test_set, tc,
                            std::max<std::size_t>(test_set.num_classes, 1));
  }
  print_metrics(m, c.get_string("protocol"));
  train::append_csv(c.get_string("out") + "/eval.csv", 0, "test", tc.protocol, m);
  return 0;
}

/// Oracle-conditioned invariance of the full pipeline (classification forward
/// and pose-aware propagation), then — if a checkpoint is given — the trained
/// model's invariance gap on the test set.
int cmd_check_invariance(const cfg::Config& c) {
  echo_config(c);
  const std::uint64_t seed = c.get_u64("seed");
  auto oracle_fn = oracle::make_scale_oracle<double>();

  net::ModelConfig mc = model_config(c);
  mc.n_local = 16;
  mc.k_local = 12;
  mc.k_intra = 8;
  mc.n_global = 12;
  mc.k_prop = 5;
  mc.k_point = 8;
  std::mt19937_64 rng(seed);
  net::ClsModel<double> cls(mc, rng);
  net::SegModel<double> seg(mc, rng);

  double worst = 0;
  std::mt19937_64 cloud_rng(seed + 1), rot_rng(seed + 2);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 20; ++t) {
    geom::PointCloud cloud;
    cloud.points.resize(128);
    for (auto& p : cloud.points) p = {u(cloud_rng), u(cloud_rng), u(cloud_rng)};
    cloud = geom::center_and_scale(cloud);
    cloud.class_id = 0;
    cloud.labels.assign(cloud.points.size(), 0);

    auto cls_base = cls.forward(cloud, seed + t, false, &oracle_fn, &oracle_fn);
    auto seg_base = seg.forward(cloud, seed + t, false, &oracle_fn, &oracle_fn);
    for (int r = 0; r < 20; ++r) {
      auto rot = geom::apply_rotation(cloud, geom::random_rotation_so3(rot_rng));
      auto cls_out = cls.forward(rot, seed + t, false, &oracle_fn, &oracle_fn);
      auto seg_out = seg.forward(rot, seed + t, false, &oracle_fn, &oracle_fn);
      for (std::size_t i = 0; i < cls_base.logits.data().size(); ++i)
        worst = std::max(worst,
                         std::abs(cls_base.logits.data()[i] - cls_out.logits.data()[i]));
      for (std::size_t i = 0; i < seg_base.logits.data().size(); ++i)
        worst = std::max(worst,
                         std::abs(seg_base.logits.data()[i] - seg_out.logits.data()[i]));
    }
  }
  std::printf("oracle-conditioned invariance residual: %.3g (threshold 1e-9) %s\n", worst,
              worst < 1e-9 ? "OK" : "FAILED");

  if (!c.get_string("checkpoint").empty() && !c.get_string("data_dir").empty()) {
    auto [train_set, test_set] = load_splits(c);
    auto full_mc = model_config(c);
    auto tc = train_config(c);
    std::mt19937_64 mrng(seed);
    train::Metrics m;
    if (c.get_string("task") == "cls") {
      full_mc.num_classes = std::max<std::size_t>(test_set.num_classes, 2);
      net::ClsModel<float> model(full_mc, mrng);
      nn::ParamMap<float> pm;
      model.collect(pm);
      nn::load_params(c.get_string("checkpoint"), pm);
      m = train::evaluate_cls(model, test_set, tc);
    } else {
      full_mc.num_parts = std::max<std::size_t>(test_set.num_part_labels, 2);
      net::SegModel<float> model(full_mc, mrng);
      nn::ParamMap<float> pm;
      model.collect(pm);
      nn::load_params(c.get_string("checkpoint"), pm);
      m = train::evaluate_seg(model, test_set, tc,
                              std::max<std::size_t>(test_set.num_classes, 1));
    }
    std::printf("trained-model invariance gap (mean max |logit diff| under extra SO(3)): %.4g\n",
                m.inv_gap);
  }
  if (worst >= 1e-9) {
    std::cerr << "check-invariance: residual " << worst << " exceeds 1e-9\n";
    return 2;
  }
  return 0;
}

int cmd_export_features(const cfg::Config& c) {
  echo_config(c);
  const std::string ckpt = c.get_string("checkpoint");
  if (ckpt.empty())
    throw std::invalid_argument("checkpoint is required (flag --checkpoint or config)");

  std::vector<std::size_t> channels;
  {
    std::stringstream ss(c.get_string("channels"));
    std::string tok;
    while (std::getline(ss, tok, ',')) channels.push_back(std::stoul(tok));
    if (channels.size() != 3)
      throw std::invalid_argument("channels expects exactly three values, e.g. 3,17,42");
    for (auto ch : channels)
      if (ch >= 128)
        throw std::invalid_argument("channel " + std::to_string(ch) + " out of range [0,128)");
  }

  auto [train_set, test_set] = load_splits(c);
  auto mc = model_config(c);
  mc.num_classes = std::max<std::size_t>(test_set.num_classes, 2);
  std::mt19937_64 rng(c.get_u64("seed"));
  net::ClsModel<float> model(mc, rng);
  nn::ParamMap<float> pm;
  model.collect(pm);
  nn::load_params(ckpt, pm);

  const std::string out = c.get_string("out");
  const std::size_t count = std::min<std::size_t>(8, test_set.samples.size());
  for (std::size_t s = 0; s < count; ++s) {
    const auto& cloud = test_set.samples[s];
    auto fwd = model.forward(cloud, train::mix_seed(c.get_u64("seed"), 0xFEA7, s), false);
    // Color every point by its nearest patch reference's content features,
    // one selected channel per RGB component, normalized per channel.
    auto nearest = geom::knn(cloud.points, fwd.local_refs, 1);
    std::vector<std::array<double, 3>> rgb(cloud.points.size());
    for (int comp = 0; comp < 3; ++comp) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t i = 0; i < fwd.local_content.rows(); ++i) {
        double v = double(fwd.local_content.data()[i * 128 + channels[comp]]);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
      for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        double v =
            double(fwd.local_content.data()[nearest[i][0] * 128 + channels[comp]]);
        rgb[i][comp] = (v - lo) / span;
      }
    }
    char name[64];
    std::snprintf(name, sizeof(name), "/features_%02zu.ply", s);
    data::export_colored_ply(cloud, rgb, out + name);
  }
  std::cout << "wrote " << count << " colored PLY files to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rotation-invariant point cloud learning pipeline"};
  app.require_subcommand(1);
  Flags f;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  auto* tcls = app.add_subcommand("train-cls", "train the classification model");
  auto* tseg = app.add_subcommand("train-seg", "train the segmentation model");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  auto* inv = app.add_subcommand("check-invariance",
                                 "oracle-conditioned invariance suite + trained-model gap");
  auto* exf = app.add_subcommand("export-features",
                                 "write colored PLY files of selected feature channels");
  for (auto* sub : {gen, tcls, tseg, ev, inv, exf}) add_common(sub, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    auto c = effective_config(sub, f);
    if (sub == gen) return cmd_gen_data(c);
    if (sub == tcls) return cmd_train_cls(c);
    if (sub == tseg) return cmd_train_seg(c);
    if (sub == ev) return cmd_eval(c);
    if (sub == inv) return cmd_check_invariance(c);
    return cmd_export_features(c);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
