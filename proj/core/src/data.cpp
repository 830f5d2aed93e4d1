#include "parot/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace parot::data {

namespace fs = std::filesystem;
using geom::PointCloud;
using geom::Vec3;
using geom::operator*;
using geom::operator+;
using geom::operator-;

Protocol protocol_from_string(const std::string& s) {
  if (s == "zz") return Protocol::kZZ;
  if (s == "zso3") return Protocol::kZSO3;
  if (s == "so3so3") return Protocol::kSO3SO3;
  throw std::invalid_argument("unknown protocol '" + s + "' (expected zz|zso3|so3so3)");
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kZZ:
      return "zz";
    case Protocol::kZSO3:
      return "zso3";
    case Protocol::kSO3SO3:
      return "so3so3";
  }
  return "?";
}

geom::Rotation protocol_rotation(Protocol p, bool train_split, std::mt19937_64& rng) {
  switch (p) {
    case Protocol::kZZ:
      return geom::random_rotation_z(rng);
    case Protocol::kZSO3:
      return train_split ? geom::random_rotation_z(rng) : geom::random_rotation_so3(rng);
    case Protocol::kSO3SO3:
      return geom::random_rotation_so3(rng);
  }
  return geom::Rotation::identity();
}

namespace {

Vec3 unit_sphere_dir(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 v;
  double n;
  do {
    v = {gauss(rng), gauss(rng), gauss(rng)};
    n = geom::norm(v);
  } while (n < 1e-9);
  return v * (1.0 / n);
}

// Surface samplers. Each returns raw points in the shape's own units; the
// caller adds noise and normalizes.

std::vector<Vec3> sample_sphere(std::size_t n, double rx, double ry, double rz,
                                std::mt19937_64& rng) {
  std::vector<Vec3> pts(n);
  for (auto& p : pts) {
    Vec3 d = unit_sphere_dir(rng);
    p = {d[0] * rx, d[1] * ry, d[2] * rz};
  }
  return pts;
}

std::vector<Vec3> sample_box(std::size_t n, double hx, double hy, double hz,
                             std::mt19937_64& rng) {
  // Faces weighted by area.
  double ax = hy * hz, ay = hx * hz, az = hx * hy;
  double total = 2 * (ax + ay + az);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pick(0.0, total);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) {
    double r = pick(rng);
    double su = u(rng), sv = u(rng);
    if (r < 2 * ax) {
      p = {r < ax ? hx : -hx, su * hy, sv * hz};
    } else if (r < 2 * ax + 2 * ay) {
      p = {su * hx, r < 2 * ax + ay ? hy : -hy, sv * hz};
    } else {
      p = {su * hx, sv * hy, r < 2 * ax + 2 * ay + az ? hz : -hz};
    }
  }
  return pts;
}

std::vector<Vec3> sample_cylinder(std::size_t n, double radius, double half_h,
                                  bool with_caps, std::mt19937_64& rng) {
  double side_area = 2 * M_PI * radius * 2 * half_h;
  double cap_area = with_caps ? 2 * M_PI * radius * radius : 0.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) {
    double theta = 2 * M_PI * u(rng);
    if (u(rng) * (side_area + cap_area) < side_area) {
      p = {radius * std::cos(theta), radius * std::sin(theta), (2 * u(rng) - 1) * half_h};
    } else {
      double r = radius * std::sqrt(u(rng));
      p = {r * std::cos(theta), r * std::sin(theta), u(rng) < 0.5 ? half_h : -half_h};
    }
  }
  return pts;
}

std::vector<Vec3> sample_torus(std::size_t n, double major, double minor,
                               std::mt19937_64& rng) {
  // Rejection on the angular density proportional to (major + minor*cos(phi)).
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) {
    double theta = 2 * M_PI * u(rng);
    double phi;
    do {
      phi = 2 * M_PI * u(rng);
    } while (u(rng) > (major + minor * std::cos(phi)) / (major + minor));
    double ring = major + minor * std::cos(phi);
    p = {ring * std::cos(theta), ring * std::sin(theta), minor * std::sin(phi)};
  }
  return pts;
}

void add_noise(std::vector<Vec3>& pts, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, sigma);
  for (auto& p : pts)
    for (auto& c : p) c += gauss(rng);
}

PointCloud resample_to(const std::vector<Vec3>& pts, const std::vector<int>& labels,
                       std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  PointCloud out;
  out.points.reserve(n);
  if (!labels.empty()) out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = pick(rng);
    out.points.push_back(pts[j]);
    if (!labels.empty()) out.labels.push_back(labels[j]);
  }
  return out;
}

}  // namespace

Dataset gen_classification_set(std::size_t num_per_class, std::size_t n_points,
                               std::uint64_t seed, const std::string& split) {
  if (n_points < 64)
    throw std::invalid_argument("gen_classification_set: N must be at least 64");
  Dataset ds;
  ds.split = split;
  ds.seed = seed;
  ds.num_classes = 4;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t raw_n = n_points * 2;
  for (int cls = 0; cls < 4; ++cls) {
    for (std::size_t s = 0; s < num_per_class; ++s) {
      std::vector<Vec3> pts;
      switch (cls) {
        case 0: {  // sphere, mildly ellipsoidal
          double rx = 0.9 + 0.2 * u(rng), ry = 0.9 + 0.2 * u(rng), rz = 0.9 + 0.2 * u(rng);
          pts = sample_sphere(raw_n, rx, ry, rz, rng);
          break;
        }
        case 1: {  // box; bounded aspect so it never degenerates to a slab
          double hx = 0.5 + 0.3 * u(rng), hy = 0.5 + 0.3 * u(rng), hz = 0.5 + 0.3 * u(rng);
          pts = sample_box(raw_n, hx, hy, hz, rng);
          break;
        }
        case 2: {  // cylinder; always elongated so it cannot mimic a fat box
          double radius = 0.3 + 0.15 * u(rng), half_h = 0.8 + 0.4 * u(rng);
          pts = sample_cylinder(raw_n, radius, half_h, true, rng);
          break;
        }
        default: {  // torus; minor radius capped to keep the hole open
          double minor = 0.2 + 0.1 * u(rng);
          pts = sample_torus(raw_n, 1.0, minor, rng);
          break;
        }
      }
      add_noise(pts, 0.005, rng);
      PointCloud cloud = resample_to(pts, {}, n_points, rng);
      cloud = geom::center_and_scale(cloud);
      cloud.class_id = cls;
      ds.samples.push_back(std::move(cloud));
    }
  }
  return ds;
}

Dataset gen_segmentation_set(std::size_t num_samples, std::size_t n_points,
                             std::uint64_t seed, const std::string& split) {
  if (n_points < 256)
    throw std::invalid_argument("gen_segmentation_set: N must be at least 256");
  Dataset ds;
  ds.split = split;
  ds.seed = seed;
  ds.num_classes = 2;
  ds.num_part_labels = 2;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t s = 0; s < num_samples; ++s) {
    int category = int(s % 2);
    // Body gets label 0, attachment label 1; the attachment point fraction is
    // drawn inside the generator constraint [0.15, 0.85].
    double frac = 0.25 + 0.3 * u(rng);
    std::size_t n_attach = std::size_t(frac * double(n_points) * 2);
    std::size_t n_body = n_points * 2 - n_attach;
    std::vector<Vec3> pts;
    std::vector<int> labels;
    if (category == 0) {
      // Sphere with a cylindrical handle along +z.
      double r = 0.8 + 0.2 * u(rng);
      auto body = sample_sphere(n_body, r, r, r, rng);
      double hr = 0.12 + 0.1 * u(rng), hl = 0.5 + 0.3 * u(rng);
      auto handle = sample_cylinder(n_attach, hr, hl, false, rng);
      for (auto& p : handle) p[2] += r + hl * 0.8;  // embed slightly into the body
      pts = std::move(body);
      labels.assign(pts.size(), 0);
      for (auto& p : handle) {
        pts.push_back(p);
        labels.push_back(1);
      }
    } else {
      // Box with a post on top.
      double hx = 0.6 + 0.3 * u(rng), hy = 0.6 + 0.3 * u(rng), hz = 0.4 + 0.2 * u(rng);
      auto body = sample_box(n_body, hx, hy, hz, rng);
      double pr = 0.1 + 0.08 * u(rng), pl = 0.4 + 0.3 * u(rng);
      auto post = sample_cylinder(n_attach, pr, pl, false, rng);
      for (auto& p : post) p[2] += hz + pl * 0.8;
      pts = std::move(body);
      labels.assign(pts.size(), 0);
      for (auto& p : post) {
        pts.push_back(p);
        labels.push_back(1);
      }
    }
    add_noise(pts, 0.005, rng);
    PointCloud cloud = resample_to(pts, labels, n_points, rng);
    cloud = geom::center_and_scale(cloud);
    cloud.class_id = category;
    ds.samples.push_back(std::move(cloud));
  }
  return ds;
}

PointCloud load_points(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_points: cannot open '" + path + "'");
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  bool has_labels = false;
  while (std::getline(is, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    ss.imbue(std::locale::classic());
    double x, y, z;
    if (!(ss >> x)) continue;  // blank or comment-only line
    if (!(ss >> y >> z))
      throw std::runtime_error("load_points: malformed line " + std::to_string(line_no) +
                               " in '" + path + "'");
    long label;
    if (ss >> label) {
      if (!has_labels && !cloud.points.empty())
        throw std::runtime_error("load_points: label column starts mid-file at line " +
                                 std::to_string(line_no));
      has_labels = true;
      cloud.labels.push_back(int(label));
    } else if (has_labels) {
      throw std::runtime_error("load_points: missing label at line " + std::to_string(line_no));
    }
    std::string rest;
    if (ss.clear(), ss >> rest)
      throw std::runtime_error("load_points: trailing tokens at line " +
                               std::to_string(line_no) + " in '" + path + "'");
    cloud.points.push_back({x, y, z});
  }
  return cloud;
}

void save_points(const PointCloud& cloud, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_points: cannot open '" + path + "' for writing");
  os.imbue(std::locale::classic());
  char buf[160];
  const bool with_labels = !cloud.labels.empty();
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    if (with_labels) {
      std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d\n", p[0], p[1], p[2],
                    cloud.labels[i]);
    } else {
      std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p[0], p[1], p[2]);
    }
    os << buf;
  }
  if (!os) throw std::runtime_error("save_points: write failed for '" + path + "'");
}

void export_colored_ply(const PointCloud& cloud,
                        const std::vector<std::array<double, 3>>& rgb_per_point,
                        const std::string& path) {
  if (rgb_per_point.size() != cloud.points.size())
    throw std::invalid_argument("export_colored_ply: color count " +
                                std::to_string(rgb_per_point.size()) + " vs " +
                                std::to_string(cloud.points.size()) + " points");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("export_colored_ply: cannot open '" + path + "'");
  os << "ply\nformat ascii 1.0\n";
  os << "element vertex " << cloud.points.size() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "end_header\n";
  bool warned = false;
  char buf[160];
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    int rgb[3];
    for (int c = 0; c < 3; ++c) {
      double v = rgb_per_point[i][c];
      if ((v < 0.0 || v > 1.0) && !warned) {
        std::cerr << "export_colored_ply: color out of [0,1], clamping\n";
        warned = true;
      }
      v = std::min(1.0, std::max(0.0, v));
      rgb[c] = int(std::lround(v * 255.0));
    }
    const auto& p = cloud.points[i];
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d %d %d\n", p[0], p[1], p[2], rgb[0],
                  rgb[1], rgb[2]);
    os << buf;
  }
  if (!os) throw std::runtime_error("export_colored_ply: write failed for '" + path + "'");
}

PointCloud augment(const PointCloud& cloud, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.67, 1.5);
  double s = u(rng);
  PointCloud out = cloud;
  for (auto& p : out.points) p = p * s;
  return out;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("save_dataset: cannot write manifest in " + dir);
  manifest << "# split " << ds.split << " seed " << ds.seed << " classes " << ds.num_classes
           << " parts " << ds.num_part_labels << "\n";
  char name[64];
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "sample_%05zu.xyz", i);
    save_points(ds.samples[i], (fs::path(dir) / name).string());
    manifest << name << " " << ds.samples[i].class_id << "\n";
  }
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("load_dataset: no manifest in '" + dir + "'");
  Dataset ds;
  std::string line;
  if (std::getline(manifest, line)) {
    std::istringstream ss(line);
    std::string hash, key;
    ss >> hash;
    while (ss >> key) {
      if (key == "split")
        ss >> ds.split;
      else if (key == "seed")
        ss >> ds.seed;
      else if (key == "classes")
        ss >> ds.num_classes;
      else if (key == "parts")
        ss >> ds.num_part_labels;
    }
  }
  while (std::getline(manifest, line)) {
    std::istringstream ss(line);
    std::string name;
    int class_id;
    if (!(ss >> name >> class_id)) continue;
    auto cloud = load_points((fs::path(dir) / name).string());
    cloud.class_id = class_id;
    ds.samples.push_back(std::move(cloud));
  }
  return ds;
}

}  // namespace parot::data
