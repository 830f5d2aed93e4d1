#pragma once

// Synthetic desk-scale datasets, point-cloud text I/O, colored PLY export,
// training augmentation, and the z/z, z/SO3, SO3/SO3 rotation protocols.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "parot/geom.hpp"

namespace parot::data {

struct Dataset {
  std::vector<geom::PointCloud> samples;
  std::string split;  // "train" or "test"
  std::uint64_t seed = 0;
  std::size_t num_classes = 0;      // classification categories
  std::size_t num_part_labels = 0;  // segmentation parts (0 for classification)
};

enum class Protocol { kZZ, kZSO3, kSO3SO3 };

Protocol protocol_from_string(const std::string& s);
std::string to_string(Protocol p);

/// The rotation a protocol applies to one sample of the given split.
geom::Rotation protocol_rotation(Protocol p, bool train_split, std::mt19937_64& rng);

inline constexpr const char* kClassNames[4] = {"sphere", "box", "cylinder", "torus"};
inline constexpr const char* kSegCategoryNames[2] = {"sphere_handle", "box_post"};

/// Four-class classification set: sphere, box, cylinder, torus surfaces with
/// shape-parameter jitter and 0.5% coordinate noise, centered and scaled,
/// resampled to exactly N points.
Dataset gen_classification_set(std::size_t num_per_class, std::size_t n_points,
                               std::uint64_t seed, const std::string& split = "train");

/// Two-part composite shapes (sphere-with-cylindrical-handle, box-with-post)
/// with exact per-point part labels in {0, 1}.
Dataset gen_segmentation_set(std::size_t num_samples, std::size_t n_points,
                             std::uint64_t seed, const std::string& split = "train");

/// Plain-text points: lines of "x y z" or "x y z label", '#' comments.
geom::PointCloud load_points(const std::string& path);
void save_points(const geom::PointCloud& cloud, const std::string& path);

/// ASCII PLY with 8-bit vertex colors; out-of-range colors clamp with a
/// warning on stderr.
void export_colored_ply(const geom::PointCloud& cloud,
                        const std::vector<std::array<double, 3>>& rgb_per_point,
                        const std::string& path);

/// Training augmentation: isotropic scale uniform in [0.67, 1.5].
geom::PointCloud augment(const geom::PointCloud& cloud, std::mt19937_64& rng);

/// Dataset directory layout: one text file per sample plus a manifest of
/// "filename class_id" lines.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace parot::data
