#pragma once

#include "darkspot/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace darkspot {

enum class SpotShape { kEllipse, kRibbon };

/// A dark spot. Ellipses use semi-axes (a, b); ribbons are strips of
/// half-length a and half-width b whose centerline bends as
/// v = bend * u^2 / a in the spot's rotated frame.
struct Spot {
  SpotShape shape = SpotShape::kEllipse;
  double center_row = 0.0;
  double center_col = 0.0;
  double a = 1.0;
  double b = 1.0;
  double angle = 0.0;  // radians
  double bend = 0.0;
  double contrast = 0.5;  // fraction by which the mean is darkened, in (0, 1)
  bool oil = false;
};

struct SceneSpec {
  int size = 128;
  double background_mean = 1.0;
  double looks = 4.0;
  std::vector<Spot> spots;
  std::uint64_t seed = 0;
};

struct Scene {
  RasterGrid grid;
  BinaryMask truth;
  BinaryMask oil;
  bool has_oil = false;
};

/// Analytic spot indicator at a pixel centre.
bool spot_contains(const Spot& spot, double row, double col);

/// Throws ValidationError on a bad size, mean, look count, contrast or a spot
/// centre outside the scene.
void validate_scene_spec(const SceneSpec& spec);

/// Mean field (background mean, darkened by the strongest covering spot)
/// times gamma speckle with shape = looks and scale = 1 / looks.
Scene generate(const SceneSpec& spec);

/// Random scene parameters for datasets.
struct SceneDistribution {
  int size = 128;
  double background_mean = 1.0;
  double looks = 4.0;
  int min_spots = 1;
  int max_spots = 3;
  double contrast_min = 0.3;
  double contrast_max = 0.7;
  double ribbon_fraction = 0.4;
  double min_axis = 6.0;
  double max_axis = 20.0;
};

SceneSpec sample_scene(const SceneDistribution& dist, std::uint64_t seed);

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

/// 6:2:2 split sizes; train and validation are rounded, test takes the rest.
SplitCounts split_counts(int n);

struct DatasetEntry {
  std::string name;
  std::filesystem::path image;
  std::filesystem::path mask;
  std::string split;  // "train", "val" or "test"
  bool has_oil = false;
};

/// Oil-only truth mask written next to the dark-spot mask.
std::filesystem::path oil_mask_path(const std::filesystem::path& mask_path);

/// Writes n scenes (f32raw images, PGM masks) into `dir` plus manifest.csv and
/// returns the entries. Scene i uses seed mix_seed(seed, i).
std::vector<DatasetEntry> make_dataset(const std::filesystem::path& dir, int n, const SceneDistribution& dist,
                                       std::uint64_t seed);

/// CSV: path,mask_path,split,has_oil. Paths are stored relative to the
/// manifest's directory.
std::string manifest_csv(const std::vector<DatasetEntry>& entries, const std::filesystem::path& base);
std::vector<DatasetEntry> read_manifest(const std::filesystem::path& manifest);

}  // namespace darkspot
