#include "darkspot/synth.hpp"

#include "darkspot/util.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace darkspot {

bool spot_contains(const Spot& spot, double row, double col) {
  const double dx = col - spot.center_col;
  const double dy = row - spot.center_row;
  const double ca = std::cos(spot.angle);
  const double sa = std::sin(spot.angle);
  const double u = dx * ca + dy * sa;
  const double v = -dx * sa + dy * ca;
  if (spot.shape == SpotShape::kEllipse) {
    return (u * u) / (spot.a * spot.a) + (v * v) / (spot.b * spot.b) <= 1.0;
  }
  if (std::abs(u) > spot.a) return false;
  const double centerline = spot.bend * u * u / spot.a;
  return std::abs(v - centerline) <= spot.b;
}

void validate_scene_spec(const SceneSpec& spec) {
  if (spec.size < 1) throw ValidationError("scene size must be positive");
  if (!(spec.background_mean > 0.0) || !std::isfinite(spec.background_mean)) {
    throw ValidationError("background_mean must be positive");
  }
  if (!(spec.looks > 0.0)) throw ValidationError("looks must be positive");
  for (const auto& s : spec.spots) {
    if (!(s.contrast > 0.0 && s.contrast < 1.0)) {
      throw ValidationError(fmt::format("spot contrast {} outside (0, 1)", s.contrast));
    }
    if (!(s.a > 0.0 && s.b > 0.0)) throw ValidationError("spot axes must be positive");
    if (s.center_row < 0.0 || s.center_col < 0.0 || s.center_row > spec.size - 1 || s.center_col > spec.size - 1) {
      throw ValidationError("spot centre lies outside the scene");
    }
  }
}

Scene generate(const SceneSpec& spec) {
  validate_scene_spec(spec);
  const int n = spec.size;
  Scene scene;
  scene.grid = RasterGrid(n, n, 0.0, true);
  scene.truth = BinaryMask(n, n);
  scene.oil = BinaryMask(n, n);
  std::mt19937_64 engine(spec.seed);
  std::gamma_distribution<double> speckle(spec.looks, 1.0 / spec.looks);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      double contrast = 0.0;
      bool oil = false;
      for (const auto& s : spec.spots) {
        if (!spot_contains(s, r, c)) continue;
        contrast = std::max(contrast, s.contrast);
        oil = oil || s.oil;
      }
      const std::size_t i = scene.grid.index(r, c);
      scene.truth.bits[i] = contrast > 0.0 ? 1 : 0;
      scene.oil.bits[i] = oil ? 1 : 0;
      scene.has_oil = scene.has_oil || oil;
      scene.grid.values[i] = spec.background_mean * (1.0 - contrast) * speckle(engine);
    }
  }
  return scene;
}

SceneSpec sample_scene(const SceneDistribution& dist, std::uint64_t seed) {
  std::mt19937_64 engine(mix_seed(seed, 0x5ce4e));
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit_uniform(engine()); };
  SceneSpec spec;
  spec.size = dist.size;
  spec.background_mean = dist.background_mean;
  spec.looks = dist.looks;
  spec.seed = seed;
  const int count =
      dist.min_spots + static_cast<int>(bounded_draw(engine, static_cast<std::uint64_t>(dist.max_spots - dist.min_spots + 1)));
  for (int k = 0; k < count; ++k) {
    Spot s;
    const bool ribbon = unit_uniform(engine()) < dist.ribbon_fraction;
    s.shape = ribbon ? SpotShape::kRibbon : SpotShape::kEllipse;
    if (ribbon) {
      s.a = uniform(dist.max_axis, 2.0 * dist.max_axis);
      s.b = uniform(2.0, std::max(2.0, dist.min_axis * 0.75));
      s.bend = uniform(-0.5, 0.5);
      s.oil = true;
    } else {
      s.a = uniform(dist.min_axis, dist.max_axis);
      s.b = s.a * uniform(0.3, 1.0);
    }
    s.angle = uniform(0.0, std::numbers::pi);
    const double margin = std::min(s.a, 0.5 * (dist.size - 1));
    s.center_row = uniform(0.25 * margin, dist.size - 1 - 0.25 * margin);
    s.center_col = uniform(0.25 * margin, dist.size - 1 - 0.25 * margin);
    s.contrast = uniform(dist.contrast_min, dist.contrast_max);
    spec.spots.push_back(s);
  }
  return spec;
}

SplitCounts split_counts(int n) {
  SplitCounts s;
  s.train = static_cast<int>(std::lround(0.6 * n));
  s.val = static_cast<int>(std::lround(0.2 * n));
  s.test = n - s.train - s.val;
  return s;
}

std::filesystem::path oil_mask_path(const std::filesystem::path& mask_path) {
  auto p = mask_path;
  p.replace_filename(mask_path.stem().string() + "_oil.pgm");
  return p;
}

std::vector<DatasetEntry> make_dataset(const std::filesystem::path& dir, int n, const SceneDistribution& dist,
                                       std::uint64_t seed) {
  if (n < 5) throw ValidationError("make_dataset: need at least 5 scenes");
  if (!(dist.contrast_min > 0.0 && dist.contrast_max < 1.0 && dist.contrast_min <= dist.contrast_max)) {
    throw ValidationError("make_dataset: contrast range must lie in (0, 1)");
  }
  if (dist.min_spots < 0 || dist.max_spots < dist.min_spots) throw ValidationError("make_dataset: bad spot counts");
  std::filesystem::create_directories(dir);
  const SplitCounts counts = split_counts(n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 engine(mix_seed(seed, 0x5b1175));
  portable_shuffle(order, engine);
  std::vector<std::string> split(n);
  for (int i = 0; i < n; ++i) {
    split[order[i]] = i < counts.train ? "train" : (i < counts.train + counts.val ? "val" : "test");
  }

  std::vector<DatasetEntry> entries;
  for (int i = 0; i < n; ++i) {
    const Scene scene = generate(sample_scene(dist, mix_seed(seed, static_cast<std::uint64_t>(i))));
    DatasetEntry e;
    e.name = fmt::format("scene_{:04d}", i);
    e.image = dir / (e.name + ".f32");
    e.mask = dir / (e.name + "_truth.pgm");
    e.split = split[i];
    e.has_oil = scene.has_oil;
    save_f32raw(scene.grid, e.image);
    write_mask(scene.truth, e.mask);
    if (scene.has_oil) write_mask(scene.oil, oil_mask_path(e.mask));
    entries.push_back(e);
  }
  write_text_file(dir / "manifest.csv", manifest_csv(entries, dir));
  return entries;
}

std::string manifest_csv(const std::vector<DatasetEntry>& entries, const std::filesystem::path& base) {
  std::string out = "path,mask_path,split,has_oil\n";
  for (const auto& e : entries) {
    out += fmt::format("{},{},{},{}\n", std::filesystem::relative(e.image, base).generic_string(),
                       std::filesystem::relative(e.mask, base).generic_string(), e.split, e.has_oil ? 1 : 0);
  }
  return out;
}

std::vector<DatasetEntry> read_manifest(const std::filesystem::path& manifest) {
  const std::string text = read_text_file(manifest);
  const auto base = manifest.parent_path();
  std::istringstream in(text);
  std::string line;
  std::vector<DatasetEntry> entries;
  bool header = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (header) {
      header = false;
      if (trim(line) != "path,mask_path,split,has_oil") {
        throw ValidationError(fmt::format("{}: unexpected manifest header", manifest.string()));
      }
      continue;
    }
    const auto f = split(trim(line), ',');
    if (f.size() != 4 || (f[2] != "train" && f[2] != "val" && f[2] != "test") || (f[3] != "0" && f[3] != "1")) {
      throw ValidationError(fmt::format("{}:{}: malformed manifest row", manifest.string(), line_no));
    }
    DatasetEntry e;
    e.image = base / f[0];
    e.mask = base / f[1];
    e.name = e.image.stem().string();
    e.split = f[2];
    e.has_oil = f[3] == "1";
    entries.push_back(e);
  }
  return entries;
}

}  // namespace darkspot
