#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace darkspot {

/// Every tunable of the pipeline. Parsed from `key = value` lines; `#` starts
/// a comment. Unknown keys and out-of-range values raise ValidationError
/// naming the key.
struct PipelineConfig {
  // Synthetic data (used when data_manifest is empty).
  int scenes = 60;
  int scene_size = 128;
  double background_mean = 1.0;
  double looks = 4.0;
  int min_spots = 1;
  int max_spots = 3;
  double contrast_min = 0.3;
  double contrast_max = 0.7;
  double ribbon_fraction = 0.4;
  double min_axis = 6.0;
  double max_axis = 20.0;
  std::string data_manifest;  // external dataset manifest; empty = synthesize

  // Preprocessing.
  int tile_size = 256;
  bool lee = true;
  int lee_window = 3;
  double noise_cv = 0.25;

  // Superpixels and graphs.
  int n_init = 3000;
  int max_iters = 250;
  double spatial_weight = 0.2;
  int tiny_divisor = 16;
  double label_threshold = 0.5;

  // Features and selection.
  int glcm_levels = 8;
  int efd_harmonics = 5;
  double svm_c = 1.0;
  int svm_epochs = 1000;
  double stabilization_tolerance = 0.005;
  int selection_max_samples = 3000;
  int select_k = 0;  // 0 = stabilization point of the F1 curve, -1 = all columns

  // Model and training.
  int hidden = 128;
  int layers = 28;
  std::string aggregator = "softmax";
  double dropout = 0.2;
  double beta_init = 1.0;
  double s_init = 1.0;
  double y_init = 0.0;
  double learning_rate = 0.001;
  int batch_size = 16;
  int epochs = 100;
  bool class_weighted = true;

  std::uint64_t seed = 0;
  int workers = 1;
};

PipelineConfig parse_config(std::string_view text);
PipelineConfig load_config(const std::filesystem::path& path);

/// Sets one key from its text form, validating it.
void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value);
/// Cross-key checks (contrast range, spot counts, ...).
void validate_config(const PipelineConfig& config);

std::vector<std::string> config_keys();
std::string config_value(const PipelineConfig& config, std::string_view key);

/// Canonical `key = value` text of all keys.
std::string config_text(const PipelineConfig& config);

/// Fingerprint of the listed keys' canonical values.
std::uint64_t config_hash(const PipelineConfig& config, const std::vector<std::string>& keys);

}  // namespace darkspot
