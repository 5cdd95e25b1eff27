#pragma once

#include "darkspot/config.hpp"
#include "darkspot/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace darkspot {

/// Missing stage inputs or upstream artifacts that changed since their stage
/// ran. The CLI maps it to exit code 1.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Stage { kSynth, kPreprocess, kSegment, kFeatures, kSelect, kTrain, kPredict, kEval };

inline constexpr Stage kAllStages[] = {Stage::kSynth,  Stage::kPreprocess, Stage::kSegment, Stage::kFeatures,
                                       Stage::kSelect, Stage::kTrain,      Stage::kPredict, Stage::kEval};

std::string_view stage_name(Stage stage);
Stage parse_stage(std::string_view name);

/// Run-directory subdirectories owned by a stage.
std::vector<std::string> stage_dirs(Stage stage);
/// Stages whose outputs a stage reads.
std::vector<Stage> stage_dependencies(Stage stage);
/// Config keys that affect a stage's outputs.
std::vector<std::string> stage_config_keys(Stage stage);

struct RunOptions {
  std::filesystem::path run_dir;
  PipelineConfig config;
  std::ostream* log = nullptr;
};

enum class StageOutcome { kRan, kCached };

/// Runs one stage, or skips it when its recorded config hash, input hash and
/// output hash all still match. Throws StageError when an upstream stage has
/// not run or its artifacts no longer match the run manifest.
StageOutcome run_stage(Stage stage, const RunOptions& options);

/// All stages in order.
void run_pipeline(const RunOptions& options);

struct ManifestRecord {
  std::string stage;
  std::uint64_t config_hash = 0;
  std::uint64_t input_hash = 0;
  std::uint64_t output_hash = 0;
};

std::vector<ManifestRecord> read_run_manifest(const std::filesystem::path& run_dir);

/// Fingerprint of every file under the given run subdirectories.
std::uint64_t hash_directories(const std::filesystem::path& run_dir, const std::vector<std::string>& dirs);

/// Test-split totals written by the eval stage.
struct EvalSummary {
  MetricsReport model;
  MetricsReport otsu;
};

EvalSummary load_eval_summary(const std::filesystem::path& run_dir);

/// Runs fn(0..n-1) on `workers` threads. Each index is processed exactly once;
/// the first exception (lowest index) is rethrown after all work stops.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace darkspot
