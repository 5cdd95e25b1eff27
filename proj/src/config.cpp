#include "darkspot/config.hpp"

#include "darkspot/raster.hpp"
#include "darkspot/util.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

namespace darkspot {

namespace {

[[noreturn]] void fail(std::string_view key, std::string_view why) {
  throw ValidationError(fmt::format("config key '{}': {}", key, why));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) fail(key, fmt::format("'{}' is not a valid number", text));
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  fail(key, fmt::format("'{}' is not a boolean", text));
}

struct KeyDef {
  std::string name;
  std::function<void(PipelineConfig&, std::string_view)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
KeyDef numeric(std::string name, T PipelineConfig::*member, std::function<bool(T)> ok, std::string requirement) {
  KeyDef k;
  k.name = name;
  k.set = [=](PipelineConfig& c, std::string_view text) {
    const T v = parse_number<T>(name, text);
    if (!ok(v)) fail(name, fmt::format("{} (got {})", requirement, text));
    c.*member = v;
  };
  k.get = [=](const PipelineConfig& c) { return fmt::format("{}", c.*member); };
  return k;
}

KeyDef boolean(std::string name, bool PipelineConfig::*member) {
  KeyDef k;
  k.name = name;
  k.set = [=](PipelineConfig& c, std::string_view text) { c.*member = parse_bool(name, text); };
  k.get = [=](const PipelineConfig& c) { return std::string(c.*member ? "true" : "false"); };
  return k;
}

KeyDef text(std::string name, std::string PipelineConfig::*member, std::function<bool(const std::string&)> ok,
            std::string requirement) {
  KeyDef k;
  k.name = name;
  k.set = [=](PipelineConfig& c, std::string_view value) {
    std::string v(value);
    if (!ok(v)) fail(name, fmt::format("{} (got '{}')", requirement, value));
    c.*member = v;
  };
  k.get = [=](const PipelineConfig& c) { return c.*member; };
  return k;
}

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = [] {
    using C = PipelineConfig;
    auto pos_i = [](int v) { return v > 0; };
    auto pos_d = [](double v) { return v > 0.0; };
    auto nonneg_i = [](int v) { return v >= 0; };
    auto unit_open = [](double v) { return v > 0.0 && v < 1.0; };
    auto unit_closed = [](double v) { return v >= 0.0 && v <= 1.0; };
    auto any_d = [](double v) { return v == v; };
    std::vector<KeyDef> t;
    t.push_back(numeric<int>("scenes", &C::scenes, [](int v) { return v >= 5; }, "must be >= 5"));
    t.push_back(numeric<int>("scene_size", &C::scene_size, [](int v) { return v >= 8; }, "must be >= 8"));
    t.push_back(numeric<double>("background_mean", &C::background_mean, pos_d, "must be > 0"));
    t.push_back(numeric<double>("looks", &C::looks, pos_d, "must be > 0"));
    t.push_back(numeric<int>("min_spots", &C::min_spots, nonneg_i, "must be >= 0"));
    t.push_back(numeric<int>("max_spots", &C::max_spots, nonneg_i, "must be >= 0"));
    t.push_back(numeric<double>("contrast_min", &C::contrast_min, unit_open, "must lie in (0, 1)"));
    t.push_back(numeric<double>("contrast_max", &C::contrast_max, unit_open, "must lie in (0, 1)"));
    t.push_back(numeric<double>("ribbon_fraction", &C::ribbon_fraction, unit_closed, "must lie in [0, 1]"));
    t.push_back(numeric<double>("min_axis", &C::min_axis, pos_d, "must be > 0"));
    t.push_back(numeric<double>("max_axis", &C::max_axis, pos_d, "must be > 0"));
    t.push_back(text("data_manifest", &C::data_manifest, [](const std::string&) { return true; }, ""));
    t.push_back(numeric<int>("tile_size", &C::tile_size, [](int v) { return v >= 32; }, "must be >= 32"));
    t.push_back(boolean("lee", &C::lee));
    t.push_back(numeric<int>("lee_window", &C::lee_window, [](int v) { return v >= 3 && v % 2 == 1; },
                             "must be an odd integer >= 3"));
    t.push_back(numeric<double>("noise_cv", &C::noise_cv, [](double v) { return v >= 0.0; }, "must be >= 0"));
    t.push_back(numeric<int>("n_init", &C::n_init, pos_i, "must be > 0"));
    t.push_back(numeric<int>("max_iters", &C::max_iters, pos_i, "must be > 0"));
    t.push_back(numeric<double>("spatial_weight", &C::spatial_weight, [](double v) { return v >= 0.0; },
                                "must be >= 0"));
    t.push_back(numeric<int>("tiny_divisor", &C::tiny_divisor, nonneg_i, "must be >= 0"));
    t.push_back(numeric<double>("label_threshold", &C::label_threshold, [](double v) { return v > 0.0 && v <= 1.0; },
                                "must lie in (0, 1]"));
    t.push_back(numeric<int>("glcm_levels", &C::glcm_levels, [](int v) { return v >= 2 && v <= 256; },
                             "must lie in [2, 256]"));
    t.push_back(numeric<int>("efd_harmonics", &C::efd_harmonics, pos_i, "must be > 0"));
    t.push_back(numeric<double>("svm_c", &C::svm_c, pos_d, "must be > 0"));
    t.push_back(numeric<int>("svm_epochs", &C::svm_epochs, pos_i, "must be > 0"));
    t.push_back(numeric<double>("stabilization_tolerance", &C::stabilization_tolerance,
                                [](double v) { return v >= 0.0; }, "must be >= 0"));
    t.push_back(numeric<int>("selection_max_samples", &C::selection_max_samples, [](int v) { return v >= 10; },
                             "must be >= 10"));
    t.push_back(numeric<int>("select_k", &C::select_k, [](int v) { return v >= -1; },
                             "must be -1 (all), 0 (auto) or a column count"));
    t.push_back(numeric<int>("hidden", &C::hidden, pos_i, "must be > 0"));
    t.push_back(numeric<int>("layers", &C::layers, nonneg_i, "must be >= 0"));
    t.push_back(text(
        "aggregator", &C::aggregator,
        [](const std::string& v) { return v == "softmax" || v == "powermean" || v == "sum"; },
        "must be softmax, powermean or sum"));
    t.push_back(numeric<double>("dropout", &C::dropout, [](double v) { return v >= 0.0 && v < 1.0; },
                                "must lie in [0, 1)"));
    t.push_back(numeric<double>("beta_init", &C::beta_init, any_d, "must be a number"));
    t.push_back(numeric<double>("s_init", &C::s_init, any_d, "must be a number"));
    t.push_back(numeric<double>("y_init", &C::y_init, any_d, "must be a number"));
    t.push_back(numeric<double>("learning_rate", &C::learning_rate, pos_d, "must be > 0"));
    t.push_back(numeric<int>("batch_size", &C::batch_size, pos_i, "must be > 0"));
    t.push_back(numeric<int>("epochs", &C::epochs, pos_i, "must be > 0"));
    t.push_back(boolean("class_weighted", &C::class_weighted));
    t.push_back(numeric<std::uint64_t>("seed", &C::seed, [](std::uint64_t) { return true; }, ""));
    t.push_back(numeric<int>("workers", &C::workers, pos_i, "must be > 0"));
    return t;
  }();
  return table;
}

const KeyDef& find_key(std::string_view key) {
  for (const auto& k : key_table()) {
    if (k.name == key) return k;
  }
  throw ValidationError(fmt::format("unknown config key '{}'", key));
}

}  // namespace

void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value) {
  find_key(key).set(config, value);
}

void validate_config(const PipelineConfig& c) {
  if (c.contrast_min > c.contrast_max) fail("contrast_min", "must not exceed contrast_max");
  if (c.min_spots > c.max_spots) fail("min_spots", "must not exceed max_spots");
  if (c.min_axis > c.max_axis) fail("min_axis", "must not exceed max_axis");
  if (c.aggregator == "powermean" && c.beta_init == 0.0) fail("beta_init", "power mean exponent must be non-zero");
}

PipelineConfig parse_config(std::string_view text) {
  PipelineConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(fmt::format("config line {}: expected 'key = value'", line_no));
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw ValidationError(fmt::format("config key '{}' given twice", key));
    }
    seen.push_back(key);
    set_config_value(config, key, value);
  }
  validate_config(config);
  return config;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError(fmt::format("config file {} not found", path.string()));
  return parse_config(read_text_file(path));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& k : key_table()) keys.push_back(k.name);
  return keys;
}

std::string config_value(const PipelineConfig& config, std::string_view key) { return find_key(key).get(config); }

std::string config_text(const PipelineConfig& config) {
  std::string out;
  for (const auto& k : key_table()) out += fmt::format("{} = {}\n", k.name, k.get(config));
  return out;
}

std::uint64_t config_hash(const PipelineConfig& config, const std::vector<std::string>& keys) {
  Fnv1a h;
  for (const auto& key : keys) {
    h.update(key);
    h.update("=");
    h.update(config_value(config, key));
    h.update("\n");
  }
  return h.digest();
}

}  // namespace darkspot
