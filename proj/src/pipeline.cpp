#include "darkspot/pipeline.hpp"

#include "darkspot/feature_selection.hpp"
#include "darkspot/features.hpp"
#include "darkspot/gcn.hpp"
#include "darkspot/raster.hpp"
#include "darkspot/region_graph.hpp"
#include "darkspot/superpixel.hpp"
#include "darkspot/synth.hpp"
#include "darkspot/util.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace darkspot {

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kSynth:
      return "synth";
    case Stage::kPreprocess:
      return "preprocess";
    case Stage::kSegment:
      return "segment";
    case Stage::kFeatures:
      return "features";
    case Stage::kSelect:
      return "select";
    case Stage::kTrain:
      return "train";
    case Stage::kPredict:
      return "predict";
    case Stage::kEval:
      return "eval";
  }
  return "unknown";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : kAllStages) {
    if (stage_name(s) == name) return s;
  }
  throw ValidationError(fmt::format("unknown stage '{}'", name));
}

std::vector<std::string> stage_dirs(Stage stage) {
  switch (stage) {
    case Stage::kSynth:
      return {"data"};
    case Stage::kPreprocess:
      return {"tiles"};
    case Stage::kSegment:
      return {"labels", "graphs"};
    case Stage::kFeatures:
      return {"features"};
    case Stage::kSelect:
      return {"select"};
    case Stage::kTrain:
      return {"model"};
    case Stage::kPredict:
      return {"preds"};
    case Stage::kEval:
      return {"eval"};
  }
  return {};
}

std::vector<Stage> stage_dependencies(Stage stage) {
  switch (stage) {
    case Stage::kSynth:
      return {};
    case Stage::kPreprocess:
      return {Stage::kSynth};
    case Stage::kSegment:
      return {Stage::kPreprocess};
    case Stage::kFeatures:
      return {Stage::kPreprocess, Stage::kSegment};
    case Stage::kSelect:
      return {Stage::kSegment, Stage::kFeatures};
    case Stage::kTrain:
      return {Stage::kPreprocess, Stage::kSegment, Stage::kFeatures, Stage::kSelect};
    case Stage::kPredict:
      return {Stage::kPreprocess, Stage::kSegment, Stage::kFeatures, Stage::kSelect, Stage::kTrain};
    case Stage::kEval:
      return {Stage::kPreprocess, Stage::kPredict};
  }
  return {};
}

std::vector<std::string> stage_config_keys(Stage stage) {
  switch (stage) {
    case Stage::kSynth:
      return {"data_manifest", "scenes",          "scene_size", "background_mean", "looks",    "min_spots",
              "max_spots",     "contrast_min",    "contrast_max", "ribbon_fraction", "min_axis", "max_axis",
              "seed"};
    case Stage::kPreprocess:
      return {"tile_size", "lee", "lee_window", "noise_cv"};
    case Stage::kSegment:
      return {"n_init", "max_iters", "spatial_weight", "tiny_divisor", "label_threshold", "seed"};
    case Stage::kFeatures:
      return {"glcm_levels", "efd_harmonics"};
    case Stage::kSelect:
      return {"svm_c", "svm_epochs", "stabilization_tolerance", "selection_max_samples", "select_k", "seed"};
    case Stage::kTrain:
      return {"hidden",        "layers",     "aggregator", "dropout", "beta_init",      "s_init",
              "y_init",        "learning_rate", "batch_size", "epochs", "class_weighted", "seed"};
    case Stage::kPredict:
    case Stage::kEval:
      return {};
  }
  return {};
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  std::vector<std::exception_ptr> errors(n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
            failed = true;
          }
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::uint64_t hash_directories(const fs::path& run_dir, const std::vector<std::string>& dirs) {
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& d : dirs) {
    const fs::path root = run_dir / d;
    if (!fs::exists(root)) continue;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (entry.is_regular_file()) files.emplace_back(fs::relative(entry.path(), run_dir).generic_string(), entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  Fnv1a h;
  for (const auto& [rel, path] : files) {
    h.update(rel);
    h.update(std::string_view("\0", 1));
    h.update(hex64(hash_file(path)));
    h.update("\n");
  }
  return h.digest();
}

namespace {

constexpr std::string_view kManifestHeader = "stage,config_hash,input_hash,output_hash";

std::uint64_t parse_hex(const std::string& text) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v, 16);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw StageError(fmt::format("run manifest: bad hash '{}'", text));
  }
  return v;
}

void write_run_manifest(const fs::path& run_dir, std::vector<ManifestRecord> records) {
  auto order = [](const std::string& name) {
    for (std::size_t i = 0; i < std::size(kAllStages); ++i) {
      if (stage_name(kAllStages[i]) == name) return i;
    }
    return std::size(kAllStages);
  };
  std::sort(records.begin(), records.end(),
            [&](const ManifestRecord& a, const ManifestRecord& b) { return order(a.stage) < order(b.stage); });
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& r : records) {
    out += fmt::format("{},{},{},{}\n", r.stage, hex64(r.config_hash), hex64(r.input_hash), hex64(r.output_hash));
  }
  write_text_file(run_dir / "manifest.csv", out);
}

struct TileInfo {
  std::string name;
  std::string scene;
  int row = 0;
  int col = 0;
  std::string split;
  bool has_oil = false;
};

std::vector<TileInfo> read_tile_index(const fs::path& run_dir) {
  const fs::path path = run_dir / "tiles" / "index.csv";
  if (!fs::exists(path)) throw StageError(fmt::format("missing {}; run 'preprocess' first", path.string()));
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  std::vector<TileInfo> tiles;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 6) throw StageError(fmt::format("{}: malformed row '{}'", path.string(), line));
    tiles.push_back({f[0], f[1], std::stoi(f[2]), std::stoi(f[3]), f[4], f[5] == "1"});
  }
  return tiles;
}

std::string tile_index_csv(const std::vector<TileInfo>& tiles) {
  std::string out = "tile,scene,row,col,split,has_oil\n";
  for (const auto& t : tiles) {
    out += fmt::format("{},{},{},{},{},{}\n", t.name, t.scene, t.row, t.col, t.split, t.has_oil ? 1 : 0);
  }
  return out;
}

fs::path tile_image(const fs::path& run, const std::string& tile) { return run / "tiles" / (tile + ".f32"); }
fs::path tile_truth(const fs::path& run, const std::string& tile) { return run / "tiles" / (tile + "_truth.pgm"); }
fs::path tile_oil(const fs::path& run, const std::string& tile) { return run / "tiles" / (tile + "_oil.pgm"); }
fs::path tile_labels(const fs::path& run, const std::string& tile) { return run / "labels" / (tile + ".labels"); }
fs::path tile_nodes(const fs::path& run, const std::string& tile) { return run / "graphs" / (tile + "_nodes.csv"); }
fs::path tile_features(const fs::path& run, const std::string& tile) { return run / "features" / (tile + ".csv"); }
fs::path tile_pred(const fs::path& run, const std::string& tile) { return run / "preds" / (tile + ".pgm"); }

fs::path dataset_manifest(const fs::path& run, const PipelineConfig& config) {
  return config.data_manifest.empty() ? run / "data" / "manifest.csv" : fs::path(config.data_manifest);
}

std::uint64_t external_data_hash(const PipelineConfig& config) {
  const fs::path manifest(config.data_manifest);
  if (!fs::exists(manifest)) throw ValidationError(fmt::format("config key 'data_manifest': {} not found", manifest.string()));
  Fnv1a h;
  h.update(hex64(hash_file(manifest)));
  for (const auto& e : read_manifest(manifest)) {
    for (const fs::path& p : {e.image, e.mask, sidecar_mask_path(e.image), oil_mask_path(e.mask)}) {
      h.update(p.filename().string());
      h.update(fs::exists(p) ? hex64(hash_file(p)) : std::string("-"));
    }
  }
  return h.digest();
}

struct NodeTable {
  std::vector<std::uint64_t> area;
  NodeLabeling labels;
};

NodeTable read_nodes(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  NodeTable t;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 3) throw StageError(fmt::format("{}: malformed row", path.string()));
    t.area.push_back(std::stoull(f[1]));
    t.labels.push_back(static_cast<std::uint8_t>(std::stoi(f[2])));
  }
  return t;
}

FeatureOptions feature_options(const PipelineConfig& c) { return {c.glcm_levels, c.efd_harmonics}; }

SuperpixelParams superpixel_params(const PipelineConfig& c) {
  SuperpixelParams p;
  p.n_init = c.n_init;
  p.max_iters = c.max_iters;
  p.seed = c.seed;
  p.spatial_weight = c.spatial_weight;
  p.tiny_divisor = c.tiny_divisor;
  return p;
}

struct Context {
  const RunOptions& opt;
  const fs::path& run;
  const PipelineConfig& cfg;

  template <typename... Args>
  void log(fmt::format_string<Args...> f, Args&&... args) const {
    if (opt.log) *opt.log << fmt::format(f, std::forward<Args>(args)...) << '\n' << std::flush;
  }
};

std::vector<TileInfo> tiles_in(const std::vector<TileInfo>& tiles, std::string_view split_name) {
  std::vector<TileInfo> out;
  for (const auto& t : tiles) {
    if (t.split == split_name) out.push_back(t);
  }
  return out;
}

// Normalized, column-selected features and labels of a tile.
struct TileData {
  RegionGraph graph;
  LabelMap labels;
  FeatureMatrix features;
  NodeTable nodes;
};

TileData load_tile_data(const Context& ctx, const TileInfo& tile, const Normalizer* norm,
                        const std::vector<std::size_t>* columns) {
  TileData d;
  d.labels = load_label_map(tile_labels(ctx.run, tile.name));
  d.graph = build_graph(d.labels);
  d.nodes = read_nodes(tile_nodes(ctx.run, tile.name));
  d.features = parse_feature_matrix_csv(read_text_file(tile_features(ctx.run, tile.name)));
  if (d.features.rows != static_cast<std::size_t>(d.graph.node_count) ||
      d.nodes.labels.size() != static_cast<std::size_t>(d.graph.node_count)) {
    throw StageError(fmt::format("tile {}: node counts of labels, graph and features disagree", tile.name));
  }
  if (norm) d.features = apply_normalizer(d.features, *norm);
  if (columns) d.features = select_columns(d.features, *columns);
  return d;
}

GraphSample to_sample(const Context& ctx, const TileInfo& tile, TileData& d) {
  GraphSample s;
  s.graph = NodeGraph::from_region_graph(d.graph);
  s.features.assign(d.features.values.begin(), d.features.values.end());
  s.labels = d.nodes.labels;
  s.area = d.nodes.area;
  const auto marked = node_marked_pixels(d.graph, read_mask(tile_truth(ctx.run, tile.name)));
  s.truth_pixels.assign(marked.begin(), marked.end());
  return s;
}

Normalizer load_normalizer(const Context& ctx) {
  return parse_normalizer_csv(read_text_file(ctx.run / "features" / "normalizer.csv"));
}

std::vector<std::size_t> load_selected_columns(const Context& ctx, const Normalizer& norm) {
  const auto names = parse_selected_names(read_text_file(ctx.run / "select" / "selected.txt"));
  if (names.empty()) throw StageError("select/selected.txt lists no columns");
  FeatureMatrix header;
  header.names = norm.names;
  header.cols = norm.names.size();
  return column_indices(header, names);
}

// Stage bodies.

void do_synth(const Context& ctx) {
  if (!ctx.cfg.data_manifest.empty()) {
    write_text_file(ctx.run / "data" / "source.txt",
                    fmt::format("manifest = {}\nhash = {}\n", fs::absolute(ctx.cfg.data_manifest).generic_string(),
                                hex64(external_data_hash(ctx.cfg))));
    ctx.log("[synth] using external dataset {}", ctx.cfg.data_manifest);
    return;
  }
  SceneDistribution dist;
  dist.size = ctx.cfg.scene_size;
  dist.background_mean = ctx.cfg.background_mean;
  dist.looks = ctx.cfg.looks;
  dist.min_spots = ctx.cfg.min_spots;
  dist.max_spots = ctx.cfg.max_spots;
  dist.contrast_min = ctx.cfg.contrast_min;
  dist.contrast_max = ctx.cfg.contrast_max;
  dist.ribbon_fraction = ctx.cfg.ribbon_fraction;
  dist.min_axis = ctx.cfg.min_axis;
  dist.max_axis = ctx.cfg.max_axis;
  const auto entries = make_dataset(ctx.run / "data", ctx.cfg.scenes, dist, ctx.cfg.seed);
  const auto counts = split_counts(ctx.cfg.scenes);
  ctx.log("[synth] {} scenes (train {}, val {}, test {})", entries.size(), counts.train, counts.val, counts.test);
}

void do_preprocess(const Context& ctx) {
  const auto entries = read_manifest(dataset_manifest(ctx.run, ctx.cfg));
  const int size = ctx.cfg.tile_size;
  std::vector<std::vector<TileInfo>> per_scene(entries.size());
  parallel_for(entries.size(), ctx.cfg.workers, [&](std::size_t i) {
    const auto& e = entries[i];
    const auto format = e.image.extension() == ".pgm" ? RasterFormat::kPgm16 : RasterFormat::kF32Raw;
    const RasterGrid grid = load_grid(e.image, format);
    const BinaryMask truth = read_mask(e.mask);
    if (truth.width != grid.width || truth.height != grid.height) {
      throw ValidationError(fmt::format("{}: truth mask size differs from the image", e.mask.string()));
    }
    BinaryMask oil;
    if (e.has_oil) oil = read_mask(oil_mask_path(e.mask));
    const RasterGrid filtered = ctx.cfg.lee ? lee_filter(grid, {ctx.cfg.lee_window, ctx.cfg.noise_cv}) : grid;
    for (const Tile& t : tile_grid(filtered, size)) {
      TileInfo info{fmt::format("{}_r{:05d}_c{:05d}", e.name, t.row, t.col), e.name, t.row, t.col, e.split,
                    e.has_oil};
      save_f32raw(t.grid, tile_image(ctx.run, info.name));
      if (t.grid.valid_count() != t.grid.size()) {
        BinaryMask valid(t.grid.width, t.grid.height);
        valid.bits = t.grid.valid;
        write_mask(valid, sidecar_mask_path(tile_image(ctx.run, info.name)));
      }
      write_mask(crop_mask(truth, t.row, t.col, size), tile_truth(ctx.run, info.name));
      if (e.has_oil) write_mask(crop_mask(oil, t.row, t.col, size), tile_oil(ctx.run, info.name));
      per_scene[i].push_back(info);
    }
  });
  std::vector<TileInfo> tiles;
  for (auto& v : per_scene) tiles.insert(tiles.end(), v.begin(), v.end());
  write_text_file(ctx.run / "tiles" / "index.csv", tile_index_csv(tiles));
  ctx.log("[preprocess] {} scenes -> {} tiles of {}x{}", entries.size(), tiles.size(), size, size);
}

void do_segment(const Context& ctx) {
  const auto tiles = read_tile_index(ctx.run);
  std::vector<int> counts(tiles.size());
  parallel_for(tiles.size(), ctx.cfg.workers, [&](std::size_t i) {
    const auto& t = tiles[i];
    const RasterGrid grid = load_grid(tile_image(ctx.run, t.name), RasterFormat::kF32Raw);
    const LabelMap labels = segment(grid, superpixel_params(ctx.cfg));
    save_label_map(labels, tile_labels(ctx.run, t.name));
    const RegionGraph graph = build_graph(labels);
    const NodeLabeling nl = label_nodes(graph, read_mask(tile_truth(ctx.run, t.name)), ctx.cfg.label_threshold);
    write_text_file(ctx.run / "graphs" / (t.name + ".edges"), edge_list_text(graph));
    write_text_file(tile_nodes(ctx.run, t.name), node_attributes_csv(graph, nl));
    counts[i] = graph.node_count;
  });
  const long total = std::accumulate(counts.begin(), counts.end(), 0L);
  ctx.log("[segment] {} tiles, {} superpixels", tiles.size(), total);
}

void do_features(const Context& ctx) {
  const auto tiles = read_tile_index(ctx.run);
  const FeatureOptions options = feature_options(ctx.cfg);
  std::vector<FeatureMatrix> matrices(tiles.size());
  std::vector<FeatureDiagnostics> diags(tiles.size());
  parallel_for(tiles.size(), ctx.cfg.workers, [&](std::size_t i) {
    const auto& t = tiles[i];
    const RasterGrid grid = load_grid(tile_image(ctx.run, t.name), RasterFormat::kF32Raw);
    const RegionGraph graph = build_graph(load_label_map(tile_labels(ctx.run, t.name)));
    matrices[i] = assemble_matrix(graph, grid, options, &diags[i]);
    write_text_file(tile_features(ctx.run, t.name), feature_matrix_csv(matrices[i]));
  });
  std::vector<FeatureMatrix> train;
  std::string diag_csv = "tile,zero_mean,isolated,texture_fallback\n";
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i].split == "train") train.push_back(std::move(matrices[i]));
    diag_csv += fmt::format("{},{},{},{}\n", tiles[i].name, diags[i].zero_mean, diags[i].isolated,
                            diags[i].texture_fallback);
  }
  if (train.empty()) throw StageError("features: no training tiles to fit the normalizer");
  write_text_file(ctx.run / "features" / "normalizer.csv", normalizer_csv(fit_normalizer(train)));
  write_text_file(ctx.run / "features" / "diagnostics.csv", diag_csv);
  ctx.log("[features] {} tiles, {} columns", tiles.size(), feature_dimension(options));
}

// Stacks the rows of the given tiles, keeping at most `cap` rows chosen by a
// seeded shuffle (kept in original order).
void stack_rows(const Context& ctx, const std::vector<TileInfo>& tiles, const Normalizer& norm, std::size_t cap,
                std::uint64_t seed, FeatureMatrix& x, std::vector<std::uint8_t>& y) {
  FeatureMatrix all;
  all.names = norm.names;
  all.cols = norm.names.size();
  std::vector<std::uint8_t> labels;
  for (const auto& t : tiles) {
    TileData d = load_tile_data(ctx, t, &norm, nullptr);
    all.values.insert(all.values.end(), d.features.values.begin(), d.features.values.end());
    all.rows += d.features.rows;
    labels.insert(labels.end(), d.nodes.labels.begin(), d.nodes.labels.end());
  }
  std::vector<std::size_t> keep(all.rows);
  std::iota(keep.begin(), keep.end(), 0);
  if (keep.size() > cap) {
    std::mt19937_64 engine(seed);
    portable_shuffle(keep, engine);
    keep.resize(cap);
    std::sort(keep.begin(), keep.end());
  }
  x = FeatureMatrix{};
  x.names = all.names;
  x.cols = all.cols;
  y.clear();
  for (std::size_t r : keep) {
    const auto row = all.row(r);
    x.values.insert(x.values.end(), row.begin(), row.end());
    ++x.rows;
    y.push_back(labels[r]);
  }
}

void do_select(const Context& ctx) {
  const auto tiles = read_tile_index(ctx.run);
  const Normalizer norm = load_normalizer(ctx);
  const auto cap = static_cast<std::size_t>(ctx.cfg.selection_max_samples);
  FeatureMatrix x_train, x_val;
  std::vector<std::uint8_t> y_train, y_val;
  stack_rows(ctx, tiles_in(tiles, "train"), norm, cap, mix_seed(ctx.cfg.seed, 0x5e1ec7), x_train, y_train);
  stack_rows(ctx, tiles_in(tiles, "val"), norm, cap, mix_seed(ctx.cfg.seed, 0x5e1ec8), x_val, y_val);
  if (x_val.rows == 0) {
    x_val = x_train;
    y_val = y_train;
  }
  const SvmParams params{.c = ctx.cfg.svm_c, .epochs = ctx.cfg.svm_epochs};
  const Ranking ranking = rfe_rank(x_train, y_train, params);
  const F1Curve curve = f1_curve(ranking, x_train, y_train, x_val, y_val, params, ctx.cfg.stabilization_tolerance);
  std::size_t k = curve.selected_k;
  if (ctx.cfg.select_k == -1) k = norm.names.size();
  if (ctx.cfg.select_k > 0) k = std::min<std::size_t>(static_cast<std::size_t>(ctx.cfg.select_k), norm.names.size());
  write_text_file(ctx.run / "select" / "ranking.csv", ranking_csv(ranking, norm.names));
  write_text_file(ctx.run / "select" / "f1_curve.csv", f1_curve_csv(curve));
  write_text_file(ctx.run / "select" / "selected.txt", selected_names_text(ranking, k, norm.names));
  ctx.log("[select] {} training rows, curve stabilizes at k = {}, using {} columns", x_train.rows,
          curve.selected_k, k);
}

std::vector<GraphSample> load_samples(const Context& ctx, const std::vector<TileInfo>& tiles, const Normalizer& norm,
                                      const std::vector<std::size_t>& columns) {
  std::vector<GraphSample> out(tiles.size());
  parallel_for(tiles.size(), ctx.cfg.workers, [&](std::size_t i) {
    TileData d = load_tile_data(ctx, tiles[i], &norm, &columns);
    out[i] = to_sample(ctx, tiles[i], d);
  });
  return out;
}

void do_train(const Context& ctx) {
  const auto tiles = read_tile_index(ctx.run);
  const Normalizer norm = load_normalizer(ctx);
  const auto columns = load_selected_columns(ctx, norm);
  const auto train_set = load_samples(ctx, tiles_in(tiles, "train"), norm, columns);
  const auto val_set = load_samples(ctx, tiles_in(tiles, "val"), norm, columns);

  GcnConfig gc;
  gc.input_dim = static_cast<int>(columns.size());
  gc.hidden = ctx.cfg.hidden;
  gc.layers = ctx.cfg.layers;
  gc.aggregator = parse_aggregator(ctx.cfg.aggregator);
  gc.dropout = ctx.cfg.dropout;
  gc.beta_init = ctx.cfg.beta_init;
  gc.s_init = ctx.cfg.s_init;
  gc.y_init = ctx.cfg.y_init;
  TrainState state;
  state.model = init_model<float>(gc, mix_seed(ctx.cfg.seed, 0x6d6f64656c));
  TrainConfig tc;
  tc.learning_rate = ctx.cfg.learning_rate;
  tc.batch_size = ctx.cfg.batch_size;
  tc.epochs = ctx.cfg.epochs;
  tc.seed = ctx.cfg.seed;
  tc.class_weighted = ctx.cfg.class_weighted;
  const TrainResult result = train(std::move(state), train_set, val_set, tc);

  save_checkpoint(ctx.run / "model" / "last.ckpt", result.last);
  TrainState best;
  best.model = result.best;
  best.epoch = result.best_epoch;
  save_checkpoint(ctx.run / "model" / "best.ckpt", best);
  write_text_file(ctx.run / "model" / "history.csv", history_csv(result.history));
  std::string best_f1 = "undefined";
  for (const auto& row : result.history) {
    if (row.epoch == result.best_epoch && row.val_f1) best_f1 = fmt::format("{:.4f}", *row.val_f1);
  }
  ctx.log("[train] {} graphs, {} epochs, final loss {:.4f}, best epoch {} (val F1 {})", train_set.size(),
          result.history.size(), result.history.back().train_loss, result.best_epoch, best_f1);
}

void do_predict(const Context& ctx) {
  const auto tiles = read_tile_index(ctx.run);
  const Normalizer norm = load_normalizer(ctx);
  const auto columns = load_selected_columns(ctx, norm);
  const TrainState best = load_checkpoint(ctx.run / "model" / "best.ckpt");
  if (best.model.config.input_dim != static_cast<int>(columns.size())) {
    throw StageError("model input width does not match the selected feature columns");
  }
  parallel_for(tiles.size(), ctx.cfg.workers, [&](std::size_t i) {
    TileData d = load_tile_data(ctx, tiles[i], &norm, &columns);
    const NodeGraph graph = NodeGraph::from_region_graph(d.graph);
    const std::vector<float> features(d.features.values.begin(), d.features.values.end());
    const NodeLabeling pred = predict<float>(best.model, graph, features);
    write_mask(rasterize_prediction(d.graph, pred, d.labels), tile_pred(ctx.run, tiles[i].name));
  });
  ctx.log("[predict] {} tiles", tiles.size());
}

std::string summary_row(const std::string& method, const MetricsReport& r, const OilCounts& oil) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", method, r.counts.tp, r.counts.tn, r.counts.fp,
                     r.counts.fn, oil.available ? 1 : 0, oil.missed, oil.total, format_percent(r.p_d),
                     format_percent(r.p_f), format_percent(r.p_acc), format_percent(r.p_m, r.p_m_available));
}

void do_eval(const Context& ctx) {
  const auto test = tiles_in(read_tile_index(ctx.run), "test");
  std::vector<TileReport> model_rows(test.size());
  std::vector<TileReport> otsu_rows(test.size());
  std::vector<OilCounts> model_oil(test.size());
  std::vector<OilCounts> otsu_oil(test.size());
  std::vector<std::string> warnings(test.size());
  parallel_for(test.size(), ctx.cfg.workers, [&](std::size_t i) {
    const auto& t = test[i];
    const RasterGrid grid = load_grid(tile_image(ctx.run, t.name), RasterFormat::kF32Raw);
    const BinaryMask truth = read_mask(tile_truth(ctx.run, t.name));
    const BinaryMask pred = read_mask(tile_pred(ctx.run, t.name));
    const OtsuResult otsu = otsu_baseline(grid);
    warnings[i] = otsu.warning;
    if (t.has_oil) {
      const BinaryMask oil = read_mask(tile_oil(ctx.run, t.name));
      model_oil[i] = oil_counts(pred, oil, grid.valid);
      otsu_oil[i] = oil_counts(otsu.mask, oil, grid.valid);
    }
    model_rows[i] = {t.name, compute_metrics(confusion(pred, truth, grid.valid), model_oil[i])};
    otsu_rows[i] = {t.name, compute_metrics(confusion(otsu.mask, truth, grid.valid), otsu_oil[i])};
  });
  auto totals = [](const std::vector<TileReport>& rows, const std::vector<OilCounts>& oil) {
    Confusion c;
    OilCounts o;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      c += rows[i].report.counts;
      if (oil[i].available) {
        o.available = true;
        o.missed += oil[i].missed;
        o.total += oil[i].total;
      }
    }
    return std::pair{compute_metrics(c, o), o};
  };
  const auto [model_total, model_oil_total] = totals(model_rows, model_oil);
  const auto [otsu_total, otsu_oil_total] = totals(otsu_rows, otsu_oil);
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (!warnings[i].empty()) ctx.log("[eval] {}: {}", test[i].name, warnings[i]);
  }
  write_text_file(ctx.run / "eval" / "metrics.csv", metrics_csv(model_rows, model_total));
  write_text_file(ctx.run / "eval" / "otsu_metrics.csv", metrics_csv(otsu_rows, otsu_total));
  write_text_file(ctx.run / "eval" / "summary.csv",
                  "method,TP,TN,FP,FN,oil_available,MO,AO,P_d,P_f,P_acc,P_m\n" +
                      summary_row("model", model_total, model_oil_total) +
                      summary_row("otsu", otsu_total, otsu_oil_total));
  std::string report = fmt::format("Test split ({} tiles), graph model\n", test.size());
  report += metrics_table(model_rows, model_total);
  report += "\nOtsu global threshold\n";
  report += metrics_table(otsu_rows, otsu_total);
  write_text_file(ctx.run / "eval" / "report.txt", report);
  ctx.log("[eval] model P_d {} P_f {} P_acc {} | otsu P_d {} P_acc {}", format_percent(model_total.p_d),
          format_percent(model_total.p_f), format_percent(model_total.p_acc), format_percent(otsu_total.p_d),
          format_percent(otsu_total.p_acc));
}

}  // namespace

std::vector<ManifestRecord> read_run_manifest(const fs::path& run_dir) {
  const fs::path path = run_dir / "manifest.csv";
  std::vector<ManifestRecord> out;
  if (!fs::exists(path)) return out;
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  if (trim(line) != kManifestHeader) throw StageError(fmt::format("{}: unexpected header", path.string()));
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 4) throw StageError(fmt::format("{}: malformed row '{}'", path.string(), line));
    out.push_back({f[0], parse_hex(f[1]), parse_hex(f[2]), parse_hex(f[3])});
  }
  return out;
}

StageOutcome run_stage(Stage stage, const RunOptions& options) {
  const fs::path& run = options.run_dir;
  const PipelineConfig& cfg = options.config;
  validate_config(cfg);
  fs::create_directories(run);
  auto records = read_run_manifest(run);
  auto find = [&](std::string_view name) -> ManifestRecord* {
    for (auto& r : records) {
      if (r.stage == name) return &r;
    }
    return nullptr;
  };

  Fnv1a input;
  for (Stage dep : stage_dependencies(stage)) {
    const ManifestRecord* rec = find(stage_name(dep));
    if (!rec) {
      throw StageError(fmt::format("stage '{}' needs the outputs of '{}'; run it first", stage_name(stage),
                                   stage_name(dep)));
    }
    if (hash_directories(run, stage_dirs(dep)) != rec->output_hash) {
      throw StageError(fmt::format("hash mismatch: artifacts of stage '{}' changed since it ran; rerun '{}'",
                                   stage_name(dep), stage_name(dep)));
    }
    input.update(stage_name(dep));
    input.update(hex64(rec->output_hash));
  }
  if (stage == Stage::kSynth && !cfg.data_manifest.empty()) input.update(hex64(external_data_hash(cfg)));
  const std::uint64_t input_hash = input.digest();
  const std::uint64_t cfg_hash = config_hash(cfg, stage_config_keys(stage));
  const auto dirs = stage_dirs(stage);

  if (const ManifestRecord* own = find(stage_name(stage))) {
    if (own->config_hash == cfg_hash && own->input_hash == input_hash &&
        hash_directories(run, dirs) == own->output_hash) {
      if (options.log) *options.log << fmt::format("[{}] up to date, skipped\n", stage_name(stage));
      return StageOutcome::kCached;
    }
  }
  for (const auto& d : dirs) {
    fs::remove_all(run / d);
    fs::create_directories(run / d);
  }
  const Context ctx{options, run, cfg};
  switch (stage) {
    case Stage::kSynth:
      do_synth(ctx);
      break;
    case Stage::kPreprocess:
      do_preprocess(ctx);
      break;
    case Stage::kSegment:
      do_segment(ctx);
      break;
    case Stage::kFeatures:
      do_features(ctx);
      break;
    case Stage::kSelect:
      do_select(ctx);
      break;
    case Stage::kTrain:
      do_train(ctx);
      break;
    case Stage::kPredict:
      do_predict(ctx);
      break;
    case Stage::kEval:
      do_eval(ctx);
      break;
  }
  ManifestRecord rec{std::string(stage_name(stage)), cfg_hash, input_hash, hash_directories(run, dirs)};
  if (ManifestRecord* own = find(rec.stage)) {
    *own = rec;
  } else {
    records.push_back(rec);
  }
  write_run_manifest(run, records);
  return StageOutcome::kRan;
}

void run_pipeline(const RunOptions& options) {
  for (Stage s : kAllStages) run_stage(s, options);
}

EvalSummary load_eval_summary(const fs::path& run_dir) {
  const fs::path path = run_dir / "eval" / "summary.csv";
  if (!fs::exists(path)) throw StageError(fmt::format("missing {}; run 'eval' first", path.string()));
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  EvalSummary s;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 12) throw StageError(fmt::format("{}: malformed row", path.string()));
    Confusion c{std::stoull(f[1]), std::stoull(f[2]), std::stoull(f[3]), std::stoull(f[4])};
    OilCounts o{f[5] == "1", std::stoull(f[6]), std::stoull(f[7])};
    (f[0] == "model" ? s.model : s.otsu) = compute_metrics(c, o);
  }
  return s;
}

}  // namespace darkspot
