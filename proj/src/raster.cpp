#include "darkspot/raster.hpp"

#include "darkspot/util.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace darkspot {

RasterGrid::RasterGrid(int w, int h, double fill, bool all_valid)
    : width(w),
      height(h),
      values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill),
      valid(values.size(), all_valid ? 1 : 0) {}

std::size_t RasterGrid::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

void RasterGrid::check_invariants() const {
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (width < 0 || height < 0 || values.size() != n || valid.size() != n) {
    throw ValidationError("raster: size mismatch between dimensions, values and mask");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (valid[i] && (!std::isfinite(values[i]) || values[i] < 0.0)) {
      throw ValidationError(fmt::format("raster: invalid value at index {}", i));
    }
  }
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

RasterFormat parse_raster_format(const std::string& name) {
  if (name == "pgm16") return RasterFormat::kPgm16;
  if (name == "f32raw") return RasterFormat::kF32Raw;
  throw ValidationError(fmt::format("unknown raster format '{}'", name));
}

namespace {

struct PgmImage {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::vector<std::uint16_t> samples;
};

// Reads the next header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c) && c != '#') {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  // The single whitespace byte after maxval is consumed here as well.
  return tok;
}

int parse_header_int(const std::string& tok, const std::filesystem::path& path, const char* what) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
    throw ValidationError(fmt::format("{}: malformed header ({})", path.string(), what));
  }
  const long v = std::stol(tok);
  if (v <= 0 || v > (1L << 30)) throw ValidationError(fmt::format("{}: malformed header ({})", path.string(), what));
  return static_cast<int>(v);
}

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  if (pgm_token(in) != "P5") throw ValidationError(fmt::format("{}: malformed header (expected P5)", path.string()));
  PgmImage img;
  img.width = parse_header_int(pgm_token(in), path, "width");
  img.height = parse_header_int(pgm_token(in), path, "height");
  img.maxval = parse_header_int(pgm_token(in), path, "maxval");
  if (img.maxval > 65535) throw ValidationError(fmt::format("{}: malformed header (maxval)", path.string()));
  const std::size_t n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  const std::size_t bytes_per = img.maxval > 255 ? 2 : 1;
  std::vector<unsigned char> payload(n * bytes_per);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size() || in.peek() != EOF) {
    throw ValidationError(fmt::format("{}: payload size mismatch", path.string()));
  }
  img.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    img.samples[i] = bytes_per == 2 ? static_cast<std::uint16_t>((payload[2 * i] << 8) | payload[2 * i + 1])
                                    : payload[i];
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, int width, int height, int maxval,
               const std::vector<std::uint16_t>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << "P5\n" << width << ' ' << height << '\n' << maxval << '\n';
  std::vector<unsigned char> payload;
  payload.reserve(samples.size() * (maxval > 255 ? 2 : 1));
  for (std::uint16_t s : samples) {
    if (maxval > 255) payload.push_back(static_cast<unsigned char>(s >> 8));
    payload.push_back(static_cast<unsigned char>(s & 0xff));
  }
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", path.string()));
}

RasterGrid read_f32raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  std::uint32_t w = 0;
  std::uint32_t h = 0;
  if (!le::read(in, w) || !le::read(in, h)) {
    throw ValidationError(fmt::format("{}: malformed header", path.string()));
  }
  const auto file_size = std::filesystem::file_size(path);
  const std::uint64_t expected = 8 + 4ULL * w * h;
  if (file_size != expected) {
    throw ValidationError(fmt::format("{}: payload size mismatch ({} bytes, expected {})", path.string(),
                                      file_size, expected));
  }
  RasterGrid grid(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    float v = 0.0f;
    le::read(in, v);
    if (!std::isfinite(v)) throw ValidationError(fmt::format("non-finite value at index {}", i));
    if (v < 0.0f) throw ValidationError(fmt::format("negative value at index {}", i));
    grid.values[i] = static_cast<double>(v);
  }
  return grid;
}

}  // namespace

std::filesystem::path sidecar_mask_path(const std::filesystem::path& raster_path) {
  auto p = raster_path;
  p.replace_extension(".mask");
  return p;
}

RasterGrid load_grid(const std::filesystem::path& path, RasterFormat format) {
  RasterGrid grid;
  if (format == RasterFormat::kPgm16) {
    const PgmImage img = read_pgm(path);
    grid = RasterGrid(img.width, img.height);
    for (std::size_t i = 0; i < grid.size(); ++i) grid.values[i] = static_cast<double>(img.samples[i]);
  } else {
    grid = read_f32raw(path);
  }
  const auto mask_path = sidecar_mask_path(path);
  if (mask_path != path && std::filesystem::exists(mask_path)) {
    const PgmImage mask = read_pgm(mask_path);
    if (mask.width != grid.width || mask.height != grid.height) {
      throw ValidationError(fmt::format("{}: mask dimensions differ from raster", mask_path.string()));
    }
    for (std::size_t i = 0; i < grid.size(); ++i) grid.valid[i] = mask.samples[i] != 0 ? 1 : 0;
  }
  return grid;
}

void save_f32raw(const RasterGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  le::write(out, static_cast<std::uint32_t>(grid.width));
  le::write(out, static_cast<std::uint32_t>(grid.height));
  for (double v : grid.values) le::write(out, static_cast<float>(v));
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", path.string()));
}

void save_pgm16(const RasterGrid& grid, const std::filesystem::path& path) {
  std::vector<std::uint16_t> samples(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    samples[i] = static_cast<std::uint16_t>(std::clamp(std::lround(grid.values[i]), 0L, 65535L));
  }
  write_pgm(path, grid.width, grid.height, 65535, samples);
}

void write_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  std::vector<std::uint16_t> samples(mask.bits.size());
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = mask.bits[i] ? 255 : 0;
  write_pgm(path, mask.width, mask.height, 255, samples);
}

BinaryMask read_mask(const std::filesystem::path& path) {
  const PgmImage img = read_pgm(path);
  BinaryMask mask(img.width, img.height);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) mask.bits[i] = img.samples[i] != 0 ? 1 : 0;
  return mask;
}

RasterGrid lee_filter(const RasterGrid& grid, const LeeParams& params) {
  if (params.window < 3 || params.window % 2 == 0) {
    throw ValidationError(fmt::format("lee_filter: window must be odd and >= 3 (got {})", params.window));
  }
  if (grid.empty()) throw ValidationError("lee_filter: empty grid");
  const int r = params.window / 2;
  RasterGrid out = grid;
  std::vector<double> window;
  window.reserve(static_cast<std::size_t>(params.window) * static_cast<std::size_t>(params.window));
  for (int row = 0; row < grid.height; ++row) {
    for (int col = 0; col < grid.width; ++col) {
      if (!grid.is_valid(row, col)) continue;
      window.clear();
      for (int dr = -r; dr <= r; ++dr) {
        for (int dc = -r; dc <= r; ++dc) {
          const int rr = row + dr;
          const int cc = col + dc;
          if (!grid.contains(rr, cc) || !grid.is_valid(rr, cc)) continue;
          window.push_back(grid.at(rr, cc));
        }
      }
      if (window.size() < 2) continue;
      // Flat window: m == in(p) exactly; skip to avoid rounding in the mean.
      const auto [lo, hi] = std::minmax_element(window.begin(), window.end());
      if (*lo == *hi) continue;
      const double n = static_cast<double>(window.size());
      double mean = 0.0;
      for (double v : window) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : window) var += (v - mean) * (v - mean);
      var /= n;
      double weight = 0.0;
      if (var > 0.0) {
        const double noise = params.noise_cv * mean;
        weight = std::max(0.0, var - noise * noise) / var;
      }
      out.values[grid.index(row, col)] = mean + weight * (grid.at(row, col) - mean);
    }
  }
  return out;
}

std::vector<Tile> tile_grid(const RasterGrid& grid, int size) {
  if (size < 32) throw ValidationError(fmt::format("tile_grid: size must be >= 32 (got {})", size));
  std::vector<Tile> tiles;
  for (int r0 = 0; r0 < grid.height; r0 += size) {
    for (int c0 = 0; c0 < grid.width; c0 += size) {
      Tile t{r0, c0, RasterGrid(size, size, 0.0, false)};
      const int rows = std::min(size, grid.height - r0);
      const int cols = std::min(size, grid.width - c0);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          const auto dst = t.grid.index(r, c);
          const auto src = grid.index(r0 + r, c0 + c);
          t.grid.values[dst] = grid.values[src];
          t.grid.valid[dst] = grid.valid[src];
        }
      }
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

RasterGrid stitch_tiles(const std::vector<Tile>& tiles, int width, int height) {
  RasterGrid out(width, height, 0.0, false);
  for (const Tile& t : tiles) {
    for (int r = 0; r < t.grid.height && t.row + r < height; ++r) {
      for (int c = 0; c < t.grid.width && t.col + c < width; ++c) {
        const auto dst = out.index(t.row + r, t.col + c);
        const auto src = t.grid.index(r, c);
        out.values[dst] = t.grid.values[src];
        out.valid[dst] = t.grid.valid[src];
      }
    }
  }
  return out;
}

BinaryMask crop_mask(const BinaryMask& mask, int row, int col, int size) {
  BinaryMask out(size, size);
  for (int r = 0; r < size && row + r < mask.height; ++r) {
    for (int c = 0; c < size && col + c < mask.width; ++c) {
      out.bits[out.index(r, c)] = mask.bits[mask.index(row + r, col + c)];
    }
  }
  return out;
}

}  // namespace darkspot
