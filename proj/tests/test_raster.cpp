#include "darkspot/raster.hpp"
#include "darkspot/synth.hpp"
#include "darkspot/util.hpp"
#include "oracles.hpp"
#include "scratch_dir.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

using namespace darkspot;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

std::string f32raw_bytes(std::uint32_t w, std::uint32_t h, const std::vector<float>& vals) {
  std::ostringstream out;
  le::write(out, w);
  le::write(out, h);
  for (float v : vals) le::write(out, v);
  return out.str();
}

}  // namespace

TEST(Raster, Pgm16ReadsRawSamples) {
  ScratchDir dir;
  const auto path = dir / "a.pgm";
  // Big-endian 16-bit samples 0, 100, 200, 65535.
  std::string bytes = "P5\n2 2\n65535\n";
  for (unsigned v : {0u, 100u, 200u, 65535u}) {
    bytes.push_back(static_cast<char>(v >> 8));
    bytes.push_back(static_cast<char>(v & 0xff));
  }
  write_bytes(path, bytes);
  const RasterGrid g = load_grid(path, RasterFormat::kPgm16);
  ASSERT_EQ(g.width, 2);
  ASSERT_EQ(g.height, 2);
  EXPECT_EQ(g.values, (std::vector<double>{0, 100, 200, 65535}));
  EXPECT_EQ(g.valid_count(), 4u);
}

TEST(Raster, Pgm16RoundTrip) {
  ScratchDir dir;
  RasterGrid g(5, 3);
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = static_cast<double>(i * 4000);
  save_pgm16(g, dir / "x.pgm");
  EXPECT_EQ(load_grid(dir / "x.pgm", RasterFormat::kPgm16), g);
}

TEST(Raster, F32ZerosAllValid) {
  ScratchDir dir;
  RasterGrid g(256, 256, 0.0);
  save_f32raw(g, dir / "z.f32");
  const RasterGrid back = load_grid(dir / "z.f32", RasterFormat::kF32Raw);
  EXPECT_EQ(back, g);
  EXPECT_EQ(back.valid_count(), 256u * 256u);
}

TEST(Raster, F32RejectsNaNWithIndex) {
  ScratchDir dir;
  write_bytes(dir / "n.f32", f32raw_bytes(2, 2, {1.0f, 2.0f, std::numeric_limits<float>::quiet_NaN(), 0.0f}));
  try {
    load_grid(dir / "n.f32", RasterFormat::kF32Raw);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite value at index 2"), std::string::npos) << e.what();
  }
}

TEST(Raster, F32RejectsPayloadMismatch) {
  ScratchDir dir;
  write_bytes(dir / "s.f32", f32raw_bytes(3, 3, {1.0f, 2.0f}));
  EXPECT_THROW(load_grid(dir / "s.f32", RasterFormat::kF32Raw), ValidationError);
}

TEST(Raster, PgmRejectsMalformedHeader) {
  ScratchDir dir;
  write_bytes(dir / "bad.pgm", "P2\n2 2\n255\n0 0 0 0\n");
  EXPECT_THROW(load_grid(dir / "bad.pgm", RasterFormat::kPgm16), ValidationError);
  write_bytes(dir / "short.pgm", std::string("P5\n4 4\n255\n") + "abc");
  EXPECT_THROW(load_grid(dir / "short.pgm", RasterFormat::kPgm16), ValidationError);
}

TEST(Raster, SidecarMaskMarksInvalid) {
  ScratchDir dir;
  RasterGrid g(3, 2, 1.5);
  save_f32raw(g, dir / "img.f32");
  BinaryMask m(3, 2, 1);
  m.bits[1] = 0;
  m.bits[5] = 0;
  write_mask(m, dir / "img.mask");
  const RasterGrid back = load_grid(dir / "img.f32", RasterFormat::kF32Raw);
  EXPECT_EQ(back.valid, (std::vector<std::uint8_t>{1, 0, 1, 1, 1, 0}));
}

TEST(Raster, MaskRoundTrips) {
  ScratchDir dir;
  BinaryMask zeros(7, 5);
  write_mask(zeros, dir / "z.pgm");
  EXPECT_EQ(read_mask(dir / "z.pgm"), zeros);

  BinaryMask checker(8, 8);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) checker.bits[checker.index(r, c)] = (r + c) % 2;
  }
  write_mask(checker, dir / "c.pgm");
  EXPECT_EQ(read_mask(dir / "c.pgm"), checker);

  SceneSpec spec;
  spec.size = 64;
  spec.spots.push_back({SpotShape::kEllipse, 30, 30, 12, 6, 0.4, 0.0, 0.5, false});
  spec.spots.push_back({SpotShape::kRibbon, 20, 40, 15, 2, -0.3, 0.5, 0.5, true});
  const Scene scene = generate(spec);
  ASSERT_GT(scene.truth.count(), 0u);
  write_mask(scene.truth, dir / "t.pgm");
  EXPECT_EQ(read_mask(dir / "t.pgm"), scene.truth);
}

TEST(Lee, ConstantGridIsIdentity) {
  RasterGrid g(9, 7, 7.0);
  EXPECT_EQ(lee_filter(g), g);
  g.valid[3] = 0;
  g.values[3] = 0.0;
  EXPECT_EQ(lee_filter(g, {5, 0.4}), g);
}

TEST(Lee, CentreImpulseHandEvaluation) {
  RasterGrid g(3, 3, 0.0);
  g.values[4] = 100.0;
  // m = 100/9, v = 80000/81, (Cu m)^2 = 625/81, W = 79375/80000,
  // out = m + W (100 - m) = 893.75 / 9.
  const RasterGrid out = lee_filter(g, {3, 0.25});
  EXPECT_NEAR(out.at(1, 1), 893.75 / 9.0, 1e-12);
}

TEST(Lee, MatchesPerPixelOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const RasterGrid g = oracle::random_grid(16, 16, rng, trial % 2 ? 0.2 : 0.0, 0.0, 5.0);
    for (int window : {3, 5}) {
      const RasterGrid got = lee_filter(g, {window, 0.25});
      const RasterGrid want = oracle::lee(g, window, 0.25);
      for (std::size_t i = 0; i < g.size(); ++i) ASSERT_NEAR(got.values[i], want.values[i], 1e-9) << i;
    }
  }
}

TEST(Lee, PreservesShapeMaskAndWindowBounds) {
  std::mt19937_64 rng(5);
  const RasterGrid g = oracle::random_grid(20, 13, rng, 0.3);
  const RasterGrid out = lee_filter(g);
  ASSERT_EQ(out.width, g.width);
  ASSERT_EQ(out.height, g.height);
  EXPECT_EQ(out.valid, g.valid);
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      if (!g.is_valid(r, c)) {
        EXPECT_EQ(out.at(r, c), g.at(r, c));
        continue;
      }
      double lo = INFINITY, hi = -INFINITY;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (!g.contains(r + dr, c + dc) || !g.is_valid(r + dr, c + dc)) continue;
          lo = std::min(lo, g.at(r + dr, c + dc));
          hi = std::max(hi, g.at(r + dr, c + dc));
        }
      }
      EXPECT_GE(out.at(r, c), lo - 1e-12);
      EXPECT_LE(out.at(r, c), hi + 1e-12);
    }
  }
}

TEST(Lee, LoneValidPixelUnchanged) {
  RasterGrid g(3, 3, 2.0, false);
  g.valid[4] = 1;
  g.values[4] = 9.0;
  EXPECT_EQ(lee_filter(g).values[4], 9.0);
}

TEST(Lee, RejectsBadWindow) {
  RasterGrid g(4, 4, 1.0);
  EXPECT_THROW(lee_filter(g, {4, 0.25}), ValidationError);
  EXPECT_THROW(lee_filter(g, {1, 0.25}), ValidationError);
}

TEST(Tiling, FourTilesOn512) {
  RasterGrid g(512, 512, 1.0);
  const auto tiles = tile_grid(g, 256);
  ASSERT_EQ(tiles.size(), 4u);
  const std::pair<int, int> origins[] = {{0, 0}, {0, 256}, {256, 0}, {256, 256}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(tiles[i].row, origins[i].first);
    EXPECT_EQ(tiles[i].col, origins[i].second);
  }
}

TEST(Tiling, EdgeTilePadding) {
  RasterGrid g(300, 300, 1.0);
  const auto tiles = tile_grid(g, 256);
  ASSERT_EQ(tiles.size(), 4u);
  const Tile& t = tiles[1];
  ASSERT_EQ(t.row, 0);
  ASSERT_EQ(t.col, 256);
  EXPECT_EQ(t.grid.width, 256);
  EXPECT_EQ(t.grid.height, 256);
  int valid_cols = 0;
  for (int c = 0; c < 256; ++c) valid_cols += t.grid.is_valid(0, c);
  EXPECT_EQ(valid_cols, 44);
  EXPECT_EQ(t.grid.valid_count(), 44u * 256u);
}

TEST(Tiling, SingleTileIsIdentity) {
  std::mt19937_64 rng(3);
  const RasterGrid g = oracle::random_grid(256, 256, rng, 0.1);
  const auto tiles = tile_grid(g, 256);
  ASSERT_EQ(tiles.size(), 1u);
  EXPECT_EQ(tiles[0].grid, g);
}

TEST(Tiling, StitchInvertsTiling) {
  std::mt19937_64 rng(4);
  const RasterGrid g = oracle::random_grid(100, 70, rng, 0.05);
  const auto tiles = tile_grid(g, 32);
  EXPECT_EQ(tiles.size(), 4u * 3u);
  EXPECT_EQ(stitch_tiles(tiles, g.width, g.height), g);
}

TEST(Tiling, RejectsSmallSize) {
  RasterGrid g(64, 64);
  EXPECT_THROW(tile_grid(g, 16), ValidationError);
}
