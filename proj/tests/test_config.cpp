#include "darkspot/config.hpp"
#include "darkspot/raster.hpp"
#include "darkspot/util.hpp"
#include "scratch_dir.hpp"

#include <gtest/gtest.h>

#include <string>

using namespace darkspot;

namespace {

std::string error_of(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, DefaultsFromEmptyText) {
  const PipelineConfig c = parse_config("");
  EXPECT_EQ(c.hidden, 128);
  EXPECT_EQ(c.layers, 28);
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_DOUBLE_EQ(c.learning_rate, 0.001);
  EXPECT_DOUBLE_EQ(c.dropout, 0.2);
  EXPECT_DOUBLE_EQ(c.beta_init, 1.0);
  EXPECT_DOUBLE_EQ(c.s_init, 1.0);
  EXPECT_DOUBLE_EQ(c.y_init, 0.0);
  EXPECT_EQ(c.aggregator, "softmax");
  EXPECT_EQ(c.workers, 1);
}

TEST(Config, ParsesValuesAndComments) {
  const PipelineConfig c = parse_config(
      "# reduced model\n"
      "hidden = 32   # width\n"
      "\n"
      "  layers=8\n"
      "aggregator = powermean\n"
      "beta_init = 2.5\n"
      "lee = false\n"
      "seed = 18446744073709551615\n"
      "data_manifest = data/manifest.csv\n");
  EXPECT_EQ(c.hidden, 32);
  EXPECT_EQ(c.layers, 8);
  EXPECT_EQ(c.aggregator, "powermean");
  EXPECT_DOUBLE_EQ(c.beta_init, 2.5);
  EXPECT_FALSE(c.lee);
  EXPECT_EQ(c.seed, 18446744073709551615ull);
  EXPECT_EQ(c.data_manifest, "data/manifest.csv");
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_NE(error_of("learning_rate = -0.1").find("learning_rate"), std::string::npos);
  EXPECT_NE(error_of("epochs = ten").find("epochs"), std::string::npos);
  EXPECT_NE(error_of("hidden = 12.5").find("hidden"), std::string::npos);
  EXPECT_NE(error_of("lee_window = 4").find("lee_window"), std::string::npos);
  EXPECT_NE(error_of("aggregator = max").find("aggregator"), std::string::npos);
  EXPECT_NE(error_of("lee = maybe").find("lee"), std::string::npos);
  EXPECT_NE(error_of("colour = blue").find("colour"), std::string::npos);
  EXPECT_NE(error_of("hidden = 8\nhidden = 16").find("twice"), std::string::npos);
  EXPECT_NE(error_of("just some words").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("contrast_min = 0.6\ncontrast_max = 0.4").find("contrast_min"), std::string::npos);
  EXPECT_NE(error_of("aggregator = powermean\nbeta_init = 0").find("beta_init"), std::string::npos);
  EXPECT_THROW(load_config("/nonexistent/run.cfg"), ValidationError);
}

TEST(Config, TextRoundTrip) {
  PipelineConfig c;
  c.hidden = 40;
  c.learning_rate = 0.0123456789;
  c.noise_cv = 1.0 / 3.0;
  c.class_weighted = false;
  c.data_manifest = "x/y.csv";
  const std::string text = config_text(c);
  const PipelineConfig back = parse_config(text);
  EXPECT_EQ(config_text(back), text);
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  EXPECT_EQ(back.noise_cv, c.noise_cv);
  for (const auto& key : config_keys()) EXPECT_EQ(config_value(back, key), config_value(c, key)) << key;
}

TEST(Config, LoadFromFile) {
  ScratchDir dir;
  write_text_file(dir / "run.cfg", "epochs = 3\n");
  EXPECT_EQ(load_config(dir / "run.cfg").epochs, 3);
}

TEST(Config, HashDependsOnlyOnListedKeys) {
  PipelineConfig a;
  PipelineConfig b;
  b.epochs = 7;
  const std::vector<std::string> model_keys{"hidden", "layers"};
  EXPECT_EQ(config_hash(a, model_keys), config_hash(b, model_keys));
  EXPECT_NE(config_hash(a, {"epochs"}), config_hash(b, {"epochs"}));
  b.hidden = 64;
  EXPECT_NE(config_hash(a, model_keys), config_hash(b, model_keys));
}

TEST(Config, SetValueValidates) {
  PipelineConfig c;
  set_config_value(c, "workers", "4");
  EXPECT_EQ(c.workers, 4);
  EXPECT_THROW(set_config_value(c, "workers", "0"), ValidationError);
  EXPECT_THROW(set_config_value(c, "nope", "1"), ValidationError);
  EXPECT_THROW(config_value(c, "nope"), ValidationError);
}
