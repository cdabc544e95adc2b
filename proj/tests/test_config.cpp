#include "patchssl/config.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace patchssl;
using namespace patchssl::config;

namespace {

nlohmann::json resolve_text(const std::string& text) {
  std::istringstream in(text);
  return resolve(parse_toml(in));
}

std::string error_of(const std::string& text) {
  try {
    resolve_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsWhenEmpty) {
  const auto c = resolve_text("");
  EXPECT_EQ(c["config_version"], "1");
  EXPECT_EQ(c["probe"]["k"], 20);
  EXPECT_EQ(c["probe"]["folds"], 10);
  EXPECT_EQ(c["pretrain"]["prototypes"], 1024);
  EXPECT_DOUBLE_EQ(c["pretrain"]["teacher_temperature"].get<double>(), 0.04);
  EXPECT_EQ(c["mil"]["attention_dim"], 128);
}

TEST(Config, SectionsDottedKeysAndTypes) {
  const auto c = resolve_text(R"(
config_version = "1"   # trailing comment
seed = 7
[pretrain]
method = "simclr"
lr = 1e-3
epochs = 20
[mil]
fractions = [1.0, 0.75, 0.5, 0.25]
[extract]
stain_norm = true
[viz]
threshold = 1   # integers widen to floats
)");
  EXPECT_EQ(c["seed"], 7);
  EXPECT_EQ(c["pretrain"]["method"], "simclr");
  EXPECT_DOUBLE_EQ(c["pretrain"]["lr"].get<double>(), 1e-3);
  EXPECT_EQ(c["mil"]["fractions"].size(), 4u);
  EXPECT_TRUE(c["extract"]["stain_norm"].get<bool>());
  EXPECT_TRUE(c["viz"]["threshold"].is_number_float());
  EXPECT_EQ(resolve_text("pretrain.epochs = 3")["pretrain"]["epochs"], 3);
}

TEST(Config, UnknownKeyReportsLine) {
  const std::string e = error_of("seed = 1\n\n[pretrain]\nepochz = 5\n");
  EXPECT_NE(e.find("line 4"), std::string::npos) << e;
  EXPECT_NE(e.find("unknown key 'pretrain.epochz'"), std::string::npos) << e;
  EXPECT_NE(error_of("[nosuch]\nx = 1\n").find("line 2"), std::string::npos);
}

TEST(Config, TypeAndSyntaxErrors) {
  EXPECT_NE(error_of("seed = \"zero\"\n").find("wrong type"), std::string::npos);
  EXPECT_NE(error_of("[pretrain]\nepochs = 2.5\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("seed = 1\nseed = 2\n").find("duplicate"), std::string::npos);
  EXPECT_NE(error_of("just words\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("config_version = \"2\"\n").find("config_version"), std::string::npos);
  EXPECT_NE(error_of("[pretrain\n").find("malformed section"), std::string::npos);
  EXPECT_NE(error_of("pretrain = 3\n").find("must be a table"), std::string::npos);
}

TEST(Config, Overrides) {
  auto c = defaults();
  apply_override(c, "pretrain.epochs=3");
  apply_override(c, "encoder.kind=\"cnn_b3\"");
  apply_override(c, "mil.fractions=[0.5,1.0]");
  EXPECT_EQ(c["pretrain"]["epochs"], 3);
  EXPECT_EQ(c["encoder"]["kind"], "cnn_b3");
  EXPECT_EQ(c["mil"]["fractions"].size(), 2u);
  EXPECT_THROW(apply_override(c, "pretrain.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "noequals"), ConfigError);
}

TEST(Config, StringsWithHashesAndEscapes) {
  const auto c = resolve_text("[encoder]\nkind = \"vit_small\" # note\npreset = \"de\\\"sk\"\n");
  EXPECT_EQ(c["encoder"]["kind"], "vit_small");
  EXPECT_EQ(c["encoder"]["preset"], "de\"sk");
}
