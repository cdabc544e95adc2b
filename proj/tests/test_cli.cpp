#include "patchssl/patchssl.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace patchssl;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string err;
};

Outcome cli(const fs::path& dir, const std::string& args) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(PATCHSSL_CLI) + " " + args + " 2> " + err.string() + " > /dev/null";
  const int st = std::system(cmd.c_str());
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Four synthetic patches, shared by the tests below.
fs::path corpus() {
  static const fs::path dir = [] {
    const fs::path d = testsupport::scratch_dir("cli_corpus");
    const auto r = cli(d, "synth --out " + (d / "c").string() + " --n 4 --seed 3");
    EXPECT_EQ(r.code, 0) << r.err;
    return d / "c";
  }();
  return dir;
}

}  // namespace

TEST(Cli, SynthWritesManifestAndResolvedConfig) {
  const fs::path c = corpus();
  const auto entries = tiling::read_manifest(c / "manifest.json");
  ASSERT_EQ(entries.size(), 4u);
  for (const auto& e : entries) {
    EXPECT_TRUE(fs::exists(c / e.path));
    EXPECT_TRUE(e.label.has_value());
  }
  const json rc = checkpoint::read_json(c / "resolved_config.json");
  EXPECT_EQ(rc["command"], "synth");
  EXPECT_EQ(rc["config"]["synth"]["n"], 4);
  EXPECT_EQ(rc["config"]["seed"], 3);
  const json res = checkpoint::read_json(c / "result.json");
  EXPECT_EQ(res["n_patches"], 4);
}

TEST(Cli, PrecedenceDefaultsFileFlagsOverrides) {
  const fs::path d = testsupport::scratch_dir("cli_prec");
  {
    std::ofstream f(d / "run.toml");
    f << "seed = 9\n[synth]\nn = 6\n";
  }
  auto r = cli(d, "synth --config " + (d / "run.toml").string() + " --out " + (d / "a").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(checkpoint::read_json(d / "a/result.json")["n_patches"], 6);
  EXPECT_EQ(checkpoint::read_json(d / "a/resolved_config.json")["config"]["seed"], 9);

  r = cli(d, "synth --config " + (d / "run.toml").string() + " --n 5 --out " + (d / "b").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(checkpoint::read_json(d / "b/result.json")["n_patches"], 5);

  r = cli(d, "synth --config " + (d / "run.toml").string() + " --n 5 --set synth.n=3 --out " + (d / "c").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(checkpoint::read_json(d / "c/result.json")["n_patches"], 3);
}

TEST(Cli, UnknownConfigKeyFailsNamingKeyAndLine) {
  const fs::path d = testsupport::scratch_dir("cli_badkey");
  {
    std::ofstream f(d / "bad.toml");
    f << "seed = 1\n\n[pretrain]\nepochz = 3\n";
  }
  auto r = cli(d, "synth --n 2 --config " + (d / "bad.toml").string() + " --out " + (d / "o").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("pretrain.epochz"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("line 4"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(d / "o/result.json"));

  r = cli(d, "synth --n 2 --set mil.epochz=1 --out " + (d / "o2").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("mil.epochz"), std::string::npos) << r.err;

  r = cli(d, "synth --n 2 --set seed=abc --out " + (d / "o3").string());
  EXPECT_EQ(r.code, 2) << r.err;

  r = cli(d, "nosuchcommand");
  EXPECT_EQ(r.code, 2);
  r = cli(d, "probe --out " + (d / "o4").string());  // --embeddings missing
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, TileMaterializesTissueTiles) {
  const fs::path d = testsupport::scratch_dir("cli_tile");
  // Background left half, stained right half: a 2×2 grid of 256-px tiles.
  Image slide = Image::filled_rgb(512, 512, 0.95f, 0.95f, 0.95f);
  for (int y = 0; y < 512; ++y)
    for (int x = 256; x < 512; ++x) {
      slide.at(0, y, x) = 0.6f;
      slide.at(1, y, x) = 0.25f;
      slide.at(2, y, x) = 0.65f;
    }
  save_png(d / "slide.png", slide);
  const auto r = cli(d, "tile --slide " + (d / "slide.png").string() + " --slide-id S1 --tile-size 256 --out " +
                            (d / "t").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto entries = tiling::read_manifest(d / "t/manifest.json");
  ASSERT_EQ(entries.size(), 2u);
  for (const auto& e : entries) {
    EXPECT_EQ(e.record.x, 256);
    const Image t = load_image(d / "t" / e.path);
    EXPECT_EQ(t.width, 256);
    EXPECT_EQ(t.height, 256);
  }
  EXPECT_EQ(checkpoint::read_json(d / "t/result.json")["n_tiles"], 2);

  const auto r2 = cli(d, "tile --slide " + (d / "slide.png").string() + " --no-materialize --out " + (d / "u").string());
  ASSERT_EQ(r2.code, 0) << r2.err;
  EXPECT_FALSE(fs::exists(d / "u/tiles"));
  EXPECT_EQ(tiling::read_manifest(d / "u/manifest.json").size(), 2u);
}

TEST(Cli, ExtractShapesAndBitwiseRerun) {
  const fs::path d = testsupport::scratch_dir("cli_extract");
  const std::string man = (corpus() / "manifest.json").string();
  for (const auto& [kind, dim] : {std::pair<std::string, int>{"vit_small", 192}, {"cnn_b3", 1024}}) {
    for (const char* run : {"1", "2"}) {
      const auto r = cli(d, "extract --manifest " + man + " --encoder " + kind + " --stain-norm on --seed 0 --out " +
                                (d / (kind + run)).string());
      ASSERT_EQ(r.code, 0) << r.err;
    }
    const auto m = eval::read_embeddings(d / (kind + "1") / "embeddings.f32");
    EXPECT_EQ(m.rows.rows(), 4);
    EXPECT_EQ(m.rows.cols(), dim);
    EXPECT_TRUE(m.rows.allFinite());
    EXPECT_EQ(fs::file_size(d / (kind + "1") / "embeddings.f32"), 4u * dim * 4u);
    EXPECT_EQ(slurp(d / (kind + "1") / "embeddings.f32"), slurp(d / (kind + "2") / "embeddings.f32")) << kind;
    const json side = checkpoint::read_json(d / (kind + "1") / "embeddings.f32.json");
    EXPECT_EQ(side["stain_norm"], true);
    EXPECT_EQ(side["encoder"], kind + ":random");
  }
}

TEST(Cli, ExtractRejectsCheckpointOfOtherKind) {
  const fs::path d = testsupport::scratch_dir("cli_kind");
  Encoder enc = Encoder::random({EncoderKind::cnn_b3, vit::VitSpec::desk_scale()}, 1);
  enc.save(d / "cnn.bin");
  const auto r = cli(d, "extract --manifest " + (corpus() / "manifest.json").string() + " --checkpoint " +
                            (d / "cnn.bin").string() + " --encoder vit_small --out " + (d / "o").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("does not match"), std::string::npos) << r.err;
}

TEST(Cli, ProbeAndReportJoin) {
  const fs::path d = testsupport::scratch_dir("cli_report");
  // Two separable clusters written directly as embeddings.
  eval::EmbeddingMatrix m;
  m.rows.resize(40, 3);
  std::vector<int> y;
  Rng rng(5);
  for (int i = 0; i < 40; ++i) {
    const int c = i % 2;
    for (int j = 0; j < 3; ++j) m.rows(i, j) = static_cast<float>((c ? 3.0 : -3.0) * (j == 0) + rng.normal(0.0, 0.1));
    m.ids.push_back("p" + std::to_string(i));
    y.push_back(c);
  }
  m.class_labels = y;
  eval::export_embeddings(m, d / "a.f32", {{"encoder", "toy:a"}, {"stain_norm", false}});
  eval::export_embeddings(m, d / "b.f32", {{"encoder", "toy:b"}, {"stain_norm", true}});
  for (const char* n : {"a", "b"}) {
    const auto r = cli(d, std::string("probe --embeddings ") + (d / (std::string(n) + ".f32")).string() +
                              " --k 5 --folds 4 --fractions 0.5,1 --out " + (d / (std::string("p") + n)).string());
    ASSERT_EQ(r.code, 0) << r.err;
    const json rep = checkpoint::read_json(d / (std::string("p") + n) / "report.json");
    EXPECT_EQ(rep["folds"].size(), 8u);
    EXPECT_GE(rep["aggregate"]["mean"].get<double>(), 0.99);
  }
  const auto r = cli(d, "report --inputs " + (d / "pa").string() + " " + (d / "pb/report.json").string() + " --out " +
                            (d / "r").string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(d / "r/report.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "encoder,task,stain_norm,fold,fraction,auc_macro,accuracy,mse,tau");
  int rows = 0, a = 0, b = 0;
  while (std::getline(in, line)) {
    ++rows;
    a += line.rfind("toy:a,classify,off,", 0) == 0;
    b += line.rfind("toy:b,classify,on,", 0) == 0;
  }
  EXPECT_EQ(rows, 16);
  EXPECT_EQ(a, 8);
  EXPECT_EQ(b, 8);
}

TEST(Cli, MilCrossValidationFromBagManifest) {
  const fs::path d = testsupport::scratch_dir("cli_mil");
  // 20 bags of 4 rows; positive bags hold one row far along axis 0.
  eval::EmbeddingMatrix m;
  m.rows.setZero(80, 4);
  Rng rng(2);
  std::vector<eval::BagEntry> bags;
  for (int b = 0; b < 20; ++b) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) m.rows(4 * b + i, j) = static_cast<float>(rng.normal(0.0, 0.1));
      m.ids.push_back("b" + std::to_string(b) + "_" + std::to_string(i));
    }
    if (b % 2) m.rows(4 * b + 1, 0) += 3.0f;
    bags.push_back({"bag" + std::to_string(b), b % 2, {{4u * b, 4u * b + 4}}});
  }
  eval::export_embeddings(m, d / "e.f32");
  checkpoint::write_json(d / "bags.json", eval::bag_manifest_json(bags));
  const auto r = cli(d, "mil --embeddings " + (d / "e.f32").string() + " --bags " + (d / "bags.json").string() +
                            " --folds 4 --epochs 30 --set mil.lr=0.01 --out " + (d / "o").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = checkpoint::read_json(d / "o/report.json");
  EXPECT_EQ(rep["task"], "mil");
  EXPECT_EQ(rep["folds"].size(), 4u);
  EXPECT_GE(rep["aggregate"]["mean"].get<double>(), 0.9);
  EXPECT_NO_THROW(mil::load_mil(d / "o/mil_model.bin"));
}
