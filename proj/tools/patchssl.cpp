// patchssl command-line driver: one subcommand per pipeline stage.
// Every run writes resolved_config.json and result.json into its --out directory.

#include "patchssl/patchssl.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace patchssl;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool out_required = true) {
  app->add_option("--config", c.config_path, "TOML run configuration")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "Override one key, e.g. --set pretrain.lr=1e-3")->take_all();
  auto* o = app->add_option("--out", c.out, "Output directory");
  if (out_required) o->required();
}

/// Defaults < config file < command-line flags < --set overrides.
struct Run {
  std::string command;
  json cfg;
  json inputs = json::object();
  fs::path out;
  std::vector<fs::path> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  [[nodiscard]] bool deterministic() const { return cfg["deterministic"].get<bool>() || deterministic_mode(); }
};

Run begin(const std::string& command, const Common& c, const std::vector<std::pair<std::string, json>>& flags) {
  Run r;
  r.command = command;
  r.cfg = c.config_path.empty() ? config::resolve({}) : config::load(c.config_path);
  for (const auto& [key, value] : flags) config::set_value(r.cfg, key, value);
  for (const auto& o : c.overrides) config::apply_override(r.cfg, o);
  r.out = c.out;
  fs::create_directories(r.out);
  if (deterministic_mode()) r.cfg["deterministic"] = true;
  json snap{{"command", command}, {"config", r.cfg}, {"config_file", c.config_path}};
  checkpoint::write_json(r.out / "resolved_config.json", snap);
  return r;
}

/// Checks every declared output exists and is non-empty, then writes result.json.
void finish(Run& r, json result) {
  for (const auto& p : r.outputs)
    if (!fs::exists(p) || fs::file_size(p) == 0) throw Error("declared output missing or empty: " + p.string());
  result["command"] = r.command;
  result["inputs"] = r.inputs;
  result["deterministic"] = r.deterministic();
  result["outputs"] = json::array();
  for (const auto& p : r.outputs) result["outputs"].push_back(p.string());
  result["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - r.start).count();
  checkpoint::write_json(r.out / "result.json", result);
}

template <typename T>
void flag(std::vector<std::pair<std::string, json>>& f, const CLI::Option* opt, const std::string& key, const T& v) {
  if (opt->count() > 0) f.emplace_back(key, json(v));
}

bool parse_on_off(const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw Error("expected on|off, got '" + s + "'");
}

std::vector<double> parse_fractions(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(std::stod(part));
  return out;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream o(p);
  if (!o) throw Error("cannot write: " + p.string());
  o << s;
}

vit::VitSpec preset(const std::string& name) {
  if (name == "desk") return vit::VitSpec::desk_scale();
  if (name == "paper") return vit::VitSpec::paper_scale();
  throw Error("unknown encoder preset: " + name);
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

// ---------------------------------------------------------------------------

struct SynthArgs {
  Common c;
  std::uint64_t seed = 0;
  int n = 0;
  std::uint64_t first = 0;
  int bags = 0;
};

int cmd_synth(SynthArgs& a, CLI::App* app) {
  std::vector<std::pair<std::string, json>> f;
  flag(f, app->get_option("--seed"), "seed", a.seed);
  flag(f, app->get_option("--n"), "synth.n", a.n);
  flag(f, app->get_option("--first-index"), "synth.first_index", a.first);
  Run r = begin("synth", a.c, f);

  auto spec = synth::SynthSpec::two_class_default(r.cfg["seed"].get<std::uint64_t>(), r.cfg["synth"]["n"].get<int>());
  spec.patch_size = r.cfg["synth"]["patch_size"].get<int>();
  const auto densities = r.cfg["synth"]["densities"].get<std::vector<double>>();
  if (densities.size() != spec.classes.size()) throw Error("synth.densities must list one density per class");
  for (std::size_t i = 0; i < densities.size(); ++i) spec.classes[i].blob_density = densities[i];
  const auto patches = synth::make_patches(spec, r.cfg["synth"]["first_index"].get<std::uint64_t>());

  fs::create_directories(r.out / "patches");
  json manifest{{"slide_id", "synth"}, {"tile_size", spec.patch_size}, {"tissue_threshold", 0.0}, {"tiles", json::array()}};
  std::vector<int> counts(spec.classes.size(), 0);
  for (const auto& p : patches) {
    const std::string id = "synth_" + std::to_string(p.index);
    save_png(r.out / "patches" / (id + ".png"), p.image);
    manifest["tiles"].push_back({{"x", 0}, {"y", 0}, {"tissue_fraction", 1.0}, {"id", id},
                                 {"path", "patches/" + id + ".png"}, {"label", p.label}});
    ++counts[static_cast<std::size_t>(p.label)];
  }
  checkpoint::write_json(r.out / "manifest.json", manifest);
  r.outputs.push_back(r.out / "manifest.json");

  json result{{"n_patches", patches.size()}, {"class_counts", counts}};
  if (a.bags > 0) {
    synth::BagSpec bs;
    bs.n_bags = a.bags;
    bs.seed = r.cfg["seed"].get<std::uint64_t>();
    const auto bags = synth::make_bags(bs, patches);
    std::vector<eval::BagEntry> entries;
    int positive = 0;
    for (const auto& b : bags) {
      entries.push_back({b.bag_id, b.label, eval::to_ranges(b.instances)});
      positive += b.label;
    }
    checkpoint::write_json(r.out / "bags.json", eval::bag_manifest_json(entries));
    r.outputs.push_back(r.out / "bags.json");
    result["n_bags"] = bags.size();
    result["positive_bags"] = positive;
  }
  finish(r, result);
  return 0;
}

// ---------------------------------------------------------------------------

struct TileArgs {
  Common c;
  std::string slide, slide_id;
  int tile_size = 0;
  double threshold = 0;
  bool no_materialize = false;
};

int cmd_tile(TileArgs& a, CLI::App* app) {
  std::vector<std::pair<std::string, json>> f;
  flag(f, app->get_option("--tile-size"), "tile.tile_size", a.tile_size);
  flag(f, app->get_option("--tissue-threshold"), "tile.tissue_threshold", a.threshold);
  if (a.no_materialize) f.emplace_back("tile.materialize", false);
  Run r = begin("tile", a.c, f);
  r.inputs["slide"] = a.slide;

  tiling::SlideRaster slide{load_image(a.slide), a.slide_id.empty() ? fs::path(a.slide).stem().string() : a.slide_id,
                            std::nullopt};
  const int ts = r.cfg["tile"]["tile_size"].get<int>();
  const double thr = r.cfg["tile"]["tissue_threshold"].get<double>();
  const auto tiles = tiling::tessellate(slide, ts, thr);
  json manifest = tiling::manifest_json(slide, tiles, ts, thr, fs::absolute(a.slide).string());
  if (r.cfg["tile"]["materialize"].get<bool>()) {
    fs::create_directories(r.out / "tiles");
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      const std::string name = tiling::tile_name(tiles[i]) + ".png";
      save_png(r.out / "tiles" / name, tiling::crop_tile(slide, tiles[i]));
      manifest["tiles"][i]["path"] = "tiles/" + name;
    }
  }
  checkpoint::write_json(r.out / "manifest.json", manifest);
  r.outputs.push_back(r.out / "manifest.json");
  finish(r, {{"slide_id", slide.slide_id}, {"n_tiles", tiles.size()}, {"width", slide.pixels.width},
             {"height", slide.pixels.height}});
  return 0;
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
  Common c;
  std::string method, manifest;
  int epochs = 0, batch = 0;
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;
};

int cmd_pretrain(PretrainArgs& a, CLI::App* app) {
  std::vector<std::pair<std::string, json>> f;
  flag(f, app->get_option("--method"), "pretrain.method", a.method);
  flag(f, app->get_option("--epochs"), "pretrain.epochs", a.epochs);
  flag(f, app->get_option("--batch-size"), "pretrain.batch_size", a.batch);
  flag(f, app->get_option("--seed"), "seed", a.seed);
  flag(f, app->get_option("--max-steps"), "pretrain.max_steps", a.max_steps);
  Run r = begin("pretrain", a.c, f);
  r.inputs["manifest"] = a.manifest;

  const json& p = r.cfg["pretrain"];
  if (r.cfg["encoder"]["kind"] != "vit_small") throw Error("pretrain supports encoder.kind = \"vit_small\" only");
  ssl::PretrainConfig pc;
  pc.method = ssl::method_from_string(p["method"].get<std::string>());
  pc.encoder = preset(r.cfg["encoder"]["preset"].get<std::string>());
  pc.epochs = p["epochs"].get<int>();
  pc.batch_size = p["batch_size"].get<int>();
  pc.seed = r.cfg["seed"].get<std::uint64_t>();
  pc.lr = p["lr"].get<double>();
  pc.min_lr = p["min_lr"].get<double>();
  pc.weight_decay = p["weight_decay"].get<double>();
  pc.warmup_fraction = p["warmup_fraction"].get<double>();
  pc.clip_grad = p["clip_grad"].get<double>();
  pc.teacher_momentum = p["teacher_momentum"].get<double>();
  pc.center_momentum = p["center_momentum"].get<double>();
  pc.temps = {p["student_temperature"].get<double>(), p["teacher_temperature"].get<double>()};
  pc.head.prototypes = p["prototypes"].get<int>();
  pc.freeze_last_layer_epochs = p["freeze_last_layer_epochs"].get<int>();
  pc.temperature = p["temperature"].get<double>();
  pc.projection_dim = p["projection_dim"].get<int>();
  pc.checkpoint_every = p["checkpoint_every"].get<int>();
  pc.max_steps = p["max_steps"].get<std::size_t>();
  if (!(pc.temps.teacher < pc.temps.student))
    log_line("warning: teacher temperature is not below the student temperature");

  const auto entries = tiling::read_manifest(a.manifest);
  const auto corpus = tiling::load_entries(entries);
  log_line("pretrain: " + std::to_string(corpus.size()) + " patches, method " + ssl::to_string(pc.method));
  const auto res = ssl::pretrain(corpus, pc, r.out, [&](const ssl::LogRow& row) {
    if (row.step % 10 == 0) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "step %zu epoch %d loss %.5f lr %.3g teacher entropy %.3f", row.step, row.epoch,
                    row.loss, row.lr, row.teacher_entropy);
      log_line(buf);
    }
  });
  r.outputs.push_back(r.out / "train_log.csv");
  json ckpts = json::array();
  for (const auto& c : res.checkpoints) {
    r.outputs.push_back(c);
    ckpts.push_back(c.string());
  }
  finish(r, {{"steps", res.log.size()},
             {"final_loss", res.log.empty() ? json(nullptr) : json(res.log.back().loss)},
             {"checkpoints", ckpts},
             {"final_checkpoint", ckpts.empty() ? json(nullptr) : ckpts.back()}});
  return 0;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  Common c;
  std::string manifest, checkpoint, encoder, stain_norm;
  std::uint64_t seed = 0;
};

int cmd_extract(ExtractArgs& a, CLI::App* app) {
  std::vector<std::pair<std::string, json>> f;
  flag(f, app->get_option("--encoder"), "encoder.kind", a.encoder);
  if (app->get_option("--stain-norm")->count() > 0) f.emplace_back("extract.stain_norm", parse_on_off(a.stain_norm));
  flag(f, app->get_option("--seed"), "seed", a.seed);
  Run r = begin("extract", a.c, f);
  r.inputs["manifest"] = a.manifest;
  r.inputs["checkpoint"] = a.checkpoint;

  const auto kind = encoder_kind_from_string(r.cfg["encoder"]["kind"].get<std::string>());
  Encoder enc;
  std::string origin = "random";
  if (!a.checkpoint.empty()) {
    enc = Encoder::load(a.checkpoint);
    if (enc.spec.kind != kind)
      throw Error("checkpoint encoder kind '" + to_string(enc.spec.kind) + "' does not match requested '" +
                  to_string(kind) + "'");
    const auto side = checkpoint::read_json(checkpoint::sidecar_path(a.checkpoint));
    origin = side.value("method", std::string("checkpoint"));
  } else {
    enc = Encoder::random({kind, preset(r.cfg["encoder"]["preset"].get<std::string>())}, r.cfg["seed"].get<std::uint64_t>());
  }
  const bool sn = r.cfg["extract"]["stain_norm"].get<bool>();
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, r.cfg["extract"]["chunk"].get<int>()));

  const auto entries = tiling::read_manifest(a.manifest);
  if (entries.empty()) throw Error("manifest lists no tiles: " + a.manifest);
  eval::EmbeddingMatrix m;
  m.rows.resize(static_cast<Eigen::Index>(entries.size()), enc.embed_dim());
  std::size_t fallbacks = 0;
  const stain::StainProfile ref = stain::reference_profile();
  for (std::size_t s = 0; s < entries.size(); s += chunk) {
    const std::vector<tiling::ManifestEntry> part(entries.begin() + static_cast<std::ptrdiff_t>(s),
                                                  entries.begin() + static_cast<std::ptrdiff_t>(std::min(entries.size(), s + chunk)));
    auto imgs = tiling::load_entries(part);
    if (sn)
      for (auto& im : imgs) {
        try {
          im = stain::normalize(im, stain::fit_stain_profile(im), ref);
        } catch (const Error&) {
          ++fallbacks;  // unstained or single-stain tile: kept as is
        }
      }
    m.rows.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(imgs.size())) = enc.embed(imgs);
  }
  bool labelled = true;
  std::vector<int> labels;
  for (const auto& e : entries) {
    m.ids.push_back(e.id);
    labelled = labelled && e.label.has_value();
    if (e.label) labels.push_back(*e.label);
  }
  if (labelled) m.class_labels = labels;
  if (fallbacks > 0) log_line("warning: stain normalization skipped for " + std::to_string(fallbacks) + " tiles");

  const std::string name = to_string(kind) + ":" + origin;
  eval::export_embeddings(m, r.out / "embeddings.f32",
                          {{"encoder", name}, {"encoder_spec", to_json(enc.spec)}, {"stain_norm", sn},
                           {"checkpoint", a.checkpoint}, {"manifest", a.manifest}});
  r.outputs.push_back(r.out / "embeddings.f32");
  r.outputs.push_back(r.out / "embeddings.f32.json");
  finish(r, {{"n", m.size()}, {"d", m.rows.cols()}, {"encoder", name}, {"stain_norm", sn},
             {"stain_norm_fallbacks", fallbacks}});
  return 0;
}

// ---------------------------------------------------------------------------

/// Encoder name and stain flag recorded by extract, if present.
std::pair<std::string, bool> provenance(const fs::path& embeddings) {
  const auto side = checkpoint::read_json(checkpoint::sidecar_path(embeddings));
  return {side.value("encoder", std::string("unknown")), side.value("stain_norm", false)};
}

json with_fraction_summary(const eval::ProbeReport& rep) {
  json j = eval::to_json(rep);
  std::map<double, std::vector<double>> by;
  for (const auto& f : rep.folds) by[f.fraction].push_back(rep.task == eval::Task::regress ? f.mse : f.auc_macro);
  j["by_fraction"] = json::array();
  for (const auto& [fr, v] : by) {
    const auto ms = eval::mean_std(v);
    j["by_fraction"].push_back({{"fraction", fr}, {"mean", eval::finite_or_null(ms.mean)}, {"std", eval::finite_or_null(ms.std)}});
  }
  return j;
}

struct MilArgs {
  Common c;
  std::string embeddings, bags, fractions;
  int folds = 0, epochs = 0;
  std::uint64_t seed = 0;
};

int cmd_mil(MilArgs& a, CLI::App* app) {
  std::vector<std::pair<std::string, json>> f;
  flag(f, app->get_option("--folds"), "mil.folds", a.folds);
  flag(f, app->get_option("--epochs"), "mil.epochs", a.epochs);
  flag(f, app->get_option("--seed"), "seed", a.seed);
  if (!a.fractions.empty()) f.emplace_back("mil.fractions", parse_fractions(a.fractions));
  Run r = begin("mil", a.c, f);
  r.inputs["embeddings"] = a.embeddings;
  r.inputs["bags"] = a.bags;

  const auto m = eval::read_embeddings(a.embeddings);
  const auto bags = eval::assemble_bags(m, eval::parse_bag_manifest(checkpoint::read_json(a.bags)));
  const json& mc = r.cfg["mil"];
  eval::MilCvConfig cv;
  cv.folds = mc["folds"].get<int>();
  cv.seed = r.cfg["seed"].get<std::uint64_t>();
  cv.train.epochs = mc["epochs"].get<int>();
  cv.train.lr = mc["lr"].get<double>();
  cv.train.weight_decay = mc["weight_decay"].get<double>();
  cv.train.seed = cv.seed;
  cv.train.spec = {static_cast<int>(m.rows.cols()), mc["projected_dim"].get<int>(), mc["attention_dim"].get<int>(), 2};

  const auto [encoder, sn] = provenance(a.embeddings);
  eval::ProbeReport all{eval::Task::mil, encoder, sn, 0, {}};
  for (double fr : mc["fractions"].get<std::vector<double>>()) {
    cv.fraction = fr;
    const auto rep = eval::run_mil_cv(bags, cv);
    all.folds.insert(all.folds.end(), rep.folds.begin(), rep.folds.end());
    log_line("mil: fraction " + std::to_string(fr) + " mean AUC " + std::to_string(rep.aggregate().mean));
  }
  checkpoint::write_json(r.out / "report.json", with_fraction_summary(all));
  write_text(r.out / "report.csv", eval::to_csv(all));

  // Final model on every bag, for deployment and attention inspection.
  auto final_model = mil::train_mil<double>(bags, cv.train);
  auto params = final_model.params;
  mil::MilParams<float> pf;
  pf.spec = params.spec;
  nn::cast_into<float>(params, pf);
  mil::save_mil(r.out / "mil_model.bin", pf);
  for (const auto& p : {r.out / "report.json", r.out / "report.csv", r.out / "mil_model.bin"}) r.outputs.push_back(p);
  finish(r, {{"n_bags", bags.size()}, {"aggregate", with_fraction_summary(all)["by_fraction"]}});
  return 0;
}

// ---------------------------------------------------------------------------

struct ProbeArgs {
  Common c;
  std::string embeddings, eval_embeddings, task, fractions;
  int k = 0, folds = 0;
  std::uint64_t seed = 0;
};

int cmd_probe(ProbeArgs& a, CLI::App* app) {
  std::vector<std::pair<std::string, json>> f;
  flag(f, app->get_option("--task"), "probe.task", a.task);
  flag(f, app->get_option("--k"), "probe.k", a.k);
  flag(f, app->get_option("--folds"), "probe.folds", a.folds);
  flag(f, app->get_option("--seed"), "seed", a.seed);
  if (!a.fractions.empty()) f.emplace_back("probe.fractions", parse_fractions(a.fractions));
  Run r = begin("probe", a.c, f);
  r.inputs["embeddings"] = a.embeddings;
  r.inputs["eval_embeddings"] = a.eval_embeddings;

  const auto task = eval::task_from_string(r.cfg["probe"]["task"].get<std::string>());
  const int k = r.cfg["probe"]["k"].get<int>();
  const auto [encoder, sn] = provenance(a.embeddings);
  eval::ProbeReport all{task, encoder, sn, k, {}};
  auto m = eval::read_embeddings(a.embeddings);
  if (!a.eval_embeddings.empty()) {
    // Fixed split: every row of --embeddings trains, every row of --eval-embeddings is scored.
    const auto e = eval::read_embeddings(a.eval_embeddings);
    require(e.rows.cols() == m.rows.cols(), "probe: embedding dimensions differ");
    eval::EmbeddingMatrix joined;
    joined.rows.resize(m.rows.rows() + e.rows.rows(), m.rows.cols());
    joined.rows << m.rows, e.rows;
    joined.ids = m.ids;
    joined.ids.insert(joined.ids.end(), e.ids.begin(), e.ids.end());
    if (m.class_labels && e.class_labels) {
      joined.class_labels = *m.class_labels;
      joined.class_labels->insert(joined.class_labels->end(), e.class_labels->begin(), e.class_labels->end());
    }
    if (m.targets && e.targets) {
      joined.targets = *m.targets;
      joined.targets->insert(joined.targets->end(), e.targets->begin(), e.targets->end());
    }
    eval::Split split;
    for (std::size_t i = 0; i < m.size(); ++i) split.train.push_back(i);
    for (std::size_t i = 0; i < e.size(); ++i) split.test.push_back(m.size() + i);
    const auto rep = eval::run_patch_probe(joined, split, task, k);
    all.folds = rep.folds;
  } else {
    require(m.class_labels.has_value() || task == eval::Task::regress, "probe: embeddings carry no labels");
    std::vector<int> strata = m.class_labels ? *m.class_labels : std::vector<int>(m.size(), 0);
    for (double fr : r.cfg["probe"]["fractions"].get<std::vector<double>>()) {
      const auto plan = eval::make_cv_plan(m.ids, strata, r.cfg["probe"]["folds"].get<int>(), fr,
                                           r.cfg["seed"].get<std::uint64_t>());
      const auto rep = eval::run_patch_probe(m, plan, task, k);
      all.folds.insert(all.folds.end(), rep.folds.begin(), rep.folds.end());
    }
  }
  const json j = with_fraction_summary(all);
  checkpoint::write_json(r.out / "report.json", j);
  write_text(r.out / "report.csv", eval::to_csv(all));
  r.outputs.push_back(r.out / "report.json");
  r.outputs.push_back(r.out / "report.csv");
  finish(r, {{"task", eval::to_string(task)}, {"aggregate", j["aggregate"]}, {"by_fraction", j["by_fraction"]}});
  return 0;
}

// ---------------------------------------------------------------------------

struct VizArgs {
  Common c;
  std::string checkpoint, patch;
  int head = -1, layer = 0;
  double threshold = 0;
};

int cmd_viz(VizArgs& a, CLI::App* app) {
  std::vector<std::pair<std::string, json>> f;
  flag(f, app->get_option("--threshold"), "viz.threshold", a.threshold);
  flag(f, app->get_option("--layer"), "viz.layer", a.layer);
  Run r = begin("viz", a.c, f);
  r.inputs["checkpoint"] = a.checkpoint;
  r.inputs["patch"] = a.patch;

  const Encoder enc = Encoder::load(a.checkpoint);
  if (!enc.vit_params) throw Error("viz needs a ViT checkpoint");
  const Image patch = load_image(a.patch);
  const double thr = r.cfg["viz"]["threshold"].get<double>();
  const auto maps = vizattn::extract_cls_attention(*enc.vit_params, patch, r.cfg["viz"]["layer"].get<int>(), enc.normalization);
  if (a.head >= static_cast<int>(maps.size())) throw Error("head out of range: " + std::to_string(a.head));
  const std::string stem = fs::path(a.patch).stem().string();
  json heads = json::array();
  for (const auto& m : maps) {
    if (a.head >= 0 && m.head_index != a.head) continue;
    const auto ov = vizattn::threshold_overlay(m, patch, thr);
    if (ov.constant_map) log_line("warning: head " + std::to_string(m.head_index) + " map is constant; nothing tinted");
    const fs::path p = r.out / (stem + "_" + std::to_string(m.layer) + "_" + std::to_string(m.head_index) + ".png");
    save_png(p, ov.image);
    r.outputs.push_back(p);
    heads.push_back({{"head", m.head_index}, {"layer", m.layer}, {"cls_self", m.cls_self}, {"patch_mass", m.grid.sum()},
                     {"tinted_tokens", ov.tinted_tokens}, {"constant_map", ov.constant_map}, {"file", p.string()}});
  }
  if (a.head < 0) {
    const fs::path panel = r.out / (stem + "_panel.png");
    save_png(panel, vizattn::render_head_panel(patch, *enc.vit_params, thr, r.cfg["viz"]["layer"].get<int>(), enc.normalization));
    r.outputs.push_back(panel);
  }
  finish(r, {{"threshold", thr}, {"heads", heads}});
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  Common c;
  std::vector<std::string> inputs;
};

std::string csv_cell(const json& v) {
  if (v.is_null()) return "nan";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "on" : "off";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v.get<double>());
  return buf;
}

int cmd_report(ReportArgs& a, CLI::App*) {
  Run r = begin("report", a.c, {});
  std::vector<fs::path> reports;
  for (const auto& in : a.inputs) {
    if (fs::is_regular_file(in)) {
      reports.emplace_back(in);
    } else if (fs::is_directory(in)) {
      for (const auto& e : fs::recursive_directory_iterator(in))
        if (e.is_regular_file() && e.path().filename() == "report.json") reports.push_back(e.path());
    } else {
      throw Error("report input not found: " + in);
    }
  }
  std::sort(reports.begin(), reports.end());
  if (reports.empty()) throw Error("no report.json files found");
  r.inputs["reports"] = json::array();
  std::string csv = eval::kReportCsvHeader;
  std::size_t rows = 0;
  for (const auto& p : reports) {
    const json j = checkpoint::read_json(p);
    r.inputs["reports"].push_back(p.string());
    for (const auto& fj : j.at("folds")) {
      csv += csv_cell(j["encoder"]) + "," + csv_cell(j["task"]) + "," + csv_cell(j["stain_norm"]) + "," +
             std::to_string(fj["fold"].get<int>()) + "," + csv_cell(fj["fraction"]) + "," +
             csv_cell(fj.value("auc_macro", json())) + "," + csv_cell(fj.value("accuracy", json())) + "," +
             csv_cell(fj.value("mse", json())) + "," + csv_cell(fj.value("tau", json())) + "\n";
      ++rows;
    }
  }
  write_text(r.out / "report.csv", csv);
  r.outputs.push_back(r.out / "report.csv");
  finish(r, {{"rows", rows}, {"reports", reports.size()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised patch encoders, attention MIL and evaluation for histopathology"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic two-class patch corpus");
  add_common(synth_cmd, sa.c);
  synth_cmd->add_option("--seed", sa.seed);
  synth_cmd->add_option("--n", sa.n, "Number of patches");
  synth_cmd->add_option("--first-index", sa.first);
  synth_cmd->add_option("--bags", sa.bags, "Also write a bag manifest with this many bags");

  TileArgs ta;
  auto* tile_cmd = app.add_subcommand("tile", "Tissue-mask and tessellate a slide raster");
  add_common(tile_cmd, ta.c);
  tile_cmd->add_option("--slide", ta.slide)->required()->check(CLI::ExistingFile);
  tile_cmd->add_option("--slide-id", ta.slide_id);
  tile_cmd->add_option("--tile-size", ta.tile_size);
  tile_cmd->add_option("--tissue-threshold", ta.threshold);
  tile_cmd->add_flag("--no-materialize", ta.no_materialize, "Record coordinates only");

  PretrainArgs pa;
  auto* pre_cmd = app.add_subcommand("pretrain", "Self-supervised pretraining (dino or simclr)");
  add_common(pre_cmd, pa.c);
  pre_cmd->add_option("--method", pa.method)->check(CLI::IsMember({"dino", "simclr"}));
  pre_cmd->add_option("--manifest", pa.manifest)->required()->check(CLI::ExistingFile);
  pre_cmd->add_option("--epochs", pa.epochs);
  pre_cmd->add_option("--batch-size", pa.batch);
  pre_cmd->add_option("--seed", pa.seed);
  pre_cmd->add_option("--max-steps", pa.max_steps);

  ExtractArgs ea;
  auto* ext_cmd = app.add_subcommand("extract", "Embed every manifest tile with a frozen encoder");
  add_common(ext_cmd, ea.c);
  ext_cmd->add_option("--manifest", ea.manifest)->required()->check(CLI::ExistingFile);
  ext_cmd->add_option("--checkpoint", ea.checkpoint, "Encoder checkpoint; random init when omitted")->check(CLI::ExistingFile);
  ext_cmd->add_option("--encoder", ea.encoder)->check(CLI::IsMember({"vit_small", "cnn_b3"}));
  ext_cmd->add_option("--stain-norm", ea.stain_norm)->check(CLI::IsMember({"on", "off"}));
  ext_cmd->add_option("--seed", ea.seed);

  MilArgs ma;
  auto* mil_cmd = app.add_subcommand("mil", "Cross-validated attention MIL over bags of embeddings");
  add_common(mil_cmd, ma.c);
  mil_cmd->add_option("--embeddings", ma.embeddings)->required()->check(CLI::ExistingFile);
  mil_cmd->add_option("--bags", ma.bags, "Bag manifest JSON")->required()->check(CLI::ExistingFile);
  mil_cmd->add_option("--folds", ma.folds);
  mil_cmd->add_option("--epochs", ma.epochs);
  mil_cmd->add_option("--fractions", ma.fractions, "Comma-separated training fractions");
  mil_cmd->add_option("--seed", ma.seed);

  ProbeArgs pr;
  auto* probe_cmd = app.add_subcommand("probe", "KNN probe with stratified CV or a fixed split");
  add_common(probe_cmd, pr.c);
  probe_cmd->add_option("--embeddings", pr.embeddings)->required()->check(CLI::ExistingFile);
  probe_cmd->add_option("--eval-embeddings", pr.eval_embeddings, "Held-out rows for a fixed split")->check(CLI::ExistingFile);
  probe_cmd->add_option("--task", pr.task)->check(CLI::IsMember({"classify", "regress"}));
  probe_cmd->add_option("--k", pr.k);
  probe_cmd->add_option("--folds", pr.folds);
  probe_cmd->add_option("--fractions", pr.fractions, "Comma-separated training fractions");
  probe_cmd->add_option("--seed", pr.seed);

  VizArgs va;
  auto* viz_cmd = app.add_subcommand("viz", "Per-head CLS attention overlays for one patch");
  add_common(viz_cmd, va.c);
  viz_cmd->add_option("--checkpoint", va.checkpoint)->required()->check(CLI::ExistingFile);
  viz_cmd->add_option("--patch", va.patch)->required()->check(CLI::ExistingFile);
  viz_cmd->add_option("--head", va.head, "Single head (default: all)");
  viz_cmd->add_option("--threshold", va.threshold);
  viz_cmd->add_option("--layer", va.layer);

  ReportArgs ra;
  auto* report_cmd = app.add_subcommand("report", "Merge probe/mil report.json files into one CSV");
  add_common(report_cmd, ra.c);
  report_cmd->add_option("--inputs", ra.inputs, "Report files or directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth_cmd) return cmd_synth(sa, synth_cmd);
    if (*tile_cmd) return cmd_tile(ta, tile_cmd);
    if (*pre_cmd) return cmd_pretrain(pa, pre_cmd);
    if (*ext_cmd) return cmd_extract(ea, ext_cmd);
    if (*mil_cmd) return cmd_mil(ma, mil_cmd);
    if (*probe_cmd) return cmd_probe(pr, probe_cmd);
    if (*viz_cmd) return cmd_viz(va, viz_cmd);
    if (*report_cmd) return cmd_report(ra, report_cmd);
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitRuntime;
  }
  return kExitRuntime;
}
