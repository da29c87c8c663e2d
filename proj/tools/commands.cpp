#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "zsseg/concepts.hpp"
#include "zsseg/error.hpp"
#include "zsseg/eval.hpp"
#include "zsseg/pca.hpp"
#include "zsseg/synth.hpp"
#include "zsseg/trainer.hpp"

namespace zsseg::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string manifest_path(const RunConfig& c) {
  return c.empty("manifest") ? (fs::path(c.str("data-dir")) / "manifest.jsonl").string() : c.str("manifest");
}

std::string classes_path(const RunConfig& c) {
  return c.empty("classes") ? (fs::path(manifest_path(c)).parent_path() / "classes.txt").string() : c.str("classes");
}

std::string checkpoint_path(const RunConfig& c) {
  return c.empty("checkpoint") ? (fs::path(c.str("out")) / "model.szck").string() : c.str("checkpoint");
}

std::string vocab_path(const RunConfig& c) {
  return c.empty("vocab") ? (fs::path(checkpoint_path(c)).parent_path() / "vocab.bpe").string() : c.str("vocab");
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void require_file(const std::string& key, const std::string& path) {
  if (path.empty()) throw ParameterError("--" + key + " is required");
  if (!fs::exists(path)) throw IoError(key + ": no such file " + path);
}

void write_json(const std::string& path, const json& j) {
  ensure_dir(fs::path(path).parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing " + path);
}

VisionProvider make_provider(const RunConfig& c) {
  const auto& kind = c.str("provider");
  if (kind == "handcrafted") return HandcraftedFeaturizer{c.size("patch-size"), c.size("feature-dim")};
  if (kind == "tinyvit") {
    if (!c.empty("vit-weights")) {
      require_file("vit-weights", c.str("vit-weights"));
      return TinyFrozenVit::load(c.str("vit-weights"));
    }
    TinyVitConfig vc;
    vc.patch_size = c.size("patch-size");
    vc.width = c.size("vit-width");
    vc.layers = c.size("vit-layers");
    return TinyFrozenVit::init(vc, c.u64("seed"));
  }
  if (kind == "precomputed") {
    require_file("features", c.str("features"));
    return PrecomputedFeatures::load(c.str("features"));
  }
  throw ParameterError("provider: expected handcrafted, tinyvit or precomputed, got '" + kind + "'");
}

SceneSpec scene_spec(const RunConfig& c) {
  SceneSpec spec = SceneSpec::defaults();
  spec.height = spec.width = c.size("image-size");
  spec.min_objects = c.size("min-objects");
  spec.max_objects = c.size("max-objects");
  spec.noise = c.real("noise");
  spec.compound_classes = c.flag("compound-classes");
  spec.seed = c.u64("seed");
  spec.validate();
  return spec;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.epochs = c.size("epochs");
  t.batch_size = c.size("batch-size");
  t.lr = c.real("lr");
  t.warmup_fraction = c.real("warmup");
  t.weight_decay = c.real("weight-decay");
  t.beta1 = c.real("beta1");
  t.beta2 = c.real("beta2");
  t.eps = c.real("eps");
  t.seed = c.u64("seed");
  t.loss.lambda = static_cast<Real>(c.real("lambda"));
  t.loss.tau = static_cast<Real>(c.real("tau"));
  t.checkpoint_every = c.size("checkpoint-every");
  t.clip_norm = c.real("clip-norm");
  t.validate();
  return t;
}

std::vector<ManifestEntry> split_entries(const RunConfig& c, const std::string& split) {
  const auto path = manifest_path(c);
  require_file("manifest", path);
  auto entries = filter_split(load_manifest(path), split);
  if (entries.empty()) throw InputError("manifest " + path + " has no '" + split + "' entries");
  return entries;
}

std::vector<std::string> class_names(const RunConfig& c) {
  const auto path = classes_path(c);
  require_file("classes", path);
  auto names = load_lines(path);
  if (names.empty()) throw InputError("class file " + path + " is empty");
  return names;
}

std::vector<std::string> templates(const RunConfig& c) {
  require_file("templates", c.str("templates"));
  auto t = load_lines(c.str("templates"));
  if (t.empty()) throw InputError("template file " + c.str("templates") + " is empty");
  return t;
}

struct TrainedModel {
  Model model;
  BpeVocab vocab;
};

TrainedModel load_model(const RunConfig& c) {
  require_file("checkpoint", checkpoint_path(c));
  require_file("vocab", vocab_path(c));
  return {load_checkpoint(checkpoint_path(c)).model, BpeVocab::load(vocab_path(c))};
}

// Theta: nullopt for evaluation without background, NaN to request a sweep.
std::optional<double> parse_theta(const RunConfig& c) {
  const auto& s = c.str("theta");
  if (s == "none") return std::nullopt;
  if (s == "sweep") return std::numeric_limits<double>::quiet_NaN();
  const double t = c.real("theta");
  if (t < -1.0 || t > 1.0) throw ParameterError("theta must lie in [-1, 1], got " + s);
  return t;
}

json report_json(const MiouReport& r, const std::vector<std::string>& names) {
  json per_class = json::array();
  for (std::size_t i = 0; i < r.iou.size(); ++i) {
    json e;
    e["name"] = i < names.size() ? names[i] : std::string("background");
    e["iou"] = r.iou[i] ? json(*r.iou[i]) : json(nullptr);
    e["intersection"] = r.intersection[i];
    e["union"] = r.union_[i];
    e["gt_pixels"] = r.gt_pixels[i];
    per_class.push_back(std::move(e));
  }
  json j;
  j["miou"] = r.mean;
  j["per_class"] = std::move(per_class);
  j["ignored_pixels"] = r.ignored;
  return j;
}

// The single foreground class of a mask, or nullopt when it has zero or
// several.
std::optional<std::size_t> single_class(const LabelMap& mask) {
  std::set<std::uint16_t> present;
  for (auto v : mask.labels)
    if (v != 0) present.insert(v);
  if (present.size() != 1) return std::nullopt;
  return static_cast<std::size_t>(*present.begin() - 1);
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoul(item, &used);
      if (used != item.size() || v == 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ParameterError(key + ": expected positive integers separated by commas, got '" + text + "'");
    }
  }
  if (out.empty()) throw ParameterError(key + " is empty");
  return out;
}

}  // namespace

void cmd_synth(const RunConfig& c, std::ostream& out) {
  const SceneSpec spec = scene_spec(c);
  const auto entries = generate_dataset(spec, c.size("n-train"), c.size("n-val"), c.size("n-test"), c.str("data-dir"));
  json j;
  j["command"] = "synth";
  j["config"] = c.to_json();
  j["scenes"] = entries.size();
  j["classes"] = spec.class_names();
  write_json((fs::path(c.str("data-dir")) / "synth.json").string(), j);
  out << j.dump() << '\n';
}

void cmd_train(const RunConfig& c, std::ostream& out) {
  const TrainConfig tcfg = train_config(c);
  const auto entries = split_entries(c, "train");
  const auto lexicon = PosLexicon::load(c.str("lexicon"));
  const auto bank = ConceptBank::load(c.str("bank"));
  const VisionProvider provider = make_provider(c);
  const bool resume = c.flag("resume");
  ensure_dir(c.str("out"));

  BpeVocab vocab;
  if (resume) {
    require_file("vocab", vocab_path(c));
    vocab = BpeVocab::load(vocab_path(c));
  } else {
    // Prompt templates and class names join the corpus so that inference
    // text is covered by the learned merges.
    std::vector<std::string> corpus;
    for (const auto& e : entries) corpus.push_back(e.caption);
    for (const auto& t : templates(c)) corpus.push_back(t);
    for (const auto& n : class_names(c)) corpus.push_back(n);
    vocab = train_bpe(corpus, c.size("merges"));
  }

  ExtractOptions extract;
  extract.fold_plurals = c.flag("fold-plurals");
  std::vector<TrainExample> examples;
  examples.reserve(entries.size());
  std::size_t concepts = 0;
  for (const auto& e : entries) {
    examples.push_back({e.id, read_ppm(e.image_path), extract_concepts(vocab, lexicon, bank, e.caption, extract)});
    concepts += examples.back().caption.concepts.size();
  }

  TrainState state;
  if (resume) {
    require_file("checkpoint", checkpoint_path(c));
    state = load_checkpoint(checkpoint_path(c));
  } else {
    TextEncoderConfig tc;
    tc.vocab_size = vocab.size();
    tc.width = c.size("text-width");
    tc.layers = c.size("text-layers");
    tc.heads = c.size("text-heads");
    tc.context = c.size("context");
    state = TrainState::init(Model::init(tc, vision_dim(provider), tcfg.seed), tcfg.seed);
  }

  const fs::path out_dir = c.str("out");
  std::ofstream metrics(out_dir / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + (out_dir / "metrics.jsonl").string());
  StepMetrics last;
  TrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) {
    metrics << to_json_line(m) << '\n';
    last = m;
  };
  const std::size_t total = steps_per_epoch(examples.size(), tcfg.batch_size) * tcfg.epochs;
  hooks.on_checkpoint = [&](const TrainState& s) {
    if (s.step < total) save_checkpoint(s, (out_dir / ("ckpt-" + std::to_string(s.step) + ".szck")).string());
  };
  const std::size_t start = state.step;
  train(state, examples, tcfg, provider, hooks);
  save_checkpoint(state, checkpoint_path(c));
  vocab.save(vocab_path(c));

  json j;
  j["command"] = "train";
  j["config"] = c.to_json();
  j["examples"] = examples.size();
  j["concepts_per_caption"] = static_cast<double>(concepts) / static_cast<double>(examples.size());
  j["vocab_size"] = vocab.size();
  j["steps_run"] = state.step - start;
  j["total_steps"] = total;
  j["final"] = {{"loss_g", last.loss_g}, {"loss_l", last.loss_l}, {"loss_tot", last.loss_tot}};
  j["checkpoint"] = checkpoint_path(c);
  write_json((out_dir / "train.json").string(), j);
  out << j.dump() << '\n';
}

void cmd_eval_seg(const RunConfig& c, std::ostream& out) {
  const auto names = class_names(c);
  const std::size_t C = names.size();
  const auto entries = split_entries(c, c.str("split"));
  std::optional<double> theta = parse_theta(c);
  const bool with_background = theta.has_value();
  const fs::path out_dir = c.str("out");
  const bool overlays = c.flag("overlays");
  if (overlays) ensure_dir(out_dir / "seg");

  json j;
  j["command"] = "eval-seg";
  j["config"] = c.to_json();
  j["split"] = c.str("split");
  j["images"] = entries.size();
  j["mode"] = with_background ? "with_background" : "without_background";
  MiouAccumulator acc(with_background ? C + 1 : C, kIgnoreLabel);
  auto label_names = names;
  if (with_background) label_names.push_back("background");

  if (!c.empty("predictions")) {
    // Stored predictions use the dataset mask encoding (0 = background).
    if (theta && std::isnan(*theta)) throw ParameterError("theta = sweep needs model scores; use none or a value");
    for (const auto& e : entries) {
      const auto path = (fs::path(c.str("predictions")) / (e.id + ".pgm")).string();
      require_file("predictions", path);
      acc.add(evaluation_target(read_pgm(path), C, true), evaluation_target(read_pgm(e.mask_path), C, with_background));
    }
    j["source"] = "predictions";
    j["theta"] = nullptr;
  } else {
    const auto trained = load_model(c);
    const VisionProvider provider = make_provider(c);
    const auto classes = embed_classes(trained.model.text, trained.vocab, trained.model.proj, names, templates(c));
    const SegmentOptions opts{c.size("shorter-side"), c.size("window"), c.size("stride")};
    if (theta && std::isnan(*theta)) {
      std::vector<SegmentationResult> results;
      std::vector<LabelMap> masks;
      for (const auto& e : split_entries(c, c.str("val-split"))) {
        results.push_back(segment(provider, classes, read_ppm(e.image_path), opts, e.id));
        masks.push_back(read_pgm(e.mask_path));
      }
      const auto grid = default_theta_grid();
      const auto sweep = sweep_threshold(results, masks, grid);
      theta = sweep.best_theta;
      j["sweep"] = {{"split", c.str("val-split")}, {"thetas", sweep.thetas}, {"miou", sweep.mious},
                    {"best_theta", sweep.best_theta}, {"best_miou", sweep.best_miou}};
    }
    for (const auto& e : entries) {
      const Image image = read_ppm(e.image_path);
      auto result = segment(provider, classes, image, opts, e.id);
      if (theta) result = apply_background(result, *theta);
      acc.add(result.labels, evaluation_target(read_pgm(e.mask_path), C, with_background));
      if (overlays) {
        write_pgm((out_dir / "seg" / (e.id + ".pgm")).string(), result.labels);
        write_ppm((out_dir / "seg" / (e.id + ".ppm")).string(), overlay(image, result.labels, C));
      }
    }
    j["source"] = "model";
    j["theta"] = theta ? json(*theta) : json(nullptr);
    if (!classes.warnings.empty()) j["warnings"] = classes.warnings;
  }
  const json rep = report_json(acc.report(), label_names);
  for (const auto& [k, v] : rep.items()) j[k] = v;
  const auto path = c.empty("output") ? (out_dir / ("eval-seg-" + c.str("split") + ".json")).string() : c.str("output");
  write_json(path, j);
  out << j.dump() << '\n';
}

void cmd_eval_cls(const RunConfig& c, std::ostream& out) {
  const auto names = class_names(c);
  const auto entries = split_entries(c, c.str("split"));
  const auto trained = load_model(c);
  const VisionProvider provider = make_provider(c);
  const auto classes = embed_classes(trained.model.text, trained.vocab, trained.model.proj, names, templates(c));

  std::vector<std::size_t> seen(names.size(), 0), right(names.size(), 0);
  std::size_t total = 0, correct = 0;
  for (const auto& e : entries) {
    const auto truth = single_class(read_pgm(e.mask_path));
    if (!truth) continue;
    if (*truth >= names.size()) throw InputError("mask class " + std::to_string(*truth) + " exceeds the class file");
    const auto pred = classify(provider, classes, read_ppm(e.image_path), e.id);
    ++total;
    ++seen[*truth];
    if (pred.label == *truth) {
      ++correct;
      ++right[*truth];
    }
  }
  if (total == 0) throw InputError("split '" + c.str("split") + "' has no single-object scenes");
  json per_class = json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    per_class.push_back({{"name", names[i]},
                         {"images", seen[i]},
                         {"accuracy", seen[i] ? json(static_cast<double>(right[i]) / static_cast<double>(seen[i]))
                                              : json(nullptr)}});
  }
  json j;
  j["command"] = "eval-cls";
  j["config"] = c.to_json();
  j["split"] = c.str("split");
  j["images"] = total;
  j["correct"] = correct;
  j["accuracy"] = static_cast<double>(correct) / static_cast<double>(total);
  j["chance"] = 1.0 / static_cast<double>(names.size());
  j["per_class"] = std::move(per_class);
  const auto path =
      c.empty("output") ? (fs::path(c.str("out")) / ("eval-cls-" + c.str("split") + ".json")).string() : c.str("output");
  write_json(path, j);
  out << j.dump() << '\n';
}

void cmd_concepts(const RunConfig& c, std::ostream& out) {
  require_file("input", c.str("input"));
  std::vector<std::string> captions;
  {
    std::ifstream is(c.str("input"), std::ios::binary);
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      captions.push_back(line);
    }
  }
  const auto lexicon = PosLexicon::load(c.str("lexicon"));
  const auto bank = ConceptBank::load(c.str("bank"));
  BpeVocab vocab;
  if (!c.empty("vocab")) {
    require_file("vocab", c.str("vocab"));
    vocab = BpeVocab::load(c.str("vocab"));
  } else {
    if (captions.empty()) throw InputError("no captions in " + c.str("input"));
    vocab = train_bpe(captions, c.size("merges"));
  }
  ExtractOptions extract;
  extract.fold_plurals = c.flag("fold-plurals");

  std::ostringstream lines;
  for (const auto& caption : captions) {
    const auto tok = extract_concepts(vocab, lexicon, bank, caption, extract);
    json concepts = json::array();
    for (const auto& occ : tok.concepts) {
      concepts.push_back({{"concept", occ.text},
                          {"id", occ.concept_id},
                          {"span", {occ.word_spans.front().begin, occ.word_spans.back().end}},
                          {"tokens", occ.token_indices}});
    }
    json rec;
    rec["caption"] = caption;
    rec["concepts"] = std::move(concepts);
    lines << rec.dump() << '\n';
  }
  if (c.empty("output")) {
    out << lines.str();
    return;
  }
  ensure_dir(fs::path(c.str("output")).parent_path());
  std::ofstream os(c.str("output"), std::ios::binary);
  if (!os) throw IoError("cannot write " + c.str("output"));
  os << lines.str();
  // JSON Lines records stay plain; the configuration goes to a sidecar.
  json meta;
  meta["command"] = "concepts";
  meta["config"] = c.to_json();
  meta["captions"] = captions.size();
  write_json(c.str("output") + ".config.json", meta);
}

void cmd_visualize(const RunConfig& c, std::ostream& out) {
  require_file("input", c.str("input"));
  const VisionProvider provider = make_provider(c);
  if (std::holds_alternative<PrecomputedFeatures>(provider)) {
    throw ParameterError("visualize needs a provider that can encode arbitrary resolutions");
  }
  const Image image = read_ppm(c.str("input"));
  const fs::path out_dir = c.str("out");
  ensure_dir(out_dir);
  const std::string stem = fs::path(c.str("input")).stem().string();
  json outputs = json::array();
  for (std::size_t side : parse_sizes("resolutions", c.str("resolutions"))) {
    const auto [h, w] = resized_dims(image.height, image.width, side);
    const VisionRepr repr = encode_image(provider, resize_bilinear(image, h, w));
    const Pca3 pca = pca3(repr.dense);
    const auto path = (out_dir / (stem + "-pca-" + std::to_string(side) + ".ppm")).string();
    write_ppm(path, pca_to_rgb(pca, repr.grid_rows, repr.grid_cols, c.size("cell")));
    outputs.push_back({{"resolution", side},
                       {"grid", {repr.grid_rows, repr.grid_cols}},
                       {"variance", pca.variance},
                       {"path", path}});
  }
  json j;
  j["command"] = "visualize";
  j["config"] = c.to_json();
  j["outputs"] = std::move(outputs);
  write_json((out_dir / (stem + "-pca.json")).string(), j);
  out << j.dump() << '\n';
}

void cmd_init_vit(const RunConfig& c, std::ostream& out) {
  if (c.empty("output")) throw ParameterError("--output is required");
  TinyVitConfig vc;
  vc.patch_size = c.size("patch-size");
  vc.width = c.size("vit-width");
  vc.layers = c.size("vit-layers");
  ensure_dir(fs::path(c.str("output")).parent_path());
  TinyFrozenVit::init(vc, c.u64("seed")).save(c.str("output"));
  json j;
  j["command"] = "init-vit";
  j["config"] = c.to_json();
  j["path"] = c.str("output");
  out << j.dump() << '\n';
}

void cmd_precompute(const RunConfig& c, std::ostream& out) {
  if (c.empty("output")) throw ParameterError("--output is required");
  if (c.str("provider") == "precomputed") throw ParameterError("precompute needs a handcrafted or tinyvit provider");
  const VisionProvider provider = make_provider(c);
  const auto path = manifest_path(c);
  require_file("manifest", path);
  const auto entries = load_manifest(path);
  if (entries.empty()) throw InputError("manifest " + path + " is empty");
  PrecomputedFeatures features;
  for (const auto& e : entries) {
    const VisionRepr repr = encode_image(provider, read_ppm(e.image_path));
    if (features.size() == 0) features = PrecomputedFeatures(repr.dense.rows(), repr.dense.cols());
    features.add(e.id, {repr.dense.to_vector(), repr.global.to_vector()});
  }
  ensure_dir(fs::path(c.str("output")).parent_path());
  features.save(c.str("output"));
  json j;
  j["command"] = "precompute";
  j["config"] = c.to_json();
  j["items"] = features.size();
  j["patches"] = features.patches();
  j["dim"] = features.dim();
  out << j.dump() << '\n';
}

const char* const* command_names() {
  static const char* const names[] = {"synth",     "train",    "eval-seg",   "eval-cls", "concepts",
                                      "visualize", "init-vit", "precompute", nullptr};
  return names;
}

void run_command(const std::string& name, const RunConfig& config, std::ostream& out) {
  if (name == "synth") return cmd_synth(config, out);
  if (name == "train") return cmd_train(config, out);
  if (name == "eval-seg") return cmd_eval_seg(config, out);
  if (name == "eval-cls") return cmd_eval_cls(config, out);
  if (name == "concepts") return cmd_concepts(config, out);
  if (name == "visualize") return cmd_visualize(config, out);
  if (name == "init-vit") return cmd_init_vit(config, out);
  if (name == "precompute") return cmd_precompute(config, out);
  throw ParameterError("unknown command '" + name + "'");
}

}  // namespace zsseg::cli
