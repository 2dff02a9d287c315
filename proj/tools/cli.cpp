#include "fundus_cli.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fundus/checkpoint.hpp"
#include "fundus/error.hpp"
#include "fundus/gradcam.hpp"
#include "fundus/io.hpp"
#include "fundus/synthetic.hpp"

namespace fundus::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

fs::path parent_or_dot(const fs::path& p) {
  const fs::path parent = p.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

// Collects violations instead of stopping at the first one.
class Checker {
 public:
  explicit Checker(const json& root) : root_(root) {}

  template <typename T>
  std::optional<T> get(const std::string& key, bool required, const char* type_name) {
    seen_.push_back(key);
    const auto it = root_.find(key);
    if (it == root_.end()) {
      if (required) fail("missing required field '" + key + "'");
      return std::nullopt;
    }
    if (!matches<T>(*it)) {
      fail("field '" + key + "' must be " + type_name);
      return std::nullopt;
    }
    return it->template get<T>();
  }

  void fail(std::string message) { violations_.push_back(std::move(message)); }

  void reject_unknown_keys() {
    for (const auto& [key, value] : root_.items())
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) fail("unknown field '" + key + "'");
  }

  std::vector<std::string> take() { return std::move(violations_); }

 private:
  template <typename T>
  static bool matches(const json& v) {
    if constexpr (std::is_same_v<T, bool>) return v.is_boolean();
    else if constexpr (std::is_same_v<T, std::string>) return v.is_string();
    else if constexpr (std::is_same_v<T, double>) return v.is_number();
    else if constexpr (std::is_same_v<T, json>) return v.is_object();
    else return v.is_number_unsigned() || (v.is_number_integer() && v.template get<std::int64_t>() >= 0);
  }

  const json& root_;
  std::vector<std::string> seen_;
  std::vector<std::string> violations_;
};

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("run config is not valid JSON: ") + e.what()});
  }
  if (!root.is_object()) throw ConfigError({"run config must be a JSON object"});

  RunConfig cfg;
  Checker c(root);
  if (auto v = c.get<std::uint64_t>("schema_version", true, "a non-negative integer")) {
    if (*v != kRunConfigSchema)
      c.fail("unsupported schema_version " + std::to_string(*v) + " (expected " + std::to_string(kRunConfigSchema) +
             ")");
  }

  const auto model = c.get<std::string>("model", false, "a string");
  const auto arch = c.get<std::string>("architecture", false, "a string");
  if (model && arch) c.fail("give either 'model' or 'architecture', not both");
  if (!model && !arch && !root.contains("model") && !root.contains("architecture"))
    c.fail("missing required field 'model' (a preset name) or 'architecture' (a file)");
  if (model) {
    const auto names = models::preset_names();
    if (std::find(names.begin(), names.end(), *model) == names.end()) {
      std::string list;
      for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
      c.fail("unknown model preset '" + *model + "' (available: " + list + ")");
    }
    cfg.model = *model;
  }
  if (arch) {
    cfg.architecture = resolve(base_dir, *arch);
    if (!fs::is_regular_file(*cfg.architecture))
      c.fail("architecture file '" + cfg.architecture->string() + "' does not exist");
  }

  if (auto m = c.get<std::string>("manifest", true, "a string")) {
    cfg.manifest = resolve(base_dir, *m);
    if (!fs::is_regular_file(cfg.manifest)) c.fail("manifest '" + cfg.manifest.string() + "' does not exist");
  }
  if (auto v = c.get<double>("train_ratio", false, "a number")) {
    if (!(*v > 0.0 && *v < 1.0)) c.fail("train_ratio must lie in (0, 1)");
    cfg.train_ratio = *v;
  }
  if (auto v = c.get<std::string>("output_dir", false, "a string")) cfg.output_dir = resolve(base_dir, *v);

  if (auto v = c.get<std::uint64_t>("epochs", false, "a non-negative integer")) {
    if (*v < 1) c.fail("epochs must be >= 1");
    cfg.train.epochs = *v;
  }
  if (auto v = c.get<std::uint64_t>("batch_size", false, "a non-negative integer")) {
    if (*v < 1) c.fail("batch_size must be >= 1");
    cfg.train.batch_size = *v;
  }
  if (auto v = c.get<std::uint64_t>("seed", false, "a non-negative integer")) cfg.train.seed = *v;
  if (auto v = c.get<double>("lr", false, "a number")) {
    if (!(*v > 0.0) || !std::isfinite(*v)) c.fail("lr must be a finite number > 0");
    cfg.train.lr = *v;
  }
  if (auto v = c.get<bool>("augment", false, "a boolean")) cfg.train.augment = *v;
  if (auto aug = c.get<json>("augmentation", false, "an object")) {
    Checker a(*aug);
    auto prob = [&](const char* key, double& slot) {
      if (auto p = a.get<double>(key, false, "a number")) {
        if (!(*p >= 0.0 && *p <= 1.0)) a.fail(std::string(key) + " must lie in [0, 1]");
        slot = *p;
      }
    };
    prob("hflip_probability", cfg.train.augmentation.hflip_probability);
    prob("vflip_probability", cfg.train.augmentation.vflip_probability);
    if (auto d = a.get<double>("max_rotation_degrees", false, "a number")) {
      if (!(*d >= 0.0 && *d <= 180.0)) a.fail("max_rotation_degrees must lie in [0, 180]");
      cfg.train.augmentation.max_rotation_degrees = *d;
    }
    a.reject_unknown_keys();
    for (auto& v : a.take()) c.fail("augmentation: " + v);
  }
  c.reject_unknown_keys();

  auto violations = c.take();
  if (!violations.empty()) throw ConfigError(std::move(violations));
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(io::read_text_file(path), parent_or_dot(path));
}

std::vector<data::Sample> load_manifest_samples(const fs::path& manifest_path) {
  return data::load_samples(data::load_manifest(manifest_path), parent_or_dot(manifest_path));
}

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// ---- preprocess -------------------------------------------------------------

struct PreprocessArgs {
  fs::path in, out;
  std::size_t size = 299;
  int threshold = data::kDefaultCropThreshold;
};

int cmd_preprocess(const PreprocessArgs& a, std::ostream& out) {
  const fs::path manifest_path = a.in / "manifest.csv";
  data::Manifest manifest;
  if (fs::exists(manifest_path)) manifest = data::load_manifest(manifest_path);
  if (manifest.records.empty()) throw DataError("no manifest records in '" + a.in.string() + "'");

  for (const auto& r : manifest.records) {
    const data::Image img = data::load_ppm(a.in / r.path);
    const data::Image cropped = data::crop_black_border(img, a.threshold);
    const fs::path target = a.out / r.path;
    fs::create_directories(parent_or_dot(target));
    data::save_ppm(target, data::resize_bilinear(cropped, a.size, a.size));
  }
  data::save_manifest(a.out / "manifest.csv", manifest);
  out << "preprocessed " << manifest.records.size() << " images to " << a.size << "x" << a.size << " in "
      << a.out.string() << "\n";
  return kExitOk;
}

// ---- split ------------------------------------------------------------------

struct SplitArgs {
  fs::path manifest, out;
  double ratio = 0.9;
  std::uint64_t seed = 42;
};

int cmd_split(const SplitArgs& a, std::ostream& out) {
  if (!(a.ratio > 0.0 && a.ratio < 1.0)) throw std::invalid_argument("--ratio must lie in (0, 1)");
  const data::Manifest all = data::load_manifest(a.manifest);
  Rng rng(a.seed);
  const data::Manifest balanced = data::balance_downsample(all, rng);
  data::SplitSpec split = data::stratified_split(balanced, a.ratio, a.seed);

  // Re-anchor record paths at the output directory.
  fs::create_directories(a.out);
  const fs::path from = fs::absolute(parent_or_dot(a.manifest)).lexically_normal();
  const fs::path to = fs::absolute(a.out).lexically_normal();
  for (auto* part : {&split.train, &split.test})
    for (auto& r : part->records) r.path = (from / r.path).lexically_normal().lexically_relative(to).generic_string();

  data::save_manifest(a.out / "train.csv", split.train);
  data::save_manifest(a.out / "test.csv", split.test);
  const json meta{{"train_ratio", a.ratio},
                  {"seed", a.seed},
                  {"source_records", all.records.size()},
                  {"balanced_records", balanced.records.size()},
                  {"train", {{"healthy", split.train.count(data::Label::healthy)},
                             {"macular_degeneration", split.train.count(data::Label::macular_degeneration)}}},
                  {"test", {{"healthy", split.test.count(data::Label::healthy)},
                            {"macular_degeneration", split.test.count(data::Label::macular_degeneration)}}}};
  io::write_file_atomic(a.out / "split.json", meta.dump(2) + "\n");
  out << "train " << split.train.records.size() << " (" << split.train.count(data::Label::healthy) << " healthy, "
      << split.train.count(data::Label::macular_degeneration) << " macular_degeneration), test "
      << split.test.records.size() << " (" << split.test.count(data::Label::healthy) << " healthy, "
      << split.test.count(data::Label::macular_degeneration) << " macular_degeneration)\n";
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  fs::path config;
  std::optional<fs::path> out;
  std::optional<fs::path> log;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig cfg = load_run_config(a.config);
  fs::path ckpt;
  if (a.out) ckpt = *a.out;
  else if (cfg.output_dir) ckpt = *cfg.output_dir / "model.ckpt";
  else throw ConfigError({"no checkpoint destination: pass --out or set output_dir in the config"});
  const fs::path log_path = a.log.value_or(fs::path(ckpt.string() + ".log.json"));

  const models::ArchitectureConfig arch = cfg.architecture
                                              ? models::architecture_from_json(io::read_text_file(*cfg.architecture))
                                              : models::preset(cfg.model);
  const auto samples = load_manifest_samples(cfg.manifest);
  auto model = models::Model::initialize(arch, cfg.train.seed);
  out << "training " << arch.name << " on " << samples.size() << " images, " << cfg.train.epochs
      << " epochs, batch size " << cfg.train.batch_size << "\n";
  const auto log = train::train(model, samples, cfg.train, [&](const train::EpochStats& s) {
    out << "epoch " << s.epoch << "/" << cfg.train.epochs << " loss " << fixed(s.loss, 4) << " accuracy "
        << fixed(s.accuracy, 3) << "\n";
  });

  json j = json::parse(train::train_log_to_json(log));
  j["schema_version"] = kRunConfigSchema;
  j["manifest"] = cfg.manifest.generic_string();
  j["train_ratio"] = cfg.train_ratio ? json(*cfg.train_ratio) : json(nullptr);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  io::write_checkpoint(ckpt, model);
  io::write_file_atomic(log_path, j.dump(2) + "\n");
  out << "wrote " << ckpt.string() << " and " << log_path.string() << "\n";
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  fs::path ckpt, split, report;
  std::optional<std::string> name;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto model = io::read_checkpoint(a.ckpt);
  const auto samples = load_manifest_samples(a.split);
  double ratio = 0.0;
  std::uint64_t seed = 0;
  const fs::path meta_path = parent_or_dot(a.split) / "split.json";
  if (fs::exists(meta_path)) {
    try {
      const json meta = json::parse(io::read_text_file(meta_path));
      ratio = meta.at("train_ratio").get<double>();
      seed = meta.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw DataError("cannot read '" + meta_path.string() + "': " + e.what());
    }
  }
  const auto cm = train::evaluate(model, samples);
  const auto report = train::metrics_from_confusion(cm, a.name.value_or(model.config().name), ratio, seed);
  if (a.report.has_parent_path()) fs::create_directories(a.report.parent_path());
  io::write_file_atomic(a.report, train::report_to_json(report));
  out << train::render_table(std::span<const train::MetricsReport>(&report, 1));
  out << "confusion: tp " << cm.tp << " tn " << cm.tn << " fp " << cm.fp << " fn " << cm.fn << "\n";
  return kExitOk;
}

// ---- gradcam ----------------------------------------------------------------

struct GradcamArgs {
  fs::path ckpt, image;
  std::string class_choice = "auto";
  std::optional<std::string> layer;
  std::string out;
};

int cmd_gradcam(const GradcamArgs& a, std::ostream& out) {
  std::optional<std::size_t> target;
  if (a.class_choice == "0" || a.class_choice == "1") target = static_cast<std::size_t>(a.class_choice[0] - '0');
  else if (a.class_choice != "auto") throw std::invalid_argument("--class must be auto, 0 or 1");

  const auto model = io::read_checkpoint(a.ckpt);
  const data::Image img = data::load_ppm(a.image);
  const Shape& in = model.config().input_shape;
  if (img.width != in[2] || img.height != in[1])
    throw DataError("image '" + a.image.string() + "' is " + std::to_string(img.width) + "x" +
                    std::to_string(img.height) + ", model expects " + std::to_string(in[2]) + "x" +
                    std::to_string(in[1]));
  if (a.layer) model.layer_index(*a.layer);  // lists the taps when unknown

  const auto r = cam::gradcam_for_image(model, data::to_tensor(img), target, a.layer);
  const fs::path heat_path = a.out + ".heat.pgm", overlay_path = a.out + ".overlay.ppm";
  if (heat_path.has_parent_path()) fs::create_directories(heat_path.parent_path());
  data::save_pgm(heat_path, cam::to_gray(r.heatmap));
  data::save_ppm(overlay_path, cam::superimpose(img, r.heatmap));

  const auto label = [](std::size_t k) { return std::string(data::to_string(static_cast<data::Label>(k))); };
  out << "predicted class " << r.predicted_class << " (" << label(r.predicted_class) << ") confidence "
      << fixed(r.probabilities[r.predicted_class], 4) << "\n";
  out << "explained class " << r.coarse.target_class << " (" << label(r.coarse.target_class) << ") at layer "
      << r.coarse.layer << "\n";
  out << "wrote " << heat_path.string() << " and " << overlay_path.string() << "\n";
  return kExitOk;
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  std::size_t count = 250;
  std::uint64_t seed = 42;
  data::BlobOptions blob;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.count == 0) throw std::invalid_argument("--count must be >= 1");
  const auto corpus = data::make_blob_corpus(a.count, a.seed, a.blob);
  fs::create_directories(a.out / "images");
  data::Manifest manifest;
  json boxes = json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::ostringstream name;
    name << "images/blob_" << std::setw(4) << std::setfill('0') << i << ".ppm";
    data::save_ppm(a.out / name.str(), corpus[i].image);
    manifest.records.push_back({name.str(), corpus[i].label});
    const auto& b = corpus[i].box;
    boxes.push_back({{"path", name.str()}, {"box", {b.x0, b.y0, b.x1, b.y1}}});
  }
  data::save_manifest(a.out / "manifest.csv", manifest);
  io::write_file_atomic(a.out / "boxes.json", boxes.dump(2) + "\n");
  out << "wrote " << corpus.size() << " images to " << a.out.string() << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fundus image classification and Grad-CAM toolkit", "fundus"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* preprocess = app.add_subcommand("preprocess", "Crop black borders and resize a corpus");
  preprocess->add_option("--in", pre.in, "Directory with manifest.csv and PPM images")->required();
  preprocess->add_option("--out", pre.out, "Output directory")->required();
  preprocess->add_option("--size", pre.size, "Output width and height")->check(CLI::PositiveNumber);
  preprocess->add_option("--threshold", pre.threshold, "Channel-mean threshold for border pixels")
      ->check(CLI::Range(0, 255));

  SplitArgs sp;
  auto* split = app.add_subcommand("split", "Balance classes and write a stratified train/test split");
  split->add_option("--manifest", sp.manifest, "Input manifest CSV")->required();
  split->add_option("--ratio", sp.ratio, "Training fraction in (0, 1)");
  split->add_option("--seed", sp.seed, "Shuffle seed");
  split->add_option("--out", sp.out, "Output directory")->required();

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Train a model from a run configuration");
  trn->add_option("--config", tr.config, "run.json")->required();
  trn->add_option("--out", tr.out, "Checkpoint path");
  trn->add_option("--log", tr.log, "Training log path (default: <checkpoint>.log.json)");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval->add_option("--split", ev.split, "Test manifest CSV")->required();
  eval->add_option("--report", ev.report, "Report JSON output")->required();
  eval->add_option("--name", ev.name, "Model name in the report (default: architecture name)");

  GradcamArgs gc;
  auto* gradcam = app.add_subcommand("gradcam", "Grad-CAM heatmap and overlay for one image");
  gradcam->add_option("--ckpt", gc.ckpt, "Checkpoint")->required();
  gradcam->add_option("--image", gc.image, "Input PPM")->required();
  gradcam->add_option("--class", gc.class_choice, "auto, 0 (healthy) or 1 (macular_degeneration)");
  gradcam->add_option("--layer", gc.layer, "Layer to explain (default: the model's tap)");
  gradcam->add_option("--out", gc.out, "Output prefix")->required();

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Write a synthetic bright/dark blob corpus");
  synth->add_option("--out", sy.out, "Output directory")->required();
  synth->add_option("--count", sy.count, "Number of images");
  synth->add_option("--seed", sy.seed, "Corpus seed");
  synth->add_option("--size", sy.blob.size, "Image width and height")->check(CLI::Range(8, 4096));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (!app.get_subcommands().empty()) err << app.get_subcommands().front()->help();
    return kExitUsage;
  }

  try {
    if (*preprocess) return cmd_preprocess(pre, out);
    if (*split) return cmd_split(sp, out);
    if (*trn) return cmd_train(tr, out);
    if (*eval) return cmd_eval(ev, out);
    if (*gradcam) return cmd_gradcam(gc, out);
    if (*synth) return cmd_synth(sy, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace fundus::cli
