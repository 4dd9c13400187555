#include "voxseg/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "voxseg/checkpoint.hpp"
#include "voxseg/errors.hpp"
#include "voxseg/log.hpp"
#include "voxseg/metrics.hpp"
#include "voxseg/parallel.hpp"
#include "voxseg/patches.hpp"
#include "voxseg/preprocess.hpp"
#include "voxseg/svg.hpp"
#include "voxseg/synth.hpp"
#include "voxseg/trainer.hpp"
#include "voxseg/volume_io.hpp"

namespace voxseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad flags or missing inputs (exit code 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
  bool quiet = false;

  std::ostream& log() {
    static std::ostream null(nullptr);
    return quiet ? null : out;
  }
};

void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw UsageError("missing input directory: " + p.string());
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw UsageError("missing input file: " + p.string());
}

void require_container(const fs::path& base) {
  if (!container_exists(base)) throw UsageError("missing input container: " + base.string() + ".{json,raw}");
}

std::string subject_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sub-%03d", i);
  return buf;
}

std::vector<std::string> list_subjects(const fs::path& dir) {
  require_dir(dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_directory() && name.rfind("sub-", 0) == 0) out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw UsageError("no sub-* subject directories in " + dir.string());
  return out;
}

class Manifest {
 public:
  Manifest(std::string subcommand, json config)
      : start_(std::chrono::steady_clock::now()),
        doc_{{"subcommand", std::move(subcommand)}, {"tool_version", kToolVersion}, {"config", std::move(config)}} {
    doc_["inputs"] = json::array();
    doc_["outputs"] = json::array();
    doc_["threads"] = num_threads();
  }

  void input(const fs::path& p) { doc_["inputs"].push_back(p.string()); }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }
  json& operator[](const char* key) { return doc_[key]; }

  void write(const fs::path& dir, const std::string& tag) {
    doc_["duration_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json warnings = json::array();
    for (const auto& w : take_warnings()) warnings.push_back({{"code", w.code}, {"message", w.message}});
    doc_["warnings"] = warnings;
    fs::create_directories(dir);
    std::ofstream os(dir / ("manifest." + tag + ".json"));
    os << doc_.dump(2) << '\n';
    if (!os) throw IoError("failed writing manifest in " + dir.string());
  }

 private:
  std::chrono::steady_clock::time_point start_;
  json doc_;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

// ---------------------------------------------------------------- synth

struct SynthOpts {
  fs::path out;
  int subjects = 5;
  Index dims = 48;
  int lesions = 5;
  double radius_min = 3.0, radius_max = 5.0;
  double intensity = 1.8, noise = 0.02;
  std::uint64_t seed = 0;
};

void cmd_synth(const SynthOpts& o, Io& io) {
  if (o.subjects < 1) throw UsageError("--subjects must be at least 1");
  SynthSpec spec;
  spec.dims = {o.dims, o.dims, o.dims};
  spec.n_lesions = o.lesions;
  spec.radius_min = o.radius_min;
  spec.radius_max = o.radius_max;
  spec.lesion_intensity = o.intensity;
  spec.noise_sigma = o.noise;
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  Manifest m("synth", {{"subjects", o.subjects},
                       {"dims", o.dims},
                       {"lesions", o.lesions},
                       {"radius_min", o.radius_min},
                       {"radius_max", o.radius_max},
                       {"intensity", o.intensity},
                       {"noise", o.noise},
                       {"seed", o.seed}});
  m["seed"] = o.seed;
  for (int i = 0; i < o.subjects; ++i) {
    spec.seed = derive_seed(o.seed, static_cast<std::uint64_t>(i));
    const auto s = generate_synthetic(spec);
    const fs::path dir = o.out / subject_name(i);
    write_volume(s.image, dir / "image");
    write_volume(s.mask, dir / "mask");
    json lesions = json::array();
    for (const auto& e : s.lesions) lesions.push_back({{"center", e.center}, {"radii", e.radii}});
    write_text(dir / "lesions.json", lesions.dump(1) + "\n");
    m.output(dir);
    io.log() << subject_name(i) << ": " << s.mask.count() << " lesion voxels\n";
  }
  m.write(o.out, "synth");
}

// ----------------------------------------------------------- preprocess

struct PreprocessOpts {
  fs::path data;
  double clip_limit = 2.0;
  int tiles = 8;
  std::string second_mask;
};

void cmd_preprocess(const PreprocessOpts& o, Io& io) {
  const auto subjects = list_subjects(o.data);
  const ClaheParams params{o.clip_limit, {o.tiles, o.tiles}};
  Manifest m("preprocess", {{"clip_limit", o.clip_limit}, {"tiles", o.tiles}, {"second_mask", o.second_mask}});
  for (const auto& s : subjects) {
    const fs::path dir = o.data / s;
    require_container(dir / "image");
    require_container(dir / "mask");
    m.input(dir / "image");
    const Volume image = read_scalar_volume(dir / "image");
    LabelVolume target = read_label_volume(dir / "mask");
    if (!o.second_mask.empty()) {
      require_container(dir / o.second_mask);
      target = mask_union(target, read_label_volume(dir / o.second_mask));
    }
    write_volume(build_channels(image, params), dir / "channels");
    write_volume(target, dir / "target");
    m.output(dir / "channels");
    m.output(dir / "target");
    io.log() << s << ": channels written\n";
  }
  m.write(o.data, "preprocess");
}

// --------------------------------------------------------------- sample

struct SampleOpts {
  fs::path data, out;
  std::string preset = "toy";
  std::optional<Index> patch_size;
  Index count = 200;
  Index val_count = 50;
  double lesion_fraction = 0.6;
  std::uint64_t seed = 0;
  std::string train_subjects, val_subjects, test_subjects;
};

Index preset_patch_size(const std::string& preset) { return preset == "paper" ? 80 : 16; }

void cmd_sample(const SampleOpts& o, Io& io) {
  const auto all = list_subjects(o.data);
  std::vector<std::string> train_ids = split_list(o.train_subjects), val_ids = split_list(o.val_subjects),
                           test_ids = split_list(o.test_subjects);
  if (train_ids.empty() && val_ids.empty() && test_ids.empty()) {
    if (all.size() < 3) throw UsageError("need at least 3 subjects for the default train/val/test split");
    train_ids.assign(all.begin(), all.end() - 2);
    val_ids = {all[all.size() - 2]};
    test_ids = {all.back()};
  }
  if (train_ids.empty() || val_ids.empty()) throw UsageError("train and validation subject lists must be non-empty");
  const Index p = o.patch_size.value_or(preset_patch_size(o.preset));
  Manifest m("sample", {{"preset", o.preset},
                        {"patch_size", p},
                        {"count", o.count},
                        {"val_count", o.val_count},
                        {"lesion_fraction", o.lesion_fraction},
                        {"seed", o.seed},
                        {"train", train_ids},
                        {"val", val_ids},
                        {"test", test_ids}});
  m["seed"] = o.seed;

  auto draw = [&](const std::vector<std::string>& ids, Index total) {
    std::vector<Patch> out;
    const auto n = static_cast<Index>(ids.size());
    for (Index k = 0; k < n; ++k) {
      const auto& id = ids[static_cast<std::size_t>(k)];
      const auto pos = std::find(all.begin(), all.end(), id);
      if (pos == all.end()) throw UsageError("unknown subject '" + id + "' in " + o.data.string());
      const fs::path dir = o.data / id;
      require_container(dir / "channels");
      require_container(dir / "target");
      m.input(dir / "channels");
      SamplerConfig cfg{p, o.lesion_fraction, total / n + (k < total % n ? 1 : 0),
                        derive_seed(o.seed, static_cast<std::uint64_t>(pos - all.begin()))};
      auto patches = sample_patches(read_multichannel_volume(dir / "channels"), read_label_volume(dir / "target"), cfg, id);
      io.log() << id << ": " << patches.size() << " patches (" << cfg.lesion_count() << " lesion-centred)\n";
      out.insert(out.end(), std::make_move_iterator(patches.begin()), std::make_move_iterator(patches.end()));
    }
    return out;
  };
  write_patch_archive(draw(train_ids, o.count), o.out / "train");
  write_patch_archive(draw(val_ids, o.val_count), o.out / "val");
  write_text(o.out / "split.json", json{{"train", train_ids}, {"val", val_ids}, {"test", test_ids}}.dump(1) + "\n");
  m.output(o.out / "train");
  m.output(o.out / "val");
  m.output(o.out / "split.json");
  m.write(o.out, "sample");
}

// ---------------------------------------------------------------- train

struct TrainOpts {
  fs::path patches, out;
  std::string preset = "toy";
  std::optional<int> epochs;
  double lr = 1e-4, decay = 0.97;
  int batch_size = 4;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> init_seed;
  double alpha = 0.7, beta = 0.3, gamma = 4.0 / 3.0;
};

void cmd_train(const TrainOpts& o, Io& io) {
  require_container(o.patches / "train");
  require_container(o.patches / "val");
  ModelConfig mcfg;
  try {
    mcfg = ModelConfig::preset(o.preset);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  TrainConfig tcfg;
  tcfg.epochs = o.epochs.value_or(o.preset == "paper" ? 100 : 30);
  tcfg.lr0 = o.lr;
  tcfg.decay = o.decay;
  tcfg.batch_size = o.batch_size;
  tcfg.seed = o.seed;
  tcfg.checkpoint = o.out / "best";
  const LossConfig lcfg{o.alpha, o.beta, o.gamma, 1e-6};
  const std::uint64_t init_seed = o.init_seed.value_or(derive_seed(o.seed, 0x1417));

  const auto train_set = read_patch_archive(o.patches / "train");
  const auto val_set = read_patch_archive(o.patches / "val");
  if (train_set.empty() || val_set.empty()) throw UsageError("empty patch archive in " + o.patches.string());
  const Index p = train_set.front().size;

  Manifest m("train", {{"preset", o.preset},
                       {"model", to_json(mcfg)},
                       {"epochs", tcfg.epochs},
                       {"lr0", tcfg.lr0},
                       {"decay", tcfg.decay},
                       {"batch_size", tcfg.batch_size},
                       {"seed", tcfg.seed},
                       {"init_seed", init_seed},
                       {"adam", {{"beta1", tcfg.adam.beta1}, {"beta2", tcfg.adam.beta2}, {"eps", tcfg.adam.eps}}},
                       {"loss", {{"alpha", lcfg.alpha}, {"beta", lcfg.beta}, {"gamma", lcfg.gamma}, {"epsilon", lcfg.epsilon}}},
                       {"patch_size", p},
                       {"train_patches", train_set.size()},
                       {"val_patches", val_set.size()}});
  m["seed"] = o.seed;
  m.input(o.patches / "train");
  m.input(o.patches / "val");

  Model<float> model(mcfg, init_seed);
  io.log() << "model '" << mcfg.name << "': " << model.params().trainable_count() << " parameters, " << train_set.size()
           << " training patches of " << p << "^3\n";
  const auto state = train(model, train_set, val_set, tcfg, lcfg, [&](const EpochRecord& r) {
    io.log() << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss << " lr " << r.lr << '\n';
  });
  // Re-save with the patch size so predict can default to it.
  save_checkpoint(model, tcfg.checkpoint,
                  {{"epoch", state.best_epoch}, {"val_loss", state.history.empty() ? json() : json(state.best_val_loss)},
                   {"patch_size", p}});
  write_history_csv(state, o.out / "loss.csv");
  m["best_epoch"] = state.best_epoch;
  m["best_val_loss"] = state.history.empty() ? json() : json(state.best_val_loss);
  m["epoch0_val_loss"] = state.history.empty() ? json() : json(state.history.front().val_loss);
  m.output(tcfg.checkpoint);
  m.output(o.out / "loss.csv");
  m.write(o.out, "train");
}

// -------------------------------------------------------------- predict

struct PredictOpts {
  fs::path checkpoint, data, out, split;
  std::string subjects;
  std::optional<Index> patch_size;
};

void cmd_predict(const PredictOpts& o, Io& io) {
  require_file(fs::path(o.checkpoint.string() + ".json"));
  std::vector<std::string> ids = split_list(o.subjects);
  if (ids.empty() && !o.split.empty()) {
    require_file(o.split);
    std::ifstream is(o.split);
    ids = json::parse(is).at("test").get<std::vector<std::string>>();
  }
  if (ids.empty()) ids = list_subjects(o.data);
  json meta;
  const Model<float> model = load_checkpoint<float>(o.checkpoint, &meta);
  const Index p = o.patch_size.value_or(meta.value("patch_size", static_cast<Index>(16)));
  Manifest m("predict", {{"checkpoint", o.checkpoint.string()}, {"patch_size", p}, {"subjects", ids}});
  m.input(o.checkpoint);
  for (const auto& id : ids) {
    const fs::path in = o.data / id / "channels";
    require_container(in);
    m.input(in);
    const auto mask = predict_volume(model, read_multichannel_volume(in), p);
    write_volume(mask, o.out / id / "pred");
    m.output(o.out / id / "pred");
    io.log() << id << ": " << mask.count() << " voxels predicted as lesion\n";
  }
  m.write(o.out, "predict");
}

// ------------------------------------------------------------- evaluate

struct EvaluateOpts {
  fs::path pred, data, out;
  std::string avd_denominator = "prediction";
};

void cmd_evaluate(const EvaluateOpts& o, Io& io) {
  if (o.avd_denominator != "prediction" && o.avd_denominator != "reference") {
    throw UsageError("--avd-denominator must be prediction or reference");
  }
  const auto denom = o.avd_denominator == "prediction" ? AvdDenominator::prediction : AvdDenominator::reference;
  Manifest m("evaluate", {{"avd_denominator", o.avd_denominator}});
  std::vector<EvalReport> reports;
  for (const auto& id : list_subjects(o.pred)) {
    require_container(o.pred / id / "pred");
    fs::path gt = o.data / id / "target";
    if (!container_exists(gt)) gt = o.data / id / "mask";
    require_container(gt);
    m.input(o.pred / id / "pred");
    m.input(gt);
    reports.push_back(evaluate(read_label_volume(o.pred / id / "pred"), read_label_volume(gt), id, denom));
    const auto& r = reports.back();
    io.log() << id << ": dsc " << r.dsc << " ltpr " << r.ltpr << " lfpr " << r.lfpr << " avd " << r.avd << '\n';
  }
  write_eval_csv(reports, o.out / "eval.csv");
  write_pairs_csv(reports, o.out / "pairs.csv");
  m.output(o.out / "eval.csv");
  m.output(o.out / "pairs.csv");
  m.write(o.out, "evaluate");
}

// ----------------------------------------------------------------- plot

struct PlotOpts {
  fs::path csv, out;
};

void cmd_plot_loss(const PlotOpts& o, Io& io) {
  require_file(o.csv);
  const auto history = read_history_csv(o.csv);
  const fs::path svg = o.out / "loss.svg";
  write_text(svg, loss_curve_svg(history));
  Manifest m("plot-loss", {{"csv", o.csv.string()}});
  m.input(o.csv);
  m.output(svg);
  m.write(o.out, "plot-loss");
  io.log() << "wrote " << svg.string() << '\n';
}

void cmd_plot_volumes(const PlotOpts& o, Io& io) {
  require_file(o.csv);
  const auto pairs = read_pairs_csv(o.csv);
  const Agreement fit = volume_agreement(pairs);
  const fs::path svg = o.out / "volumes.svg";
  write_text(svg, volume_scatter_svg(pairs, fit));
  Manifest m("plot-volumes", {{"csv", o.csv.string()}});
  m["results"] = {{"pearson_r", fit.pearson_r}, {"slope", fit.slope}, {"intercept", fit.intercept}, {"n", fit.n}};
  m.input(o.csv);
  m.output(svg);
  m.write(o.out, "plot-volumes");
  io.out << "pearson_r " << fit.pearson_r << " slope " << fit.slope << " n " << fit.n << '\n';
}

// --------------------------------------------------------------- config

void cmd_config(const std::string& preset, bool check_paper, Io& io) {
  ModelConfig cfg;
  try {
    cfg = ModelConfig::preset(preset);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  validate(cfg);
  const auto r = describe(cfg);
  bool paper_ok = true;
  std::string why;
  try {
    validate_paper_layout(cfg);
  } catch (const ConfigError& e) {
    paper_ok = false;
    why = e.what();
  }
  json doc{{"preset", preset},
           {"conv_deconv_layers", r.total_layers},
           {"trunk_conv_layers", r.trunk_conv_layers},
           {"deconv_layers", r.deconv_layers},
           {"head_layers", r.head_layers},
           {"sca_voxres_modules", r.sca_blocks},
           {"stride2_convs", r.stride2_convs},
           {"tap_channels", r.tap_channels},
           {"tap_layers", r.tap_layers},
           {"patch_multiple", cfg.patch_multiple()},
           {"parameters", parameter_count(cfg)},
           {"paper_layout", paper_ok},
           {"model", to_json(cfg)}};
  if (!paper_ok) doc["paper_layout_violation"] = why;
  io.out << doc.dump(2) << '\n';
  if (check_paper && !paper_ok) throw ConfigError(why);
}

int configured_threads(const std::optional<int>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("VOXSEG_THREADS")) {
    try {
      return std::stoi(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("VOXSEG_THREADS is not an integer: '") + env + "'");
    }
  }
  return 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"voxseg: attention-based 3D lesion segmentation pipeline"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<int> threads;
  bool quiet = false;
  app.add_option("--threads", threads, "Worker threads (default: VOXSEG_THREADS or 1)")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  SynthOpts synth;
  auto* s_synth = app.add_subcommand("synth", "Generate synthetic subjects with ellipsoid lesions");
  s_synth->add_option("--out", synth.out, "Dataset directory")->required();
  s_synth->add_option("--subjects", synth.subjects, "Number of subjects")->capture_default_str();
  s_synth->add_option("--dims", synth.dims, "Cube edge length in voxels")->capture_default_str()->check(CLI::PositiveNumber);
  s_synth->add_option("--lesions", synth.lesions, "Lesions per subject")->capture_default_str();
  s_synth->add_option("--radius-min", synth.radius_min, "Smallest lesion semi-axis")->capture_default_str();
  s_synth->add_option("--radius-max", synth.radius_max, "Largest lesion semi-axis")->capture_default_str();
  s_synth->add_option("--intensity", synth.intensity, "Lesion intensity multiplier")->capture_default_str();
  s_synth->add_option("--noise", synth.noise, "Gaussian noise sigma")->capture_default_str();
  s_synth->add_option("--seed", synth.seed, "Base seed")->capture_default_str();

  PreprocessOpts prep;
  auto* s_prep = app.add_subcommand("preprocess", "Build the enhanced-image and edge channels");
  s_prep->add_option("--data", prep.data, "Dataset directory")->required();
  s_prep->add_option("--clip-limit", prep.clip_limit, "CLAHE clip limit")->capture_default_str()->check(CLI::PositiveNumber);
  s_prep->add_option("--tiles", prep.tiles, "CLAHE tiles per slice axis")->capture_default_str()->check(CLI::PositiveNumber);
  s_prep->add_option("--union-with", prep.second_mask,
                     "Second rater mask container name; the training target becomes the union");

  SampleOpts samp;
  auto* s_samp = app.add_subcommand("sample", "Draw training and validation patches");
  s_samp->add_option("--data", samp.data, "Dataset directory")->required();
  s_samp->add_option("--out", samp.out, "Patch directory")->required();
  s_samp->add_option("--preset", samp.preset, "paper or toy")->check(CLI::IsMember({"paper", "toy"}))->capture_default_str();
  s_samp->add_option("--patch-size", samp.patch_size, "Patch edge P (default: 16 toy, 80 paper)")->check(CLI::PositiveNumber);
  s_samp->add_option("--count", samp.count, "Training patches in total")->capture_default_str()->check(CLI::NonNegativeNumber);
  s_samp->add_option("--val-count", samp.val_count, "Validation patches in total")->capture_default_str()->check(CLI::NonNegativeNumber);
  s_samp->add_option("--lesion-fraction", samp.lesion_fraction, "Share of lesion-centred patches")
      ->capture_default_str()->check(CLI::Range(0.0, 1.0));
  s_samp->add_option("--seed", samp.seed, "Base seed")->capture_default_str();
  s_samp->add_option("--train-subjects", samp.train_subjects, "Comma-separated subject ids");
  s_samp->add_option("--val-subjects", samp.val_subjects, "Comma-separated subject ids");
  s_samp->add_option("--test-subjects", samp.test_subjects, "Comma-separated subject ids");

  TrainOpts tr;
  auto* s_train = app.add_subcommand("train", "Train the segmentation network");
  s_train->add_option("--patches", tr.patches, "Patch directory from `sample`")->required();
  s_train->add_option("--out", tr.out, "Run directory")->required();
  s_train->add_option("--preset", tr.preset, "paper or toy")->check(CLI::IsMember({"paper", "toy"}))->capture_default_str();
  s_train->add_option("--epochs", tr.epochs, "Epochs (default: 30 toy, 100 paper)")->check(CLI::NonNegativeNumber);
  s_train->add_option("--lr", tr.lr, "Initial learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
  s_train->add_option("--decay", tr.decay, "Per-epoch learning-rate multiplier")->capture_default_str();
  s_train->add_option("--batch-size", tr.batch_size, "Patches per step")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--seed", tr.seed, "Shuffle seed")->capture_default_str();
  s_train->add_option("--init-seed", tr.init_seed, "Weight initialisation seed (default: derived from --seed)");
  s_train->add_option("--alpha", tr.alpha, "Tversky false-negative weight")->capture_default_str();
  s_train->add_option("--beta", tr.beta, "Tversky false-positive weight")->capture_default_str();
  s_train->add_option("--gamma", tr.gamma, "Focal exponent")->capture_default_str();

  PredictOpts pred;
  auto* s_pred = app.add_subcommand("predict", "Segment whole volumes with a checkpoint");
  s_pred->add_option("--checkpoint", pred.checkpoint, "Checkpoint base path (no extension)")->required();
  s_pred->add_option("--data", pred.data, "Dataset directory")->required();
  s_pred->add_option("--out", pred.out, "Prediction directory")->required();
  s_pred->add_option("--subjects", pred.subjects, "Comma-separated subject ids");
  s_pred->add_option("--split", pred.split, "split.json from `sample`; predicts its test subjects");
  s_pred->add_option("--patch-size", pred.patch_size, "Tile edge (default: training patch size)")->check(CLI::PositiveNumber);

  EvaluateOpts ev;
  auto* s_eval = app.add_subcommand("evaluate", "Score predictions against the ground truth");
  s_eval->add_option("--pred", ev.pred, "Prediction directory")->required();
  s_eval->add_option("--data", ev.data, "Dataset directory")->required();
  s_eval->add_option("--out", ev.out, "Report directory")->required();
  s_eval->add_option("--avd-denominator", ev.avd_denominator, "prediction or reference")->capture_default_str();

  PlotOpts pl_loss, pl_vol;
  auto* s_plot = app.add_subcommand("plot", "Render SVG figures");
  s_plot->require_subcommand(1);
  s_plot->fallthrough();
  auto* s_plot_loss = s_plot->add_subcommand("loss", "Loss curves from loss.csv");
  s_plot_loss->add_option("--csv", pl_loss.csv, "loss.csv from `train`")->required();
  s_plot_loss->add_option("--out", pl_loss.out, "Output directory")->required();
  auto* s_plot_vol = s_plot->add_subcommand("volumes", "Lesion volume scatter from pairs.csv");
  s_plot_vol->add_option("--csv", pl_vol.csv, "pairs.csv from `evaluate`")->required();
  s_plot_vol->add_option("--out", pl_vol.out, "Output directory")->required();

  std::string cfg_preset = "paper";
  bool check_paper = false;
  auto* s_cfg = app.add_subcommand("config", "Describe and validate a model preset");
  s_cfg->add_option("--preset", cfg_preset, "paper or toy")->capture_default_str();
  s_cfg->add_flag("--check-paper", check_paper, "Fail unless the published layout counts hold");

  std::vector<const char*> argv{"voxseg"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << kToolVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  Io io{out, err, quiet};
  try {
    set_num_threads(configured_threads(threads));
    if (s_synth->parsed()) cmd_synth(synth, io);
    else if (s_prep->parsed()) cmd_preprocess(prep, io);
    else if (s_samp->parsed()) cmd_sample(samp, io);
    else if (s_train->parsed()) cmd_train(tr, io);
    else if (s_pred->parsed()) cmd_predict(pred, io);
    else if (s_eval->parsed()) cmd_evaluate(ev, io);
    else if (s_plot_loss->parsed()) cmd_plot_loss(pl_loss, io);
    else if (s_plot_vol->parsed()) cmd_plot_volumes(pl_vol, io);
    else if (s_cfg->parsed()) cmd_config(cfg_preset, check_paper, io);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace voxseg
