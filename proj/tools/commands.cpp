#include "commands.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "seaseg/checkpoint.hpp"
#include "seaseg/datapipe.hpp"
#include "seaseg/error.hpp"
#include "seaseg/inference.hpp"
#include "seaseg/metrics.hpp"
#include "seaseg/trainer.hpp"

namespace seaseg::cli {

namespace {

struct Global {
  std::uint64_t seed = 0;
  int workers = 1;
};

void check_workers(int workers) {
  if (workers < 1) throw ValidationError("--workers must be at least 1");
}

std::pair<int, int> parse_dims(const std::string& text) {
  const auto x = text.find('x');
  int h = 0, w = 0;
  std::size_t used_h = 0, used_w = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument("no x");
    h = std::stoi(text.substr(0, x), &used_h);
    w = std::stoi(text.substr(x + 1), &used_w);
  } catch (const std::exception&) {
    throw ValidationError("--dims must look like HxW, got '" + text + "'");
  }
  if (used_h != x || used_w != text.size() - x - 1 || h < 1 || w < 1) {
    throw ValidationError("--dims must look like HxW with positive sizes, got '" + text + "'");
  }
  return {h, w};
}

// Writes through a sibling temporary file so a failure never leaves a partial output.
void write_atomically(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw RuntimeError("cannot write " + tmp.string());
    f << content;
    if (!f) throw RuntimeError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw RuntimeError("cannot move output into place at " + path.string() + ": " + ec.message());
}

void emit(const std::string& out_path, const std::string& content, std::ostream& out) {
  if (out_path.empty()) {
    out << content;
  } else {
    write_atomically(out_path, content);
  }
}

void require_dir(const std::string& dir, const char* flag) {
  if (!std::filesystem::is_directory(dir)) throw ValidationError(std::string(flag) + " " + dir + " is not a directory");
}

void require_file(const std::string& file, const char* flag) {
  if (!std::filesystem::is_regular_file(file)) throw ValidationError(std::string(flag) + " " + file + " does not exist");
}

void require_parent(const std::string& file, const char* flag) {
  const auto parent = std::filesystem::absolute(file).parent_path();
  if (!std::filesystem::is_directory(parent)) {
    throw ValidationError(std::string(flag) + " directory " + parent.string() + " does not exist");
  }
}

// '#' for set pixels, '.' for clear ones, one line per row.
std::string mask_to_art(const BinaryMask& m) {
  std::string s;
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) s += m.get(r, c) ? '#' : '.';
    s += '\n';
  }
  return s;
}

BinaryMask art_to_mask(std::istream& in) {
  std::vector<std::string> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    rows.push_back(line);
  }
  while (!rows.empty() && rows.back().empty()) rows.pop_back();
  if (rows.empty() || rows[0].empty()) throw ValidationError("rle encode: expected a mask drawn with '#' and '.'");
  const int h = static_cast<int>(rows.size()), w = static_cast<int>(rows[0].size());
  BinaryMask m(h, w);
  for (int r = 0; r < h; ++r) {
    if (static_cast<int>(rows[r].size()) != w) {
      throw ValidationError("rle encode: row " + std::to_string(r + 1) + " has " + std::to_string(rows[r].size()) +
                            " columns, expected " + std::to_string(w));
    }
    for (int c = 0; c < w; ++c) {
      const char ch = rows[r][c];
      if (ch != '#' && ch != '.') {
        throw ValidationError("rle encode: unexpected character '" + std::string(1, ch) + "' in row " +
                              std::to_string(r + 1));
      }
      if (ch == '#') m.set(r, c);
    }
  }
  return m;
}

IouTerm parse_loss(const std::string& name) {
  if (name == "lovasz+ce") return IouTerm::kLovasz;
  if (name == "jaccard+ce") return IouTerm::kJaccard;
  if (name == "ce") return IouTerm::kNone;
  throw ValidationError("unknown loss '" + name + "'");
}

// ---- synth ----

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  app.add_option("--out", a.out, "Output corpus directory")->required();
  app.add_option("--n", a.cfg.n, "Number of images")->capture_default_str();
  app.add_option("--empty-frac", a.cfg.empty_frac, "Share of images without ships")->capture_default_str();
  app.add_option("--size", a.cfg.size, "Image side in pixels, a multiple of 16")->capture_default_str();
  app.add_option("--max-ships", a.cfg.max_ships, "Most ships per image")->capture_default_str();
  app.add_option("--min-length", a.cfg.min_length, "Shortest ship as a fraction of the side")->capture_default_str();
  app.add_option("--max-length", a.cfg.max_length, "Longest ship as a fraction of the side")->capture_default_str();
}

int run_synth(SynthArgs& a, const Global& g, std::ostream& err) {
  a.cfg.seed = g.seed;
  a.cfg.validate();
  check_workers(g.workers);
  const Manifest m = synth_generate(a.cfg, a.out, g.workers);
  const CorpusReport r = corpus_report(m);
  err << "wrote " << r.images << " images (" << r.empty << " empty) to " << a.out << "\n";
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::string out;
  std::string preset = "toy";
  std::string loss = "lovasz+ce";
  std::optional<double> alpha;
  std::optional<bool> se;
  std::optional<int> epochs;
  std::optional<int> step_every;
  std::optional<int> swa_epochs;
  std::optional<double> cycle;
  std::optional<double> lr;
  std::optional<double> weight_decay;
  std::optional<int> batch;
  std::optional<int> crop;
  std::optional<int> steps_per_epoch;
  std::optional<int> base_channels;
  std::optional<double> val_frac;
  std::optional<double> threshold;
  std::optional<int> min_area;
  bool no_augment = false;
  std::optional<bool> half_scale;
  bool no_recalibration = false;
  bool resume = false;
  int stop_after = -1;
};

void add_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--data", a.data, "Corpus directory (manifest.csv + images/)")->required();
  app.add_option("--out", a.out, "Final checkpoint path P; also writes P.best, P.last and P.log.csv")->required();
  app.add_option("--preset", a.preset, "Schedule and model preset")
      ->check(CLI::IsMember({"toy", "paper"}))
      ->capture_default_str();
  app.add_option("--loss", a.loss, "Training loss")
      ->check(CLI::IsMember({"lovasz+ce", "jaccard+ce", "ce"}))
      ->capture_default_str();
  app.add_option("--alpha", a.alpha, "Weight of the IoU term; cross-entropy gets 1 - alpha (default 0.7)");
  app.add_flag("--se,!--no-se", a.se, "Enable or disable the squeeze-and-excitation blocks (default on)");
  app.add_option("--epochs", a.epochs, "Step-decay epochs (toy 20, paper 60)");
  app.add_option("--step-every", a.step_every, "Divide the learning rate by 10 every this many epochs (toy 7, paper 20)");
  app.add_option("--swa-epochs", a.swa_epochs, "Cosine-restart epochs with weight averaging (toy 12, paper 36)");
  app.add_option("--cycle", a.cycle, "Restart cycle length in epochs (toy 2, paper 6)");
  app.add_option("--lr", a.lr, "Initial learning rate (default 1e-3)");
  app.add_option("--weight-decay", a.weight_decay, "AdamW decoupled weight decay (default 1e-4)");
  app.add_option("--batch", a.batch, "Batch size (default 8)");
  app.add_option("--crop", a.crop, "Random crop side, 0 for whole images (default 0)");
  app.add_option("--steps-per-epoch", a.steps_per_epoch, "0 means one pass over the training images (default 0)");
  app.add_option("--base-channels", a.base_channels, "Width of the first stage (toy 8, paper 64)");
  app.add_option("--val-frac", a.val_frac, "Share of images held out for validation (default 0.2)");
  app.add_option("--threshold", a.threshold, "Ship probability threshold for validation (default 0.5)");
  app.add_option("--min-area", a.min_area, "Smallest predicted instance kept during validation (default 4)");
  app.add_flag("--no-augment", a.no_augment, "Disable colour and D8 augmentation");
  app.add_flag("--half-scale,!--full-scale", a.half_scale, "Halve every image before training (paper preset default)");
  app.add_flag("--no-recalibration", a.no_recalibration, "Skip batch-norm recalibration after weight averaging");
  app.add_flag("--resume", a.resume, "Continue from P.last when it exists");
  app.add_option("--stop-after", a.stop_after, "Stop after this many epochs in total, keeping P.last for --resume");
}

TrainConfig build_train_config(const TrainArgs& a, const Global& g) {
  TrainConfig c = a.preset == "paper" ? TrainConfig::paper() : TrainConfig::toy();
  c.loss.iou_term = parse_loss(a.loss);
  if (a.alpha) c.loss.alpha = *a.alpha;
  if (a.loss == "ce") {
    if (a.alpha && *a.alpha != 0.0) throw ValidationError("--alpha has no effect with --loss ce");
    c.loss.alpha = 0.0;
  }
  if (a.se) c.model.use_se = *a.se;
  if (a.base_channels) c.model.base_channels = *a.base_channels;
  if (a.epochs) c.phase1.epochs = *a.epochs;
  if (a.step_every) c.phase1.every = *a.step_every;
  if (a.lr) c.phase1.base = *a.lr;
  if (a.swa_epochs) c.phase2.epochs = *a.swa_epochs;
  if (a.cycle) c.phase2.cycle = *a.cycle;
  if (a.weight_decay) c.optim.weight_decay = *a.weight_decay;
  if (a.batch) c.batch_size = *a.batch;
  if (a.crop) c.crop_size = *a.crop;
  if (a.steps_per_epoch) c.steps_per_epoch = *a.steps_per_epoch;
  if (a.val_frac) c.val_fraction = *a.val_frac;
  if (a.threshold) c.postprocess.prob_threshold = *a.threshold;
  if (a.min_area) c.postprocess.min_instance_area = *a.min_area;
  if (a.half_scale) c.half_scale = *a.half_scale;
  c.augment = !a.no_augment;
  c.bn_recalibration = !a.no_recalibration;
  c.seed = g.seed;
  c.workers = g.workers;
  c.validate();
  return c;
}

int run_train(const TrainArgs& a, const Global& g, std::ostream& err) {
  check_workers(g.workers);
  const TrainConfig cfg = build_train_config(a, g);
  require_dir(a.data, "--data");
  require_parent(a.out, "--out");
  const Dataset data = load_dataset(a.data);
  const TrainSplit split = split_ids(data.manifest, cfg.val_fraction, cfg.seed);
  if (split.train.empty()) throw ValidationError("no images left for training after the validation split");

  TrainRunOptions run;
  run.resume = a.resume;
  run.epoch_limit = a.stop_after;
  run.on_row = [&err](const LogRow& row) { err << format_log_row(row) << "\n" << std::flush; };
  err << "training on " << split.train.size() << " images, validating on " << split.val.size() << "\n"
      << log_header() << "\n";
  const TrainResult result = train(cfg, data, split, TrainPaths{a.out}, run);
  if (!result.finished) {
    err << "stopped after " << result.log.size() << " epochs; state saved to " << TrainPaths{a.out}.last().string()
        << "\n";
  } else {
    err << "wrote " << a.out << " after " << result.steps << " steps\n";
  }
  return kExitOk;
}

// ---- predict ----

struct PredictArgs {
  std::string model;
  std::string data;
  std::string out;
  std::string tta = kDefaultTta;
  std::string mean = "arith";
  std::string split = "all";
  double threshold = 0.5;
  int min_area = 4;
  std::optional<bool> half_scale;
};

void add_predict(CLI::App& app, PredictArgs& a) {
  app.add_option("--model", a.model, "Checkpoint written by train")->required();
  app.add_option("--data", a.data, "Corpus directory to predict")->required();
  app.add_option("--out", a.out, "Prediction CSV in manifest format")->required();
  app.add_option("--tta", a.tta, "Test-time augmentation set")
      ->check(CLI::IsMember({"off", "d4", "flips", "d4+flips", "full"}))
      ->capture_default_str();
  app.add_option("--mean", a.mean, "How TTA predictions are averaged")
      ->check(CLI::IsMember({"arith", "geom"}))
      ->capture_default_str();
  app.add_option("--split", a.split, "Images to predict; train and val repeat the split made during training")
      ->check(CLI::IsMember({"all", "train", "val"}))
      ->capture_default_str();
  app.add_option("--threshold", a.threshold, "Ship probability threshold")->capture_default_str();
  app.add_option("--min-area", a.min_area, "Smallest instance kept, in pixels")->capture_default_str();
  app.add_flag("--half-scale,!--full-scale", a.half_scale, "Predict on halved images (default: as trained)");
}

int run_predict(const PredictArgs& a, const Global& g, std::ostream& err) {
  check_workers(g.workers);
  const TtaConfig tta{tta_elements(a.tta), parse_tta_mean(a.mean)};
  const PostprocessConfig post{a.threshold, a.min_area};
  tta.validate();
  post.validate();
  require_file(a.model, "--model");
  require_dir(a.data, "--data");
  require_parent(a.out, "--out");
  const LoadedCheckpoint ck = load_checkpoint(a.model);
  const auto& meta = ck.extras.meta;
  const bool half = a.half_scale.value_or(meta.contains("half_scale") && meta.at("half_scale").get<bool>());
  const Dataset data = load_dataset(a.data);

  std::vector<std::string> ids = data.manifest.image_ids();
  if (a.split != "all") {
    if (!meta.contains("seed") || !meta.contains("val_fraction")) {
      throw ValidationError("--split " + a.split + " needs a checkpoint that records its training split");
    }
    const TrainSplit s = split_ids(data.manifest, meta.at("val_fraction").get<double>(), meta.at("seed").get<std::uint64_t>());
    ids = a.split == "train" ? s.train : s.val;
  }
  const Manifest preds = predict_dataset(ck.model, data, ids, tta, post, half, g.workers);
  write_manifest(a.out, preds);
  err << "predicted " << ids.size() << " images with TTA " << a.tta << " (" << a.mean << ") into " << a.out << "\n";
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string dims;
  std::string format = "csv";
  std::string out;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  app.add_option("--pred", a.pred, "Predictions in manifest format")->required();
  app.add_option("--gt", a.gt, "Ground truth in manifest format")->required();
  app.add_option("--dims", a.dims, "Image size as HxW, e.g. 64x64")->required();
  app.add_option("--format", a.format, "Report format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  app.add_option("--out", a.out, "Write the report here instead of stdout");
}

int run_eval(const EvalArgs& a, const Global& g, std::ostream& out) {
  check_workers(g.workers);
  const auto [h, w] = parse_dims(a.dims);
  require_file(a.pred, "--pred");
  require_file(a.gt, "--gt");
  if (!a.out.empty()) require_parent(a.out, "--out");
  const EvalReport report = evaluate(read_manifest(a.pred), read_manifest(a.gt), h, w, g.workers);
  std::ostringstream s;
  if (a.format == "json") {
    write_eval_json(s, report);
  } else {
    write_eval_csv(s, report);
  }
  emit(a.out, s.str(), out);
  return kExitOk;
}

// ---- report ----

struct ReportArgs {
  std::string data;
  std::string format = "csv";
  std::string out;
};

void add_report(CLI::App& app, ReportArgs& a) {
  app.add_option("--data", a.data, "Corpus directory or manifest CSV")->required();
  app.add_option("--format", a.format, "Report format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  app.add_option("--out", a.out, "Write the report here instead of stdout");
}

int run_report(const ReportArgs& a, std::ostream& out) {
  std::filesystem::path manifest = a.data;
  if (std::filesystem::is_directory(manifest)) manifest /= "manifest.csv";
  require_file(manifest.string(), "--data");
  if (!a.out.empty()) require_parent(a.out, "--out");
  const CorpusReport r = corpus_report(read_manifest(manifest));
  std::ostringstream s;
  if (a.format == "json") {
    write_corpus_json(s, r);
  } else {
    write_corpus_csv(s, r);
  }
  emit(a.out, s.str(), out);
  return kExitOk;
}

// ---- rle ----

struct RleArgs {
  std::string encoded;
  int height = 0;
  int width = 0;
  std::string in_file;
};

int run_rle_decode(const RleArgs& a, std::ostream& out) {
  if (a.height < 1 || a.width < 1) throw ValidationError("rle decode: height and width must be positive");
  out << mask_to_art(rle_decode(a.encoded, a.height, a.width));
  return kExitOk;
}

int run_rle_encode(const RleArgs& a, std::istream& in, std::ostream& out) {
  BinaryMask m(1, 1);
  if (a.in_file.empty()) {
    m = art_to_mask(in);
  } else {
    require_file(a.in_file, "--in");
    std::ifstream f(a.in_file);
    m = art_to_mask(f);
  }
  out << rle_encode(m) << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ship segmentation with a squeeze-and-excitation U-Net", "seaseg"};
  app.set_config("--config", "", "TOML or INI file; [section] names a subcommand");
  app.allow_config_extras(false);
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--workers", g.workers, "Worker threads (results do not depend on it)")->capture_default_str();

  SynthArgs synth;
  TrainArgs train_args;
  PredictArgs predict;
  EvalArgs eval;
  ReportArgs report;
  RleArgs rle;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic ship corpus");
  add_synth(*synth_cmd, synth);
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
  add_train(*train_cmd, train_args);
  CLI::App* predict_cmd = app.add_subcommand("predict", "Predict ship instances for a corpus");
  add_predict(*predict_cmd, predict);
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score predictions by mean F2 over IoU thresholds");
  add_eval(*eval_cmd, eval);
  CLI::App* report_cmd = app.add_subcommand("report", "Histogram of ships per image");
  add_report(*report_cmd, report);
  CLI::App* rle_cmd = app.add_subcommand("rle", "Run-length codec for masks drawn with '#' and '.'");
  rle_cmd->require_subcommand(1);
  CLI::App* decode_cmd = rle_cmd->add_subcommand("decode", "Draw a run-length encoded mask");
  decode_cmd->add_option("rle", rle.encoded, "Space-separated start/length pairs, 1-indexed, column-major")->required();
  decode_cmd->add_option("height", rle.height, "Mask height")->required();
  decode_cmd->add_option("width", rle.width, "Mask width")->required();
  CLI::App* encode_cmd = rle_cmd->add_subcommand("encode", "Encode a drawn mask read from stdin");
  encode_cmd->add_option("--in", rle.in_file, "Read the drawing from this file instead of stdin");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth, g, err);
    if (train_cmd->parsed()) return run_train(train_args, g, err);
    if (predict_cmd->parsed()) return run_predict(predict, g, err);
    if (eval_cmd->parsed()) return run_eval(eval, g, out);
    if (report_cmd->parsed()) return run_report(report, out);
    if (decode_cmd->parsed()) return run_rle_decode(rle, out);
    if (encode_cmd->parsed()) return run_rle_encode(rle, in, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"seaseg"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), in, out, err);
}

}  // namespace seaseg::cli
