#include "cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "nfuse/architecture.hpp"
#include "nfuse/csv.hpp"
#include "nfuse/data.hpp"
#include "nfuse/error.hpp"
#include "nfuse/labeling.hpp"
#include "nfuse/metrics.hpp"
#include "nfuse/training.hpp"

namespace nfuse::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::array<double, 3> kSplitFractions = {0.70, 0.15, 0.15};
constexpr const char* kCheckpointName = "checkpoint.nfck";

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Refuses to reuse a non-empty directory unless forced.
void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) fail(ErrorCategory::kArgument, dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
      fail(ErrorCategory::kArgument, "output directory " + dir.string() + " is not empty; pass --force to overwrite");
    }
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCategory::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCategory::kIo, "failed writing " + path.string());
}

// Every command records its resolved options; timestamps live only here.
struct RunManifest {
  json doc;

  RunManifest(std::string command, json options) {
    doc["command"] = std::move(command);
    doc["options"] = std::move(options);
    doc["started_at"] = utc_now();
  }
  void finish(const fs::path& dir) {
    doc["finished_at"] = utc_now();
    write_json(dir / "run_manifest.json", doc);
  }
};

std::string relative_to(const fs::path& target, const fs::path& dir) {
  const auto rel = fs::weakly_canonical(target).lexically_relative(fs::weakly_canonical(dir));
  return rel.empty() ? fs::absolute(target).generic_string() : rel.generic_string();
}

std::optional<double> opt(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json json_of(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// ---- synth ----

struct SynthOptions {
  fs::path out;
  std::size_t patients = 30;
  std::size_t sessions = 1;
  std::uint64_t seed = 1;
  bool force = false;
};

void cmd_synth(const SynthOptions& o, std::ostream& log) {
  prepare_out_dir(o.out, o.force);
  RunManifest run("synth", {{"out", o.out.generic_string()}, {"patients", o.patients}, {"sessions", o.sessions},
                            {"seed", o.seed}, {"force", o.force}});
  data::SyntheticConfig config;
  config.n_patients = o.patients;
  config.sessions_per_patient = o.sessions;
  config.seed = o.seed;
  const auto sessions = data::synthetic_sessions(config);

  fs::create_directories(o.out / "volumes");
  std::vector<data::ManifestRow> rows;
  std::ofstream truth(o.out / "truth.csv", std::ios::binary);
  truth << "patient_id,session_id,label\n";
  for (const auto& s : sessions) {
    const auto pair = data::synthesize_session(config, s);
    const std::string t1 = "volumes/" + s.session_id + "_t1.nfv";
    const std::string fl = "volumes/" + s.session_id + "_flair.nfv";
    data::write_volume(o.out / t1, pair.t1);
    data::write_volume(o.out / fl, pair.flair);
    rows.push_back({s.patient_id, s.session_id, s.scan_date, t1, fl});
    truth << csv::join({s.patient_id, s.session_id, labeling::to_string(s.label)}) << '\n';
  }
  if (!truth) fail(ErrorCategory::kIo, "failed writing truth.csv");
  data::write_manifest(o.out / "manifest.csv", rows);

  std::ofstream ehr(o.out / "ehr.csv", std::ios::binary);
  ehr << "patient_id,visit_date,age_at_scan,diagnosis\n";
  for (const auto& v : data::synthetic_ehr(sessions)) {
    ehr << csv::join({v.patient_id, labeling::format_date(v.visit_date), metrics::format_double(v.age_at_scan),
                      v.diagnosis ? labeling::to_string(*v.diagnosis) : ""})
        << '\n';
  }
  if (!ehr) fail(ErrorCategory::kIo, "failed writing ehr.csv");
  run.doc["sessions_written"] = sessions.size();
  run.finish(o.out);
  log << "synth: " << sessions.size() << " sessions in " << o.out.string() << '\n';
}

// ---- label ----

struct LabelOptions {
  fs::path ehr;
  fs::path scans;
  fs::path out;
  bool force = false;
};

void cmd_label(const LabelOptions& o, std::ostream& log) {
  const auto ehr = labeling::read_ehr_csv(o.ehr);
  const auto scans = labeling::read_scans_csv(o.scans);
  prepare_out_dir(o.out, o.force);
  RunManifest run("label", {{"ehr", o.ehr.generic_string()}, {"scans", o.scans.generic_string()},
                            {"out", o.out.generic_string()}, {"force", o.force}});
  const auto result = labeling::label_dataset(ehr.records, scans.records);

  auto excluded = result.excluded;
  for (const auto& m : ehr.malformed) {
    excluded.push_back({"", "ehr line " + std::to_string(m.line) + ": " + m.reason});
  }
  for (const auto& m : scans.malformed) {
    excluded.push_back({"", "scans line " + std::to_string(m.line) + ": " + m.reason});
  }
  labeling::write_labeled_csv(o.out / "labeled.csv", result.labeled);
  labeling::write_exclusions_csv(o.out / "exclusions.csv", excluded);

  // With volume paths in the scans table, also emit the training manifest.
  const auto table = csv::read(o.scans);
  const auto c1 = table.find_column("t1_path");
  const auto cf = table.find_column("flair_path");
  bool manifest = false;
  if (c1 && cf) {
    const auto cs = table.column("session_id");
    std::map<std::string, std::pair<fs::path, fs::path>> paths;
    for (const auto& row : table.rows) {
      if (row.fields.size() != table.header.size()) continue;
      auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : o.scans.parent_path() / p; };
      paths[row.fields[cs]] = {resolve(row.fields[*c1]), resolve(row.fields[*cf])};
    }
    std::vector<data::Sample> samples;
    for (const auto& s : result.labeled) {
      const auto& [t1, fl] = paths.at(s.session_id);
      samples.push_back({s.patient_id, s.session_id, s.scan_date, s.label, relative_to(t1, o.out), relative_to(fl, o.out)});
    }
    data::write_labeled_manifest(o.out / "labeled_manifest.csv", samples);
    manifest = true;
  }
  run.doc["labeled"] = result.labeled.size();
  run.doc["excluded"] = excluded.size();
  run.doc["malformed_ehr_rows"] = ehr.malformed.size();
  run.finish(o.out);
  log << "label: " << result.labeled.size() << " labeled, " << excluded.size() << " excluded"
      << (manifest ? ", labeled_manifest.csv written" : "") << '\n';
}

// ---- shared by train / evaluate ----

struct Cohort {
  std::vector<data::Sample> samples;
  data::SplitAssignment split;

  std::vector<data::Sample> of(data::Split which) const { return data::select(samples, split, which); }
};

Cohort load_cohort(const fs::path& manifest, std::uint64_t split_seed) {
  Cohort c;
  c.samples = data::read_labeled_manifest(manifest);
  if (c.samples.empty()) fail(ErrorCategory::kData, manifest.string() + " has no labeled sessions");
  c.split = data::patient_split(data::patients_of(c.samples), kSplitFractions, split_seed);
  return c;
}

std::array<std::size_t, 4> parse_widths(const std::string& text) {
  std::array<std::size_t, 4> w{};
  std::size_t i = 0;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (i == 4) fail(ErrorCategory::kArgument, "--widths takes four comma-separated integers");
    try {
      std::size_t used = 0;
      const auto v = std::stoul(part, &used);
      if (used != part.size() || v == 0) throw std::invalid_argument(part);
      w[i++] = v;
    } catch (const std::exception&) {
      fail(ErrorCategory::kArgument, "--widths: '" + part + "' is not a positive integer");
    }
  }
  if (i != 4) fail(ErrorCategory::kArgument, "--widths takes four comma-separated integers");
  return w;
}

arch::Network load_network(const fs::path& path) { return arch::network_from_checkpoint(arch::read_checkpoint(path)); }

// ---- train ----

struct TrainOptions {
  fs::path manifest;
  std::uint64_t split_seed = 1;
  std::string mode = "retrain";
  std::string modality = "t1";
  std::optional<std::size_t> epochs;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  std::optional<fs::path> checkpoint_in;
  std::optional<std::string> widths;
  std::size_t widening_factor = 1;
  std::optional<fs::path> t1_checkpoint;
  std::optional<fs::path> flair_checkpoint;
  std::string fusion = "cascade-add";
  bool no_augment = false;
  fs::path out;
  bool force = false;
};

void log_epochs(std::ostream& log, std::span<const train::EpochLog> rows) {
  for (const auto& r : rows) {
    log << "  epoch " << r.epoch << ' ' << r.split << " loss " << metrics::format_double(r.loss) << " acc "
        << metrics::format_double(r.accuracy) << " micro_auc "
        << (r.micro_auc ? metrics::format_double(*r.micro_auc) : "n/a") << '\n';
  }
}

void cmd_train(const TrainOptions& o, std::ostream& log) {
  const auto mode = train::parse_transfer_mode(o.mode);
  if (!mode) fail(ErrorCategory::kArgument, "unknown --mode '" + o.mode + "'");
  train::TrainConfig config = train::TrainConfig::defaults(*mode);
  if (o.epochs) config.epochs = *o.epochs;
  config.learning_rate = o.lr;
  config.momentum = o.momentum;
  config.batch_size = o.batch_size;
  config.seed = o.seed;
  config.augment = !o.no_augment;
  config.validate();

  json options{{"manifest", o.manifest.generic_string()},
               {"split_seed", o.split_seed},
               {"mode", train::to_string(*mode)},
               {"epochs", config.epochs},
               {"lr", config.learning_rate},
               {"momentum", config.momentum},
               {"batch_size", config.batch_size},
               {"seed", config.seed},
               {"augment", config.augment},
               {"max_sigma", config.max_sigma},
               {"out", o.out.generic_string()},
               {"force", o.force}};

  if (*mode == train::TransferMode::kCascade) {
    if (!o.t1_checkpoint || !o.flair_checkpoint) {
      fail(ErrorCategory::kArgument, "cascade training needs --t1-checkpoint and --flair-checkpoint");
    }
    arch::CascadeMode cascade;
    if (o.fusion == "cascade-add") {
      cascade = arch::CascadeMode::kAdditive;
    } else if (o.fusion == "cascade-concat") {
      cascade = arch::CascadeMode::kConcatenated;
    } else {
      fail(ErrorCategory::kArgument, "cascade training needs --fusion cascade-add or cascade-concat");
    }
    options["fusion"] = o.fusion;
    options["t1_checkpoint"] = o.t1_checkpoint->generic_string();
    options["flair_checkpoint"] = o.flair_checkpoint->generic_string();
    const auto t1_net = load_network(*o.t1_checkpoint);
    const auto fl_net = load_network(*o.flair_checkpoint);
    if (t1_net.spec().encoding_width != fl_net.spec().encoding_width) {
      fail(ErrorCategory::kShape, "T1 and FLAIR backbones have different encoding widths");
    }
    const auto cohort = load_cohort(o.manifest, o.split_seed);
    prepare_out_dir(o.out, o.force);
    RunManifest run("train", options);
    auto pairs_for = [&](data::Split which) {
      const auto samples = cohort.of(which);
      return train::pair_encodings(train::encode(t1_net, train::load_examples(samples, data::Modality::kT1)),
                                   train::encode(fl_net, train::load_examples(samples, data::Modality::kFlair)));
    };
    const auto training = pairs_for(data::Split::kTrain);
    const auto validation = pairs_for(data::Split::kValidation);
    const auto head = arch::CascadeHead::build(cascade, data::derive_seed(config.seed, 0xCA5C),
                                               t1_net.spec().encoding_width);
    const auto result = train::train_cascade(head, training, validation, config);
    log_epochs(log, result.log);
    arch::write_checkpoint(o.out / kCheckpointName, 1, result.head.parameters());
    train::write_log_csv(o.out / "train_log.csv", result.log);
    data::write_split_csv(o.out / "split.csv", cohort.split);
    run.doc["steps"] = result.steps;
    run.doc["best_epoch"] = result.best_epoch;
    run.finish(o.out);
    log << "train: cascade head (" << o.fusion << ") written to " << (o.out / kCheckpointName).string() << '\n';
    return;
  }

  const auto modality = data::parse_modality(o.modality);
  if (!modality) fail(ErrorCategory::kArgument, "unknown --modality '" + o.modality + "'");
  options["modality"] = data::to_string(*modality);
  if (!o.checkpoint_in && *mode != train::TransferMode::kRetrain) {
    fail(ErrorCategory::kArgument, train::to_string(*mode) + " needs --checkpoint-in (there is nothing to transfer)");
  }

  // Retrain starts from fresh weights; with --checkpoint-in it keeps that
  // checkpoint's architecture.
  std::optional<arch::Network> start;
  if (o.checkpoint_in) {
    options["checkpoint_in"] = o.checkpoint_in->generic_string();
    options["pretrained_stand_in"] = true;
    auto loaded = load_network(*o.checkpoint_in);
    if (*mode == train::TransferMode::kRetrain) {
      start = arch::Network::build(loaded.spec(), data::derive_seed(config.seed, 0x1417));
    } else {
      start = std::move(loaded);
    }
  } else {
    auto spec = o.widths ? arch::reduced_spec(parse_widths(*o.widths)) : arch::default_spec(o.widening_factor);
    options["widths"] = spec.channels();
    start = arch::Network::build(spec, data::derive_seed(config.seed, 0x1417));
  }
  options["channels"] = start->spec().channels();

  const auto cohort = load_cohort(o.manifest, o.split_seed);
  prepare_out_dir(o.out, o.force);
  RunManifest run("train", options);
  const auto training = train::load_examples(cohort.of(data::Split::kTrain), *modality);
  const auto validation = train::load_examples(cohort.of(data::Split::kValidation), *modality);
  log << "train: " << train::to_string(*mode) << " on " << data::to_string(*modality) << ", " << training.size()
      << " training / " << validation.size() << " validation sessions, " << config.epochs << " epochs\n";
  const auto result = train::train(*start, training, validation, config);
  log_epochs(log, result.log);
  arch::write_checkpoint(o.out / kCheckpointName, result.network.spec().widening_factor, result.network.parameters());
  train::write_log_csv(o.out / "train_log.csv", result.log);
  data::write_split_csv(o.out / "split.csv", cohort.split);
  run.doc["steps"] = result.steps;
  run.doc["best_epoch"] = result.best_epoch;
  run.finish(o.out);
  log << "train: checkpoint written to " << (o.out / kCheckpointName).string() << '\n';
}

// ---- evaluate ----

struct EvaluateOptions {
  fs::path manifest;
  std::uint64_t split_seed = 1;
  std::string split = "test";
  std::optional<fs::path> t1_checkpoint;
  std::optional<fs::path> flair_checkpoint;
  std::vector<fs::path> head_checkpoints;
  std::vector<std::string> fusion{"none"};
  double alpha_step = 0.01;
  fs::path out;
  bool force = false;
};

json report_row(const std::string& model, const metrics::PredictionSet& preds) {
  const auto r = metrics::auc_report(preds);
  return json{{"model", model},
              {"cn_vs_all", json_of(r.cn_vs_all)},
              {"mci_vs_all", json_of(r.mci_vs_all)},
              {"ad_vs_all", json_of(r.ad_vs_all)},
              {"micro", json_of(r.micro)},
              {"macro", json_of(r.macro)},
              {"accuracy", metrics::accuracy(preds)}};
}

void write_roc(const fs::path& path, const metrics::PredictionSet& preds) {
  metrics::write_roc_csv(path, metrics::auc_report(preds, true).curves);
}

void cmd_evaluate(const EvaluateOptions& o, std::ostream& log) {
  const auto split = data::parse_split(o.split);
  if (!split) fail(ErrorCategory::kArgument, "unknown --split '" + o.split + "'");
  std::set<std::string> fusions;
  for (const auto& f : o.fusion) {
    if (f != "none" && f != "weighted" && f != "cascade-add" && f != "cascade-concat") {
      fail(ErrorCategory::kArgument, "unknown --fusion '" + f + "'");
    }
    fusions.insert(f);
  }
  const bool needs_both = fusions.size() > fusions.count("none");
  if (needs_both && (!o.t1_checkpoint || !o.flair_checkpoint)) {
    fail(ErrorCategory::kArgument, "fusion needs both --t1-checkpoint and --flair-checkpoint");
  }
  if (!o.t1_checkpoint && !o.flair_checkpoint) fail(ErrorCategory::kArgument, "no checkpoint to evaluate");

  std::map<arch::CascadeMode, arch::CascadeHead> heads;
  for (const auto& p : o.head_checkpoints) {
    auto head = arch::cascade_head_from_checkpoint(arch::read_checkpoint(p));
    heads.emplace(head.mode(), std::move(head));
  }
  for (auto [name, mode] : {std::pair{"cascade-add", arch::CascadeMode::kAdditive},
                            std::pair{"cascade-concat", arch::CascadeMode::kConcatenated}}) {
    if (fusions.count(name) && !heads.count(mode)) {
      fail(ErrorCategory::kArgument, std::string(name) + " needs a --head-checkpoint trained in that mode");
    }
  }

  std::optional<arch::Network> t1_net, fl_net;
  if (o.t1_checkpoint) t1_net = load_network(*o.t1_checkpoint);
  if (o.flair_checkpoint) fl_net = load_network(*o.flair_checkpoint);

  const auto cohort = load_cohort(o.manifest, o.split_seed);
  const auto samples = cohort.of(*split);
  if (samples.empty()) fail(ErrorCategory::kData, "split " + o.split + " has no sessions");

  json options{{"manifest", o.manifest.generic_string()}, {"split_seed", o.split_seed}, {"split", o.split},
               {"fusion", std::vector<std::string>(fusions.begin(), fusions.end())}, {"alpha_step", o.alpha_step},
               {"out", o.out.generic_string()}, {"force", o.force}};
  if (o.t1_checkpoint) options["t1_checkpoint"] = o.t1_checkpoint->generic_string();
  if (o.flair_checkpoint) options["flair_checkpoint"] = o.flair_checkpoint->generic_string();
  std::vector<std::string> head_paths;
  for (const auto& p : o.head_checkpoints) head_paths.push_back(p.generic_string());
  options["head_checkpoints"] = head_paths;
  prepare_out_dir(o.out, o.force);
  RunManifest run("evaluate", options);

  struct Modal {
    std::vector<train::Example> examples;
    train::Evaluation eval;
  };
  auto predict = [&](const arch::Network& net, const std::vector<data::Sample>& s, data::Modality m) {
    Modal out;
    out.examples = train::load_examples(s, m);
    out.eval = train::evaluate(net, out.examples);
    return out;
  };
  std::optional<Modal> t1, fl;
  if (t1_net) t1 = predict(*t1_net, samples, data::Modality::kT1);
  if (fl_net) fl = predict(*fl_net, samples, data::Modality::kFlair);

  json report;
  report["split"] = o.split;
  report["sessions"] = samples.size();
  report["columns"] = {"cn_vs_all", "mci_vs_all", "ad_vs_all", "micro", "macro"};
  json rows = json::array();
  if (t1) {
    rows.push_back(report_row("t1", t1->eval.predictions));
    write_roc(o.out / "roc_t1.csv", t1->eval.predictions);
  }
  if (fl) {
    rows.push_back(report_row("flair", fl->eval.predictions));
    write_roc(o.out / "roc_flair.csv", fl->eval.predictions);
  }

  if (fusions.count("weighted")) {
    // alpha is tuned on the validation split and applied to the evaluated one
    const auto val_samples = cohort.of(data::Split::kValidation);
    if (val_samples.empty()) fail(ErrorCategory::kData, "weighted fusion needs validation sessions to pick alpha");
    const auto vt1 = o.split == "validation" ? t1->eval : predict(*t1_net, val_samples, data::Modality::kT1).eval;
    const auto vfl = o.split == "validation" ? fl->eval : predict(*fl_net, val_samples, data::Modality::kFlair).eval;
    const auto search = metrics::optimal_alpha(vt1.predictions, vfl.predictions, metrics::Metric::kMicro, o.alpha_step);
    metrics::write_sweep_csv(o.out / "alpha_sweep.csv", search.sweep);
    const auto fused = metrics::fuse(t1->eval.predictions, fl->eval.predictions, search.choice.alpha);
    auto row = report_row("weighted", fused);
    row["alpha"] = search.choice.alpha;
    rows.push_back(row);
    write_roc(o.out / "roc_weighted.csv", fused);

    json per_metric = json::object();
    for (auto m : metrics::kAllMetrics) {
      const auto best = search.sweep.best(m);
      per_metric[metrics::to_string(m)] =
          best ? json{{"alpha", best->alpha}, {"validation_value", best->value}} : json(nullptr);
    }
    report["weighted_alpha_selection"] = {{"tuned_on", "validation"},
                                          {"row_alpha_metric", "micro"},
                                          {"per_metric_optimum", per_metric}};
  }

  for (auto [name, mode] : {std::pair{"cascade-add", arch::CascadeMode::kAdditive},
                            std::pair{"cascade-concat", arch::CascadeMode::kConcatenated}}) {
    if (!fusions.count(name)) continue;
    const auto pairs = train::pair_encodings(train::encode(*t1_net, t1->examples), train::encode(*fl_net, fl->examples));
    const auto eval = train::evaluate_cascade(heads.at(mode), pairs);
    rows.push_back(report_row(name, eval.predictions));
    write_roc(o.out / ("roc_" + std::string(name) + ".csv"), eval.predictions);
  }
  report["rows"] = rows;
  write_json(o.out / "report.json", report);
  run.finish(o.out);

  for (const auto& r : rows) {
    log << "evaluate: " << r["model"].get<std::string>() << " micro "
        << (opt(r["micro"]) ? metrics::format_double(*opt(r["micro"])) : "n/a") << " macro "
        << (opt(r["macro"]) ? metrics::format_double(*opt(r["macro"])) : "n/a") << '\n';
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal 3D CNN dementia-stage toolkit on synthetic volumes", "nfuse"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic paired T1/FLAIR cohort with an EHR table");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--patients", synth.patients, "Number of patients")->capture_default_str();
  s->add_option("--sessions", synth.sessions, "Sessions per patient")->capture_default_str();
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  s->add_flag("--force", synth.force, "Overwrite a non-empty output directory");

  LabelOptions label;
  auto* l = app.add_subcommand("label", "Derive scan labels from EHR visits");
  l->add_option("--ehr", label.ehr, "EHR CSV")->required();
  l->add_option("--scans", label.scans, "Scans CSV or dataset manifest")->required();
  l->add_option("--out", label.out, "Output directory")->required();
  l->add_flag("--force", label.force, "Overwrite a non-empty output directory");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train a backbone (baseline, fine-tune, retrain) or a cascade head");
  t->add_option("--manifest", tr.manifest, "Labeled manifest")->required();
  t->add_option("--split-seed", tr.split_seed, "Patient split seed")->capture_default_str();
  t->add_option("--mode", tr.mode, "baseline, fine-tune, retrain or cascade")->capture_default_str();
  t->add_option("--modality", tr.modality, "t1 or flair")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "Epochs (default: 0 baseline, 50 fine-tune, 200 retrain/cascade)");
  t->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  t->add_option("--momentum", tr.momentum, "SGD momentum")->capture_default_str();
  t->add_option("--batch-size", tr.batch_size, "Batch size")->capture_default_str();
  t->add_option("--seed", tr.seed, "Training seed (init, shuffling, augmentation)")->capture_default_str();
  t->add_option("--checkpoint-in", tr.checkpoint_in, "Starting checkpoint");
  t->add_option("--widths", tr.widths, "Reduced channel widths for a fresh network, e.g. 2,4,8,8");
  t->add_option("--widening-factor", tr.widening_factor, "Widening factor for a fresh full-width network")
      ->capture_default_str();
  t->add_option("--t1-checkpoint", tr.t1_checkpoint, "T1 backbone (cascade mode)");
  t->add_option("--flair-checkpoint", tr.flair_checkpoint, "FLAIR backbone (cascade mode)");
  t->add_option("--fusion", tr.fusion, "cascade-add or cascade-concat (cascade mode)")->capture_default_str();
  t->add_flag("--no-augment", tr.no_augment, "Disable blur and random crops");
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_flag("--force", tr.force, "Overwrite a non-empty output directory");

  EvaluateOptions ev;
  auto* e = app.add_subcommand("evaluate", "Score checkpoints on a split and write the AUC report");
  e->add_option("--manifest", ev.manifest, "Labeled manifest")->required();
  e->add_option("--split-seed", ev.split_seed, "Patient split seed")->capture_default_str();
  e->add_option("--split", ev.split, "train, validation or test")->capture_default_str();
  e->add_option("--t1-checkpoint", ev.t1_checkpoint, "T1 backbone");
  e->add_option("--flair-checkpoint", ev.flair_checkpoint, "FLAIR backbone");
  e->add_option("--head-checkpoint", ev.head_checkpoints, "Cascade head (repeatable)");
  e->add_option("--fusion", ev.fusion, "none, weighted, cascade-add, cascade-concat (comma list)")
      ->delimiter(',')
      ->capture_default_str();
  e->add_option("--alpha-step", ev.alpha_step, "Weighted-fusion grid step")->capture_default_str();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_flag("--force", ev.force, "Overwrite a non-empty output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& pe) {
    err << "error: usage: " << pe.what() << '\n';
    return 64;
  }

  try {
    if (*s) cmd_synth(synth, out);
    if (*l) cmd_label(label, out);
    if (*t) cmd_train(tr, out);
    if (*e) cmd_evaluate(ev, out);
  } catch (const Error& ex) {
    err << "error: " << to_string(ex.category()) << ": " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    err << "error: internal: " << ex.what() << '\n';
    return 3;
  }
  return 0;
}

}  // namespace nfuse::cli
