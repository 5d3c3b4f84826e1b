// recapd: command-line entry point for data synthesis, training,
// evaluation, ablation, explanation export and gradient checks.
//
// Exit codes: 0 ok, 1 internal error, 2 usage, 3 I/O, 4 configuration,
// 5 numeric failure, 6 invalid data (shape or value errors).

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "recapd/checkpoint.hpp"
#include "recapd/config.hpp"
#include "recapd/explain.hpp"
#include "recapd/gradient_suite.hpp"
#include "recapd/protocol.hpp"
#include "recapd/synthetic.hpp"

namespace fs = std::filesystem;
using namespace recapd;

namespace {

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kIo = 3, kConfig = 4, kNumeric = 5, kData = 6 };

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string seeds;
  std::optional<std::size_t> jobs;
  std::string data;
  std::string variant;
  std::string protocol;
  std::string checkpoint;
  std::optional<std::size_t> max_svg;
  std::size_t trials = 100;
  std::uint64_t first_seed = 0;
};

int report_error(const std::string& kind, const std::string& message, int code) {
  Json j;
  j["error"] = kind;
  j["message"] = message;
  j["exit_code"] = code;
  std::cerr << j.dump() << "\n";
  return code;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    try {
      out.push_back(std::stoull(item, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("--seeds: '" + item + "' is not a non-negative integer");
  }
  if (out.empty()) throw ConfigError("--seeds: empty seed list");
  return out;
}

fs::path default_out(const std::string& command) {
  const char* env = std::getenv("RECAPD_OUT");
  return fs::path(env && *env ? env : "runs") / command;
}

/// defaults < feature manifest < --config < --set < dedicated flags.
Json resolve(const Options& o, const FeatureManifest* fm, const std::vector<std::string>& flag_overrides) {
  Json cfg = default_config();
  if (fm) apply_feature_manifest(cfg, *fm);
  if (!o.config.empty()) merge_config(cfg, load_config_file(o.config));
  for (const auto& s : o.sets) apply_override(cfg, s);
  for (const auto& s : flag_overrides) apply_override(cfg, s);
  return cfg;
}

std::string json_override(const std::string& key, const Json& value) { return key + "=" + value.dump(); }

struct Run {
  Json cfg;
  fs::path out;
  fs::path data;
  std::optional<FeatureManifest> manifest;
};

/// Resolves the configuration (loading the feature manifest of the data
/// directory when one is needed) and prepares the output directory.
Run prepare(const std::string& command, const Options& o, std::vector<std::string> flags, bool needs_data) {
  if (!o.data.empty()) flags.push_back(json_override("data.dir", o.data));
  if (o.jobs) flags.push_back(json_override("jobs", *o.jobs));
  Run run;
  run.cfg = resolve(o, nullptr, flags);
  if (needs_data) {
    const std::string dir = run.cfg["data"]["dir"].get<std::string>();
    if (dir.empty()) throw ConfigError(command + ": no dataset given (use --data or data.dir)");
    run.data = dir;
    run.manifest = load_feature_manifest(run.data / kFeatureManifestFile);
    run.cfg = resolve(o, &*run.manifest, flags);
  }
  run.out = o.out.empty() ? default_out(command) : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(run.out, ec);
  if (ec) throw IoError("cannot create output directory '" + run.out.string() + "': " + ec.message());
  write_text_file(run.out / "resolved_config.json", run.cfg.dump(2) + "\n");
  return run;
}

Dataset load_data(const Run& run) {
  return load_dataset_dir(run.data, run.cfg["model"]["D"].get<std::size_t>());
}

int cmd_synth(const Options& o) {
  std::vector<std::string> flags;
  if (!o.seeds.empty()) flags.push_back(json_override("synth.seed", parse_seeds(o.seeds).front()));
  Run run = prepare("synth", o, flags, false);
  const SynthConfig sc = synth_config(run.cfg);
  const Dataset ds = write_synthetic(sc, run.out);
  const PlantReport plant = plant_check(ds, sc.informative_aspect);
  write_text_file(run.out / "plant_check.json", to_json(plant).dump(2) + "\n");
  std::cout << "wrote " << ds.size() << " utterances from " << ds.speakers().size() << " speakers to " << run.out.string()
            << "\n";
  std::cout << "bayes accuracy " << sc.bayes_accuracy() << ", probe accuracy on '"
            << plant.aspect_names[sc.informative_aspect] << "' " << plant.probe_accuracy[sc.informative_aspect] << "\n";
  if (plant.mismatch) std::cerr << "warning: planted aspect is not the clear best probe (see plant_check.json)\n";
  return kOk;
}

int cmd_train(const Options& o) {
  std::vector<std::string> flags;
  if (!o.variant.empty()) flags.push_back(json_override("model.variant", o.variant));
  if (!o.seeds.empty()) flags.push_back(json_override("train.seed", parse_seeds(o.seeds).front()));
  Run run = prepare("train", o, flags, true);
  const Dataset ds = load_data(run);
  const ModelConfig model = model_config(run.cfg, run.manifest->specs());
  const TrainOptions topts = train_options(run.cfg);
  TrainResult res = train_model(ds, model, topts, Rng(model.seed).split(3));
  save_params(run.out / "model.ckpt", model, res.params);
  write_text_file(run.out / "feature_stats.json", to_json(res.stats).dump(2) + "\n");
  Json log;
  log["architecture"] = model.architecture_string();
  log["utterances"] = ds.size();
  log["epochs"] = res.epochs;
  log["train_loss"] = res.train_loss;
  write_text_file(run.out / "train_log.json", log.dump(2) + "\n");
  std::cout << "trained " << to_string(model.variant) << " on " << ds.size() << " utterances for " << res.epochs
            << " epochs, final loss " << res.train_loss.back() << "\n";
  return kOk;
}

void write_report(const Run& run, const EvalReport& rep) {
  write_text_file(run.out / "eval_report.json", to_json(rep).dump(2) + "\n");
  const std::string table = format_table(rep);
  write_text_file(run.out / "eval_report.txt", table);
  std::cout << table;
}

int cmd_eval(const Options& o) {
  std::vector<std::string> flags;
  if (!o.protocol.empty()) flags.push_back(json_override("eval.protocol", o.protocol));
  if (!o.seeds.empty()) flags.push_back(json_override("eval.seeds", parse_seeds(o.seeds)));
  if (!o.variant.empty()) {
    flags.push_back(json_override("model.variant", o.variant));
    flags.push_back(json_override("eval.variants", Json::array({o.variant})));
  }
  Run run = prepare("eval", o, flags, true);
  const Dataset ds = load_data(run);
  const ModelConfig base = model_config(run.cfg, run.manifest->specs());
  const TrainOptions topts = train_options(run.cfg);
  const EvalOptions eopts = eval_options(run.cfg);
  const std::string protocol = run.cfg["eval"]["protocol"].get<std::string>();
  if (protocol == "a") {
    write_report(run, run_protocol_A(ds, base.variant, base, topts, eopts));
  } else if (protocol == "b") {
    write_report(run, run_protocol_B(ds, eval_variants(run.cfg), base, topts, eopts));
  } else {
    throw ConfigError("eval.protocol must be \"a\" or \"b\", got \"" + protocol + "\"");
  }
  return kOk;
}

int cmd_ablate(const Options& o) {
  std::vector<std::string> flags{json_override("eval.protocol", "b"),
                                 json_override("eval.variants", Json::array({"m1", "m2", "m3", "m4"}))};
  if (!o.seeds.empty()) flags.push_back(json_override("eval.seeds", parse_seeds(o.seeds)));
  Run run = prepare("ablate", o, flags, true);
  const Dataset ds = load_data(run);
  const ModelConfig base = model_config(run.cfg, run.manifest->specs());
  write_report(run, run_protocol_B(ds, eval_variants(run.cfg), base, train_options(run.cfg), eval_options(run.cfg)));
  return kOk;
}

std::string file_stem(std::size_t index, const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  char prefix[16];
  std::snprintf(prefix, sizeof prefix, "%04zu_", index);
  return prefix + s;
}

Json cohort_entry(const std::vector<const ExplanationRecord*>& recs, const std::vector<std::string>& names) {
  Json j;
  j["utterances"] = recs.size();
  if (recs.empty()) return j;
  std::vector<double> mean(names.size(), 0.0);
  for (const auto* r : recs)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += r->mean_scores[k] / static_cast<double>(recs.size());
  const auto best = std::max_element(mean.begin(), mean.end()) - mean.begin();
  j["mean_scores"] = mean;
  j["dominant"] = names[static_cast<std::size_t>(best)];
  return j;
}

int cmd_explain(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("explain: --checkpoint <train output dir> is required");
  const fs::path ckpt_dir = o.checkpoint;
  const Json trained = read_json_file(ckpt_dir / "resolved_config.json");
  std::vector<std::string> flags;
  for (const char* key : {"variant", "D", "hidden1", "hidden2", "dropout", "max_frames"})
    flags.push_back(json_override(std::string("model.") + key, trained.at("model").at(key)));
  flags.push_back(json_override("train.seed", trained.at("train").at("seed")));
  if (o.max_svg) flags.push_back(json_override("explain.max_svg", *o.max_svg));
  Run run = prepare("explain", o, flags, true);
  const ModelConfig model = model_config(run.cfg, run.manifest->specs());
  if (model.variant != Variant::kM4) {
    throw ConfigError("explain: aspect scores exist only for m4, checkpoint is " + to_string(model.variant));
  }
  const ModelParams params = load_params(ckpt_dir / "model.ckpt", model);
  const FeatureStats stats = feature_stats_from_json(read_json_file(ckpt_dir / "feature_stats.json"),
                                                     (ckpt_dir / "feature_stats.json").string());
  const Dataset ds = load_data(run);
  std::vector<std::string> names;
  for (const auto& a : model.aspects) names.push_back(a.name);

  std::vector<ExplanationRecord> records;
  Rng unused(0);
  for (const auto& u : ds.samples) {
    PredictionOutput p = predict(u.embeddings(), normalize_features(u.features, stats), model, params, unused);
    records.push_back(make_record(u.utterance_id, names, p.scores.at(0).weights, p.pd_probability(),
                                  static_cast<int>(u.label)));
  }
  export_csv(records, run.out / "explanations.csv", names);
  export_json(records, run.out / "explanations.json");

  const std::size_t max_svg = run.cfg["explain"]["max_svg"].get<std::size_t>();
  const fs::path svg_dir = run.out / "heatmaps";
  fs::create_directories(svg_dir);
  for (std::size_t i = 0; i < std::min(max_svg, records.size()); ++i)
    render_heatmap_svg(records[i], svg_dir / (file_stem(i, records[i].utterance_id) + ".svg"));

  std::vector<const ExplanationRecord*> all, hc, pd;
  for (const auto& r : records) {
    all.push_back(&r);
    (r.label == static_cast<int>(kLabelPD) ? pd : hc).push_back(&r);
  }
  Json summary;
  summary["aspects"] = names;
  summary["all"] = cohort_entry(all, names);
  summary["HC"] = cohort_entry(hc, names);
  summary["PD"] = cohort_entry(pd, names);
  write_text_file(run.out / "cohort_summary.json", summary.dump(2) + "\n");
  std::cout << "explained " << records.size() << " utterances, " << std::min(max_svg, records.size())
            << " heatmaps in " << svg_dir.string() << "\n";
  if (!all.empty()) std::cout << "cohort dominant aspect: " << summary["all"]["dominant"].get<std::string>() << "\n";
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  if (o.trials == 0) throw ConfigError("gradcheck: --trials must be positive");
  const fs::path out = o.out.empty() ? default_out("gradcheck") : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  const GradSuiteReport rep = run_gradient_suite(o.trials, o.first_seed);
  Json j;
  j["trials"] = o.trials;
  j["first_seed"] = o.first_seed;
  j["max_rel_error"] = rep.max_rel_error;
  j["failures"] = rep.failures;
  j["cases"] = Json::array();
  for (const auto& c : rep.cases)
    j["cases"].push_back({{"name", c.name}, {"seed", c.seed}, {"max_rel_error", c.max_rel_error}, {"passed", c.passed}});
  write_text_file(out / "gradcheck.json", j.dump(2) + "\n");
  std::cout << rep.cases.size() << " checks over " << o.trials << " seeds, max relative error " << rep.max_rel_error
            << ", failures " << rep.failures << "\n";
  if (!rep.passed()) throw NumericError("gradient check failed in " + std::to_string(rep.failures) + " case(s)");
  return kOk;
}

void add_common(CLI::App* sub, Options& o, bool data) {
  sub->add_option("--config", o.config, "JSON configuration file");
  sub->add_option("--set", o.sets, "Override one config key, e.g. train.epochs=3 (repeatable)")
      ->allow_extra_args(false);
  sub->add_option("--out", o.out, "Output directory (default $RECAPD_OUT/<command> or runs/<command>)");
  if (data) {
    sub->add_option("--data", o.data, "Dataset directory with manifest.jsonl and feature_manifest.json");
    sub->add_option("--jobs", o.jobs, "Worker threads (0 = logical cores)");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recapd: aspect-informed speech classification with explainable attention"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with a planted aspect signal");
  add_common(synth, o, false);
  synth->add_option("--seeds", o.seeds, "Generator seed (first value is used)");

  auto* train = app.add_subcommand("train", "Train one model on a whole dataset");
  add_common(train, o, true);
  train->add_option("--variant", o.variant, "Model variant")->check(CLI::IsMember({"m1", "m2", "m3", "m4"}));
  train->add_option("--seeds", o.seeds, "Training seed (first value is used)");

  auto* eval = app.add_subcommand("eval", "Cross-validated evaluation under protocol a or b");
  add_common(eval, o, true);
  eval->add_option("--variant", o.variant, "Variant to evaluate")->check(CLI::IsMember({"m1", "m2", "m3", "m4"}));
  eval->add_option("--protocol", o.protocol, "a: per task, b: combined tasks")->check(CLI::IsMember({"a", "b"}));
  eval->add_option("--seeds", o.seeds, "Comma-separated training seeds");

  auto* ablate = app.add_subcommand("ablate", "Protocol b over m1..m4 with signed-rank comparisons");
  add_common(ablate, o, true);
  ablate->add_option("--seeds", o.seeds, "Comma-separated training seeds");

  auto* explain = app.add_subcommand("explain", "Export m4 aspect scores as CSV, JSON and SVG heatmaps");
  add_common(explain, o, true);
  explain->add_option("--checkpoint", o.checkpoint, "Output directory of a 'train' run");
  explain->add_option("--max-svg", o.max_svg, "Number of utterance heatmaps to render");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and variant");
  gradcheck->add_option("--out", o.out, "Output directory");
  gradcheck->add_option("--trials", o.trials, "Number of random seeds")->capture_default_str();
  gradcheck->add_option("--first-seed", o.first_seed, "First seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kUsage);
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*ablate) return cmd_ablate(o);
    if (*explain) return cmd_explain(o);
    return cmd_gradcheck(o);
  } catch (const Error& e) {
    switch (e.kind()) {
      case Error::Kind::kIo: return report_error("io", e.what(), kIo);
      case Error::Kind::kConfig: return report_error("config", e.what(), kConfig);
      case Error::Kind::kNumeric: return report_error("numeric", e.what(), kNumeric);
      case Error::Kind::kDimension: return report_error("dimension", e.what(), kData);
      case Error::Kind::kValue: return report_error("value", e.what(), kData);
    }
    return report_error("internal", e.what(), kInternal);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), kInternal);
  }
}
