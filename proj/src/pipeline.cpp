#include "aoes/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <set>

#include "aoes/checkpoint.hpp"
#include "aoes/error.hpp"
#include "aoes/io.hpp"
#include "aoes/oodstats.hpp"
#include "aoes/rng.hpp"
#include "aoes/text.hpp"
#include "json.hpp"

namespace aoes {

namespace {

using ordered_json = nlohmann::ordered_json;
using json = nlohmann::json;
namespace fs = std::filesystem;

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

}  // namespace

SubSeeds derive_sub_seeds(std::uint64_t global_seed) {
  SubSeeds s;
  s.corpus = sub_seed(global_seed, "corpus");
  s.init = sub_seed(global_seed, "init");
  s.shuffle = sub_seed(global_seed, "shuffle");
  s.perturb = sub_seed(global_seed, "perturb");
  return s;
}

OffTopicPools off_topic_pools(const Corpus& corpus, const std::string& prompt_id) {
  corpus.prompt(prompt_id);
  std::vector<std::string> ids;
  for (const auto& [id, p] : corpus.prompts) ids.push_back(id);
  const auto n = ids.size();
  if (n < 3) {
    throw Error(ErrorCode::kInsufficientResource,
                "disjoint off-topic pools need at least 3 prompts, corpus has " +
                    std::to_string(n));
  }
  const auto pos = static_cast<std::size_t>(
      std::find(ids.begin(), ids.end(), prompt_id) - ids.begin());
  const std::size_t n_train = n / 2;  // ceil((n - 1) / 2)
  OffTopicPools pools;
  for (std::size_t k = 1; k < n; ++k) {
    const auto& other = ids[(pos + k) % n];
    (k <= n_train ? pools.train_prompts : pools.test_prompts).push_back(other);
  }
  for (const auto& e : corpus.essays) {
    if (e.off_topic) continue;
    const bool in_train = std::find(pools.train_prompts.begin(), pools.train_prompts.end(),
                                    e.prompt_id) != pools.train_prompts.end();
    const bool in_test = std::find(pools.test_prompts.begin(), pools.test_prompts.end(),
                                   e.prompt_id) != pools.test_prompts.end();
    if (in_train && e.split == Split::kTrain) pools.train.push_back(e);
    if (in_train && e.split == Split::kDev) pools.dev.push_back(e);
    if (in_test && e.split == Split::kTest) pools.test.push_back(e);
  }
  return pools;
}

const char* calibration_mode_name(CalibrationMode mode) {
  return mode == CalibrationMode::kDev ? "dev" : "test";
}

ModelSpec default_model_spec() { return ModelSpec{}; }

ModelSpec bench_model_spec() {
  ModelSpec spec;
  spec.encoder.init_scale = 0.3;
  spec.head_init_scale = 0.3;
  spec.train.lr = 1e-3;
  spec.train.warmup_steps = 100;
  return spec;
}

namespace {

void apply_model_json(const json& j, ModelSpec& spec) {
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    read_field(e, "d", spec.encoder.d);
    read_field(e, "layers", spec.encoder.layers);
    read_field(e, "max_len", spec.encoder.max_len);
    read_field(e, "positional", spec.encoder.positional);
    read_field(e, "init_scale", spec.encoder.init_scale);
    read_field(e, "seed", spec.encoder.seed);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    read_field(t, "lambda", spec.train.lambda);
    read_field(t, "lr", spec.train.lr);
    read_field(t, "warmup_steps", spec.train.warmup_steps);
    read_field(t, "epochs", spec.train.epochs);
    read_field(t, "batch_size", spec.train.batch_size);
    read_field(t, "seed", spec.train.seed);
    read_field(t, "beta1", spec.train.beta1);
    read_field(t, "beta2", spec.train.beta2);
    read_field(t, "adam_eps", spec.train.adam_eps);
  }
  read_field(j, "head_init_scale", spec.head_init_scale);
}

ordered_json model_json(const ModelSpec& spec) {
  ordered_json j;
  j["encoder"] = {{"d", spec.encoder.d},
                  {"layers", spec.encoder.layers},
                  {"max_len", spec.encoder.max_len},
                  {"positional", spec.encoder.positional},
                  {"init_scale", spec.encoder.init_scale}};
  j["train"] = {{"lambda", spec.train.lambda},         {"lr", spec.train.lr},
                {"warmup_steps", spec.train.warmup_steps}, {"epochs", spec.train.epochs},
                {"batch_size", spec.train.batch_size},  {"beta1", spec.train.beta1},
                {"beta2", spec.train.beta2},            {"adam_eps", spec.train.adam_eps}};
  j["head_init_scale"] = spec.head_init_scale;
  return j;
}

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kBadFormat, std::string(what) + ": " + ex.what());
  }
}

}  // namespace

ModelSpec model_spec_from_json(const std::string& json_text, ModelSpec base) {
  const auto j = parse_json(json_text, "model config");
  try {
    apply_model_json(j, base);
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kBadFormat, std::string("model config: ") + ex.what());
  }
  return base;
}

std::vector<PerturbSpec> BenchConfig::default_perturbations() {
  std::vector<PerturbSpec> out;
  for (auto k : {PerturbKind::kAddSpeech, PerturbKind::kBabelGenerate, PerturbKind::kRepeatSent,
                 PerturbKind::kReplaceSents}) {
    PerturbSpec s;
    s.kind = k;
    out.push_back(s);
  }
  // Intensity sweep around the defaults.
  for (int k : {1, 6}) {
    PerturbSpec s;
    s.kind = PerturbKind::kAddSpeech;
    s.k = k;
    out.push_back(s);
  }
  for (int r : {1, 6}) {
    PerturbSpec s;
    s.kind = PerturbKind::kRepeatSent;
    s.n_repeats = r;
    out.push_back(s);
  }
  return out;
}

void BenchConfig::validate() const {
  spec.encoder.validate();
  spec.train.validate();
  if (essays_path.empty() != prompts_path.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "essays and prompts paths must be given together");
  }
  if (essays_path.empty()) synth.validate();
  if (systems.empty()) throw Error(ErrorCode::kInvalidArgument, "no systems selected");
  std::set<std::string> labels;
  for (const auto& p : perturbations) {
    if (!labels.insert(perturbation_label(p)).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate perturbation '" + perturbation_label(p) + "'");
    }
  }
  if (histogram_bins < 1) throw Error(ErrorCode::kInvalidArgument, "histogram_bins must be >= 1");
  if (budget_seconds < 0) throw Error(ErrorCode::kInvalidArgument, "budget_seconds must be >= 0");
  if (output_dir.empty()) throw Error(ErrorCode::kInvalidArgument, "output directory not set");
}

BenchConfig bench_config_from_json(const std::string& json_text, BenchConfig base) {
  const auto j = parse_json(json_text, "bench config");
  try {
    read_field(j, "dataset", base.dataset);
    read_field(j, "seed", base.seed);
    if (j.contains("synth")) {
      const auto& s = j["synth"];
      read_field(s, "n_prompts", base.synth.n_prompts);
      read_field(s, "essays_per_prompt", base.synth.essays_per_prompt);
      read_field(s, "vocab_shared", base.synth.vocab_shared);
      read_field(s, "vocab_per_topic", base.synth.vocab_per_topic);
      read_field(s, "quality_noise", base.synth.quality_noise);
    }
    if (j.contains("corpus")) {
      std::string essays, prompts;
      read_field(j["corpus"], "essays", essays);
      read_field(j["corpus"], "prompts", prompts);
      base.essays_path = essays;
      base.prompts_path = prompts;
    }
    apply_model_json(j, base.spec);
    if (j.contains("systems")) {
      base.systems.clear();
      for (const auto& s : j["systems"]) base.systems.push_back(parse_system_kind(s.get<std::string>()));
    }
    read_field(j, "prompts", base.prompts);
    if (j.contains("perturbations")) {
      base.perturbations.clear();
      for (const auto& p : j["perturbations"]) {
        base.perturbations.push_back(perturb_spec_from_json(p.dump()));
      }
    }
    if (j.contains("calibration")) {
      const auto mode = j["calibration"].get<std::string>();
      if (mode == "dev") {
        base.calibration = CalibrationMode::kDev;
      } else if (mode == "test") {
        base.calibration = CalibrationMode::kTest;
      } else {
        throw Error(ErrorCode::kInvalidArgument, "calibration must be 'dev' or 'test'");
      }
    }
    read_field(j, "histogram_bins", base.histogram_bins);
    read_field(j, "budget_seconds", base.budget_seconds);
    read_field(j, "include_layer0", base.include_layer0);
    if (j.contains("output_dir")) base.output_dir = j["output_dir"].get<std::string>();
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kBadFormat, std::string("bench config: ") + ex.what());
  }
  return base;
}

std::string bench_config_to_json(const BenchConfig& c) {
  ordered_json j;
  j["dataset"] = c.dataset;
  j["seed"] = c.seed;
  if (c.essays_path.empty()) {
    j["synth"] = {{"n_prompts", c.synth.n_prompts},
                  {"essays_per_prompt", c.synth.essays_per_prompt},
                  {"vocab_shared", c.synth.vocab_shared},
                  {"vocab_per_topic", c.synth.vocab_per_topic},
                  {"quality_noise", c.synth.quality_noise}};
  } else {
    j["corpus"] = {{"essays", c.essays_path.string()}, {"prompts", c.prompts_path.string()}};
  }
  const auto m = model_json(c.spec);
  j["encoder"] = m["encoder"];
  j["train"] = m["train"];
  j["head_init_scale"] = m["head_init_scale"];
  j["systems"] = ordered_json::array();
  for (auto s : c.systems) j["systems"].push_back(system_kind_name(s));
  j["prompts"] = c.prompts;
  j["perturbations"] = ordered_json::array();
  for (const auto& p : c.perturbations) {
    j["perturbations"].push_back(ordered_json::parse(perturb_spec_to_json(p)));
  }
  j["calibration"] = calibration_mode_name(c.calibration);
  j["histogram_bins"] = c.histogram_bins;
  j["budget_seconds"] = c.budget_seconds;
  j["include_layer0"] = c.include_layer0;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Formatting

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v == 0.0 ? 0.0 : v);
  return buf;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "dataset,model,prompt,metric,value\n";
  for (const auto& r : rows) {
    out += r.dataset + "," + r.model + "," + r.prompt + "," + r.metric + "," +
           format_real(r.value) + "\n";
  }
  return out;
}

std::string adversarial_csv(const std::vector<AdversarialRow>& rows) {
  std::string out = "dataset,model,prompt,perturbation,metric,value\n";
  for (const auto& r : rows) {
    out += r.dataset + "," + r.model + "," + r.prompt + "," + r.perturbation + "," + r.metric +
           "," + format_real(r.value) + "\n";
  }
  return out;
}

std::string histogram_csv(const HistogramReport& report) {
  std::string out = "bin_low,bin_high,count_on,count_off\n";
  for (const auto& b : report.bins) {
    out += format_real(b.low) + "," + format_real(b.high) + "," + std::to_string(b.count_on) +
           "," + std::to_string(b.count_off) + "\n";
  }
  return out;
}

std::string summary_json(const BenchReport& report) {
  ordered_json j;
  j["rows"] = ordered_json::array();
  for (const auto& r : report.metrics) {
    j["rows"].push_back({{"dataset", r.dataset},
                         {"model", r.model},
                         {"prompt", r.prompt},
                         {"metric", r.metric},
                         {"value", r.value}});
  }
  j["adversarial"] = ordered_json::array();
  for (const auto& r : report.adversarial) {
    j["adversarial"].push_back({{"dataset", r.dataset},
                                {"model", r.model},
                                {"prompt", r.prompt},
                                {"perturbation", r.perturbation},
                                {"metric", r.metric},
                                {"value", r.value}});
  }
  j["mean_f1"] = ordered_json::object();
  for (const auto& [k, v] : report.mean_f1) j["mean_f1"][k] = v;
  j["comparisons"] = ordered_json::object();
  for (const auto& [k, v] : report.comparisons) j["comparisons"][k] = v;
  return j.dump(2) + "\n";
}

std::optional<double> find_metric(const BenchReport& report, const std::string& model,
                                  const std::string& prompt, const std::string& metric) {
  for (const auto& r : report.metrics) {
    if (r.model == model && r.prompt == prompt && r.metric == metric) return r.value;
  }
  return std::nullopt;
}

std::optional<double> find_adversarial(const BenchReport& report, const std::string& model,
                                       const std::string& prompt, const std::string& perturbation,
                                       const std::string& metric) {
  for (const auto& r : report.adversarial) {
    if (r.model == model && r.prompt == prompt && r.perturbation == perturbation &&
        r.metric == metric) {
      return r.value;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Decisions

DecisionRow make_decision_row(const ScoringModel& model, const LayerStats* stats,
                              const Threshold& threshold, const Prompt& prompt,
                              const Essay& essay) {
  const auto s = score_essay(model, stats, essay);
  const auto d = decide(essay.id, s.detection, s.head.y_s, threshold, prompt);
  DecisionRow row;
  row.essay_id = essay.id;
  row.per_layer = s.mahalanobis.per_layer;
  row.d_total = s.detection;
  row.y_h = s.head.y_h;
  row.y_t = s.head.y_t;
  row.y_s = s.head.y_s;
  row.predicted = d.predicted;
  row.final_score = d.final_score;
  return row;
}

std::string decisions_csv_header(int num_layers) {
  std::string out = "essay_id,d_total";
  for (int l = 0; l < num_layers; ++l) out += ",d_layer" + std::to_string(l + 1);
  return out + ",y_h,y_t,y_s,predicted_class,final_score\n";
}

std::string decision_csv_line(const DecisionRow& row) {
  std::string out = row.essay_id + "," + format_real(row.d_total);
  for (double v : row.per_layer) out += "," + format_real(v);
  out += "," + format_real(row.y_h) + "," + format_real(row.y_t) + "," + format_real(row.y_s) +
         "," + topic_class_name(row.predicted) + "," + std::to_string(row.final_score) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Bench

namespace {

using Clock = std::chrono::steady_clock;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Detector {
  SystemKind system;
  std::optional<ScoringModel> model;
  LayerStats stats;
  bool has_stats = false;
  std::optional<TfidfIndex> tfidf;
  const Prompt* prompt = nullptr;
  std::string artifact_hash;

  double score(const Essay& e) const {
    if (tfidf) return 1.0 - tfidf_similarity(*tfidf, *prompt, e);
    return score_essay(*model, has_stats ? &stats : nullptr, e).detection;
  }
  std::vector<double> scores(const std::vector<Essay>& essays) const {
    std::vector<double> out;
    out.reserve(essays.size());
    for (const auto& e : essays) out.push_back(score(e));
    return out;
  }
};

ConfusionCounts count_at(const std::vector<double>& on, const std::vector<double>& off,
                         double delta) {
  ConfusionCounts c;
  for (double v : on) (v > delta ? c.fp : c.tn)++;
  for (double v : off) (v > delta ? c.tp : c.fn)++;
  return c;
}

Corpus load_corpus(const BenchConfig& config, const SubSeeds& seeds, const fs::path& dir) {
  Corpus corpus;
  if (config.essays_path.empty()) {
    SynthConfig sc = config.synth;
    sc.seed = seeds.corpus;
    corpus = synthesize(sc);
  } else {
    IngestOptions opts;
    opts.split_seed = seeds.corpus;
    corpus = ingest(config.essays_path, IngestFormat::kJsonl,
                    read_prompt_manifest(config.prompts_path), opts);
  }
  fs::create_directories(dir / "corpus");
  write_jsonl(corpus.essays, dir / "corpus" / "essays.jsonl");
  write_prompt_manifest(corpus.prompts, dir / "corpus" / "prompts.json");
  return corpus;
}

std::uint64_t perturb_seed(const PerturbSpec& spec, const SubSeeds& seeds) {
  return spec.seed != 0 ? spec.seed : sub_seed(seeds.perturb, perturbation_label(spec));
}

struct PerturbedSets {
  PerturbSpec spec;
  std::vector<Essay> dev;
  std::vector<Essay> test;
};

std::vector<Essay> with_min_sentences(const std::vector<Essay>& essays, std::size_t n) {
  std::vector<Essay> out;
  for (const auto& e : essays) {
    if (text::split_sentences(e.text).size() >= n) out.push_back(e);
  }
  return out;
}

}  // namespace

BenchReport run_bench(const BenchConfig& config) {
  config.validate();
  const auto start = Clock::now();
  const auto started_at = utc_now();
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  const auto seeds = derive_sub_seeds(config.seed);
  const Corpus corpus = load_corpus(config, seeds, dir);

  std::vector<std::string> prompt_ids = config.prompts;
  if (prompt_ids.empty()) {
    for (const auto& [id, p] : corpus.prompts) prompt_ids.push_back(id);
  }

  ModelSpec spec = config.spec;
  spec.encoder.seed = seeds.init;
  spec.train.seed = seeds.shuffle;

  BenchReport report;
  ordered_json manifest;
  manifest["config"] = ordered_json::parse(bench_config_to_json(config));
  manifest["sub_seeds"] = {{"corpus", seeds.corpus},
                           {"init", seeds.init},
                           {"shuffle", seeds.shuffle},
                           {"perturb", seeds.perturb}};
  manifest["cells"] = ordered_json::array();
  ordered_json meta;
  meta["started_at"] = started_at;
  meta["cells"] = ordered_json::array();

  auto check_budget = [&](const std::string& what) {
    if (config.budget_seconds <= 0) return;
    const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    if (elapsed > config.budget_seconds) {
      throw Error(ErrorCode::kBudgetExceeded,
                  "wall-clock budget of " + format_real(config.budget_seconds) +
                      " s exhausted before " + what + "; rerun to resume");
    }
  };

  auto add = [&](const std::string& model, const std::string& prompt, const std::string& metric,
                 double value) {
    report.metrics.push_back({config.dataset, model, prompt, metric, value});
  };

  for (const auto& pid : prompt_ids) {
    const Prompt& prompt = corpus.prompt(pid);
    const auto pools = off_topic_pools(corpus, pid);
    const auto on_train = corpus.select(pid, Split::kTrain);
    const auto on_dev = corpus.select(pid, Split::kDev);
    const auto on_test = corpus.select(pid, Split::kTest);
    if (on_train.empty() || on_test.empty()) {
      throw Error(ErrorCode::kEmptyInput, "prompt '" + pid + "' lacks train or test essays");
    }
    if (config.calibration == CalibrationMode::kDev && (on_dev.empty() || pools.dev.empty())) {
      throw Error(ErrorCode::kEmptyInput, "prompt '" + pid + "' lacks dev essays for calibration");
    }

    fs::create_directories(dir / "perturb" / pid);
    std::vector<PerturbedSets> perturbed;
    for (const auto& base : config.perturbations) {
      PerturbedSets ps;
      ps.spec = base;
      ps.spec.seed = perturb_seed(base, seeds);
      const bool replace = base.kind == PerturbKind::kReplaceSents;
      const auto dev_src = replace ? with_min_sentences(on_dev, 3) : on_dev;
      const auto test_src = replace ? with_min_sentences(on_test, 3) : on_test;
      if (config.calibration == CalibrationMode::kDev) {
        ps.dev = apply_perturbation(ps.spec, dev_src, pools.dev, prompt);
      }
      ps.test = apply_perturbation(ps.spec, test_src, pools.test, prompt);
      write_jsonl(ps.test, dir / "perturb" / pid / (perturbation_label(base) + ".jsonl"));
      perturbed.push_back(std::move(ps));
    }

    for (auto system : config.systems) {
      const std::string sname = system_kind_name(system);
      const fs::path cell = dir / "cells" / sname / pid;
      fs::create_directories(cell);
      const auto cell_start = Clock::now();
      bool resumed = false;

      Detector det;
      det.system = system;
      det.prompt = &prompt;
      if (auto kind = trained_kind(system)) {
        const fs::path ckpt = cell / "checkpoint.bin";
        const fs::path fp_path = cell / "fingerprint.txt";
        std::string fp_input = model_json(spec).dump() + "\n" + std::to_string(spec.encoder.seed) + " " +
                               std::to_string(spec.train.seed) + "\n" + sname + "\n" + pid + "\n";
        for (const auto& e : on_train) fp_input += essay_to_json_line(e) + "\n";
        for (const auto& e : pools.train) fp_input += essay_to_json_line(e) + "\n";
        const std::string fingerprint = sha256_hex(fp_input);
        if (fs::exists(ckpt) && fs::exists(fp_path) && read_text_file(fp_path) == fingerprint) {
          auto model = load_checkpoint(ckpt);
          if (model.kind != *kind || model.prompt_id != pid) {
            throw Error(ErrorCode::kBadFormat, "checkpoint '" + ckpt.string() +
                                                   "' does not belong to this cell");
          }
          det.model = std::move(model);
          resumed = true;
        } else {
          check_budget("training " + sname + "/" + pid);
          auto trained = train_model(*kind, on_train, pools.train, prompt, spec);
          write_text_file(cell / "loss_trace.csv", loss_trace_csv(*kind, trained.result));
          save_checkpoint(trained.model, ckpt);
          write_text_file(fp_path, fingerprint);
          det.model = std::move(trained.model);
        }
        det.artifact_hash = file_sha256(ckpt);
        if (uses_mahalanobis(*kind)) {
          det.stats = batch_extract_and_fit(det.model->encoder, on_train, config.include_layer0).stats;
          det.has_stats = true;
          save_stats(det.stats, det.artifact_hash, cell / "stats.bin");
          det.artifact_hash = file_sha256(cell / "stats.bin");
        }
      } else {
        std::vector<std::string> docs;
        for (const auto& e : on_train) docs.push_back(e.text);
        for (const auto& e : pools.train) docs.push_back(e.text);
        det.tfidf = TfidfIndex::fit(docs);
      }
      if (det.model) resumed ? ++report.cells_resumed : ++report.cells_trained;

      const auto s_on_test = det.scores(on_test);
      const auto s_off_test = det.scores(pools.test);
      std::vector<double> s_on_cal, s_off_cal;
      if (config.calibration == CalibrationMode::kDev) {
        s_on_cal = det.scores(on_dev);
        s_off_cal = det.scores(pools.dev);
      } else {
        s_on_cal = s_on_test;
        s_off_cal = s_off_test;
      }
      auto eer = calibrate_eer(s_on_cal, s_off_cal);
      eer.threshold.source_stats_hash = det.artifact_hash;
      eer.threshold.params["calibration_" + std::string(calibration_mode_name(config.calibration))] = 1.0;
      save_threshold(eer.threshold, cell / "threshold.json");

      const auto dm = detection_metrics(count_at(s_on_test, s_off_test, eer.threshold.delta));
      add(sname, pid, "precision", dm.precision);
      add(sname, pid, "recall", dm.recall);
      add(sname, pid, "f1", dm.f1);
      add(sname, pid, "fpr", false_positive_rate(s_on_test, eer.threshold.delta));
      add(sname, pid, "fnr", false_negative_rate(s_off_test, eer.threshold.delta));
      add(sname, pid, "delta", eer.threshold.delta);

      if (det.model) {
        std::vector<int> pred, gold;
        std::vector<double> ys, gs;
        std::string decisions = decisions_csv_header(det.has_stats ? det.stats.num_layers() : 0);
        for (const auto* set : {&on_test, &pools.test}) {
          for (const auto& e : *set) {
            const auto row = make_decision_row(*det.model, det.has_stats ? &det.stats : nullptr,
                                               eer.threshold, prompt, e);
            decisions += decision_csv_line(row);
            if (set == &on_test && e.gold_score) {
              pred.push_back(denormalize_score(row.y_s, prompt));
              gold.push_back(*e.gold_score);
              ys.push_back(row.y_s);
              gs.push_back(*e.gold_score);
            }
          }
        }
        write_text_file(cell / "decisions.csv", decisions);
        if (pred.size() >= 2) {
          try {
            add(sname, pid, "qwk", qwk(pred, gold, prompt.score_min, prompt.score_max));
          } catch (const Error& ex) {
            if (ex.code() != ErrorCode::kDegenerateMarginals) throw;
          }
          try {
            add(sname, pid, "pearson", pearson(ys, gs));
          } catch (const Error& ex) {
            if (ex.code() != ErrorCode::kZeroVariance) throw;
          }
        }
      }

      const auto hist = histogram_report(s_on_test, s_off_test, config.histogram_bins);
      write_text_file(dir / "histograms" / (sname + "_" + pid + ".csv"), histogram_csv(hist));
      add(sname, pid, "overlap", hist.overlap);

      for (const auto& ps : perturbed) {
        const std::string pname = perturbation_label(ps.spec);
        if (ps.test.empty()) continue;
        const auto s_adv_test = det.scores(ps.test);
        const auto cal = config.calibration == CalibrationMode::kDev
                             ? calibrate_eer(s_on_cal, det.scores(ps.dev))
                             : calibrate_eer(s_on_test, s_adv_test);
        const auto am = detection_metrics(count_at(s_on_test, s_adv_test, cal.threshold.delta));
        auto adv = [&](const char* metric, double v) {
          report.adversarial.push_back({config.dataset, sname, pid, pname, metric, v});
        };
        adv("precision", am.precision);
        adv("recall", am.recall);
        adv("f1", am.f1);
        adv("delta", cal.threshold.delta);
      }

      manifest["cells"].push_back({{"model", sname},
                                   {"prompt", pid},
                                   {"artifact_sha256", det.artifact_hash},
                                   {"off_topic_train_prompts", pools.train_prompts},
                                   {"off_topic_test_prompts", pools.test_prompts}});
      meta["cells"].push_back(
          {{"model", sname},
           {"prompt", pid},
           {"resumed", resumed},
           {"seconds", std::chrono::duration<double>(Clock::now() - cell_start).count()}});
    }
  }

  for (auto system : config.systems) {
    const std::string sname = system_kind_name(system);
    double sum = 0.0;
    for (const auto& pid : prompt_ids) sum += *find_metric(report, sname, pid, "f1");
    report.mean_f1[sname] = sum / static_cast<double>(prompt_ids.size());
  }
  if (report.mean_f1.count("aoes")) {
    for (const auto& [name, f1] : report.mean_f1) {
      if (name != "aoes") report.comparisons["aoes>=" + name] = report.mean_f1["aoes"] >= f1;
    }
  }

  write_text_file(dir / "metrics.csv", metrics_csv(report.metrics));
  write_text_file(dir / "adversarial.csv", adversarial_csv(report.adversarial));
  write_text_file(dir / "summary.json", summary_json(report));
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  meta["finished_at"] = utc_now();
  meta["seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  meta["cells_trained"] = report.cells_trained;
  meta["cells_resumed"] = report.cells_resumed;
  write_text_file(dir / "run_meta.json", meta.dump(2) + "\n");
  return report;
}

}  // namespace aoes
