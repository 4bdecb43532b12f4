#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aoes/adversary.hpp"
#include "aoes/baselines.hpp"
#include "aoes/calibrate.hpp"
#include "aoes/checkpoint.hpp"
#include "aoes/corpus.hpp"
#include "aoes/error.hpp"
#include "aoes/io.hpp"
#include "aoes/metrics.hpp"
#include "aoes/oodstats.hpp"
#include "aoes/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace aoes;

namespace {

constexpr const char* kOutputRootEnv = "AOES_OUTPUT_ROOT";

fs::path output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "aoes_out";
}

struct CorpusArgs {
  std::string dir;
  std::string essays;
  std::string prompts;

  void add(CLI::App* cmd) {
    cmd->add_option("--corpus", dir, "Directory holding essays.jsonl and prompts.json");
    cmd->add_option("--essays", essays, "Essay JSONL (overrides --corpus)");
    cmd->add_option("--prompts", prompts, "Prompt manifest JSON (overrides --corpus)");
  }

  fs::path essays_path() const { return essays.empty() ? fs::path(dir) / "essays.jsonl" : fs::path(essays); }
  fs::path prompts_path() const {
    return prompts.empty() ? fs::path(dir) / "prompts.json" : fs::path(prompts);
  }

  Corpus load() const {
    if (dir.empty() && (essays.empty() || prompts.empty())) {
      throw Error(ErrorCode::kInvalidArgument, "give --corpus or both --essays and --prompts");
    }
    return ingest(essays_path(), IngestFormat::kJsonl, read_prompt_manifest(prompts_path()));
  }
};

struct ModelFlags {
  std::string config;
  std::optional<double> lr, lambda, init_scale;
  std::optional<int> epochs, warmup, batch, d, layers, max_len;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON config file");
    cmd->add_option("--lr", lr, "Peak learning rate");
    cmd->add_option("--lambda", lambda, "Topic-loss weight");
    cmd->add_option("--init-scale", init_scale, "Uniform init half-width (encoder and head)");
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--warmup", warmup, "Linear warmup steps");
    cmd->add_option("--batch-size", batch);
    cmd->add_option("--dim", d, "Hidden width d");
    cmd->add_option("--layers", layers);
    cmd->add_option("--max-len", max_len);
    cmd->add_option("--seed", seed, "Seed for initialization and shuffling");
  }

  void apply(ModelSpec& spec) const {
    if (lr) spec.train.lr = *lr;
    if (lambda) spec.train.lambda = *lambda;
    if (init_scale) spec.encoder.init_scale = spec.head_init_scale = *init_scale;
    if (epochs) spec.train.epochs = *epochs;
    if (warmup) spec.train.warmup_steps = *warmup;
    if (batch) spec.train.batch_size = *batch;
    if (d) spec.encoder.d = *d;
    if (layers) spec.encoder.layers = *layers;
    if (max_len) spec.encoder.max_len = *max_len;
    if (seed) spec.encoder.seed = spec.train.seed = *seed;
  }

  ModelSpec resolve() const {
    ModelSpec spec = default_model_spec();
    if (!config.empty()) spec = model_spec_from_json(read_text_file(config), spec);
    apply(spec);
    spec.encoder.validate();
    spec.train.validate();
    return spec;
  }
};

bool has_rows(const fs::path& path) {
  const auto content = read_text_file(path);
  return content.find_first_not_of(" \t\r\n") != std::string::npos;
}

// Stats must pair with the checkpoint file and the threshold with the stats.
void check_hashes(const fs::path& ckpt, const fs::path& stats_path, const std::string& stats_ckpt_hash,
                  const Threshold* threshold) {
  if (stats_ckpt_hash != file_sha256(ckpt)) {
    throw Error(ErrorCode::kHashMismatch, "stats '" + stats_path.string() +
                                              "' were not fitted on checkpoint '" + ckpt.string() + "'");
  }
  if (threshold && !threshold->source_stats_hash.empty() &&
      threshold->source_stats_hash != file_sha256(stats_path)) {
    throw Error(ErrorCode::kHashMismatch, "threshold was not calibrated on stats '" +
                                              stats_path.string() + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint essay scoring and off-topic detection"};
  app.require_subcommand(1);
  std::string out_flag;
  app.add_option("--out", out_flag,
                 std::string("Output directory (default: $") + kOutputRootEnv + " or ./aoes_out)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic prompt-conditioned corpus");
  SynthConfig sc;
  synth->add_option("--seed", sc.seed);
  synth->add_option("--prompts", sc.n_prompts);
  synth->add_option("--essays-per-prompt", sc.essays_per_prompt);
  synth->add_option("--vocab-shared", sc.vocab_shared);
  synth->add_option("--vocab-per-topic", sc.vocab_per_topic);
  synth->add_option("--quality-noise", sc.quality_noise);

  // ingest
  auto* ing = app.add_subcommand("ingest", "Normalize an essay dataset into corpus JSONL");
  std::string ing_input, ing_format = "jsonl", ing_prompts;
  IngestOptions ing_opts;
  ing->add_option("--input", ing_input)->required();
  ing->add_option("--format", ing_format)->check(CLI::IsMember({"jsonl", "tsv"}));
  ing->add_option("--prompts", ing_prompts, "Prompt manifest (default for tsv: ASAP ranges)");
  ing->add_option("--split-seed", ing_opts.split_seed);
  ing->add_flag("--skip-bad-rows", ing_opts.skip_bad_rows);

  // train
  auto* tr = app.add_subcommand("train", "Train one model for one prompt");
  CorpusArgs tr_corpus;
  ModelFlags tr_flags;
  std::string tr_prompt, tr_model = "aoes";
  tr_corpus.add(tr);
  tr_flags.add(tr);
  tr->add_option("--prompt-id", tr_prompt)->required();
  tr->add_option("--model", tr_model, "aoes|aoes-no-trm|aoes-l2|baseline1|baseline2");

  // fit-stats
  auto* fs_cmd = app.add_subcommand("fit-stats", "Fit layer-wise Gaussian statistics");
  CorpusArgs fs_corpus;
  std::string fs_ckpt;
  bool fs_layer0 = false;
  fs_corpus.add(fs_cmd);
  fs_cmd->add_option("--checkpoint", fs_ckpt)->required();
  fs_cmd->add_flag("--include-layer0", fs_layer0, "Also use the embedding layer");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Pick the detection threshold");
  CorpusArgs cal_corpus;
  std::string cal_ckpt, cal_stats, cal_method = "eer";
  double cal_q = 0.95;
  cal_corpus.add(cal);
  cal->add_option("--checkpoint", cal_ckpt)->required();
  cal->add_option("--stats", cal_stats, "Required for Mahalanobis models");
  cal->add_option("--method", cal_method)->check(CLI::IsMember({"eer", "quantile"}));
  cal->add_option("--quantile", cal_q, "Quantile level of on-topic training scores");

  // detect / score
  struct DetectArgs {
    std::string ckpt, stats, threshold, input, prompts, output;
  };
  DetectArgs det_args, score_args;
  auto add_detect = [](CLI::App* cmd, DetectArgs& a) {
    cmd->add_option("--checkpoint", a.ckpt)->required();
    cmd->add_option("--stats", a.stats, "Required for Mahalanobis models");
    cmd->add_option("--threshold", a.threshold)->required();
    cmd->add_option("--input", a.input)->required();
    cmd->add_option("--prompts", a.prompts, "Prompt manifest (default: next to --input)");
    cmd->add_option("--output", a.output, "CSV path (default: <out>/<command>.csv)");
  };
  auto* det = app.add_subcommand("detect", "Classify essays as on- or off-topic");
  add_detect(det, det_args);
  auto* sco = app.add_subcommand("score", "Score essays, zeroing detected off-topic ones");
  add_detect(sco, score_args);

  // perturb
  auto* per = app.add_subcommand("perturb", "Generate adversarial essays");
  CorpusArgs per_corpus;
  std::string per_manifest, per_prompt, per_split = "test";
  per_corpus.add(per);
  per->add_option("--manifest", per_manifest, "Perturbation JSON (object or array)")->required();
  per->add_option("--prompt-id", per_prompt)->required();
  per->add_option("--source-split", per_split)->check(CLI::IsMember({"train", "dev", "test"}));

  // eval
  auto* ev = app.add_subcommand("eval", "Compute metrics from a decisions CSV");
  std::string ev_decisions, ev_gold, ev_prompts, ev_dataset = "custom", ev_model = "aoes";
  int ev_bins = 20;
  ev->add_option("--decisions", ev_decisions)->required();
  ev->add_option("--gold", ev_gold, "Labelled JSONL")->required();
  ev->add_option("--prompts", ev_prompts, "Prompt manifest (default: next to --gold)");
  ev->add_option("--bins", ev_bins);
  ev->add_option("--dataset", ev_dataset);
  ev->add_option("--model", ev_model, "Model name recorded in the rows");

  // bench
  auto* be = app.add_subcommand("bench", "Run the full experiment matrix");
  std::string be_config, be_calibration;
  std::optional<std::uint64_t> be_seed;
  std::optional<double> be_budget;
  std::optional<int> be_epochs;
  be->add_option("--config", be_config, "JSON bench config");
  be->add_option("--seed", be_seed, "Global seed");
  be->add_option("--budget", be_budget, "Wall-clock budget in seconds");
  be->add_option("--epochs", be_epochs);
  be->add_option("--calibration", be_calibration, "dev, or test to calibrate on the test split")
      ->check(CLI::IsMember({"dev", "test"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const fs::path out = output_root(out_flag);

    if (*synth) {
      const auto corpus = synthesize(sc);
      fs::create_directories(out);
      write_jsonl(corpus.essays, out / "essays.jsonl");
      write_prompt_manifest(corpus.prompts, out / "prompts.json");
      std::cout << "wrote " << corpus.essays.size() << " essays to " << out.string() << "\n";
    } else if (*ing) {
      const auto format = ing_format == "tsv" ? IngestFormat::kTsv : IngestFormat::kJsonl;
      std::map<std::string, Prompt> prompts;
      if (!ing_prompts.empty()) {
        prompts = read_prompt_manifest(ing_prompts);
      } else if (format == IngestFormat::kTsv) {
        prompts = asap_prompts();
      } else {
        throw Error(ErrorCode::kInvalidArgument, "--prompts is required for jsonl input");
      }
      if (!fs::exists(ing_input)) throw Error(ErrorCode::kIo, "no such file '" + ing_input + "'");
      std::vector<IngestDiagnostic> diags;
      const auto corpus = ingest(ing_input, format, prompts, ing_opts, &diags);
      for (const auto& d : diags) std::cerr << "skipped row " << d.row << ": " << d.reason << "\n";
      std::map<std::string, Prompt> used;
      for (const auto& e : corpus.essays) used[e.prompt_id] = corpus.prompt(e.prompt_id);
      fs::create_directories(out);
      write_jsonl(corpus.essays, out / "essays.jsonl");
      write_prompt_manifest(used, out / "prompts.json");
      std::cout << "wrote " << corpus.essays.size() << " essays to " << out.string() << "\n";
    } else if (*tr) {
      const auto kind = parse_model_kind(tr_model);
      const auto spec = tr_flags.resolve();
      const auto corpus = tr_corpus.load();
      const auto& prompt = corpus.prompt(tr_prompt);
      std::vector<Essay> off_train;
      if (kind == ModelKind::kBaseline1 || kind == ModelKind::kBaseline2) {
        off_train = off_topic_pools(corpus, tr_prompt).train;
      }
      const auto trained =
          train_model(kind, corpus.select(tr_prompt, Split::kTrain), off_train, prompt, spec);
      fs::create_directories(out);
      save_checkpoint(trained.model, out / "checkpoint.bin");
      write_text_file(out / "loss_trace.csv", loss_trace_csv(kind, trained.result));
      std::cout << "checkpoint " << file_sha256(out / "checkpoint.bin") << "\n";
    } else if (*fs_cmd) {
      const auto model = load_checkpoint(fs_ckpt);
      if (!uses_mahalanobis(model.kind)) {
        throw Error(ErrorCode::kInvalidArgument, "model kind has no Mahalanobis detector");
      }
      const auto corpus = fs_corpus.load();
      if (!corpus.prompts.count(model.prompt_id)) {
        throw Error(ErrorCode::kUnknownPrompt,
                    "checkpoint prompt '" + model.prompt_id + "' is not in the corpus");
      }
      const auto train_essays = corpus.select(model.prompt_id, Split::kTrain);
      const auto ex = batch_extract_and_fit(model.encoder, train_essays, fs_layer0);
      fs::create_directories(out);
      save_stats(ex.stats, file_sha256(fs_ckpt), out / "stats.bin");
      std::cout << "stats over " << ex.stats.m << " essays, " << ex.stats.num_layers()
                << " layers\n";
    } else if (*cal) {
      const auto model = load_checkpoint(cal_ckpt);
      const auto corpus = cal_corpus.load();
      const auto& prompt = corpus.prompt(model.prompt_id);
      std::optional<LayerStats> stats;
      std::string source_hash = file_sha256(cal_ckpt);
      if (uses_mahalanobis(model.kind)) {
        if (cal_stats.empty()) throw Error(ErrorCode::kInvalidArgument, "--stats is required");
        std::string ckpt_hash;
        stats = load_stats(cal_stats, &ckpt_hash);
        check_hashes(cal_ckpt, cal_stats, ckpt_hash, nullptr);
        source_hash = file_sha256(cal_stats);
      }
      auto scores = [&](const std::vector<Essay>& essays) {
        std::vector<double> v;
        for (const auto& e : essays) v.push_back(score_essay(model, stats ? &*stats : nullptr, e).detection);
        return v;
      };
      Threshold t;
      if (cal_method == "eer") {
        const auto on = scores(corpus.select(prompt.id, Split::kDev));
        const auto off = scores(off_topic_pools(corpus, prompt.id).dev);
        auto eer = calibrate_eer(on, off);
        std::cout << "eer fpr " << format_real(eer.fpr) << " fnr " << format_real(eer.fnr) << "\n";
        t = eer.threshold;
      } else {
        t = calibrate_quantile(scores(corpus.select(prompt.id, Split::kTrain)), cal_q);
      }
      t.source_stats_hash = source_hash;
      fs::create_directories(out);
      save_threshold(t, out / "threshold.json");
      std::cout << "delta " << format_real(t.delta) << "\n";
    } else if (*det || *sco) {
      const auto& a = *det ? det_args : score_args;
      const auto model = load_checkpoint(a.ckpt);
      const auto threshold = load_threshold(a.threshold);
      std::optional<LayerStats> stats;
      if (uses_mahalanobis(model.kind)) {
        if (a.stats.empty()) throw Error(ErrorCode::kInvalidArgument, "--stats is required");
        std::string ckpt_hash;
        stats = load_stats(a.stats, &ckpt_hash);
        check_hashes(a.ckpt, a.stats, ckpt_hash, &threshold);
      } else if (!threshold.source_stats_hash.empty() &&
                 threshold.source_stats_hash != file_sha256(a.ckpt)) {
        throw Error(ErrorCode::kHashMismatch, "threshold was not calibrated on this checkpoint");
      }
      const fs::path output =
          a.output.empty() ? out / (std::string(*det ? "detect" : "score") + ".csv") : fs::path(a.output);
      std::string csv = decisions_csv_header(stats ? stats->num_layers() : 0);
      if (has_rows(a.input)) {
        const fs::path prompts_path =
            a.prompts.empty() ? fs::path(a.input).parent_path() / "prompts.json" : fs::path(a.prompts);
        const auto corpus = ingest(a.input, IngestFormat::kJsonl, read_prompt_manifest(prompts_path));
        const auto& prompt = corpus.prompt(model.prompt_id);
        for (const auto& e : corpus.essays) {
          if (e.prompt_id != model.prompt_id) {
            throw Error(ErrorCode::kUnknownPrompt, "essay '" + e.id + "' targets prompt '" +
                                                       e.prompt_id + "', model serves '" +
                                                       model.prompt_id + "'");
          }
          csv += decision_csv_line(
              make_decision_row(model, stats ? &*stats : nullptr, threshold, prompt, e));
        }
      }
      write_text_file(output, csv);
      std::cout << "wrote " << output.string() << "\n";
    } else if (*per) {
      const auto corpus = per_corpus.load();
      const auto& prompt = corpus.prompt(per_prompt);
      const auto manifest = nlohmann::json::parse(read_text_file(per_manifest));
      std::vector<PerturbSpec> specs;
      if (manifest.is_array()) {
        for (const auto& m : manifest) specs.push_back(perturb_spec_from_json(m.dump()));
      } else {
        specs.push_back(perturb_spec_from_json(manifest.dump()));
      }
      const auto sources = corpus.select(per_prompt, parse_split(per_split));
      const auto donors = off_topic_pools(corpus, per_prompt).test;
      std::vector<Essay> all;
      for (const auto& spec : specs) {
        auto batch = apply_perturbation(spec, sources, donors, prompt);
        all.insert(all.end(), batch.begin(), batch.end());
      }
      fs::create_directories(out);
      write_jsonl(all, out / "adversarial.jsonl");
      write_prompt_manifest(corpus.prompts, out / "prompts.json");
      std::cout << "wrote " << all.size() << " essays\n";
    } else if (*ev) {
      const fs::path prompts_path =
          ev_prompts.empty() ? fs::path(ev_gold).parent_path() / "prompts.json" : fs::path(ev_prompts);
      const auto gold = ingest(ev_gold, IngestFormat::kJsonl, read_prompt_manifest(prompts_path));
      std::map<std::string, const Essay*> by_id;
      for (const auto& e : gold.essays) by_id[e.id] = &e;

      std::vector<std::pair<TopicClass, TopicClass>> pairs;
      std::vector<double> on_scores, off_scores;
      std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> grades;
      std::istringstream lines(read_text_file(ev_decisions));
      std::string line;
      std::getline(lines, line);
      const auto header = CLI::detail::split(line, ',');
      if (header.size() < 7 || header[0] != "essay_id") {
        throw Error(ErrorCode::kBadFormat, "not a decisions CSV: " + ev_decisions);
      }
      while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const auto cells = CLI::detail::split(line, ',');
        if (cells.size() != header.size()) throw Error(ErrorCode::kBadFormat, "ragged row: " + line);
        auto it = by_id.find(cells[0]);
        if (it == by_id.end()) throw Error(ErrorCode::kMalformedRow, "no gold label for " + cells[0]);
        const Essay& e = *it->second;
        const auto predicted = cells[cells.size() - 2] == "C_off" ? TopicClass::kOff : TopicClass::kOn;
        const auto truth = e.off_topic ? TopicClass::kOff : TopicClass::kOn;
        pairs.emplace_back(predicted, truth);
        (e.off_topic ? off_scores : on_scores).push_back(std::stod(cells[1]));
        if (!e.off_topic && e.gold_score) {
          auto& g = grades[e.prompt_id];
          g.first.push_back(std::stoi(cells.back()));
          g.second.push_back(*e.gold_score);
        }
      }
      if (pairs.empty()) throw Error(ErrorCode::kEmptyInput, "decisions CSV has no rows");
      std::vector<MetricRow> rows;
      const auto dm = detection_metrics(pairs);
      rows.push_back({ev_dataset, ev_model, "all", "precision", dm.precision});
      rows.push_back({ev_dataset, ev_model, "all", "recall", dm.recall});
      rows.push_back({ev_dataset, ev_model, "all", "f1", dm.f1});
      for (const auto& [pid, g] : grades) {
        if (g.first.size() < 2) continue;
        const auto& p = gold.prompt(pid);
        std::vector<int> pred = g.first;
        for (auto& v : pred) v = std::clamp(v, p.score_min, p.score_max);
        try {
          rows.push_back({ev_dataset, ev_model, pid, "qwk", qwk(pred, g.second, p.score_min, p.score_max)});
        } catch (const Error& ex) {
          if (ex.code() != ErrorCode::kDegenerateMarginals) throw;
          std::cerr << "qwk undefined for " << pid << ": " << ex.what() << "\n";
        }
      }
      fs::create_directories(out);
      write_text_file(out / "metrics.csv", metrics_csv(rows));
      BenchReport rep;
      rep.metrics = rows;
      write_text_file(out / "summary.json", summary_json(rep));
      if (!on_scores.empty() && !off_scores.empty()) {
        write_text_file(out / "histogram.csv",
                        histogram_csv(histogram_report(on_scores, off_scores, ev_bins)));
      }
      std::cout << "f1 " << format_real(dm.f1) << "\n";
    } else if (*be) {
      BenchConfig config;
      if (!be_config.empty()) config = bench_config_from_json(read_text_file(be_config), config);
      if (be_seed) config.seed = *be_seed;
      if (be_budget) config.budget_seconds = *be_budget;
      if (be_epochs) config.spec.train.epochs = *be_epochs;
      if (be_calibration == "test") config.calibration = CalibrationMode::kTest;
      if (be_calibration == "dev") config.calibration = CalibrationMode::kDev;
      if (!out_flag.empty() || config.output_dir.empty()) config.output_dir = out;
      const auto report = run_bench(config);
      for (const auto& [name, f1] : report.mean_f1) {
        std::cout << name << " mean_f1 " << format_real(f1) << "\n";
      }
      for (const auto& [name, ok] : report.comparisons) {
        std::cout << name << " " << (ok ? "yes" : "no") << "\n";
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: BadFormat: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
