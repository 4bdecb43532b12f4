#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace aoes {

enum class Split { kTrain, kDev, kTest };
enum class Provenance { kIngested, kSynthetic };
enum class IngestFormat { kJsonl, kTsv };

const char* split_name(Split split);
Split parse_split(const std::string& name);

struct Prompt {
  std::string id;
  std::vector<std::string> topic_keywords;
  int score_min = 0;
  int score_max = 1;
  // Instruction text when known; empty for ASAP exports and synthetic prompts.
  std::string text;

  int range() const { return score_max - score_min; }
};

struct Essay {
  std::string id;
  std::string prompt_id;
  std::string text;
  std::optional<int> gold_score;
  Split split = Split::kTrain;
  // Ground-truth topic label for evaluation sets. Essays produced by a
  // perturbation generator carry its kind and are always off-topic.
  bool off_topic = false;
  std::string perturbation;
};

struct Corpus {
  std::map<std::string, Prompt> prompts;
  std::vector<Essay> essays;
  Provenance provenance = Provenance::kIngested;
  std::uint64_t seed = 0;

  const Prompt& prompt(const std::string& id) const;
  std::vector<Essay> select(const std::string& prompt_id, Split split) const;
};

struct SplitRatios {
  double train = 0.7;
  double dev = 0.1;
};

struct SynthConfig {
  int n_prompts = 3;
  int essays_per_prompt = 400;
  int vocab_shared = 60;
  int vocab_per_topic = 120;
  double quality_noise = 0.05;
  std::uint64_t seed = 7;
  SplitRatios splits;

  void validate() const;
};

struct IngestOptions {
  // Hash-split seed applied to rows that carry no explicit split.
  std::uint64_t split_seed = 0;
  SplitRatios splits;
  // When set, invalid rows are dropped and reported instead of failing.
  bool skip_bad_rows = false;
};

struct IngestDiagnostic {
  std::size_t row = 0;  // 1-based data row index
  std::string reason;
};

// Prompt ranges of the public ASAP-AES sets 1-8, used for TSV ingestion when
// no manifest is supplied.
std::map<std::string, Prompt> asap_prompts();

Split assign_split(const std::string& essay_id, std::uint64_t seed, const SplitRatios& ratios);

Corpus ingest(const std::filesystem::path& path, IngestFormat format,
              const std::map<std::string, Prompt>& prompts, const IngestOptions& options = {},
              std::vector<IngestDiagnostic>* diagnostics = nullptr);

struct SynthVocabulary {
  std::vector<std::string> shared;
  std::vector<std::vector<std::string>> topics;  // one per prompt, pairwise disjoint
};

struct SynthCorpus {
  Corpus corpus;
  SynthVocabulary vocabulary;
  std::vector<double> quality;  // latent quality per essay, aligned with corpus.essays
};

SynthCorpus synthesize_detailed(const SynthConfig& config);
Corpus synthesize(const SynthConfig& config);

double normalize_score(int gold_score, const Prompt& prompt);
int denormalize_score(double y, const Prompt& prompt);

std::map<std::string, Prompt> read_prompt_manifest(const std::filesystem::path& path);
void write_prompt_manifest(const std::map<std::string, Prompt>& prompts,
                           const std::filesystem::path& path);
void write_jsonl(const std::vector<Essay>& essays, const std::filesystem::path& path);
std::string essay_to_json_line(const Essay& essay);

}  // namespace aoes
