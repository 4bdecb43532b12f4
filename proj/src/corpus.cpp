#include "aoes/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "aoes/error.hpp"
#include "aoes/rng.hpp"
#include "aoes/text.hpp"

namespace aoes {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw Error(ErrorCode::kBadFormat, "unknown split '" + name + "'");
}

const Prompt& Corpus::prompt(const std::string& id) const {
  auto it = prompts.find(id);
  if (it == prompts.end()) throw Error(ErrorCode::kUnknownPrompt, "prompt '" + id + "'");
  return it->second;
}

std::vector<Essay> Corpus::select(const std::string& prompt_id, Split split) const {
  std::vector<Essay> out;
  for (const auto& e : essays) {
    if (e.prompt_id == prompt_id && e.split == split) out.push_back(e);
  }
  return out;
}

void SynthConfig::validate() const {
  if (n_prompts <= 0 || essays_per_prompt <= 0 || vocab_shared <= 0 || vocab_per_topic <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "synth counts must be positive");
  }
  if (!(quality_noise >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "quality_noise must be >= 0");
  }
  if (splits.train <= 0.0 || splits.dev < 0.0 || splits.train + splits.dev >= 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "split ratios must leave a nonempty test share");
  }
}

std::map<std::string, Prompt> asap_prompts() {
  // Score ranges as tabulated for ASAP-AES sets 1-8.
  static constexpr std::array<std::array<int, 2>, 8> kRanges = {{
      {2, 13}, {1, 6}, {0, 3}, {0, 3}, {0, 4}, {0, 4}, {0, 30}, {0, 60}}};
  std::map<std::string, Prompt> out;
  for (std::size_t i = 0; i < kRanges.size(); ++i) {
    Prompt p;
    p.id = std::to_string(i + 1);
    p.score_min = kRanges[i][0];
    p.score_max = kRanges[i][1];
    out.emplace(p.id, p);
  }
  return out;
}

Split assign_split(const std::string& essay_id, std::uint64_t seed, const SplitRatios& ratios) {
  const double u = static_cast<double>(mix64(fnv1a64(essay_id) ^ mix64(seed)) >> 11) * 0x1.0p-53;
  if (u < ratios.train) return Split::kTrain;
  if (u < ratios.train + ratios.dev) return Split::kDev;
  return Split::kTest;
}

double normalize_score(int gold_score, const Prompt& prompt) {
  if (gold_score < prompt.score_min || gold_score > prompt.score_max) {
    throw Error(ErrorCode::kOutOfRange, "score " + std::to_string(gold_score) + " outside " +
                                            std::to_string(prompt.score_min) + "-" +
                                            std::to_string(prompt.score_max));
  }
  return static_cast<double>(gold_score - prompt.score_min) / prompt.range();
}

int denormalize_score(double y, const Prompt& prompt) {
  const double clamped = std::isnan(y) ? 0.0 : std::clamp(y, 0.0, 1.0);
  // std::round is half-away-from-zero.
  return static_cast<int>(std::round(clamped * prompt.range())) + prompt.score_min;
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

struct RawRow {
  std::string id;
  std::string prompt_id;
  std::string text;
  std::optional<int> score;
  std::optional<std::string> split;
  bool off_topic = false;
  std::string perturbation;
};

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

std::optional<int> parse_int(const std::string& s) {
  auto t = text::trim(s);
  if (t.empty()) return std::nullopt;
  std::size_t pos = 0;
  int v = std::stoi(std::string(t), &pos);
  if (pos != t.size()) throw std::invalid_argument("not an integer");
  return v;
}

RawRow parse_jsonl_row(const std::string& line) {
  json j = json::parse(line);
  if (!j.is_object()) throw std::invalid_argument("row is not a JSON object");
  RawRow r;
  for (const char* key : {"id", "prompt_id", "text"}) {
    if (!j.contains(key) || !j[key].is_string()) {
      throw std::invalid_argument(std::string("missing string field '") + key + "'");
    }
  }
  r.id = j["id"].get<std::string>();
  r.prompt_id = j["prompt_id"].get<std::string>();
  r.text = j["text"].get<std::string>();
  if (j.contains("score") && !j["score"].is_null()) {
    if (!j["score"].is_number_integer()) throw std::invalid_argument("score is not an integer");
    r.score = j["score"].get<int>();
  }
  if (j.contains("split") && !j["split"].is_null()) r.split = j["split"].get<std::string>();
  if (j.contains("label") && j["label"].is_string()) {
    const auto label = j["label"].get<std::string>();
    if (label == "off_topic") {
      r.off_topic = true;
    } else if (label != "on_topic") {
      throw std::invalid_argument("label must be on_topic or off_topic");
    }
  }
  if (j.contains("perturbation") && j["perturbation"].is_string()) {
    r.perturbation = j["perturbation"].get<std::string>();
    r.off_topic = true;
  }
  return r;
}

}  // namespace

Corpus ingest(const std::filesystem::path& path, IngestFormat format,
              const std::map<std::string, Prompt>& prompts, const IngestOptions& options,
              std::vector<IngestDiagnostic>* diagnostics) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());

  Corpus corpus;
  corpus.prompts = prompts;
  corpus.provenance = Provenance::kIngested;
  corpus.seed = options.split_seed;

  std::vector<IngestDiagnostic> problems;
  std::string line;
  std::size_t row = 0;
  std::size_t nonblank = 0;
  std::vector<std::string> header;
  std::array<int, 4> tsv_cols{-1, -1, -1, -1};  // essay_id, essay_set, essay, domain1_score

  if (format == IngestFormat::kTsv) {
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!text::trim(line).empty()) break;
    }
    if (text::trim(line).empty()) throw Error(ErrorCode::kEmptyFile, path.string());
    header = split_tabs(line);
    const std::array<const char*, 4> names = {"essay_id", "essay_set", "essay", "domain1_score"};
    for (std::size_t c = 0; c < header.size(); ++c) {
      for (std::size_t k = 0; k < names.size(); ++k) {
        if (text::trim(header[c]) == names[k]) tsv_cols[k] = static_cast<int>(c);
      }
    }
    for (std::size_t k = 0; k < 3; ++k) {
      if (tsv_cols[k] < 0) {
        throw Error(ErrorCode::kMalformedRow,
                    std::string("row 0: header lacks column '") + names[k] + "'");
      }
    }
  }

  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    ++row;
    ++nonblank;
    RawRow r;
    try {
      if (format == IngestFormat::kJsonl) {
        r = parse_jsonl_row(line);
      } else {
        auto fields = split_tabs(line);
        auto field = [&](int col) -> std::string {
          if (col < 0 || static_cast<std::size_t>(col) >= fields.size()) return {};
          return fields[static_cast<std::size_t>(col)];
        };
        if (fields.size() < 3) throw std::invalid_argument("too few columns");
        r.id = std::string(text::trim(field(tsv_cols[0])));
        r.prompt_id = std::string(text::trim(field(tsv_cols[1])));
        r.text = field(tsv_cols[2]);
        if (tsv_cols[3] >= 0) r.score = parse_int(field(tsv_cols[3]));
      }
    } catch (const std::exception& ex) {
      problems.push_back({row, ex.what()});
      continue;
    }

    if (r.id.empty()) {
      problems.push_back({row, "empty id"});
      continue;
    }
    auto pit = prompts.find(r.prompt_id);
    if (pit == prompts.end()) {
      if (!options.skip_bad_rows) {
        throw Error(ErrorCode::kUnknownPrompt,
                    "row " + std::to_string(row) + ": prompt '" + r.prompt_id + "'");
      }
      problems.push_back({row, "unknown prompt '" + r.prompt_id + "'"});
      continue;
    }
    std::string normalized = text::normalize(r.text);
    if (text::trim(normalized).empty()) {
      problems.push_back({row, "empty text"});
      continue;
    }
    if (r.score && (*r.score < pit->second.score_min || *r.score > pit->second.score_max)) {
      problems.push_back({row, "score " + std::to_string(*r.score) + " outside range " +
                                   std::to_string(pit->second.score_min) + "-" +
                                   std::to_string(pit->second.score_max)});
      continue;
    }
    Essay e;
    e.id = r.id;
    e.prompt_id = r.prompt_id;
    e.text = std::string(text::trim(normalized));
    e.gold_score = r.score;
    try {
      e.split = r.split ? parse_split(*r.split)
                        : assign_split(e.id, options.split_seed, options.splits);
    } catch (const Error& ex) {
      problems.push_back({row, ex.what()});
      continue;
    }
    e.off_topic = r.off_topic;
    e.perturbation = r.perturbation;
    corpus.essays.push_back(std::move(e));
  }

  if (nonblank == 0) throw Error(ErrorCode::kEmptyFile, path.string());
  if (!problems.empty() && !options.skip_bad_rows) {
    std::string msg;
    for (const auto& p : problems) {
      if (!msg.empty()) msg += "; ";
      msg += "row " + std::to_string(p.row) + ": " + p.reason;
    }
    throw Error(ErrorCode::kMalformedRow, msg);
  }
  if (diagnostics) *diagnostics = std::move(problems);
  return corpus;
}

// ---------------------------------------------------------------------------
// Synthetic generation

namespace {

constexpr std::string_view kConsonants = "bcdfghklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string make_word(Rng& rng) {
  const auto syllables = 2 + rng.below(2);
  std::string w;
  for (std::uint64_t s = 0; s < syllables; ++s) {
    w.push_back(kConsonants[rng.below(kConsonants.size())]);
    w.push_back(kVowels[rng.below(kVowels.size())]);
  }
  if (rng.bernoulli(0.5)) w.push_back(kConsonants[rng.below(kConsonants.size())]);
  return w;
}

// Zipf-like cumulative weights over ranks.
std::vector<double> zipf_cdf(std::size_t n) {
  std::vector<double> cdf(n);
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    acc += 1.0 / std::pow(static_cast<double>(r + 1), 0.8);
    cdf[r] = acc;
  }
  return cdf;
}

// Draws a rank from the first `limit` entries of cdf.
std::size_t draw_rank(Rng& rng, const std::vector<double>& cdf, std::size_t limit) {
  const double u = rng.uniform() * cdf[limit - 1];
  auto it = std::upper_bound(cdf.begin(), cdf.begin() + static_cast<std::ptrdiff_t>(limit), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), limit - 1);
}

constexpr std::array<std::array<int, 2>, 5> kSynthRanges = {{{2, 12}, {1, 6}, {0, 4}, {0, 10}, {0, 5}}};

}  // namespace

SynthCorpus synthesize_detailed(const SynthConfig& config) {
  config.validate();
  SynthCorpus out;
  Corpus& corpus = out.corpus;
  corpus.provenance = Provenance::kSynthetic;
  corpus.seed = config.seed;

  Rng vocab_rng(sub_seed(config.seed, "synth.vocab"));
  std::set<std::string> used;
  auto fresh_word = [&]() {
    for (;;) {
      auto w = make_word(vocab_rng);
      if (used.insert(w).second) return w;
    }
  };
  for (int i = 0; i < config.vocab_shared; ++i) out.vocabulary.shared.push_back(fresh_word());
  for (int p = 0; p < config.n_prompts; ++p) {
    std::vector<std::string> topic;
    for (int i = 0; i < config.vocab_per_topic; ++i) topic.push_back(fresh_word());
    out.vocabulary.topics.push_back(std::move(topic));
  }

  const auto shared_cdf = zipf_cdf(out.vocabulary.shared.size());
  const auto topic_cdf = zipf_cdf(static_cast<std::size_t>(config.vocab_per_topic));
  const std::size_t n_keywords = std::min<std::size_t>(10, config.vocab_per_topic);

  for (int p = 0; p < config.n_prompts; ++p) {
    Prompt prompt;
    prompt.id = "p" + std::to_string(p + 1);
    const auto& range = kSynthRanges[static_cast<std::size_t>(p) % kSynthRanges.size()];
    prompt.score_min = range[0];
    prompt.score_max = range[1];
    const auto& topic = out.vocabulary.topics[static_cast<std::size_t>(p)];
    prompt.topic_keywords.assign(topic.begin(), topic.begin() + static_cast<std::ptrdiff_t>(n_keywords));
    corpus.prompts.emplace(prompt.id, prompt);

    Rng rng(sub_seed(config.seed, "synth.essays." + prompt.id));
    for (int e = 0; e < config.essays_per_prompt; ++e) {
      const double q = rng.uniform();
      // Length, topical density and lexical richness all grow with quality.
      const int n_sentences = 3 + static_cast<int>(std::floor(6.0 * q));
      const double topic_ratio = 0.15 + 0.45 * q;
      const auto richness = std::max<std::size_t>(
          std::min<std::size_t>(10, topic.size()),
          static_cast<std::size_t>(std::lround(topic.size() * (0.25 + 0.75 * q))));
      std::vector<std::string> sentences;
      for (int s = 0; s < n_sentences; ++s) {
        const auto len = static_cast<int>(6 + rng.below(7));
        std::string sentence;
        for (int w = 0; w < len; ++w) {
          const std::string& word =
              rng.bernoulli(topic_ratio)
                  ? topic[draw_rank(rng, topic_cdf, std::min(richness, topic.size()))]
                  : out.vocabulary.shared[draw_rank(rng, shared_cdf, shared_cdf.size())];
          if (!sentence.empty()) sentence.push_back(' ');
          sentence += word;
        }
        sentence.push_back('.');
        sentences.push_back(std::move(sentence));
      }
      const double noise = config.quality_noise > 0.0
                               ? rng.uniform(-config.quality_noise, config.quality_noise)
                               : 0.0;
      const double raw = std::round(q * prompt.range() + noise * prompt.range());
      const int gold = std::clamp(static_cast<int>(raw) + prompt.score_min, prompt.score_min,
                                  prompt.score_max);

      Essay essay;
      char id[32];
      std::snprintf(id, sizeof(id), "%s-%04d", prompt.id.c_str(), e);
      essay.id = id;
      essay.prompt_id = prompt.id;
      essay.text = text::join_sentences(sentences);
      essay.gold_score = gold;
      essay.split = assign_split(essay.id, config.seed, config.splits);
      corpus.essays.push_back(std::move(essay));
      out.quality.push_back(q);
    }
  }
  return out;
}

Corpus synthesize(const SynthConfig& config) { return synthesize_detailed(config).corpus; }

// ---------------------------------------------------------------------------
// Files

std::map<std::string, Prompt> read_prompt_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kBadFormat, path.string() + ": " + ex.what());
  }
  if (!j.is_array()) throw Error(ErrorCode::kBadFormat, "prompt manifest must be a JSON array");
  std::map<std::string, Prompt> out;
  for (const auto& item : j) {
    Prompt p;
    try {
      p.id = item.at("id").get<std::string>();
      p.score_min = item.at("score_min").get<int>();
      p.score_max = item.at("score_max").get<int>();
      if (item.contains("topic_keywords")) {
        p.topic_keywords = item["topic_keywords"].get<std::vector<std::string>>();
      }
      if (item.contains("text")) p.text = item["text"].get<std::string>();
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::kBadFormat, std::string("prompt manifest entry: ") + ex.what());
    }
    if (p.score_min >= p.score_max) {
      throw Error(ErrorCode::kBadFormat, "prompt '" + p.id + "' has score_min >= score_max");
    }
    out.emplace(p.id, std::move(p));
  }
  return out;
}

void write_prompt_manifest(const std::map<std::string, Prompt>& prompts,
                           const std::filesystem::path& path) {
  ordered_json arr = ordered_json::array();
  for (const auto& [id, p] : prompts) {
    ordered_json item;
    item["id"] = p.id;
    item["score_min"] = p.score_min;
    item["score_max"] = p.score_max;
    item["topic_keywords"] = p.topic_keywords;
    if (!p.text.empty()) item["text"] = p.text;
    arr.push_back(std::move(item));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << arr.dump(2) << '\n';
}

std::string essay_to_json_line(const Essay& essay) {
  ordered_json j;
  j["id"] = essay.id;
  j["prompt_id"] = essay.prompt_id;
  j["text"] = essay.text;
  if (essay.gold_score) j["score"] = *essay.gold_score;
  j["split"] = split_name(essay.split);
  if (essay.off_topic) j["label"] = "off_topic";
  if (!essay.perturbation.empty()) j["perturbation"] = essay.perturbation;
  return j.dump();
}

void write_jsonl(const std::vector<Essay>& essays, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& e : essays) out << essay_to_json_line(e) << '\n';
}

}  // namespace aoes
