#include "aoes/baselines.hpp"

#include <cctype>
#include <cmath>
#include <set>

#include "aoes/error.hpp"
#include "aoes/text.hpp"

namespace aoes {

const char* system_kind_name(SystemKind kind) {
  switch (kind) {
    case SystemKind::kAoes: return "aoes";
    case SystemKind::kAoesNoTrm: return "aoes-no-trm";
    case SystemKind::kAoesL2: return "aoes-l2";
    case SystemKind::kBaseline1: return "baseline1";
    case SystemKind::kBaseline2: return "baseline2";
    case SystemKind::kTfidf: return "tfidf";
  }
  return "aoes";
}

SystemKind parse_system_kind(const std::string& name) {
  for (auto k : {SystemKind::kAoes, SystemKind::kAoesNoTrm, SystemKind::kAoesL2,
                 SystemKind::kBaseline1, SystemKind::kBaseline2, SystemKind::kTfidf}) {
    if (name == system_kind_name(k)) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown system '" + name + "'");
}

std::optional<ModelKind> trained_kind(SystemKind kind) {
  switch (kind) {
    case SystemKind::kAoes: return ModelKind::kAoes;
    case SystemKind::kAoesNoTrm: return ModelKind::kAoesNoTrm;
    case SystemKind::kAoesL2: return ModelKind::kAoesL2;
    case SystemKind::kBaseline1: return ModelKind::kBaseline1;
    case SystemKind::kBaseline2: return ModelKind::kBaseline2;
    case SystemKind::kTfidf: return std::nullopt;
  }
  return std::nullopt;
}

std::vector<TrainSample> make_samples(const EncoderModel& encoder, const std::vector<Essay>& essays,
                                      const Prompt& prompt, bool on_topic) {
  std::vector<TrainSample> out;
  out.reserve(essays.size());
  for (const auto& e : essays) {
    TrainSample s;
    s.ids = tokenize(e.text, encoder.vocab(), encoder.config().max_len);
    s.on_topic = on_topic;
    if (on_topic) {
      if (!e.gold_score) {
        throw Error(ErrorCode::kMalformedRow, "training essay '" + e.id + "' has no gold score");
      }
      s.target = normalize_score(*e.gold_score, prompt);
    } else {
      s.target = 0.0;  // off-topic responses are graded zero
    }
    out.push_back(std::move(s));
  }
  return out;
}

TrainedModel train_model(ModelKind kind, const std::vector<Essay>& on_topic_train,
                         const std::vector<Essay>& off_topic_train, const Prompt& prompt,
                         const ModelSpec& spec) {
  if (on_topic_train.empty()) throw Error(ErrorCode::kEmptyInput, "no on-topic training essays");
  const bool supervised = kind == ModelKind::kBaseline1 || kind == ModelKind::kBaseline2;
  if (supervised && off_topic_train.empty()) {
    throw Error(ErrorCode::kMissingOffTopicTrain, "baseline needs off-topic training essays");
  }
  std::vector<std::string> texts;
  for (const auto& e : on_topic_train) texts.push_back(e.text);
  if (supervised) {
    for (const auto& e : off_topic_train) texts.push_back(e.text);
  }

  TrainedModel out;
  out.model.kind = kind;
  out.model.encoder = EncoderModel(spec.encoder, Vocabulary::build(texts));
  out.model.head = init_head(spec.encoder.d, spec.head_init_scale, spec.encoder.seed);
  out.model.prompt_id = prompt.id;
  out.model.score_min = prompt.score_min;
  out.model.score_max = prompt.score_max;

  auto samples = make_samples(out.model.encoder, on_topic_train, prompt, true);
  if (supervised) {
    auto off = make_samples(out.model.encoder, off_topic_train, prompt, false);
    samples.insert(samples.end(), off.begin(), off.end());
  }
  out.result = train(out.model, samples, spec.train);
  return out;
}

TrainedModel train_aoes(const std::vector<Essay>& on, const Prompt& prompt, const ModelSpec& spec) {
  return train_model(ModelKind::kAoes, on, {}, prompt, spec);
}

TrainedModel train_aoes_no_trm(const std::vector<Essay>& on, const Prompt& prompt,
                               const ModelSpec& spec) {
  return train_model(ModelKind::kAoesNoTrm, on, {}, prompt, spec);
}

TrainedModel train_aoes_l2(const std::vector<Essay>& on, const Prompt& prompt,
                           const ModelSpec& spec) {
  return train_model(ModelKind::kAoesL2, on, {}, prompt, spec);
}

TrainedModel train_baseline1(const std::vector<Essay>& on, const std::vector<Essay>& off,
                             const Prompt& prompt, const ModelSpec& spec) {
  return train_model(ModelKind::kBaseline1, on, off, prompt, spec);
}

TrainedModel train_baseline2(const std::vector<Essay>& on, const std::vector<Essay>& off,
                             const Prompt& prompt, const ModelSpec& spec) {
  return train_model(ModelKind::kBaseline2, on, off, prompt, spec);
}

EssayScore score_essay(const ScoringModel& model, const LayerStats* stats, const Essay& essay) {
  const auto ids = tokenize(essay.text, model.encoder.vocab(), model.encoder.config().max_len);
  const auto pred = predict(model, ids);
  EssayScore s;
  s.head = pred.head;
  if (uses_mahalanobis(model.kind)) {
    if (!stats) throw Error(ErrorCode::kInvalidArgument, "Mahalanobis detection needs layer stats");
    s.mahalanobis = distance(*stats, layer_features(pred.encoder, stats->include_layer0));
    s.detection = s.mahalanobis.total;
  } else if (model.kind == ModelKind::kBaseline1) {
    s.detection = -s.head.y_s;
  } else {
    s.detection = 1.0 - s.head.y_t;
  }
  return s;
}

// ---------------------------------------------------------------------------
// TF-IDF

namespace {

std::vector<std::string> terms(const std::string& s) {
  std::vector<std::string> out;
  for (auto& w : text::words(s)) {
    const auto c = static_cast<unsigned char>(w[0]);
    if (c >= 0x80 || std::isalnum(c)) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

TfidfIndex TfidfIndex::fit(const std::vector<std::string>& documents) {
  if (documents.empty()) throw Error(ErrorCode::kEmptyInput, "TF-IDF needs documents");
  TfidfIndex index;
  index.n_docs_ = documents.size();
  std::map<std::string, std::size_t> df;
  for (const auto& doc : documents) {
    auto t = terms(doc);
    std::set<std::string> distinct(t.begin(), t.end());
    for (const auto& term : distinct) ++df[term];
  }
  const double n = static_cast<double>(documents.size());
  for (const auto& [term, count] : df) {
    index.idf_[term] = std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0;
  }
  return index;
}

double TfidfIndex::idf(const std::string& term) const {
  auto it = idf_.find(term);
  return it == idf_.end() ? 0.0 : it->second;
}

std::map<std::string, double> TfidfIndex::weights(const std::string& s) const {
  std::map<std::string, double> tf;
  for (const auto& t : terms(s)) {
    if (idf_.count(t)) tf[t] += 1.0;
  }
  for (auto& [term, w] : tf) w *= idf_.at(term);
  return tf;
}

double TfidfIndex::similarity(const std::string& a, const std::string& b) const {
  const auto wa = weights(a);
  const auto wb = weights(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, w] : wa) {
    na += w * w;
    auto it = wb.find(t);
    if (it != wb.end()) dot += w * it->second;
  }
  for (const auto& [t, w] : wb) nb += w * w;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

std::string prompt_representation(const Prompt& prompt) {
  if (!prompt.text.empty()) return prompt.text;
  std::string out;
  for (const auto& k : prompt.topic_keywords) {
    if (!out.empty()) out.push_back(' ');
    out += k;
  }
  return out;
}

double tfidf_similarity(const TfidfIndex& index, const Prompt& prompt, const Essay& essay) {
  return index.similarity(prompt_representation(prompt), essay.text);
}

}  // namespace aoes
