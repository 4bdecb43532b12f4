#include "aoes/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "aoes/error.hpp"
#include "aoes/rng.hpp"
#include "aoes/text.hpp"

namespace aoes {

namespace {

constexpr const char* kGettysburg =
    "Four score and seven years ago our fathers brought forth on this continent, a new nation, "
    "conceived in Liberty, and dedicated to the proposition that all men are created equal. "
    "Now we are engaged in a great civil war, testing whether that nation, or any nation so "
    "conceived and so dedicated, can long endure. "
    "We are met on a great battle-field of that war. "
    "We have come to dedicate a portion of that field, as a final resting place for those who "
    "here gave their lives that that nation might live. "
    "It is altogether fitting and proper that we should do this. "
    "But, in a larger sense, we can not dedicate, we can not consecrate, we can not hallow this "
    "ground. "
    "The brave men, living and dead, who struggled here, have consecrated it, far above our poor "
    "power to add or detract. "
    "The world will little note, nor long remember what we say here, but it can never forget "
    "what they did here. "
    "It is for us the living, rather, to be dedicated here to the unfinished work which they who "
    "fought here have thus far so nobly advanced. "
    "It is rather for us to be here dedicated to the great task remaining before us, that from "
    "these honored dead we take increased devotion to that cause for which they gave the last "
    "full measure of devotion, that we here highly resolve that these dead shall not have died "
    "in vain, that this nation, under God, shall have a new birth of freedom, and that "
    "government of the people, by the people, for the people, shall not perish from the earth. "
    "With malice toward none, with charity for all, with firmness in the right as God gives us "
    "to see the right, let us strive on to finish the work we are in. "
    "Let us bind up the nation's wounds, and care for him who shall have borne the battle. "
    "Let us do all which may achieve and cherish a just and lasting peace among ourselves and "
    "with all nations.";

constexpr const char* kObscure[] = {
    "abstruse",     "adumbrate",    "anfractuous",   "apotheosis",   "bathos",
    "bloviate",     "boustrophedon", "callipygian",  "cacoethes",    "chthonic",
    "circumlocution", "crepuscular", "defenestrate", "deliquesce",   "diaphanous",
    "divagation",   "ebullience",   "effulgent",     "eleemosynary", "epistemology",
    "equipoise",    "eschatology",  "fugacious",     "gallimaufry",  "grandiloquent",
    "hegemony",     "heuristic",    "hypostatize",   "ineffable",    "insouciance",
    "lachrymose",   "legerdemain",  "lucubration",   "mellifluous",  "mendacity",
    "numinous",     "obfuscate",    "obstreperous",  "palimpsest",   "panegyric",
    "paradigmatic", "perspicacious", "pulchritude",  "quiddity",     "recondite",
    "sesquipedalian", "solipsism",  "susurrus",      "tergiversate", "theurgy",
    "ubiquitous",   "umbrageous",   "vicissitude",   "vituperate",   "weltanschauung",
    "xenodochial",  "zeitgeist",    "perfunctory",   "ontological",  "hermeneutics",
};

std::uint64_t essay_seed(std::uint64_t seed, const std::string& id, std::string_view tag) {
  return mix64(seed ^ fnv1a64(id) ^ mix64(fnv1a64(tag)));
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInsufficientResource, "cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto t = text::trim(line);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInsufficientResource, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const char* perturb_kind_name(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::kAddSpeech: return "add_speech";
    case PerturbKind::kBabelGenerate: return "babel_generate";
    case PerturbKind::kRepeatSent: return "repeat_sent";
    case PerturbKind::kReplaceSents: return "replace_sents";
  }
  return "add_speech";
}

PerturbKind parse_perturb_kind(const std::string& name) {
  for (auto k : {PerturbKind::kAddSpeech, PerturbKind::kBabelGenerate, PerturbKind::kRepeatSent,
                 PerturbKind::kReplaceSents}) {
    if (name == perturb_kind_name(k)) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown perturbation '" + name + "'");
}

const std::vector<std::string>& bundled_speech_sentences() {
  static const std::vector<std::string> sentences = text::split_sentences(text::normalize(kGettysburg));
  return sentences;
}

const std::vector<std::string>& bundled_obscure_vocabulary() {
  static const std::vector<std::string> words(std::begin(kObscure), std::end(kObscure));
  return words;
}

Essay add_speech(const Essay& essay, std::span<const std::string> speech_sentences, int k,
                 std::uint64_t seed) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "add_speech needs k >= 1");
  if (speech_sentences.size() < static_cast<std::size_t>(k)) {
    throw Error(ErrorCode::kInsufficientResource, "speech has fewer than k sentences");
  }
  const auto original = text::split_sentences(essay.text);
  Rng rng(seed);
  std::vector<std::size_t> pick(speech_sentences.size());
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  rng.shuffle(pick);
  pick.resize(static_cast<std::size_t>(k));
  std::sort(pick.begin(), pick.end());  // keep speech order

  // slot s means "before original sentence s"; s == n appends.
  std::vector<std::size_t> slots;
  for (int i = 0; i < k; ++i) slots.push_back(rng.below(original.size() + 1));
  std::sort(slots.begin(), slots.end());

  std::vector<std::string> out;
  std::size_t next = 0;
  for (std::size_t s = 0; s <= original.size(); ++s) {
    while (next < slots.size() && slots[next] == s) out.push_back(speech_sentences[pick[next++]]);
    if (s < original.size()) out.push_back(original[s]);
  }
  Essay result = essay;
  result.text = text::join_sentences(out);
  return result;
}

std::string babel_generate(std::span<const std::string> keywords,
                           std::span<const std::string> obscure_vocab, int n_sentences,
                           std::uint64_t seed) {
  if (keywords.empty()) throw Error(ErrorCode::kInsufficientResource, "no prompt keywords");
  if (obscure_vocab.size() < 50) {
    throw Error(ErrorCode::kInsufficientResource, "obscure vocabulary needs >= 50 words");
  }
  if (n_sentences < 1) throw Error(ErrorCode::kInvalidArgument, "n_sentences must be >= 1");
  Rng rng(seed);
  std::vector<std::string> sentences;
  for (int s = 0; s < n_sentences; ++s) {
    const int len = static_cast<int>(rng.range(8, 20));
    const int lo = static_cast<int>(std::ceil(0.1 * len));
    const int hi = static_cast<int>(std::floor(0.3 * len));
    const int n_kw = std::clamp(static_cast<int>(std::lround(rng.uniform(0.1, 0.3) * len)), lo, hi);
    std::vector<bool> is_kw(static_cast<std::size_t>(len), false);
    std::fill(is_kw.begin(), is_kw.begin() + n_kw, true);
    rng.shuffle(is_kw);
    std::string sentence;
    for (int w = 0; w < len; ++w) {
      if (!sentence.empty()) sentence.push_back(' ');
      sentence += is_kw[static_cast<std::size_t>(w)] ? keywords[rng.below(keywords.size())]
                                                     : obscure_vocab[rng.below(obscure_vocab.size())];
    }
    sentence.push_back('.');
    sentences.push_back(std::move(sentence));
  }
  return text::join_sentences(sentences);
}

Essay repeat_sent(const Essay& essay, int n_repeats, int n_targets, std::uint64_t seed) {
  if (n_repeats < 1) throw Error(ErrorCode::kInvalidArgument, "repeat_sent needs n_repeats >= 1");
  if (n_targets < 1) throw Error(ErrorCode::kInvalidArgument, "repeat_sent needs n_targets >= 1");
  const auto original = text::split_sentences(essay.text);
  if (original.empty()) throw Error(ErrorCode::kTooShortEssay, "essay has no sentences");
  Rng rng(seed);
  std::vector<std::size_t> idx(original.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  idx.resize(std::min(idx.size(), static_cast<std::size_t>(n_targets)));
  std::vector<bool> target(original.size(), false);
  for (auto i : idx) target[i] = true;

  std::vector<std::string> out;
  for (std::size_t i = 0; i < original.size(); ++i) {
    out.push_back(original[i]);
    if (target[i]) {
      for (int r = 0; r < n_repeats; ++r) out.push_back(original[i]);
    }
  }
  Essay result = essay;
  result.text = text::join_sentences(out);
  return result;
}

Essay replace_sents(const Essay& essay, std::span<const Essay> donors, std::uint64_t seed) {
  const auto original = text::split_sentences(essay.text);
  if (original.size() < 3) throw Error(ErrorCode::kTooShortEssay, "need >= 3 sentences");
  std::vector<std::vector<std::string>> donor_sentences;
  for (const auto& d : donors) {
    if (d.prompt_id == essay.prompt_id) continue;
    auto s = text::split_sentences(d.text);
    if (!s.empty()) donor_sentences.push_back(std::move(s));
  }
  if (donor_sentences.empty()) {
    throw Error(ErrorCode::kInsufficientResource, "no donor essays from another prompt");
  }
  const auto body = static_cast<long long>(original.size() - 2);
  const long long min_len = std::max<long long>(1, (body + 1) / 2);
  const long long max_len = std::max<long long>(min_len, (3 * body) / 2);
  Rng rng(seed);
  long long want = rng.range(min_len, max_len);

  std::vector<std::size_t> eligible;
  for (;;) {
    eligible.clear();
    for (std::size_t i = 0; i < donor_sentences.size(); ++i) {
      if (static_cast<long long>(donor_sentences[i].size()) >= want) eligible.push_back(i);
    }
    if (!eligible.empty() || want == min_len) break;
    --want;
  }
  if (eligible.empty()) throw Error(ErrorCode::kInsufficientResource, "donors too short");
  const auto& donor = donor_sentences[eligible[rng.below(eligible.size())]];
  const auto start = rng.below(donor.size() - static_cast<std::size_t>(want) + 1);

  std::vector<std::string> out{original.front()};
  for (long long i = 0; i < want; ++i) out.push_back(donor[start + static_cast<std::size_t>(i)]);
  out.push_back(original.back());
  Essay result = essay;
  result.text = text::join_sentences(out);
  return result;
}

std::string perturbation_label(const PerturbSpec& spec) {
  const PerturbSpec d;
  std::string label = perturb_kind_name(spec.kind);
  switch (spec.kind) {
    case PerturbKind::kAddSpeech:
      if (spec.k != d.k) label += "-k" + std::to_string(spec.k);
      break;
    case PerturbKind::kRepeatSent:
      if (spec.n_repeats != d.n_repeats || spec.n_targets != d.n_targets) {
        label += "-r" + std::to_string(spec.n_repeats) + "t" + std::to_string(spec.n_targets);
      }
      break;
    case PerturbKind::kBabelGenerate:
      if (spec.n_sentences != d.n_sentences) label += "-s" + std::to_string(spec.n_sentences);
      break;
    case PerturbKind::kReplaceSents:
      break;
  }
  return label;
}

PerturbSpec perturb_spec_from_json(const std::string& json_text) {
  PerturbSpec spec;
  try {
    auto j = nlohmann::json::parse(json_text);
    spec.kind = parse_perturb_kind(j.at("kind").get<std::string>());
    if (j.contains("params")) {
      const auto& p = j["params"];
      spec.k = p.value("k", spec.k);
      spec.n_repeats = p.value("n_repeats", spec.n_repeats);
      spec.n_targets = p.value("n_targets", spec.n_targets);
      spec.n_sentences = p.value("n_sentences", spec.n_sentences);
    }
    spec.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("resource_path") && j["resource_path"].is_string()) {
      spec.resource_path = j["resource_path"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kBadFormat, std::string("perturbation manifest: ") + ex.what());
  }
  return spec;
}

std::string perturb_spec_to_json(const PerturbSpec& spec) {
  nlohmann::ordered_json j;
  j["kind"] = perturb_kind_name(spec.kind);
  j["params"] = {{"k", spec.k},
                 {"n_repeats", spec.n_repeats},
                 {"n_targets", spec.n_targets},
                 {"n_sentences", spec.n_sentences}};
  j["seed"] = spec.seed;
  j["resource_path"] = spec.resource_path.string();
  return j.dump(2);
}

std::vector<Essay> apply_perturbation(const PerturbSpec& spec, const std::vector<Essay>& sources,
                                      const std::vector<Essay>& donors, const Prompt& prompt) {
  std::vector<std::string> speech;
  std::vector<std::string> obscure;
  if (spec.kind == PerturbKind::kAddSpeech) {
    speech = spec.resource_path.empty()
                 ? bundled_speech_sentences()
                 : text::split_sentences(text::normalize(read_all(spec.resource_path)));
  }
  if (spec.kind == PerturbKind::kBabelGenerate) {
    obscure = spec.resource_path.empty() ? bundled_obscure_vocabulary()
                                         : read_lines(spec.resource_path);
    for (auto& w : obscure) w = text::normalize(w);
  }
  const char* tag = perturb_kind_name(spec.kind);
  std::vector<Essay> out;
  out.reserve(sources.size());
  for (const auto& src : sources) {
    const auto seed = essay_seed(spec.seed, src.id, tag);
    Essay e;
    switch (spec.kind) {
      case PerturbKind::kAddSpeech:
        e = add_speech(src, speech, spec.k, seed);
        break;
      case PerturbKind::kBabelGenerate: {
        e = src;
        const int n = spec.n_sentences > 0
                          ? spec.n_sentences
                          : std::max<int>(1, static_cast<int>(text::split_sentences(src.text).size()));
        e.text = babel_generate(prompt.topic_keywords, obscure, n, seed);
        break;
      }
      case PerturbKind::kRepeatSent:
        e = repeat_sent(src, spec.n_repeats, spec.n_targets, seed);
        break;
      case PerturbKind::kReplaceSents:
        e = replace_sents(src, donors, seed);
        break;
    }
    e.id = src.id + "+" + tag;
    e.prompt_id = prompt.id;
    e.split = Split::kTest;
    e.off_topic = true;
    e.perturbation = tag;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace aoes
