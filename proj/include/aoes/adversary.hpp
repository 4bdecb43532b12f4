#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aoes/corpus.hpp"

namespace aoes {

enum class PerturbKind { kAddSpeech, kBabelGenerate, kRepeatSent, kReplaceSents };

const char* perturb_kind_name(PerturbKind kind);
PerturbKind parse_perturb_kind(const std::string& name);

Essay add_speech(const Essay& essay, std::span<const std::string> speech_sentences, int k,
                 std::uint64_t seed);

// Obscure words interleaved with prompt keywords; every sentence is 8-20
// words with keyword density in [0.1, 0.3] and at least one obscure word.
std::string babel_generate(std::span<const std::string> keywords,
                           std::span<const std::string> obscure_vocab, int n_sentences,
                           std::uint64_t seed);

Essay repeat_sent(const Essay& essay, int n_repeats, int n_targets, std::uint64_t seed);

// Keeps the first and last sentences; the body becomes one contiguous span of
// a donor essay from another prompt, sized within +/-50% of the old body.
Essay replace_sents(const Essay& essay, std::span<const Essay> donors, std::uint64_t seed);

// Public-domain oration, sentence-segmented and normalized.
const std::vector<std::string>& bundled_speech_sentences();
const std::vector<std::string>& bundled_obscure_vocabulary();

struct PerturbSpec {
  PerturbKind kind = PerturbKind::kAddSpeech;
  int k = 3;            // add_speech
  int n_repeats = 3;    // repeat_sent
  int n_targets = 2;    // repeat_sent
  int n_sentences = 0;  // babel_generate; 0 = match the source essay
  std::uint64_t seed = 0;
  // Optional text file: speech (add_speech) or one word per line (babel_generate).
  std::filesystem::path resource_path;
};

// Report name: the kind name at default intensity, otherwise suffixed with the
// non-default parameters, e.g. "repeat_sent-r5t2" or "add_speech-k1".
std::string perturbation_label(const PerturbSpec& spec);

PerturbSpec perturb_spec_from_json(const std::string& json_text);
std::string perturb_spec_to_json(const PerturbSpec& spec);

// One adversarial essay per source essay, ids suffixed with "+<kind>",
// split=test and labelled off-topic. `donors` feeds replace_sents and must
// come from other prompts; `prompt` supplies babel keywords.
std::vector<Essay> apply_perturbation(const PerturbSpec& spec, const std::vector<Essay>& sources,
                                      const std::vector<Essay>& donors, const Prompt& prompt);

}  // namespace aoes
