#include "aoes/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include <cctype>

#include "aoes/error.hpp"

namespace aoes::text {

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

bool is_word_byte(unsigned char c) { return c >= 0x80 || std::isalnum(c) != 0; }

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace

std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string normalize(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) {
    throw Error(ErrorCode::kIo, "ICU NFC normalizer unavailable");
  }
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString normalized = nfc->normalize(u, status);
  if (U_FAILURE(status)) {
    throw Error(ErrorCode::kBadFormat, "NFC normalization failed");
  }
  normalized.foldCase();
  // Folding can denormalize a few sequences.
  normalized = nfc->normalize(normalized, status);
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

std::vector<std::string> split_sentences(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!is_terminal(s[i])) continue;
    // Consume runs like "?!" or "..." as one terminator.
    std::size_t j = i;
    while (j + 1 < s.size() && is_terminal(s[j + 1])) ++j;
    if (j + 1 == s.size() || is_space(static_cast<unsigned char>(s[j + 1]))) {
      auto piece = trim(s.substr(start, j + 1 - start));
      if (!piece.empty()) out.emplace_back(piece);
      start = j + 1;
    }
    i = j;
  }
  auto tail = trim(s.substr(start));
  if (!tail.empty()) out.emplace_back(tail);
  return out;
}

std::string join_sentences(const std::vector<std::string>& sentences) {
  std::string out;
  for (const auto& sentence : sentences) {
    if (!out.empty()) out.push_back(' ');
    out += sentence;
  }
  return out;
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : s) {
    auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
      continue;
    }
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
    if (!is_space(c) && c >= 0x20) out.emplace_back(1, ch);
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

}  // namespace aoes::text
