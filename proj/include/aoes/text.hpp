#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace aoes::text {

std::string_view trim(std::string_view s);

// Unicode NFC normalization followed by full case folding. Input must be
// UTF-8; invalid sequences are replaced with U+FFFD.
std::string normalize(std::string_view s);

// Splits on '.', '!' or '?' followed by whitespace (or end of text). Each
// returned sentence keeps its terminal punctuation and is trimmed; empty
// pieces are dropped.
std::vector<std::string> split_sentences(std::string_view s);

std::string join_sentences(const std::vector<std::string>& sentences);

// Lowercased word/punctuation tokens: runs of alphanumerics (any byte >= 0x80
// counts as a word byte, so UTF-8 letters stay inside words) plus one token
// per ASCII punctuation character. Whitespace separates.
std::vector<std::string> words(std::string_view s);

}  // namespace aoes::text
