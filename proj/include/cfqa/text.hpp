#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cfqa::text {

// UTF-8 helpers shared by surface-form normalization and metric tokenization.
// Case folding implements the Unicode simple (1:1) mappings for the ranges
// that cover trivia-style answer text: ASCII, Latin-1 Supplement, Latin
// Extended-A, Greek, and Cyrillic. Codepoints outside those ranges pass
// through unchanged.

std::uint32_t fold_codepoint(std::uint32_t cp);

bool is_space_codepoint(std::uint32_t cp);

/// Decodes one UTF-8 codepoint starting at `pos`, advancing `pos`.
/// Invalid bytes decode as themselves (latin-1 style) so no input is rejected.
std::uint32_t decode_utf8(std::string_view s, std::size_t& pos);

void encode_utf8(std::uint32_t cp, std::string& out);

/// Case-folds an entire UTF-8 string.
std::string fold_case(std::string_view s);

/// Case-fold, collapse whitespace runs to a single ASCII space, and trim.
std::string fold_and_collapse(std::string_view s);

std::string trim(std::string_view s);

bool is_blank(std::string_view s);

std::vector<std::string_view> split_lines(std::string_view s);

std::string to_lower_hex(const unsigned char* bytes, std::size_t len);

}  // namespace cfqa::text
