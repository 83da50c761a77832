#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace tcmrag::utf8 {

/// Decodes UTF-8 into code points. Invalid sequences become U+FFFD.
std::u32string decode(std::string_view text);

std::string encode(std::u32string_view text);
void append(std::string& out, char32_t cp);

/// Number of Unicode scalar values in `text`.
std::size_t length(std::string_view text);

/// Substring by code-point offsets [start, end).
std::string substr(std::string_view text, std::size_t start, std::size_t end);

bool is_han(char32_t cp);
bool is_ascii_alnum(char32_t cp);
bool is_space(char32_t cp);
bool is_control(char32_t cp);
/// ASCII, CJK and full-width punctuation plus general symbols.
bool is_punct(char32_t cp);

}  // namespace tcmrag::utf8
