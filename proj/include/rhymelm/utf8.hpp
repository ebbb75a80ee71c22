#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rhymelm::utf8 {

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws DecodeError on malformed input (overlong forms, surrogates and
// out-of-range scalars included).
std::u32string decode(std::string_view text);

bool is_valid(std::string_view text);

std::string encode(char32_t cp);
std::string encode(std::u32string_view text);

// Number of Unicode scalar values; input must be valid UTF-8.
std::size_t length(std::string_view text);

// Trims ASCII whitespace and U+3000 (ideographic space) from both ends.
std::string trim(std::string_view text);

}  // namespace rhymelm::utf8
