#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rhymelm/rhyme_vocab.hpp"

namespace rhymelm {

struct Lyric {
  std::string song_id;
  std::vector<std::string> lines;
};

struct SentencePair {
  std::string first;
  std::string second;
  std::string song_id;

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

enum class DatasetVariant { kRaw, kFiltered, kOnlyRhyme };

DatasetVariant parse_variant(std::string_view text);
std::string_view to_string(DatasetVariant v);

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LengthBounds {
  std::size_t min_len = 2;
  std::size_t max_len = 30;
};

// Reads every `.txt` file in `dir` (one song per file, one line per sentence),
// ordered by file name. song_id is the file stem.
std::vector<Lyric> ingest(const std::filesystem::path& dir);

// Splits file contents into trimmed, non-blank lines.
Lyric parse_lyric(std::string song_id, std::string_view text);

// Sliding window: (l0,l1), (l1,l2), ...
std::vector<SentencePair> extract_pairs(const Lyric& lyric);

std::vector<SentencePair> extract_pairs(const std::vector<Lyric>& lyrics);

// Last character of a line, or U'\0' for an empty line.
char32_t end_char(std::string_view line);

// Length check first, then the same-end-character check. Order preserved.
std::vector<SentencePair> filter_pairs(const std::vector<SentencePair>& pairs, LengthBounds bounds);

// Keeps pairs whose end characters fall in the same one of the 13 rhyme classes.
std::vector<SentencePair> only_rhyme(const std::vector<SentencePair>& pairs,
                                     const CharPinyinLexicon& lex);

bool ends_rhyme(std::string_view first, std::string_view second, const CharPinyinLexicon& lex);

std::vector<SentencePair> build_dataset(const std::vector<Lyric>& lyrics, DatasetVariant variant,
                                        LengthBounds bounds, const CharPinyinLexicon& lex);

// TSV with a `song_id\tfirst\tsecond` header; backslash, tab, CR and LF escaped.
void write_dataset(const std::vector<SentencePair>& pairs, const std::filesystem::path& path);
std::string format_dataset(const std::vector<SentencePair>& pairs);
std::vector<SentencePair> read_dataset(const std::filesystem::path& path);
std::vector<SentencePair> parse_dataset(std::string_view text, const std::string& source = "<memory>");

std::string escape_field(std::string_view text);
std::string unescape_field(std::string_view text);

}  // namespace rhymelm
