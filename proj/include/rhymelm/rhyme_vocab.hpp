#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>

namespace rhymelm {

// The 18 rhyme symbols. Ids are stable: the four structural tags, then the
// thirteen rhyme classes in table row order, then UNKNOWN.
enum class RhymeClass : std::uint8_t {
  kPad = 0,
  kCls,
  kSep,
  kSpace,
  kClass1,   // a ia ua
  kClass2,   // an ian uan
  kClass3,   // o e uo
  kClass4,   // en un
  kClass5,   // ie ve
  kClass6,   // ang iang uang
  kClass7,   // ai uai
  kClass8,   // eng ong iong
  kClass9,   // ei ui
  kClass10,  // i er v in ing
  kClass11,  // ao iao
  kClass12,  // ou iu
  kClass13,  // u
  kUnknown,
};

inline constexpr std::size_t kNumRhymeSymbols = 18;
inline constexpr std::size_t kNumRhymeClasses = 13;

constexpr int id(RhymeClass rc) { return static_cast<int>(rc); }

// Throws std::out_of_range for ids outside [0, 17].
RhymeClass rhyme_class_from_id(int id);

constexpr bool is_tag(RhymeClass rc) { return id(rc) <= id(RhymeClass::kSpace); }

constexpr bool is_rhyme_class(RhymeClass rc) {
  return id(rc) >= id(RhymeClass::kClass1) && id(rc) <= id(RhymeClass::kClass13);
}

// Short label: tag spelling for tags, the row's first final for classes.
std::string_view name(RhymeClass rc);

std::array<double, kNumRhymeSymbols> one_hot(RhymeClass rc);

// Maps pinyin finals onto the thirteen rhyme classes.
class RhymeTable {
 public:
  // The shared, immutable table.
  static const RhymeTable& standard();

  // Lowercases, strips tone digits and tone-marked vowels, writes u-umlaut as
  // "v", then looks the final up. Unlisted finals give UNKNOWN.
  RhymeClass classify(std::string_view final) const;

  const std::unordered_map<std::string, RhymeClass>& finals() const { return final_to_class_; }

 private:
  RhymeTable();
  std::unordered_map<std::string, RhymeClass> final_to_class_;
};

std::string normalize_final(std::string_view final);

inline RhymeClass classify_final(std::string_view final) {
  return RhymeTable::standard().classify(final);
}

class LexiconError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Character -> tone-stripped pinyin final. Immutable after load.
class CharPinyinLexicon {
 public:
  CharPinyinLexicon() = default;

  // One `<char>\t<final>` record per line; `#` starts a comment line and blank
  // lines are skipped. The first record for a character wins.
  static CharPinyinLexicon load(const std::filesystem::path& path);
  static CharPinyinLexicon parse(std::string_view text, const std::string& source = "<memory>");

  std::optional<std::string_view> final_of(char32_t c) const;
  std::size_t size() const { return char_to_final_.size(); }

 private:
  std::unordered_map<char32_t, std::string> char_to_final_;
};

// Space -> TAG_SPACE; lexicon hit -> class of its final; anything else UNKNOWN.
RhymeClass classify_char(char32_t c, const CharPinyinLexicon& lex);

// Location of the shipped lexicon (data/lexicon.tsv in the source tree),
// overridable with RHYMELM_LEXICON.
std::filesystem::path default_lexicon_path();

}  // namespace rhymelm
