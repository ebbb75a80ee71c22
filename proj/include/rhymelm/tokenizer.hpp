#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rhymelm/corpus.hpp"
#include "rhymelm/rhyme_vocab.hpp"

namespace rhymelm {

inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kSepId = 2;
inline constexpr int kSpaceId = 3;
inline constexpr int kNumReservedIds = 4;

class TokenizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Character vocabulary. Ids 0..3 are the tags; characters follow in code point order.
class Vocab {
 public:
  static Vocab build(const std::vector<SentencePair>& pairs);
  // Tag list followed by the given characters (sorted, deduplicated, space dropped).
  static Vocab from_chars(std::u32string chars);

  // One token per line, line number = id.
  std::string serialize() const;
  static Vocab deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  std::size_t size() const { return kNumReservedIds + chars_.size(); }
  std::optional<int> id_of(char32_t c) const;
  bool is_char_id(int id) const { return id >= kNumReservedIds && id < static_cast<int>(size()); }
  // Character for a character id; throws for tags.
  char32_t char_of(int id) const;
  // Printable form: the tag spelling or the UTF-8 character.
  std::string token_text(int id) const;
  const std::u32string& chars() const { return chars_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.chars_ == b.chars_; }

 private:
  std::u32string chars_;
  std::unordered_map<char32_t, int> index_;
};

struct EncodedPair {
  std::vector<int> token_ids;
  std::vector<int> rhyme_ids;

  std::size_t size() const { return token_ids.size(); }
  friend bool operator==(const EncodedPair&, const EncodedPair&) = default;
};

// Appends one line's characters: space -> <space>/TAG_SPACE, others -> char/classify_char.
void append_line(EncodedPair& out, std::string_view line, const Vocab& vocab,
                 const CharPinyinLexicon& lex);

// <cls> first <sep> second <sep>
EncodedPair encode_pair(const SentencePair& pair, const Vocab& vocab, const CharPinyinLexicon& lex);
std::vector<EncodedPair> encode_pairs(const std::vector<SentencePair>& pairs, const Vocab& vocab,
                                      const CharPinyinLexicon& lex);

// <cls> prompt <sep>; the generation context.
EncodedPair encode_prompt(std::string_view prompt, const Vocab& vocab, const CharPinyinLexicon& lex);

// Recovers the two lines from a `<cls> A <sep> B <sep>` layout.
std::pair<std::string, std::string> decode_pair(const EncodedPair& enc, const Vocab& vocab);

// Characters for a run of token ids; <space> becomes ' ', other tags are dropped.
std::string decode_tokens(const std::vector<int>& ids, const Vocab& vocab);

int rhyme_id_for_token(int token_id, const Vocab& vocab, const CharPinyinLexicon& lex);

struct Batch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> tokens;     // rows x cols, row-major
  std::vector<int> rhymes;     // rows x cols
  std::vector<double> mask;    // rows x cols; 1 where the next-token target is real
  std::vector<std::size_t> lengths;

  int token(std::size_t r, std::size_t c) const { return tokens[r * cols + c]; }
  int rhyme(std::size_t r, std::size_t c) const { return rhymes[r * cols + c]; }
  double mask_at(std::size_t r, std::size_t c) const { return mask[r * cols + c]; }
  double mask_total() const;
};

// Right-pads with <pad>/TAG_PAD. Throws if any sequence exceeds max_len.
Batch pad_batch(const std::vector<EncodedPair>& encoded, std::size_t max_len);

}  // namespace rhymelm
