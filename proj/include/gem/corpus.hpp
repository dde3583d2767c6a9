#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace gem {

// Reserved ids, fixed order. EMB is the special embedding token.
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;
inline constexpr int kEmbId = 4;
inline constexpr int kNumReserved = 5;

struct Document {
  std::string id;
  std::string text;
};

// One document per line; JSONL with a "text" field is auto-detected per file.
std::vector<Document> load_corpus(const std::string& path);

// Lowercased whitespace tokenization.
std::vector<std::string> tokenize_words(const std::string& text);

class Vocab {
 public:
  Vocab() = default;

  // Most frequent (cap-5) words kept, ties broken lexicographically.
  static Vocab build(const std::vector<Document>& docs, int cap);

  static Vocab from_json_string(const std::string& json_text);
  static Vocab load(const std::string& path);
  std::string to_json_string() const;
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int cap() const { return cap_; }

  bool contains(const std::string& word) const;
  int id_of(const std::string& word) const;  // UNK for unknown words
  const std::string& token_of(int id) const;

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

 private:
  int cap_ = 0;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;

  void rebuild_index();
};

}  // namespace gem
