#include "gem/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace gem {

namespace {

const char* const kReservedTokens[kNumReserved] = {"<pad>", "<unk>", "<bos>",
                                                   "<eos>", "<emb>"};

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n\f\v");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n\f\v");
  return s.substr(b, e - b + 1);
}

bool is_reserved_word(const std::string& w) {
  for (const char* r : kReservedTokens) {
    if (w == r) return true;
  }
  return false;
}

}  // namespace

std::vector<Document> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open corpus file: " + path);
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (in.bad()) {
    throw std::runtime_error("I/O error while reading: " + path);
  }

  // JSONL mode iff the first non-blank line starts with '{'.
  bool jsonl = false;
  for (const auto& l : lines) {
    std::string t = trim(l);
    if (t.empty()) continue;
    jsonl = t.front() == '{';
    break;
  }

  std::vector<Document> docs;
  for (size_t i = 0; i < lines.size(); ++i) {
    const long lineno = static_cast<long>(i) + 1;
    std::string t = trim(lines[i]);
    if (t.empty()) continue;
    if (jsonl) {
      nlohmann::json row;
      try {
        row = nlohmann::json::parse(t);
      } catch (const std::exception& e) {
        throw std::runtime_error(path + " line " + std::to_string(lineno) +
                                 ": malformed JSON (" + e.what() + ")");
      }
      if (!row.is_object() || !row.contains("text") ||
          !row["text"].is_string()) {
        throw std::runtime_error(path + " line " + std::to_string(lineno) +
                                 ": JSONL row lacks a \"text\" string field");
      }
      std::string text = trim(row["text"].get<std::string>());
      if (text.empty()) continue;
      std::string id = row.contains("id") && row["id"].is_string()
                           ? row["id"].get<std::string>()
                           : "line-" + std::to_string(lineno);
      docs.push_back({std::move(id), std::move(text)});
    } else {
      docs.push_back({"line-" + std::to_string(lineno), std::move(t)});
    }
  }
  return docs;
}

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocab Vocab::build(const std::vector<Document>& docs, int cap) {
  if (cap < kNumReserved + 1) {
    throw std::invalid_argument("vocab cap must be at least " +
                                std::to_string(kNumReserved + 1));
  }
  std::unordered_map<std::string, long> counts;
  for (const auto& d : docs) {
    for (auto& w : tokenize_words(d.text)) {
      if (is_reserved_word(w)) continue;
      ++counts[w];
    }
  }
  if (counts.empty()) {
    throw std::invalid_argument("cannot build vocabulary from an empty corpus");
  }
  std::vector<std::pair<std::string, long>> freq(counts.begin(), counts.end());
  std::sort(freq.begin(), freq.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const size_t keep = std::min(freq.size(), static_cast<size_t>(cap) - kNumReserved);

  Vocab v;
  v.cap_ = cap;
  v.id_to_token_.reserve(kNumReserved + keep);
  for (const char* r : kReservedTokens) v.id_to_token_.emplace_back(r);
  for (size_t i = 0; i < keep; ++i) v.id_to_token_.push_back(freq[i].first);
  v.rebuild_index();
  return v;
}

void Vocab::rebuild_index() {
  token_to_id_.clear();
  for (size_t i = kNumReserved; i < id_to_token_.size(); ++i) {
    token_to_id_[id_to_token_[i]] = static_cast<int>(i);
  }
}

bool Vocab::contains(const std::string& word) const {
  return token_to_id_.count(word) > 0;
}

int Vocab::id_of(const std::string& word) const {
  auto it = token_to_id_.find(word);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= size()) {
    throw std::invalid_argument("token id " + std::to_string(id) +
                                " out of range for vocab of size " +
                                std::to_string(size()));
  }
  return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> ids;
  for (auto& w : tokenize_words(text)) ids.push_back(id_of(w));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token_of(ids[i]);
  }
  return out;
}

std::string Vocab::to_json_string() const {
  nlohmann::ordered_json j;
  j["cap"] = cap_;
  j["tokens"] = id_to_token_;
  return j.dump();
}

Vocab Vocab::from_json_string(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  Vocab v;
  v.cap_ = j.at("cap").get<int>();
  v.id_to_token_ = j.at("tokens").get<std::vector<std::string>>();
  if (v.id_to_token_.size() < kNumReserved) {
    throw std::runtime_error("vocab json lacks the reserved tokens");
  }
  for (int i = 0; i < kNumReserved; ++i) {
    if (v.id_to_token_[static_cast<size_t>(i)] != kReservedTokens[i]) {
      throw std::runtime_error("vocab json reserved tokens are out of order");
    }
  }
  v.rebuild_index();
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  out << to_json_string() << "\n";
  if (!out) throw std::runtime_error("failed writing vocab file: " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocab file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

}  // namespace gem
