#include "skipxl/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "skipxl/errors.hpp"

namespace skipxl {

TokenLevel parse_level(const std::string& name) {
  if (name == "char" || name == "character") return TokenLevel::Character;
  if (name == "word") return TokenLevel::Word;
  throw ConfigError("unknown token level '" + name + "' (expected char or word)");
}

std::string level_name(TokenLevel level) {
  return level == TokenLevel::Character ? "char" : "word";
}

std::vector<std::string> tokenize(const std::string& text, TokenLevel level) {
  std::vector<std::string> out;
  if (level == TokenLevel::Character) {
    out.reserve(text.size());
    for (char c : text) out.emplace_back(1, c);
    return out;
  }
  std::istringstream lines(text);
  std::string line;
  bool first = true;
  while (std::getline(lines, line)) {
    if (!first) out.emplace_back("<eos>");
    first = false;
    std::istringstream words(line);
    std::string w;
    while (words >> w) out.push_back(w);
  }
  if (!text.empty() && text.back() == '\n') out.emplace_back("<eos>");
  return out;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, TokenLevel level) {
  Vocabulary v;
  v.level_ = level;
  std::set<std::string> regular(tokens.begin(), tokens.end());
  regular.erase("<unk>");
  regular.erase("<eos>");
  v.tokens_.assign(regular.begin(), regular.end());
  v.unk_id_ = static_cast<std::int64_t>(v.tokens_.size());
  v.tokens_.push_back("<unk>");
  if (level == TokenLevel::Word) {
    v.eos_id_ = static_cast<std::int64_t>(v.tokens_.size());
    v.tokens_.push_back("<eos>");
  }
  for (std::size_t i = 0; i < v.tokens_.size(); ++i)
    v.ids_.emplace(v.tokens_[i], static_cast<std::int64_t>(i));
  return v;
}

Vocabulary Vocabulary::build(const std::string& text, TokenLevel level) {
  return from_tokens(tokenize(text, level), level);
}

std::int64_t Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) return unk_id_;
  return it->second;
}

const std::string& Vocabulary::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InputError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Corpus corpus_from_text(const std::string& text, std::shared_ptr<const Vocabulary> vocab) {
  if (text.empty()) throw InputError("corpus is empty");
  Corpus c;
  c.level = vocab->level();
  for (const auto& t : tokenize(text, c.level)) c.ids.push_back(vocab->id(t));
  if (c.ids.empty()) throw InputError("corpus has no tokens");
  c.vocab = std::move(vocab);
  return c;
}

Corpus corpus_from_text(const std::string& text, TokenLevel level) {
  if (text.empty()) throw InputError("corpus is empty");
  return corpus_from_text(text, std::make_shared<const Vocabulary>(Vocabulary::build(text, level)));
}

namespace {
std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading corpus '" + path.string() + "'");
  return ss.str();
}
}  // namespace

Corpus load_corpus(const std::filesystem::path& path, TokenLevel level) {
  return corpus_from_text(read_file(path), level);
}

Corpus load_corpus(const std::filesystem::path& path, std::shared_ptr<const Vocabulary> vocab) {
  return corpus_from_text(read_file(path), std::move(vocab));
}

Batchifier::Batchifier(std::span<const std::int64_t> ids, std::size_t batch, std::size_t block)
    : ids_(ids.begin(), ids.end()), batch_(batch), block_(block) {
  if (batch == 0 || block == 0) throw ConfigError("batch and block sizes must be positive");
  if (ids.size() < batch * (block + 1)) {
    throw InputError("corpus of " + std::to_string(ids.size()) + " tokens is too small for " +
                     std::to_string(batch) + " streams of block " + std::to_string(block));
  }
  stream_length_ = (ids.size() - 1) / batch;
  steps_per_epoch_ = stream_length_ / block;
}

Batch Batchifier::at(std::size_t step) const {
  Batch b;
  b.batch = batch_;
  b.block = block_;
  b.inputs.resize(batch_ * block_);
  b.targets.resize(batch_ * block_);
  const std::size_t t = step % steps_per_epoch_;
  for (std::size_t s = 0; s < batch_; ++s) {
    const std::size_t start = s * stream_length_ + t * block_;
    for (std::size_t j = 0; j < block_; ++j) {
      b.inputs[s * block_ + j] = ids_[start + j];
      b.targets[s * block_ + j] = ids_[start + j + 1];
    }
  }
  return b;
}

}  // namespace skipxl
