#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace skipxl {

enum class TokenLevel { Character, Word };

TokenLevel parse_level(const std::string& name);
std::string level_name(TokenLevel level);

// Built from the training split only. Regular tokens are sorted and take ids
// 0..n-1; specials follow: "<unk>" for both levels, and "<eos>" (one per line
// break) at word level.
class Vocabulary {
 public:
  static Vocabulary build(const std::string& text, TokenLevel level);
  static Vocabulary from_tokens(std::vector<std::string> tokens, TokenLevel level);

  TokenLevel level() const { return level_; }
  std::size_t size() const { return tokens_.size(); }
  std::int64_t unk_id() const { return unk_id_; }
  std::int64_t eos_id() const { return eos_id_; }  // -1 at character level
  std::int64_t id(const std::string& token) const;  // unk_id for unknown tokens
  const std::string& token(std::int64_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  TokenLevel level_ = TokenLevel::Character;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> ids_;
  std::int64_t unk_id_ = -1;
  std::int64_t eos_id_ = -1;
};

struct Corpus {
  std::vector<std::int64_t> ids;
  std::shared_ptr<const Vocabulary> vocab;
  TokenLevel level = TokenLevel::Character;

  std::size_t size() const { return ids.size(); }
};

std::vector<std::string> tokenize(const std::string& text, TokenLevel level);

// New vocabulary from this text.
Corpus corpus_from_text(const std::string& text, TokenLevel level);
// Encode with an existing (training) vocabulary; unknown tokens -> unk id.
Corpus corpus_from_text(const std::string& text, std::shared_ptr<const Vocabulary> vocab);

Corpus load_corpus(const std::filesystem::path& path, TokenLevel level);
Corpus load_corpus(const std::filesystem::path& path, std::shared_ptr<const Vocabulary> vocab);

struct Batch {
  std::size_t batch = 0;
  std::size_t block = 0;
  std::vector<std::int64_t> inputs;   // [batch × block]
  std::vector<std::int64_t> targets;  // [batch × block]

  std::span<const std::int64_t> input_row(std::size_t b) const {
    return std::span<const std::int64_t>(inputs).subspan(b * block, block);
  }
  std::span<const std::int64_t> target_row(std::size_t b) const {
    return std::span<const std::int64_t>(targets).subspan(b * block, block);
  }
};

// Splits the sequence into `batch` contiguous streams of floor((len-1)/batch)
// inputs each; step t reads block t of every stream. Steps past the epoch
// wrap around.
class Batchifier {
 public:
  Batchifier(std::span<const std::int64_t> ids, std::size_t batch, std::size_t block);

  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  std::size_t stream_length() const { return stream_length_; }
  std::size_t tokens_per_epoch() const { return steps_per_epoch_ * batch_ * block_; }
  Batch at(std::size_t step) const;

 private:
  std::vector<std::int64_t> ids_;
  std::size_t batch_;
  std::size_t block_;
  std::size_t stream_length_;
  std::size_t steps_per_epoch_;
};

}  // namespace skipxl
