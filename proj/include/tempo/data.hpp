#pragma once

// Datasets: a character-level corpus and dense image/text feature pairs.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tempo/tensor.hpp"

namespace tempo::data {

/// Decodes UTF-8 into code points. Throws ValidationError on malformed input.
std::vector<char32_t> decode_utf8(std::string_view text);
std::string encode_utf8(std::u32string_view text);

/// Sorted set of code points seen in a corpus.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<char32_t> symbols);
  static Vocab build(const std::vector<char32_t>& text);

  std::size_t size() const noexcept { return symbols_.size(); }
  const std::vector<char32_t>& symbols() const noexcept { return symbols_; }
  /// Throws DomainError for a code point outside the vocabulary.
  std::size_t id(char32_t c) const;
  std::vector<std::size_t> encode(const std::vector<char32_t>& text) const;

 private:
  std::vector<char32_t> symbols_;
  std::unordered_map<char32_t, std::size_t> index_;
};

/// Token sequences; sequence i predicts ids[i][j + 1] from ids[i][0..j].
struct TokenBatch {
  std::vector<std::vector<std::size_t>> sequences;

  /// Throws DomainError unless nonempty, lengths >= 2 and ids < vocab_size.
  void validate(std::size_t vocab_size) const;
  /// Number of predicted positions, sum of (length - 1).
  std::size_t positions() const;
  /// Next-token targets in position order.
  std::vector<std::size_t> targets() const;
};

struct Corpus {
  Vocab vocab;
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
};

/// Reads a UTF-8 text file; the last valid_fraction of the text is held out.
Corpus load_corpus(const std::filesystem::path& path, double valid_fraction = 0.1);
/// Same split, using an already fixed vocabulary.
Corpus load_corpus(const std::filesystem::path& path, const Vocab& vocab, double valid_fraction = 0.1);

/// batch_size random windows of length context + 1.
TokenBatch sample_windows(const std::vector<std::size_t>& ids, std::size_t context, std::size_t batch_size,
                          std::mt19937_64& rng);

/// Consecutive windows of length context + 1 overlapping by one token, in
/// order, grouped into batches; at most max_windows windows (0 = all).
std::vector<TokenBatch> sequential_windows(const std::vector<std::size_t>& ids, std::size_t context,
                                           std::size_t batch_size, std::size_t max_windows = 0);

/// n matched pairs of image features [n x di] and text features [n x dt].
struct PairBatch {
  Tensor images;
  Tensor texts;

  std::size_t size() const noexcept { return images.rows(); }
  /// Throws DomainError unless n >= 2 and both sides have n rows.
  void validate() const;
  PairBatch select(const std::vector<std::size_t>& rows) const;
};

/// CSV with header img_0..img_{di-1},txt_0..txt_{dt-1}; one row per pair.
PairBatch read_pairs_csv(const std::filesystem::path& path);
void write_pairs_csv(const PairBatch& pairs, const std::filesystem::path& path);

struct PairGenConfig {
  std::size_t n = 1000;
  std::size_t image_dim = 32;
  std::size_t text_dim = 24;
  std::size_t latent_dim = 16;
  std::size_t clusters = 20;
  double instance_scale = 0.6;
  /// Per-pair noise standard deviation is drawn uniformly from [min, max].
  double noise_min = 0.1;
  double noise_max = 1.2;
};

/// Synthetic clustered pairs: a shared latent (cluster center plus an
/// instance offset) is mapped to each side by a fixed random linear map, then
/// perturbed with pair-specific noise.
PairBatch generate_pairs(const PairGenConfig& cfg, std::uint64_t seed);

}  // namespace tempo::data
