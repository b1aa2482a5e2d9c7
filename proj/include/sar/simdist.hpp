#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sar/encoders.hpp"
#include "sar/random.hpp"
#include "sar/tensor.hpp"

namespace sar {

// Temperature applied to cosine similarities in every softmax unless a run
// overrides it.
inline constexpr double kDefaultTemperature = 0.01;

struct CosineMatrix {
  std::vector<std::string> names;
  Tensor values;  // [M x M], symmetric, unit diagonal
};

// Per-row lists of column indices. Row j never contains j, and entries of a
// row are distinct. Order matters: two distributions built from the same
// family line up column by column.
struct IndexFamily {
  std::size_t num_rows = 0;
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> rows;

  void validate(std::size_t m) const;
  std::vector<std::size_t> flattened() const;
  bool operator==(const IndexFamily&) const = default;
};

// Row-stochastic matrix over per-row index sets. The full similarity
// distribution uses every other index in ascending order (K = M - 1); the
// diagonal is implicitly zero.
struct SimilarityDistribution {
  Tensor rows;  // [M x K]
  IndexFamily family;
  double temperature = kDefaultTemperature;

  std::size_t size() const { return rows.rows(); }
  // [M x M] with zeros where a column was not part of the row's index set.
  Tensor dense() const;
};

CosineMatrix cosine_matrix(const EmbeddingSet& set);
SimilarityDistribution full_distribution(const EmbeddingSet& set, double temperature);
SimilarityDistribution full_distribution(const CosineMatrix& cosines, double temperature);

// K distinct indices per row drawn uniformly without replacement from
// {0..M-1} \ {j}. ParameterError unless 1 <= K <= M-1.
IndexFamily sample_index_family(std::size_t m, std::size_t k, std::uint64_t seed);
IndexFamily sample_index_family(std::size_t m, std::size_t k, Rng& rng);

SimilarityDistribution sampled_distribution(const EmbeddingSet& set, const IndexFamily& family, double temperature);
SimilarityDistribution sampled_distribution(const CosineMatrix& cosines, const IndexFamily& family,
                                            double temperature);

// Mean over rows of KL(p_i || q_i) in nats. Both sides must share the same
// index family (DimensionError otherwise); logs use the 1e-12 floor.
double kl_rows(const SimilarityDistribution& p, const SimilarityDistribution& q);
std::vector<double> kl_per_row(const SimilarityDistribution& p, const SimilarityDistribution& q);

// Differentiable pieces of the alignment loss.
namespace ad {

// [M x K] cosines cos(e_i, e_k) for k in family row i; `embeddings` is [M x d].
Tensor sampled_cosines(const Tensor& embeddings, const IndexFamily& family);

// Mean over rows of sum_k p_ik (log p_ik - log q_ik), given log p (tracked)
// and q (constant). q entries below the floor are clamped.
Tensor kl_rows(const Tensor& log_p, const Tensor& q);

}  // namespace ad

// Heatmap export: header row and first column carry class names, values use
// six decimals.
void write_matrix_csv(std::ostream& out, std::span<const std::string> names, const Tensor& matrix);
void write_distribution_csv(std::ostream& out, std::span<const std::string> names, const SimilarityDistribution& dist);

}  // namespace sar
