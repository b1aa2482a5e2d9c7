#include "sar/simdist.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <set>

#include "sar/errors.hpp"
#include "sar/ops.hpp"

namespace sar {
namespace {

void require_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError("temperature must be positive, got " + std::to_string(temperature));
  }
}

// Softmax of values / temperature with max subtraction.
void softmax_into(std::span<const double> values, double temperature, std::span<double> out) {
  const double mx = *std::max_element(values.begin(), values.end()) / temperature;
  double z = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = std::exp(values[i] / temperature - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void IndexFamily::validate(std::size_t m) const {
  if (num_rows != m || rows.size() != m) {
    throw DimensionError("index family has " + std::to_string(rows.size()) + " rows, expected " + std::to_string(m));
  }
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto& r = rows[j];
    if (r.size() != k) throw DimensionError("index family row " + std::to_string(j) + " does not have K entries");
    std::set<std::size_t> seen;
    for (std::size_t idx : r) {
      if (idx >= m) throw DimensionError("index family row " + std::to_string(j) + " has out-of-range index");
      if (idx == j) throw DimensionError("index family row " + std::to_string(j) + " contains its own index");
      if (!seen.insert(idx).second) throw DimensionError("index family row " + std::to_string(j) + " repeats an index");
    }
  }
}

std::vector<std::size_t> IndexFamily::flattened() const {
  std::vector<std::size_t> out;
  out.reserve(num_rows * k);
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

Tensor SimilarityDistribution::dense() const {
  const std::size_t m = size();
  std::vector<double> out(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < family.k; ++c) out[i * m + family.rows[i][c]] = rows.at(i, c);
  }
  return Tensor::matrix(m, m, std::move(out));
}

CosineMatrix cosine_matrix(const EmbeddingSet& set) {
  set.validate();
  const std::size_t m = set.size();
  if (m < 2) throw DimensionError("cosine matrix needs at least two embeddings, got " + std::to_string(m));
  const Tensor unit = ad::normalize_rows(set.vectors);
  const std::size_t d = unit.cols();
  std::vector<double> c(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    c[i * m + i] = 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += unit.at(i, k) * unit.at(j, k);
      s = std::clamp(s, -1.0, 1.0);
      c[i * m + j] = s;
      c[j * m + i] = s;
    }
  }
  return CosineMatrix{set.names, Tensor::matrix(m, m, std::move(c))};
}

SimilarityDistribution full_distribution(const CosineMatrix& cosines, double temperature) {
  require_temperature(temperature);
  const std::size_t m = cosines.values.rows();
  if (m < 2) throw DimensionError("similarity distribution needs at least two embeddings");
  IndexFamily family{m, m - 1, {}};
  std::vector<double> out(m * (m - 1));
  std::vector<double> others(m - 1);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<std::size_t> idx;
    idx.reserve(m - 1);
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      others[idx.size()] = cosines.values.at(i, k);
      idx.push_back(k);
    }
    softmax_into(others, temperature, std::span<double>(out).subspan(i * (m - 1), m - 1));
    family.rows.push_back(std::move(idx));
  }
  return SimilarityDistribution{Tensor::matrix(m, m - 1, std::move(out)), std::move(family), temperature};
}

SimilarityDistribution full_distribution(const EmbeddingSet& set, double temperature) {
  require_temperature(temperature);
  return full_distribution(cosine_matrix(set), temperature);
}

IndexFamily sample_index_family(std::size_t m, std::size_t k, Rng& rng) {
  if (m < 2 || k < 1 || k > m - 1) {
    throw ParameterError("sample size K=" + std::to_string(k) + " must lie in [1, M-1] for M=" + std::to_string(m) +
                         (k > 0 && m > 0 && k > m - 1 ? " (K exceeds M-1)" : ""));
  }
  IndexFamily family{m, k, {}};
  family.rows.reserve(m);
  std::vector<std::size_t> pool(m - 1);
  for (std::size_t j = 0; j < m; ++j) {
    // Candidates {0..M-1} \ {j}; a partial Fisher-Yates pass takes the first K.
    std::iota(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(j), 0);
    std::iota(pool.begin() + static_cast<std::ptrdiff_t>(j), pool.end(), j + 1);
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, m - 2);
      std::swap(pool[i], pool[pick(rng)]);
    }
    family.rows.emplace_back(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return family;
}

IndexFamily sample_index_family(std::size_t m, std::size_t k, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x1d5);
  return sample_index_family(m, k, rng);
}

SimilarityDistribution sampled_distribution(const CosineMatrix& cosines, const IndexFamily& family,
                                            double temperature) {
  require_temperature(temperature);
  const std::size_t m = cosines.values.rows();
  family.validate(m);
  std::vector<double> out(m * family.k);
  std::vector<double> picked(family.k);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < family.k; ++c) picked[c] = cosines.values.at(i, family.rows[i][c]);
    softmax_into(picked, temperature, std::span<double>(out).subspan(i * family.k, family.k));
  }
  return SimilarityDistribution{Tensor::matrix(m, family.k, std::move(out)), family, temperature};
}

SimilarityDistribution sampled_distribution(const EmbeddingSet& set, const IndexFamily& family, double temperature) {
  require_temperature(temperature);
  if (family.num_rows != set.size()) {
    throw DimensionError("index family built for M=" + std::to_string(family.num_rows) + " applied to " +
                         std::to_string(set.size()) + " embeddings");
  }
  return sampled_distribution(cosine_matrix(set), family, temperature);
}

std::vector<double> kl_per_row(const SimilarityDistribution& p, const SimilarityDistribution& q) {
  if (p.rows.shape() != q.rows.shape()) {
    throw DimensionError("KL operands differ in shape: " + shape_string(p.rows.shape()) + " vs " +
                         shape_string(q.rows.shape()));
  }
  if (!(p.family == q.family)) throw DimensionError("KL operands were built from different index families");
  const std::size_t m = p.rows.rows(), k = p.rows.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double pv = p.rows.at(i, c);
      if (pv <= 0.0) continue;
      s += pv * (std::log(std::max(pv, ad::kLogFloor)) - std::log(std::max(q.rows.at(i, c), ad::kLogFloor)));
    }
    out[i] = s;
  }
  return out;
}

double kl_rows(const SimilarityDistribution& p, const SimilarityDistribution& q) {
  const auto per_row = kl_per_row(p, q);
  return std::accumulate(per_row.begin(), per_row.end(), 0.0) / static_cast<double>(per_row.size());
}

namespace ad {

Tensor sampled_cosines(const Tensor& embeddings, const IndexFamily& family) {
  if (embeddings.rank() != 2) throw DimensionError("embeddings must be a matrix");
  const std::size_t m = embeddings.rows();
  family.validate(m);
  // Full Gram matrix of the normalized rows, then the K entries of each row.
  // Cheaper than gathering M*K row pairs once K is more than a few.
  const Tensor unit = normalize_rows(embeddings);
  const Tensor gram = reshape(matmul(unit, transpose(unit)), {m * m, 1});
  std::vector<std::size_t> flat;
  flat.reserve(m * family.k);
  for (std::size_t i = 0; i < m; ++i) {
    for (auto j : family.rows[i]) flat.push_back(i * m + j);
  }
  return reshape(gather_rows(gram, flat), {m, family.k});
}

Tensor kl_rows(const Tensor& log_p, const Tensor& q) {
  if (log_p.shape() != q.shape() || log_p.rank() != 2) {
    throw DimensionError("KL operands differ in shape: " + shape_string(log_p.shape()) + " vs " +
                         shape_string(q.shape()));
  }
  const Tensor log_q = log(q.detach());
  const Tensor terms = mul(exp(log_p), sub(log_p, log_q));
  return scale(sum(terms), 1.0 / static_cast<double>(log_p.rows()));
}

}  // namespace ad

void write_matrix_csv(std::ostream& out, std::span<const std::string> names, const Tensor& matrix) {
  if (matrix.rank() != 2 || matrix.rows() != names.size() || matrix.cols() != names.size()) {
    throw DimensionError("heatmap matrix must be square with one name per row");
  }
  out << "class";
  for (const auto& n : names) out << ',' << csv_field(n);
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << csv_field(names[i]);
    for (std::size_t j = 0; j < names.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.6f", matrix.at(i, j));
      out << ',' << buf;
    }
    out << '\n';
  }
}

void write_distribution_csv(std::ostream& out, std::span<const std::string> names, const SimilarityDistribution& dist) {
  write_matrix_csv(out, names, dist.dense());
}

}  // namespace sar
