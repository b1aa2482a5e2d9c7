#include "sar/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "sar/errors.hpp"

namespace sar::ad {
namespace {

Tensor finish(Tape* tape, Tensor value, Tape::Backward backward) {
  if (tape == nullptr) return value;
  return tape->record(std::move(value), std::move(backward));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(x.shape()));
}

void require_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError("temperature must be positive, got " + std::to_string(temperature));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm_or_throw(std::span<const double> v, const char* op) {
  const double n = std::sqrt(dot(v, v));
  if (!(n > 0.0)) throw NumericError(std::string(op) + ": zero-norm input");
  return n;
}

template <typename Fn>
Tensor map(const Tensor& x, Fn fn) {
  std::vector<double> out(x.size());
  std::transform(x.data().begin(), x.data().end(), out.begin(), fn);
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tape* tape = common_tape({&a, &b});
  return finish(tape, Tensor(a.shape(), std::move(out)), [ia = a.node(), ib = b.node()](auto g, GradSink& sink) {
    for (NodeId id : {ia, ib}) {
      auto dst = sink.at(id);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tape* tape = common_tape({&a, &b});
  return finish(tape, Tensor(a.shape(), std::move(out)), [ia = a.node(), ib = b.node()](auto g, GradSink& sink) {
    auto da = sink.at(ia);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i];
    auto db = sink.at(ib);
    for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return Tensor(a.shape(), std::move(out));
  return finish(tape, Tensor(a.shape(), std::move(out)),
                [ia = a.node(), ib = b.node(), av = a.values(), bv = b.values()](auto g, GradSink& sink) {
                  auto da = sink.at(ia);
                  for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bv[i];
                  auto db = sink.at(ib);
                  for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * av[i];
                });
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = map(x, [factor](double v) { return v * factor; });
  return finish(x.tape(), std::move(out), [ix = x.node(), factor](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * g[i];
  });
}

Tensor exp(const Tensor& x) {
  Tensor out = map(x, [](double v) { return std::exp(v); });
  if (!x.tracked()) return out;
  return finish(x.tape(), out, [ix = x.node(), y = out.values()](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * y[i];
  });
}

Tensor log(const Tensor& x) {
  Tensor out = map(x, [](double v) { return std::log(std::max(v, kLogFloor)); });
  if (!x.tracked()) return out;
  return finish(x.tape(), std::move(out), [ix = x.node(), xv = x.values()](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > kLogFloor) dx[i] += g[i] / xv[i];
    }
  });
}

Tensor tanh(const Tensor& x) {
  Tensor out = map(x, [](double v) { return std::tanh(v); });
  if (!x.tracked()) return out;
  return finish(x.tape(), out, [ix = x.node(), y = out.values()](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return finish(x.tape(), Tensor::scalar(s), [ix = x.node()](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    for (double& d : dx) d += g[0];
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.size());
  return finish(x.tape(), Tensor::scalar(s / n), [ix = x.node(), n](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    for (double& d : dx) d += g[0] / n;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return Tensor::matrix(m, n, std::move(out));
  return finish(tape, Tensor::matrix(m, n, std::move(out)),
                [ia = a.node(), ib = b.node(), A = a.values(), B = b.values(), m, k, n](auto g, GradSink& sink) {
                  // dA = G * B^T
                  if (auto da = sink.at(ia); !da.empty()) {
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                        da[i * k + p] += s;
                      }
                    }
                  }
                  // dB = A^T * G
                  if (auto db = sink.at(ib); !db.empty()) {
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t p = 0; p < k; ++p) {
                        const double aip = A[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * g[i * n + j];
                      }
                    }
                  }
                });
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  return finish(x.tape(), Tensor::matrix(c, r, std::move(out)), [ix = x.node(), r, c](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    if (dx.empty()) return;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[j * r + i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  return finish(x.tape(), Tensor(std::move(shape), x.values()), [ix = x.node()](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
  });
}

namespace {

// Row-wise softmax (or log-softmax) of x / temperature with max subtraction.
std::vector<double> softmax_rows(const Tensor& x, double temperature, bool log_space) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const auto row = x.row(i);
    const double mx = *std::max_element(row.begin(), row.end()) / temperature;
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] / temperature - mx);
    const double log_z = std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      const double shifted = row[j] / temperature - mx;
      out[i * c + j] = log_space ? shifted - log_z : std::exp(shifted) / z;
    }
  }
  return out;
}

void require_softmax_input(const Tensor& x, double temperature) {
  require_temperature(temperature);
  if (x.rank() == 0 || x.size() == 0) throw DimensionError("softmax needs at least one element per row");
}

}  // namespace

Tensor softmax(const Tensor& x, double temperature) {
  require_softmax_input(x, temperature);
  Tensor out(x.shape(), softmax_rows(x, temperature, false));
  if (!x.tracked()) return out;
  const std::size_t r = x.rows(), c = x.cols();
  return finish(x.tape(), out, [ix = x.node(), y = out.values(), r, c, temperature](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    for (std::size_t i = 0; i < r; ++i) {
      double gy = 0.0;
      for (std::size_t j = 0; j < c; ++j) gy += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += (g[i * c + j] - gy) * y[i * c + j] / temperature;
    }
  });
}

Tensor log_softmax(const Tensor& x, double temperature) {
  require_softmax_input(x, temperature);
  Tensor out(x.shape(), softmax_rows(x, temperature, true));
  if (!x.tracked()) return out;
  const std::size_t r = x.rows(), c = x.cols();
  return finish(x.tape(), out, [ix = x.node(), ly = out.values(), r, c, temperature](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    for (std::size_t i = 0; i < r; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        dx[i * c + j] += (g[i * c + j] - std::exp(ly[i * c + j]) * gs) / temperature;
      }
    }
  });
}

Tensor cosine(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) throw DimensionError("cosine expects two vectors");
  require_same_shape(a, b, "cosine");
  const Tensor c = row_cosine(reshape(a, {1, a.size()}), reshape(b, {1, b.size()}));
  return reshape(c, {});
}

Tensor row_cosine(const Tensor& a, const Tensor& b) {
  require_matrix(a, "row_cosine");
  require_same_shape(a, b, "row_cosine");
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(n), na(n), nb(n);
  for (std::size_t i = 0; i < n; ++i) {
    na[i] = norm_or_throw(a.row(i), "cosine");
    nb[i] = norm_or_throw(b.row(i), "cosine");
    out[i] = dot(a.row(i), b.row(i)) / (na[i] * nb[i]);
  }
  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return Tensor::vector(std::move(out));
  return finish(tape, Tensor::vector(out),
                [ia = a.node(), ib = b.node(), A = a.values(), B = b.values(), na, nb, c = out, n, d](
                    auto g, GradSink& sink) {
                  auto da = sink.at(ia);
                  auto db = sink.at(ib);
                  for (std::size_t i = 0; i < n; ++i) {
                    const double inv = 1.0 / (na[i] * nb[i]);
                    for (std::size_t k = 0; k < d; ++k) {
                      const double x = A[i * d + k], y = B[i * d + k];
                      if (!da.empty()) da[i * d + k] += g[i] * (y * inv - c[i] * x / (na[i] * na[i]));
                      if (!db.empty()) db[i * d + k] += g[i] * (x * inv - c[i] * y / (nb[i] * nb[i]));
                    }
                  }
                });
}

Tensor normalize_rows(const Tensor& x) {
  require_matrix(x, "normalize_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.size()), norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    norms[i] = norm_or_throw(x.row(i), "normalize_rows");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / norms[i];
  }
  if (!x.tracked()) return Tensor(x.shape(), std::move(out));
  Tensor value(x.shape(), out);
  return finish(x.tape(), std::move(value), [ix = x.node(), y = std::move(out), norms, r, c](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    for (std::size_t i = 0; i < r; ++i) {
      double yg = 0.0;
      for (std::size_t j = 0; j < c; ++j) yg += y[i * c + j] * g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += (g[i * c + j] - y[i * c + j] * yg) / norms[i];
    }
  });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw DimensionError("stack_rows needs at least one row");
  const std::size_t d = rows.front().size();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  std::vector<NodeId> ids;
  Tape* tape = nullptr;
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.size() != d) throw DimensionError("stack_rows: rows must be vectors of equal length");
    if (Tape* t = common_tape({&r}); t != nullptr) {
      if (tape != nullptr && tape != t) throw DimensionError("operands live on different tapes");
      tape = t;
    }
    out.insert(out.end(), r.data().begin(), r.data().end());
    ids.push_back(r.node());
  }
  return finish(tape, Tensor::matrix(rows.size(), d, std::move(out)), [ids, d](auto g, GradSink& sink) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto dx = sink.at(ids[i]);
      for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += g[i * d + k];
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require_matrix(x, "gather_rows");
  const std::size_t c = x.cols();
  std::vector<double> out;
  out.reserve(indices.size() * c);
  for (std::size_t idx : indices) {
    if (idx >= x.rows()) throw DimensionError("gather_rows: index " + std::to_string(idx) + " out of range");
    const auto row = x.row(idx);
    out.insert(out.end(), row.begin(), row.end());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return finish(x.tape(), Tensor::matrix(indices.size(), c, std::move(out)),
                [ix = x.node(), idx = std::move(idx), c](auto g, GradSink& sink) {
                  auto dx = sink.at(ix);
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    for (std::size_t j = 0; j < c; ++j) dx[idx[i] * c + j] += g[i * c + j];
                  }
                });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> columns) {
  require_matrix(x, "pick");
  if (columns.size() != x.rows()) throw DimensionError("pick: one column index per row required");
  const std::size_t c = x.cols();
  std::vector<double> out(columns.size());
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] >= c) throw DimensionError("pick: column " + std::to_string(columns[i]) + " out of range");
    out[i] = x[i * c + columns[i]];
  }
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  return finish(x.tape(), Tensor::vector(std::move(out)), [ix = x.node(), cols = std::move(cols), c](auto g, GradSink& sink) {
    auto dx = sink.at(ix);
    for (std::size_t i = 0; i < cols.size(); ++i) dx[i * c + cols[i]] += g[i];
  });
}

}  // namespace sar::ad
