#include "sar/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "sar/encoders.hpp"
#include "sar/objective.hpp"
#include "sar/ops.hpp"
#include "sar/random.hpp"
#include "sar/simdist.hpp"

namespace sar {
namespace {

double evaluate(const ScalarFn& fn, std::span<const Tensor> point) { return fn(point).item(); }

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  return Tensor::matrix(r, c, gaussian(rng, r * c, sd));
}

Tensor positive_matrix(Rng& rng, std::size_t r, std::size_t c) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  std::vector<double> v(r * c);
  for (double& x : v) x = u(rng);
  return Tensor::matrix(r, c, std::move(v));
}

// Fixed weights so that each reduction to a scalar exercises every output
// entry with a different coefficient.
Tensor weighted_sum(const Tensor& x) {
  std::vector<double> w(x.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
  return ad::sum(ad::mul(x, Tensor(x.shape(), std::move(w))));
}

GradCheckCase unary(std::string name, std::function<Tensor(const Tensor&)> op,
                    std::function<Tensor(Rng&)> make) {
  return GradCheckCase{std::move(name),
                       [op](std::span<const Tensor> in) { return weighted_sum(op(in[0])); },
                       [make](std::uint64_t s) {
                         Rng rng = make_rng(s, 0x9c);
                         return std::vector<Tensor>{make(rng)};
                       }};
}

GradCheckCase binary(std::string name, std::function<Tensor(const Tensor&, const Tensor&)> op,
                     std::function<std::vector<Tensor>(Rng&)> make) {
  return GradCheckCase{std::move(name),
                       [op](std::span<const Tensor> in) { return weighted_sum(op(in[0], in[1])); },
                       [make](std::uint64_t s) {
                         Rng rng = make_rng(s, 0x9c);
                         return make(rng);
                       }};
}

// Small fixed world for the pipeline checks: M=8 classes, K=3, P=2.
struct PipelineWorld {
  std::shared_ptr<TextEncoder> encoder;
  std::vector<Tokens> class_tokens;
  std::vector<Tokens> base_tokens;
  Tensor hand_cosines;
  IndexFamily family;
  Batch batch;
};

std::shared_ptr<const PipelineWorld> pipeline_world(std::uint64_t seed) {
  auto w = std::make_shared<PipelineWorld>();
  TextEncoderOptions o;
  o.seed = seed;
  w->encoder = std::make_shared<TextEncoder>(o, WordEmbeddingTable(seed, o.dim_word));
  const char* names[] = {"forest", "river", "sea or lake", "highway", "pasture", "annual crop", "residential", "industrial"};
  std::vector<std::string> class_names(std::begin(names), std::end(names));
  for (const auto& n : class_names) w->class_tokens.push_back(tokenize(n));
  w->base_tokens.assign(w->class_tokens.begin(), w->class_tokens.begin() + 4);
  std::vector<double> hand;
  for (const auto& n : class_names) {
    const auto e = w->encoder->encode_handcrafted("a photo of a [CLASS].", n);
    hand.insert(hand.end(), e.begin(), e.end());
  }
  w->hand_cosines = cosine_matrix(EmbeddingSet::make(class_names, Tensor::matrix(8, o.dim_embed, std::move(hand)),
                                                     Provenance::hand_crafted))
                        .values;
  w->family = sample_index_family(8, 3, seed);
  Rng rng = make_rng(seed, 0xba7);
  w->batch.image_embeddings = random_matrix(rng, 6, o.dim_embed);
  w->batch.labels = {0, 1, 2, 3, 1, 0};
  return w;
}

}  // namespace

double gradient_relative_error(const ScalarFn& fn, std::span<const Tensor> point, double h) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(point.size());
  for (const auto& p : point) leaves.push_back(tape.leaf(p.detach()));
  const Tensor loss = fn(leaves);
  const Gradients grads = tape.backward(loss);

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  std::vector<Tensor> probe;
  probe.reserve(point.size());
  for (const auto& p : point) probe.push_back(p.detach());
  for (std::size_t t = 0; t < point.size(); ++t) {
    const Tensor analytic = grads.of(leaves[t]);
    for (std::size_t i = 0; i < point[t].size(); ++i) {
      std::vector<double> v(point[t].values());
      const double x = v[i];
      v[i] = x + h;
      probe[t] = Tensor(point[t].shape(), v);
      const double up = evaluate(fn, probe);
      v[i] = x - h;
      probe[t] = Tensor(point[t].shape(), v);
      const double down = evaluate(fn, probe);
      probe[t] = point[t].detach();
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
  }
  const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
  if (scale == 0.0) return 0.0;
  return std::sqrt(diff2) / scale;
}

std::vector<GradCheckResult> run_gradcheck(std::span<const GradCheckCase> cases, double tolerance) {
  std::vector<GradCheckResult> out;
  for (const auto& c : cases) {
    GradCheckResult r{c.name, 0.0, 0, true};
    for (int t = 0; t < c.trials; ++t) {
      const auto point = c.point(static_cast<std::uint64_t>(t) + 1);
      const double e = gradient_relative_error(c.fn, point);
      if (!(e <= r.max_relative_error) || std::isnan(e)) r.max_relative_error = std::isnan(e) ? INFINITY : e;
      ++r.trials;
    }
    r.passed = r.max_relative_error < tolerance;
    out.push_back(r);
  }
  return out;
}

std::vector<GradCheckCase> default_gradcheck_cases(std::uint64_t seed) {
  std::vector<GradCheckCase> cases;
  auto mat = [](std::size_t r, std::size_t c) { return [r, c](Rng& rng) { return random_matrix(rng, r, c); }; };
  auto pair = [](std::size_t r, std::size_t c) {
    return [r, c](Rng& rng) { return std::vector<Tensor>{random_matrix(rng, r, c), random_matrix(rng, r, c)}; };
  };

  cases.push_back(binary("add", ad::add, pair(3, 4)));
  cases.push_back(binary("sub", ad::sub, pair(3, 4)));
  cases.push_back(binary("mul", ad::mul, pair(3, 4)));
  cases.push_back(unary("scale", [](const Tensor& x) { return ad::scale(x, -1.7); }, mat(3, 4)));
  cases.push_back(unary("exp", ad::exp, mat(3, 4)));
  cases.push_back(unary("log", ad::log, [](Rng& rng) { return positive_matrix(rng, 3, 4); }));
  cases.push_back(unary("tanh", ad::tanh, mat(3, 4)));
  cases.push_back(unary("sum", ad::sum, mat(3, 4)));
  cases.push_back(unary("mean", ad::mean, mat(3, 4)));
  cases.push_back(binary("matmul", ad::matmul, [](Rng& rng) {
    return std::vector<Tensor>{random_matrix(rng, 3, 5), random_matrix(rng, 5, 2)};
  }));
  cases.push_back(unary("transpose", ad::transpose, mat(3, 4)));
  cases.push_back(unary("reshape", [](const Tensor& x) { return ad::reshape(x, {2, 6}); }, mat(3, 4)));
  cases.push_back(unary("softmax", [](const Tensor& x) { return ad::softmax(x, 0.5); }, mat(3, 5)));
  cases.push_back(unary("log_softmax", [](const Tensor& x) { return ad::log_softmax(x, 0.5); }, mat(3, 5)));
  cases.push_back(binary("cosine", ad::cosine, [](Rng& rng) {
    return std::vector<Tensor>{Tensor::vector(gaussian(rng, 6)), Tensor::vector(gaussian(rng, 6))};
  }));
  cases.push_back(binary("row_cosine", ad::row_cosine, pair(4, 5)));
  cases.push_back(unary("normalize_rows", ad::normalize_rows, mat(3, 4)));
  cases.push_back(binary("stack_rows", [](const Tensor& a, const Tensor& b) {
    const Tensor rows[] = {a, b, a};
    return ad::stack_rows(rows);
  }, [](Rng& rng) { return std::vector<Tensor>{Tensor::vector(gaussian(rng, 4)), Tensor::vector(gaussian(rng, 4))}; }));
  cases.push_back(unary("gather_rows", [](const Tensor& x) {
    const std::size_t idx[] = {2, 0, 2, 1};
    return ad::gather_rows(x, idx);
  }, mat(3, 4)));
  cases.push_back(unary("pick", [](const Tensor& x) {
    const std::size_t cols[] = {3, 0, 2};
    return ad::pick(x, cols);
  }, mat(3, 4)));
  cases.push_back(unary("kl_rows", [](const Tensor& a) {
    const Tensor q = Tensor::matrix(4, 3, {0.2, 0.3, 0.5, 0.6, 0.3, 0.1, 0.25, 0.25, 0.5, 1e-3, 0.499, 0.5});
    return ad::kl_rows(ad::log_softmax(a, 1.0), q);
  }, mat(4, 3)));

  // Pipelines run on a shared fixed world; only the evaluation point varies.
  const auto world = pipeline_world(seed);
  auto prompts = [seed](std::uint64_t s) {
    Rng rng = make_rng(seed ^ splitmix64(s), 0x5a);
    return std::vector<Tensor>{random_matrix(rng, 2, 16, 0.5)};
  };
  cases.push_back(GradCheckCase{"encode_text",
                                [world](std::span<const Tensor> in) {
                                  return weighted_sum(world->encoder->encode_text(in[0], world->class_tokens[2]));
                                },
                                prompts});
  cases.push_back(GradCheckCase{"alignment_loss",
                                [world](std::span<const Tensor> in) {
                                  const Tensor learned = world->encoder->encode_prompted(in[0], world->class_tokens);
                                  return alignment_loss(learned, world->hand_cosines, world->family, kDefaultTemperature);
                                },
                                prompts});
  cases.push_back(GradCheckCase{"total_loss",
                                [world](std::span<const Tensor> in) {
                                  AlignmentTarget target{world->class_tokens, world->hand_cosines};
                                  return total_loss(world->batch, in[0], *world->encoder, world->base_tokens, target,
                                                    world->family, LossSettings{1.0, kDefaultTemperature, kDefaultTemperature})
                                      .total;
                                },
                                prompts});
  for (std::size_t i = cases.size() - 3; i < cases.size(); ++i) cases[i].trials = 5;
  return cases;
}

}  // namespace sar
