#include <doctest.h>

#include <cmath>

#include "sar/errors.hpp"
#include "sar/gradcheck.hpp"
#include "sar/objective.hpp"
#include "sar/ops.hpp"
#include "sar/random.hpp"

using namespace sar;

namespace {

EmbeddingSet set_of(std::size_t m, std::size_t d, std::vector<double> v) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < m; ++i) names.push_back("c" + std::to_string(i));
  return EmbeddingSet::make(names, Tensor::matrix(m, d, std::move(v)), Provenance::external);
}

struct Small {
  TextEncoder encoder{TextEncoderOptions{3, 8, 6, 16, 2.0}, WordEmbeddingTable(3, 8)};
  std::vector<std::string> names{"forest", "river", "lake", "highway", "pasture", "crop"};
  std::vector<Tokens> tokens;
  Tensor hand_cosines;
  Batch batch;
  Tensor prompts;

  Small() {
    for (const auto& n : names) tokens.push_back(tokenize(n));
    std::vector<double> hand;
    for (const auto& n : names) {
      const auto e = encoder.encode_handcrafted("a photo of a [CLASS].", n);
      hand.insert(hand.end(), e.begin(), e.end());
    }
    hand_cosines = cosine_matrix(EmbeddingSet::make(names, Tensor::matrix(6, 6, hand), Provenance::hand_crafted)).values;
    Rng rng = make_rng(9, 1);
    batch.image_embeddings = Tensor::matrix(5, 6, gaussian(rng, 30));
    batch.labels = {0, 1, 2, 1, 0};
    prompts = Tensor::matrix(2, 8, gaussian(rng, 16, 0.3));
  }
  std::span<const Tokens> base() const { return std::span<const Tokens>(tokens).first(3); }
};

}  // namespace

TEST_CASE("classify examples") {
  const auto eq = classify(std::vector<double>{1, 1, 1}, set_of(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), 0.01);
  for (double p : eq) CHECK(p == doctest::Approx(1.0 / 3.0));
  const auto k = classify(std::vector<double>{0, 2, 0}, set_of(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), 0.01);
  CHECK(k[1] > 0.99);
  Rng rng = make_rng(1, 2);
  for (int t = 0; t < 20; ++t) {
    const auto p = classify(gaussian(rng, 4), set_of(5, 4, gaussian(rng, 20)), 0.1);
    double s = 0;
    for (double x : p) s += x;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(classify(std::vector<double>{1, 0}, set_of(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), 0.01),
                  DimensionError);
  CHECK_THROWS_AS(classify(std::vector<double>{1, 0, 0}, set_of(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), 0.0),
                  ParameterError);
}

TEST_CASE("classify ignores positive rescaling") {
  Rng rng = make_rng(4, 2);
  const auto img = gaussian(rng, 4);
  auto text = gaussian(rng, 12);
  const auto p = classify(img, set_of(3, 4, text), 0.2);
  std::vector<double> img2 = img;
  for (double& x : img2) x *= 3.5;
  for (std::size_t i = 0; i < 4; ++i) text[4 + i] *= 0.1;
  const auto q = classify(img2, set_of(3, 4, text), 0.2);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-12));
}

TEST_CASE("cross entropy examples") {
  CHECK(cross_entropy(std::vector<double>{0, 1, 0}, 1) == 0.0);
  CHECK(std::abs(cross_entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 2) - std::log(4.0)) < 1e-6);
  CHECK(std::abs(cross_entropy(std::vector<double>{0.5, 0.5}, 0) - std::log(2.0)) < 1e-6);
  CHECK(std::isfinite(cross_entropy(std::vector<double>{1, 0}, 1)));
  CHECK_THROWS_AS(cross_entropy(std::vector<double>{0.5, 0.5}, 2), DimensionError);
}

TEST_CASE("alignment loss vanishes for hand-crafted embeddings") {
  Small s;
  std::vector<double> hand;
  for (const auto& n : s.names) {
    const auto e = s.encoder.encode_handcrafted("a photo of a [CLASS].", n);
    hand.insert(hand.end(), e.begin(), e.end());
  }
  const auto fam = sample_index_family(6, 3, 2);
  CHECK(std::abs(alignment_loss(Tensor::matrix(6, 6, hand), s.hand_cosines, fam, 0.01).item()) < 1e-12);
}

TEST_CASE("total loss matches an independent recomputation") {
  Small s;
  const auto fam = sample_index_family(6, 3, 7);
  AlignmentTarget target{s.tokens, s.hand_cosines};
  const auto terms = total_loss(s.batch, s.prompts, s.encoder, s.base(), target, fam, LossSettings{0.7, 0.1, 0.2});

  const Tensor base = s.encoder.encode_prompted(s.prompts, s.base());
  const EmbeddingSet base_set = EmbeddingSet::make({"a", "b", "c"}, base, Provenance::learned);
  double ce = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto row = s.batch.image_embeddings.row(i);
    ce += cross_entropy(classify(std::vector<double>(row.begin(), row.end()), base_set, 0.1), s.batch.labels[i]);
  }
  ce /= 5;
  const EmbeddingSet learned =
      EmbeddingSet::make(s.names, s.encoder.encode_prompted(s.prompts, s.tokens), Provenance::learned);
  const double sar = kl_rows(sampled_distribution(learned, fam, 0.2),
                             sampled_distribution(CosineMatrix{s.names, s.hand_cosines}, fam, 0.2));
  CHECK(terms.breakdown.ce == doctest::Approx(ce).epsilon(1e-10));
  CHECK(terms.breakdown.sar == doctest::Approx(sar).epsilon(1e-10));
  CHECK(std::abs(terms.breakdown.total - (ce + 0.7 * sar)) < 1e-10);
  CHECK(std::abs(terms.breakdown.total - (terms.breakdown.ce + 0.7 * terms.breakdown.sar)) < 1e-12);
}

TEST_CASE("total loss is affine in lambda") {
  Small s;
  const auto fam = sample_index_family(6, 4, 1);
  AlignmentTarget target{s.tokens, s.hand_cosines};
  const auto at = [&](double lam) {
    return total_loss(s.batch, s.prompts, s.encoder, s.base(), target, fam, LossSettings{lam, 0.05, 0.05}).breakdown;
  };
  const auto a = at(0.5), b = at(1.5), z = at(0.0);
  CHECK(b.total - a.total == doctest::Approx(a.sar));
  CHECK(z.total == z.ce);
}

TEST_CASE("lambda zero gives the cross-entropy gradients exactly") {
  Small s;
  const auto fam = sample_index_family(6, 3, 3);
  AlignmentTarget target{s.tokens, s.hand_cosines};

  Tape t1;
  const Tensor p1 = t1.leaf(s.prompts);
  const auto terms = total_loss(s.batch, p1, s.encoder, s.base(), target, fam, LossSettings{0.0, 0.01, 0.01});
  const auto g1 = t1.backward(terms.total).of(p1);

  Tape t2;
  const Tensor p2 = t2.leaf(s.prompts);
  const Tensor ce = batch_cross_entropy(s.batch.image_embeddings, s.encoder.encode_prompted(p2, s.base()),
                                        s.batch.labels, 0.01);
  const auto g2 = t2.backward(ce).of(p2);
  CHECK(terms.total.item() == ce.item());
  CHECK(g1.values() == g2.values());
}

TEST_CASE("total loss errors") {
  Small s;
  const auto fam = sample_index_family(6, 3, 3);
  AlignmentTarget target{s.tokens, s.hand_cosines};
  CHECK_THROWS_AS(total_loss(s.batch, s.prompts, s.encoder, s.base(), target, fam, LossSettings{-0.1, 0.01, 0.01}),
                  ParameterError);
  Batch bad = s.batch;
  bad.labels[0] = 4;
  CHECK_THROWS_AS(total_loss(bad, s.prompts, s.encoder, s.base(), target, fam, LossSettings{1.0, 0.01, 0.01}),
                  DimensionError);
}

TEST_CASE("total loss gradient matches finite differences") {
  Small s;
  const auto fam = sample_index_family(6, 3, 5);
  AlignmentTarget target{s.tokens, s.hand_cosines};
  const ScalarFn fn = [&](std::span<const Tensor> in) {
    return total_loss(s.batch, in[0], s.encoder, s.base(), target, fam, LossSettings{1.0, 0.5, 0.5}).total;
  };
  const Tensor pts[] = {s.prompts};
  CHECK(gradient_relative_error(fn, pts) < 1e-4);
}
