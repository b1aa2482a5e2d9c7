#include "sar/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sar/errors.hpp"
#include "sar/ops.hpp"

namespace sar {

std::vector<double> classify(std::span<const double> image_embedding, const EmbeddingSet& text, double temperature) {
  text.validate();
  if (image_embedding.size() != text.dim()) {
    throw DimensionError("image embedding has " + std::to_string(image_embedding.size()) +
                         " values, text embeddings have " + std::to_string(text.dim()));
  }
  const std::size_t c = text.size();
  const Tensor image = Tensor::matrix(1, image_embedding.size(), {image_embedding.begin(), image_embedding.end()});
  const Tensor logits = ad::matmul(ad::normalize_rows(image), ad::transpose(ad::normalize_rows(text.vectors)));
  return ad::softmax(ad::reshape(logits, {c}), temperature).values();
}

double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) {
    throw DimensionError("label " + std::to_string(label) + " out of range for " + std::to_string(probs.size()) +
                         " classes");
  }
  return -std::log(std::max(probs[label], ad::kLogFloor));
}

Tensor batch_cross_entropy(const Tensor& image_embeddings, const Tensor& text_embeddings,
                           std::span<const std::size_t> labels, double temperature) {
  if (image_embeddings.rows() != labels.size()) throw DimensionError("one label per image required");
  if (image_embeddings.cols() != text_embeddings.cols()) {
    throw DimensionError("image and text embeddings differ in width");
  }
  const Tensor cos =
      ad::matmul(ad::normalize_rows(image_embeddings), ad::transpose(ad::normalize_rows(text_embeddings)));
  const Tensor log_p = ad::log_softmax(cos, temperature);
  return ad::scale(ad::mean(ad::pick(log_p, labels)), -1.0);
}

Tensor alignment_loss(const Tensor& learned_embeddings, const Tensor& hand_cosines, const IndexFamily& family,
                      double temperature) {
  const std::size_t m = learned_embeddings.rows();
  if (hand_cosines.rank() != 2 || hand_cosines.rows() != m || hand_cosines.cols() != m) {
    throw DimensionError("hand-crafted cosine matrix must be [M x M] with M=" + std::to_string(m));
  }
  family.validate(m);
  std::vector<double> picked(m * family.k);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < family.k; ++c) picked[i * family.k + c] = hand_cosines.at(i, family.rows[i][c]);
  }
  const Tensor q = ad::softmax(Tensor::matrix(m, family.k, std::move(picked)), temperature);
  const Tensor log_p = ad::log_softmax(ad::sampled_cosines(learned_embeddings, family), temperature);
  return ad::kl_rows(log_p, q);
}

LossTerms total_loss(const Batch& batch, const Tensor& prompts, const TextEncoder& encoder,
                     std::span<const Tokens> base_tokens, const AlignmentTarget& target, const IndexFamily& family,
                     const LossSettings& settings) {
  if (!(settings.lambda >= 0.0) || !std::isfinite(settings.lambda)) {
    throw ParameterError("lambda must be non-negative, got " + std::to_string(settings.lambda));
  }
  if (target.class_tokens.size() < base_tokens.size()) {
    throw DimensionError("alignment classes must include every base class");
  }
  for (std::size_t label : batch.labels) {
    if (label >= base_tokens.size()) throw DimensionError("batch label " + std::to_string(label) + " is not a base class");
  }

  const Tensor base_embeddings = encoder.encode_prompted(prompts, base_tokens);
  const Tensor ce = batch_cross_entropy(batch.image_embeddings, base_embeddings, batch.labels,
                                        settings.class_temperature);

  const bool taped_alignment = settings.lambda > 0.0;
  const Tensor alignment_prompts = taped_alignment ? prompts : prompts.detach();
  const Tensor learned = encoder.encode_prompted(alignment_prompts, target.class_tokens);
  const Tensor sar = alignment_loss(learned, target.hand_cosines, family, settings.similarity_temperature);

  LossTerms out;
  out.total = taped_alignment ? ad::add(ce, ad::scale(sar, settings.lambda)) : ce;
  out.breakdown = LossBreakdown{ce.item(), sar.item(), out.total.item(), settings.lambda};
  return out;
}

}  // namespace sar
