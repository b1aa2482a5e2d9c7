#pragma once

#include <span>
#include <vector>

#include "sar/encoders.hpp"
#include "sar/simdist.hpp"
#include "sar/tensor.hpp"

namespace sar {

// p(w_i | x): softmax over cos(g_i, f) / temperature.
std::vector<double> classify(std::span<const double> image_embedding, const EmbeddingSet& text, double temperature);

// -ln(probs[label]) with the log floor.
double cross_entropy(std::span<const double> probs, std::size_t label);

struct LossBreakdown {
  double ce = 0.0;
  double sar = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

struct Batch {
  Tensor image_embeddings;  // [B x d], frozen
  std::vector<std::size_t> labels;  // indices into the base classes
};

// Everything the alignment term needs that stays fixed during training.
struct AlignmentTarget {
  std::vector<Tokens> class_tokens;  // base classes first, then novel
  Tensor hand_cosines;               // [M x M] cosines of the ensembled hand-crafted embeddings
};

struct LossTerms {
  Tensor total;  // scalar on the prompts' tape when prompts are tracked
  LossBreakdown breakdown;
};

// Batch-mean cross-entropy of [B x C] cosine logits, computed through
// log-softmax so that confidently wrong samples keep their gradient.
Tensor batch_cross_entropy(const Tensor& image_embeddings, const Tensor& text_embeddings,
                           std::span<const std::size_t> labels, double temperature);

// Alignment loss between the learned embeddings [M x d] and the hand-crafted
// cosines, over one sampled index family.
Tensor alignment_loss(const Tensor& learned_embeddings, const Tensor& hand_cosines, const IndexFamily& family,
                      double temperature);

struct LossSettings {
  double lambda = 0.0;
  double class_temperature = kDefaultTemperature;
  double similarity_temperature = kDefaultTemperature;
};

// ce + lambda * sar. Base-class embeddings for the classification term are
// encoded separately from the alignment term's base+novel embeddings. With
// lambda == 0 the alignment term is evaluated off the tape, so the tape and
// the gradients are exactly those of the cross-entropy alone.
LossTerms total_loss(const Batch& batch, const Tensor& prompts, const TextEncoder& encoder,
                     std::span<const Tokens> base_tokens, const AlignmentTarget& target, const IndexFamily& family,
                     const LossSettings& settings);

}  // namespace sar
