#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sar/tensor.hpp"

namespace sar {

using Tokens = std::vector<std::string>;

// Lowercases, splits on whitespace and detaches the punctuation marks
// . , ; : ! ? into tokens of their own ("a [CLASS]." -> "a", "[class]", ".").
Tokens tokenize(std::string_view text);

inline constexpr std::string_view kClassSlot = "[CLASS]";

// Replaces the single [CLASS] slot of a template. FormatError when the
// template has no slot or more than one.
std::string fill_template(std::string_view templ, std::string_view class_name);

// Token -> unit vector. Unknown tokens get a Gaussian vector drawn from a
// generator seeded by (table seed, token hash), so the same token always maps
// to the same vector. Tokens can also be planted with explicit vectors, which
// is how a synthetic task gives its class names semantics.
class WordEmbeddingTable {
 public:
  WordEmbeddingTable(std::uint64_t seed, std::size_t dim);

  // Plants a vector for a token (lowercased), normalized to unit length.
  void define(std::string_view token, std::span<const double> vector);

  std::vector<double> lookup(std::string_view token) const;

  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t fingerprint() const;

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  std::map<std::string, std::vector<double>, std::less<>> planted_;
};

struct TextEncoderOptions {
  std::uint64_t seed = 0;
  std::size_t dim_word = 16;
  std::size_t dim_embed = 32;
  std::size_t max_positions = 77;
  // Scale of the first projection; controls how far tanh is driven into
  // saturation.
  double gain = 2.0;
};

// Frozen toy text tower. A token sequence e_1..e_L is pooled with fixed
// positive position weights, pooled = sum_l rho_l e_l / sum_l rho_l, and then
// embedded as tanh(pooled * W1) * W2. Only the prompt vectors passed to
// encode_prompted ever carry gradients.
class TextEncoder {
 public:
  TextEncoder(TextEncoderOptions options, WordEmbeddingTable words);

  // [M x dim_embed] embeddings of "v_1 .. v_P <class tokens> ." for every
  // class. `prompts` is [P x dim_word] and may live on a tape.
  Tensor encode_prompted(const Tensor& prompts, std::span<const Tokens> classes) const;

  // Single-class form of encode_prompted; returns a [dim_embed] vector.
  Tensor encode_text(const Tensor& prompts, const Tokens& class_tokens) const;

  // Embedding of a fully spelled-out token sequence (no learned context).
  std::vector<double> encode_tokens(const Tokens& tokens) const;

  std::vector<double> encode_handcrafted(std::string_view templ, std::string_view class_name) const;

  // Embeds pooled inputs directly: [n x dim_word] -> [n x dim_embed].
  Tensor project(const Tensor& pooled) const;

  double position_weight(std::size_t position) const;

  const TextEncoderOptions& options() const { return options_; }
  const WordEmbeddingTable& words() const { return words_; }
  std::size_t dim_word() const { return options_.dim_word; }
  std::size_t dim_embed() const { return options_.dim_embed; }

  // Hash over every frozen parameter, planted words included.
  std::uint64_t fingerprint() const;

 private:
  TextEncoderOptions options_;
  WordEmbeddingTable words_;
  Tensor w1_;
  Tensor w2_;
  std::vector<double> rho_;
};

// Frozen image tower. An image feature x (same width as a word vector) is
// embedded as if it were the visual token of a fixed caption passed through
// the text tower: the caption's words are pooled together with x in the
// caption's [CLASS] position. Hand-crafted prompts resembling the caption
// therefore classify well zero-shot, as with a contrastively trained model.
class ImageEncoder {
 public:
  ImageEncoder(std::shared_ptr<const TextEncoder> text, std::string caption = "a photo of a [CLASS].");

  // [n x dim_feat] -> [n x dim_embed]
  Tensor encode(const Tensor& features) const;

  std::size_t dim_feat() const { return text_->dim_word(); }
  std::size_t dim_embed() const { return text_->dim_embed(); }
  const std::string& caption() const { return caption_; }
  std::uint64_t fingerprint() const;

 private:
  std::shared_ptr<const TextEncoder> text_;
  std::string caption_;
  std::vector<double> context_;  // pooled caption words, already divided by the weight sum
  double slot_weight_ = 0.0;      // rho at the slot over the weight sum
};

enum class Provenance { learned, hand_crafted, external };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

// Ordered, uniquely named embedding vectors.
struct EmbeddingSet {
  std::vector<std::string> names;
  Tensor vectors;  // [M x d]
  Provenance provenance = Provenance::external;

  std::size_t size() const { return names.size(); }
  std::size_t dim() const { return vectors.cols(); }

  // FormatError naming the offending row for duplicate names or a row count
  // mismatch; NumericError for zero-norm or non-finite rows.
  void validate() const;

  static EmbeddingSet make(std::vector<std::string> names, Tensor vectors, Provenance provenance);
};

// JSON: {"dim": d, "provenance": "...", "items": [{"name": ..., "vector": [...]}, ...]}
std::string embedding_set_to_json(const EmbeddingSet& set);
EmbeddingSet embedding_set_from_json(std::string_view text);
void save_embedding_set(const EmbeddingSet& set, const std::string& path);
EmbeddingSet load_embedding_set(const std::string& path);

}  // namespace sar
