#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sar/encoders.hpp"
#include "sar/objective.hpp"
#include "sar/tensor.hpp"

namespace sar {

// The seven general-purpose templates every ensemble starts from.
std::vector<std::string> general_templates();

struct PromptParams {
  Tensor vectors;  // [P x dim_word]

  std::size_t count() const { return vectors.rows(); }
};

nlohmann::json prompts_to_json(const PromptParams& params);
PromptParams prompts_from_json(const nlohmann::json& doc);

struct ClassVocabulary {
  std::vector<std::string> base;
  std::vector<std::string> novel;
  // Evaluation only; training never reads it.
  std::vector<std::string> new_heldout;

  // Drops novel names that equal a base name ignoring case, and returns how
  // many were dropped.
  std::size_t remove_base_overlap();
};

struct TrainConfig {
  double lambda = 0.1;
  std::size_t k = 64;
  double tau = kDefaultTemperature;
  // Separate temperatures for the classifier and the similarity
  // distributions; both default to tau.
  double tau_cls = 0.0;
  double tau_sim = 0.0;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 0.002;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  std::size_t num_prompts = 4;
  std::size_t num_novel = 200;
  std::string novel_source;
  std::vector<std::string> ensemble_templates;
  // false reproduces plain context optimization: no novel classes are
  // encoded and no index families are drawn.
  bool use_sar = true;

  double class_temperature() const { return tau_cls > 0.0 ? tau_cls : tau; }
  double similarity_temperature() const { return tau_sim > 0.0 ? tau_sim : tau; }

  // ParameterError naming the offending field.
  void validate() const;
};

nlohmann::json config_to_json(const TrainConfig& config);

// One class name per line, trimmed; blank lines dropped; repeated names kept
// once in first-seen order. FormatError for an empty list, IoError when the
// file cannot be read.
std::vector<std::string> load_class_list(const std::string& path);
std::vector<std::string> parse_class_list(std::string_view text);

// One template per line; every line must contain the [CLASS] slot.
std::vector<std::string> load_templates(const std::string& path);

// Per class: encode every filled template, normalize each embedding, average
// and renormalize.
EmbeddingSet ensemble_handcrafted(std::span<const std::string> class_names, std::span<const std::string> templates,
                                  const TextEncoder& encoder);

// Seeded Gaussian context vectors, standard deviation 0.02.
PromptParams init_prompts(const TrainConfig& config, const TextEncoder& encoder);

struct TrainingSet {
  Tensor image_embeddings;          // [N x d], frozen
  std::vector<std::size_t> labels;  // indices into ClassVocabulary::base
};

struct EpochStats {
  double ce = 0.0;
  double sar = 0.0;
  double total = 0.0;
  double learning_rate = 0.0;
};

struct TrainReport {
  TrainConfig config;
  std::vector<EpochStats> epochs;
  PromptParams final_prompts;
  double final_sar = 0.0;  // mean alignment loss over the last epoch's steps
  std::size_t steps = 0;
  std::size_t num_classes_aligned = 0;  // M
  std::vector<std::string> novel_used;
  double wall_clock_seconds = 0.0;

  // Deterministic content only; wall-clock time is left out so that
  // identical runs serialize identically.
  nlohmann::json to_json() const;
};

// Mini-batch SGD with momentum and per-epoch cosine learning-rate decay over
// the prompt vectors only. Each step re-encodes all aligned classes, draws a
// fresh index family and minimizes ce + lambda * sar. Every random choice
// derives from config.seed. When `log` is given, one JSON line is written per
// step and per epoch.
TrainReport train(const TrainConfig& config, const ClassVocabulary& vocab, const TrainingSet& data,
                  const TextEncoder& encoder, std::ostream* log = nullptr);

// Names of the novel classes a run with this config actually uses.
std::vector<std::string> select_novel(const TrainConfig& config, const ClassVocabulary& vocab);

// Learned embeddings of arbitrary classes under trained prompts.
EmbeddingSet learned_embeddings(const PromptParams& params, std::span<const std::string> class_names,
                                const TextEncoder& encoder);

}  // namespace sar
