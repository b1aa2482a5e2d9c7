#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sar/encoders.hpp"
#include "sar/simdist.hpp"
#include "sar/tensor.hpp"
#include "sar/tuner.hpp"

namespace sar {

struct TaskOptions {
  std::uint64_t seed = 1;
  std::size_t num_classes = 16;
  std::size_t clusters = 4;
  double noise_sigma = 0.5;
  std::size_t shots = 16;
  std::size_t test_per_class = 50;
  std::size_t num_novel = 200;
  // Per-coordinate spread of a class's semantic vector around its cluster
  // center (the center itself is unit length).
  double spread = 0.25;
  // Class-specific visual offset that the class name does not describe.
  double nuisance = 0.5;
  std::size_t dim_word = 48;
  std::size_t dim_embed = 32;
  double encoder_gain = 2.0;

  void validate() const;
};

nlohmann::json task_options_to_json(const TaskOptions& o);
TaskOptions task_options_from_json(const nlohmann::json& doc);

struct LabeledFeatures {
  Tensor features;                  // [n x dim_word]
  std::vector<std::size_t> labels;  // indices into the matching name list
};

// Desk-scale base-to-new world. Every class name is a single token whose word
// vector is the class's semantic direction; images are that direction plus a
// per-class nuisance offset plus per-image noise, seen through the image
// tower. Novel classes are extra semantic vectors drawn inside the same
// clusters under fresh names.
struct SyntheticTask {
  TaskOptions options;
  std::vector<std::string> base_names;
  std::vector<std::string> new_names;
  std::vector<std::string> novel_names;
  std::vector<std::size_t> base_clusters;
  std::vector<std::size_t> new_clusters;
  std::vector<std::size_t> novel_clusters;
  // Planted word vectors for every name above.
  std::map<std::string, std::vector<double>> vocabulary;
  // Visual class prototypes in feature space (semantic vector plus nuisance).
  Tensor base_prototypes;
  Tensor new_prototypes;
  LabeledFeatures train;      // base classes only
  LabeledFeatures test_base;  // test_per_class images per base class
  LabeledFeatures test_new;   // test_per_class images per new class
  std::vector<std::string> templates;
};

SyntheticTask generate_task(const TaskOptions& options);

// The ensemble templates the benchmark uses: the general set plus the
// image tower's caption.
std::vector<std::string> benchmark_templates();

// Frozen encoders of a task.
struct World {
  std::shared_ptr<const TextEncoder> text;
  std::shared_ptr<const ImageEncoder> image;
};

World make_world(const SyntheticTask& task);

// Training view of a task: base and novel names only, never the new names.
ClassVocabulary training_vocabulary(const SyntheticTask& task);
TrainingSet training_set(const SyntheticTask& task, const World& world);

struct EvalReport {
  double base_acc = 0.0;
  double new_acc = 0.0;
  double harmonic_mean = 0.0;
  std::map<std::string, double> per_class;  // percent
  Tensor base_logits;                       // [n_base_images x n_base_classes], cosines
  Tensor new_logits;
  std::string logits_path;

  nlohmann::json to_json() const;
};

double harmonic_mean(double base_acc, double new_acc);

// Classification over the evaluated class set only, given text embeddings
// for the base and the new classes.
EvalReport evaluate_with(const EmbeddingSet& base_text, const EmbeddingSet& new_text, const SyntheticTask& task,
                         const World& world, double temperature);
EvalReport evaluate(const PromptParams& params, const SyntheticTask& task, const World& world, double temperature);
// Zero-shot baseline with the ensembled hand-crafted embeddings.
EvalReport evaluate_handcrafted(const SyntheticTask& task, const World& world, double temperature);

// Rows are images; columns are classes followed by the true label's name.
void write_logits_csv(std::ostream& out, std::span<const std::string> class_names, const Tensor& logits,
                      std::span<const std::size_t> labels);

// Counts (i, {j, k}) with j < k, both != i, where the learned and hand-crafted
// cosines order j and k oppositely in row i. Differences within 1e-9 count as
// ties, and ties agree with everything.
std::size_t rank_disagreements(const Tensor& learned_cosines, const Tensor& hand_cosines,
                               std::vector<std::size_t>* per_row = nullptr);

inline constexpr double kRankTieTolerance = 1e-9;

struct DisruptionReport {
  std::vector<std::string> names;
  SimilarityDistribution learned;
  SimilarityDistribution hand;
  std::vector<double> kl_per_row;  // KL(learned || hand)
  double mean_kl = 0.0;
  std::size_t rank_disagreements = 0;
  std::vector<std::size_t> rank_disagreements_per_row;

  nlohmann::json to_json() const;
};

// FormatError when the two name lists differ.
DisruptionReport disruption_report(const EmbeddingSet& learned, const EmbeddingSet& hand, double temperature);

// Task files. task.json holds the options, the planted vocabulary and the
// training images (labels index base.txt); test.json holds the test images
// (labels index base.txt and new.txt respectively).
nlohmann::json task_to_json(const SyntheticTask& task);
nlohmann::json test_split_to_json(const SyntheticTask& task);
nlohmann::json features_to_json(const LabeledFeatures& f);
LabeledFeatures features_from_json(const nlohmann::json& doc, std::size_t num_classes);
// Rebuilds the frozen encoders from task.json content.
World world_from_json(const nlohmann::json& task_doc);

}  // namespace sar
