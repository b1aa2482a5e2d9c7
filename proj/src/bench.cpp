#include "sar/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "sar/errors.hpp"
#include "sar/objective.hpp"
#include "sar/ops.hpp"
#include "sar/random.hpp"

namespace sar {
namespace {

enum TaskStream : std::uint64_t {
  kCenters = 10,
  kSemantics = 11,
  kSplit = 12,
  kNovel = 13,
  kNuisance = 14,
  kTrainImages = 15,
  kTestImages = 16,
};

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

// center + spread * N(0, I), renormalized.
std::vector<double> semantic_vector(Rng& rng, std::span<const double> center, double spread) {
  auto v = gaussian(rng, center.size(), spread);
  for (std::size_t k = 0; k < v.size(); ++k) v[k] += center[k];
  return unit(std::move(v));
}

LabeledFeatures draw_images(Rng& rng, std::span<const std::vector<double>> means, std::size_t per_class, double sigma) {
  const std::size_t dw = means.front().size();
  const double sd = sigma / std::sqrt(static_cast<double>(dw));
  LabeledFeatures out;
  std::vector<double> values;
  values.reserve(means.size() * per_class * dw);
  for (std::size_t c = 0; c < means.size(); ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      const auto noise = gaussian(rng, dw, sd);
      for (std::size_t k = 0; k < dw; ++k) values.push_back(means[c][k] + noise[k]);
      out.labels.push_back(c);
    }
  }
  out.features = Tensor::matrix(out.labels.size(), dw, std::move(values));
  return out;
}

struct Accuracy {
  double overall = 0.0;
  std::vector<double> per_class;
};

Accuracy accuracy(const Tensor& logits, std::span<const std::size_t> labels, std::size_t num_classes) {
  std::vector<std::size_t> hits(num_classes, 0), totals(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.row(i);
    const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    ++totals[labels[i]];
    if (pred == labels[i]) {
      ++hits[labels[i]];
      ++correct;
    }
  }
  Accuracy a;
  a.overall = labels.empty() ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
  for (std::size_t c = 0; c < num_classes; ++c) {
    a.per_class.push_back(totals[c] == 0 ? 0.0 : 100.0 * static_cast<double>(hits[c]) / static_cast<double>(totals[c]));
  }
  return a;
}

// [n x C] cosines between image and text embeddings.
Tensor cosine_logits(const Tensor& images, const EmbeddingSet& text) {
  if (images.cols() != text.dim()) throw DimensionError("image and text embeddings differ in width");
  return ad::matmul(ad::normalize_rows(images), ad::transpose(ad::normalize_rows(text.vectors)));
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

void TaskOptions::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ParameterError(field + ": " + why); };
  if (num_classes < 4 || num_classes % 2 != 0) fail("num_classes", "must be even and >= 4");
  if (clusters < 2) fail("clusters", "must be >= 2");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma", "must be >= 0");
  if (shots == 0) fail("shots", "must be >= 1");
  if (test_per_class == 0) fail("test_per_class", "must be >= 1");
  if (!(spread >= 0.0) || !std::isfinite(spread)) fail("spread", "must be >= 0");
  if (!(nuisance >= 0.0) || !std::isfinite(nuisance)) fail("nuisance", "must be >= 0");
  if (dim_word == 0 || dim_embed == 0) fail("dim_word", "encoder dimensions must be positive");
  if (!(encoder_gain > 0.0)) fail("encoder_gain", "must be > 0");
}

nlohmann::json task_options_to_json(const TaskOptions& o) {
  return {{"seed", o.seed},         {"num_classes", o.num_classes},
          {"clusters", o.clusters}, {"noise_sigma", o.noise_sigma},
          {"shots", o.shots},       {"test_per_class", o.test_per_class},
          {"num_novel", o.num_novel}, {"spread", o.spread},
          {"nuisance", o.nuisance}, {"dim_word", o.dim_word},
          {"dim_embed", o.dim_embed}, {"encoder_gain", o.encoder_gain}};
}

TaskOptions task_options_from_json(const nlohmann::json& doc) {
  TaskOptions o;
  try {
    o.seed = doc.at("seed").get<std::uint64_t>();
    o.num_classes = doc.at("num_classes").get<std::size_t>();
    o.clusters = doc.at("clusters").get<std::size_t>();
    o.noise_sigma = doc.at("noise_sigma").get<double>();
    o.shots = doc.at("shots").get<std::size_t>();
    o.test_per_class = doc.at("test_per_class").get<std::size_t>();
    o.num_novel = doc.at("num_novel").get<std::size_t>();
    o.spread = doc.at("spread").get<double>();
    o.nuisance = doc.at("nuisance").get<double>();
    o.dim_word = doc.at("dim_word").get<std::size_t>();
    o.dim_embed = doc.at("dim_embed").get<std::size_t>();
    o.encoder_gain = doc.at("encoder_gain").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed task options: ") + e.what());
  }
  o.validate();
  return o;
}

std::vector<std::string> benchmark_templates() {
  auto t = general_templates();
  t.emplace_back("a photo of a [CLASS].");
  return t;
}

SyntheticTask generate_task(const TaskOptions& options) {
  options.validate();
  SyntheticTask task;
  task.options = options;
  task.templates = benchmark_templates();
  const std::size_t dw = options.dim_word;
  const std::size_t c = options.num_classes;

  Rng center_rng = make_rng(options.seed, kCenters);
  std::vector<std::vector<double>> centers;
  for (std::size_t k = 0; k < options.clusters; ++k) centers.push_back(unit(gaussian(center_rng, dw)));

  // Classes fill the clusters round-robin, so every cluster has members on
  // both sides of the split.
  Rng sem_rng = make_rng(options.seed, kSemantics);
  std::vector<std::vector<double>> semantics;
  std::vector<std::size_t> clusters;
  for (std::size_t i = 0; i < c; ++i) {
    clusters.push_back(i % options.clusters);
    semantics.push_back(semantic_vector(sem_rng, centers[clusters.back()], options.spread));
  }

  Rng split_rng = make_rng(options.seed, kSplit);
  const auto order = permutation(split_rng, c);

  Rng nuis_rng = make_rng(options.seed, kNuisance);
  std::vector<std::vector<double>> visual(c);
  for (std::size_t i = 0; i < c; ++i) {
    const auto off = gaussian(nuis_rng, dw, options.nuisance / std::sqrt(static_cast<double>(dw)));
    visual[i] = semantics[i];
    for (std::size_t k = 0; k < dw; ++k) visual[i][k] += off[k];
  }

  std::vector<std::vector<double>> base_visual, new_visual;
  for (std::size_t pos = 0; pos < c; ++pos) {
    const std::size_t i = order[pos];
    const std::string name = numbered("cls", i, 2);
    task.vocabulary[name] = semantics[i];
    if (pos < c / 2) {
      task.base_names.push_back(name);
      task.base_clusters.push_back(clusters[i]);
      base_visual.push_back(visual[i]);
    } else {
      task.new_names.push_back(name);
      task.new_clusters.push_back(clusters[i]);
      new_visual.push_back(visual[i]);
    }
  }

  auto stack = [dw](const std::vector<std::vector<double>>& rows) {
    std::vector<double> v;
    for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
    return Tensor::matrix(rows.size(), dw, std::move(v));
  };
  task.base_prototypes = stack(base_visual);
  task.new_prototypes = stack(new_visual);

  Rng novel_rng = make_rng(options.seed, kNovel);
  std::uniform_int_distribution<std::size_t> pick_cluster(0, options.clusters - 1);
  for (std::size_t i = 0; i < options.num_novel; ++i) {
    const std::size_t k = pick_cluster(novel_rng);
    const std::string name = numbered("nov", i, 3);
    task.novel_names.push_back(name);
    task.novel_clusters.push_back(k);
    task.vocabulary[name] = semantic_vector(novel_rng, centers[k], options.spread);
  }

  Rng train_rng = make_rng(options.seed, kTrainImages);
  task.train = draw_images(train_rng, base_visual, options.shots, options.noise_sigma);
  Rng test_rng = make_rng(options.seed, kTestImages);
  task.test_base = draw_images(test_rng, base_visual, options.test_per_class, options.noise_sigma);
  task.test_new = draw_images(test_rng, new_visual, options.test_per_class, options.noise_sigma);
  return task;
}

namespace {

World build_world(const TaskOptions& o, const std::map<std::string, std::vector<double>>& vocabulary) {
  WordEmbeddingTable words(o.seed, o.dim_word);
  for (const auto& [name, v] : vocabulary) words.define(name, v);
  TextEncoderOptions eo;
  eo.seed = o.seed;
  eo.dim_word = o.dim_word;
  eo.dim_embed = o.dim_embed;
  eo.gain = o.encoder_gain;
  auto text = std::make_shared<const TextEncoder>(eo, std::move(words));
  auto image = std::make_shared<const ImageEncoder>(text);
  return World{std::move(text), std::move(image)};
}

}  // namespace

World make_world(const SyntheticTask& task) { return build_world(task.options, task.vocabulary); }

ClassVocabulary training_vocabulary(const SyntheticTask& task) {
  ClassVocabulary v;
  v.base = task.base_names;
  v.novel = task.novel_names;
  return v;
}

TrainingSet training_set(const SyntheticTask& task, const World& world) {
  return TrainingSet{world.image->encode(task.train.features), task.train.labels};
}

double harmonic_mean(double base_acc, double new_acc) {
  const double s = base_acc + new_acc;
  return s > 0.0 ? 2.0 * base_acc * new_acc / s : 0.0;
}

nlohmann::json EvalReport::to_json() const {
  return {{"base_acc", base_acc},
          {"new_acc", new_acc},
          {"harmonic_mean", harmonic_mean},
          {"per_class", per_class},
          {"logits_path", logits_path}};
}

EvalReport evaluate_with(const EmbeddingSet& base_text, const EmbeddingSet& new_text, const SyntheticTask& task,
                         const World& world, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  if (base_text.names != task.base_names) throw FormatError("base text embeddings do not match the base classes");
  if (new_text.names != task.new_names) throw FormatError("new text embeddings do not match the new classes");
  EvalReport r;
  // Argmax is invariant to the temperature, so logits are stored as cosines.
  r.base_logits = cosine_logits(world.image->encode(task.test_base.features), base_text);
  r.new_logits = cosine_logits(world.image->encode(task.test_new.features), new_text);
  const auto b = accuracy(r.base_logits, task.test_base.labels, task.base_names.size());
  const auto n = accuracy(r.new_logits, task.test_new.labels, task.new_names.size());
  r.base_acc = b.overall;
  r.new_acc = n.overall;
  r.harmonic_mean = harmonic_mean(r.base_acc, r.new_acc);
  for (std::size_t i = 0; i < task.base_names.size(); ++i) r.per_class[task.base_names[i]] = b.per_class[i];
  for (std::size_t i = 0; i < task.new_names.size(); ++i) r.per_class[task.new_names[i]] = n.per_class[i];
  return r;
}

EvalReport evaluate(const PromptParams& params, const SyntheticTask& task, const World& world, double temperature) {
  return evaluate_with(learned_embeddings(params, task.base_names, *world.text),
                       learned_embeddings(params, task.new_names, *world.text), task, world, temperature);
}

EvalReport evaluate_handcrafted(const SyntheticTask& task, const World& world, double temperature) {
  return evaluate_with(ensemble_handcrafted(task.base_names, task.templates, *world.text),
                       ensemble_handcrafted(task.new_names, task.templates, *world.text), task, world, temperature);
}

void write_logits_csv(std::ostream& out, std::span<const std::string> class_names, const Tensor& logits,
                      std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.cols() != class_names.size() || logits.rows() != labels.size()) {
    throw DimensionError("logits must be [images x classes] with one label per image");
  }
  for (const auto& n : class_names) out << csv_field(n) << ',';
  out << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = 0; j < class_names.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.6f", logits.at(i, j));
      out << buf << ',';
    }
    if (labels[i] >= class_names.size()) throw DimensionError("label out of range in logits dump");
    out << csv_field(class_names[labels[i]]) << '\n';
  }
}

std::size_t rank_disagreements(const Tensor& learned, const Tensor& hand, std::vector<std::size_t>* per_row) {
  const std::size_t m = learned.rows();
  if (learned.rank() != 2 || learned.cols() != m || hand.shape() != learned.shape()) {
    throw DimensionError("rank comparison needs two [M x M] matrices of the same size");
  }
  auto sign = [](double d) { return d > kRankTieTolerance ? 1 : (d < -kRankTieTolerance ? -1 : 0); };
  std::size_t total = 0;
  if (per_row != nullptr) per_row->assign(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t row = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      for (std::size_t k = j + 1; k < m; ++k) {
        if (k == i) continue;
        if (sign(learned.at(i, j) - learned.at(i, k)) * sign(hand.at(i, j) - hand.at(i, k)) < 0) ++row;
      }
    }
    total += row;
    if (per_row != nullptr) (*per_row)[i] = row;
  }
  return total;
}

nlohmann::json DisruptionReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    rows.push_back({{"name", names[i]},
                    {"kl", kl_per_row[i]},
                    {"rank_disagreements", rank_disagreements_per_row[i]}});
  }
  return {{"temperature", learned.temperature},
          {"num_classes", names.size()},
          {"mean_kl", mean_kl},
          {"rank_disagreements", rank_disagreements},
          {"rows", rows}};
}

DisruptionReport disruption_report(const EmbeddingSet& learned, const EmbeddingSet& hand, double temperature) {
  if (learned.names != hand.names) {
    for (std::size_t i = 0; i < std::min(learned.size(), hand.size()); ++i) {
      if (learned.names[i] != hand.names[i]) {
        throw FormatError("class lists are not aligned at row " + std::to_string(i) + ": \"" + learned.names[i] +
                          "\" vs \"" + hand.names[i] + "\"");
      }
    }
    throw FormatError("class lists differ in length: " + std::to_string(learned.size()) + " vs " +
                      std::to_string(hand.size()));
  }
  const CosineMatrix cl = cosine_matrix(learned);
  const CosineMatrix ch = cosine_matrix(hand);
  DisruptionReport r;
  r.names = learned.names;
  r.learned = full_distribution(cl, temperature);
  r.hand = full_distribution(ch, temperature);
  r.kl_per_row = kl_per_row(r.learned, r.hand);
  r.mean_kl = kl_rows(r.learned, r.hand);
  r.rank_disagreements = rank_disagreements(cl.values, ch.values, &r.rank_disagreements_per_row);
  return r;
}

nlohmann::json features_to_json(const LabeledFeatures& f) {
  return {{"rows", f.features.rows()}, {"cols", f.features.cols()}, {"values", f.features.values()},
          {"labels", f.labels}};
}

LabeledFeatures features_from_json(const nlohmann::json& doc, std::size_t num_classes) {
  LabeledFeatures f;
  try {
    const auto rows = doc.at("rows").get<std::size_t>();
    const auto cols = doc.at("cols").get<std::size_t>();
    auto values = doc.at("values").get<std::vector<double>>();
    f.labels = doc.at("labels").get<std::vector<std::size_t>>();
    if (values.size() != rows * cols || f.labels.size() != rows) {
      throw FormatError("feature block sizes are inconsistent");
    }
    f.features = Tensor::matrix(rows, cols, std::move(values));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed feature block: ") + e.what());
  }
  for (auto y : f.labels) {
    if (y >= num_classes) throw FormatError("feature label " + std::to_string(y) + " has no class name");
  }
  return f;
}

nlohmann::json task_to_json(const SyntheticTask& task) {
  nlohmann::json vocab = nlohmann::json::array();
  for (const auto& [name, v] : task.vocabulary) vocab.push_back({{"name", name}, {"vector", v}});
  return {{"options", task_options_to_json(task.options)}, {"vocabulary", vocab}, {"train", features_to_json(task.train)}};
}

nlohmann::json test_split_to_json(const SyntheticTask& task) {
  return {{"base", features_to_json(task.test_base)}, {"new", features_to_json(task.test_new)}};
}

World world_from_json(const nlohmann::json& task_doc) {
  if (!task_doc.contains("options")) throw FormatError("task file has no options");
  const TaskOptions o = task_options_from_json(task_doc.at("options"));
  std::map<std::string, std::vector<double>> vocabulary;
  try {
    for (const auto& item : task_doc.at("vocabulary")) {
      vocabulary[item.at("name").get<std::string>()] = item.at("vector").get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed task vocabulary: ") + e.what());
  }
  return build_world(o, vocabulary);
}

}  // namespace sar
