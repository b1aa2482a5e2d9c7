#include "sar/tuner.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "sar/errors.hpp"
#include "sar/ops.hpp"
#include "sar/random.hpp"

namespace sar {
namespace {

// Sub-streams of a run seed.
enum Stream : std::uint64_t { kInitStream = 1, kShuffleStream = 2, kNovelStream = 3, kFamilyStream = 4 };

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  auto ws = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path);
  return buf.str();
}

std::vector<Tokens> tokenize_all(std::span<const std::string> names) {
  std::vector<Tokens> out;
  out.reserve(names.size());
  for (const auto& n : names) {
    out.push_back(tokenize(n));
    if (out.back().empty()) throw FormatError("class name \"" + n + "\" has no tokens");
  }
  return out;
}

}  // namespace

std::vector<std::string> general_templates() {
  return {
      "itap of a [CLASS].",   "a bad photo of the [CLASS].",      "a origami [CLASS].",
      "a photo of the large [CLASS].", "a [CLASS] in a video game.", "art of the [CLASS].",
      "a photo of the small [CLASS].",
  };
}

nlohmann::json prompts_to_json(const PromptParams& params) {
  return {{"rows", params.vectors.rows()}, {"cols", params.vectors.cols()}, {"values", params.vectors.values()}};
}

PromptParams prompts_from_json(const nlohmann::json& doc) {
  try {
    const auto rows = doc.at("rows").get<std::size_t>();
    const auto cols = doc.at("cols").get<std::size_t>();
    return PromptParams{Tensor::matrix(rows, cols, doc.at("values").get<std::vector<double>>())};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed prompt file: ") + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(std::string("malformed prompt file: ") + e.what());
  }
}

std::size_t ClassVocabulary::remove_base_overlap() {
  std::unordered_set<std::string> base_keys;
  for (const auto& b : base) base_keys.insert(lower(b));
  const auto before = novel.size();
  std::erase_if(novel, [&](const std::string& n) { return base_keys.contains(lower(n)); });
  return before - novel.size();
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ParameterError(field + ": " + why); };
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda", "must be >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) fail("tau", "must be > 0");
  if (tau_cls < 0.0 || !std::isfinite(tau_cls)) fail("tau_cls", "must be > 0 when set");
  if (tau_sim < 0.0 || !std::isfinite(tau_sim)) fail("tau_sim", "must be > 0 when set");
  if (epochs == 0) fail("epochs", "must be >= 1");
  if (batch_size == 0) fail("batch_size", "must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must lie in [0, 1)");
  if (num_prompts == 0) fail("num_prompts", "must be >= 1");
  if (use_sar && k == 0) fail("k", "must be >= 1");
  if (use_sar && ensemble_templates.empty()) fail("templates", "at least one template is required");
}

nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"lambda", c.lambda},
          {"k", c.k},
          {"tau", c.tau},
          {"tau_cls", c.class_temperature()},
          {"tau_sim", c.similarity_temperature()},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"seed", c.seed},
          {"num_prompts", c.num_prompts},
          {"num_novel", c.num_novel},
          {"novel_source", c.novel_source},
          {"templates", c.ensemble_templates},
          {"use_sar", c.use_sar}};
}

std::vector<std::string> parse_class_list(std::string_view text) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    const auto name = trim(line);
    if (name.empty()) continue;
    if (seen.insert(std::string(name)).second) out.emplace_back(name);
  }
  if (out.empty()) throw FormatError("class list is empty");
  return out;
}

std::vector<std::string> load_class_list(const std::string& path) {
  try {
    return parse_class_list(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<std::string> load_templates(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<std::string> out;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    try {
      fill_template(t, "x");
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out.emplace_back(t);
  }
  if (out.empty()) throw FormatError(path + ": no templates");
  return out;
}

EmbeddingSet ensemble_handcrafted(std::span<const std::string> class_names, std::span<const std::string> templates,
                                  const TextEncoder& encoder) {
  if (templates.empty()) throw ParameterError("ensembling needs at least one template");
  for (const auto& t : templates) fill_template(t, "x");
  const std::size_t d = encoder.dim_embed();
  std::vector<double> values;
  values.reserve(class_names.size() * d);
  for (const auto& name : class_names) {
    std::vector<double> acc(d, 0.0);
    for (const auto& t : templates) {
      const auto e = encoder.encode_handcrafted(t, name);
      double n = 0.0;
      for (double x : e) n += x * x;
      n = std::sqrt(n);
      if (!(n > 0.0)) throw NumericError("hand-crafted embedding of \"" + name + "\" has zero norm");
      for (std::size_t k = 0; k < d; ++k) acc[k] += e[k] / n;
    }
    double n = 0.0;
    for (double& x : acc) {
      x /= static_cast<double>(templates.size());
      n += x * x;
    }
    n = std::sqrt(n);
    if (!(n > 0.0)) throw NumericError("ensembled embedding of \"" + name + "\" cancels to zero");
    for (double x : acc) values.push_back(x / n);
  }
  return EmbeddingSet::make({class_names.begin(), class_names.end()},
                            Tensor::matrix(class_names.size(), d, std::move(values)), Provenance::hand_crafted);
}

PromptParams init_prompts(const TrainConfig& config, const TextEncoder& encoder) {
  if (config.num_prompts == 0) throw ParameterError("num_prompts: must be >= 1");
  Rng rng = make_rng(config.seed, kInitStream);
  const std::size_t n = config.num_prompts * encoder.dim_word();
  return PromptParams{Tensor::matrix(config.num_prompts, encoder.dim_word(), gaussian(rng, n, 0.02))};
}

std::vector<std::string> select_novel(const TrainConfig& config, const ClassVocabulary& vocab) {
  if (!config.use_sar) return {};
  if (config.num_novel >= vocab.novel.size()) return vocab.novel;
  Rng rng = make_rng(config.seed, kNovelStream);
  auto order = permutation(rng, vocab.novel.size());
  order.resize(config.num_novel);
  std::sort(order.begin(), order.end());
  std::vector<std::string> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(vocab.novel[i]);
  return out;
}

EmbeddingSet learned_embeddings(const PromptParams& params, std::span<const std::string> class_names,
                                const TextEncoder& encoder) {
  const auto tokens = tokenize_all(class_names);
  return EmbeddingSet::make({class_names.begin(), class_names.end()},
                            encoder.encode_prompted(params.vectors.detach(), tokens), Provenance::learned);
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json per_epoch = nlohmann::json::array();
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    per_epoch.push_back({{"epoch", e + 1},
                         {"ce", epochs[e].ce},
                         {"sar", epochs[e].sar},
                         {"total", epochs[e].total},
                         {"learning_rate", epochs[e].learning_rate}});
  }
  return {{"config", config_to_json(config)},
          {"epochs", per_epoch},
          {"final_sar", final_sar},
          {"steps", steps},
          {"num_classes_aligned", num_classes_aligned},
          {"novel_used", novel_used},
          {"final_prompts", prompts_to_json(final_prompts)}};
}

TrainReport train(const TrainConfig& config, const ClassVocabulary& vocab, const TrainingSet& data,
                  const TextEncoder& encoder, std::ostream* log) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  if (vocab.base.empty()) throw ParameterError("base: at least one base class is required");
  if (data.image_embeddings.rank() != 2 || data.image_embeddings.rows() != data.labels.size() ||
      data.labels.empty()) {
    throw DimensionError("training set needs one label per image embedding");
  }
  if (data.image_embeddings.cols() != encoder.dim_embed()) {
    throw DimensionError("image embeddings do not match the text embedding width");
  }
  for (auto y : data.labels) {
    if (y >= vocab.base.size()) throw DimensionError("training label " + std::to_string(y) + " is not a base class");
  }

  TrainReport report;
  report.config = config;
  report.novel_used = select_novel(config, vocab);

  const auto base_tokens = tokenize_all(vocab.base);
  AlignmentTarget target;
  std::size_t m = 0;
  if (config.use_sar) {
    std::vector<std::string> aligned = vocab.base;
    aligned.insert(aligned.end(), report.novel_used.begin(), report.novel_used.end());
    m = aligned.size();
    if (config.k + 1 > m) {
      throw ParameterError("k: K exceeds M-1 (K=" + std::to_string(config.k) + ", M=" + std::to_string(m) + ")");
    }
    std::set<std::string> unique(aligned.begin(), aligned.end());
    if (unique.size() != aligned.size()) throw FormatError("base and novel class names must be distinct");
    target.class_tokens = tokenize_all(aligned);
    const EmbeddingSet hand = ensemble_handcrafted(aligned, config.ensemble_templates, encoder);
    target.hand_cosines = cosine_matrix(hand).values;
  }
  report.num_classes_aligned = m;

  PromptParams params = init_prompts(config, encoder);
  Rng shuffle_rng = make_rng(config.seed, kShuffleStream);
  Rng family_rng = make_rng(config.seed, kFamilyStream);

  const std::size_t n = data.labels.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t width = data.image_embeddings.cols();
  std::vector<double> velocity(params.vectors.size(), 0.0);
  const LossSettings settings{config.lambda, config.class_temperature(), config.similarity_temperature()};
  const IndexFamily no_family{};

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = 0.5 * config.learning_rate *
                      (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(config.epochs)));
    const auto order = permutation(shuffle_rng, n);
    EpochStats stats;
    stats.learning_rate = lr;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t lo = s * config.batch_size;
      const std::size_t hi = std::min(n, lo + config.batch_size);
      Batch batch;
      std::vector<double> rows;
      rows.reserve((hi - lo) * width);
      for (std::size_t i = lo; i < hi; ++i) {
        const auto r = data.image_embeddings.row(order[i]);
        rows.insert(rows.end(), r.begin(), r.end());
        batch.labels.push_back(data.labels[order[i]]);
      }
      batch.image_embeddings = Tensor::matrix(hi - lo, width, std::move(rows));

      Tape tape;
      const Tensor prompts = tape.leaf(params.vectors);
      LossBreakdown b;
      Tensor loss;
      if (config.use_sar) {
        const IndexFamily family = sample_index_family(m, config.k, family_rng);
        LossTerms terms = total_loss(batch, prompts, encoder, base_tokens, target, family, settings);
        loss = terms.total;
        b = terms.breakdown;
      } else {
        loss = batch_cross_entropy(batch.image_embeddings, encoder.encode_prompted(prompts, base_tokens), batch.labels,
                                   settings.class_temperature);
        b = LossBreakdown{loss.item(), 0.0, loss.item(), 0.0};
      }
      if (!std::isfinite(b.total)) throw NumericError("loss became non-finite at epoch " + std::to_string(epoch + 1));

      const Tensor grad = tape.backward(loss).of(prompts);
      std::vector<double> next(params.vectors.values());
      for (std::size_t i = 0; i < next.size(); ++i) {
        velocity[i] = config.momentum * velocity[i] + grad[i];
        next[i] -= lr * velocity[i];
      }
      params.vectors = Tensor(params.vectors.shape(), std::move(next));

      stats.ce += b.ce;
      stats.sar += b.sar;
      stats.total += b.total;
      ++report.steps;
      if (log != nullptr) {
        *log << nlohmann::json{{"type", "step"}, {"epoch", epoch + 1}, {"step", report.steps}, {"ce", b.ce},
                               {"sar", b.sar},   {"total", b.total},   {"lambda", b.lambda}, {"lr", lr}}
                    .dump()
             << '\n';
      }
    }
    const double denom = static_cast<double>(steps_per_epoch);
    stats.ce /= denom;
    stats.sar /= denom;
    stats.total /= denom;
    report.epochs.push_back(stats);
    if (log != nullptr) {
      *log << nlohmann::json{{"type", "epoch"}, {"epoch", epoch + 1}, {"ce", stats.ce},         {"sar", stats.sar},
                             {"total", stats.total}, {"lambda", config.lambda}, {"lr", lr}}
                  .dump()
           << '\n';
    }
  }

  report.final_prompts = params;
  report.final_sar = report.epochs.back().sar;
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace sar
