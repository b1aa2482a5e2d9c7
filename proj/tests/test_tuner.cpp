#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sar/bench.hpp"
#include "sar/errors.hpp"
#include "sar/objective.hpp"
#include "sar/ops.hpp"
#include "sar/tuner.hpp"

using namespace sar;
namespace fs = std::filesystem;

namespace {

std::string fixture(const std::string& name) { return std::string(SAR_FIXTURE_DIR) + "/" + name; }

fs::path temp_file(const std::string& name, const std::string& content) {
  const fs::path p = fs::temp_directory_path() / ("sar_tuner_" + name);
  std::ofstream(p, std::ios::binary) << content;
  return p;
}

TextEncoder small_encoder() { return TextEncoder(TextEncoderOptions{5, 12, 8, 32, 2.0}, WordEmbeddingTable(5, 12)); }

struct Tiny {
  SyntheticTask task;
  World world;
  ClassVocabulary vocab;
  TrainingSet data;
  TrainConfig config;

  Tiny() {
    TaskOptions o;
    o.num_classes = 6;
    o.clusters = 2;
    o.shots = 4;
    o.test_per_class = 4;
    o.num_novel = 12;
    o.dim_word = 12;
    o.dim_embed = 8;
    task = generate_task(o);
    world = make_world(task);
    vocab = training_vocabulary(task);
    data = training_set(task, world);
    config.epochs = 3;
    config.batch_size = 5;
    config.k = 4;
    config.num_novel = 12;
    config.lambda = 1.0;
    config.ensemble_templates = task.templates;
  }
};

}  // namespace

TEST_CASE("class list parsing") {
  CHECK(parse_class_list("Forest\nRiver\n") == std::vector<std::string>{"Forest", "River"});
  CHECK(parse_class_list("River\n  Forest \r\n\nRiver\n") == std::vector<std::string>{"River", "Forest"});
  CHECK(parse_class_list("\xEF\xBB\xBFSea or Lake\n") == std::vector<std::string>{"Sea or Lake"});
  CHECK_THROWS_AS(parse_class_list("\n \n"), FormatError);
  CHECK(load_class_list(fixture("eurosat_novel.txt")).size() == 200);
  CHECK(load_class_list(fixture("eurosat_base.txt")).size() == 5);
  CHECK_THROWS_AS(load_class_list("/nonexistent/classes.txt"), IoError);
  const auto empty = temp_file("empty.txt", "");
  CHECK_THROWS_AS(load_class_list(empty.string()), FormatError);
}

TEST_CASE("template loading") {
  const auto t = load_templates(fixture("templates_eurosat.txt"));
  CHECK(t.size() == 8);
  for (const auto& s : t) CHECK(s.find("[CLASS]") != std::string::npos);
  const auto bad = temp_file("bad_templates.txt", "a photo of a [CLASS].\na photo without slot\n");
  CHECK_THROWS_AS(load_templates(bad.string()), FormatError);
  CHECK(general_templates().size() == 7);
}

TEST_CASE("novel overlap with base is removed ignoring case") {
  ClassVocabulary v{{"Forest", "River"}, {"forest", "Lagoon", "RIVER", "Marsh"}, {}};
  CHECK(v.remove_base_overlap() == 2);
  CHECK(v.novel == std::vector<std::string>{"Lagoon", "Marsh"});
}

TEST_CASE("hand-crafted ensembling") {
  const auto enc = small_encoder();
  const std::vector<std::string> names = {"forest", "river", "sea or lake"};
  const std::vector<std::string> one = {"a photo of a [CLASS]."};
  const auto e1 = ensemble_handcrafted(names, one, enc);
  CHECK(e1.provenance == Provenance::hand_crafted);
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto raw = enc.encode_handcrafted(one[0], names[i]);
    double n = 0;
    for (double x : raw) n += x * x;
    n = std::sqrt(n);
    for (std::size_t k = 0; k < raw.size(); ++k) CHECK(e1.vectors.at(i, k) == doctest::Approx(raw[k] / n).epsilon(1e-12));
  }
  const std::vector<std::string> three(3, one[0]);
  const auto e3 = ensemble_handcrafted(names, three, enc);
  for (std::size_t i = 0; i < e1.vectors.size(); ++i) CHECK(e3.vectors[i] == doctest::Approx(e1.vectors[i]).epsilon(1e-12));

  const auto e8 = ensemble_handcrafted(names, load_templates(fixture("templates_eurosat.txt")), enc);
  for (std::size_t i = 0; i < names.size(); ++i) {
    double n = 0;
    for (double x : e8.vectors.row(i)) n += x * x;
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(ensemble_handcrafted(names, std::vector<std::string>{"no slot here"}, enc), FormatError);
}

TEST_CASE("prompt initialization") {
  const auto enc = small_encoder();
  TrainConfig c;
  c.seed = 3;
  CHECK(init_prompts(c, enc).vectors.values() == init_prompts(c, enc).vectors.values());
  TrainConfig d = c;
  d.seed = 4;
  CHECK(init_prompts(c, enc).vectors.values() != init_prompts(d, enc).vectors.values());
  c.num_prompts = 834;  // 834 * 12 > 10,000 entries
  const auto v = init_prompts(c, enc).vectors.values();
  double s = 0, s2 = 0;
  for (double x : v) {
    s += x;
    s2 += x * x;
  }
  const double mean = s / v.size();
  const double sd = std::sqrt(s2 / v.size() - mean * mean);
  CHECK(sd >= 0.018);
  CHECK(sd <= 0.022);
}

TEST_CASE("config validation names the field") {
  TrainConfig c;
  c.ensemble_templates = {"a photo of a [CLASS]."};
  CHECK_NOTHROW(c.validate());
  c.lambda = -1;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("lambda"), ParameterError);
  c.lambda = 0.1;
  c.tau = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("tau"), ParameterError);
  c.tau = 0.01;
  c.momentum = 1.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("momentum"), ParameterError);
}

TEST_CASE("novel subsets are seeded and sorted") {
  ClassVocabulary v;
  v.base = {"a"};
  for (int i = 0; i < 200; ++i) v.novel.push_back("n" + std::to_string(1000 + i));
  TrainConfig c;
  c.num_novel = 50;
  const auto s1 = select_novel(c, v);
  CHECK(s1.size() == 50);
  CHECK(std::is_sorted(s1.begin(), s1.end()));
  CHECK(s1 == select_novel(c, v));
  c.seed = 2;
  CHECK(s1 != select_novel(c, v));
  c.num_novel = 500;
  CHECK(select_novel(c, v).size() == 200);
  c.use_sar = false;
  CHECK(select_novel(c, v).empty());
}

TEST_CASE("K beyond the aligned class count is rejected before training") {
  Tiny t;
  t.config.k = 6 / 2 + 12;  // M = 3 base + 12 novel
  CHECK_THROWS_WITH_AS(train(t.config, t.vocab, t.data, *t.world.text), doctest::Contains("K exceeds M-1"),
                       ParameterError);
  t.config.k = 14;
  CHECK_NOTHROW(train(t.config, t.vocab, t.data, *t.world.text));
}

TEST_CASE("training is reproducible and records every epoch") {
  Tiny t;
  std::ostringstream log1, log2;
  const auto r1 = train(t.config, t.vocab, t.data, *t.world.text, &log1);
  const auto r2 = train(t.config, t.vocab, t.data, *t.world.text, &log2);
  CHECK(r1.epochs.size() == t.config.epochs);
  CHECK(r1.to_json().dump() == r2.to_json().dump());
  CHECK(log1.str() == log2.str());
  CHECK(r1.num_classes_aligned == 15);
  CHECK(r1.steps == 3 * 3);  // 12 images, batch 5

  std::istringstream lines(log1.str());
  std::size_t steps = 0, epochs = 0;
  for (std::string line; std::getline(lines, line);) {
    const auto j = nlohmann::json::parse(line);
    if (j["type"] == "step") {
      ++steps;
      CHECK(j["total"].get<double>() ==
            doctest::Approx(j["ce"].get<double>() + j["lambda"].get<double>() * j["sar"].get<double>()));
    } else {
      ++epochs;
    }
  }
  CHECK(steps == r1.steps);
  CHECK(epochs == t.config.epochs);
}

TEST_CASE("training leaves the frozen world untouched") {
  Tiny t;
  const auto before = t.world.text->fingerprint();
  const auto image_before = t.world.image->fingerprint();
  const auto hand_before = ensemble_handcrafted(t.vocab.base, t.task.templates, *t.world.text).vectors.values();
  train(t.config, t.vocab, t.data, *t.world.text);
  CHECK(t.world.text->fingerprint() == before);
  CHECK(t.world.image->fingerprint() == image_before);
  CHECK(ensemble_handcrafted(t.vocab.base, t.task.templates, *t.world.text).vectors.values() == hand_before);
}

TEST_CASE("lambda zero reproduces plain context optimization bit for bit") {
  Tiny t;
  t.config.lambda = 0.0;
  t.config.epochs = 1;
  const auto with = train(t.config, t.vocab, t.data, *t.world.text);
  TrainConfig coop = t.config;
  coop.use_sar = false;
  const auto without = train(coop, t.vocab, t.data, *t.world.text);
  CHECK(with.final_prompts.vectors.values() == without.final_prompts.vectors.values());
  for (std::size_t e = 0; e < with.epochs.size(); ++e) CHECK(with.epochs[e].ce == without.epochs[e].ce);
}

TEST_CASE("held-out new classes do not influence training") {
  Tiny t;
  const auto r1 = train(t.config, t.vocab, t.data, *t.world.text);
  ClassVocabulary v = t.vocab;
  v.new_heldout.clear();
  const auto r2 = train(t.config, v, t.data, *t.world.text);
  CHECK(r1.to_json().dump() == r2.to_json().dump());
}

TEST_CASE("a small gradient step decreases the loss") {
  const auto enc = small_encoder();
  const std::vector<std::string> names = {"forest", "river", "lake", "crop"};
  std::vector<Tokens> tokens;
  for (const auto& n : names) tokens.push_back(tokenize(n));
  const auto hand = ensemble_handcrafted(names, general_templates(), enc);
  AlignmentTarget target{tokens, cosine_matrix(hand).values};
  Batch batch;
  batch.image_embeddings = Tensor::matrix(1, 8, enc.encode_handcrafted("a photo of a [CLASS].", "forest"));
  batch.labels = {0};
  const std::span<const Tokens> base(tokens.data(), 1);
  const auto fam = sample_index_family(4, 2, 1);
  TrainConfig c;
  const Tensor p0 = init_prompts(c, enc).vectors;
  // At tau=0.01 the learned rows of this toy are one-hot and KL(p||q) has no
  // gradient in p, so the check runs at a softer temperature.
  const LossSettings ls{1.0, 0.5, 0.5};

  Tape tape;
  const Tensor leaf = tape.leaf(p0);
  const auto terms = total_loss(batch, leaf, enc, base, target, fam, ls);
  const Tensor g = tape.backward(terms.total).of(leaf);
  std::vector<double> v = p0.values();
  double gn = 0;
  for (double x : g.values()) gn += x * x;
  REQUIRE(gn > 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 1e-4 * g[i];
  const double after = total_loss(batch, Tensor(p0.shape(), v), enc, base, target, fam, ls).breakdown.total;
  INFO("before ", terms.breakdown.total, " after ", after, " |g|^2 ", gn);
  CHECK(after < terms.breakdown.total);
}

TEST_CASE("prompt JSON round trip") {
  const auto enc = small_encoder();
  const auto p = init_prompts(TrainConfig{}, enc);
  const auto back = prompts_from_json(prompts_to_json(p));
  CHECK(back.vectors.values() == p.vectors.values());
  CHECK(back.vectors.shape() == p.vectors.shape());
  CHECK_THROWS_AS(prompts_from_json(nlohmann::json{{"rows", 2}}), FormatError);
}
