#include "sar/cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sar/bench.hpp"
#include "sar/errors.hpp"
#include "sar/gradcheck.hpp"
#include "sar/simdist.hpp"
#include "sar/tuner.hpp"

namespace fs = std::filesystem;

namespace sar {
namespace {

using Settings = std::map<std::string, std::string>;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string lines(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += i + '\n';
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
    throw ParameterError(key + ": cannot parse \"" + text + "\" as a number");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw ParameterError(key + ": must be finite");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  if (t == "1" || t == "true" || t == "yes") return true;
  if (t == "0" || t == "false" || t == "no") return false;
  throw ParameterError(key + ": expected true or false, got \"" + text + "\"");
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) seeds.push_back(parse_number<std::uint64_t>("seeds", item));
  if (seeds.empty()) throw ParameterError("seeds: empty list");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ParameterError("seeds: repeated seed");
  return seeds;
}

void reject_unknown(const Settings& s, const std::set<std::string>& allowed) {
  for (const auto& [k, v] : s) {
    if (!allowed.contains(k)) throw ParameterError("unknown config key '" + k + "'");
  }
}

Settings load_settings(const std::string& config_path) {
  if (config_path.empty()) return {};
  try {
    return parse_key_values(read_text(config_path));
  } catch (const FormatError& e) {
    throw FormatError(config_path + ": " + e.what());
  }
}

struct Overrides {
  std::vector<std::pair<std::string, CLI::Option*>> options;
  std::map<std::string, std::string> values;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    options.emplace_back(key, app->add_option(flag, values[key], help));
  }
  void apply(Settings& s) const {
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) s[key] = values.at(key);
    }
  }
};

// ---- train -----------------------------------------------------------------

const std::set<std::string> kTrainKeys = {
    "task",     "lambda",      "k",         "tau",        "tau_cls",   "tau_sim",  "epochs",
    "batch_size", "learning_rate", "momentum", "seed",     "seeds",     "num_prompts", "num_novel",
    "novel_file", "templates", "use_sar",   "evaluate"};

struct TrainPlan {
  fs::path task_dir;
  TrainConfig config;
  std::vector<std::uint64_t> seeds;
  bool evaluate = false;
  std::string templates_file;
};

TrainPlan train_plan(const Settings& s) {
  reject_unknown(s, kTrainKeys);
  TrainPlan p;
  auto get = [&](const std::string& k) -> const std::string* {
    auto it = s.find(k);
    return it == s.end() ? nullptr : &it->second;
  };
  if (auto v = get("task")) p.task_dir = *v;
  if (p.task_dir.empty()) throw ParameterError("task: a task directory is required (--task)");
  TrainConfig& c = p.config;
  if (auto v = get("lambda")) c.lambda = parse_number<double>("lambda", *v);
  if (auto v = get("k")) c.k = parse_number<std::size_t>("k", *v);
  if (auto v = get("tau")) c.tau = parse_number<double>("tau", *v);
  if (auto v = get("tau_cls")) c.tau_cls = parse_number<double>("tau_cls", *v);
  if (auto v = get("tau_sim")) c.tau_sim = parse_number<double>("tau_sim", *v);
  if (auto v = get("epochs")) c.epochs = parse_number<std::size_t>("epochs", *v);
  if (auto v = get("batch_size")) c.batch_size = parse_number<std::size_t>("batch_size", *v);
  if (auto v = get("learning_rate")) c.learning_rate = parse_number<double>("learning_rate", *v);
  if (auto v = get("momentum")) c.momentum = parse_number<double>("momentum", *v);
  if (auto v = get("seed")) c.seed = parse_number<std::uint64_t>("seed", *v);
  if (auto v = get("num_prompts")) c.num_prompts = parse_number<std::size_t>("num_prompts", *v);
  if (auto v = get("num_novel")) c.num_novel = parse_number<std::size_t>("num_novel", *v);
  if (auto v = get("use_sar")) c.use_sar = parse_bool("use_sar", *v);
  if (auto v = get("evaluate")) p.evaluate = parse_bool("evaluate", *v);
  c.novel_source = get("novel_file") ? *get("novel_file") : (p.task_dir / "novel.txt").string();
  p.templates_file = get("templates") ? *get("templates") : (p.task_dir / "templates.txt").string();
  p.seeds = get("seeds") ? parse_seed_list(*get("seeds")) : std::vector<std::uint64_t>{c.seed};
  return p;
}

struct LoadedTask {
  TaskOptions options;
  World world;
  ClassVocabulary vocab;
  TrainingSet data;
  std::vector<std::string> templates;
};

LoadedTask load_for_training(const TrainPlan& plan, const TrainConfig& config) {
  LoadedTask t;
  const auto doc = read_json(plan.task_dir / "task.json");
  t.world = world_from_json(doc);
  t.options = task_options_from_json(doc.at("options"));
  t.vocab.base = load_class_list((plan.task_dir / "base.txt").string());
  if (config.use_sar) {
    t.vocab.novel = load_class_list(config.novel_source);
    t.vocab.remove_base_overlap();
  }
  t.templates = load_templates(plan.templates_file);
  if (!doc.contains("train")) throw FormatError("task.json has no training images");
  const auto train = features_from_json(doc.at("train"), t.vocab.base.size());
  t.data = TrainingSet{t.world.image->encode(train.features), train.labels};
  return t;
}

// Evaluation inputs; the only place new.txt is read.
SyntheticTask load_for_eval(const fs::path& task_dir, const std::string& templates_file) {
  SyntheticTask t;
  const auto doc = read_json(task_dir / "task.json");
  t.options = task_options_from_json(doc.at("options"));
  t.base_names = load_class_list((task_dir / "base.txt").string());
  t.new_names = load_class_list((task_dir / "new.txt").string());
  t.templates = load_templates(templates_file);
  const auto test = read_json(task_dir / "test.json");
  if (!test.contains("base") || !test.contains("new")) throw FormatError("test.json needs base and new blocks");
  t.test_base = features_from_json(test.at("base"), t.base_names.size());
  t.test_new = features_from_json(test.at("new"), t.new_names.size());
  return t;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_eval(const EvalReport& r, const SyntheticTask& t, const fs::path& out) {
  EvalReport copy = r;
  copy.logits_path = (out / "logits_new.csv").string();
  std::ostringstream base_csv, new_csv;
  write_logits_csv(base_csv, t.base_names, r.base_logits, t.test_base.labels);
  write_logits_csv(new_csv, t.new_names, r.new_logits, t.test_new.labels);
  write_text(out / "logits_base.csv", base_csv.str());
  write_text(out / "logits_new.csv", new_csv.str());
  write_text(out / "eval_report.json", copy.to_json().dump(2) + "\n");
}

struct SessionResult {
  std::uint64_t seed = 0;
  double final_ce = 0.0;
  double final_sar = 0.0;
  double seconds = 0.0;
  std::optional<EvalReport> eval;
};

SessionResult run_session(const TrainPlan& plan, TrainConfig config, const fs::path& out, std::ostream& err,
                          std::mutex& err_mutex) {
  const LoadedTask t = load_for_training(plan, config);
  config.ensemble_templates = t.templates;
  make_dirs(out);
  {
    std::lock_guard lock(err_mutex);
    err << "seed " << config.seed << ": training " << config.epochs << " epochs, lambda=" << config.lambda
        << ", K=" << config.k << "\n";
  }
  const std::uint64_t before = t.world.text->fingerprint();
  std::ostringstream log;
  const TrainReport report = train(config, t.vocab, t.data, *t.world.text, &log);
  if (t.world.text->fingerprint() != before) throw NumericError("frozen encoder changed during training");

  nlohmann::json doc = report.to_json();
  doc["encoder_fingerprint"] = hex(before);
  write_text(out / "report.json", doc.dump(2) + "\n");
  write_text(out / "prompts.json", prompts_to_json(report.final_prompts).dump() + "\n");
  write_text(out / "train_log.jsonl", log.str());

  std::vector<std::string> aligned = t.vocab.base;
  aligned.insert(aligned.end(), report.novel_used.begin(), report.novel_used.end());
  save_embedding_set(learned_embeddings(report.final_prompts, aligned, *t.world.text),
                     (out / "learned_embeddings.json").string());
  save_embedding_set(ensemble_handcrafted(aligned, t.templates, *t.world.text),
                     (out / "hand_embeddings.json").string());

  SessionResult r{config.seed, report.epochs.back().ce, report.final_sar, report.wall_clock_seconds, std::nullopt};
  if (plan.evaluate) {
    const SyntheticTask et = load_for_eval(plan.task_dir, plan.templates_file);
    r.eval = evaluate(report.final_prompts, et, t.world, config.class_temperature());
    write_eval(*r.eval, et, out);
  }
  std::lock_guard lock(err_mutex);
  err << "seed " << config.seed << ": done, final ce " << r.final_ce << ", final sar " << r.final_sar;
  if (r.eval) err << ", base " << r.eval->base_acc << "%, new " << r.eval->new_acc << "%";
  err << " (" << r.seconds << " s)\n";
  return r;
}

nlohmann::json mean_std(const std::vector<double>& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  const double sd = xs.size() > 1 ? std::sqrt(v / static_cast<double>(xs.size() - 1)) : 0.0;
  return {{"mean", m}, {"std", sd}};
}

int cmd_train(const TrainPlan& plan, const fs::path& out, std::ostream& err) {
  std::vector<SessionResult> results(plan.seeds.size());
  std::vector<std::exception_ptr> errors(plan.seeds.size());
  std::mutex err_mutex;
  const bool multi = plan.seeds.size() > 1;
  auto session = [&](std::size_t i) {
    try {
      TrainConfig c = plan.config;
      c.seed = plan.seeds[i];
      const fs::path dir = multi ? out / ("seed_" + std::to_string(c.seed)) : out;
      results[i] = run_session(plan, c, dir, err, err_mutex);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (multi) {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < plan.seeds.size(); ++i) threads.emplace_back(session, i);
    for (auto& th : threads) th.join();
  } else {
    session(0);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (!multi) return kExitOk;

  nlohmann::json per_seed = nlohmann::json::array();
  std::vector<double> ce, sar, base, novel, h;
  for (const auto& r : results) {
    nlohmann::json row = {{"seed", r.seed}, {"final_ce", r.final_ce}, {"final_sar", r.final_sar}};
    ce.push_back(r.final_ce);
    sar.push_back(r.final_sar);
    if (r.eval) {
      row["base_acc"] = r.eval->base_acc;
      row["new_acc"] = r.eval->new_acc;
      row["harmonic_mean"] = r.eval->harmonic_mean;
      base.push_back(r.eval->base_acc);
      novel.push_back(r.eval->new_acc);
      h.push_back(r.eval->harmonic_mean);
    }
    per_seed.push_back(row);
  }
  nlohmann::json summary = {{"seeds", plan.seeds},
                            {"runs", per_seed},
                            {"final_ce", mean_std(ce)},
                            {"final_sar", mean_std(sar)}};
  if (!base.empty()) {
    summary["base_acc"] = mean_std(base);
    summary["new_acc"] = mean_std(novel);
    summary["harmonic_mean"] = mean_std(h);
  }
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return kExitOk;
}

// ---- gen-task --------------------------------------------------------------

const std::set<std::string> kTaskKeys = {"seed",   "num_classes", "clusters", "noise_sigma", "shots",
                                         "test_per_class", "num_novel", "spread", "nuisance", "dim_word",
                                         "dim_embed", "encoder_gain"};

TaskOptions task_options(const Settings& s) {
  reject_unknown(s, kTaskKeys);
  TaskOptions o;
  for (const auto& [k, v] : s) {
    if (k == "seed") o.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "num_classes") o.num_classes = parse_number<std::size_t>(k, v);
    else if (k == "clusters") o.clusters = parse_number<std::size_t>(k, v);
    else if (k == "noise_sigma") o.noise_sigma = parse_number<double>(k, v);
    else if (k == "shots") o.shots = parse_number<std::size_t>(k, v);
    else if (k == "test_per_class") o.test_per_class = parse_number<std::size_t>(k, v);
    else if (k == "num_novel") o.num_novel = parse_number<std::size_t>(k, v);
    else if (k == "spread") o.spread = parse_number<double>(k, v);
    else if (k == "nuisance") o.nuisance = parse_number<double>(k, v);
    else if (k == "dim_word") o.dim_word = parse_number<std::size_t>(k, v);
    else if (k == "dim_embed") o.dim_embed = parse_number<std::size_t>(k, v);
    else if (k == "encoder_gain") o.encoder_gain = parse_number<double>(k, v);
  }
  o.validate();
  return o;
}

int cmd_gen_task(const TaskOptions& o, const fs::path& out, std::ostream& err) {
  const SyntheticTask task = generate_task(o);
  make_dirs(out);
  write_text(out / "task.json", task_to_json(task).dump() + "\n");
  write_text(out / "test.json", test_split_to_json(task).dump() + "\n");
  write_text(out / "base.txt", lines(task.base_names));
  write_text(out / "new.txt", lines(task.new_names));
  if (!task.novel_names.empty()) write_text(out / "novel.txt", lines(task.novel_names));
  write_text(out / "templates.txt", lines(task.templates));
  err << "task written to " << out.string() << ": " << task.base_names.size() << " base, " << task.new_names.size()
      << " new, " << task.novel_names.size() << " novel classes\n";
  return kExitOk;
}

// ---- eval / analyze / gradcheck --------------------------------------------

int cmd_eval(const fs::path& task_dir, const std::string& prompts_file, bool handcrafted, std::string templates,
             double tau, const fs::path& out, std::ostream& err) {
  if (templates.empty()) templates = (task_dir / "templates.txt").string();
  const SyntheticTask t = load_for_eval(task_dir, templates);
  const World world = world_from_json(read_json(task_dir / "task.json"));
  EvalReport r;
  if (handcrafted) {
    r = evaluate_handcrafted(t, world, tau);
  } else {
    if (prompts_file.empty()) throw ParameterError("prompts: --prompts or --handcrafted is required");
    r = evaluate(prompts_from_json(read_json(prompts_file)), t, world, tau);
  }
  make_dirs(out);
  write_eval(r, t, out);
  err << "base " << r.base_acc << "%, new " << r.new_acc << "%, H " << r.harmonic_mean << "\n";
  return kExitOk;
}

int cmd_analyze(const std::string& learned_file, const std::string& hand_file, double tau, const fs::path& out,
                std::ostream& err) {
  const EmbeddingSet learned = load_embedding_set(learned_file);
  const EmbeddingSet hand = load_embedding_set(hand_file);
  const DisruptionReport r = disruption_report(learned, hand, tau);
  make_dirs(out);
  std::ostringstream pl, ph;
  write_distribution_csv(pl, r.names, r.learned);
  write_distribution_csv(ph, r.names, r.hand);
  write_text(out / "p_learned.csv", pl.str());
  write_text(out / "p_hand.csv", ph.str());
  write_text(out / "disruption.json", r.to_json().dump(2) + "\n");
  err << r.names.size() << " classes, mean KL " << r.mean_kl << ", rank disagreements " << r.rank_disagreements
      << "\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& out_dir, std::ostream& out) {
  const auto cases = default_gradcheck_cases(seed);
  const auto results = run_gradcheck(cases);
  bool ok = true;
  nlohmann::json doc = nlohmann::json::array();
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %14s %7s  %s\n", "op", "max rel err", "trials", "result");
  out << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-16s %14.3e %7d  %s\n", r.name.c_str(), r.max_relative_error, r.trials,
                  r.passed ? "PASS" : "FAIL");
    out << line;
    ok = ok && r.passed;
    doc.push_back({{"op", r.name}, {"max_relative_error", r.max_relative_error}, {"trials", r.trials},
                   {"passed", r.passed}});
  }
  if (!out_dir.empty()) {
    make_dirs(out_dir);
    write_text(fs::path(out_dir) / "gradcheck.json", doc.dump(2) + "\n");
  }
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    ++n;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw FormatError("line " + std::to_string(n) + ": expected key=value");
    const std::string key(trim(t.substr(0, eq)));
    if (key.empty()) throw FormatError("line " + std::to_string(n) + ": empty key");
    if (!out.emplace(key, std::string(trim(t.substr(eq + 1)))).second) {
      throw FormatError("line " + std::to_string(n) + ": key '" + key + "' repeated");
    }
  }
  return out;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Similarity alignment regularization for prompt tuning", "sar"};
  app.require_subcommand(1);

  std::string out_dir, config_path;

  auto* train = app.add_subcommand("train", "Tune prompt vectors on a task directory");
  Overrides train_flags;
  train->add_option("--config", config_path, "key=value config file; flags override it");
  train->add_option("--out", out_dir, "Output directory")->required();
  train_flags.add(train, "--task", "task", "Task directory written by gen-task");
  train_flags.add(train, "--seed", "seed", "Run seed");
  train_flags.add(train, "--seeds", "seeds", "Comma-separated seeds run as parallel sessions");
  train_flags.add(train, "--lambda", "lambda", "Weight of the alignment loss");
  train_flags.add(train, "--k", "k", "Sampled classes per row (K)");
  train_flags.add(train, "--tau", "tau", "Softmax temperature");
  train_flags.add(train, "--epochs", "epochs", "Training epochs");
  train_flags.add(train, "--novel-file", "novel_file", "Novel class list (default: <task>/novel.txt)");
  train_flags.add(train, "--num-novel", "num_novel", "Novel classes to sample from the list");
  train_flags.add(train, "--templates", "templates", "Ensemble template file (default: <task>/templates.txt)");
  bool evaluate_flag = false;
  train->add_flag("--evaluate", evaluate_flag, "Evaluate on base and new test images after training");

  auto* eval = app.add_subcommand("eval", "Evaluate prompts on a task's base and new test sets");
  std::string eval_task, eval_prompts, eval_templates;
  double eval_tau = kDefaultTemperature;
  bool eval_hand = false;
  eval->add_option("--task", eval_task, "Task directory")->required();
  eval->add_option("--prompts", eval_prompts, "prompts.json from a training run");
  eval->add_flag("--handcrafted", eval_hand, "Evaluate the ensembled hand-crafted prompts instead");
  eval->add_option("--templates", eval_templates, "Ensemble template file (default: <task>/templates.txt)");
  eval->add_option("--tau", eval_tau, "Softmax temperature");
  eval->add_option("--out", out_dir, "Output directory")->required();

  auto* analyze = app.add_subcommand("analyze", "Compare learned and hand-crafted similarity distributions");
  std::string learned_file, hand_file;
  double analyze_tau = kDefaultTemperature;
  analyze->add_option("--learned", learned_file, "Learned embedding file")->required();
  analyze->add_option("--hand", hand_file, "Hand-crafted embedding file")->required();
  analyze->add_option("--tau", analyze_tau, "Softmax temperature");
  analyze->add_option("--out", out_dir, "Output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  std::uint64_t gc_seed = 1;
  gradcheck->add_option("--seed", gc_seed, "Seed of the evaluation points");
  gradcheck->add_option("--out", out_dir, "Optional directory for gradcheck.json");

  auto* gen = app.add_subcommand("gen-task", "Generate a synthetic base-to-new task");
  Overrides gen_flags;
  gen->add_option("--config", config_path, "key=value config file; flags override it");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen_flags.add(gen, "--seed", "seed", "Task seed");
  gen_flags.add(gen, "--num-classes", "num_classes", "Base plus new classes");
  gen_flags.add(gen, "--clusters", "clusters", "Semantic clusters");
  gen_flags.add(gen, "--noise-sigma", "noise_sigma", "Image noise");
  gen_flags.add(gen, "--shots", "shots", "Training images per base class");
  gen_flags.add(gen, "--num-novel", "num_novel", "Novel class names to generate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (!app.get_subcommands().empty()) err << "run with --help for usage\n";
    return kExitValidation;
  }

  try {
    if (train->parsed()) {
      Settings s = load_settings(config_path);
      train_flags.apply(s);
      if (evaluate_flag) s["evaluate"] = "true";
      return cmd_train(train_plan(s), out_dir, err);
    }
    if (gen->parsed()) {
      Settings s = load_settings(config_path);
      gen_flags.apply(s);
      return cmd_gen_task(task_options(s), out_dir, err);
    }
    if (eval->parsed()) return cmd_eval(eval_task, eval_prompts, eval_hand, eval_templates, eval_tau, out_dir, err);
    if (analyze->parsed()) return cmd_analyze(learned_file, hand_file, analyze_tau, out_dir, err);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, out_dir, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace sar
