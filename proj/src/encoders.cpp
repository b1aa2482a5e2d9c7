#include "sar/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "sar/errors.hpp"
#include "sar/ops.hpp"
#include "sar/random.hpp"

namespace sar {
namespace {

constexpr std::string_view kPunctuation = ".,;:!?";

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (kPunctuation.find(ch) != std::string_view::npos) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string fill_template(std::string_view templ, std::string_view class_name) {
  const auto pos = templ.find(kClassSlot);
  if (pos == std::string_view::npos) {
    throw FormatError("template has no " + std::string(kClassSlot) + " slot: \"" + std::string(templ) + "\"");
  }
  if (templ.find(kClassSlot, pos + 1) != std::string_view::npos) {
    throw FormatError("template has more than one " + std::string(kClassSlot) + " slot: \"" + std::string(templ) + "\"");
  }
  std::string out(templ.substr(0, pos));
  out += class_name;
  out += templ.substr(pos + kClassSlot.size());
  return out;
}

WordEmbeddingTable::WordEmbeddingTable(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
  if (dim == 0) throw ParameterError("word embedding dimension must be positive");
}

void WordEmbeddingTable::define(std::string_view token, std::span<const double> vector) {
  if (vector.size() != dim_) {
    throw DimensionError("planted vector for '" + std::string(token) + "' has " + std::to_string(vector.size()) +
                         " values, table dimension is " + std::to_string(dim_));
  }
  const double n = l2(vector);
  if (!(n > 0.0)) throw NumericError("planted vector for '" + std::string(token) + "' has zero norm");
  std::vector<double> v(vector.begin(), vector.end());
  for (double& x : v) x /= n;
  planted_.insert_or_assign(lowercase(token), std::move(v));
}

std::vector<double> WordEmbeddingTable::lookup(std::string_view token) const {
  if (auto it = planted_.find(token); it != planted_.end()) return it->second;
  Rng rng(splitmix64(fnv1a(token) ^ splitmix64(seed_)));
  std::vector<double> v = gaussian(rng, dim_);
  const double n = l2(v);
  for (double& x : v) x /= n;
  return v;
}

std::uint64_t WordEmbeddingTable::fingerprint() const {
  std::uint64_t h = splitmix64(seed_ ^ dim_);
  for (const auto& [token, v] : planted_) {
    h = fnv1a(token, h);
    h = fnv1a(std::span<const double>(v), h);
  }
  return h;
}

TextEncoder::TextEncoder(TextEncoderOptions options, WordEmbeddingTable words)
    : options_(options), words_(std::move(words)) {
  if (options_.dim_word == 0 || options_.dim_embed == 0 || options_.max_positions == 0) {
    throw ParameterError("encoder dimensions must be positive");
  }
  if (words_.dim() != options_.dim_word) {
    throw DimensionError("word table dimension " + std::to_string(words_.dim()) + " does not match encoder dim_word " +
                         std::to_string(options_.dim_word));
  }
  Rng rng = make_rng(options_.seed, 0x7e47);
  const double dw = static_cast<double>(options_.dim_word);
  const double de = static_cast<double>(options_.dim_embed);
  w1_ = Tensor::matrix(options_.dim_word, options_.dim_embed,
                       gaussian(rng, options_.dim_word * options_.dim_embed, options_.gain / std::sqrt(dw)));
  w2_ = Tensor::matrix(options_.dim_embed, options_.dim_embed,
                       gaussian(rng, options_.dim_embed * options_.dim_embed, 1.0 / std::sqrt(de)));
  std::uniform_real_distribution<double> u(0.5, 1.5);
  rho_.resize(options_.max_positions);
  for (double& r : rho_) r = u(rng);
}

double TextEncoder::position_weight(std::size_t position) const {
  if (position >= rho_.size()) {
    throw DimensionError("sequence position " + std::to_string(position) + " exceeds the encoder context of " +
                         std::to_string(rho_.size()));
  }
  return rho_[position];
}

Tensor TextEncoder::project(const Tensor& pooled) const {
  return ad::matmul(ad::tanh(ad::matmul(pooled, w1_)), w2_);
}

Tensor TextEncoder::encode_prompted(const Tensor& prompts, std::span<const Tokens> classes) const {
  if (prompts.rank() != 2 || prompts.cols() != options_.dim_word) {
    throw DimensionError("prompt vectors must be [P x " + std::to_string(options_.dim_word) + "], got " +
                         shape_string(prompts.shape()));
  }
  const std::size_t n_prompts = prompts.rows();
  if (n_prompts == 0) throw DimensionError("at least one prompt vector is required");
  if (classes.empty()) throw DimensionError("no classes to encode");

  const std::size_t m = classes.size();
  const std::size_t dw = options_.dim_word;
  // pooled = A * V + C, where A holds the normalized prompt position weights
  // per class and C the weighted class-token part.
  std::vector<double> a(m * n_prompts);
  std::vector<double> c(m * dw, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (classes[i].empty()) throw FormatError("class " + std::to_string(i) + " has no tokens");
    Tokens tokens = classes[i];
    tokens.push_back(".");
    double z = 0.0;
    for (std::size_t l = 0; l < n_prompts + tokens.size(); ++l) z += position_weight(l);
    for (std::size_t p = 0; p < n_prompts; ++p) a[i * n_prompts + p] = rho_[p] / z;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const double w = rho_[n_prompts + t] / z;
      const auto e = words_.lookup(tokens[t]);
      for (std::size_t k = 0; k < dw; ++k) c[i * dw + k] += w * e[k];
    }
  }
  const Tensor pooled = ad::add(ad::matmul(Tensor::matrix(m, n_prompts, std::move(a)), prompts),
                                Tensor::matrix(m, dw, std::move(c)));
  return project(pooled);
}

Tensor TextEncoder::encode_text(const Tensor& prompts, const Tokens& class_tokens) const {
  const Tokens classes[] = {class_tokens};
  const Tensor out = encode_prompted(prompts, classes);
  return ad::reshape(out, {options_.dim_embed});
}

std::vector<double> TextEncoder::encode_tokens(const Tokens& tokens) const {
  if (tokens.empty()) throw FormatError("cannot encode an empty token sequence");
  const std::size_t dw = options_.dim_word;
  std::vector<double> pooled(dw, 0.0);
  double z = 0.0;
  for (std::size_t l = 0; l < tokens.size(); ++l) {
    const double w = position_weight(l);
    z += w;
    const auto e = words_.lookup(tokens[l]);
    for (std::size_t k = 0; k < dw; ++k) pooled[k] += w * e[k];
  }
  for (double& x : pooled) x /= z;
  return project(Tensor::matrix(1, dw, std::move(pooled))).values();
}

std::vector<double> TextEncoder::encode_handcrafted(std::string_view templ, std::string_view class_name) const {
  return encode_tokens(tokenize(fill_template(templ, class_name)));
}

std::uint64_t TextEncoder::fingerprint() const {
  std::uint64_t h = words_.fingerprint();
  h = fnv1a(w1_.data(), h);
  h = fnv1a(w2_.data(), h);
  h = fnv1a(std::span<const double>(rho_), h);
  return h;
}

ImageEncoder::ImageEncoder(std::shared_ptr<const TextEncoder> text, std::string caption)
    : text_(std::move(text)), caption_(std::move(caption)) {
  if (!text_) throw ParameterError("image encoder needs a text tower");
  // Tokenize around the slot so the visual token occupies exactly one position.
  const auto pos = caption_.find(kClassSlot);
  fill_template(caption_, "");  // validates the slot
  const Tokens before = tokenize(caption_.substr(0, pos));
  const Tokens after = tokenize(caption_.substr(pos + kClassSlot.size()));

  const std::size_t dw = text_->dim_word();
  context_.assign(dw, 0.0);
  double z = 0.0;
  std::size_t l = 0;
  auto add = [&](const std::string& token) {
    const double w = text_->position_weight(l++);
    z += w;
    const auto e = text_->words().lookup(token);
    for (std::size_t k = 0; k < dw; ++k) context_[k] += w * e[k];
  };
  for (const auto& t : before) add(t);
  slot_weight_ = text_->position_weight(l++);
  z += slot_weight_;
  for (const auto& t : after) add(t);
  for (double& x : context_) x /= z;
  slot_weight_ /= z;
}

Tensor ImageEncoder::encode(const Tensor& features) const {
  if (features.rank() != 2 || features.cols() != dim_feat()) {
    throw DimensionError("image features must be [n x " + std::to_string(dim_feat()) + "], got " +
                         shape_string(features.shape()));
  }
  const std::size_t n = features.rows(), dw = dim_feat();
  std::vector<double> pooled(n * dw);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dw; ++k) pooled[i * dw + k] = context_[k] + slot_weight_ * features.at(i, k);
  }
  return text_->project(Tensor::matrix(n, dw, std::move(pooled)));
}

std::uint64_t ImageEncoder::fingerprint() const {
  std::uint64_t h = fnv1a(caption_, text_->fingerprint());
  h = fnv1a(std::span<const double>(context_), h);
  return fnv1a(std::span<const double>(&slot_weight_, 1), h);
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::learned:
      return "learned";
    case Provenance::hand_crafted:
      return "hand_crafted";
    case Provenance::external:
      return "external";
  }
  return "external";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "learned") return Provenance::learned;
  if (s == "hand_crafted") return Provenance::hand_crafted;
  if (s == "external") return Provenance::external;
  throw FormatError("unknown provenance \"" + std::string(s) + "\"");
}

void EmbeddingSet::validate() const {
  if (vectors.rank() != 2) throw FormatError("embedding vectors must form a matrix");
  if (vectors.rows() != names.size()) {
    throw FormatError("embedding set has " + std::to_string(names.size()) + " names but " +
                      std::to_string(vectors.rows()) + " rows");
  }
  std::set<std::string_view> seen;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!seen.insert(names[i]).second) {
      throw FormatError("row " + std::to_string(i) + " (\"" + names[i] + "\"): duplicate name");
    }
    const auto row = vectors.row(i);
    if (!std::all_of(row.begin(), row.end(), [](double x) { return std::isfinite(x); })) {
      throw NumericError("row " + std::to_string(i) + " (\"" + names[i] + "\"): non-finite value");
    }
    if (!(l2(row) > 0.0)) throw NumericError("row " + std::to_string(i) + " (\"" + names[i] + "\"): zero-norm vector");
  }
}

EmbeddingSet EmbeddingSet::make(std::vector<std::string> names, Tensor vectors, Provenance provenance) {
  EmbeddingSet set{std::move(names), vectors.detach(), provenance};
  set.validate();
  return set;
}

std::string embedding_set_to_json(const EmbeddingSet& set) {
  set.validate();
  std::string out = "{\"dim\": " + std::to_string(set.dim()) + ", \"provenance\": \"" +
                    std::string(to_string(set.provenance)) + "\", \"items\": [";
  char buf[32];
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i) out += ", ";
    out += "{\"name\": " + nlohmann::json(set.names[i]).dump() + ", \"vector\": [";
    const auto row = set.vectors.row(i);
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k) out += ", ";
      std::snprintf(buf, sizeof buf, "%.17g", row[k]);
      out += buf;
    }
    out += "]}";
  }
  out += "]}\n";
  return out;
}

EmbeddingSet embedding_set_from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("embedding file is not valid JSON: ") + e.what());
  }
  try {
    const auto dim = doc.at("dim").get<std::size_t>();
    const auto provenance = provenance_from_string(doc.at("provenance").get<std::string>());
    const auto& items = doc.at("items");
    if (!items.is_array() || items.empty()) throw FormatError("embedding file has no items");
    std::vector<std::string> names;
    std::vector<double> values;
    for (std::size_t i = 0; i < items.size(); ++i) {
      names.push_back(items[i].at("name").get<std::string>());
      const auto v = items[i].at("vector").get<std::vector<double>>();
      if (v.size() != dim) {
        throw FormatError("row " + std::to_string(i) + " (\"" + names.back() + "\"): vector has " +
                          std::to_string(v.size()) + " values, expected dim " + std::to_string(dim));
      }
      values.insert(values.end(), v.begin(), v.end());
    }
    const auto m = names.size();
    return EmbeddingSet::make(std::move(names), Tensor::matrix(m, dim, std::move(values)), provenance);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed embedding file: ") + e.what());
  }
}

void save_embedding_set(const EmbeddingSet& set, const std::string& path) {
  const std::string text = embedding_set_to_json(set);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

EmbeddingSet load_embedding_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return embedding_set_from_json(buf.str());
}

}  // namespace sar
