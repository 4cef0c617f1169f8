#include "urbanclip/downstream/head.hpp"

#include <cmath>
#include <random>

#include <spdlog/spdlog.h>

#include "urbanclip/errors.hpp"
#include "urbanclip/nn/ops.hpp"
#include "urbanclip/util/binary_io.hpp"

namespace urbanclip::downstream {

using nlohmann::json;
using nn::Shape;
using nn::Tensor;
using nn::Var;

void HeadConfig::validate() const {
  if (hidden < 1) throw ConfigError("head hidden width must be >= 1");
  if (!(lr > 0)) throw ConfigError("head lr must be > 0");
  if (steps < 0) throw ConfigError("head steps must be >= 0");
}

json to_json(const HeadConfig& c) {
  return {{"hidden", c.hidden}, {"lr", c.lr}, {"steps", c.steps}, {"seed", c.seed}};
}

HeadConfig head_config_from_json(const json& j) {
  HeadConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.lr = j.value("lr", c.lr);
  c.steps = j.value("steps", c.steps);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

namespace {

void standardize_stats(const std::vector<std::vector<double>>& cols, std::vector<double>& mean,
                       std::vector<double>& scale) {
  mean.clear();
  scale.clear();
  for (const auto& c : cols) {
    double m = 0;
    for (double v : c) m += v;
    m /= double(c.size());
    double var = 0;
    for (double v : c) var += (v - m) * (v - m);
    const double sd = std::sqrt(var / double(c.size()));
    mean.push_back(m);
    scale.push_back(sd > 1e-12 ? sd : 1.0);
  }
}

Tensor<double> standardized_inputs(const IndicatorHead& head, const Tensor<float>& x,
                                   const std::vector<std::size_t>& rows) {
  const std::size_t d = head.input_dim();
  if (x.cols() != d) {
    throw ShapeError("head expects " + std::to_string(d) + "-dim embeddings, got " +
                     std::to_string(x.cols()));
  }
  Tensor<double> out(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < d; ++c)
      out.at(i, c) = (double(x.at(rows[i], c)) - head.x_mean[c]) / head.x_scale[c];
  return out;
}

Var<double> forward(const IndicatorHead& head, const Var<double>& xs) {
  const auto& P = head.params;
  Var<double> pre = nn::linear(xs, P.at("W1"), P.at("b1"));
  if (head.has_prompt()) {
    const Var<double> prompt(Tensor<double>(Shape{1, head.prompt.size()}, head.prompt));
    const Var<double> aligned = nn::linear(prompt, P.at("align.W"), P.at("align.b"));
    const Var<double> contribution = nn::matmul(aligned, P.at("W1p"));
    pre = nn::add(pre, nn::gather_rows(contribution,
                                       std::vector<std::size_t>(xs.value().rows(), 0)));
  }
  return nn::linear(nn::relu(pre), P.at("W2"), P.at("b2"));
}

double mse_value(const IndicatorHead& head, const Tensor<double>& xs, const Tensor<double>& ys) {
  nn::NoGradGuard no_grad;
  return nn::mse(forward(head, Var<double>(xs)), ys).value()[0];
}

IndicatorHead train(IndicatorHead head, const Tensor<float>& x, const Tensor<double>& y,
                    const std::vector<std::size_t>& train_rows,
                    const std::vector<std::size_t>& val_rows, const std::vector<std::size_t>& cols) {
  auto y_std = [&](const std::vector<std::size_t>& rows) {
    Tensor<double> out(Shape{rows.size(), cols.size()});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < cols.size(); ++k)
        out.at(i, k) = (y.at(rows[i], cols[k]) - head.y_mean[k]) / head.y_scale[k];
    return out;
  };
  const Tensor<double> xt = standardized_inputs(head, x, train_rows), yt = y_std(train_rows);
  const bool use_val = !val_rows.empty();
  const Tensor<double> xv = use_val ? standardized_inputs(head, x, val_rows) : xt;
  const Tensor<double> yv = use_val ? y_std(val_rows) : yt;

  nn::AdamState<double> adam;
  adam.config.lr = head.config.lr;
  nn::ParameterSet<double> best = head.params.clone();
  head.best_step = 0;
  head.best_val_mse = mse_value(head, xv, yv);
  const Var<double> inputs(xt);
  for (int step = 1; step <= head.config.steps; ++step) {
    head.params.zero_grad();
    nn::backward(nn::mse(forward(head, inputs), yt));
    nn::adam_step(head.params, adam);
    const double v = mse_value(head, xv, yv);
    if (v < head.best_val_mse) {
      head.best_val_mse = v;
      head.best_step = step;
      best = head.params.clone();
    }
  }
  head.params = std::move(best);
  return head;
}

IndicatorHead init_head(const Tensor<float>& x, const Tensor<double>& y,
                        const std::vector<std::size_t>& train_rows, const HeadConfig& config,
                        const std::vector<std::size_t>& cols) {
  config.validate();
  if (train_rows.empty()) throw DomainError("fit_head: empty training split");
  if (x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows()) {
    throw ShapeError("fit_head: embeddings " + nn::shape_str(x.shape()) + " vs targets " +
                     nn::shape_str(y.shape()));
  }
  IndicatorHead head;
  head.config = config;
  for (std::size_t c : cols) head.outputs.emplace_back(corpus::kIndicatorNames.at(c));
  std::vector<std::vector<double>> xc(x.cols()), yc(cols.size());
  for (std::size_t r : train_rows) {
    for (std::size_t c = 0; c < x.cols(); ++c) xc[c].push_back(x.at(r, c));
    for (std::size_t k = 0; k < cols.size(); ++k) yc[k].push_back(y.at(r, cols[k]));
  }
  standardize_stats(xc, head.x_mean, head.x_scale);
  standardize_stats(yc, head.y_mean, head.y_scale);

  std::mt19937_64 rng(config.seed);
  const std::size_t d = x.cols(), h = std::size_t(config.hidden), k = cols.size();
  head.params.add("W1", nn::init::trunc_normal<double>(Shape{d, h}, std::sqrt(2.0 / double(d)), rng));
  head.params.add("b1", Tensor<double>(Shape{h}));
  head.params.add("W2", nn::init::trunc_normal<double>(Shape{h, k}, std::sqrt(1.0 / double(h)), rng));
  head.params.add("b2", Tensor<double>(Shape{k}));
  head.params.set_requires_grad(true);
  return head;
}

}  // namespace

Tensor<double> IndicatorHead::predict(const Tensor<float>& embeddings) const {
  std::vector<std::size_t> rows(embeddings.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  nn::NoGradGuard no_grad;
  Tensor<double> out = forward(*this, Var<double>(standardized_inputs(*this, embeddings, rows))).value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(i, c) = out.at(i, c) * y_scale[c] + y_mean[c];
  return out;
}

Tensor<double> IndicatorHead::aligned_prompt() const {
  if (!has_prompt()) throw DomainError("head has no prompt");
  nn::NoGradGuard no_grad;
  const Var<double> p(Tensor<double>(Shape{1, prompt.size()}, prompt));
  return nn::linear(p, params.at("align.W"), params.at("align.b")).value();
}

json IndicatorHead::to_json() const {
  json tensors = json::object();
  for (const auto& [name, v] : params.entries()) {
    tensors[name] = {{"shape", v.shape()}, {"data", v.value().vec()}};
  }
  return {{"config", downstream::to_json(config)},
          {"outputs", outputs},
          {"x_mean", x_mean},
          {"x_scale", x_scale},
          {"y_mean", y_mean},
          {"y_scale", y_scale},
          {"prompt", prompt},
          {"best_step", best_step},
          {"best_val_mse", best_val_mse},
          {"params", tensors}};
}

IndicatorHead IndicatorHead::from_json(const json& j) {
  IndicatorHead h;
  try {
    h.config = head_config_from_json(j.at("config"));
    h.outputs = j.at("outputs").get<std::vector<std::string>>();
    h.x_mean = j.at("x_mean").get<std::vector<double>>();
    h.x_scale = j.at("x_scale").get<std::vector<double>>();
    h.y_mean = j.at("y_mean").get<std::vector<double>>();
    h.y_scale = j.at("y_scale").get<std::vector<double>>();
    h.prompt = j.value("prompt", std::vector<double>{});
    h.best_step = j.value("best_step", 0);
    h.best_val_mse = j.value("best_val_mse", 0.0);
    for (const char* name : {"W1", "b1", "W2", "b2", "W1p", "align.W", "align.b"}) {
      if (!j.at("params").contains(name)) continue;
      const auto& t = j.at("params").at(name);
      h.params.add(name, Tensor<double>(t.at("shape").get<Shape>(),
                                        t.at("data").get<std::vector<double>>()));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed head file: ") + e.what());
  }
  for (const char* name : {"W1", "b1", "W2", "b2"}) {
    if (!h.params.contains(name)) throw IoError(std::string("head file lacks tensor ") + name);
  }
  if (h.x_mean.size() != h.params.at("W1").value().rows() || h.y_mean.size() != h.outputs.size()) {
    throw IoError("head file: standardization stats do not match weights");
  }
  return h;
}

void IndicatorHead::save(const std::filesystem::path& path) const {
  util::write_file_atomic(path, to_json().dump() + "\n");
}

IndicatorHead IndicatorHead::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(util::read_file(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

Tensor<double> log_targets(const std::vector<const corpus::RegionRecord*>& records) {
  Tensor<double> y(Shape{records.size(), corpus::kNumIndicators});
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t k = 0; k < corpus::kNumIndicators; ++k) y.at(i, k) = records[i]->indicators_log.v[k];
  return y;
}

IndicatorHead fit_head(const Tensor<float>& x, const Tensor<double>& y,
                       const std::vector<std::size_t>& train_rows,
                       const std::vector<std::size_t>& val_rows, const HeadConfig& config,
                       std::vector<std::size_t> output_columns) {
  if (output_columns.empty()) throw ConfigError("fit_head: no output columns");
  auto head = init_head(x, y, train_rows, config, output_columns);
  return train(std::move(head), x, y, train_rows, val_rows, output_columns);
}

std::vector<double> encode_prompt(const model::UrbanClip<float>& net, const textpipe::Vocab& vocab,
                                  const std::string& prompt) {
  const auto seq = textpipe::tokenize(prompt, vocab, net.config().max_text_len);
  bool all_unknown = seq.length > 3;
  for (int i = 1; i + 2 < seq.length; ++i) all_unknown &= seq.ids[std::size_t(i)] == textpipe::kUnk;
  if (all_unknown) spdlog::warn("prompt '{}' has no in-vocabulary words", prompt);
  nn::NoGradGuard no_grad;
  const auto enc = net.encode_text(model::PackedText::pack({seq}));
  return {enc.cls.value().vec().begin(), enc.cls.value().vec().end()};
}

IndicatorHead prompt_fit_head(const Tensor<float>& x, const Tensor<double>& y,
                              const std::vector<std::size_t>& train_rows,
                              const std::vector<std::size_t>& val_rows,
                              const std::vector<double>& prompt_embedding, std::size_t indicator,
                              const HeadConfig& config) {
  if (prompt_embedding.empty()) throw ConfigError("prompt_fit_head: empty prompt embedding");
  const std::vector<std::size_t> cols{indicator};
  auto head = init_head(x, y, train_rows, config, cols);
  head.prompt = prompt_embedding;
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t d = x.cols(), h = std::size_t(config.hidden), p = prompt_embedding.size();
  head.params.add("W1p", nn::init::trunc_normal<double>(Shape{d, h}, std::sqrt(2.0 / double(2 * d)), rng));
  head.params.add("align.W", Tensor<double>(Shape{p, d}));
  head.params.add("align.b", Tensor<double>(Shape{d}));
  head.params.set_requires_grad(true);
  return train(std::move(head), x, y, train_rows, val_rows, cols);
}

}  // namespace urbanclip::downstream
