#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "urbanclip/corpus/region.hpp"
#include "urbanclip/downstream/encoder.hpp"
#include "urbanclip/nn/parameters.hpp"
#include "urbanclip/textpipe/vocab.hpp"

namespace urbanclip::downstream {

struct HeadConfig {
  int hidden = 256;
  double lr = 1e-3;
  int steps = 800;  // full-batch Adam steps
  std::uint64_t seed = 0;
  void validate() const;
};

nlohmann::json to_json(const HeadConfig& c);
HeadConfig head_config_from_json(const nlohmann::json& j);

// One-hidden-layer ReLU MLP on standardized embeddings predicting
// standardized log indicators. The prompt variant adds an aligned prompt
// vector to the input (split first-layer weights, same as concatenation).
struct IndicatorHead {
  HeadConfig config;
  std::vector<std::string> outputs;  // indicator names, in column order
  std::vector<double> x_mean, x_scale, y_mean, y_scale;
  nn::ParameterSet<double> params;  // W1 b1 W2 b2 [+ W1p align.W align.b]
  std::vector<double> prompt;       // frozen e^T of the prompt; empty if none
  int best_step = 0;
  double best_val_mse = 0;

  std::size_t input_dim() const { return x_mean.size(); }
  bool has_prompt() const { return !prompt.empty(); }
  // Log-scale predictions [n, outputs.size()].
  nn::Tensor<double> predict(const nn::Tensor<float>& embeddings) const;
  // The aligned prompt row [1, d_in] (zeros at initialization).
  nn::Tensor<double> aligned_prompt() const;

  nlohmann::json to_json() const;
  static IndicatorHead from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static IndicatorHead load(const std::filesystem::path& path);
};

// Log-indicator matrix [records, 3] in kIndicatorNames order.
nn::Tensor<double> log_targets(const std::vector<const corpus::RegionRecord*>& records);

// Adam on MSE; keeps the parameters with the lowest validation MSE (training
// MSE when `val_rows` is empty). `output_columns` selects target columns.
IndicatorHead fit_head(const nn::Tensor<float>& x, const nn::Tensor<double>& y,
                       const std::vector<std::size_t>& train_rows,
                       const std::vector<std::size_t>& val_rows, const HeadConfig& config,
                       std::vector<std::size_t> output_columns = {0, 1, 2});

// Encodes `prompt` with the frozen unimodal text encoder once.
std::vector<double> encode_prompt(const model::UrbanClip<float>& net, const textpipe::Vocab& vocab,
                                  const std::string& prompt);

// Single-indicator head whose input also sees align(e^T_prompt); the aligner
// starts at zero so the prompt path is inert at initialization.
IndicatorHead prompt_fit_head(const nn::Tensor<float>& x, const nn::Tensor<double>& y,
                              const std::vector<std::size_t>& train_rows,
                              const std::vector<std::size_t>& val_rows,
                              const std::vector<double>& prompt_embedding,
                              std::size_t indicator, const HeadConfig& config);

}  // namespace urbanclip::downstream
