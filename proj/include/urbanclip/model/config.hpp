#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace urbanclip::model {

struct ModelConfig {
  int image_h = 64;
  int image_w = 64;
  int patch = 8;
  int channels = 3;
  int d = 128;
  int n_heads = 4;
  int img_layers = 4;
  int txt_layers = 4;  // unimodal half = txt_layers / 2
  int mlp_ratio = 4;
  int vocab_size = 0;
  int max_text_len = 64;
  int proj_dim = 128;
  int n_q_con = 1;
  bool normalize_embeddings = true;
  double temperature = 1.0;
  bool learn_temperature = false;
  bool post_norm = false;
  // Fixed pixel standardization applied before the patch embedding.
  double pixel_mean = 0.5;
  double pixel_std = 0.25;

  int grid_h() const { return image_h / patch; }
  int grid_w() const { return image_w / patch; }
  int m1() const { return grid_h() * grid_w(); }
  int patch_dim() const { return patch * patch * channels; }
  int split() const { return txt_layers / 2; }
  int n_q_cap() const { return m1(); }

  // Throws ConfigError naming the violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Op counts of the cost model: ViT, attentional pooling, token embedding,
// text decoder, and cross-attention terms.
struct CostEstimate {
  double vit = 0;
  double pool = 0;
  double embed = 0;
  double text = 0;
  double cross = 0;
  double total = 0;
};

CostEstimate estimate_cost(double L, double d, double m1, double m2);

}  // namespace urbanclip::model
