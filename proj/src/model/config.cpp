#include "urbanclip/model/config.hpp"

#include <cmath>

#include <fmt/format.h>

#include "urbanclip/errors.hpp"

namespace urbanclip::model {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (patch <= 0 || image_h <= 0 || image_w <= 0) fail("sizes must be positive");
  if (image_h % patch || image_w % patch) {
    fail(fmt::format("image {}x{} not divisible by patch {}", image_h, image_w, patch));
  }
  if (d <= 0 || n_heads <= 0 || d % n_heads) {
    fail(fmt::format("d={} not divisible by n_heads={}", d, n_heads));
  }
  if (img_layers < 1) fail("img_layers must be >= 1");
  if (txt_layers < 2) fail("txt_layers must be >= 2 so both decoder halves exist");
  if (vocab_size <= 6) fail("vocab_size must exceed the special tokens");
  if (max_text_len < 4) fail("max_text_len must be >= 4");
  if (proj_dim <= 0 || n_q_con <= 0 || mlp_ratio <= 0) fail("dimensions must be positive");
  if (!(temperature > 0)) fail("temperature must be > 0");
  if (!(pixel_std > 0) || !std::isfinite(pixel_mean)) fail("pixel_std must be > 0");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_h", c.image_h},
          {"image_w", c.image_w},
          {"patch", c.patch},
          {"channels", c.channels},
          {"d", c.d},
          {"n_heads", c.n_heads},
          {"img_layers", c.img_layers},
          {"txt_layers", c.txt_layers},
          {"mlp_ratio", c.mlp_ratio},
          {"vocab_size", c.vocab_size},
          {"max_text_len", c.max_text_len},
          {"proj_dim", c.proj_dim},
          {"n_q_con", c.n_q_con},
          {"normalize_embeddings", c.normalize_embeddings},
          {"temperature", c.temperature},
          {"learn_temperature", c.learn_temperature},
          {"post_norm", c.post_norm},
          {"pixel_mean", c.pixel_mean},
          {"pixel_std", c.pixel_std}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_h = j.value("image_h", c.image_h);
  c.image_w = j.value("image_w", c.image_w);
  c.patch = j.value("patch", c.patch);
  c.channels = j.value("channels", c.channels);
  c.d = j.value("d", c.d);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.img_layers = j.value("img_layers", c.img_layers);
  c.txt_layers = j.value("txt_layers", c.txt_layers);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_text_len = j.value("max_text_len", c.max_text_len);
  c.proj_dim = j.value("proj_dim", c.proj_dim);
  c.n_q_con = j.value("n_q_con", c.n_q_con);
  c.normalize_embeddings = j.value("normalize_embeddings", c.normalize_embeddings);
  c.temperature = j.value("temperature", c.temperature);
  c.learn_temperature = j.value("learn_temperature", c.learn_temperature);
  c.post_norm = j.value("post_norm", c.post_norm);
  c.pixel_mean = j.value("pixel_mean", c.pixel_mean);
  c.pixel_std = j.value("pixel_std", c.pixel_std);
  return c;
}

CostEstimate estimate_cost(double L, double d, double m1, double m2) {
  CostEstimate c;
  c.vit = L * (m1 * m1 * d + m1 * d * d);
  c.pool = m1 * m1 * d;
  c.embed = m2 * d;
  c.text = L * (m2 * m2 * d + m2 * d * d);
  c.cross = L * m1 * m2 * d;
  c.total = c.vit + c.pool + c.embed + c.text + c.cross;
  return c;
}

}  // namespace urbanclip::model
