#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "urbanclip/corpus/corpus.hpp"
#include "urbanclip/model/checkpoint.hpp"
#include "urbanclip/model/urbanclip.hpp"

namespace urbanclip::downstream {

inline constexpr const char* kPcaKind = "pca";

// The frozen image side of a checkpoint: the UrbanCLIP image tower (any
// "urbanclip" checkpoint, including the encoder-only ablations) or a PCA basis.
class FrozenEncoder {
 public:
  explicit FrozenEncoder(const model::Checkpoint& ckpt);
  static FrozenEncoder load(const std::filesystem::path& path);

  const std::string& kind() const { return kind_; }
  const model::ModelConfig& config() const { return config_; }
  std::size_t dim() const;
  // Null for PCA checkpoints.
  const model::UrbanClip<float>* model() const { return net_.get(); }

  // [n, dim]. Rows do not depend on how images are batched.
  nn::Tensor<float> embed(const std::vector<const corpus::ImageTensor*>& images) const;

 private:
  std::string kind_;
  model::ModelConfig config_;
  std::shared_ptr<const model::UrbanClip<float>> net_;
  Eigen::VectorXd pca_mean_;
  Eigen::MatrixXd pca_components_;
};

// Packs a PCA basis as a checkpoint (tensors "pca.mean", "pca.components").
model::Checkpoint pca_checkpoint(const model::ModelConfig& image_config,
                                 const Eigen::VectorXd& mean, const Eigen::MatrixXd& components);

struct EmbeddingTable {
  std::vector<std::string> ids;
  nn::Tensor<float> vectors;  // [ids.size(), dim]

  std::size_t dim() const { return vectors.cols(); }
  // Throws NotFoundError.
  std::size_t row(const std::string& id) const;
};

EmbeddingTable extract_embeddings(const FrozenEncoder& encoder,
                                  const std::vector<const corpus::RegionRecord*>& records,
                                  std::size_t batch_size = 64);
EmbeddingTable extract_embeddings(const FrozenEncoder& encoder, const corpus::Corpus& corpus,
                                  std::size_t batch_size = 64);

// emb.f32 (image blob header, H = rows, W = dim, C = 1) plus emb_ids.json.
void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& dir);
EmbeddingTable read_embeddings(const std::filesystem::path& dir);

// Records for `ids` in the given order; NotFoundError on an unknown id.
std::vector<const corpus::RegionRecord*> select_records(const corpus::Corpus& corpus,
                                                        const std::vector<std::string>& ids);

}  // namespace urbanclip::downstream
