#include "urbanclip/downstream/encoder.hpp"

#include <unordered_map>

#include "json.hpp"
#include "urbanclip/errors.hpp"
#include "urbanclip/nn/autograd.hpp"
#include "urbanclip/util/binary_io.hpp"

namespace urbanclip::downstream {

FrozenEncoder::FrozenEncoder(const model::Checkpoint& ckpt)
    : kind_(ckpt.kind), config_(ckpt.config) {
  if (kind_ == kPcaKind) {
    const auto& mean = ckpt.params.at("pca.mean").value();
    const auto& comp = ckpt.params.at("pca.components").value();
    if (comp.rank() != 2 || comp.cols() != mean.numel()) {
      throw ShapeError("pca checkpoint: components " + nn::shape_str(comp.shape()) +
                       " do not match mean " + nn::shape_str(mean.shape()));
    }
    pca_mean_ = Eigen::Map<const Eigen::VectorXf>(mean.data(), Eigen::Index(mean.numel())).cast<double>();
    pca_components_ = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                          comp.data(), Eigen::Index(comp.rows()), Eigen::Index(comp.cols()))
                          .cast<double>();
    return;
  }
  if (kind_ != "urbanclip") throw ConfigError("unknown checkpoint kind '" + kind_ + "'");
  auto params = ckpt.params.clone();
  params.set_requires_grad(false);
  net_ = std::make_shared<const model::UrbanClip<float>>(config_, std::move(params));
}

FrozenEncoder FrozenEncoder::load(const std::filesystem::path& path) {
  return FrozenEncoder(model::load_checkpoint(path));
}

std::size_t FrozenEncoder::dim() const {
  return net_ ? std::size_t(config_.proj_dim) : std::size_t(pca_components_.rows());
}

nn::Tensor<float> FrozenEncoder::embed(const std::vector<const corpus::ImageTensor*>& images) const {
  if (images.empty()) return nn::Tensor<float>(nn::Shape{0, dim()});
  if (net_) {
    nn::NoGradGuard no_grad;
    const auto patches = model::stack_patches<float>(images, config_.patch);
    return net_->encode_image(patches, images.size()).pooled.value();
  }
  nn::Tensor<float> out(nn::Shape{images.size(), dim()});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& data = images[i]->data;
    if (Eigen::Index(data.size()) != pca_mean_.size()) {
      throw ShapeError("pca encoder expects " + std::to_string(pca_mean_.size()) +
                       " pixel values, image has " + std::to_string(data.size()));
    }
    const Eigen::VectorXd x =
        Eigen::Map<const Eigen::VectorXf>(data.data(), Eigen::Index(data.size())).cast<double>();
    const Eigen::VectorXd code = pca_components_ * (x - pca_mean_);
    for (std::size_t c = 0; c < dim(); ++c) out.at(i, c) = float(code(Eigen::Index(c)));
  }
  return out;
}

model::Checkpoint pca_checkpoint(const model::ModelConfig& image_config,
                                 const Eigen::VectorXd& mean, const Eigen::MatrixXd& components) {
  model::Checkpoint ckpt;
  ckpt.kind = kPcaKind;
  ckpt.config = image_config;
  ckpt.config.proj_dim = int(components.rows());
  std::vector<float> m(mean.data(), mean.data() + mean.size());
  std::vector<float> c(std::size_t(components.size()));
  for (Eigen::Index r = 0; r < components.rows(); ++r)
    for (Eigen::Index k = 0; k < components.cols(); ++k)
      c[std::size_t(r * components.cols() + k)] = float(components(r, k));
  ckpt.params.add("pca.mean", nn::Tensor<float>(nn::Shape{std::size_t(mean.size())}, std::move(m)));
  ckpt.params.add("pca.components",
                  nn::Tensor<float>(nn::Shape{std::size_t(components.rows()),
                                              std::size_t(components.cols())},
                                    std::move(c)));
  return ckpt;
}

std::size_t EmbeddingTable::row(const std::string& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return i;
  throw NotFoundError("no embedding for region " + id);
}

EmbeddingTable extract_embeddings(const FrozenEncoder& encoder,
                                  const std::vector<const corpus::RegionRecord*>& records,
                                  std::size_t batch_size) {
  EmbeddingTable table;
  table.vectors = nn::Tensor<float>(nn::Shape{records.size(), encoder.dim()});
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    const std::size_t end = std::min(records.size(), start + batch_size);
    std::vector<const corpus::ImageTensor*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&records[i]->image);
    const auto emb = encoder.embed(images);
    std::copy(emb.vec().begin(), emb.vec().end(), table.vectors.row(start));
  }
  for (const auto* r : records) table.ids.push_back(r->region_id);
  return table;
}

EmbeddingTable extract_embeddings(const FrozenEncoder& encoder, const corpus::Corpus& corpus,
                                  std::size_t batch_size) {
  std::vector<const corpus::RegionRecord*> records;
  for (const auto& r : corpus.records) records.push_back(&r);
  return extract_embeddings(encoder, records, batch_size);
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  util::Float32Blob blob;
  blob.h = std::uint32_t(table.ids.size());
  blob.w = std::uint32_t(table.dim());
  blob.c = 1;
  blob.data = table.vectors.vec();
  util::write_f32_blob(dir / "emb.f32", blob);
  util::write_file_atomic(dir / "emb_ids.json", nlohmann::json(table.ids).dump(1) + "\n");
}

EmbeddingTable read_embeddings(const std::filesystem::path& dir) {
  const auto blob = util::read_f32_blob(dir / "emb.f32");
  EmbeddingTable table;
  try {
    table.ids = nlohmann::json::parse(util::read_file(dir / "emb_ids.json")).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "emb_ids.json").string() + ": " + e.what());
  }
  if (table.ids.size() != blob.h || blob.c != 1) {
    throw IoError("emb_ids.json lists " + std::to_string(table.ids.size()) +
                  " ids but emb.f32 has " + std::to_string(blob.h) + " rows");
  }
  table.vectors = nn::Tensor<float>(nn::Shape{blob.h, blob.w}, blob.data);
  return table;
}

std::vector<const corpus::RegionRecord*> select_records(const corpus::Corpus& corpus,
                                                        const std::vector<std::string>& ids) {
  std::vector<const corpus::RegionRecord*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(&corpus.find(id));
  return out;
}

}  // namespace urbanclip::downstream
