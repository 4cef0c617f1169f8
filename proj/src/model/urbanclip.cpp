#include "urbanclip/model/urbanclip.hpp"

#include <cmath>

#include <fmt/format.h>

#include "urbanclip/errors.hpp"
#include "urbanclip/model/patch.hpp"

namespace urbanclip::model {
namespace {

using nn::Shape;
using nn::Var;

void add_attention(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                   std::size_t d) {
  for (const char* w : {"W_Q", "W_K", "W_V", "W_O"}) out.emplace_back(prefix + "." + w, Shape{d, d});
  out.emplace_back(prefix + ".b_O", Shape{d});
}

void add_norm(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
              std::size_t d) {
  out.emplace_back(prefix + ".g", Shape{d});
  out.emplace_back(prefix + ".b", Shape{d});
}

void add_mlp(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
             std::size_t d, std::size_t hidden) {
  out.emplace_back(prefix + ".W1", Shape{d, hidden});
  out.emplace_back(prefix + ".b1", Shape{hidden});
  out.emplace_back(prefix + ".W2", Shape{hidden, d});
  out.emplace_back(prefix + ".b2", Shape{d});
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

// Row indices that repeat 0..n-1 `times` times.
std::vector<std::size_t> tiled(std::size_t n, std::size_t times) {
  std::vector<std::size_t> idx;
  idx.reserve(n * times);
  for (std::size_t t = 0; t < times; ++t)
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  return idx;
}

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& c) {
  c.validate();
  const std::size_t d = std::size_t(c.d), hidden = std::size_t(c.d * c.mlp_ratio);
  const std::size_t m1 = std::size_t(c.m1()), V = std::size_t(c.vocab_size);
  const std::size_t P = std::size_t(c.proj_dim);
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("img.patch.W", Shape{std::size_t(c.patch_dim()), d});
  out.emplace_back("img.patch.b", Shape{d});
  out.emplace_back("img.cls", Shape{1, d});
  out.emplace_back("img.pos", Shape{m1 + 1, d});
  for (int l = 0; l < c.img_layers; ++l) {
    const std::string pre = fmt::format("img.L{}", l);
    add_norm(out, pre + ".ln1", d);
    add_attention(out, pre + ".attn", d);
    add_norm(out, pre + ".ln2", d);
    add_mlp(out, pre + ".mlp", d, hidden);
  }
  add_norm(out, "img.ln_f", d);
  out.emplace_back("pool_con.query", Shape{std::size_t(c.n_q_con), d});
  add_attention(out, "pool_con.attn", d);
  add_norm(out, "pool_con.ln", d);
  out.emplace_back("proj_img.W", Shape{d, P});
  out.emplace_back("pool_cap.query", Shape{m1, d});
  add_attention(out, "pool_cap.attn", d);
  add_norm(out, "pool_cap.ln", d);

  out.emplace_back("txt.tok", Shape{V, d});
  out.emplace_back("txt.pos", Shape{std::size_t(c.max_text_len), d});
  for (int l = 0; l < c.split(); ++l) {
    const std::string pre = fmt::format("txt.L{}", l);
    add_norm(out, pre + ".ln1", d);
    add_attention(out, pre + ".attn", d);
    add_norm(out, pre + ".ln2", d);
    add_mlp(out, pre + ".mlp", d, hidden);
  }
  add_norm(out, "txt.ln_cls", d);
  out.emplace_back("proj_txt.W", Shape{d, P});
  for (int l = c.split(); l < c.txt_layers; ++l) {
    const std::string pre = fmt::format("mm.L{}", l);
    add_norm(out, pre + ".ln1", d);
    add_attention(out, pre + ".attn", d);
    add_norm(out, pre + ".lnx", d);
    add_attention(out, pre + ".xattn", d);
    add_norm(out, pre + ".ln2", d);
    add_mlp(out, pre + ".mlp", d, hidden);
  }
  add_norm(out, "mm.ln_f", d);
  out.emplace_back("lm_head.W", Shape{d, V});
  out.emplace_back("lm_head.b", Shape{V});
  if (c.learn_temperature) out.emplace_back("log_temp", Shape{});
  return out;
}

bool is_image_encoder_parameter(const std::string& name) {
  return starts_with(name, "img.") || starts_with(name, "pool_con.") ||
         starts_with(name, "proj_img.");
}

template <class T>
nn::ParameterSet<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  nn::ParameterSet<T> params;
  for (auto& [name, shape] : parameter_shapes(config)) {
    nn::Tensor<T> init;
    if (name == "log_temp") {
      init = nn::Tensor<T>::scalar(T(std::log(config.temperature)));
    } else if (ends_with(name, ".g")) {
      init = nn::Tensor<T>(shape, T(1));
    } else if (ends_with(name, ".b") || ends_with(name, ".b_O") || ends_with(name, ".b1") ||
               ends_with(name, ".b2")) {
      init = nn::Tensor<T>(shape, T(0));
    } else {
      init = nn::init::trunc_normal<T>(shape, 0.02, rng);
    }
    params.add(name, std::move(init)).set_requires_grad(true);
  }
  return params;
}

PackedText PackedText::pack(const std::vector<textpipe::TokenSequence>& seqs) {
  PackedText p;
  for (const auto& s : seqs) {
    if (s.length < 3 || s.ids[std::size_t(s.length - 1)] != textpipe::kCls) {
      throw ShapeError("token sequence must end with [EOS] [CLS]");
    }
    p.offsets.push_back(p.ids.size());
    p.lengths.push_back(std::size_t(s.length));
    for (int i = 0; i < s.length; ++i) {
      const int next = i + 1 < s.length ? s.ids[std::size_t(i + 1)] : textpipe::kCls;
      p.ids.push_back(s.ids[std::size_t(i)]);
      p.lm_targets.push_back(next == textpipe::kCls ? -1 : next);
    }
  }
  return p;
}

template <class T>
nn::Tensor<T> stack_patches(const std::vector<const corpus::ImageTensor*>& images, int patch) {
  if (images.empty()) throw ShapeError("stack_patches: empty batch");
  std::vector<T> data;
  Shape first;
  for (const auto* img : images) {
    const auto t = patchify<T>(*img, patch);
    if (first.empty()) first = t.shape();
    if (t.shape() != first) throw ShapeError("stack_patches: images in a batch must share a size");
    data.insert(data.end(), t.vec().begin(), t.vec().end());
  }
  return nn::Tensor<T>(Shape{first[0] * images.size(), first[1]}, std::move(data));
}

template <class T>
UrbanClip<T>::UrbanClip(ModelConfig config, std::uint64_t seed)
    : config_(config), params_(init_parameters<T>(config, seed)) {}

template <class T>
UrbanClip<T>::UrbanClip(ModelConfig config, nn::ParameterSet<T> params)
    : config_(config), params_(std::move(params)) {
  const auto expected = parameter_shapes(config_);
  if (expected.size() != params_.size()) {
    throw ShapeError(fmt::format("checkpoint has {} tensors, config expects {}",
                                 params_.size(), expected.size()));
  }
  for (const auto& [name, shape] : expected) {
    if (!params_.contains(name)) throw ShapeError("missing parameter " + name);
    if (params_.at(name).shape() != shape) {
      throw ShapeError(fmt::format("parameter {} has shape {}, config expects {}", name,
                                   nn::shape_str(params_.at(name).shape()), nn::shape_str(shape)));
    }
  }
}

template <class T>
nn::AttentionWeights<T> UrbanClip<T>::attn(const std::string& prefix) const {
  return {p(prefix + ".W_Q"), p(prefix + ".W_K"), p(prefix + ".W_V"), p(prefix + ".W_O"),
          p(prefix + ".b_O")};
}

template <class T>
Var<T> UrbanClip<T>::norm(const Var<T>& x, const std::string& prefix) const {
  return nn::layer_norm(x, p(prefix + ".g"), p(prefix + ".b"));
}

template <class T>
Var<T> UrbanClip<T>::mlp(const Var<T>& x, const std::string& prefix) const {
  const Var<T> h = nn::gelu(nn::linear(x, p(prefix + ".W1"), p(prefix + ".b1")));
  return nn::linear(h, p(prefix + ".W2"), p(prefix + ".b2"));
}

template <class T>
Var<T> UrbanClip<T>::project(const Var<T>& x, const std::string& weight) const {
  const Var<T> y = nn::linear(x, p(weight), Var<T>());
  return config_.normalize_embeddings ? nn::l2_normalize_rows(y) : y;
}

template <class T>
Var<T> UrbanClip<T>::block(const Var<T>& x, const std::string& prefix,
                           const nn::AttentionLayout& layout) const {
  const std::size_t heads = std::size_t(config_.n_heads);
  if (config_.post_norm) {
    const Var<T> a = norm(nn::add(x, nn::multi_head_attention(x, x, attn(prefix + ".attn"), heads,
                                                              layout)),
                          prefix + ".ln1");
    return norm(nn::add(a, mlp(a, prefix + ".mlp")), prefix + ".ln2");
  }
  const Var<T> h = norm(x, prefix + ".ln1");
  const Var<T> a = nn::add(x, nn::multi_head_attention(h, h, attn(prefix + ".attn"), heads, layout));
  return nn::add(a, mlp(norm(a, prefix + ".ln2"), prefix + ".mlp"));
}

template <class T>
ImageEncoding<T> UrbanClip<T>::encode_image(const nn::Tensor<T>& patches,
                                            std::size_t batch) const {
  ++counters_.image;
  const std::size_t m1 = std::size_t(config_.m1()), seq = m1 + 1;
  if (batch == 0 || patches.rank() != 2 || patches.rows() != batch * m1 ||
      patches.cols() != std::size_t(config_.patch_dim())) {
    throw ShapeError(fmt::format("encode_image: patches {} do not match batch {} x [{}, {}]",
                                 nn::shape_str(patches.shape()), batch, m1, config_.patch_dim()));
  }
  nn::Tensor<T> standardized = patches;
  const T shift = T(config_.pixel_mean), inv = T(1.0 / config_.pixel_std);
  for (auto& x : standardized.span()) x = (x - shift) * inv;
  const Var<T> embedded =
      nn::linear(Var<T>(std::move(standardized)), p("img.patch.W"), p("img.patch.b"));
  // Row 0 is [CLS]; row 1 + i*m1 + k is patch k of image i.
  std::vector<std::size_t> order;
  order.reserve(batch * seq);
  for (std::size_t i = 0; i < batch; ++i) {
    order.push_back(0);
    for (std::size_t k = 0; k < m1; ++k) order.push_back(1 + i * m1 + k);
  }
  Var<T> x = nn::gather_rows(nn::concat_rows<T>({p("img.cls"), embedded}), order);
  x = nn::add(x, nn::gather_rows(p("img.pos"), tiled(seq, batch)));
  const auto layout = nn::AttentionLayout::self_blocks(std::vector<std::size_t>(batch, seq),
                                                       nn::MaskKind::kNone);
  for (int l = 0; l < config_.img_layers; ++l) x = block(x, fmt::format("img.L{}", l), layout);

  ImageEncoding<T> out;
  out.batch = batch;
  out.image_seq = norm(x, "img.ln_f");
  const std::size_t heads = std::size_t(config_.n_heads);
  const std::size_t nq = std::size_t(config_.n_q_con);

  nn::AttentionLayout con;
  nn::AttentionLayout cap;
  for (std::size_t i = 0; i < batch; ++i) {
    con.segments.push_back({i * nq, nq, i * seq, seq, nn::MaskKind::kNone, {}});
    cap.segments.push_back({i * m1, m1, i * seq, seq, nn::MaskKind::kNone, {}});
  }
  const Var<T> con_q = nn::gather_rows(p("pool_con.query"), tiled(nq, batch));
  const Var<T> pooled = nn::group_mean_rows(
      nn::multi_head_attention(con_q, out.image_seq, attn("pool_con.attn"), heads, con), nq);
  out.pooled = project(norm(pooled, "pool_con.ln"), "proj_img.W");

  const Var<T> cap_q = nn::gather_rows(p("pool_cap.query"), tiled(m1, batch));
  out.caption_seq = norm(
      nn::multi_head_attention(cap_q, out.image_seq, attn("pool_cap.attn"), heads, cap),
      "pool_cap.ln");
  return out;
}

template <class T>
TextEncoding<T> UrbanClip<T>::encode_text(const PackedText& text) const {
  ++counters_.text;
  std::vector<std::size_t> ids(text.ids.size()), positions;
  positions.reserve(text.ids.size());
  for (std::size_t i = 0; i < text.ids.size(); ++i) {
    if (text.ids[i] < 0 || text.ids[i] >= config_.vocab_size) {
      throw ShapeError(fmt::format("token id {} outside vocab of {}", text.ids[i], config_.vocab_size));
    }
    ids[i] = std::size_t(text.ids[i]);
  }
  for (std::size_t len : text.lengths) {
    if (len > std::size_t(config_.max_text_len)) {
      throw ShapeError(fmt::format("text of {} tokens exceeds max_text_len {}", len,
                                   config_.max_text_len));
    }
    for (std::size_t k = 0; k < len; ++k) positions.push_back(k);
  }
  Var<T> x = nn::add(nn::gather_rows(p("txt.tok"), ids), nn::gather_rows(p("txt.pos"), positions));
  const auto layout = nn::AttentionLayout::self_blocks(text.lengths, nn::MaskKind::kCausal);
  for (int l = 0; l < config_.split(); ++l) x = block(x, fmt::format("txt.L{}", l), layout);

  std::vector<std::size_t> cls_rows;
  for (std::size_t i = 0; i < text.batch(); ++i) cls_rows.push_back(text.offsets[i] + text.lengths[i] - 1);
  TextEncoding<T> out;
  out.states = x;
  out.cls = project(norm(nn::gather_rows(x, cls_rows), "txt.ln_cls"), "proj_txt.W");
  return out;
}

template <class T>
MultimodalOutput<T> UrbanClip<T>::decode(const TextEncoding<T>& text,
                                         const ImageEncoding<T>& image,
                                         const PackedText& packed) const {
  ++counters_.multimodal;
  if (image.batch != packed.batch()) {
    throw ShapeError(fmt::format("decode: {} images vs {} texts", image.batch, packed.batch()));
  }
  const std::size_t m1 = std::size_t(config_.m1()), heads = std::size_t(config_.n_heads);
  const auto self = nn::AttentionLayout::self_blocks(packed.lengths, nn::MaskKind::kCausal);
  nn::AttentionLayout cross;
  for (std::size_t i = 0; i < packed.batch(); ++i) {
    cross.segments.push_back({packed.offsets[i], packed.lengths[i], i * m1, m1,
                              nn::MaskKind::kNone, {}});
  }
  Var<T> x = text.states;
  for (int l = config_.split(); l < config_.txt_layers; ++l) {
    const std::string pre = fmt::format("mm.L{}", l);
    if (config_.post_norm) {
      x = norm(nn::add(x, nn::multi_head_attention(x, x, attn(pre + ".attn"), heads, self)),
               pre + ".ln1");
      x = norm(nn::add(x, nn::multi_head_attention(x, image.caption_seq, attn(pre + ".xattn"),
                                                   heads, cross)),
               pre + ".lnx");
      x = norm(nn::add(x, mlp(x, pre + ".mlp")), pre + ".ln2");
      continue;
    }
    const Var<T> h = norm(x, pre + ".ln1");
    x = nn::add(x, nn::multi_head_attention(h, h, attn(pre + ".attn"), heads, self));
    x = nn::add(x, nn::multi_head_attention(norm(x, pre + ".lnx"), image.caption_seq,
                                            attn(pre + ".xattn"), heads, cross));
    x = nn::add(x, mlp(norm(x, pre + ".ln2"), pre + ".mlp"));
  }
  MultimodalOutput<T> out;
  out.states = norm(x, "mm.ln_f");
  out.logits = nn::linear(out.states, p("lm_head.W"), p("lm_head.b"));
  return out;
}

template <class T>
Var<T> UrbanClip<T>::log_temperature() const {
  return params_.contains("log_temp") ? p("log_temp") : Var<T>();
}

template nn::ParameterSet<float> init_parameters(const ModelConfig&, std::uint64_t);
template nn::ParameterSet<double> init_parameters(const ModelConfig&, std::uint64_t);
template nn::Tensor<float> stack_patches(const std::vector<const corpus::ImageTensor*>&, int);
template nn::Tensor<double> stack_patches(const std::vector<const corpus::ImageTensor*>&, int);
template class UrbanClip<float>;
template class UrbanClip<double>;

}  // namespace urbanclip::model
