#include "urbanclip/downstream/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "urbanclip/errors.hpp"

namespace urbanclip::downstream {

namespace {

Predictions finish(const IndicatorHead& head, std::vector<std::string> ids,
                   const nn::Tensor<float>& emb) {
  Predictions p;
  p.ids = std::move(ids);
  p.outputs = head.outputs;
  p.log = head.predict(emb);
  p.raw = p.log;
  for (std::size_t i = 0; i < p.raw.numel(); ++i) p.raw[i] = std::max(0.0, std::expm1(p.log[i]));
  return p;
}

}  // namespace

Predictions predict(const FrozenEncoder& encoder, const IndicatorHead& head,
                    const corpus::Corpus& corpus, const std::vector<std::string>& ids) {
  const auto table = extract_embeddings(encoder, select_records(corpus, ids));
  return finish(head, table.ids, table.vectors);
}

Predictions predict(const IndicatorHead& head, const EmbeddingTable& table,
                    const std::vector<std::string>& ids) {
  nn::Tensor<float> emb(nn::Shape{ids.size(), table.dim()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t r = table.row(ids[i]);
    std::copy(table.vectors.row(r), table.vectors.row(r) + table.dim(), emb.row(i));
  }
  return finish(head, ids, emb);
}

std::vector<MetricsRow> score(const Predictions& predictions, const corpus::Corpus& target,
                              const EvalLabels& labels) {
  std::vector<MetricsRow> rows;
  for (std::size_t k = 0; k < predictions.outputs.size(); ++k) {
    const std::size_t col = corpus::indicator_index(predictions.outputs[k]);
    std::vector<double> y, y_hat;
    for (std::size_t i = 0; i < predictions.ids.size(); ++i) {
      y.push_back(target.find(predictions.ids[i]).indicators_log.v[col]);
      y_hat.push_back(predictions.log.at(i, k));
    }
    MetricsRow r;
    r.model = labels.model;
    r.ablation = labels.ablation;
    r.source_city = labels.source_city.empty() ? target.city : labels.source_city;
    r.target_city = target.city;
    r.indicator = predictions.outputs[k];
    r.r2 = downstream::r2(y, y_hat);
    r.rmse = downstream::rmse(y, y_hat);
    r.mae = downstream::mae(y, y_hat);
    r.seed = labels.seed;
    r.n_samples = y.size();
    rows.push_back(r);
  }
  return rows;
}

std::vector<MetricsRow> transfer_eval(const FrozenEncoder& encoder, const IndicatorHead& head,
                                      const corpus::Corpus& target,
                                      const std::vector<std::string>& ids,
                                      const EvalLabels& labels) {
  const model::ModelConfig& c = encoder.config();
  if (!target.records.empty()) {
    const auto& img = target.records.front().image;
    if (int(img.height) != c.image_h || int(img.width) != c.image_w) {
      throw ConfigError("target corpus images are " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + ", encoder expects " +
                        std::to_string(c.image_h) + "x" + std::to_string(c.image_w));
    }
  }
  const auto use = ids.empty() ? target.ids() : ids;
  return score(predict(encoder, head, target, use), target, labels);
}

std::vector<SimilarHit> find_similar(std::span<const float> query, const EmbeddingTable& table,
                                     std::size_t k) {
  if (query.size() != table.dim()) {
    throw ShapeError("query has " + std::to_string(query.size()) + " dims, table has " +
                     std::to_string(table.dim()));
  }
  auto norm = [](const float* v, std::size_t n) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += double(v[i]) * v[i];
    return std::sqrt(s);
  };
  const double qn = norm(query.data(), query.size());
  std::vector<SimilarHit> hits;
  hits.reserve(table.ids.size());
  for (std::size_t r = 0; r < table.ids.size(); ++r) {
    const float* row = table.vectors.row(r);
    double dot = 0;
    for (std::size_t c = 0; c < query.size(); ++c) dot += double(query[c]) * row[c];
    const double denom = qn * norm(row, query.size());
    const double cosine = denom > 0 ? std::clamp(dot / denom, -1.0, 1.0) : 0.0;
    hits.push_back({table.ids[r], cosine});
  }
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + std::ptrdiff_t(keep), hits.end(),
                    [](const SimilarHit& a, const SimilarHit& b) {
                      return a.cosine != b.cosine ? a.cosine > b.cosine : a.region_id < b.region_id;
                    });
  hits.resize(keep);
  return hits;
}

std::string greedy_caption(const model::UrbanClip<float>& net, const textpipe::Vocab& vocab,
                           const corpus::ImageTensor& image, int max_len) {
  const auto& c = net.config();
  if (c.vocab_size != vocab.size()) {
    throw ConfigError("vocab has " + std::to_string(vocab.size()) + " tokens, model expects " +
                      std::to_string(c.vocab_size));
  }
  nn::NoGradGuard no_grad;
  const auto img = net.encode_image(model::stack_patches<float>({&image}, c.patch), 1);
  // Room for [BOS] plus the words; the [EOS] [CLS] tail is never fed back.
  const int limit = std::min(max_len, c.max_text_len - 1);
  std::vector<int> ids{textpipe::kBos};
  for (int step = 0; step < limit; ++step) {
    model::PackedText p;
    p.ids = ids;
    p.lengths = {ids.size()};
    p.offsets = {0};
    p.lm_targets.assign(ids.size(), -1);
    const auto logits = net.decode(net.encode_text(p), img, p).logits.value();
    const float* last = logits.row(ids.size() - 1);
    int best = textpipe::kEos;
    for (int v = textpipe::kNumSpecials; v < c.vocab_size; ++v)
      if (last[v] > last[best]) best = v;
    if (best == textpipe::kEos) break;
    ids.push_back(best);
  }
  return textpipe::detokenize(std::vector<int>(ids.begin() + 1, ids.end()), vocab);
}

}  // namespace urbanclip::downstream
