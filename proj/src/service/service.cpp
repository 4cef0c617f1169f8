#include "urbanclip/service/service.hpp"

#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "httplib.h"
#include "urbanclip/errors.hpp"
#include "urbanclip/util/binary_io.hpp"

namespace urbanclip::service {

using nlohmann::json;

namespace {

Reply json_reply(const json& j, int status = 200) { return {status, j.dump(), "application/json"}; }

Reply error_reply(int status, const std::string& message) {
  return json_reply({{"error", message}}, status);
}

// Non-finite numbers would make the JSON invalid; they never reach clients.
double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(fmt::format("non-finite {} in response", what));
  return v;
}

json scene_json(const std::optional<corpus::SceneSpec>& scene) {
  if (!scene) return nullptr;
  return {{"profile", std::string(corpus::profile_name(scene->profile))},
          {"buildings", scene->building_count},
          {"roads", scene->road_count},
          {"green_areas", scene->green_blob_count},
          {"water_bodies", scene->water_blob_count},
          {"coverage",
           {{"buildings", scene->coverage.b},
            {"roads", scene->coverage.r},
            {"greenery", scene->coverage.g},
            {"water", scene->coverage.w}}}};
}

json indicators_json(const corpus::Indicators& raw, const corpus::Indicators& log) {
  json out = json::object(), logs = json::object();
  for (std::size_t k = 0; k < corpus::kNumIndicators; ++k) {
    const std::string name(corpus::kIndicatorNames[k]);
    out[name] = finite_or_throw(raw.v[k], "indicator");
    logs[name] = finite_or_throw(log.v[k], "indicator");
  }
  out["log"] = logs;
  return out;
}

}  // namespace

ServiceState::ServiceState(const model::Checkpoint& checkpoint, downstream::IndicatorHead head,
                           textpipe::Vocab vocab, std::vector<corpus::Corpus> corpora)
    : encoder_(checkpoint), head_(std::move(head)), vocab_(std::move(vocab)) {
  if (corpora.empty()) throw ConfigError("service needs at least one corpus");
  if (head_.input_dim() != encoder_.dim()) {
    throw ConfigError(fmt::format("head expects {}-d embeddings, checkpoint gives {}",
                                  head_.input_dim(), encoder_.dim()));
  }
  if (head_.has_prompt()) throw ConfigError("prompt heads are not served");
  if (encoder_.model() && vocab_.hash() != checkpoint.vocab_hash) {
    throw ConfigError("vocab does not match the checkpoint");
  }
  for (auto& c : corpora) {
    City city;
    city.corpus = std::move(c);
    city.corpus.reindex();
    const auto ids = city.corpus.ids();
    city.table = downstream::extract_embeddings(encoder_, city.corpus);
    city.predictions = downstream::predict(head_, city.table, ids);
    for (const auto& other : cities_) {
      if (other.corpus.city == city.corpus.city) {
        throw ConfigError("city " + city.corpus.city + " loaded twice");
      }
    }
    cities_.push_back(std::move(city));
  }
  for (const auto& city : cities_) {
    for (std::size_t r = 0; r < city.table.ids.size(); ++r) index_[city.table.ids[r]] = {&city, r};
  }
}

ServiceState::Located ServiceState::locate(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw NotFoundError("unknown region " + id);
  return it->second;
}

json ServiceState::prediction_json(const nn::Tensor<double>& log_row, std::size_t row) const {
  json out = json::object(), logs = json::object();
  for (std::size_t k = 0; k < head_.outputs.size(); ++k) {
    const double lg = finite_or_throw(log_row.at(row, k), "prediction");
    out[head_.outputs[k]] = std::max(0.0, std::expm1(lg));
    logs[head_.outputs[k]] = lg;
  }
  out["log"] = logs;
  return out;
}

Reply ServiceState::health() const { return json_reply({{"status", "ok"}}); }

Reply ServiceState::cities() const {
  json list = json::array();
  for (const auto& c : cities_) {
    list.push_back({{"city", c.corpus.city},
                    {"rows", c.corpus.rows},
                    {"cols", c.corpus.cols},
                    {"regions", c.corpus.records.size()}});
  }
  return json_reply({{"cities", list}});
}

Reply ServiceState::regions(const std::string& city) const {
  for (const auto& c : cities_) {
    if (c.corpus.city != city) continue;
    json regions = json::array();
    for (std::size_t r = 0; r < c.corpus.records.size(); ++r) {
      const auto& rec = c.corpus.records[r];
      regions.push_back({{"region_id", rec.region_id},
                         {"grid_ij", {rec.grid_i, rec.grid_j}},
                         {"indicators_predicted", prediction_json(c.predictions.log, r)}});
    }
    return json_reply({{"city", city},
                       {"rows", c.corpus.rows},
                       {"cols", c.corpus.cols},
                       {"indicators", head_.outputs},
                       {"regions", regions}});
  }
  return error_reply(404, city.empty() ? "missing city parameter" : "unknown city " + city);
}

Reply ServiceState::region(const std::string& id) const {
  const auto [city, row] = locate(id);
  const auto& rec = city->corpus.records[row];
  json out = {{"region_id", rec.region_id},
              {"city", rec.city},
              {"grid_ij", {rec.grid_i, rec.grid_j}},
              {"indicators_predicted", prediction_json(city->predictions.log, row)},
              {"indicators_true", indicators_json(rec.indicators_raw, rec.indicators_log)},
              {"scene", scene_json(rec.scene)},
              {"image", "/region/" + rec.region_id + "/image"}};
  out["caption"] = encoder_.model()
                       ? json(downstream::greedy_caption(*encoder_.model(), vocab_, rec.image))
                       : json(nullptr);
  return json_reply(out);
}

Reply ServiceState::region_image(const std::string& id) const {
  const auto [city, row] = locate(id);
  const auto& img = city->corpus.records[row].image;
  return {200, util::encode_f32_blob({img.height, img.width, img.channels, img.data}),
          "application/octet-stream"};
}

Reply ServiceState::similar(const std::string& id, const std::string& k_text) const {
  std::size_t k = 10;
  if (!k_text.empty()) {
    const auto res = std::from_chars(k_text.data(), k_text.data() + k_text.size(), k);
    if (res.ec != std::errc() || res.ptr != k_text.data() + k_text.size() || k == 0) {
      return error_reply(400, "k must be a positive integer");
    }
  }
  const auto [city, row] = locate(id);
  const auto& t = city->table;
  const auto hits = downstream::find_similar({t.vectors.row(row), t.dim()}, t, k);
  json list = json::array();
  for (const auto& h : hits) {
    list.push_back({{"region_id", h.region_id}, {"cosine", finite_or_throw(h.cosine, "cosine")}});
  }
  return json_reply({{"region_id", id}, {"similar", list}});
}

Reply ServiceState::predict(const std::string& body) const {
  if (body.size() > kMaxPayloadBytes) return error_reply(413, "payload exceeds 8 MiB");
  corpus::ImageTensor img;
  try {
    auto blob = util::decode_f32_blob(body);
    img = {blob.h, blob.w, blob.c, std::move(blob.data)};
  } catch (const Error& e) {
    return error_reply(400, std::string("malformed image: ") + e.what());
  }
  const auto& cfg = encoder_.config();
  if (int(img.height) != cfg.image_h || int(img.width) != cfg.image_w ||
      int(img.channels) != cfg.channels) {
    return error_reply(400, fmt::format("image must be {}x{}x{}, got {}x{}x{}", cfg.image_h,
                                        cfg.image_w, cfg.channels, img.height, img.width,
                                        img.channels));
  }
  for (float v : img.data) {
    if (!std::isfinite(v)) return error_reply(400, "image contains non-finite values");
  }
  const auto log = head_.predict(encoder_.embed({&img}));
  json out = {{"indicators_predicted", prediction_json(log, 0)}};
  out["caption"] = encoder_.model()
                       ? json(downstream::greedy_caption(*encoder_.model(), vocab_, img))
                       : json(nullptr);
  return json_reply(out);
}

Reply ServiceState::api() const {
  const json endpoints = json::array({
      {{"method", "GET"}, {"path", "/health"}, {"returns", "{status}"}},
      {{"method", "GET"}, {"path", "/cities"}, {"returns", "loaded cities with grid shapes"}},
      {{"method", "GET"}, {"path", "/regions?city=X"}, {"returns", "grid cells with predictions"}},
      {{"method", "GET"}, {"path", "/region/{id}"},
       {"returns", "predicted and true indicators, caption, scene summary"}},
      {{"method", "GET"}, {"path", "/region/{id}/image"}, {"returns", ".imgf32 bytes"}},
      {{"method", "GET"}, {"path", "/region/{id}/similar?k=K"},
       {"returns", "top-k regions of the same city by cosine"}},
      {{"method", "POST"}, {"path", "/predict"},
       {"returns", "predictions and caption for an .imgf32 body (max 8 MiB)"}},
      {{"method", "GET"}, {"path", "/api"}, {"returns", "this listing"}},
  });
  return json_reply({{"endpoints", endpoints}});
}

void register_routes(httplib::Server& server, std::shared_ptr<const ServiceState> state) {
  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  // Maps library errors to HTTP statuses.
  auto guarded = [send](auto fn) {
    return [send, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, fn(req));
      } catch (const NotFoundError& e) {
        send(res, error_reply(404, e.what()));
      } catch (const std::exception& e) {
        send(res, error_reply(500, e.what()));
      }
    };
  };
  server.set_payload_max_length(kMaxPayloadBytes);
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Get("/health", guarded([state](const auto&) { return state->health(); }));
  server.Get("/cities", guarded([state](const auto&) { return state->cities(); }));
  server.Get("/api", guarded([state](const auto&) { return state->api(); }));
  server.Get("/regions", guarded([state](const httplib::Request& req) {
               return state->regions(req.get_param_value("city"));
             }));
  server.Get(R"(/region/([^/]+)/similar)", guarded([state](const httplib::Request& req) {
               return state->similar(req.matches[1], req.get_param_value("k"));
             }));
  server.Get(R"(/region/([^/]+)/image)", guarded([state](const httplib::Request& req) {
               return state->region_image(req.matches[1]);
             }));
  server.Get(R"(/region/([^/]+))", guarded([state](const httplib::Request& req) {
               return state->region(req.matches[1]);
             }));
  server.Post("/predict", guarded([state](const httplib::Request& req) {
                return state->predict(req.body);
              }));
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      const char* msg = res.status == 413 ? "payload exceeds 8 MiB" : "not found";
      res.set_content(json({{"error", msg}}).dump(), "application/json");
    }
  });
}

}  // namespace urbanclip::service
