#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "urbanclip/corpus/corpus.hpp"
#include "urbanclip/downstream/encoder.hpp"
#include "urbanclip/downstream/evaluate.hpp"
#include "urbanclip/downstream/head.hpp"
#include "urbanclip/model/checkpoint.hpp"
#include "urbanclip/textpipe/vocab.hpp"

namespace httplib {
class Server;
}

namespace urbanclip::service {

inline constexpr std::size_t kMaxPayloadBytes = 8u << 20;

struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// Everything the endpoints read. Built once; never mutated afterwards, so
// handlers may run concurrently.
class ServiceState {
 public:
  ServiceState(const model::Checkpoint& checkpoint, downstream::IndicatorHead head,
               textpipe::Vocab vocab, std::vector<corpus::Corpus> corpora);

  Reply health() const;
  Reply cities() const;
  Reply regions(const std::string& city) const;
  Reply region(const std::string& id) const;
  Reply region_image(const std::string& id) const;
  Reply similar(const std::string& id, const std::string& k) const;
  Reply predict(const std::string& body) const;
  Reply api() const;

  // Raw-scale predictions plus a "log" sub-record.
  nlohmann::json prediction_json(const nn::Tensor<double>& log_row, std::size_t row) const;

 private:
  struct City {
    corpus::Corpus corpus;
    downstream::EmbeddingTable table;
    downstream::Predictions predictions;
  };
  struct Located {
    const City* city;
    std::size_t row;
  };
  Located locate(const std::string& id) const;  // NotFoundError

  downstream::FrozenEncoder encoder_;
  downstream::IndicatorHead head_;
  textpipe::Vocab vocab_;
  std::vector<City> cities_;
  std::map<std::string, Located> index_;
};

// Registers every route plus CORS headers and the payload limit.
void register_routes(httplib::Server& server, std::shared_ptr<const ServiceState> state);

}  // namespace urbanclip::service
