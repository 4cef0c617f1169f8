#include "urbanclip/model/checkpoint.hpp"

#include <cstring>

#include "urbanclip/errors.hpp"
#include "urbanclip/util/binary_io.hpp"

namespace urbanclip::model {

using nlohmann::json;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json tensors = json::array();
  std::string payload;
  for (const auto& [name, var] : ckpt.params.entries()) {
    const auto& t = var.value();
    const std::size_t bytes = t.numel() * sizeof(float);
    tensors.push_back({{"name", name},
                       {"dtype", "f32"},
                       {"shape", t.shape()},
                       {"byte_offset", payload.size()},
                       {"byte_len", bytes}});
    payload.append(reinterpret_cast<const char*>(t.data()), bytes);
  }
  const json header = {{"format", "uckpt"},
                       {"version", 1},
                       {"kind", ckpt.kind},
                       {"config", to_json(ckpt.config)},
                       {"vocab_hash", ckpt.vocab_hash},
                       {"meta", ckpt.meta},
                       {"tensors", tensors}};
  const std::string h = header.dump();
  const std::uint64_t len = h.size();
  std::string out(sizeof(len), '\0');
  std::memcpy(out.data(), &len, sizeof(len));
  out += h;
  out += payload;
  util::write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = util::read_file(path);
  auto fail = [&](const std::string& msg) { throw IoError(path.string() + ": " + msg); };
  if (bytes.size() < 8) fail("truncated header");
  std::uint64_t len;
  std::memcpy(&len, bytes.data(), 8);
  if (len > bytes.size() - 8) fail("header length exceeds file size");
  json header;
  try {
    header = json::parse(bytes.substr(8, len));
  } catch (const json::exception& e) {
    fail(std::string("bad header: ") + e.what());
  }
  if (header.value("format", "") != "uckpt") fail("not a .uckpt file");
  Checkpoint ckpt;
  ckpt.kind = header.value("kind", "urbanclip");
  ckpt.config = model_config_from_json(header.at("config"));
  ckpt.vocab_hash = header.value("vocab_hash", "");
  ckpt.meta = header.value("meta", json::object());
  const std::size_t base = 8 + len;
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    if (t.at("dtype").get<std::string>() != "f32") fail("tensor " + name + " is not f32");
    const auto shape = t.at("shape").get<nn::Shape>();
    const auto offset = t.at("byte_offset").get<std::size_t>();
    const auto n = t.at("byte_len").get<std::size_t>();
    if (n != nn::shape_numel(shape) * sizeof(float)) fail("tensor " + name + " length mismatch");
    if (base + offset + n > bytes.size()) fail("tensor " + name + " runs past end of file");
    std::vector<float> data(nn::shape_numel(shape));
    std::memcpy(data.data(), bytes.data() + base + offset, n);
    ckpt.params.add(name, nn::Tensor<float>(shape, std::move(data))).set_requires_grad(true);
  }
  return ckpt;
}

}  // namespace urbanclip::model
