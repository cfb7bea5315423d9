#include "shan/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "shan/errors.hpp"

using nlohmann::json;

namespace shan {

namespace {

constexpr char kMagic[4] = {'S', 'H', 'A', 'N'};
constexpr std::uint32_t kFormatVersion = 1;

void append_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64le(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t read_u32le(const std::string& bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

double read_f64le(const std::string& bytes, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

json tensor_entry(const std::string& name, const Tensor& t) {
  return {{"name", name}, {"shape", t.shape()}};
}

std::vector<std::pair<std::string, const Tensor*>> payload_order(
    const ModelParams& p, NeuronKind kind) {
  std::vector<std::pair<std::string, const Tensor*>> order = {
      {"W1", &p.w1}, {"W2", &p.w2}, {"b", &p.b}, {"q", &p.q}, {"W3", &p.w3}};
  if (kind == NeuronKind::PLIF) order.emplace_back("tau_param", &p.tau_param);
  return order;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const ModelConfig& config,
                     const std::vector<std::string>& metapath_names) {
  config.neuron.validate();
  const std::size_t d_hd = params.d_hd();
  if (params.w2.rows() != d_hd || params.w2.cols() != d_hd ||
      params.b.size() != d_hd || params.q.size() != d_hd ||
      params.w3.rows() != d_hd) {
    throw ConfigError("checkpoint parameters have inconsistent hidden dimension");
  }

  json header;
  header["format_version"] = kFormatVersion;
  header["dims"] = {{"d_in", params.d_in()}, {"d_hd", d_hd}, {"d_out", params.d_out()}};
  header["neuron"] = {{"kind", to_string(config.neuron.kind)},
                      {"v_th", config.neuron.v_th},
                      {"reset_mode", to_string(config.neuron.reset_mode)},
                      {"v_reset", config.neuron.v_reset},
                      {"leak_target", to_string(config.neuron.leak_target)},
                      {"alpha", config.neuron.alpha},
                      {"tau_init", config.neuron.tau_init},
                      {"time_steps", config.neuron.time_steps},
                      {"surrogate_chain_alpha", config.neuron.surrogate_chain_alpha},
                      {"detach_reset", config.neuron.detach_reset}};
  header["activation"] = to_string(config.activation);
  header["dropout_rate"] = config.dropout_rate;
  header["normalize_readout"] = config.normalize_readout;
  header["metapaths"] = metapath_names;
  json tensors = json::array();
  const auto order = payload_order(params, config.neuron.kind);
  for (const auto& [name, t] : order) tensors.push_back(tensor_entry(name, *t));
  header["tensors"] = tensors;

  std::string bytes(kMagic, 4);
  const std::string header_text = header.dump();
  append_u32le(bytes, static_cast<std::uint32_t>(header_text.size()));
  bytes += header_text;
  for (const auto& [name, t] : order) {
    for (std::size_t i = 0; i < t->size(); ++i) append_f64le(bytes, (*t)[i]);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();

  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError(path + ": not a checkpoint file");
  }
  const std::uint32_t header_len = read_u32le(bytes, 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(header_len)) {
    throw DataError(path + ": truncated header");
  }
  json header;
  try {
    header = json::parse(bytes.substr(8, header_len));
  } catch (const json::exception& e) {
    throw DataError(path + ": corrupt header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != static_cast<int>(kFormatVersion)) {
      throw DataError(path + ": unsupported format version " + std::to_string(version));
    }
    const json& nj = header.at("neuron");
    ckpt.config.neuron.kind = neuron_kind_from_string(nj.at("kind").get<std::string>());
    ckpt.config.neuron.v_th = nj.at("v_th").get<double>();
    ckpt.config.neuron.reset_mode =
        reset_mode_from_string(nj.at("reset_mode").get<std::string>());
    ckpt.config.neuron.v_reset = nj.at("v_reset").get<double>();
    ckpt.config.neuron.leak_target =
        leak_target_from_string(nj.at("leak_target").get<std::string>());
    ckpt.config.neuron.alpha = nj.at("alpha").get<double>();
    ckpt.config.neuron.tau_init = nj.at("tau_init").get<double>();
    ckpt.config.neuron.time_steps = nj.at("time_steps").get<int>();
    ckpt.config.neuron.surrogate_chain_alpha =
        nj.at("surrogate_chain_alpha").get<bool>();
    ckpt.config.neuron.detach_reset = nj.at("detach_reset").get<bool>();
    ckpt.config.activation =
        activation_from_string(header.at("activation").get<std::string>());
    ckpt.config.dropout_rate = header.at("dropout_rate").get<double>();
    ckpt.config.normalize_readout = header.at("normalize_readout").get<bool>();
    ckpt.metapath_names = header.at("metapaths").get<std::vector<std::string>>();
    ckpt.config.neuron.validate();

    std::vector<std::string> expected = {"W1", "W2", "b", "q", "W3"};
    if (ckpt.config.neuron.kind == NeuronKind::PLIF) expected.emplace_back("tau_param");
    const json& tensors = header.at("tensors");
    if (tensors.size() != expected.size()) {
      throw DataError(path + ": expected " + std::to_string(expected.size()) +
                      " tensors, header lists " + std::to_string(tensors.size()));
    }
    std::size_t at = 8 + header_len;
    std::vector<Tensor> loaded;
    for (std::size_t k = 0; k < expected.size(); ++k) {
      const json& entry = tensors[k];
      if (entry.at("name").get<std::string>() != expected[k]) {
        throw DataError(path + ": tensor " + std::to_string(k) + " is '" +
                        entry.at("name").get<std::string>() + "', expected '" +
                        expected[k] + "'");
      }
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      Tensor t(shape);
      if (bytes.size() < at + t.size() * 8) {
        throw DataError(path + ": truncated payload");
      }
      for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = read_f64le(bytes, at);
        at += 8;
      }
      loaded.push_back(std::move(t));
    }
    if (at != bytes.size()) {
      throw DataError(path + ": trailing bytes after payload");
    }
    ckpt.params.w1 = std::move(loaded[0]);
    ckpt.params.w2 = std::move(loaded[1]);
    ckpt.params.b = std::move(loaded[2]);
    ckpt.params.q = std::move(loaded[3]);
    ckpt.params.w3 = std::move(loaded[4]);
    ckpt.params.tau_param = ckpt.config.neuron.kind == NeuronKind::PLIF
                                ? std::move(loaded[5])
                                : Tensor::scalar(0.0);
  } catch (const json::exception& e) {
    throw DataError(path + ": corrupt header: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(path + ": invalid header: " + e.what());
  }
  return ckpt;
}

}  // namespace shan
