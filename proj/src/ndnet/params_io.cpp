#include "sbi/ndnet/params_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <boost/beast/core/detail/base64.hpp>

#include "sbi/core/errors.hpp"

namespace sbi::nn {

namespace b64 = boost::beast::detail::base64;

static_assert(std::endian::native == std::endian::little, "parameter documents assume a little-endian host");

std::string encode_doubles(const double* data, std::size_t n) {
  const std::size_t bytes = n * sizeof(double);
  std::string out(b64::encoded_size(bytes), '\0');
  out.resize(b64::encode(out.data(), data, bytes));
  return out;
}

std::vector<double> decode_doubles(const std::string& text) {
  std::string raw(b64::decoded_size(text.size()), '\0');
  const auto [written, read] = b64::decode(raw.data(), text.data(), text.size());
  const bool only_padding = text.find_first_not_of('=', read) == std::string::npos;
  if (!only_padding || written % sizeof(double) != 0) throw ConfigError("malformed base64 tensor data");
  std::vector<double> out(written / sizeof(double));
  std::memcpy(out.data(), raw.data(), written);
  return out;
}

nlohmann::json params_to_json(const NetParams& params, const nlohmann::json& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& [name, t] : params)
    layers.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"data", encode_doubles(t.data(), t.size())}});
  return {{"spec", spec}, {"layers", layers}};
}

std::pair<NetParams, nlohmann::json> params_from_json(const nlohmann::json& doc) {
  try {
    NetParams params;
    for (const auto& layer : doc.at("layers")) {
      const auto name = layer.at("name").get<std::string>();
      const auto shape = layer.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2) throw ConfigError("tensor '" + name + "' must have a rank-2 shape");
      const auto data = decode_doubles(layer.at("data").get<std::string>());
      if (static_cast<Eigen::Index>(data.size()) != shape[0] * shape[1])
        throw ConfigError("tensor '" + name + "' data does not match its shape");
      params[name] = Eigen::Map<const Tensor>(data.data(), shape[0], shape[1]);
    }
    return {std::move(params), doc.value("spec", nlohmann::json::object())};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed parameter document: ") + e.what());
  }
}

void save_params(const std::string& path, const NetParams& params, const nlohmann::json& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << params_to_json(params, spec).dump(1) << '\n';
}

std::pair<NetParams, nlohmann::json> load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open parameter file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse '" + path + "': " + e.what());
  }
  return params_from_json(doc);
}

}  // namespace sbi::nn
