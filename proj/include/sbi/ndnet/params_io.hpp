#pragma once

#include <iosfwd>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "sbi/ndnet/autodiff.hpp"

namespace sbi::nn {

/// Self-describing parameter document:
///   {"spec": <caller metadata>, "layers": [{"name", "shape": [r, c], "data": base64}]}
/// where data holds little-endian IEEE-754 doubles in row-major order.
nlohmann::json params_to_json(const NetParams& params, const nlohmann::json& spec);
/// Returns (params, spec). Throws ConfigError on malformed documents.
std::pair<NetParams, nlohmann::json> params_from_json(const nlohmann::json& doc);

void save_params(const std::string& path, const NetParams& params, const nlohmann::json& spec);
std::pair<NetParams, nlohmann::json> load_params(const std::string& path);

std::string encode_doubles(const double* data, std::size_t n);
std::vector<double> decode_doubles(const std::string& text);

}  // namespace sbi::nn
