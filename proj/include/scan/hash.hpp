#pragma once

#include <string>
#include <vector>

#include "scan/nn.hpp"

namespace scan {

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string file_sha256_hex(const std::string& path);

// Hash of parameter names and raw little-endian values in registration order.
std::string params_sha256(const std::vector<nn::Param*>& params);

}  // namespace scan
