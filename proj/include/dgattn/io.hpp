#pragma once

#include <string>

#include "dgattn/tensor.hpp"

namespace dgattn {

/// {"shape": [...], "data": [...]}; doubles round-trip exactly.
std::string tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const std::string& text);

/// Throws std::runtime_error when the file cannot be read or written.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace dgattn
