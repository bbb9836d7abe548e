#include "dgattn/io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dgattn {

std::string tensor_to_json(const Tensor& t) {
  nlohmann::json j;
  j["shape"] = t.shape();
  j["data"] = t.storage();
  return j.dump();
}

Tensor tensor_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace dgattn
