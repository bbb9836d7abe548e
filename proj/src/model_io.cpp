#include <filesystem>
#include <map>
#include <stdexcept>

#include "dgattn/io.hpp"
#include "dgattn/model.hpp"
#include "json.hpp"

namespace dgattn {

namespace {

using nlohmann::json;

json variant_json(const DgtVariantConfig& cfg) {
  json stages = json::array();
  for (const auto& s : cfg.stages)
    stages.push_back({{"channels", s.channels},
                      {"depth", s.depth},
                      {"heads", s.heads},
                      {"groups", s.groups},
                      {"top_k", s.top_k},
                      {"expand_ratio", s.expand_ratio},
                      {"global_attention", s.global_attention}});
  return {{"name", cfg.name},
          {"in_channels", cfg.in_channels},
          {"stem_channels", cfg.stem_channels},
          {"stages", stages},
          {"fc_dim", cfg.fc_dim},
          {"num_classes", cfg.num_classes},
          {"ln_eps", cfg.ln_eps},
          {"tile", cfg.tile},
          {"post_norm", cfg.post_norm},
          {"cosine_attention", cfg.cosine_attention}};
}

DgtVariantConfig variant_of(const json& j) {
  // A bare {"variant": "T"} selects a named configuration.
  if (j.contains("variant")) return DgtVariantConfig::named(j.at("variant").get<std::string>());
  DgtVariantConfig cfg;
  cfg.name = j.value("name", cfg.name);
  cfg.in_channels = j.value("in_channels", cfg.in_channels);
  cfg.stem_channels = j.at("stem_channels").get<std::size_t>();
  for (const auto& s : j.at("stages")) {
    StageConfig sc;
    sc.channels = s.at("channels").get<std::size_t>();
    sc.depth = s.at("depth").get<std::size_t>();
    sc.heads = s.value("heads", sc.heads);
    sc.groups = s.value("groups", sc.groups);
    sc.top_k = s.value("top_k", sc.top_k);
    sc.expand_ratio = s.value("expand_ratio", sc.expand_ratio);
    sc.global_attention = s.value("global_attention", sc.global_attention);
    cfg.stages.push_back(sc);
  }
  cfg.fc_dim = j.value("fc_dim", cfg.fc_dim);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.ln_eps = j.value("ln_eps", cfg.ln_eps);
  cfg.tile = j.value("tile", cfg.tile);
  cfg.post_norm = j.value("post_norm", cfg.post_norm);
  cfg.cosine_attention = j.value("cosine_attention", cfg.cosine_attention);
  cfg.validate();
  return cfg;
}

std::string file_name_for(const std::string& tensor_name) { return tensor_name + ".json"; }

}  // namespace

std::string variant_to_json(const DgtVariantConfig& cfg) { return variant_json(cfg).dump(2); }

DgtVariantConfig variant_from_json(const std::string& text) { return variant_of(json::parse(text)); }

DgtVariantConfig load_variant_config(const std::string& path) {
  return variant_from_json(read_text_file(path));
}

void save_checkpoint(const DgtModel& model, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json tensors = json::array();
  auto save = [&](const std::string& name, const Tensor& t) {
    const std::string file = file_name_for(name);
    write_text_file((fs::path(dir) / file).string(), tensor_to_json(t));
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"file", file}});
  };
  model.visit(save);
  for (std::size_t s = 0; s < model.stages.size(); ++s)
    for (std::size_t b = 0; b < model.stages[s].centroids.size(); ++b)
      for (std::size_t h = 0; h < model.stages[s].centroids[b].size(); ++h)
        save("stages." + std::to_string(s) + ".blocks." + std::to_string(b) + ".centroids." +
                 std::to_string(h),
             model.stages[s].centroids[b][h].e);
  const json manifest{{"format", "dgattn-checkpoint-v1"},
                      {"variant", variant_json(model.cfg)},
                      {"tensors", tensors}};
  write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2));
}

DgtModel load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const json manifest = json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));
  const DgtVariantConfig cfg = variant_of(manifest.at("variant"));
  std::map<std::string, Tensor> stored;
  for (const auto& entry : manifest.at("tensors")) {
    Tensor t = tensor_from_json(read_text_file((fs::path(dir) / entry.at("file").get<std::string>()).string()));
    require_shape(t.shape() == entry.at("shape").get<Shape>(),
                  "checkpoint tensor shape differs from manifest");
    stored.emplace(entry.at("name").get<std::string>(), std::move(t));
  }

  // Build the skeleton for shapes, then overwrite every tensor.
  Rng rng(0);
  DgtModel model = build_model(cfg, rng);
  auto take = [&](const std::string& name, Tensor& t) {
    auto it = stored.find(name);
    if (it == stored.end()) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    require_shape(it->second.shape() == t.shape(), "checkpoint tensor '" + name + "' has the wrong shape");
    t = std::move(it->second);
  };
  model.visit(take);
  for (std::size_t s = 0; s < model.stages.size(); ++s)
    for (std::size_t b = 0; b < model.stages[s].centroids.size(); ++b)
      for (std::size_t h = 0; h < model.stages[s].centroids[b].size(); ++h)
        take("stages." + std::to_string(s) + ".blocks." + std::to_string(b) + ".centroids." +
                 std::to_string(h),
             model.stages[s].centroids[b][h].e);
  return model;
}

}  // namespace dgattn
