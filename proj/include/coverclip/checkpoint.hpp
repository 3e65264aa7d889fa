#pragma once

// Checkpoint container: a single JSON header line describing the model
// config, step count, vocabulary, and named array layout, followed by raw
// little-endian float64 arrays concatenated in the declared section order.
// Guidance-head weights live in their own section so inference loaders can
// skip them.

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "coverclip/model.hpp"

namespace coverclip {

constexpr int kCheckpointVersion = 1;

using RawSection = std::vector<std::pair<std::string, std::vector<double>>>;

inline void save_checkpoint_raw(const std::string& path, const ModelConfig& config, int step,
                                const std::vector<std::pair<std::string, RawSection>>& sections,
                                const std::vector<std::string>& vocab_tokens,
                                const nlohmann::json& extra) {
  nlohmann::json header;
  header["format"] = "coverclip-checkpoint";
  header["format_version"] = kCheckpointVersion;
  header["byte_layout"] =
      "after the header line: float64 little-endian arrays, concatenated in section_order and "
      "per-section declaration order";
  header["model"] = config.to_json();
  header["step"] = step;
  header["vocab"] = vocab_tokens;
  header["extra"] = extra;
  nlohmann::json section_meta;
  std::vector<std::string> order;
  for (const auto& [name, arrays] : sections) {
    order.push_back(name);
    nlohmann::json list = nlohmann::json::array();
    for (const auto& [array_name, values] : arrays)
      list.push_back({{"name", array_name}, {"size", values.size()}});
    section_meta[name] = list;
  }
  header["section_order"] = order;
  header["sections"] = section_meta;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << header.dump() << "\n";
  for (const auto& [name, arrays] : sections)
    for (const auto& [array_name, values] : arrays)
      out.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw IoError("short write to checkpoint " + path);
}

struct LoadedCheckpoint {
  nlohmann::json header;
  std::map<std::string, std::unordered_map<std::string, std::vector<double>>> sections;
  std::vector<std::pair<std::string, RawSection>> ordered_sections;  // declaration order
};

inline LoadedCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint not found: " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw IoError("checkpoint " + path + " is empty");
  LoadedCheckpoint ck;
  try {
    ck.header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path + " has a malformed header: " + e.what());
  }
  if (ck.header.value("format", "") != "coverclip-checkpoint")
    throw IoError("checkpoint " + path + " has an unknown format tag");
  if (ck.header.value("format_version", -1) != kCheckpointVersion)
    throw IoError("checkpoint " + path + " has an unsupported format version");

  for (const auto& name : ck.header.at("section_order").get<std::vector<std::string>>()) {
    RawSection raw;
    for (const auto& meta : ck.header.at("sections").at(name)) {
      const std::string array_name = meta.at("name").get<std::string>();
      const std::size_t size = meta.at("size").get<std::size_t>();
      std::vector<double> values(size);
      in.read(reinterpret_cast<char*>(values.data()),
              static_cast<std::streamsize>(size * sizeof(double)));
      if (!in) throw IoError("checkpoint " + path + " is truncated at " + name + "/" + array_name);
      ck.sections[name].emplace(array_name, values);
      raw.emplace_back(array_name, std::move(values));
    }
    ck.ordered_sections.emplace_back(name, std::move(raw));
  }
  return ck;
}

inline RawSection to_raw_section(const ParamList& params) {
  RawSection out;
  out.reserve(params.size());
  for (const NamedTensor& p : params) out.emplace_back(p.name, p.tensor.data());
  return out;
}

inline void load_into_params(
    const std::unordered_map<std::string, std::vector<double>>& arrays, const ParamList& params,
    const std::string& section, const std::string& path) {
  for (const NamedTensor& p : params) {
    auto it = arrays.find(p.name);
    if (it == arrays.end())
      throw IoError("checkpoint " + path + " lacks array " + section + "/" + p.name);
    if (it->second.size() != p.tensor.size())
      throw ConfigError("checkpoint " + path + " array " + p.name + " has " +
                        std::to_string(it->second.size()) + " values, model expects " +
                        std::to_string(p.tensor.size()));
    Tensor t = p.tensor;
    t.mutable_data() = it->second;
  }
}

inline void save_model_checkpoint(const std::string& path, const CoverClipModel& model,
                                  const Vocabulary& vocab, int step, const nlohmann::json& extra,
                                  const RawSection* optimizer = nullptr) {
  std::vector<std::pair<std::string, RawSection>> sections;
  sections.emplace_back("encoders", to_raw_section(model.encoder_parameters()));
  ParamList heads = model.head_parameters();
  if (!heads.empty()) sections.emplace_back("heads", to_raw_section(heads));
  ParamList aux = model.aux_parameters();
  if (!aux.empty()) sections.emplace_back("aux", to_raw_section(aux));
  if (optimizer != nullptr) sections.emplace_back("optimizer", *optimizer);
  save_checkpoint_raw(path, model.config, step, sections, vocab.ordered_tokens(), extra);
}

struct LoadedModel {
  CoverClipModel model;
  Vocabulary vocab;
  nlohmann::json extra;
  int step = 0;
  nlohmann::json header;
};

// Rebuilds the model from a checkpoint. Heads are restored only when their
// section exists and include_heads is set; the inference path never needs them.
inline LoadedModel load_model_checkpoint(const std::string& path, bool include_heads = true) {
  LoadedCheckpoint ck = read_checkpoint(path);
  const ModelConfig config = ModelConfig::from_json(ck.header.at("model"));

  const bool has_heads = include_heads && ck.sections.count("heads") > 0;
  bool with_presence = false, with_semantic = false;
  if (has_heads) {
    for (const auto& [name, values] : ck.sections.at("heads")) {
      if (name.rfind("presence", 0) == 0) with_presence = true;
      if (name.rfind("semantic", 0) == 0) with_semantic = true;
    }
  }

  LoadedModel out;
  out.model = CoverClipModel(config, /*seed=*/0, with_presence, with_semantic);
  load_into_params(ck.sections.at("encoders"), out.model.encoder_parameters(), "encoders", path);
  if (has_heads)
    load_into_params(ck.sections.at("heads"), out.model.head_parameters(), "heads", path);
  if (has_heads && ck.sections.count("aux") > 0) {
    if (!out.model.aux_text) out.model.refresh_aux_snapshot();
    load_into_params(ck.sections.at("aux"), out.model.aux_parameters(), "aux", path);
  }
  out.vocab = Vocabulary::from_ordered_tokens(ck.header.at("vocab").get<std::vector<std::string>>());
  out.extra = ck.header.value("extra", nlohmann::json::object());
  out.step = ck.header.value("step", 0);
  out.header = ck.header;
  return out;
}

// Rewrites a checkpoint without the guidance-head (and optimizer) sections.
inline void strip_heads_checkpoint(const std::string& in_path, const std::string& out_path) {
  LoadedCheckpoint ck = read_checkpoint(in_path);
  std::vector<std::pair<std::string, RawSection>> kept;
  for (auto& [name, arrays] : ck.ordered_sections)
    if (name != "heads" && name != "optimizer" && name != "aux")
      kept.emplace_back(name, std::move(arrays));
  save_checkpoint_raw(out_path, ModelConfig::from_json(ck.header.at("model")),
                      ck.header.value("step", 0), kept,
                      ck.header.at("vocab").get<std::vector<std::string>>(),
                      ck.header.value("extra", nlohmann::json::object()));
}

}  // namespace coverclip
