#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "hippofuse/model.hpp"
#include "hippofuse/optim.hpp"

namespace hippofuse {

// Named sub-seeds expanded from one master seed; recorded in the config echo
// so individual stages can be reproduced in isolation.
struct ResolvedSeeds {
  std::uint64_t master = 1;
  std::uint64_t init = 0;     // weight initialization
  std::uint64_t draw = 0;     // per-iteration sample draws
  std::uint64_t dropout = 0;  // dropout masks
  std::uint64_t split = 0;    // validation re-splits
  std::uint64_t probe = 0;    // iteration-0 loss probe
};

ResolvedSeeds expand_seeds(std::uint64_t master);

nlohmann::json load_json_file(const std::filesystem::path& path);

// Deep merge: object members of `overlay` override `base` recursively, other
// values replace outright.
nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& overlay);

// Applies a dotted-path override such as "optimizer.mu0=0.005". The value is
// parsed as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Minimal JSON-schema checker covering the subset the shipped schemas use:
// type, properties, required, additionalProperties, items, enum,
// minimum/maximum, minItems. Violations name the offending key path.
void validate_against_schema(const nlohmann::json& doc, const nlohmann::json& schema,
                             const std::string& path = "$");

nlohmann::json network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const nlohmann::json& j);

nlohmann::json optimizer_config_to_json(const OptimizerConfig& cfg);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

}  // namespace hippofuse
