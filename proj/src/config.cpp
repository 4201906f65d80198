#include "hippofuse/config.hpp"

#include <fstream>

#include "hippofuse/data.hpp"
#include "hippofuse/rng.hpp"

namespace hippofuse {

using nlohmann::json;

ResolvedSeeds expand_seeds(std::uint64_t master) {
  ResolvedSeeds s;
  s.master = master;
  s.init = derive_seed(master, "init");
  s.draw = derive_seed(master, "draw");
  s.dropout = derive_seed(master, "dropout");
  s.split = derive_seed(master, "split");
  s.probe = derive_seed(master, "probe");
  return s;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(msg("cannot open '", path.string(), "'"));
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError(msg("'", path.string(), "': ", e.what()));
  }
}

json merge_json(json base, const json& overlay) {
  if (!base.is_object() || !overlay.is_object()) return overlay;
  for (const auto& [key, value] : overlay.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object())
      base[key] = merge_json(base[key], value);
    else
      base[key] = value;
  }
  return base;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError(msg("override '", assignment, "' is not of the form key.path=value"));
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings are fine
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty())
      throw ConfigError(msg("override '", assignment, "' has an empty key segment"));
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

namespace {

const char* json_type_name(const json& v) {
  if (v.is_object()) return "object";
  if (v.is_array()) return "array";
  if (v.is_string()) return "string";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
  if (v.is_number()) return "number";
  return "null";
}

bool type_matches(const json& v, const std::string& want) {
  if (want == "object") return v.is_object();
  if (want == "array") return v.is_array();
  if (want == "string") return v.is_string();
  if (want == "boolean") return v.is_boolean();
  if (want == "integer") return v.is_number_integer() || v.is_number_unsigned();
  if (want == "number") return v.is_number();
  return false;
}

}  // namespace

void validate_against_schema(const json& doc, const json& schema,
                             const std::string& path) {
  if (schema.contains("type")) {
    const auto want = schema.at("type").get<std::string>();
    if (!type_matches(doc, want))
      throw ConfigError(msg(path, ": expected ", want, ", got ", json_type_name(doc)));
  }
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& v : schema.at("enum")) ok |= v == doc;
    if (!ok)
      throw ConfigError(msg(path, ": value ", doc.dump(), " not in ",
                            schema.at("enum").dump()));
  }
  if (doc.is_number()) {
    const double v = doc.get<double>();
    if (schema.contains("minimum") && v < schema.at("minimum").get<double>())
      throw ConfigError(msg(path, ": ", v, " below minimum ",
                            schema.at("minimum").get<double>()));
    if (schema.contains("maximum") && v > schema.at("maximum").get<double>())
      throw ConfigError(msg(path, ": ", v, " above maximum ",
                            schema.at("maximum").get<double>()));
    if (schema.contains("exclusiveMaximum") &&
        v >= schema.at("exclusiveMaximum").get<double>())
      throw ConfigError(msg(path, ": ", v, " not below exclusive maximum ",
                            schema.at("exclusiveMaximum").get<double>()));
  }
  if (doc.is_object()) {
    if (schema.contains("required"))
      for (const auto& key : schema.at("required"))
        if (!doc.contains(key.get<std::string>()))
          throw ConfigError(msg(path, ": missing required key '",
                                key.get<std::string>(), "'"));
    const json props =
        schema.contains("properties") ? schema.at("properties") : json::object();
    const bool allow_extra = !schema.contains("additionalProperties") ||
                             schema.at("additionalProperties").get<bool>();
    for (const auto& [key, value] : doc.items()) {
      if (props.contains(key))
        validate_against_schema(value, props.at(key), path + "." + key);
      else if (!allow_extra)
        throw ConfigError(msg(path, ": unknown key '", key, "'"));
    }
  }
  if (doc.is_array()) {
    if (schema.contains("minItems") &&
        doc.size() < schema.at("minItems").get<std::size_t>())
      throw ConfigError(msg(path, ": needs at least ",
                            schema.at("minItems").get<std::size_t>(), " items"));
    if (schema.contains("items"))
      for (std::size_t i = 0; i < doc.size(); ++i)
        validate_against_schema(doc[i], schema.at("items"),
                                msg(path, "[", i, "]"));
  }
}

json network_config_to_json(const NetworkConfig& cfg) {
  json pipes = json::array();
  for (const auto& p : cfg.input_pipelines)
    pipes.push_back(json{{"modality", to_string(p.modality)}, {"roi", to_string(p.roi)}});
  return json{{"name", cfg.name},
              {"conv_kernel_sizes", cfg.conv_kernel_sizes},
              {"conv_filter_counts", cfg.conv_filter_counts},
              {"fc_units", cfg.fc_units},
              {"dropout_rate", cfg.dropout_rate},
              {"roi_size", cfg.roi_size},
              {"num_classes", cfg.num_classes},
              {"share_pipeline_weights", cfg.share_pipeline_weights},
              {"bn_epsilon", cfg.bn_epsilon},
              {"bn_momentum", cfg.bn_momentum},
              {"input_pipelines", pipes}};
}

NetworkConfig network_config_from_json(const json& j) {
  const std::string name = j.value("name", std::string("C1"));
  NetworkConfig cfg =
      name == "custom" ? NetworkConfig{} : NetworkConfig::preset(name);
  cfg.name = name;
  if (name == "custom" || j.contains("conv_kernel_sizes")) {
    if (j.contains("conv_kernel_sizes"))
      cfg.conv_kernel_sizes = j.at("conv_kernel_sizes").get<std::vector<std::size_t>>();
    if (j.contains("conv_filter_counts"))
      cfg.conv_filter_counts =
          j.at("conv_filter_counts").get<std::vector<std::size_t>>();
    if (j.contains("fc_units"))
      cfg.fc_units = j.at("fc_units").get<std::vector<std::size_t>>();
  }
  cfg.dropout_rate = j.value("dropout_rate", cfg.dropout_rate);
  cfg.roi_size = j.value("roi_size", cfg.roi_size);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.share_pipeline_weights =
      j.value("share_pipeline_weights", cfg.share_pipeline_weights);
  cfg.bn_epsilon = j.value("bn_epsilon", cfg.bn_epsilon);
  cfg.bn_momentum = j.value("bn_momentum", cfg.bn_momentum);
  if (j.contains("input_pipelines")) {
    cfg.input_pipelines.clear();
    for (const auto& p : j.at("input_pipelines")) {
      PipelineInput in;
      in.modality = modality_from_string(p.at("modality").get<std::string>());
      const std::string roi = p.at("roi").get<std::string>();
      if (roi == "left_hippocampus")
        in.roi = RoiSel::kLeftHippocampus;
      else if (roi == "right_hippocampus")
        in.roi = RoiSel::kRightHippocampus;
      else if (roi == "merged_LR")
        in.roi = RoiSel::kMergedLR;
      else
        throw ConfigError(msg("unknown roi selector '", roi, "'"));
      cfg.input_pipelines.push_back(in);
    }
  }
  return cfg;
}

json optimizer_config_to_json(const OptimizerConfig& cfg) {
  return json{{"momentum", cfg.momentum},
              {"mu0", cfg.mu0},
              {"lambda", cfg.lambda},
              {"t0", cfg.t0},
              {"schedule",
               cfg.schedule == LrSchedule::kStaircase ? "staircase" : "literal"}};
}

OptimizerConfig optimizer_config_from_json(const json& j) {
  OptimizerConfig cfg;
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.mu0 = j.value("mu0", cfg.mu0);
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.t0 = j.value("t0", cfg.t0);
  const std::string sched = j.value("schedule", std::string("staircase"));
  if (sched == "staircase")
    cfg.schedule = LrSchedule::kStaircase;
  else if (sched == "literal")
    cfg.schedule = LrSchedule::kLiteral;
  else
    throw ConfigError(msg("unknown LR schedule '", sched, "'"));
  cfg.validate();
  return cfg;
}

}  // namespace hippofuse
