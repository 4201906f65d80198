#pragma once

// Embedded copies of the JSON schemas shipped under schema/. The unit tests
// assert the files and these constants stay in sync.

namespace hippofuse::schemas {

inline constexpr const char* kRunConfig = R"JSON({
  "type": "object",
  "additionalProperties": false,
  "properties": {
    "run": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "classifier_pair": {"type": "string", "enum": ["AD-NC", "AD-MCI", "MCI-NC"]},
        "input_mode": {"type": "string"},
        "iterations": {"type": "integer", "minimum": 0},
        "q": {"type": "integer", "minimum": 2},
        "mini_group_size": {"type": "integer", "minimum": 2},
        "resplit_period": {"type": "integer", "minimum": 1},
        "eval_period": {"type": "integer", "minimum": 1},
        "top_mean_window_iters": {"type": "integer", "minimum": 1},
        "validation_fraction": {"type": "number", "minimum": 0.0, "maximum": 1.0},
        "threads": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "ci_method": {"type": "string", "enum": ["wald", "wilson"]},
        "positive_class": {"type": "string", "enum": ["AD", "MCI", "NC"]},
        "seeds": {"type": "object"}
      }
    },
    "network": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "name": {"type": "string", "enum": ["C1", "C2", "C3", "C4", "custom"]},
        "conv_kernel_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "conv_filter_counts": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "fc_units": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "dropout_rate": {"type": "number", "minimum": 0.0, "exclusiveMaximum": 1.0},
        "roi_size": {"type": "integer", "minimum": 1},
        "num_classes": {"type": "integer", "minimum": 2},
        "share_pipeline_weights": {"type": "boolean"},
        "bn_epsilon": {"type": "number"},
        "bn_momentum": {"type": "number", "minimum": 0.0, "maximum": 1.0},
        "input_pipelines": {"type": "array"}
      }
    },
    "optimizer": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "momentum": {"type": "number", "minimum": 0.0, "exclusiveMaximum": 1.0},
        "mu0": {"type": "number"},
        "lambda": {"type": "number"},
        "t0": {"type": "integer", "minimum": 1},
        "schedule": {"type": "string", "enum": ["staircase", "literal"]}
      }
    },
    "data": {
      "type": "object",
      "additionalProperties": false,
      "required": ["manifest"],
      "properties": {
        "manifest": {"type": "string"}
      }
    },
    "sweep": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "classifier_pairs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "input_modes": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "grid": {
          "type": "array",
          "minItems": 1,
          "items": {
            "type": "object",
            "additionalProperties": false,
            "required": ["roi_size", "configuration"],
            "properties": {
              "roi_size": {"type": "integer", "minimum": 1},
              "configuration": {"type": "string", "enum": ["C1", "C2", "C3", "C4"]}
            }
          }
        }
      }
    }
  }
})JSON";

inline constexpr const char* kManifest = R"JSON({
  "type": "object",
  "additionalProperties": false,
  "required": ["seed", "k", "roi_centers", "subjects", "test_subjects"],
  "properties": {
    "seed": {"type": "integer", "minimum": 0},
    "k": {"type": "integer", "minimum": 1},
    "volume_shape": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3},
    "roi_centers": {
      "type": "object",
      "required": ["left_hippocampus", "right_hippocampus"],
      "properties": {
        "left_hippocampus": {"type": "array", "items": {"type": "integer"}, "minItems": 3},
        "right_hippocampus": {"type": "array", "items": {"type": "integer"}, "minItems": 3}
      }
    },
    "subjects": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "additionalProperties": false,
        "required": ["id", "diagnosis"],
        "properties": {
          "id": {"type": "string"},
          "diagnosis": {"type": "string", "enum": ["AD", "MCI", "NC"]},
          "volumes": {"type": "object"}
        }
      }
    },
    "test_subjects": {"type": "object"}
  }
})JSON";

}  // namespace hippofuse::schemas
