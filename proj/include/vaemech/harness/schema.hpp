#pragma once

#include <string>
#include <vector>

#include <rapidjson/document.h>
#include <rapidjson/error/en.h>
#include <rapidjson/schema.h>
#include <rapidjson/stringbuffer.h>

#include "json.hpp"
#include "vaemech/core/error.hpp"

namespace vaemech {

/// Same document as schemas/metrics.schema.json (a test keeps them equal).
inline constexpr const char* kMetricsSchema = R"SCHEMA({
  "$schema": "http://json-schema.org/draft-04/schema#",
  "title": "vaemech metrics report",
  "type": "object",
  "required": [
    "variant", "seed", "dataset", "analysis", "disentanglement_proxy", "ces", "specificity", "modularity",
    "polysemanticity", "monosemantic_fraction", "cluster_labels", "cluster_coherence", "causal_graph",
    "mediation", "m_times_ces", "errors"
  ],
  "definitions": {
    "number_or_null": { "type": ["number", "null"] },
    "per_dim": {
      "type": ["object", "null"],
      "required": ["per_dim", "mean"],
      "properties": {
        "per_dim": { "type": "array", "items": { "type": "number" } },
        "mean": { "type": "number" }
      }
    }
  },
  "properties": {
    "variant": { "enum": ["standard", "beta", "factor"] },
    "seed": { "type": "integer", "minimum": 0 },
    "dataset": {
      "type": "object",
      "required": ["source", "size", "image_size"],
      "properties": {
        "source": { "enum": ["synthetic", "dsprites"] },
        "size": { "type": "integer", "minimum": 1 },
        "image_size": { "type": "integer", "minimum": 1 }
      }
    },
    "analysis": { "type": "object" },
    "disentanglement_proxy": { "type": ["number", "null"], "minimum": 0, "maximum": 1 },
    "ces": { "$ref": "#/definitions/per_dim" },
    "specificity": { "$ref": "#/definitions/per_dim" },
    "modularity": {
      "type": ["object", "null"],
      "required": ["per_site", "degenerate_pairs"],
      "properties": {
        "per_site": {
          "type": "object",
          "additionalProperties": { "type": ["number", "null"], "minimum": 0, "maximum": 1 }
        },
        "degenerate_pairs": { "type": "object", "additionalProperties": { "type": "integer", "minimum": 0 } }
      }
    },
    "polysemanticity": {
      "type": ["object", "null"],
      "required": ["factors", "per_site"],
      "properties": {
        "factors": { "type": "array", "items": { "type": "string" } },
        "per_site": {
          "type": "object",
          "additionalProperties": {
            "type": "object",
            "required": ["mean", "values", "inactive_count", "monosemantic_fraction", "histogram"],
            "properties": {
              "mean": { "type": ["number", "null"] },
              "values": { "type": "array", "items": { "type": ["number", "null"], "minimum": 1 } },
              "inactive_count": { "type": "integer", "minimum": 0 },
              "monosemantic_fraction": { "type": ["number", "null"], "minimum": 0, "maximum": 1 },
              "histogram": {
                "type": "object",
                "required": ["edges", "counts"],
                "properties": {
                  "edges": { "type": "array", "items": { "type": "number" } },
                  "counts": { "type": "array", "items": { "type": "integer", "minimum": 0 } }
                }
              }
            }
          }
        }
      }
    },
    "monosemantic_fraction": { "type": ["number", "null"], "minimum": 0, "maximum": 1 },
    "response_profiles": { "type": ["object", "null"] },
    "cluster_labels": {
      "type": ["object", "null"],
      "required": ["per_site"],
      "properties": {
        "per_site": {
          "type": "object",
          "additionalProperties": { "type": "array", "items": { "type": "integer", "minimum": 0 } }
        }
      }
    },
    "cluster_coherence": { "type": ["number", "null"], "minimum": 0, "maximum": 1 },
    "cluster_coherence_per_site": { "type": ["object", "null"] },
    "motifs": { "type": ["object", "null"] },
    "causal_graph": {
      "type": ["object", "null"],
      "required": ["threshold", "latent_dims", "factors", "edges"],
      "properties": {
        "threshold": { "type": "number" },
        "latent_dims": { "type": "integer", "minimum": 0 },
        "factors": { "type": "array", "items": { "type": "string" } },
        "edges": {
          "type": "array",
          "items": {
            "type": "object",
            "required": ["dim", "factor", "weight"],
            "properties": {
              "dim": { "type": "integer", "minimum": 0 },
              "factor": { "type": "string" },
              "weight": { "type": "number", "minimum": 0, "maximum": 1 }
            }
          }
        },
        "effects": { "type": "array", "items": { "type": "array", "items": { "type": "number", "minimum": 0 } } }
      }
    },
    "mediation": {
      "type": ["object", "null"],
      "required": ["probe", "per_layer_per_dim"],
      "properties": {
        "probe": { "enum": ["mu", "recon"] },
        "factor": { "type": "string" },
        "layers": { "type": "array", "items": { "type": "string" } },
        "per_layer_per_dim": { "type": "array", "items": { "type": "array", "items": { "type": "number" } } },
        "per_layer_mean": { "type": "array", "items": { "type": "number" } }
      }
    },
    "m_times_ces": { "$ref": "#/definitions/number_or_null" },
    "notes": { "type": "array", "items": { "type": "string" } },
    "errors": { "type": "array", "items": { "type": "string" } }
  }
}
)SCHEMA";

/// Schema violations of a metrics report; empty when it is valid.
inline std::vector<std::string> validate_metrics(const nlohmann::json& report) {
    rapidjson::Document sd;
    if (sd.Parse(kMetricsSchema).HasParseError()) throw Error("built-in metrics schema does not parse");
    const rapidjson::SchemaDocument schema(sd);
    rapidjson::Document doc;
    const std::string text = report.dump();
    if (doc.Parse(text.c_str()).HasParseError()) {
        return {std::string("report is not valid JSON: ") + rapidjson::GetParseError_En(doc.GetParseError())};
    }
    rapidjson::SchemaValidator validator(schema);
    if (doc.Accept(validator)) return {};
    rapidjson::StringBuffer where, rule;
    validator.GetInvalidDocumentPointer().StringifyUriFragment(where);
    validator.GetInvalidSchemaPointer().StringifyUriFragment(rule);
    return {std::string("at ") + where.GetString() + ": violates " + rule.GetString() + " (" +
            validator.GetInvalidSchemaKeyword() + ")"};
}

}  // namespace vaemech
