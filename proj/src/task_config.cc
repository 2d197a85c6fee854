#include "vidplat/task_config.h"

#include <set>

namespace vidplat {

using nlohmann::json;

namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& why) {
  throw Error(ErrorCode::kInvalidArgument, path + ": " + why);
}

double number_at(const json& doc, const std::string& name, double fallback) {
  if (!doc.contains(name)) return fallback;
  if (!doc[name].is_number()) field_error(name, "expected a number");
  return doc[name].get<double>();
}

int64_t integer_at(const json& doc, const std::string& name, int64_t fallback) {
  if (!doc.contains(name)) return fallback;
  if (!doc[name].is_number_integer()) field_error(name, "expected an integer");
  return doc[name].get<int64_t>();
}

std::string scalar_text(const json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

}  // namespace

void TaskConfig::validate() const {
  if (budget_ratings < 0) field_error("budget_ratings", "must be >= 0");
  if (max_spend < 0.0) field_error("max_spend", "must be >= 0");
  if (budget_ratings == 0 && max_spend == 0.0) {
    field_error("budget_ratings", "a rating budget or max_spend is required");
  }
  if (!(pay_rate >= 0.0)) field_error("pay_rate", "must be >= 0");
  if (!(generator.params.epsilon > 0.0)) field_error("epsilon", "must be > 0");
  if (fatigue_cap < 1) field_error("fatigue_cap", "must be >= 1");
  if (per_source_cap < 1) field_error("per_source_cap", "must be >= 1");
  if (release_threshold < 1) field_error("release_threshold", "must be >= 1");
  if (!(idle_timeout_s > 0.0)) field_error("idle_timeout_s", "must be > 0");
  if (!(watch_slack >= 0.0 && watch_slack < 1.0)) {
    field_error("watch_slack", "must be in [0,1)");
  }
  try {
    generator.validate(source);
  } catch (const Error& e) {
    field_error("generator", e.what());
  }
}

TaskConfig TaskConfig::from_json(const json& doc) {
  if (!doc.is_object()) field_error("$", "expected a JSON object");
  static const std::set<std::string> known = {
      "source", "generator", "epsilon", "budget_ratings", "max_spend",
      "pay_rate", "eligibility", "fatigue_cap", "per_source_cap",
      "release_threshold", "idle_timeout_s", "watch_slack",
      "count_invalid_in_cost", "seed"};
  for (const auto& [name, value] : doc.items()) {
    if (known.count(name) == 0) field_error(name, "unknown field");
  }

  TaskConfig c;
  if (!doc.contains("source") || !doc["source"].is_object()) {
    field_error("source", "expected an object");
  }
  const json& src = doc["source"];
  try {
    c.source = SourceContent::make(
        src.contains("id") && src["id"].is_string() ? src["id"].get<std::string>()
                                                    : "",
        number_at(src, "duration", 0.0), number_at(src, "chunk_length", 0.0));
  } catch (const Error& e) {
    field_error("source", e.what());
  }

  if (!doc.contains("generator")) field_error("generator", "required");
  try {
    c.generator = GeneratorSpec::from_json(doc["generator"]);
  } catch (const Error& e) {
    field_error("generator", e.what());
  }
  if (doc.contains("epsilon")) {
    const double eps = number_at(doc, "epsilon", 0.0);
    const json& params = doc["generator"].value("params", json::object());
    if (params.contains("epsilon") && params["epsilon"] != doc["epsilon"]) {
      field_error("epsilon", "conflicts with generator.params.epsilon");
    }
    c.generator.params.epsilon = eps;
  }

  c.budget_ratings = static_cast<int>(integer_at(doc, "budget_ratings", 0));
  c.max_spend = number_at(doc, "max_spend", 0.0);
  c.pay_rate = number_at(doc, "pay_rate", c.pay_rate);
  if (doc.contains("eligibility")) {
    if (!doc["eligibility"].is_object()) {
      field_error("eligibility", "expected an object of predicates");
    }
    for (const auto& [key, value] : doc["eligibility"].items()) {
      if (value.is_object() || value.is_array()) {
        field_error("eligibility." + key, "expected a scalar");
      }
      c.eligibility[key] = scalar_text(value);
    }
  }
  c.fatigue_cap = static_cast<int>(integer_at(doc, "fatigue_cap", c.fatigue_cap));
  c.per_source_cap =
      static_cast<int>(integer_at(doc, "per_source_cap", c.per_source_cap));
  c.release_threshold = static_cast<int>(
      integer_at(doc, "release_threshold", c.release_threshold));
  c.idle_timeout_s = number_at(doc, "idle_timeout_s", c.idle_timeout_s);
  c.watch_slack = number_at(doc, "watch_slack", c.watch_slack);
  if (doc.contains("count_invalid_in_cost")) {
    if (!doc["count_invalid_in_cost"].is_boolean()) {
      field_error("count_invalid_in_cost", "expected a boolean");
    }
    c.count_invalid_in_cost = doc["count_invalid_in_cost"].get<bool>();
  }
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned() && !doc["seed"].is_number_integer()) {
      field_error("seed", "expected an integer");
    }
    c.seed = doc["seed"].get<uint64_t>();
  }
  c.validate();
  return c;
}

json TaskConfig::to_json() const {
  return {{"source",
           {{"id", source.id},
            {"duration", source.duration},
            {"chunk_length", source.chunk_length}}},
          {"generator", generator.to_json()},
          {"epsilon", generator.params.epsilon},
          {"budget_ratings", budget_ratings},
          {"max_spend", max_spend},
          {"pay_rate", pay_rate},
          {"eligibility", eligibility},
          {"fatigue_cap", fatigue_cap},
          {"per_source_cap", per_source_cap},
          {"release_threshold", release_threshold},
          {"idle_timeout_s", idle_timeout_s},
          {"watch_slack", watch_slack},
          {"count_invalid_in_cost", count_invalid_in_cost},
          {"seed", seed}};
}

}  // namespace vidplat
