#include "traceadapt/core/event.hpp"

#include <cmath>

#include "traceadapt/core/canonical.hpp"
#include "traceadapt/core/tenant.hpp"
#include "traceadapt/core/units.hpp"

namespace traceadapt {

using nlohmann::json;

std::string_view to_string(EventType t) {
  switch (t) {
    case EventType::Object: return "ObjectEvent";
    case EventType::Aggregation: return "AggregationEvent";
    case EventType::Transformation: return "TransformationEvent";
  }
  return "ObjectEvent";
}

std::optional<EventType> parse_event_type(std::string_view text) {
  if (text == "ObjectEvent") return EventType::Object;
  if (text == "AggregationEvent") return EventType::Aggregation;
  if (text == "TransformationEvent") return EventType::Transformation;
  return std::nullopt;
}

std::vector<std::string> CanonicalEvent::all_epcs() const {
  std::vector<std::string> out = epc_list;
  out.insert(out.end(), inputs.begin(), inputs.end());
  out.insert(out.end(), outputs.begin(), outputs.end());
  return out;
}

bool is_epc_uri(std::string_view text) {
  constexpr std::string_view kPrefix = "urn:epc:";
  if (text.size() <= kPrefix.size() || text.substr(0, kPrefix.size()) != kPrefix) return false;
  for (char c : text) {
    if (static_cast<unsigned char>(c) <= 0x20 || c == 0x7F) return false;
  }
  return true;
}

json to_json(const CanonicalEvent& e) {
  json attrs = json::object();
  for (const auto& [name, attr] : e.attributes) {
    json a = {{"value", attr.value}};
    if (!attr.unit.empty()) a["unit"] = attr.unit;
    attrs[name] = std::move(a);
  }
  json j = {
      {"event_type", to_string(e.event_type)},
      {"event_time", format_utc(e.event_time)},
      {"record_time", format_utc(e.record_time)},
      {"actor", e.actor},
      {"epc_list", e.epc_list},
      {"biz_location", e.biz_location},
      {"biz_step", e.biz_step},
      {"attributes", std::move(attrs)},
      {"tenant", e.tenant},
  };
  if (e.event_type == EventType::Transformation || !e.inputs.empty() || !e.outputs.empty()) {
    j["inputs"] = e.inputs;
    j["outputs"] = e.outputs;
  }
  return j;
}

namespace {

void read_string(const json& j, const char* key, bool required, std::string& out,
                 std::vector<ValidationError>& errors) {
  auto it = j.find(key);
  if (it == j.end()) {
    if (required) errors.push_back(make_error("missing_field", key, "required field is absent"));
    return;
  }
  if (!it->is_string()) {
    errors.push_back(make_error("wrong_type", key, "expected a string"));
    return;
  }
  out = it->get<std::string>();
}

void read_time(const json& j, const char* key, Timestamp& out, std::vector<ValidationError>& errors) {
  std::string text;
  read_string(j, key, true, text, errors);
  if (text.empty()) return;
  auto ts = parse_iso8601(text);
  if (!ts) {
    errors.push_back(make_error("bad_timestamp", key, "'" + text + "' is not an ISO-8601 timestamp"));
    return;
  }
  out = *ts;
}

void read_list(const json& j, const char* key, std::vector<std::string>& out,
               std::vector<ValidationError>& errors) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  if (!it->is_array()) {
    errors.push_back(make_error("wrong_type", key, "expected a list of strings"));
    return;
  }
  for (std::size_t i = 0; i < it->size(); ++i) {
    const auto& el = (*it)[i];
    if (!el.is_string()) {
      errors.push_back(make_error("wrong_type", std::string(key) + "[" + std::to_string(i) + "]",
                                  "expected a string"));
      continue;
    }
    out.push_back(el.get<std::string>());
  }
}

}  // namespace

std::variant<CanonicalEvent, std::vector<ValidationError>> event_from_json(const json& j) {
  std::vector<ValidationError> errors;
  if (!j.is_object()) {
    errors.push_back(make_error("wrong_type", "$", "event must be an object"));
    return errors;
  }
  CanonicalEvent e;
  std::string type_text;
  read_string(j, "event_type", true, type_text, errors);
  if (!type_text.empty()) {
    if (auto t = parse_event_type(type_text)) {
      e.event_type = *t;
    } else {
      errors.push_back(make_error("bad_event_type", "event_type", "unknown event type '" + type_text + "'"));
    }
  }
  read_time(j, "event_time", e.event_time, errors);
  read_time(j, "record_time", e.record_time, errors);
  read_string(j, "actor", true, e.actor, errors);
  read_list(j, "epc_list", e.epc_list, errors);
  read_string(j, "biz_location", true, e.biz_location, errors);
  read_string(j, "biz_step", true, e.biz_step, errors);
  read_list(j, "inputs", e.inputs, errors);
  read_list(j, "outputs", e.outputs, errors);
  read_string(j, "tenant", true, e.tenant, errors);
  if (auto it = j.find("attributes"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) {
      errors.push_back(make_error("wrong_type", "attributes", "expected an object"));
    } else {
      for (const auto& [name, a] : it->items()) {
        std::string locus = "attributes." + name;
        if (!a.is_object() || !a.contains("value")) {
          errors.push_back(make_error("wrong_type", locus, "expected {value, unit}"));
          continue;
        }
        Attribute attr{a.at("value"), {}};
        if (auto u = a.find("unit"); u != a.end()) {
          if (!u->is_string()) {
            errors.push_back(make_error("wrong_type", locus + ".unit", "expected a string"));
            continue;
          }
          attr.unit = u->get<std::string>();
        }
        e.attributes.emplace(name, std::move(attr));
      }
    }
  }
  if (!errors.empty()) return errors;
  return e;
}

std::string identity_bytes(const CanonicalEvent& e) {
  json j = to_json(e);
  j.erase("record_time");
  return canonicalize(j);
}

IdempotencyKey idempotency_key(const CanonicalEvent& e) {
  return compute_idempotency_key(identity_bytes(e));
}

std::vector<ValidationError> validate_event(const CanonicalEvent& e, const EventRules& rules) {
  std::vector<ValidationError> errors;
  auto check_epcs = [&](const std::vector<std::string>& list, const char* name) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!is_epc_uri(list[i])) {
        errors.push_back(make_error("invalid_epc", std::string(name) + "[" + std::to_string(i) + "]",
                                    "'" + list[i] + "' is not an EPC URI (urn:epc:...)"));
      }
    }
  };

  if (e.event_type == EventType::Transformation) {
    if (e.inputs.empty()) {
      errors.push_back(make_error("missing_inputs", "inputs", "transformation needs at least one input EPC"));
    }
    if (e.outputs.empty()) {
      errors.push_back(make_error("missing_outputs", "outputs", "transformation needs at least one output EPC"));
    }
  } else {
    if (e.epc_list.empty()) {
      errors.push_back(make_error("missing_epcs", "epc_list", "at least one EPC is required"));
    }
    if (!e.inputs.empty() || !e.outputs.empty()) {
      errors.push_back(make_error("unexpected_field", e.inputs.empty() ? "outputs" : "inputs",
                                  "inputs/outputs are only allowed on TransformationEvent"));
    }
  }
  check_epcs(e.epc_list, "epc_list");
  check_epcs(e.inputs, "inputs");
  check_epcs(e.outputs, "outputs");

  if (e.actor.empty()) errors.push_back(make_error("missing_field", "actor", "who is empty"));
  if (e.biz_location.empty()) errors.push_back(make_error("missing_field", "biz_location", "where is empty"));
  if (e.biz_step.empty()) errors.push_back(make_error("missing_field", "biz_step", "why is empty"));
  if (!TenantId::is_valid(e.tenant)) {
    errors.push_back(make_error("invalid_tenant", "tenant", "'" + e.tenant + "' is not a tenant id"));
  }
  if (e.event_time > e.record_time + rules.max_clock_skew) {
    errors.push_back(make_error("clock_skew", "event_time",
                                format_utc(e.event_time) + " is after record_time " +
                                    format_utc(e.record_time) + " beyond the allowed skew"));
  }
  for (const auto& [name, attr] : e.attributes) {
    std::string locus = "attributes." + name;
    if (attr.value.is_number_float() && !std::isfinite(attr.value.get<double>())) {
      errors.push_back(make_error("bad_value", locus, "value is not finite"));
    }
    if (!attr.unit.empty() && !is_canonical_unit(attr.unit)) {
      auto canon = canonical_unit_for(attr.unit);
      errors.push_back(make_error("non_canonical_unit", locus,
                                  canon ? "unit '" + attr.unit + "' must be normalized to '" + *canon + "'"
                                        : "unknown unit '" + attr.unit + "'"));
    }
  }
  return errors;
}

}  // namespace traceadapt
