#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "traceadapt/core/digest.hpp"
#include "traceadapt/core/time.hpp"
#include "traceadapt/core/validation.hpp"

namespace traceadapt {

enum class EventType { Object, Aggregation, Transformation };

std::string_view to_string(EventType t);
std::optional<EventType> parse_event_type(std::string_view text);

/// "How" detail: a value plus an optional unit (mass is always kilograms).
struct Attribute {
  nlohmann::json value;
  std::string unit;

  bool operator==(const Attribute&) const = default;
};

/// EPCIS-style 5W1H traceability record. Field names in the JSON interchange
/// form match the member names exactly.
struct CanonicalEvent {
  EventType event_type = EventType::Object;
  Timestamp event_time{};
  Timestamp record_time{};
  std::string actor;
  std::vector<std::string> epc_list;
  std::string biz_location;
  std::string biz_step;
  std::map<std::string, Attribute> attributes;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string tenant;

  bool operator==(const CanonicalEvent&) const = default;

  /// Every EPC the event references: epc_list, inputs, then outputs.
  std::vector<std::string> all_epcs() const;
};

nlohmann::json to_json(const CanonicalEvent& e);

/// Structural decode of the interchange form. Semantic rules are left to
/// validate_event.
std::variant<CanonicalEvent, std::vector<ValidationError>> event_from_json(const nlohmann::json& j);

/// Canonical bytes identifying the logical event. record_time is excluded: it
/// marks when this copy arrived, so resubmissions of one event share a key.
std::string identity_bytes(const CanonicalEvent& e);

IdempotencyKey idempotency_key(const CanonicalEvent& e);

struct EventRules {
  std::chrono::milliseconds max_clock_skew = std::chrono::hours{24};
};

/// Empty result means the event satisfies every invariant.
std::vector<ValidationError> validate_event(const CanonicalEvent& e, const EventRules& rules = {});

bool is_epc_uri(std::string_view text);

}  // namespace traceadapt
