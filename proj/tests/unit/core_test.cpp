#include <random>
#include <unordered_set>

#include "doctest.h"
#include "traceadapt/core/canonical.hpp"
#include "traceadapt/core/digest.hpp"
#include "traceadapt/core/event.hpp"
#include "traceadapt/core/raw_record.hpp"
#include "traceadapt/core/tenant.hpp"
#include "traceadapt/core/units.hpp"

using namespace traceadapt;
using nlohmann::json;

namespace {

// Independent text writer with shuffled member order and random whitespace,
// so the canonicalizer sees genuinely different source texts.
void write_shuffled(const json& v, std::mt19937& rng, std::string& out) {
  auto ws = [&] {
    static const char* kSpace[] = {"", " ", "\n", "\t", "  \r\n "};
    out += kSpace[rng() % 5];
  };
  if (v.is_object()) {
    std::vector<std::string> keys;
    for (const auto& [k, _] : v.items()) keys.push_back(k);
    std::shuffle(keys.begin(), keys.end(), rng);
    out += "{";
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (i) out += ",";
      ws();
      out += json(keys[i]).dump();
      ws();
      out += ":";
      ws();
      write_shuffled(v.at(keys[i]), rng, out);
      ws();
    }
    out += "}";
  } else if (v.is_array()) {
    out += "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ",";
      ws();
      write_shuffled(v[i], rng, out);
    }
    ws();
    out += "]";
  } else if (v.is_number_float() && rng() % 2 == 0) {
    // Same value, different spelling.
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17e", v.get<double>());
    out += buf;
  } else {
    out += v.dump();
  }
}

json random_value(std::mt19937& rng, int depth) {
  int pick = static_cast<int>(rng() % (depth > 2 ? 5 : 7));
  switch (pick) {
    case 0: return nullptr;
    case 1: return rng() % 2 == 0;
    case 2: return static_cast<std::int64_t>(rng() % 2000) - 1000;
    case 3: return std::uniform_real_distribution<double>(-1e6, 1e6)(rng);
    case 4: {
      std::string s;
      auto len = rng() % 8;
      for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<char>('a' + rng() % 26));
      if (rng() % 4 == 0) s += "\xc3\xa9\n\"";
      return s;
    }
    case 5: {
      json arr = json::array();
      auto n = rng() % 4;
      for (std::size_t i = 0; i < n; ++i) arr.push_back(random_value(rng, depth + 1));
      return arr;
    }
    default: {
      json obj = json::object();
      auto n = rng() % 5;
      for (std::size_t i = 0; i < n; ++i) {
        obj["k" + std::to_string(rng() % 10)] = random_value(rng, depth + 1);
      }
      return obj;
    }
  }
}

CanonicalEvent sample_event() {
  CanonicalEvent e;
  e.event_type = EventType::Object;
  e.event_time = *parse_iso8601("2024-06-10T08:00:00Z");
  e.record_time = *parse_iso8601("2024-06-10T09:00:00Z");
  e.actor = "urn:epc:id:sgln:5600000.00001.0";
  e.epc_list = {"urn:epc:class:lgtin:5600000.000001.LOT-1"};
  e.biz_location = "urn:epc:id:sgln:5600000.00001.1";
  e.biz_step = "commissioning";
  e.attributes["weight"] = {2.5, "kg"};
  e.attributes["variety"] = {"Early Lory", ""};
  e.tenant = "cmf";
  return e;
}

}  // namespace

TEST_SUITE("canonicalize") {
  TEST_CASE("key order does not matter") {
    auto a = json::parse(R"({"b":1,"a":2})");
    auto b = json::parse(R"({"a":2,"b":1})");
    CHECK(canonicalize(a) == canonicalize(b));
    CHECK(canonicalize(a) == R"({"a":2,"b":1})");
  }

  TEST_CASE("empty object is two bytes") { CHECK(canonicalize(json::object()) == "{}"); }

  TEST_CASE("distinct values are distinct bytes") {
    CHECK(canonicalize(json::parse(R"({"a":1})")) != canonicalize(json::parse(R"({"a":2})")));
  }

  TEST_CASE("numbers have one form") {
    CHECK(canonicalize(json::parse("2.0")) == "2");
    CHECK(canonicalize(json::parse("2")) == "2");
    CHECK(canonicalize(json::parse("-0.0")) == "0");
    CHECK(canonicalize(json::parse("2.5e0")) == "2.5");
    CHECK(canonicalize(json::parse("1152921504606846976")) == canonicalize(json::parse("1.152921504606846976e18")));
    CHECK(canonicalize(json::parse("0.1")) == "0.1");
  }

  TEST_CASE("strings are escaped minimally and stay UTF-8") {
    CHECK(canonicalize(json("a\"b\\c\n\x01")) == "\"a\\\"b\\\\c\\n\\u0001\"");
    CHECK(canonicalize(json("caf\xc3\xa9")) == "\"caf\xc3\xa9\"");
    CHECK(canonicalize(json::parse(R"("é")")) == "\"\xc3\xa9\"");
  }

  TEST_CASE("non-finite numbers are rejected") {
    CHECK_THROWS_AS(canonicalize(json(std::numeric_limits<double>::infinity())), CanonicalizationError);
    CHECK_THROWS_AS(canonicalize(json{{"x", std::nan("")}}), CanonicalizationError);
  }

  TEST_CASE("invalid UTF-8 is rejected") {
    CHECK_THROWS_AS(canonicalize(json(std::string("\xff\xfe"))), CanonicalizationError);
    CHECK_THROWS_AS(canonicalize(json(std::string("\xed\xa0\x80"))), CanonicalizationError);
  }

  TEST_CASE("property: equal up to ordering and whitespace iff equal bytes") {
    std::mt19937 rng(20240601);
    for (int i = 0; i < 2000; ++i) {
      json original = random_value(rng, 0);
      std::string text;
      write_shuffled(original, rng, text);
      json reparsed = json::parse(text);
      auto canon = canonicalize(original);
      REQUIRE(canonicalize(reparsed) == canon);
      // The canonical text parses back to an equal value.
      CHECK(json::parse(canon) == original);

      json other = random_value(rng, 0);
      if (other != original) CHECK(canonicalize(other) != canon);
    }
  }
}

TEST_SUITE("idempotency key") {
  TEST_CASE("deterministic and order-insensitive") {
    auto a = canonicalize(json::parse(R"({"lot":"A1","w":2500})"));
    auto b = canonicalize(json::parse(R"({ "w" : 2500, "lot" : "A1" })"));
    CHECK(compute_idempotency_key(a) == compute_idempotency_key(a));
    CHECK(compute_idempotency_key(a) == compute_idempotency_key(b));
    CHECK(compute_idempotency_key(a).hex().size() == 64);
  }

  TEST_CASE("one character changes the key") {
    auto a = canonicalize(json::parse(R"({"lot":"A1"})"));
    auto b = canonicalize(json::parse(R"({"lot":"A2"})"));
    CHECK(compute_idempotency_key(a) != compute_idempotency_key(b));
  }

  TEST_CASE("known SHA-256 vector") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(compute_idempotency_key("{}").hex() == sha256_hex("{}"));
  }

  TEST_CASE("hex round trip") {
    auto k = compute_idempotency_key("x");
    auto back = IdempotencyKey::from_hex(k.hex());
    REQUIRE(back);
    CHECK(*back == k);
    CHECK_FALSE(IdempotencyKey::from_hex("ABC"));
    CHECK_FALSE(IdempotencyKey::from_hex(std::string(64, 'G')));
  }

  TEST_CASE("no collisions over 100000 distinct events") {
    std::unordered_set<std::string> seen;
    auto e = sample_event();
    constexpr int kEvents = 100'000;
    for (int i = 0; i < kEvents; ++i) {
      e.epc_list = {"urn:epc:class:lgtin:5600000.000001.LOT-" + std::to_string(i)};
      e.attributes["weight"].value = 1.0 + (i % 97) * 0.25;
      seen.insert(idempotency_key(e).hex());
    }
    CHECK(seen.size() == kEvents);
  }

  TEST_CASE("record_time does not take part in the key") {
    auto a = sample_event();
    auto b = a;
    b.record_time += std::chrono::minutes{5};
    CHECK(idempotency_key(a) == idempotency_key(b));
    b.biz_step = "shipping";
    CHECK(idempotency_key(a) != idempotency_key(b));
  }
}

TEST_SUITE("validate_event") {
  TEST_CASE("valid ObjectEvent passes") { CHECK(validate_event(sample_event()).empty()); }

  TEST_CASE("empty epc_list reports missing_epcs at epc_list") {
    auto e = sample_event();
    e.epc_list.clear();
    auto errs = validate_event(e);
    REQUIRE(errs.size() == 1);
    CHECK(errs[0].code == "missing_epcs");
    CHECK(errs[0].locus == "epc_list");
    CHECK(errs[0].message.find("epc_list") != std::string::npos);
  }

  TEST_CASE("event_time 48h after record_time breaks the default 24h skew bound") {
    EventRules rules;
    auto e = sample_event();
    e.event_time = e.record_time + 2 * rules.max_clock_skew;
    auto errs = validate_event(e, rules);
    REQUIRE(errs.size() == 1);
    CHECK(errs[0].code == "clock_skew");
    CHECK(errs[0].locus == "event_time");
    e.event_time = e.record_time + rules.max_clock_skew;
    CHECK(validate_event(e, rules).empty());
  }

  TEST_CASE("transformation needs inputs and outputs") {
    auto e = sample_event();
    e.event_type = EventType::Transformation;
    e.epc_list.clear();
    auto errs = validate_event(e);
    REQUIRE(errs.size() == 2);
    CHECK(errs[0].code == "missing_inputs");
    CHECK(errs[1].code == "missing_outputs");
    e.inputs = {"urn:epc:class:lgtin:5600000.000001.A"};
    e.outputs = {"urn:epc:class:lgtin:5600000.000002.X"};
    CHECK(validate_event(e).empty());
  }

  TEST_CASE("non-canonical units and bad EPCs name their locus") {
    auto e = sample_event();
    e.attributes["weight"] = {2500, "g"};
    e.epc_list.push_back("LOT-7");
    auto errs = validate_event(e);
    REQUIRE(errs.size() == 2);
    CHECK(errs[0].locus == "epc_list[1]");
    CHECK(errs[1].code == "non_canonical_unit");
    CHECK(errs[1].locus == "attributes.weight");
  }

  TEST_CASE("property: validator agrees with direct invariant checks") {
    std::mt19937 rng(7);
    EventRules rules;
    for (int i = 0; i < 5000; ++i) {
      auto e = sample_event();
      if (rng() % 4 == 0) e.epc_list.clear();
      if (rng() % 6 == 0) e.event_type = EventType::Transformation;
      if (rng() % 3 == 0) e.inputs = {"urn:epc:class:lgtin:1.1.in"};
      if (rng() % 3 == 0) e.outputs = {"urn:epc:class:lgtin:1.1.out"};
      if (rng() % 8 == 0) e.actor.clear();
      if (rng() % 8 == 0) e.tenant = "Bad Tenant";
      if (rng() % 8 == 0) e.attributes["weight"].unit = "lb";
      if (rng() % 8 == 0) e.epc_list.push_back("not-an-epc");
      e.event_time = e.record_time + std::chrono::hours{static_cast<int>(rng() % 60) - 30};

      bool transformation = e.event_type == EventType::Transformation;
      bool epcs_ok = transformation ? (!e.inputs.empty() && !e.outputs.empty())
                                    : (!e.epc_list.empty() && e.inputs.empty() && e.outputs.empty());
      bool uris_ok = true;
      for (const auto& epc : e.all_epcs()) uris_ok = uris_ok && epc.rfind("urn:epc:", 0) == 0;
      bool expected_ok = epcs_ok && uris_ok && !e.actor.empty() && e.tenant == "cmf" &&
                         e.attributes["weight"].unit == "kg" && e.event_time <= e.record_time + rules.max_clock_skew;
      CHECK(validate_event(e, rules).empty() == expected_ok);
    }
  }

  TEST_CASE("json round trip preserves the event") {
    auto e = sample_event();
    e.event_type = EventType::Transformation;
    e.inputs = {"urn:epc:class:lgtin:1.1.in"};
    e.outputs = {"urn:epc:class:lgtin:1.1.out"};
    auto decoded = event_from_json(json::parse(to_json(e).dump()));
    REQUIRE(std::holds_alternative<CanonicalEvent>(decoded));
    CHECK(std::get<CanonicalEvent>(decoded) == e);
  }

  TEST_CASE("structural decode errors carry loci") {
    auto decoded = event_from_json(json::parse(R"({"event_type":"Nope","epc_list":[1]})"));
    REQUIRE(std::holds_alternative<std::vector<ValidationError>>(decoded));
    const auto& errs = std::get<std::vector<ValidationError>>(decoded);
    auto has = [&](const std::string& locus) {
      return std::any_of(errs.begin(), errs.end(), [&](const auto& e) { return e.locus == locus; });
    };
    CHECK(has("event_type"));
    CHECK(has("epc_list[0]"));
    CHECK(has("actor"));
  }
}

TEST_SUITE("time and units") {
  TEST_CASE("ISO-8601 parsing normalizes to UTC") {
    auto t = parse_iso8601("2024-06-10T10:00:00+02:00");
    REQUIRE(t);
    CHECK(format_utc(*t) == "2024-06-10T08:00:00.000Z");
    CHECK(format_utc(*parse_iso8601("2024-06-10")) == "2024-06-10T00:00:00.000Z");
    CHECK(format_utc(*parse_iso8601("2024-06-10T08:00:00.5Z")) == "2024-06-10T08:00:00.500Z");
    CHECK_FALSE(parse_iso8601("2024-13-01"));
    CHECK_FALSE(parse_iso8601("yesterday"));
  }

  TEST_CASE("strptime formats with an offset") {
    auto t = parse_with_format("10/06/2024 10:30", "%d/%m/%Y %H:%M", std::chrono::minutes{60});
    REQUIRE(t);
    CHECK(format_utc(*t) == "2024-06-10T09:30:00.000Z");
    CHECK_FALSE(parse_with_format("10/06/2024 junk", "%d/%m/%Y", std::chrono::minutes{0}));
  }

  TEST_CASE("2500 g is 2.5 kg") {
    auto m = to_canonical_unit(2500, "g");
    REQUIRE(m);
    CHECK(m->value == 2.5);
    CHECK(m->unit == "kg");
    CHECK_FALSE(to_canonical_unit(1, "furlong"));
  }

  TEST_CASE("tenant ids") {
    CHECK(TenantId::is_valid("cmf"));
    CHECK(TenantId::is_valid("farm-01"));
    CHECK_FALSE(TenantId::is_valid(""));
    CHECK_FALSE(TenantId::is_valid("CMF"));
    CHECK_FALSE(TenantId::is_valid(std::string(65, 'a')));
    CHECK_THROWS(TenantId("a.b"));
  }

  TEST_CASE("raw record json round trip") {
    RawRecord r{new_request_id(), TenantId("cf"), SourceKind::FileDrop, "daily", now_utc(),
                ContentType::DelimitedLine, "a;b;c"};
    auto back = raw_record_from_json(to_json(r));
    CHECK(back.request_id == r.request_id);
    CHECK(back.tenant == r.tenant);
    CHECK(back.source_kind == SourceKind::FileDrop);
    CHECK(back.payload == "a;b;c");
    CHECK(r.request_id.size() == 36);
    CHECK(new_request_id() != r.request_id);
  }
}
