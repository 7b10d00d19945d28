#include <random>

#include "doctest.h"
#include "test_support.hpp"
#include "traceadapt/core/canonical.hpp"
#include "traceadapt/transform/transformer.hpp"

using namespace traceadapt;
using namespace traceadapt::transform;
using nlohmann::json;
using traceadapt::testing::TempDir;

namespace {

const char* kFarmSpec = R"(
name: cmf-harvest
tenant: cmf
source_kind: poll
field_maps:
  - field: epc_list
    from: id
    format: "urn:epc:class:lgtin:5600000.000001.{}"
  - field: event_time
    from: harvest_date
  - field: attributes.weight
    from: weight_g
  - field: attributes.variety
    from: variety
constants:
  event_type: ObjectEvent
  actor: "urn:epc:id:pgln:5600000.00001"
  biz_location: "urn:epc:id:sgln:5600000.00001.0"
  biz_step: harvesting
unit_rules:
  - field: attributes.weight
    from_unit: g
time_rules:
  - field: event_time
    format: "%Y-%m-%d"
)";

const char* kManageSpec = R"(
name: cf-manage
tenant: cf
source_kind: http_push
source_name: manageBatches
field_maps:
  - field: inputs
    from: entry_batches
    format: "urn:epc:class:lgtin:5600000.000001.{}"
  - field: outputs
    from: exit_batches
    format: "urn:epc:class:lgtin:5600001.000002.{}"
  - field: event_time
    from: created_at
constants:
  event_type: TransformationEvent
  actor: "urn:epc:id:pgln:5600001.00001"
  biz_location: "urn:epc:id:sgln:5600001.00001.0"
  biz_step: transforming
)";

const char* kRetailSpec = R"(
name: sn-daily
tenant: sn
source_kind: file_drop
source_name: daily
filespec:
  delimiter: ";"
  header_rows: 2
  comment_prefix: "#"
  columns:
    - name: lot
    - name: date
    - {name: qty, type: integer}
field_maps:
  - field: epc_list
    from: lot
    format: "urn:epc:class:lgtin:5600001.000002.{}"
  - field: event_time
    from: date
  - field: attributes.quantity
    from: qty
constants:
  event_type: ObjectEvent
  actor: "urn:epc:id:pgln:5600002.00001"
  biz_location: "urn:epc:id:sgln:5600002.00001.0"
  biz_step: receiving
time_rules:
  - field: event_time
    format: "%d.%m.%Y %H:%M"
    utc_offset: "+02:00"
)";

MappingSpec load(const char* text) {
  auto r = load_mapping_spec(std::string(text));
  if (auto* errs = std::get_if<std::vector<ConfigError>>(&r)) {
    for (const auto& e : *errs) MESSAGE(e.path << ": " << e.message);
    FAIL("spec did not load");
  }
  return std::get<MappingSpec>(r);
}

std::vector<ConfigError> load_errors(const std::string& text) {
  auto r = load_mapping_spec(text);
  REQUIRE(std::holds_alternative<std::vector<ConfigError>>(r));
  return std::get<std::vector<ConfigError>>(r);
}

bool any_message(const std::vector<ConfigError>& errs, const std::string& needle) {
  return std::any_of(errs.begin(), errs.end(), [&](const ConfigError& e) {
    return e.message.find(needle) != std::string::npos;
  });
}

RawRecord record(const std::string& tenant, SourceKind kind, const std::string& source, std::string payload,
                 ContentType ct = ContentType::StructuredObject) {
  RawRecord r{new_request_id(), TenantId(tenant), kind, source, *parse_iso8601("2024-06-10T12:00:00Z"), ct,
              std::move(payload)};
  return r;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (auto p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size())) s.replace(p, from.size(), to);
  return s;
}

}  // namespace

TEST_SUITE("load_mapping_spec") {
  TEST_CASE("complete specs load") {
    CHECK(load(kFarmSpec).tenant.str() == "cmf");
    CHECK(load(kManageSpec).source_name == "manageBatches");
    auto retail = load(kRetailSpec);
    REQUIRE(retail.filespec);
    CHECK(retail.filespec->delimiter == ';');
    CHECK(retail.filespec->header_rows == 2);
    CHECK(retail.filespec->columns.at(2).type == ColumnType::Integer);
  }

  TEST_CASE("missing epc_list mapping is named") {
    auto text = replace_all(kFarmSpec, "field: epc_list", "field: attributes.lot");
    auto errs = load_errors(text);
    CHECK(any_message(errs, "unmapped required field epc_list"));
  }

  TEST_CASE("unknown canonical field is named") {
    auto errs = load_errors(replace_all(kFarmSpec, "field: attributes.variety", "field: flavour"));
    REQUIRE(any_message(errs, "unknown canonical field 'flavour'"));
    CHECK(errs.front().path == "field_maps[3].field");
  }

  TEST_CASE("every problem is reported at once") {
    auto text = replace_all(replace_all(kFarmSpec, "from_unit: g", "from_unit: furlong"), "  biz_step: harvesting\n", "");
    auto errs = load_errors(text);
    CHECK(any_message(errs, "unknown unit 'furlong'"));
    CHECK(any_message(errs, "unmapped required field biz_step"));
  }

  TEST_CASE("file_drop needs a filespec and columns that exist") {
    auto errs = load_errors(replace_all(kRetailSpec, "from: qty", "from: quantity"));
    CHECK(any_message(errs, "unknown column 'quantity'"));
    auto no_fs = std::string(kFarmSpec);
    no_fs = replace_all(no_fs, "source_kind: poll", "source_kind: file_drop");
    CHECK(any_message(load_errors(no_fs), "required for file_drop"));
  }

  TEST_CASE("transformation specs need inputs and outputs") {
    auto errs = load_errors(replace_all(kManageSpec, "field: outputs", "field: epc_list"));
    CHECK(any_message(errs, "unmapped required field outputs"));
  }
}

TEST_SUITE("apply_mapping") {
  TEST_CASE("farm row in grams becomes kilograms") {
    auto spec = load(kFarmSpec);
    auto out = apply_mapping(
        record("cmf", SourceKind::Poll, "wi", R"({"id":"H-17","weight_g":2500,"variety":"Early Lory","harvest_date":"2024-06-10"})"),
        spec);
    REQUIRE(out.ok());
    const auto& e = std::get<CanonicalEvent>(out.result);
    CHECK(e.event_type == EventType::Object);
    CHECK(e.epc_list == std::vector<std::string>{"urn:epc:class:lgtin:5600000.000001.H-17"});
    CHECK(e.attributes.at("weight").value.get<double>() == 2.5);
    CHECK(e.attributes.at("weight").unit == "kg");
    CHECK(e.attributes.at("variety").value == "Early Lory");
    CHECK(e.event_time == *parse_iso8601("2024-06-10T00:00:00Z"));
    CHECK(e.tenant == "cmf");
    CHECK(validate_event(e).empty());
  }

  TEST_CASE("manage-batches payload becomes a transformation") {
    auto out = apply_mapping(record("cf", SourceKind::HttpPush, "manageBatches",
                                    R"({"entry_batches":["A","B"],"exit_batches":["X"],"created_at":"2024-06-10T09:30:00+02:00"})"),
                             load(kManageSpec));
    REQUIRE(out.ok());
    const auto& e = std::get<CanonicalEvent>(out.result);
    CHECK(e.event_type == EventType::Transformation);
    CHECK(e.inputs == std::vector<std::string>{"urn:epc:class:lgtin:5600000.000001.A",
                                               "urn:epc:class:lgtin:5600000.000001.B"});
    CHECK(e.outputs == std::vector<std::string>{"urn:epc:class:lgtin:5600001.000002.X"});
    CHECK(e.event_time == *parse_iso8601("2024-06-10T07:30:00Z"));
  }

  TEST_CASE("missing source field is reported at its path") {
    auto out = apply_mapping(record("cmf", SourceKind::Poll, "wi", R"({"id":"H-1","variety":"x","harvest_date":"2024-06-10"})"),
                             load(kFarmSpec));
    REQUIRE_FALSE(out.ok());
    const auto& errs = std::get<std::vector<ValidationError>>(out.result);
    REQUIRE(errs.size() == 1);
    CHECK(errs[0].code == "missing_field");
    CHECK(errs[0].locus == "weight_g");
    CHECK(errs[0].message.find("weight_g") != std::string::npos);
  }

  TEST_CASE("broken payloads and times are errors, never events") {
    auto spec = load(kFarmSpec);
    CHECK_FALSE(apply_mapping(record("cmf", SourceKind::Poll, "wi", "{not json"), spec).ok());
    auto bad_time = apply_mapping(
        record("cmf", SourceKind::Poll, "wi", R"({"id":"1","weight_g":1,"variety":"v","harvest_date":"10/06/2024"})"),
        spec);
    REQUIRE_FALSE(bad_time.ok());
    CHECK(std::get<std::vector<ValidationError>>(bad_time.result)[0].code == "bad_time");
  }

  TEST_CASE("delimited line with local time") {
    auto out = apply_mapping(record("sn", SourceKind::FileDrop, "daily", "X1;11.06.2024 08:15;12",
                                    ContentType::DelimitedLine),
                             load(kRetailSpec));
    REQUIRE(out.ok());
    const auto& e = std::get<CanonicalEvent>(out.result);
    CHECK(e.event_time == *parse_iso8601("2024-06-11T06:15:00Z"));
    CHECK(e.attributes.at("quantity").value == 12);
    CHECK(e.epc_list.at(0) == "urn:epc:class:lgtin:5600001.000002.X1");
  }

  TEST_CASE("mapping is deterministic under source key order and spacing") {
    auto spec = load(kFarmSpec);
    std::mt19937 rng(5);
    for (int i = 0; i < 300; ++i) {
      std::vector<std::pair<std::string, json>> fields = {{"id", "L" + std::to_string(rng() % 1000)},
                                                          {"weight_g", static_cast<int>(rng() % 100000)},
                                                          {"variety", "v" + std::to_string(rng() % 7)},
                                                          {"harvest_date", "2024-06-0" + std::to_string(1 + rng() % 9)},
                                                          {"extra", json::array({1, 2})}};
      auto render = [&] {
        std::shuffle(fields.begin(), fields.end(), rng);
        std::string s = "{";
        for (std::size_t k = 0; k < fields.size(); ++k) {
          s += std::string(rng() % 3, ' ') + json(fields[k].first).dump() + ":" + std::string(rng() % 2, '\n') +
               fields[k].second.dump() + (k + 1 < fields.size() ? "," : "");
        }
        return s + "}";
      };
      auto a = apply_mapping(record("cmf", SourceKind::Poll, "wi", render()), spec);
      auto b = apply_mapping(record("cmf", SourceKind::Poll, "wi", render()), spec);
      REQUIRE(a.ok());
      REQUIRE(b.ok());
      CHECK(canonicalize(to_json(std::get<CanonicalEvent>(a.result))) ==
            canonicalize(to_json(std::get<CanonicalEvent>(b.result))));
    }
  }

  TEST_CASE("whatever the input, an emitted event validates") {
    auto spec = load(kFarmSpec);
    std::mt19937 rng(9);
    const std::vector<json> junk = {nullptr, "", "x", -1, 1e308, json::array(), json::object(), "2024-13-40", true};
    int emitted = 0;
    for (int i = 0; i < 2000; ++i) {
      json doc = {{"id", "L1"}, {"weight_g", 1}, {"variety", "v"}, {"harvest_date", "2024-06-10"}};
      for (auto& [k, v] : doc.items()) {
        if (rng() % 4 == 0) v = junk[rng() % junk.size()];
      }
      auto out = apply_mapping(record("cmf", SourceKind::Poll, "wi", doc.dump()), spec);
      if (out.ok()) {
        ++emitted;
        CHECK(validate_event(std::get<CanonicalEvent>(out.result)).empty());
      } else {
        CHECK_FALSE(std::get<std::vector<ValidationError>>(out.result).empty());
      }
    }
    CHECK(emitted > 0);
  }

  TEST_CASE("lookup_path walks objects and arrays") {
    auto doc = json::parse(R"({"a":{"b":[{"c":1},{"c":2}]}})");
    CHECK(*lookup_path(doc, "a.b[1].c") == 2);
    CHECK(lookup_path(doc, "a.b[2].c") == nullptr);
    CHECK(lookup_path(doc, "a.x") == nullptr);
  }

  TEST_CASE("registry prefers the named source") {
    MappingRegistry reg;
    auto generic = load(kManageSpec);
    generic.source_name = "";
    generic.name = "generic";
    reg.add(generic);
    reg.add(load(kManageSpec));
    CHECK(reg.select(TenantId("cf"), SourceKind::HttpPush, "manageBatches")->name == "cf-manage");
    CHECK(reg.select(TenantId("cf"), SourceKind::HttpPush, "entryBatch")->name == "generic");
    CHECK(reg.select(TenantId("cmf"), SourceKind::HttpPush, "entryBatch") == nullptr);
  }
}

TEST_SUITE("transformer") {
  struct Rig {
    TempDir dir;
    broker::Broker broker{dir / "broker"};
    status::StatusStore store{dir / "status.log"};
    MappingRegistry registry;

    Rig() {
      for (const char* t : {"cmf.raw", "cmf.epcis", "cmf.dlq"}) broker.create_topic(t);
      registry.add(load(kFarmSpec));
    }

    std::string ingest(const std::string& payload) {
      auto r = record("cmf", SourceKind::Poll, "wi", payload);
      store.record_received(r.request_id, r.tenant);
      REQUIRE(std::holds_alternative<std::uint64_t>(broker.append("cmf.raw", r.request_id, to_json(r).dump())));
      return r.request_id;
    }
  };

  std::string good(int i) {
    return json{{"id", "L" + std::to_string(i)}, {"weight_g", 1000 + i}, {"variety", "v"}, {"harvest_date", "2024-06-10"}}
        .dump();
  }

  TEST_CASE("valid records reach the epcis topic and malformed ones fail into the dlq") {
    Rig rig;
    auto ok_id = rig.ingest(good(1));
    auto bad_id = rig.ingest(R"({"id":"L2"})");
    Transformer t(rig.broker, rig.store, rig.registry, TenantId("cmf"));
    CHECK(t.run_once() == 2);
    CHECK(t.caught_up());

    CHECK(rig.store.get(ok_id)->state == status::State::Translated);
    auto failed = rig.store.get(bad_id);
    CHECK(failed->state == status::State::Failed);
    CHECK(failed->errors.size() == 3);

    auto epcis = rig.broker.read("cmf.epcis", 0, 10);
    REQUIRE(epcis.size() == 1);
    auto msg = json::parse(epcis[0].payload);
    CHECK(msg["request_id"] == ok_id);
    auto event = std::get<CanonicalEvent>(event_from_json(msg["event"]));
    CHECK(epcis[0].key == idempotency_key(event).hex());

    auto dlq = rig.broker.read("cmf.dlq", 0, 10);
    REQUIRE(dlq.size() == 1);
    CHECK(json::parse(dlq[0].payload)["request_id"] == bad_id);
    CHECK(rig.broker.committed("cmf.raw", "transform") == 1u);
  }

  TEST_CASE("restart mid-stream loses no outcome") {
    Rig rig;
    std::vector<std::string> ids;
    std::mt19937 rng(3);
    for (int i = 0; i < 200; ++i) ids.push_back(rig.ingest(rng() % 5 == 0 ? R"({"id":"x"})" : good(i)));
    {
      Transformer t(rig.broker, rig.store, rig.registry, TenantId("cmf"), {.batch = 7});
      t.run_once();
      t.run_once();
    }
    {
      Transformer t(rig.broker, rig.store, rig.registry, TenantId("cmf"));
      t.start();
      for (int i = 0; i < 200 && !t.caught_up(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));
      t.stop();
    }
    std::size_t translated = 0, failed = 0;
    for (const auto& id : ids) {
      auto s = rig.store.get(id);
      translated += s->state == status::State::Translated;
      failed += s->state == status::State::Failed;
    }
    CHECK(translated + failed == ids.size());
    CHECK(rig.broker.stats("cmf.dlq").latest_offset == failed);
    CHECK(rig.broker.stats("cmf.epcis").latest_offset == translated);
  }

  TEST_CASE("a redelivered Translated record is re-published, not re-recorded") {
    Rig rig;
    auto id = rig.ingest(good(1));
    {
      Transformer t(rig.broker, rig.store, rig.registry, TenantId("cmf"));
      t.run_once();
    }
    // Simulate a crash before the offset commit by consuming under a fresh group.
    Transformer t(rig.broker, rig.store, rig.registry, TenantId("cmf"), {.group = "replay"});
    t.run_once();
    CHECK(rig.store.get(id)->history.size() == 2);
    auto epcis = rig.broker.read("cmf.epcis", 0, 10);
    REQUIRE(epcis.size() == 2);
    CHECK(epcis[0].key == epcis[1].key);
  }
}
