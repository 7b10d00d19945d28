#include "traceadapt/transform/mapping.hpp"

#include <cmath>
#include <set>

#include <yaml-cpp/yaml.h>

#include "traceadapt/core/units.hpp"

namespace traceadapt::transform {

using nlohmann::json;

namespace {

const std::set<std::string> kScalarFields = {"event_type", "event_time", "actor", "biz_location", "biz_step"};
const std::set<std::string> kListFields = {"epc_list", "inputs", "outputs"};

bool is_attribute(const std::string& field) { return field.rfind("attributes.", 0) == 0 && field.size() > 11; }

bool known_field(const std::string& field) {
  return kScalarFields.count(field) || kListFields.count(field) || is_attribute(field);
}

std::string attribute_name(const std::string& field) { return field.substr(11); }

json yaml_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Sequence: {
      json arr = json::array();
      for (const auto& e : n) arr.push_back(yaml_to_json(e));
      return arr;
    }
    case YAML::NodeType::Map: {
      json obj = json::object();
      for (const auto& kv : n) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    case YAML::NodeType::Scalar: {
      const auto& s = n.Scalar();
      if (n.Tag() == "!") return s;  // explicitly quoted
      if (s == "true" || s == "false") return s == "true";
      try {
        std::size_t used = 0;
        auto i = std::stoll(s, &used);
        if (used == s.size()) return i;
        auto d = std::stod(s, &used);
        if (used == s.size() && std::isfinite(d)) return d;
      } catch (const std::exception&) {
      }
      return s;
    }
    default:
      return nullptr;
  }
}

std::optional<std::chrono::minutes> parse_offset(const std::string& text) {
  if (text == "Z" || text.empty()) return std::chrono::minutes{0};
  if (text.size() != 6 || (text[0] != '+' && text[0] != '-') || text[3] != ':') return std::nullopt;
  try {
    int h = std::stoi(text.substr(1, 2));
    int m = std::stoi(text.substr(4, 2));
    if (h > 14 || m > 59) return std::nullopt;
    auto total = std::chrono::minutes(h * 60 + m);
    return text[0] == '-' ? -total : total;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

struct Loader {
  std::vector<ConfigError> errors;

  void error(const std::string& path, std::string message) { errors.push_back({path, std::move(message)}); }

  std::optional<std::string> scalar(const YAML::Node& n, const std::string& key, const std::string& base,
                                    bool required) {
    auto v = n[key];
    if (!v) {
      if (required) error(base + "." + key, "required");
      return std::nullopt;
    }
    if (!v.IsScalar()) {
      error(base + "." + key, "must be a scalar");
      return std::nullopt;
    }
    return v.Scalar();
  }
};

std::string join_path(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

}  // namespace

std::variant<FileSpec, std::vector<ConfigError>> load_filespec(const YAML::Node& node, const std::string& base) {
  Loader l;
  FileSpec fs;
  if (!node.IsMap()) return std::vector<ConfigError>{{base, "filespec must be a mapping"}};
  if (auto d = l.scalar(node, "delimiter", base, false)) {
    if (*d == "\\t" || *d == "tab") {
      fs.delimiter = '\t';
    } else if (d->size() == 1 && *d != "\"") {
      fs.delimiter = (*d)[0];
    } else {
      l.error(base + ".delimiter", "must be a single character");
    }
  }
  if (auto h = l.scalar(node, "header_rows", base, false)) {
    try {
      auto v = std::stoll(*h);
      if (v < 0) throw std::out_of_range("negative");
      fs.header_rows = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      l.error(base + ".header_rows", "must be a non-negative integer");
    }
  }
  if (auto c = l.scalar(node, "comment_prefix", base, false)) fs.comment_prefix = *c;
  auto cols = node["columns"];
  if (!cols || !cols.IsSequence() || cols.size() == 0) {
    l.error(base + ".columns", "must be a non-empty list");
  } else {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      auto path = base + ".columns[" + std::to_string(i) + "]";
      ColumnSpec col;
      if (cols[i].IsScalar()) {
        col.name = cols[i].Scalar();
      } else if (cols[i].IsMap()) {
        col.name = l.scalar(cols[i], "name", path, true).value_or("");
        if (auto t = l.scalar(cols[i], "type", path, false)) {
          if (auto ct = parse_column_type(*t)) col.type = *ct;
          else l.error(path + ".type", "unknown column type '" + *t + "'");
        }
        if (auto r = cols[i]["required"]) col.required = r.as<bool>(true);
      } else {
        l.error(path, "must be a name or a mapping");
        continue;
      }
      if (col.name.empty()) continue;
      if (!seen.insert(col.name).second) l.error(path, "duplicate column '" + col.name + "'");
      fs.columns.push_back(col);
    }
  }
  if (!l.errors.empty()) return l.errors;
  return fs;
}

std::variant<MappingSpec, std::vector<ConfigError>> load_mapping_spec(const YAML::Node& node, const std::string& base) {
  Loader l;
  MappingSpec spec;
  if (!node.IsMap()) return std::vector<ConfigError>{{base, "mapping spec must be a mapping"}};

  spec.name = l.scalar(node, "name", base, false).value_or("");
  if (auto t = l.scalar(node, "tenant", base, true)) {
    if (auto id = TenantId::parse(*t)) spec.tenant = *id;
    else l.error(join_path(base, "tenant"), "invalid tenant id '" + *t + "'");
  }
  if (auto k = l.scalar(node, "source_kind", base, true)) {
    if (auto sk = parse_source_kind(*k)) spec.source_kind = *sk;
    else l.error(join_path(base, "source_kind"), "unknown source kind '" + *k + "'");
  }
  spec.source_name = l.scalar(node, "source_name", base, false).value_or("");

  std::set<std::string> produced;
  auto claim = [&](const std::string& field, const std::string& path) {
    if (!known_field(field)) {
      l.error(path, "unknown canonical field '" + field + "'");
      return;
    }
    if (!produced.insert(field).second) l.error(path, "field '" + field + "' is produced more than once");
  };

  if (auto fms = node["field_maps"]) {
    if (!fms.IsSequence()) l.error(join_path(base, "field_maps"), "must be a list");
    for (std::size_t i = 0; fms.IsSequence() && i < fms.size(); ++i) {
      auto path = join_path(base, "field_maps[" + std::to_string(i) + "]");
      FieldMap fm;
      fm.field = l.scalar(fms[i], "field", path, true).value_or("");
      auto from = fms[i]["from"];
      if (from && from.IsScalar()) {
        fm.from.push_back(from.Scalar());
      } else if (from && from.IsSequence() && from.size() > 0) {
        for (const auto& f : from) fm.from.push_back(f.as<std::string>());
      } else {
        l.error(path + ".from", "required: a source path or a list of them");
      }
      fm.format = l.scalar(fms[i], "format", path, false).value_or("");
      if (auto o = fms[i]["optional"]) fm.optional = o.as<bool>(false);
      if (fm.from.size() > 1 && fm.format.empty()) l.error(path + ".format", "required when combining several sources");
      if (!fm.field.empty()) claim(fm.field, path + ".field");
      spec.field_maps.push_back(std::move(fm));
    }
  }

  std::optional<EventType> constant_type;
  if (auto cs = node["constants"]) {
    if (!cs.IsMap()) l.error(join_path(base, "constants"), "must be a mapping");
    for (auto it = cs.begin(); cs.IsMap() && it != cs.end(); ++it) {
      auto field = it->first.as<std::string>();
      auto path = join_path(base, "constants." + field);
      claim(field, path);
      auto value = yaml_to_json(it->second);
      if (field == "event_type") {
        constant_type = value.is_string() ? parse_event_type(value.get<std::string>()) : std::nullopt;
        if (!constant_type) l.error(path, "unknown event type");
      }
      spec.constants.emplace_back(field, std::move(value));
    }
  }

  if (auto urs = node["unit_rules"]) {
    for (std::size_t i = 0; urs.IsSequence() && i < urs.size(); ++i) {
      auto path = join_path(base, "unit_rules[" + std::to_string(i) + "]");
      UnitRule ur;
      ur.field = l.scalar(urs[i], "field", path, true).value_or("");
      ur.from_unit = l.scalar(urs[i], "from_unit", path, false).value_or("");
      ur.unit_from = l.scalar(urs[i], "unit_from", path, false).value_or("");
      if (!ur.field.empty() && (!is_attribute(ur.field) || !produced.count(ur.field))) {
        l.error(path + ".field", "'" + ur.field + "' is not a mapped attribute");
      }
      if (ur.from_unit.empty() == ur.unit_from.empty()) {
        l.error(path, "set exactly one of from_unit and unit_from");
      } else if (!ur.from_unit.empty() && !canonical_unit_for(ur.from_unit)) {
        l.error(path + ".from_unit", "unknown unit '" + ur.from_unit + "'");
      }
      spec.unit_rules.push_back(std::move(ur));
    }
  }

  if (auto trs = node["time_rules"]) {
    for (std::size_t i = 0; trs.IsSequence() && i < trs.size(); ++i) {
      auto path = join_path(base, "time_rules[" + std::to_string(i) + "]");
      TimeRule tr;
      tr.field = l.scalar(trs[i], "field", path, true).value_or("");
      tr.format = l.scalar(trs[i], "format", path, true).value_or("");
      if (!tr.field.empty() && tr.field != "event_time") l.error(path + ".field", "only event_time can take a time rule");
      if (auto off = l.scalar(trs[i], "utc_offset", path, false)) {
        if (auto m = parse_offset(*off)) tr.utc_offset = *m;
        else l.error(path + ".utc_offset", "expected Z or +HH:MM");
      }
      spec.time_rules.push_back(std::move(tr));
    }
  }

  if (auto fsn = node["filespec"]) {
    auto fs = load_filespec(fsn, join_path(base, "filespec"));
    if (auto* errs = std::get_if<std::vector<ConfigError>>(&fs)) {
      l.errors.insert(l.errors.end(), errs->begin(), errs->end());
    } else {
      spec.filespec = std::get<FileSpec>(fs);
    }
  } else if (spec.source_kind == SourceKind::FileDrop) {
    l.error(join_path(base, "filespec"), "required for file_drop sources");
  }
  if (spec.filespec) {
    std::set<std::string> columns;
    for (const auto& c : spec.filespec->columns) columns.insert(c.name);
    for (std::size_t i = 0; i < spec.field_maps.size(); ++i) {
      for (const auto& from : spec.field_maps[i].from) {
        auto head = from.substr(0, from.find_first_of(".["));
        if (!columns.count(head)) {
          l.error(join_path(base, "field_maps[" + std::to_string(i) + "].from"), "unknown column '" + head + "'");
        }
      }
    }
  }

  // Completeness: every required canonical field must come from somewhere.
  for (const auto& f : kScalarFields) {
    if (!produced.count(f)) l.error(join_path(base, "field_maps"), "unmapped required field " + f);
  }
  bool has_io = produced.count("inputs") && produced.count("outputs");
  if (constant_type == EventType::Transformation) {
    for (const char* f : {"inputs", "outputs"}) {
      if (!produced.count(f)) l.error(join_path(base, "field_maps"), std::string("unmapped required field ") + f);
    }
  } else if (!produced.count("epc_list") && !(has_io && !constant_type)) {
    l.error(join_path(base, "field_maps"), "unmapped required field epc_list");
  }

  if (!l.errors.empty()) return l.errors;
  return spec;
}

std::variant<MappingSpec, std::vector<ConfigError>> load_mapping_spec(const std::string& yaml_text) {
  try {
    return load_mapping_spec(YAML::Load(yaml_text), "");
  } catch (const YAML::Exception& e) {
    return std::vector<ConfigError>{{"", std::string("YAML syntax: ") + e.what()}};
  }
}

const json* lookup_path(const json& doc, std::string_view path) {
  const json* cur = &doc;
  std::size_t i = 0;
  while (i < path.size()) {
    if (path[i] == '[') {
      auto close = path.find(']', i);
      if (close == std::string_view::npos || !cur->is_array()) return nullptr;
      std::size_t idx = 0;
      try {
        idx = std::stoul(std::string(path.substr(i + 1, close - i - 1)));
      } catch (const std::exception&) {
        return nullptr;
      }
      if (idx >= cur->size()) return nullptr;
      cur = &(*cur)[idx];
      i = close + 1;
      if (i < path.size() && path[i] == '.') ++i;
      continue;
    }
    auto end = path.find_first_of(".[", i);
    if (end == std::string_view::npos) end = path.size();
    auto key = std::string(path.substr(i, end - i));
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(key);
    if (it == cur->end()) return nullptr;
    cur = &*it;
    i = end;
    if (i < path.size() && path[i] == '.') ++i;
  }
  return cur;
}

std::variant<json, std::vector<ValidationError>> source_document(const RawRecord& record, const MappingSpec& spec) {
  if (record.content_type == ContentType::DelimitedLine) {
    if (!spec.filespec) return std::vector{make_error("no_filespec", "payload", "mapping has no filespec")};
    return parse_delimited_row(record.payload, *spec.filespec, "line");
  }
  auto doc = json::parse(record.payload, nullptr, false);
  if (doc.is_discarded()) return std::vector{make_error("unparsable", "payload", "payload is not valid JSON")};
  if (!doc.is_object()) return std::vector{make_error("bad_value", "payload", "payload must be an object")};
  return doc;
}

namespace {

std::string render_scalar(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (std::trunc(d) == d && std::fabs(d) < 1e15) return std::to_string(static_cast<long long>(d));
  }
  return v.dump();
}

std::optional<std::string> render_template(const std::string& format, const std::vector<std::string>& values) {
  if (format.empty()) return values.empty() ? std::nullopt : std::optional(values.front());
  std::string out;
  std::size_t next = 0;
  for (std::size_t i = 0; i < format.size(); ++i) {
    if (format[i] != '{') {
      out += format[i];
      continue;
    }
    auto close = format.find('}', i);
    if (close == std::string::npos) return std::nullopt;
    auto inner = format.substr(i + 1, close - i - 1);
    std::size_t idx = next++;
    if (!inner.empty()) {
      try {
        idx = std::stoul(inner);
      } catch (const std::exception&) {
        return std::nullopt;
      }
    }
    if (idx >= values.size()) return std::nullopt;
    out += values[idx];
    i = close;
  }
  return out;
}

class Builder {
 public:
  Builder(const MappingSpec& spec, CanonicalEvent& e) : spec_(spec), e_(e) {}

  std::vector<ValidationError> errors;

  void set(const std::string& field, const json& v, const std::string& locus) {
    if (kListFields.count(field)) {
      std::vector<std::string> list;
      if (v.is_array()) {
        for (const auto& x : v) list.push_back(render_scalar(x));
      } else {
        list.push_back(render_scalar(v));
      }
      (field == "epc_list" ? e_.epc_list : field == "inputs" ? e_.inputs : e_.outputs) = std::move(list);
    } else if (is_attribute(field)) {
      if (v.is_object() && v.contains("value")) {
        e_.attributes[attribute_name(field)] = {v["value"], v.value("unit", "")};
      } else {
        e_.attributes[attribute_name(field)] = {v, ""};
      }
    } else if (field == "event_type") {
      auto t = v.is_string() ? parse_event_type(v.get<std::string>()) : std::nullopt;
      if (t) e_.event_type = *t;
      else errors.push_back(make_error("bad_value", locus, "unknown event type " + v.dump()));
    } else if (field == "event_time") {
      auto text = render_scalar(v);
      std::optional<Timestamp> ts;
      auto rule = std::find_if(spec_.time_rules.begin(), spec_.time_rules.end(),
                               [&](const TimeRule& r) { return r.field == field; });
      ts = rule == spec_.time_rules.end() ? parse_iso8601(text) : parse_with_format(text, rule->format, rule->utc_offset);
      if (ts) e_.event_time = *ts;
      else errors.push_back(make_error("bad_time", locus, "cannot parse time '" + text + "'"));
    } else if (field == "actor") {
      e_.actor = render_scalar(v);
    } else if (field == "biz_location") {
      e_.biz_location = render_scalar(v);
    } else if (field == "biz_step") {
      e_.biz_step = render_scalar(v);
    }
  }

 private:
  const MappingSpec& spec_;
  CanonicalEvent& e_;
};

}  // namespace

TransformOutcome apply_mapping(const RawRecord& record, const MappingSpec& spec, const EventRules& rules) {
  TransformOutcome out{record.request_id, std::vector<ValidationError>{}};
  auto doc_or = source_document(record, spec);
  if (auto* errs = std::get_if<std::vector<ValidationError>>(&doc_or)) {
    out.result = std::move(*errs);
    return out;
  }
  const auto& doc = std::get<json>(doc_or);

  CanonicalEvent e;
  e.tenant = record.tenant.str();
  e.record_time = record.received_at;
  Builder b(spec, e);
  for (const auto& [field, value] : spec.constants) b.set(field, value, "constants." + field);

  for (const auto& fm : spec.field_maps) {
    std::vector<const json*> values;
    bool missing = false;
    for (const auto& path : fm.from) {
      const json* v = lookup_path(doc, path);
      if (v == nullptr || v->is_null()) {
        missing = true;
        if (!fm.optional) b.errors.push_back(make_error("missing_field", path, "missing source field"));
        continue;
      }
      values.push_back(v);
    }
    if (missing) continue;
    if (fm.format.empty() && values.size() == 1) {
      b.set(fm.field, *values.front(), fm.from.front());
      continue;
    }
    if (kListFields.count(fm.field) && values.size() == 1 && values.front()->is_array()) {
      json list = json::array();
      for (const auto& item : *values.front()) {
        if (auto s = render_template(fm.format, {render_scalar(item)})) list.push_back(*s);
        else b.errors.push_back(make_error("bad_format", fm.from.front(), "format does not fit the value"));
      }
      b.set(fm.field, list, fm.from.front());
      continue;
    }
    std::vector<std::string> rendered;
    for (const auto* v : values) rendered.push_back(render_scalar(*v));
    if (auto s = render_template(fm.format, rendered)) {
      b.set(fm.field, *s, fm.from.front());
    } else {
      b.errors.push_back(make_error("bad_format", fm.from.front(), "format does not fit the values"));
    }
  }

  for (const auto& ur : spec.unit_rules) {
    auto name = attribute_name(ur.field);
    auto it = e.attributes.find(name);
    if (it == e.attributes.end()) continue;
    std::string unit = ur.from_unit;
    if (!ur.unit_from.empty()) {
      const json* u = lookup_path(doc, ur.unit_from);
      if (u == nullptr || !u->is_string()) {
        b.errors.push_back(make_error("missing_field", ur.unit_from, "missing unit"));
        continue;
      }
      unit = u->get<std::string>();
    }
    auto& value = it->second.value;
    std::optional<double> number;
    if (value.is_number()) {
      number = value.get<double>();
    } else if (value.is_string()) {
      try {
        std::size_t used = 0;
        auto s = value.get<std::string>();
        double d = std::stod(s, &used);
        if (used == s.size()) number = d;
      } catch (const std::exception&) {
      }
    }
    if (!number) {
      b.errors.push_back(make_error("bad_value", ur.field, "not a number: " + value.dump()));
      continue;
    }
    auto m = to_canonical_unit(*number, unit);
    if (!m) {
      b.errors.push_back(make_error("unknown_unit", ur.field, "unknown unit '" + unit + "'"));
      continue;
    }
    it->second = {m->value, m->unit};
  }

  if (!b.errors.empty()) {
    out.result = std::move(b.errors);
    return out;
  }
  if (auto errs = validate_event(e, rules); !errs.empty()) {
    out.result = std::move(errs);
    return out;
  }
  out.result = std::move(e);
  return out;
}

const MappingSpec* MappingRegistry::select(const TenantId& tenant, SourceKind kind,
                                           const std::string& source_name) const {
  const MappingSpec* fallback = nullptr;
  for (const auto& s : specs_) {
    if (s.tenant != tenant || s.source_kind != kind) continue;
    if (s.source_name == source_name) return &s;
    if (s.source_name.empty() && fallback == nullptr) fallback = &s;
  }
  return fallback;
}

}  // namespace traceadapt::transform
