#include "traceadapt/orchestrator/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

extern char** environ;

namespace traceadapt::orchestrator {

namespace fs = std::filesystem;

const TenantConfig* PipelineConfig::tenant(const TenantId& id) const {
  for (const auto& t : tenants) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

const ChannelConfig* PipelineConfig::channel(const std::string& name) const {
  for (const auto& c : channels) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

Env process_env() {
  Env env;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    std::string_view kv(*e);
    auto eq = kv.find('=');
    if (eq != std::string_view::npos) env.emplace(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return env;
}

const std::vector<std::pair<std::string, std::string>>& env_overrides() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"APP_DATA_DIR", "data_dir"},
      {"APP_HOST", "server.host"},
      {"APP_PORT", "server.port"},
      {"APP_SERVER_THREADS", "server.threads"},
      {"APP_BROKER_FLUSH", "broker.flush"},
      {"APP_BROKER_RETENTION_BYTES", "broker.retention_bytes"},
      {"APP_BROKER_HIGH_WATERMARK", "broker.high_watermark"},
      {"APP_LEDGER_COMMIT_INTERVAL_MS", "ledger.min_commit_interval_ms"},
      {"APP_LEDGER_MAX_BLOCK_TXS", "ledger.max_block_txs"},
      {"APP_HASH_COST", "security.hash_cost"},
  };
  return table;
}

std::string format_errors(const std::vector<ConfigError>& errors) {
  std::ostringstream out;
  for (const auto& e : errors) out << (e.path.empty() ? "<root>" : e.path) << ": " << e.message << "\n";
  return out.str();
}

namespace {

std::string at(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }
std::string item(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

class Reader {
 public:
  std::vector<ConfigError> errors;

  void error(std::string path, std::string message) { errors.push_back({std::move(path), std::move(message)}); }

  void only_keys(const YAML::Node& node, const std::string& path, std::initializer_list<std::string_view> allowed) {
    if (!node.IsMap()) return;
    for (const auto& kv : node) {
      auto key = kv.first.as<std::string>();
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) error(at(path, key), "unknown key");
    }
  }

  bool is_map(const YAML::Node& node, const std::string& path) {
    if (node.IsMap()) return true;
    error(path, "must be a mapping");
    return false;
  }

  std::optional<std::string> string(const YAML::Node& parent, const std::string& key, const std::string& path,
                                    bool required) {
    auto n = parent[key];
    if (!n || n.IsNull()) {
      if (required) error(at(path, key), "required");
      return std::nullopt;
    }
    if (!n.IsScalar()) {
      error(at(path, key), "must be a scalar");
      return std::nullopt;
    }
    return n.Scalar();
  }

  template <class T>
  T number(const YAML::Node& parent, const std::string& key, const std::string& path, T fallback, T lo, T hi) {
    auto n = parent[key];
    if (!n || n.IsNull()) return fallback;
    T v{};
    try {
      v = n.as<T>();
    } catch (const YAML::Exception&) {
      error(at(path, key), "must be a number");
      return fallback;
    }
    if (v < lo || v > hi) {
      std::ostringstream msg;
      msg << "must be between " << lo << " and " << hi;
      error(at(path, key), msg.str());
      return fallback;
    }
    return v;
  }

  bool boolean(const YAML::Node& parent, const std::string& key, const std::string& path, bool fallback) {
    auto n = parent[key];
    if (!n || n.IsNull()) return fallback;
    try {
      return n.as<bool>();
    } catch (const YAML::Exception&) {
      error(at(path, key), "must be true or false");
      return fallback;
    }
  }

  std::optional<TenantId> tenant(const YAML::Node& parent, const std::string& key, const std::string& path) {
    auto s = string(parent, key, path, true);
    if (!s) return std::nullopt;
    auto id = TenantId::parse(*s);
    if (!id) error(at(path, key), "invalid tenant id '" + *s + "'");
    return id;
  }

  std::vector<std::string> strings(const YAML::Node& parent, const std::string& key, const std::string& path) {
    std::vector<std::string> out;
    auto n = parent[key];
    if (!n || n.IsNull()) return out;
    if (!n.IsSequence()) {
      error(at(path, key), "must be a list");
      return out;
    }
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (n[i].IsScalar()) out.push_back(n[i].Scalar());
      else error(item(at(path, key), i), "must be a scalar");
    }
    return out;
  }

  /// Iterates a list that may be absent.
  template <class F>
  void each(const YAML::Node& parent, const std::string& key, const std::string& path, F&& f) {
    auto n = parent[key];
    if (!n || n.IsNull()) return;
    if (!n.IsSequence()) {
      error(at(path, key), "must be a list");
      return;
    }
    for (std::size_t i = 0; i < n.size(); ++i) f(n[i], item(at(path, key), i));
  }
};

void apply_env(YAML::Node& root, const Env& env) {
  for (const auto& [var, path] : env_overrides()) {
    auto hit = env.find(var);
    if (hit == env.end()) continue;
    std::vector<std::string> parts;
    std::stringstream ss(path);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    if (parts.size() == 1) {
      root[parts[0]] = hit->second;
    } else {
      if (!root[parts[0]] || !root[parts[0]].IsMap()) root[parts[0]] = YAML::Node(YAML::NodeType::Map);
      root[parts[0]][parts[1]] = hit->second;
    }
  }
}

void read_tenants(Reader& r, const YAML::Node& root, const Env& env, PipelineConfig& cfg) {
  std::set<std::string> usernames;
  r.each(root, "tenants", "", [&](const YAML::Node& n, const std::string& path) {
    if (!r.is_map(n, path)) return;
    r.only_keys(n, path, {"id", "credentials"});
    TenantConfig t;
    auto id = r.tenant(n, "id", path);
    if (!id) return;
    t.id = *id;
    if (cfg.tenant(t.id)) r.error(at(path, "id"), "duplicate tenant '" + t.id.str() + "'");
    r.each(n, "credentials", path, [&](const YAML::Node& c, const std::string& cpath) {
      if (!r.is_map(c, cpath)) return;
      r.only_keys(c, cpath, {"username", "key_hash", "key", "key_env"});
      CredentialConfig cred;
      cred.username = r.string(c, "username", cpath, true).value_or("");
      if (!cred.username.empty() && !usernames.insert(cred.username).second) {
        r.error(at(cpath, "username"), "username '" + cred.username + "' is already in use");
      }
      auto hash = r.string(c, "key_hash", cpath, false);
      auto key = r.string(c, "key", cpath, false);
      auto key_env = r.string(c, "key_env", cpath, false);
      int given = int(hash.has_value()) + int(key.has_value()) + int(key_env.has_value());
      if (given != 1) {
        r.error(cpath, "exactly one of key_hash, key or key_env is required");
      } else if (hash) {
        if (hash->rfind("$pbkdf2-sha256$", 0) != 0) r.error(at(cpath, "key_hash"), "not a $pbkdf2-sha256$ hash");
        cred.key_hash = *hash;
      } else if (key) {
        cred.key = *key;
      } else if (auto v = env.find(*key_env); v != env.end() && !v->second.empty()) {
        cred.key = v->second;
      } else {
        r.error(at(cpath, "key_env"), "environment variable " + *key_env + " is not set");
      }
      t.credentials.push_back(std::move(cred));
    });
    cfg.tenants.push_back(std::move(t));
  });
  if (cfg.tenants.empty()) r.error("tenants", "at least one tenant is required");
}

void read_channels(Reader& r, const YAML::Node& root, PipelineConfig& cfg) {
  r.each(root, "channels", "", [&](const YAML::Node& n, const std::string& path) {
    if (!r.is_map(n, path)) return;
    r.only_keys(n, path, {"name", "members", "shared"});
    ChannelConfig c;
    c.name = r.string(n, "name", path, true).value_or("");
    c.shared = r.boolean(n, "shared", path, false);
    if (!c.name.empty() && cfg.channel(c.name)) r.error(at(path, "name"), "duplicate channel '" + c.name + "'");
    auto members = r.strings(n, "members", path);
    for (std::size_t i = 0; i < members.size(); ++i) {
      auto id = TenantId::parse(members[i]);
      if (!id || !cfg.tenant(*id)) {
        r.error(item(at(path, "members"), i), "unknown tenant '" + members[i] + "'");
        continue;
      }
      c.members.insert(*id);
    }
    if (members.empty()) r.error(at(path, "members"), "at least one member is required");
    if (!c.shared && members.size() > 1) r.error(at(path, "members"), "a private channel has exactly one member");
    cfg.channels.push_back(std::move(c));
  });
}

void read_mappings(Reader& r, const YAML::Node& root, const fs::path& base_dir, PipelineConfig& cfg) {
  r.each(root, "mappings", "", [&](const YAML::Node& n, const std::string& path) {
    if (!r.is_map(n, path)) return;
    YAML::Node spec_node = n;
    if (n["file"]) {
      r.only_keys(n, path, {"file"});
      auto file = base_dir / n["file"].as<std::string>("");
      try {
        spec_node = YAML::LoadFile(file.string());
      } catch (const YAML::Exception& e) {
        r.error(at(path, "file"), "cannot load " + file.string() + ": " + e.what());
        return;
      }
    }
    auto loaded = transform::load_mapping_spec(spec_node, path);
    if (auto* errs = std::get_if<std::vector<ConfigError>>(&loaded)) {
      r.errors.insert(r.errors.end(), errs->begin(), errs->end());
      return;
    }
    auto& spec = std::get<transform::MappingSpec>(loaded);
    if (!cfg.tenant(spec.tenant)) r.error(at(path, "tenant"), "unknown tenant '" + spec.tenant.str() + "'");
    for (const auto& other : cfg.mappings) {
      if (other.tenant == spec.tenant && other.source_kind == spec.source_kind &&
          other.source_name == spec.source_name) {
        r.error(path, "another mapping already covers this tenant and source");
      }
    }
    cfg.mappings.push_back(std::move(spec));
  });
}

void read_poll_sources(Reader& r, const YAML::Node& root, const Env& env, PipelineConfig& cfg) {
  r.each(root, "poll_sources", "", [&](const YAML::Node& n, const std::string& path) {
    if (!r.is_map(n, path)) return;
    r.only_keys(n, path,
                {"id", "tenant", "url", "items_path", "cursor_field", "interval_s", "username", "api_key", "api_key_env"});
    extractors::PollSource s;
    s.id = r.string(n, "id", path, true).value_or("");
    for (const auto& other : cfg.poll_sources) {
      if (other.id == s.id) r.error(at(path, "id"), "duplicate poll source '" + s.id + "'");
    }
    if (auto t = r.tenant(n, "tenant", path)) {
      s.tenant = *t;
      if (!cfg.tenant(*t)) r.error(at(path, "tenant"), "unknown tenant '" + t->str() + "'");
    }
    s.url = r.string(n, "url", path, true).value_or("");
    if (!s.url.empty() && s.url.rfind("http://", 0) != 0) r.error(at(path, "url"), "must start with http://");
    s.items_path = r.string(n, "items_path", path, false).value_or("");
    s.cursor_field = r.string(n, "cursor_field", path, false).value_or("id");
    s.interval = std::chrono::seconds(r.number<std::int64_t>(n, "interval_s", path, 3600, 1, 7 * 24 * 3600));
    s.username = r.string(n, "username", path, false).value_or("");
    s.api_key = r.string(n, "api_key", path, false).value_or("");
    if (auto var = r.string(n, "api_key_env", path, false)) {
      if (auto v = env.find(*var); v != env.end()) s.api_key = v->second;
      else r.error(at(path, "api_key_env"), "environment variable " + *var + " is not set");
    }
    bool mapped = std::any_of(cfg.mappings.begin(), cfg.mappings.end(), [&](const auto& m) {
      return m.tenant == s.tenant && m.source_kind == SourceKind::Poll && (m.source_name.empty() || m.source_name == s.id);
    });
    if (!mapped) r.error(path, "no poll mapping for tenant '" + s.tenant.str() + "' and source '" + s.id + "'");
    cfg.poll_sources.push_back(std::move(s));
  });
}

void read_loaders(Reader& r, const YAML::Node& root, PipelineConfig& cfg) {
  std::set<TenantId> seen;
  r.each(root, "loaders", "", [&](const YAML::Node& n, const std::string& path) {
    if (!r.is_map(n, path)) return;
    r.only_keys(n, path, {"tenant", "topic", "channel", "shared_channel", "promote", "retry", "max_in_flight"});
    loader::LoaderPipeline p;
    auto t = r.tenant(n, "tenant", path);
    if (!t) return;
    p.tenant = *t;
    if (!cfg.tenant(*t)) r.error(at(path, "tenant"), "unknown tenant '" + t->str() + "'");
    if (!seen.insert(*t).second) r.error(at(path, "tenant"), "tenant '" + t->str() + "' already has a loader");

    p.epcis_topic = r.string(n, "topic", path, false).value_or(t->str() + ".epcis");
    auto topic = broker::parse_topic_name(p.epcis_topic);
    if (!topic || topic->tenant != *t || topic->stage != broker::Stage::Epcis) {
      r.error(at(path, "topic"), "must be the tenant's own epcis topic '" + t->str() + ".epcis'");
    }

    p.channel = r.string(n, "channel", path, true).value_or("");
    if (!p.channel.empty()) {
      const auto* ch = cfg.channel(p.channel);
      if (ch == nullptr) r.error(at(path, "channel"), "unknown channel '" + p.channel + "'");
      else if (ch->shared) r.error(at(path, "channel"), "must be a private channel");
      else if (!ch->members.count(*t)) r.error(at(path, "channel"), "tenant is not a member of '" + p.channel + "'");
    }
    p.shared_channel = r.string(n, "shared_channel", path, false).value_or("");
    if (!p.shared_channel.empty()) {
      const auto* ch = cfg.channel(p.shared_channel);
      if (ch == nullptr) r.error(at(path, "shared_channel"), "unknown channel '" + p.shared_channel + "'");
      else if (!ch->shared) r.error(at(path, "shared_channel"), "must be a shared channel");
      else if (!ch->members.count(*t)) r.error(at(path, "shared_channel"), "tenant is not a member");
    }
    if (auto promote = n["promote"]) {
      auto ppath = at(path, "promote");
      if (r.is_map(promote, ppath)) {
        r.only_keys(promote, ppath, {"event_types", "biz_steps"});
        auto types = r.strings(promote, "event_types", ppath);
        for (std::size_t i = 0; i < types.size(); ++i) {
          if (auto et = parse_event_type(types[i])) p.shared_rule.event_types.insert(*et);
          else r.error(item(at(ppath, "event_types"), i), "unknown event type '" + types[i] + "'");
        }
        for (auto& s : r.strings(promote, "biz_steps", ppath)) p.shared_rule.biz_steps.insert(s);
        if (p.shared_channel.empty()) r.error(ppath, "promote needs a shared_channel");
      }
    }
    if (auto retry = n["retry"]) {
      auto rpath = at(path, "retry");
      if (r.is_map(retry, rpath)) {
        r.only_keys(retry, rpath, {"base_ms", "multiplier", "cap_ms"});
        p.retry.base = std::chrono::milliseconds(r.number<std::int64_t>(retry, "base_ms", rpath, 100, 1, 60'000));
        p.retry.multiplier = r.number<double>(retry, "multiplier", rpath, 2.0, 1.0, 10.0);
        p.retry.cap = std::chrono::milliseconds(r.number<std::int64_t>(retry, "cap_ms", rpath, 30'000, 1, 3'600'000));
      }
    }
    p.max_in_flight = r.number<std::size_t>(n, "max_in_flight", path, 64, 1, 4096);
    cfg.loaders.push_back(std::move(p));
  });
}

}  // namespace

std::variant<PipelineConfig, std::vector<ConfigError>> parse_config(const YAML::Node& original,
                                                                   const fs::path& base_dir, const Env& env) {
  if (!original || original.IsNull() || (original.IsMap() && original.size() == 0)) {
    return std::vector<ConfigError>{{"", "config is empty"}};
  }
  if (!original.IsMap()) return std::vector<ConfigError>{{"", "config must be a mapping"}};
  YAML::Node root = YAML::Clone(original);
  apply_env(root, env);

  Reader r;
  PipelineConfig cfg;
  r.only_keys(root, "",
              {"data_dir", "server", "broker", "ledger", "status", "transformer", "security", "tenants", "channels",
               "mappings", "poll_sources", "loaders"});

  fs::path data_dir = r.string(root, "data_dir", "", false).value_or("data");
  cfg.data_dir = data_dir.is_absolute() ? data_dir : base_dir / data_dir;

  if (auto s = root["server"]; s && r.is_map(s, "server")) {
    r.only_keys(s, "server", {"host", "port", "threads", "max_body_bytes", "retry_after_s"});
    cfg.server.host = r.string(s, "host", "server", false).value_or(cfg.server.host);
    cfg.server.port = r.number<int>(s, "port", "server", cfg.server.port, 0, 65535);
    cfg.server.threads = r.number<int>(s, "threads", "server", cfg.server.threads, 1, 1024);
    cfg.server.max_body_bytes =
        r.number<std::size_t>(s, "max_body_bytes", "server", cfg.server.max_body_bytes, 64, 64 * broker::kMiB);
    cfg.server.retry_after = std::chrono::seconds(r.number<int>(s, "retry_after_s", "server", 1, 1, 3600));
  }
  if (auto b = root["broker"]; b && r.is_map(b, "broker")) {
    r.only_keys(b, "broker", {"retention_bytes", "segment_bytes", "high_watermark", "flush", "batch_messages"});
    cfg.topics.retention_bytes = r.number<std::uint64_t>(b, "retention_bytes", "broker", cfg.topics.retention_bytes,
                                                         4096, UINT64_MAX / 2);
    cfg.topics.segment_bytes =
        r.number<std::uint64_t>(b, "segment_bytes", "broker", cfg.topics.segment_bytes, 4096, 1024 * broker::kMiB);
    cfg.topics.high_watermark_msgs =
        r.number<std::uint64_t>(b, "high_watermark", "broker", cfg.topics.high_watermark_msgs, 1, UINT64_MAX / 2);
    if (auto f = r.string(b, "flush", "broker", false)) {
      if (auto fp = broker::parse_flush_policy(*f)) cfg.broker.flush = *fp;
      else r.error("broker.flush", "must be on_ack, sync or batched");
    }
    cfg.broker.batch_messages =
        r.number<std::size_t>(b, "batch_messages", "broker", cfg.broker.batch_messages, 1, 1'000'000);
  }
  if (auto l = root["ledger"]; l && r.is_map(l, "ledger")) {
    r.only_keys(l, "ledger", {"min_commit_interval_ms", "max_block_txs", "max_clock_skew_s"});
    cfg.ledger.min_commit_interval =
        std::chrono::milliseconds(r.number<std::int64_t>(l, "min_commit_interval_ms", "ledger", 1000, 0, 600'000));
    cfg.ledger.max_block_txs = r.number<std::size_t>(l, "max_block_txs", "ledger", 1, 1, 100'000);
    cfg.ledger.rules.max_clock_skew =
        std::chrono::seconds(r.number<std::int64_t>(l, "max_clock_skew_s", "ledger", 24 * 3600, 0, 365 * 24 * 3600));
  }
  cfg.transformer.rules = cfg.ledger.rules;
  if (auto s = root["status"]; s && r.is_map(s, "status")) {
    r.only_keys(s, "status", {"sync"});
    cfg.status.sync = r.boolean(s, "sync", "status", false);
  }
  if (auto t = root["transformer"]; t && r.is_map(t, "transformer")) {
    r.only_keys(t, "transformer", {"batch", "idle_wait_ms"});
    cfg.transformer.batch = r.number<std::size_t>(t, "batch", "transformer", 64, 1, 100'000);
    cfg.transformer.idle_wait =
        std::chrono::milliseconds(r.number<std::int64_t>(t, "idle_wait_ms", "transformer", 200, 1, 60'000));
  }
  if (auto s = root["security"]; s && r.is_map(s, "security")) {
    r.only_keys(s, "security", {"hash_cost"});
    cfg.hash_cost = r.number<int>(s, "hash_cost", "security", cfg.hash_cost, 1, 24);
  }

  read_tenants(r, root, env, cfg);
  read_channels(r, root, cfg);
  read_mappings(r, root, base_dir, cfg);
  read_poll_sources(r, root, env, cfg);
  read_loaders(r, root, cfg);

  if (!r.errors.empty()) return r.errors;
  return cfg;
}

std::variant<PipelineConfig, std::vector<ConfigError>> load_config_text(const std::string& yaml,
                                                                       const fs::path& base_dir, const Env& env) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::ParserException& e) {
    return std::vector<ConfigError>{{"", "YAML syntax at line " + std::to_string(e.mark.line + 1) + ": " + e.msg}};
  }
  return parse_config(root, base_dir, env);
}

std::variant<PipelineConfig, std::vector<ConfigError>> load_config(const fs::path& file, const Env& env) {
  std::ifstream in(file);
  if (!in) return std::vector<ConfigError>{{"", "cannot read " + file.string()}};
  std::stringstream ss;
  ss << in.rdbuf();
  return load_config_text(ss.str(), fs::absolute(file).parent_path(), env);
}

}  // namespace traceadapt::orchestrator
