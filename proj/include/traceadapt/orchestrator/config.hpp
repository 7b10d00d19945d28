#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "traceadapt/broker/broker.hpp"
#include "traceadapt/core/delimited.hpp"
#include "traceadapt/extractors/poller.hpp"
#include "traceadapt/ledger/ledger.hpp"
#include "traceadapt/loader/loader.hpp"
#include "traceadapt/status/status.hpp"
#include "traceadapt/transform/mapping.hpp"
#include "traceadapt/transform/transformer.hpp"

namespace YAML {
class Node;
}

namespace traceadapt::orchestrator {

/// A credential holds a stored hash, or a key that is hashed at startup
/// (taken literally or from an environment variable).
struct CredentialConfig {
  std::string username;
  std::string key_hash;
  std::string key;
};

struct TenantConfig {
  TenantId id{"unknown"};
  std::vector<CredentialConfig> credentials;
};

struct ChannelConfig {
  std::string name;
  std::set<TenantId> members;
  bool shared = false;
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  int threads = 16;
  std::size_t max_body_bytes = 1024 * 1024;
  std::chrono::seconds retry_after{1};
};

struct PipelineConfig {
  std::filesystem::path data_dir = "data";
  ServerConfig server;
  broker::TopicConfig topics;
  broker::BrokerOptions broker;
  ledger::LedgerOptions ledger;
  status::StatusStoreOptions status;
  transform::TransformerOptions transformer;
  int hash_cost = 10;
  std::vector<TenantConfig> tenants;
  std::vector<ChannelConfig> channels;
  std::vector<transform::MappingSpec> mappings;
  std::vector<extractors::PollSource> poll_sources;
  std::vector<loader::LoaderPipeline> loaders;

  const TenantConfig* tenant(const TenantId& id) const;
  const ChannelConfig* channel(const std::string& name) const;
};

using Env = std::map<std::string, std::string>;

Env process_env();

/// `APP_*` variables that override config values, with the YAML path each
/// one replaces.
const std::vector<std::pair<std::string, std::string>>& env_overrides();

/// Parses and cross-checks a config. Every problem is reported with its YAML
/// path; a config with any error is rejected as a whole. Relative paths
/// (mapping files, data_dir) resolve against `base_dir`.
std::variant<PipelineConfig, std::vector<ConfigError>> parse_config(const YAML::Node& root,
                                                                   const std::filesystem::path& base_dir,
                                                                   const Env& env);
std::variant<PipelineConfig, std::vector<ConfigError>> load_config(const std::filesystem::path& file,
                                                                  const Env& env = process_env());
std::variant<PipelineConfig, std::vector<ConfigError>> load_config_text(const std::string& yaml,
                                                                       const std::filesystem::path& base_dir,
                                                                       const Env& env = {});

std::string format_errors(const std::vector<ConfigError>& errors);

}  // namespace traceadapt::orchestrator
