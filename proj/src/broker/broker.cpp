#include "traceadapt/broker/broker.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "topic.hpp"

namespace traceadapt::broker {

namespace fs = std::filesystem;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Raw: return "raw";
    case Stage::Epcis: return "epcis";
    case Stage::Dlq: return "dlq";
  }
  return "raw";
}

std::string TopicName::str() const { return tenant.str() + "." + std::string(to_string(stage)); }

std::optional<TopicName> parse_topic_name(std::string_view name) {
  auto dot = name.find('.');
  if (dot == std::string_view::npos || name.find('.', dot + 1) != std::string_view::npos) return std::nullopt;
  auto tenant = TenantId::parse(name.substr(0, dot));
  if (!tenant) return std::nullopt;
  auto stage_text = name.substr(dot + 1);
  Stage stage;
  if (stage_text == "raw") {
    stage = Stage::Raw;
  } else if (stage_text == "epcis") {
    stage = Stage::Epcis;
  } else if (stage_text == "dlq") {
    stage = Stage::Dlq;
  } else {
    return std::nullopt;
  }
  return TopicName{*tenant, stage};
}

std::optional<FlushPolicy> parse_flush_policy(std::string_view text) {
  if (text == "on_ack") return FlushPolicy::OnAck;
  if (text == "sync") return FlushPolicy::Sync;
  if (text == "batched") return FlushPolicy::Batched;
  return std::nullopt;
}

namespace {

bool valid_group_name(std::string_view g) {
  if (g.empty() || g.size() > 128) return false;
  for (char c : g) {
    bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    if (!ok) return false;
  }
  return g.front() != '.';
}

}  // namespace

Broker::Broker(fs::path data_dir, BrokerOptions options) : data_dir_(std::move(data_dir)), options_(options) {
  fs::create_directories(data_dir_ / "__groups");
  for (const auto& entry : fs::directory_iterator(data_dir_)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "topic.json")) continue;
    auto name = entry.path().filename().string();
    if (!parse_topic_name(name)) continue;
    auto config = Topic::read_config(entry.path());
    topics_.emplace(name, std::make_unique<Topic>(name, entry.path(), config, options_, false));
  }
  load_groups();
}

Broker::~Broker() = default;

void Broker::load_groups() {
  for (const auto& entry : fs::directory_iterator(data_dir_ / "__groups")) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream f(entry.path());
    auto j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw BrokerError(ErrorCode::Corrupt, "unreadable offsets file " + entry.path().string());
    }
    auto group = entry.path().stem().string();
    for (const auto& [topic_name, offset] : j.items()) {
      group_offsets_[group][topic_name] = offset.get<std::uint64_t>();
      if (auto it = topics_.find(topic_name); it != topics_.end()) {
        it->second->set_group(group, offset.get<std::uint64_t>());
      }
    }
  }
}

void Broker::persist_group(const std::string& group) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [t, off] : group_offsets_[group]) j[t] = off;
  auto final_path = data_dir_ / "__groups" / (group + ".json");
  auto tmp = data_dir_ / "__groups" / (group + ".json.tmp");
  auto text = j.dump();
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw BrokerError(ErrorCode::Io, "cannot write " + tmp.string());
  bool ok = ::write(fd, text.data(), text.size()) == static_cast<ssize_t>(text.size());
  if (ok && options_.flush == FlushPolicy::Sync) ok = ::fdatasync(fd) == 0;
  ::close(fd);
  if (!ok) throw BrokerError(ErrorCode::Io, "cannot write " + tmp.string());
  fs::rename(tmp, final_path);
}

Topic& Broker::topic(const std::string& name) const {
  std::shared_lock lock(topics_mu_);
  auto it = topics_.find(name);
  if (it == topics_.end()) throw BrokerError(ErrorCode::UnknownTopic, "unknown topic '" + name + "'");
  return *it->second;
}

void Broker::create_topic(const std::string& name, const TopicConfig& config) {
  if (!parse_topic_name(name)) {
    throw BrokerError(ErrorCode::InvalidName, "topic name '" + name + "' is not <tenant>.<raw|epcis|dlq>");
  }
  if (config.segment_bytes <= kMagicSize + kFrameHeader || config.high_watermark_msgs == 0) {
    throw BrokerError(ErrorCode::InvalidName, "topic '" + name + "' has an unusable configuration");
  }
  std::unique_lock lock(topics_mu_);
  if (topics_.count(name) != 0) throw BrokerError(ErrorCode::AlreadyExists, "topic '" + name + "' already exists");
  auto t = std::make_unique<Topic>(name, data_dir_ / name, config, options_, true);
  {
    std::lock_guard g(groups_mu_);
    for (const auto& [group, offsets] : group_offsets_) {
      if (auto it = offsets.find(name); it != offsets.end()) t->set_group(group, it->second);
    }
  }
  topics_.emplace(name, std::move(t));
}

void Broker::ensure_topic(const std::string& name, const TopicConfig& config) {
  if (has_topic(name)) return;
  try {
    create_topic(name, config);
  } catch (const BrokerError& e) {
    if (e.code() != ErrorCode::AlreadyExists) throw;
  }
}

bool Broker::has_topic(const std::string& name) const {
  std::shared_lock lock(topics_mu_);
  return topics_.count(name) != 0;
}

std::vector<std::string> Broker::topics() const {
  std::shared_lock lock(topics_mu_);
  std::vector<std::string> out;
  for (const auto& [name, t] : topics_) out.push_back(name);
  return out;
}

TopicConfig Broker::topic_config(const std::string& name) const { return topic(name).config(); }

AppendResult Broker::append(const std::string& t, std::string_view key, std::string_view payload) {
  return topic(t).append(key, payload);
}

std::vector<Message> Broker::read(const std::string& t, std::uint64_t from_offset, std::size_t max_n) {
  return topic(t).read(from_offset, max_n);
}

std::vector<Message> Broker::read(const std::string& t, const std::string& group, std::uint64_t from_offset,
                                  std::size_t max_n) {
  register_group(t, group);
  return topic(t).read(from_offset, max_n);
}

bool Broker::wait_for(const std::string& t, std::uint64_t from_offset, std::chrono::milliseconds timeout) {
  return topic(t).wait_for(from_offset, timeout);
}

void Broker::register_group(const std::string& t, const std::string& group) {
  if (!valid_group_name(group)) throw BrokerError(ErrorCode::InvalidName, "invalid group name '" + group + "'");
  auto& tp = topic(t);
  if (!tp.has_group(group)) tp.set_group(group, std::nullopt);
}

void Broker::commit_offset(const std::string& t, const std::string& group, std::uint64_t offset) {
  if (!valid_group_name(group)) throw BrokerError(ErrorCode::InvalidName, "invalid group name '" + group + "'");
  auto& tp = topic(t);
  std::lock_guard lock(groups_mu_);
  auto head = tp.next_offset();
  if (offset >= head) {
    throw BrokerError(ErrorCode::OffsetOutOfRange,
                      "cannot commit offset " + std::to_string(offset) + " past head " + std::to_string(head));
  }
  auto& offsets = group_offsets_[group];
  auto it = offsets.find(t);
  std::optional<std::uint64_t> previous;
  if (it != offsets.end()) {
    previous = it->second;
    if (offset < it->second) {
      throw BrokerError(ErrorCode::OffsetRegression, "group '" + group + "' already committed " +
                                                         std::to_string(it->second) + " on " + t);
    }
  }
  offsets[t] = offset;
  try {
    persist_group(group);
  } catch (...) {
    if (previous) {
      offsets[t] = *previous;
    } else {
      offsets.erase(t);
    }
    throw;
  }
  tp.set_group(group, offset);
}

std::optional<std::uint64_t> Broker::committed(const std::string& t, const std::string& group) const {
  return topic(t).committed(group);
}

std::uint64_t Broker::resume_offset(const std::string& t, const std::string& group) const {
  return topic(t).resume_offset(group);
}

TopicStats Broker::stats(const std::string& t) const { return topic(t).stats(); }

void Broker::flush() {
  std::shared_lock lock(topics_mu_);
  for (auto& [name, t] : topics_) t->flush();
}

}  // namespace traceadapt::broker
