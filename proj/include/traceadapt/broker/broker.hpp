#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "traceadapt/core/tenant.hpp"
#include "traceadapt/core/time.hpp"

namespace traceadapt::broker {

inline constexpr std::uint64_t kMiB = 1024 * 1024;

enum class Stage { Raw, Epcis, Dlq };

std::string_view to_string(Stage s);

struct TopicName {
  TenantId tenant;
  Stage stage;

  std::string str() const;
};

/// Accepts exactly `<tenant>.<raw|epcis|dlq>`.
std::optional<TopicName> parse_topic_name(std::string_view name);

struct TopicConfig {
  std::uint64_t retention_bytes = 512 * kMiB;
  std::uint64_t high_watermark_msgs = 100'000;
  std::uint64_t segment_bytes = 16 * kMiB;
};

enum class FlushPolicy {
  OnAck,    ///< write(2) before the offset is returned; survives process death
  Sync,     ///< additionally fdatasync before returning; survives power loss
  Batched,  ///< buffered in-process, written every `batch_messages` appends
};

std::optional<FlushPolicy> parse_flush_policy(std::string_view text);

struct BrokerOptions {
  FlushPolicy flush = FlushPolicy::OnAck;
  std::size_t batch_messages = 256;
};

struct Message {
  std::uint64_t offset = 0;
  std::string key;
  std::string payload;
  Timestamp appended_at{};
};

/// Append refused because consumers are too far behind.
struct Backpressure {
  std::uint64_t unconsumed = 0;
  std::uint64_t high_watermark = 0;
};

using AppendResult = std::variant<std::uint64_t, Backpressure>;

struct TopicStats {
  std::uint64_t size_bytes = 0;       ///< stored message bytes
  std::uint64_t disk_bytes = 0;       ///< log files on disk, segment headers included
  std::uint64_t earliest_offset = 0;  ///< retention floor
  std::uint64_t latest_offset = 0;    ///< next offset to be assigned
  std::uint64_t segment_count = 0;
  std::map<std::string, std::uint64_t> lag;  ///< unread messages per group
};

enum class ErrorCode { AlreadyExists, InvalidName, UnknownTopic, OffsetOutOfRange, OffsetRegression, TooLarge, Io, Corrupt };

class BrokerError : public std::runtime_error {
 public:
  BrokerError(ErrorCode code, const std::string& what, std::uint64_t floor = 0)
      : std::runtime_error(what), code_(code), floor_(floor) {}

  ErrorCode code() const noexcept { return code_; }
  /// Earliest available offset, set for OffsetOutOfRange.
  std::uint64_t floor() const noexcept { return floor_; }

 private:
  ErrorCode code_;
  std::uint64_t floor_;
};

class Topic;

/// Embedded durable log: one directory per topic holding `<base>.log` /
/// `<base>.idx` segment pairs, plus one offsets file per consumer group.
///
/// Thread-safe. Producers serialize per topic at the append point; readers
/// share the topic lock.
class Broker {
 public:
  explicit Broker(std::filesystem::path data_dir, BrokerOptions options = {});
  ~Broker();

  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  void create_topic(const std::string& name, const TopicConfig& config = {});
  /// Creates the topic unless it exists already (config of an existing topic is kept).
  void ensure_topic(const std::string& name, const TopicConfig& config = {});
  bool has_topic(const std::string& name) const;
  std::vector<std::string> topics() const;
  TopicConfig topic_config(const std::string& name) const;

  AppendResult append(const std::string& topic, std::string_view key, std::string_view payload);

  /// Contiguous messages from `from_offset`; shorter than `max_n` only at the head.
  std::vector<Message> read(const std::string& topic, std::uint64_t from_offset, std::size_t max_n);

  /// Read on behalf of `group`, registering it for lag and back-pressure accounting.
  std::vector<Message> read(const std::string& topic, const std::string& group, std::uint64_t from_offset,
                            std::size_t max_n);

  /// Blocks until an offset >= `from_offset` exists or the timeout elapses.
  bool wait_for(const std::string& topic, std::uint64_t from_offset, std::chrono::milliseconds timeout);

  /// Makes `group` count toward back-pressure before it has read anything.
  void register_group(const std::string& topic, const std::string& group);

  /// Records `offset` as the last message `group` processed. Durable on return.
  void commit_offset(const std::string& topic, const std::string& group, std::uint64_t offset);
  std::optional<std::uint64_t> committed(const std::string& topic, const std::string& group) const;
  /// committed + 1, or the retention floor for a group with no commit.
  std::uint64_t resume_offset(const std::string& topic, const std::string& group) const;

  TopicStats stats(const std::string& topic) const;

  /// Writes out anything held by the batched flush policy.
  void flush();

  const std::filesystem::path& data_dir() const noexcept { return data_dir_; }

 private:
  Topic& topic(const std::string& name) const;
  void persist_group(const std::string& group);
  void load_groups();

  std::filesystem::path data_dir_;
  BrokerOptions options_;
  mutable std::shared_mutex topics_mu_;
  std::map<std::string, std::unique_ptr<Topic>> topics_;
  std::mutex groups_mu_;
  std::map<std::string, std::map<std::string, std::uint64_t>> group_offsets_;  // group -> topic -> offset
};

}  // namespace traceadapt::broker
