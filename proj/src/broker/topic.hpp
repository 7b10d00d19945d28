#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "traceadapt/broker/broker.hpp"

namespace traceadapt::broker {

// On-disk format, version 1.
//
//   <base>.log : "TALOG001" then frames
//                frame = u32 len | u32 crc32 | u64 offset | i64 appended_ms | u32 key_len | key | payload
//                (len counts the bytes after itself, crc covers offset..payload)
//   <base>.idx : "TAIDX001" then one u32 file position per message
//   topic.json : name and TopicConfig
inline constexpr char kLogMagic[8] = {'T', 'A', 'L', 'O', 'G', '0', '0', '1'};
inline constexpr char kIdxMagic[8] = {'T', 'A', 'I', 'D', 'X', '0', '0', '1'};
inline constexpr std::size_t kMagicSize = 8;
inline constexpr std::size_t kFrameHeader = 4 + 4 + 8 + 8 + 4;

/// Bytes a message of the given key and payload occupies in a log segment.
constexpr std::uint64_t framed_size(std::size_t key_size, std::size_t payload_size) {
  return kFrameHeader + key_size + payload_size;
}

struct Segment {
  std::uint64_t base_offset = 0;
  std::filesystem::path log_path;
  std::filesystem::path idx_path;
  int log_fd = -1;
  int idx_fd = -1;
  std::uint64_t size = 0;                ///< log bytes, including unflushed batched bytes
  std::vector<std::uint32_t> positions;  ///< file position of each frame
};

class Topic {
 public:
  /// Opens an existing topic directory or initializes a new one when `create` is set.
  Topic(std::string name, std::filesystem::path dir, TopicConfig config, BrokerOptions options, bool create);
  ~Topic();

  Topic(const Topic&) = delete;
  Topic& operator=(const Topic&) = delete;

  const std::string& name() const noexcept { return name_; }
  const TopicConfig& config() const noexcept { return config_; }

  AppendResult append(std::string_view key, std::string_view payload);
  std::vector<Message> read(std::uint64_t from_offset, std::size_t max_n);
  bool wait_for(std::uint64_t from_offset, std::chrono::milliseconds timeout);

  void set_group(const std::string& group, std::optional<std::uint64_t> committed);
  std::optional<std::uint64_t> committed(const std::string& group) const;
  bool has_group(const std::string& group) const;
  std::uint64_t resume_offset(const std::string& group) const;
  std::uint64_t next_offset() const;

  TopicStats stats() const;
  void flush();

  static TopicConfig read_config(const std::filesystem::path& dir);

 private:
  void open_segments();
  void recover_segment(Segment& seg, bool is_active);
  bool load_index(Segment& seg);
  void scan_log(Segment& seg, bool truncate_tail);
  void rewrite_index(Segment& seg);
  Segment& roll();
  void enforce_retention();
  void flush_locked();
  std::uint64_t earliest_locked() const;
  std::uint64_t unconsumed_locked() const;
  std::uint64_t log_bytes_locked() const;
  void close_segment(Segment& seg);

  std::string name_;
  std::filesystem::path dir_;
  TopicConfig config_;
  BrokerOptions options_;

  mutable std::shared_mutex mu_;
  std::vector<Segment> segments_;
  std::uint64_t next_offset_ = 0;
  std::map<std::string, std::optional<std::uint64_t>> groups_;

  // Batched policy: frames appended but not yet written to the active segment.
  std::string pending_frames_;
  std::string pending_index_;
  std::size_t pending_count_ = 0;

  std::mutex notify_mu_;
  std::condition_variable notify_cv_;
  std::atomic<std::uint64_t> visible_next_{0};
};

}  // namespace traceadapt::broker
