#include "topic.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace traceadapt::broker {

namespace fs = std::filesystem;

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

bool pwrite_all(int fd, const char* data, std::size_t len, std::uint64_t pos) {
  while (len > 0) {
    ssize_t n = ::pwrite(fd, data, len, static_cast<off_t>(pos));
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += n;
    len -= static_cast<std::size_t>(n);
    pos += static_cast<std::uint64_t>(n);
  }
  return true;
}

bool pread_all(int fd, char* data, std::size_t len, std::uint64_t pos) {
  while (len > 0) {
    ssize_t n = ::pread(fd, data, len, static_cast<off_t>(pos));
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    if (n == 0) return false;
    data += n;
    len -= static_cast<std::size_t>(n);
    pos += static_cast<std::uint64_t>(n);
  }
  return true;
}

std::uint64_t file_size(int fd) {
  struct stat st {};
  if (::fstat(fd, &st) != 0) throw BrokerError(ErrorCode::Io, std::string("fstat: ") + std::strerror(errno));
  return static_cast<std::uint64_t>(st.st_size);
}

int open_file(const fs::path& p, int flags) {
  int fd = ::open(p.c_str(), flags | O_CLOEXEC, 0644);
  if (fd < 0) {
    throw BrokerError(ErrorCode::Io, "open " + p.string() + ": " + std::strerror(errno));
  }
  return fd;
}

std::string segment_stem(std::uint64_t base) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%020llu", static_cast<unsigned long long>(base));
  return buf;
}

std::uint32_t frame_crc(const char* body, std::size_t len) {
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(body), static_cast<uInt>(len)));
}

// Parses one frame starting at `p` (pointing at its length field). Returns the
// total frame size, or 0 when the frame is torn or fails its checksum.
std::size_t parse_frame(const char* p, std::size_t avail, std::uint64_t expected_offset, Message* out) {
  if (avail < 4) return 0;
  auto len = get<std::uint32_t>(p);
  if (len < kFrameHeader - 4 || avail - 4 < len) return 0;
  const char* body = p + 8;
  std::size_t body_len = len - 4;
  if (frame_crc(body, body_len) != get<std::uint32_t>(p + 4)) return 0;
  auto offset = get<std::uint64_t>(body);
  if (offset != expected_offset) return 0;
  auto key_len = get<std::uint32_t>(body + 16);
  if (20 + static_cast<std::size_t>(key_len) > body_len) return 0;
  if (out != nullptr) {
    out->offset = offset;
    out->appended_at = from_unix_millis(get<std::int64_t>(body + 8));
    out->key.assign(body + 20, key_len);
    out->payload.assign(body + 20 + key_len, body_len - 20 - key_len);
  }
  return 4 + static_cast<std::size_t>(len);
}

}  // namespace

Topic::Topic(std::string name, fs::path dir, TopicConfig config, BrokerOptions options, bool create)
    : name_(std::move(name)), dir_(std::move(dir)), config_(config), options_(options) {
  if (create) {
    fs::create_directories(dir_);
    nlohmann::json meta = {{"version", 1},
                           {"name", name_},
                           {"retention_bytes", config_.retention_bytes},
                           {"high_watermark_msgs", config_.high_watermark_msgs},
                           {"segment_bytes", config_.segment_bytes}};
    auto tmp = dir_ / "topic.json.tmp";
    {
      std::ofstream f(tmp, std::ios::trunc);
      f << meta.dump(2) << '\n';
      if (!f) throw BrokerError(ErrorCode::Io, "cannot write " + tmp.string());
    }
    fs::rename(tmp, dir_ / "topic.json");
  }
  open_segments();
  visible_next_.store(next_offset_);
}

Topic::~Topic() {
  try {
    std::unique_lock lock(mu_);
    flush_locked();
  } catch (...) {
  }
  for (auto& seg : segments_) close_segment(seg);
}

TopicConfig Topic::read_config(const fs::path& dir) {
  std::ifstream f(dir / "topic.json");
  if (!f) throw BrokerError(ErrorCode::Corrupt, "missing topic.json in " + dir.string());
  auto meta = nlohmann::json::parse(f, nullptr, false);
  if (meta.is_discarded() || meta.value("version", 0) != 1) {
    throw BrokerError(ErrorCode::Corrupt, "unreadable topic.json in " + dir.string());
  }
  TopicConfig c;
  c.retention_bytes = meta.at("retention_bytes").get<std::uint64_t>();
  c.high_watermark_msgs = meta.at("high_watermark_msgs").get<std::uint64_t>();
  c.segment_bytes = meta.at("segment_bytes").get<std::uint64_t>();
  return c;
}

void Topic::close_segment(Segment& seg) {
  if (seg.log_fd >= 0) ::close(seg.log_fd);
  if (seg.idx_fd >= 0) ::close(seg.idx_fd);
  seg.log_fd = seg.idx_fd = -1;
}

void Topic::open_segments() {
  std::vector<std::uint64_t> bases;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() != ".log") continue;
    auto stem = entry.path().stem().string();
    if (stem.size() != 20 || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
    bases.push_back(std::stoull(stem));
  }
  std::sort(bases.begin(), bases.end());
  for (std::size_t i = 0; i < bases.size(); ++i) {
    Segment seg;
    seg.base_offset = bases[i];
    seg.log_path = dir_ / (segment_stem(bases[i]) + ".log");
    seg.idx_path = dir_ / (segment_stem(bases[i]) + ".idx");
    if (!segments_.empty()) {
      const auto& prev = segments_.back();
      if (prev.base_offset + prev.positions.size() != seg.base_offset) {
        throw BrokerError(ErrorCode::Corrupt, "offset gap before segment " + seg.log_path.string());
      }
    }
    recover_segment(seg, i + 1 == bases.size());
    segments_.push_back(std::move(seg));
  }
  if (segments_.empty()) {
    next_offset_ = 0;
    roll();
    return;
  }
  const auto& last = segments_.back();
  next_offset_ = last.base_offset + last.positions.size();
}

void Topic::recover_segment(Segment& seg, bool is_active) {
  seg.log_fd = open_file(seg.log_path, O_RDWR);
  seg.idx_fd = open_file(seg.idx_path, O_RDWR | O_CREAT);
  seg.size = file_size(seg.log_fd);
  if (seg.size < kMagicSize) {
    if (!is_active) throw BrokerError(ErrorCode::Corrupt, "truncated header in " + seg.log_path.string());
    if (::ftruncate(seg.log_fd, 0) != 0 || !pwrite_all(seg.log_fd, kLogMagic, kMagicSize, 0)) {
      throw BrokerError(ErrorCode::Io, "cannot reinitialize " + seg.log_path.string());
    }
    seg.size = kMagicSize;
  }
  char magic[kMagicSize];
  if (!pread_all(seg.log_fd, magic, kMagicSize, 0) || std::memcmp(magic, kLogMagic, kMagicSize) != 0) {
    throw BrokerError(ErrorCode::Corrupt, "bad magic in " + seg.log_path.string());
  }
  if (!is_active && load_index(seg)) return;
  scan_log(seg, is_active);
  rewrite_index(seg);
}

bool Topic::load_index(Segment& seg) {
  auto size = file_size(seg.idx_fd);
  if (size < kMagicSize || (size - kMagicSize) % 4 != 0) return false;
  std::string buf(size, '\0');
  if (!pread_all(seg.idx_fd, buf.data(), size, 0)) return false;
  if (std::memcmp(buf.data(), kIdxMagic, kMagicSize) != 0) return false;
  std::vector<std::uint32_t> positions;
  for (std::size_t p = kMagicSize; p < size; p += 4) positions.push_back(get<std::uint32_t>(buf.data() + p));
  if (positions.empty()) return seg.size == kMagicSize;
  if (positions.front() != kMagicSize || !std::is_sorted(positions.begin(), positions.end())) return false;
  char len_buf[4];
  if (!pread_all(seg.log_fd, len_buf, 4, positions.back())) return false;
  if (positions.back() + 4 + get<std::uint32_t>(len_buf) != seg.size) return false;
  seg.positions = std::move(positions);
  return true;
}

void Topic::scan_log(Segment& seg, bool truncate_tail) {
  std::string buf(seg.size, '\0');
  if (!pread_all(seg.log_fd, buf.data(), seg.size, 0)) {
    throw BrokerError(ErrorCode::Io, "cannot read " + seg.log_path.string());
  }
  seg.positions.clear();
  std::size_t pos = kMagicSize;
  while (pos < buf.size()) {
    std::size_t n = parse_frame(buf.data() + pos, buf.size() - pos, seg.base_offset + seg.positions.size(), nullptr);
    if (n == 0) break;
    seg.positions.push_back(static_cast<std::uint32_t>(pos));
    pos += n;
  }
  if (pos != buf.size()) {
    if (!truncate_tail) throw BrokerError(ErrorCode::Corrupt, "damaged frame in sealed segment " + seg.log_path.string());
    if (::ftruncate(seg.log_fd, static_cast<off_t>(pos)) != 0) {
      throw BrokerError(ErrorCode::Io, "cannot truncate " + seg.log_path.string());
    }
    seg.size = pos;
  }
}

void Topic::rewrite_index(Segment& seg) {
  std::string buf(kIdxMagic, kMagicSize);
  for (auto p : seg.positions) put<std::uint32_t>(buf, p);
  if (::ftruncate(seg.idx_fd, 0) != 0 || !pwrite_all(seg.idx_fd, buf.data(), buf.size(), 0)) {
    throw BrokerError(ErrorCode::Io, "cannot write " + seg.idx_path.string());
  }
}

Segment& Topic::roll() {
  flush_locked();
  Segment seg;
  seg.base_offset = next_offset_;
  seg.log_path = dir_ / (segment_stem(next_offset_) + ".log");
  seg.idx_path = dir_ / (segment_stem(next_offset_) + ".idx");
  seg.log_fd = open_file(seg.log_path, O_RDWR | O_CREAT | O_TRUNC);
  seg.idx_fd = open_file(seg.idx_path, O_RDWR | O_CREAT | O_TRUNC);
  if (!pwrite_all(seg.log_fd, kLogMagic, kMagicSize, 0) || !pwrite_all(seg.idx_fd, kIdxMagic, kMagicSize, 0)) {
    close_segment(seg);
    throw BrokerError(ErrorCode::Io, "cannot initialize segment " + seg.log_path.string());
  }
  seg.size = kMagicSize;
  segments_.push_back(std::move(seg));
  return segments_.back();
}

std::uint64_t Topic::log_bytes_locked() const {
  std::uint64_t total = 0;
  for (const auto& s : segments_) total += s.size;
  return total;
}

void Topic::enforce_retention() {
  // Keep at least retention_bytes: drop the oldest sealed segment only while
  // the remainder still meets the target.
  auto total = log_bytes_locked();
  while (segments_.size() > 1 && total - segments_.front().size >= config_.retention_bytes) {
    auto& front = segments_.front();
    total -= front.size;
    close_segment(front);
    std::error_code ec;
    fs::remove(front.log_path, ec);
    fs::remove(front.idx_path, ec);
    segments_.erase(segments_.begin());
  }
}

std::uint64_t Topic::earliest_locked() const { return segments_.front().base_offset; }

std::uint64_t Topic::unconsumed_locked() const {
  auto floor = earliest_locked();
  std::uint64_t slowest = next_offset_;
  if (groups_.empty()) slowest = floor;
  for (const auto& [group, committed] : groups_) {
    std::uint64_t pos = committed ? *committed + 1 : floor;
    slowest = std::min(slowest, std::max(pos, floor));
  }
  return next_offset_ - std::min(slowest, next_offset_);
}

AppendResult Topic::append(std::string_view key, std::string_view payload) {
  const auto frame_size = framed_size(key.size(), payload.size());
  std::unique_lock lock(mu_);
  if (frame_size + kMagicSize > config_.segment_bytes || frame_size > UINT32_MAX) {
    throw BrokerError(ErrorCode::TooLarge, "message of " + std::to_string(frame_size) + " bytes exceeds segment size");
  }
  auto unconsumed = unconsumed_locked();
  if (unconsumed >= config_.high_watermark_msgs) {
    return Backpressure{unconsumed, config_.high_watermark_msgs};
  }
  Segment* seg = &segments_.back();
  if (!seg->positions.empty() && seg->size + frame_size > config_.segment_bytes) seg = &roll();

  const std::uint64_t offset = next_offset_;
  std::string frame;
  frame.reserve(frame_size);
  put<std::uint32_t>(frame, static_cast<std::uint32_t>(frame_size - 4));
  put<std::uint32_t>(frame, 0);
  put<std::uint64_t>(frame, offset);
  put<std::int64_t>(frame, to_unix_millis(now_utc()));
  put<std::uint32_t>(frame, static_cast<std::uint32_t>(key.size()));
  frame.append(key);
  frame.append(payload);
  auto crc = frame_crc(frame.data() + 8, frame.size() - 8);
  std::memcpy(frame.data() + 4, &crc, 4);

  const auto position = seg->size;
  if (options_.flush == FlushPolicy::Batched) {
    pending_frames_ += frame;
    put<std::uint32_t>(pending_index_, static_cast<std::uint32_t>(position));
    ++pending_count_;
  } else {
    if (!pwrite_all(seg->log_fd, frame.data(), frame.size(), position)) {
      int err = errno;
      [[maybe_unused]] int rc = ::ftruncate(seg->log_fd, static_cast<off_t>(position));
      throw BrokerError(ErrorCode::Io, "append to " + seg->log_path.string() + ": " + std::strerror(err));
    }
    std::string idx;
    put<std::uint32_t>(idx, static_cast<std::uint32_t>(position));
    if (!pwrite_all(seg->idx_fd, idx.data(), idx.size(), kMagicSize + 4 * seg->positions.size())) {
      throw BrokerError(ErrorCode::Io, "index write to " + seg->idx_path.string() + " failed");
    }
    if (options_.flush == FlushPolicy::Sync && ::fdatasync(seg->log_fd) != 0) {
      throw BrokerError(ErrorCode::Io, "fdatasync " + seg->log_path.string() + " failed");
    }
  }
  seg->positions.push_back(static_cast<std::uint32_t>(position));
  seg->size += frame_size;
  ++next_offset_;
  if (options_.flush == FlushPolicy::Batched && pending_count_ >= options_.batch_messages) flush_locked();
  enforce_retention();
  if (pending_count_ == 0) {
    {
      std::lock_guard nl(notify_mu_);
      visible_next_.store(next_offset_);
    }
    notify_cv_.notify_all();
  }
  return offset;
}

void Topic::flush_locked() {
  if (pending_count_ == 0) return;
  auto& seg = segments_.back();
  const auto start = seg.size - pending_frames_.size();
  const auto idx_start = kMagicSize + 4 * (seg.positions.size() - pending_count_);
  if (!pwrite_all(seg.log_fd, pending_frames_.data(), pending_frames_.size(), start) ||
      !pwrite_all(seg.idx_fd, pending_index_.data(), pending_index_.size(), idx_start)) {
    throw BrokerError(ErrorCode::Io, "batched flush to " + seg.log_path.string() + " failed");
  }
  pending_frames_.clear();
  pending_index_.clear();
  pending_count_ = 0;
  {
    std::lock_guard nl(notify_mu_);
    visible_next_.store(next_offset_);
  }
  notify_cv_.notify_all();
}

void Topic::flush() {
  std::unique_lock lock(mu_);
  flush_locked();
}

std::vector<Message> Topic::read(std::uint64_t from_offset, std::size_t max_n) {
  if (options_.flush == FlushPolicy::Batched) {
    std::unique_lock lock(mu_);
    flush_locked();
  }
  std::shared_lock lock(mu_);
  std::vector<Message> out;
  const auto floor = earliest_locked();
  if (from_offset < floor) {
    throw BrokerError(ErrorCode::OffsetOutOfRange,
                      "offset " + std::to_string(from_offset) + " is below the retention floor " + std::to_string(floor),
                      floor);
  }
  if (from_offset >= next_offset_ || max_n == 0) return out;
  auto it = std::upper_bound(segments_.begin(), segments_.end(), from_offset,
                             [](std::uint64_t off, const Segment& s) { return off < s.base_offset; });
  --it;
  out.reserve(std::min<std::uint64_t>(max_n, next_offset_ - from_offset));
  std::uint64_t cursor = from_offset;
  std::string buf;
  for (; it != segments_.end() && out.size() < max_n; ++it) {
    const auto& seg = *it;
    auto rel = cursor - seg.base_offset;
    if (rel >= seg.positions.size()) continue;
    auto count = std::min<std::uint64_t>(max_n - out.size(), seg.positions.size() - rel);
    auto begin = seg.positions[rel];
    std::uint64_t end = rel + count < seg.positions.size() ? seg.positions[rel + count] : seg.size;
    buf.resize(end - begin);
    if (!pread_all(seg.log_fd, buf.data(), buf.size(), begin)) {
      throw BrokerError(ErrorCode::Io, "read from " + seg.log_path.string() + " failed");
    }
    std::size_t pos = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
      Message m;
      auto n = parse_frame(buf.data() + pos, buf.size() - pos, cursor, &m);
      if (n == 0) throw BrokerError(ErrorCode::Corrupt, "damaged frame at offset " + std::to_string(cursor));
      pos += n;
      ++cursor;
      out.push_back(std::move(m));
    }
  }
  return out;
}

bool Topic::wait_for(std::uint64_t from_offset, std::chrono::milliseconds timeout) {
  std::unique_lock lock(notify_mu_);
  return notify_cv_.wait_for(lock, timeout, [&] { return visible_next_.load() > from_offset; });
}

void Topic::set_group(const std::string& group, std::optional<std::uint64_t> committed) {
  std::unique_lock lock(mu_);
  auto& slot = groups_[group];
  if (committed) slot = committed;
}

std::optional<std::uint64_t> Topic::committed(const std::string& group) const {
  std::shared_lock lock(mu_);
  auto it = groups_.find(group);
  return it == groups_.end() ? std::nullopt : it->second;
}

bool Topic::has_group(const std::string& group) const {
  std::shared_lock lock(mu_);
  return groups_.count(group) > 0;
}

std::uint64_t Topic::resume_offset(const std::string& group) const {
  std::shared_lock lock(mu_);
  auto floor = earliest_locked();
  auto it = groups_.find(group);
  if (it == groups_.end() || !it->second) return floor;
  return std::max(*it->second + 1, floor);
}

std::uint64_t Topic::next_offset() const {
  std::shared_lock lock(mu_);
  return next_offset_;
}

TopicStats Topic::stats() const {
  std::shared_lock lock(mu_);
  TopicStats s;
  s.size_bytes = log_bytes_locked() - kMagicSize * segments_.size();
  s.disk_bytes = log_bytes_locked();
  s.earliest_offset = earliest_locked();
  s.latest_offset = next_offset_;
  s.segment_count = segments_.size();
  for (const auto& [group, committed] : groups_) {
    std::uint64_t pos = committed ? std::max(*committed + 1, s.earliest_offset) : s.earliest_offset;
    s.lag[group] = next_offset_ - std::min(pos, next_offset_);
  }
  return s;
}

}  // namespace traceadapt::broker
