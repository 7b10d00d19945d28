#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "traceadapt/core/digest.hpp"
#include "traceadapt/core/event.hpp"
#include "traceadapt/core/tenant.hpp"

namespace traceadapt::ledger {

struct Channel {
  std::string name;
  std::set<TenantId> members;
  bool shared = false;

  bool is_member(const TenantId& t) const { return members.count(t) != 0; }
};

struct Transaction {
  std::string tx_id;
  IdempotencyKey idempotency_key{Sha256{}};
  CanonicalEvent event;
  Timestamp committed_at{};
};

struct Block {
  std::uint64_t number = 0;
  std::string prev_hash;
  std::string block_hash;
  std::vector<Transaction> txs;
};

/// The stored form of a block, as written to the channel file.
nlohmann::json to_json(const Block& b);

struct CommitNotice {
  std::string channel;
  std::string tx_id;
  std::uint64_t block_number = 0;
  IdempotencyKey idempotency_key{Sha256{}};
};

struct Committed {
  std::string tx_id;
  std::uint64_t block_number = 0;
};

/// The key was already on the channel; nothing was written.
struct Duplicate {
  std::string existing_tx_id;
  std::uint64_t block_number = 0;
};

using SubmitResult = std::variant<Committed, Duplicate>;

/// Outcome of a queued submission, available once its block is sealed.
class SubmitTicket {
 public:
  /// Blocks until the outcome is known; rethrows a commit failure.
  SubmitResult get() const;
  bool ready() const;

 private:
  friend class Ledger;
  std::optional<SubmitResult> settled_;
  std::shared_future<Committed> pending_;
  bool mine_ = false;
};

struct JourneyEntry {
  CanonicalEvent event;
  std::string tx_id;
  std::uint64_t block_number = 0;
  std::string channel;

  bool operator==(const JourneyEntry&) const = default;
};

struct ChainCheck {
  bool ok = true;
  std::optional<std::uint64_t> first_bad_block;
  std::string reason;
};

enum class ErrorCode { AlreadyExists, InvalidMembership, UnknownChannel, AccessDenied, InvalidEvent, UnknownBlock, Unavailable, Corrupt, Io };

class LedgerError : public std::runtime_error {
 public:
  LedgerError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

  /// Retrying may succeed.
  bool transient() const noexcept { return code_ == ErrorCode::Unavailable || code_ == ErrorCode::Io; }

 private:
  ErrorCode code_;
};

struct LedgerOptions {
  /// Minimum spacing between blocks on one channel.
  std::chrono::milliseconds min_commit_interval{1000};
  std::size_t max_block_txs = 1;
  EventRules rules{};
};

/// One subscriber's view of a channel's commits: replayed history first, then
/// live notices, each exactly once.
class CommitSubscription {
 public:
  std::optional<CommitNotice> next(std::chrono::milliseconds timeout);
  void close();
  bool closed() const;

 private:
  friend class Ledger;
  void push(CommitNotice n);

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<CommitNotice> queue_;
  bool closed_ = false;
};

struct ChannelState;

/// In-process permissioned ledger. Each channel has one committer thread that
/// seals submissions into hash-chained blocks and appends them to
/// `<dir>/<channel>.ledger`; queries read committed state concurrently.
class Ledger {
 public:
  explicit Ledger(std::filesystem::path dir, LedgerOptions options = {});
  ~Ledger();

  Ledger(const Ledger&) = delete;
  Ledger& operator=(const Ledger&) = delete;

  Channel create_channel(const std::string& name, std::set<TenantId> members, bool shared);
  /// Returns the existing channel when name, members and kind all match.
  Channel ensure_channel(const std::string& name, std::set<TenantId> members, bool shared);
  std::optional<Channel> channel(const std::string& name) const;
  std::vector<Channel> channels() const;

  /// Blocks until the event is sealed into a block (or found to be a duplicate).
  SubmitResult submit(const std::string& channel, const TenantId& caller, const CanonicalEvent& event);
  /// Queues the event and returns at once. Admission errors are thrown here;
  /// submissions on one channel are sealed in call order.
  SubmitTicket submit_async(const std::string& channel, const TenantId& caller, const CanonicalEvent& event);

  Block get_block(const std::string& channel, std::uint64_t number, const TenantId& caller) const;
  /// Number of blocks including genesis.
  std::uint64_t height(const std::string& channel) const;
  ChainCheck verify_chain(const std::string& channel) const;

  /// Committed events visible to `caller` that reference `epc` or, through
  /// transformation events, any of its predecessor EPCs; ordered by event_time.
  std::vector<JourneyEntry> query_journey(const std::string& epc, const TenantId& caller) const;

  std::shared_ptr<CommitSubscription> subscribe_commits(const std::string& channel, std::uint64_t from_block,
                                                        const TenantId& caller);

  /// Simulates an outage: submits fail with a transient Unavailable error.
  void set_available(bool available);

 private:
  ChannelState& state(const std::string& name) const;
  void start_committer(ChannelState& ch);
  void committer_loop(ChannelState& ch);
  void load_channel(const std::filesystem::path& file);

  std::filesystem::path dir_;
  LedgerOptions options_;
  mutable std::mutex channels_mu_;
  std::map<std::string, std::unique_ptr<ChannelState>> channels_;
  std::atomic<bool> available_{true};
};

/// Hash-chain helpers, exposed for tests and offline audit.
std::string genesis_prev_hash();
std::string compute_block_hash(std::uint64_t number, const std::string& prev_hash,
                               const std::vector<std::string>& tx_ids);
/// Covers the full event, record_time included, so no stored byte escapes verification.
std::string compute_tx_id(const std::string& channel, const CanonicalEvent& event, std::uint64_t block_number,
                          std::size_t index, Timestamp committed_at);

}  // namespace traceadapt::ledger
