#include "traceadapt/ledger/ledger.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <future>
#include <shared_mutex>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "traceadapt/core/canonical.hpp"

namespace traceadapt::ledger {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "traceadapt-ledger";
constexpr int kVersion = 1;

struct TxRef {
  std::uint64_t block = 0;
  std::uint32_t index = 0;
};

struct PendingSubmit {
  CanonicalEvent event;
  IdempotencyKey key;
  std::promise<Committed> promise;
};

bool valid_channel_name(std::string_view name) {
  if (name.empty() || name.size() > 128) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
  });
}

json block_to_json(const Block& b) {
  json txs = json::array();
  for (const auto& tx : b.txs) {
    txs.push_back({{"tx_id", tx.tx_id},
                   {"idempotency_key", tx.idempotency_key.hex()},
                   {"committed_at", format_utc(tx.committed_at)},
                   {"event", to_json(tx.event)}});
  }
  return {{"number", b.number}, {"prev_hash", b.prev_hash}, {"block_hash", b.block_hash}, {"txs", std::move(txs)}};
}

std::optional<Block> block_from_json(const json& j) {
  try {
    Block b;
    b.number = j.at("number").get<std::uint64_t>();
    b.prev_hash = j.at("prev_hash").get<std::string>();
    b.block_hash = j.at("block_hash").get<std::string>();
    for (const auto& t : j.at("txs")) {
      auto key = IdempotencyKey::from_hex(t.at("idempotency_key").get<std::string>());
      auto at = parse_iso8601(t.at("committed_at").get<std::string>());
      auto ev = event_from_json(t.at("event"));
      if (!key || !at || !std::holds_alternative<CanonicalEvent>(ev)) return std::nullopt;
      b.txs.push_back({t.at("tx_id").get<std::string>(), *key, std::get<CanonicalEvent>(std::move(ev)), *at});
    }
    return b;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

}  // namespace

json to_json(const Block& b) { return block_to_json(b); }

std::string genesis_prev_hash() { return std::string(64, '0'); }

std::string compute_block_hash(std::uint64_t number, const std::string& prev_hash,
                               const std::vector<std::string>& tx_ids) {
  std::string input = "block\n" + std::to_string(number) + "\n" + prev_hash + "\n";
  for (const auto& id : tx_ids) input += id + "\n";
  return sha256_hex(input);
}

std::string compute_tx_id(const std::string& channel, const CanonicalEvent& event, std::uint64_t block_number,
                          std::size_t index, Timestamp committed_at) {
  // The nonce pins the transaction to its slot and commit instant.
  std::string input = "tx\n" + channel + "\n" + canonicalize(to_json(event)) + "\n" + std::to_string(block_number) +
                      "/" + std::to_string(index) + "/" + std::to_string(to_unix_millis(committed_at));
  return sha256_hex(input);
}

// ---------------------------------------------------------------------------

std::optional<CommitNotice> CommitSubscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
  if (queue_.empty()) return std::nullopt;
  auto n = std::move(queue_.front());
  queue_.pop_front();
  return n;
}

void CommitSubscription::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool CommitSubscription::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

void CommitSubscription::push(CommitNotice n) {
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    queue_.push_back(std::move(n));
  }
  cv_.notify_all();
}

// ---------------------------------------------------------------------------

struct ChannelState {
  Channel info;
  fs::path file;
  int fd = -1;

  mutable std::shared_mutex mu;  // committed state below
  std::vector<Block> blocks;
  std::vector<std::string> stored_lines;
  std::unordered_map<IdempotencyKey, TxRef> by_key;
  std::unordered_map<std::string, std::vector<TxRef>> by_epc;
  std::vector<std::weak_ptr<CommitSubscription>> subscribers;
  bool damaged = false;

  std::mutex queue_mu;  // committer hand-off below
  std::condition_variable queue_cv;
  std::deque<std::unique_ptr<PendingSubmit>> queue;
  std::unordered_map<IdempotencyKey, std::shared_future<Committed>> pending;
  bool stopping = false;
  std::thread committer;
  std::chrono::steady_clock::time_point last_commit{};

  const Transaction& tx(const TxRef& r) const { return blocks[r.block].txs[r.index]; }

  void index_block(const Block& b) {
    for (std::uint32_t i = 0; i < b.txs.size(); ++i) {
      const auto& t = b.txs[i];
      TxRef ref{b.number, i};
      by_key.emplace(t.idempotency_key, ref);
      std::unordered_set<std::string> epcs;
      for (const auto& epc : t.event.all_epcs()) {
        if (epcs.insert(epc).second) by_epc[epc].push_back(ref);
      }
    }
  }
};

Ledger::Ledger(fs::path dir, LedgerOptions options) : dir_(std::move(dir)), options_(options) {
  fs::create_directories(dir_);
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() == ".ledger") load_channel(entry.path());
  }
  for (auto& [name, ch] : channels_) start_committer(*ch);
}

Ledger::~Ledger() {
  for (auto& [name, ch] : channels_) {
    {
      std::lock_guard lock(ch->queue_mu);
      ch->stopping = true;
    }
    ch->queue_cv.notify_all();
    if (ch->committer.joinable()) ch->committer.join();
    std::unique_lock lock(ch->mu);
    for (auto& w : ch->subscribers) {
      if (auto s = w.lock()) s->close();
    }
    if (ch->fd >= 0) ::close(ch->fd);
  }
}

void Ledger::load_channel(const fs::path& file) {
  std::string text;
  {
    std::ifstream f(file, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }
  // A kill mid-write can leave an unterminated last line; it was never acknowledged.
  auto last_nl = text.rfind('\n');
  if (last_nl == std::string::npos) throw LedgerError(ErrorCode::Corrupt, "no header in " + file.string());
  if (last_nl + 1 != text.size()) {
    text.resize(last_nl + 1);
    fs::resize_file(file, text.size());
  }
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  auto header = json::parse(lines.front(), nullptr, false);
  if (header.is_discarded() || header.value("format", "") != kFormat || header.value("version", 0) != kVersion) {
    throw LedgerError(ErrorCode::Corrupt, "bad ledger header in " + file.string());
  }
  auto ch = std::make_unique<ChannelState>();
  ch->info.name = header.at("channel").get<std::string>();
  ch->info.shared = header.at("shared").get<bool>();
  for (const auto& m : header.at("members")) ch->info.members.insert(TenantId(m.get<std::string>()));
  ch->file = file;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto parsed = json::parse(lines[i], nullptr, false);
    std::optional<Block> b;
    if (!parsed.is_discarded()) b = block_from_json(parsed);
    if (!b) {
      b = Block{};
      b->number = i - 1;
    }
    ch->stored_lines.push_back(lines[i]);
    ch->blocks.push_back(std::move(*b));
  }
  if (ch->blocks.empty()) throw LedgerError(ErrorCode::Corrupt, "missing genesis block in " + file.string());
  for (const auto& b : ch->blocks) ch->index_block(b);
  ch->fd = ::open(file.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
  if (ch->fd < 0) throw LedgerError(ErrorCode::Io, "cannot open " + file.string());
  auto name = ch->info.name;
  channels_.emplace(name, std::move(ch));
  auto check = verify_chain(name);
  if (!check.ok) {
    channels_.at(name)->damaged = true;
    spdlog::error("ledger channel {} fails verification at block {}: {}", name, *check.first_bad_block, check.reason);
  }
}

void Ledger::start_committer(ChannelState& ch) {
  ch.committer = std::thread([this, &ch] { committer_loop(ch); });
}

ChannelState& Ledger::state(const std::string& name) const {
  std::lock_guard lock(channels_mu_);
  auto it = channels_.find(name);
  if (it == channels_.end()) throw LedgerError(ErrorCode::UnknownChannel, "unknown channel '" + name + "'");
  return *it->second;
}

Channel Ledger::create_channel(const std::string& name, std::set<TenantId> members, bool shared) {
  if (!valid_channel_name(name)) throw LedgerError(ErrorCode::InvalidMembership, "invalid channel name '" + name + "'");
  if (!shared && members.size() != 1) {
    throw LedgerError(ErrorCode::InvalidMembership, "private channel '" + name + "' must have exactly one member");
  }
  if (members.empty()) throw LedgerError(ErrorCode::InvalidMembership, "channel '" + name + "' has no members");
  std::lock_guard lock(channels_mu_);
  if (channels_.count(name) != 0) throw LedgerError(ErrorCode::AlreadyExists, "channel '" + name + "' already exists");

  auto ch = std::make_unique<ChannelState>();
  ch->info = Channel{name, std::move(members), shared};
  ch->file = dir_ / (name + ".ledger");
  Block genesis{0, genesis_prev_hash(), compute_block_hash(0, genesis_prev_hash(), {}), {}};
  json member_list = json::array();
  for (const auto& m : ch->info.members) member_list.push_back(m.str());
  json header = {{"format", kFormat}, {"version", kVersion}, {"channel", name}, {"members", member_list}, {"shared", shared}};
  auto genesis_line = canonicalize(block_to_json(genesis));
  auto text = canonicalize(header) + "\n" + genesis_line + "\n";
  auto tmp = ch->file;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) throw LedgerError(ErrorCode::Io, "cannot write " + tmp.string());
  }
  fs::rename(tmp, ch->file);
  ch->fd = ::open(ch->file.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
  if (ch->fd < 0) throw LedgerError(ErrorCode::Io, "cannot open " + ch->file.string());
  ch->blocks.push_back(genesis);
  ch->stored_lines.push_back(genesis_line);
  auto info = ch->info;
  auto& ref = *ch;
  channels_.emplace(name, std::move(ch));
  start_committer(ref);
  return info;
}

Channel Ledger::ensure_channel(const std::string& name, std::set<TenantId> members, bool shared) {
  if (auto existing = channel(name)) {
    if (existing->members != members || existing->shared != shared) {
      throw LedgerError(ErrorCode::InvalidMembership, "channel '" + name + "' exists with different membership");
    }
    return *existing;
  }
  return create_channel(name, std::move(members), shared);
}

std::optional<Channel> Ledger::channel(const std::string& name) const {
  std::lock_guard lock(channels_mu_);
  auto it = channels_.find(name);
  if (it == channels_.end()) return std::nullopt;
  return it->second->info;
}

std::vector<Channel> Ledger::channels() const {
  std::lock_guard lock(channels_mu_);
  std::vector<Channel> out;
  for (const auto& [name, ch] : channels_) out.push_back(ch->info);
  return out;
}

void Ledger::set_available(bool available) { available_.store(available); }

SubmitResult SubmitTicket::get() const {
  if (settled_) return *settled_;
  Committed c = pending_.get();
  if (mine_) return c;
  return Duplicate{c.tx_id, c.block_number};
}

bool SubmitTicket::ready() const {
  return settled_ || pending_.wait_for(std::chrono::seconds(0)) == std::future_status::ready;
}

SubmitResult Ledger::submit(const std::string& channel, const TenantId& caller, const CanonicalEvent& event) {
  return submit_async(channel, caller, event).get();
}

SubmitTicket Ledger::submit_async(const std::string& channel, const TenantId& caller, const CanonicalEvent& event) {
  auto& ch = state(channel);
  if (!ch.info.is_member(caller)) {
    throw LedgerError(ErrorCode::AccessDenied, "'" + caller.str() + "' is not a member of channel '" + channel + "'");
  }
  if (auto errors = validate_event(event, options_.rules); !errors.empty()) {
    throw LedgerError(ErrorCode::InvalidEvent, "invalid event: " + errors.front().message);
  }
  if (!available_.load()) throw LedgerError(ErrorCode::Unavailable, "ledger unavailable");
  if (ch.damaged) throw LedgerError(ErrorCode::Corrupt, "channel '" + channel + "' failed chain verification");

  auto key = idempotency_key(event);
  SubmitTicket ticket;
  {
    std::lock_guard ql(ch.queue_mu);
    if (ch.stopping) throw LedgerError(ErrorCode::Unavailable, "ledger shutting down");
    if (auto it = ch.pending.find(key); it != ch.pending.end()) {
      ticket.pending_ = it->second;
      return ticket;
    }
    {
      std::shared_lock sl(ch.mu);
      if (auto hit = ch.by_key.find(key); hit != ch.by_key.end()) {
        ticket.settled_ = Duplicate{ch.tx(hit->second).tx_id, hit->second.block};
        return ticket;
      }
    }
    auto p = std::make_unique<PendingSubmit>(PendingSubmit{event, key, {}});
    ticket.pending_ = p->promise.get_future().share();
    ticket.mine_ = true;
    ch.pending.emplace(key, ticket.pending_);
    ch.queue.push_back(std::move(p));
  }
  ch.queue_cv.notify_all();
  return ticket;
}

void Ledger::committer_loop(ChannelState& ch) {
  while (true) {
    std::vector<std::unique_ptr<PendingSubmit>> batch;
    {
      std::unique_lock ql(ch.queue_mu);
      ch.queue_cv.wait(ql, [&] { return ch.stopping || !ch.queue.empty(); });
      if (ch.queue.empty()) return;
      auto due = ch.last_commit + options_.min_commit_interval;
      if (std::chrono::steady_clock::now() < due) {
        ql.unlock();
        std::this_thread::sleep_until(due);
        ql.lock();
      }
      while (!ch.queue.empty() && batch.size() < std::max<std::size_t>(1, options_.max_block_txs)) {
        batch.push_back(std::move(ch.queue.front()));
        ch.queue.pop_front();
      }
    }

    Block block;
    std::string line;
    {
      std::shared_lock sl(ch.mu);
      block.number = ch.blocks.size();
      block.prev_hash = ch.blocks.back().block_hash;
    }
    const auto now = now_utc();
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto id = compute_tx_id(ch.info.name, batch[i]->event, block.number, i, now);
      ids.push_back(id);
      block.txs.push_back({id, batch[i]->key, batch[i]->event, now});
    }
    block.block_hash = compute_block_hash(block.number, block.prev_hash, ids);
    bool written = false;
    try {
      line = canonicalize(block_to_json(block));
      std::string out = line + "\n";
      written = ::write(ch.fd, out.data(), out.size()) == static_cast<ssize_t>(out.size());
    } catch (const std::exception& e) {
      spdlog::error("ledger channel {}: cannot serialize block: {}", ch.info.name, e.what());
    }

    if (written) {
      std::unique_lock wl(ch.mu);
      ch.stored_lines.push_back(line);
      ch.blocks.push_back(block);
      ch.index_block(ch.blocks.back());
      auto& subs = ch.subscribers;
      subs.erase(std::remove_if(subs.begin(), subs.end(),
                                [](const auto& w) {
                                  auto s = w.lock();
                                  return !s || s->closed();
                                }),
                 subs.end());
      for (const auto& tx : block.txs) {
        for (auto& w : subs) {
          if (auto s = w.lock()) s->push({ch.info.name, tx.tx_id, block.number, tx.idempotency_key});
        }
      }
    }
    {
      std::lock_guard ql(ch.queue_mu);
      for (const auto& p : batch) ch.pending.erase(p->key);
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (written) {
        batch[i]->promise.set_value(Committed{ids[i], block.number});
      } else {
        batch[i]->promise.set_exception(
            std::make_exception_ptr(LedgerError(ErrorCode::Io, "cannot append block to " + ch.file.string())));
      }
    }
    ch.last_commit = std::chrono::steady_clock::now();
  }
}

Block Ledger::get_block(const std::string& channel, std::uint64_t number, const TenantId& caller) const {
  auto& ch = state(channel);
  if (!ch.info.is_member(caller)) {
    throw LedgerError(ErrorCode::AccessDenied, "'" + caller.str() + "' is not a member of channel '" + channel + "'");
  }
  std::shared_lock sl(ch.mu);
  if (number >= ch.blocks.size()) {
    throw LedgerError(ErrorCode::UnknownBlock, "channel '" + channel + "' has no block " + std::to_string(number));
  }
  return ch.blocks[number];
}

std::uint64_t Ledger::height(const std::string& channel) const {
  auto& ch = state(channel);
  std::shared_lock sl(ch.mu);
  return ch.blocks.size();
}

ChainCheck Ledger::verify_chain(const std::string& channel) const {
  auto& ch = state(channel);
  std::shared_lock sl(ch.mu);
  auto bad = [](std::uint64_t n, std::string reason) { return ChainCheck{false, n, std::move(reason)}; };
  std::string expected_prev = genesis_prev_hash();
  std::unordered_set<IdempotencyKey> keys;
  for (std::uint64_t n = 0; n < ch.stored_lines.size(); ++n) {
    const auto& line = ch.stored_lines[n];
    auto parsed = json::parse(line, nullptr, false);
    if (parsed.is_discarded()) return bad(n, "unparsable block");
    try {
      if (canonicalize(parsed) != line) return bad(n, "block is not in canonical form");
    } catch (const CanonicalizationError&) {
      return bad(n, "block is not canonicalizable");
    }
    auto block = block_from_json(parsed);
    if (!block) return bad(n, "malformed block");
    if (block->number != n) return bad(n, "block number out of sequence");
    if (block->prev_hash != expected_prev) return bad(n, "previous-hash link broken");
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < block->txs.size(); ++i) {
      const auto& tx = block->txs[i];
      if (idempotency_key(tx.event) != tx.idempotency_key) return bad(n, "event does not match its idempotency key");
      if (compute_tx_id(ch.info.name, tx.event, n, i, tx.committed_at) != tx.tx_id) {
        return bad(n, "transaction id mismatch");
      }
      if (!keys.insert(tx.idempotency_key).second) return bad(n, "idempotency key committed twice");
      ids.push_back(tx.tx_id);
    }
    auto recomputed = compute_block_hash(n, block->prev_hash, ids);
    if (recomputed != block->block_hash) return bad(n, "block hash mismatch");
    expected_prev = recomputed;
  }
  return {};
}

std::vector<JourneyEntry> Ledger::query_journey(const std::string& epc, const TenantId& caller) const {
  std::vector<const ChannelState*> visible;
  {
    std::lock_guard lock(channels_mu_);
    for (const auto& [name, ch] : channels_) {
      if (ch->info.is_member(caller)) visible.push_back(ch.get());
    }
  }
  // Consistent snapshot across channels; map order gives a fixed lock order.
  std::vector<std::shared_lock<std::shared_mutex>> locks;
  for (const auto* ch : visible) locks.emplace_back(ch->mu);

  std::unordered_set<std::string> seen{epc};
  std::vector<std::string> work{epc};
  std::set<std::tuple<std::size_t, std::uint64_t, std::uint32_t>> hits;
  while (!work.empty()) {
    auto current = std::move(work.back());
    work.pop_back();
    for (std::size_t c = 0; c < visible.size(); ++c) {
      auto it = visible[c]->by_epc.find(current);
      if (it == visible[c]->by_epc.end()) continue;
      for (const auto& ref : it->second) {
        hits.emplace(c, ref.block, ref.index);
        const auto& ev = visible[c]->tx(ref).event;
        if (ev.event_type != EventType::Transformation) continue;
        if (std::find(ev.outputs.begin(), ev.outputs.end(), current) == ev.outputs.end()) continue;
        for (const auto& in : ev.inputs) {
          if (seen.insert(in).second) work.push_back(in);
        }
      }
    }
  }
  std::vector<JourneyEntry> out;
  for (const auto& [c, block, index] : hits) {
    const auto& tx = visible[c]->blocks[block].txs[index];
    out.push_back({tx.event, tx.tx_id, block, visible[c]->info.name});
  }
  std::sort(out.begin(), out.end(), [](const JourneyEntry& a, const JourneyEntry& b) {
    return std::tie(a.event.event_time, a.channel, a.block_number, a.tx_id) <
           std::tie(b.event.event_time, b.channel, b.block_number, b.tx_id);
  });
  return out;
}

std::shared_ptr<CommitSubscription> Ledger::subscribe_commits(const std::string& channel, std::uint64_t from_block,
                                                              const TenantId& caller) {
  auto& ch = state(channel);
  if (!ch.info.is_member(caller)) {
    throw LedgerError(ErrorCode::AccessDenied, "'" + caller.str() + "' is not a member of channel '" + channel + "'");
  }
  auto sub = std::make_shared<CommitSubscription>();
  std::unique_lock wl(ch.mu);
  for (auto n = from_block; n < ch.blocks.size(); ++n) {
    for (const auto& tx : ch.blocks[n].txs) sub->push({ch.info.name, tx.tx_id, n, tx.idempotency_key});
  }
  ch.subscribers.push_back(sub);
  return sub;
}

}  // namespace traceadapt::ledger
