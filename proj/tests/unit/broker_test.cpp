#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fstream>
#include <random>
#include <thread>

#include "doctest.h"
#include "test_support.hpp"
#include "traceadapt/broker/broker.hpp"

using namespace traceadapt;
using namespace traceadapt::broker;
using traceadapt::testing::TempDir;

namespace {

std::uint64_t offset_of(const AppendResult& r) {
  REQUIRE(std::holds_alternative<std::uint64_t>(r));
  return std::get<std::uint64_t>(r);
}

std::uint64_t disk_log_bytes(const std::filesystem::path& dir) {
  std::uint64_t total = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".log") total += e.file_size();
  }
  return total;
}

}  // namespace

TEST_CASE("topic names must embed a tenant and a stage") {
  CHECK(parse_topic_name("cmf.raw"));
  CHECK(parse_topic_name("cf.epcis")->tenant.str() == "cf");
  CHECK_FALSE(parse_topic_name("raw"));
  CHECK_FALSE(parse_topic_name("cmf.other"));
  CHECK_FALSE(parse_topic_name("CMF.raw"));
  CHECK_FALSE(parse_topic_name("a.b.raw"));
}

TEST_CASE("create_topic") {
  TempDir dir;
  Broker b(dir.path());
  b.create_topic("cmf.raw");
  CHECK(b.topic_config("cmf.raw").retention_bytes == 512ull * 1024 * 1024);

  try {
    b.create_topic("cmf.raw");
    FAIL("expected already_exists");
  } catch (const BrokerError& e) {
    CHECK(e.code() == ErrorCode::AlreadyExists);
  }
  try {
    b.create_topic("raw");
    FAIL("expected invalid_name");
  } catch (const BrokerError& e) {
    CHECK(e.code() == ErrorCode::InvalidName);
  }
}

TEST_CASE("append assigns offsets from zero and read returns contiguous ranges") {
  TempDir dir;
  Broker b(dir.path());
  b.create_topic("cmf.raw");
  CHECK(offset_of(b.append("cmf.raw", "k0", "p0")) == 0);
  CHECK(offset_of(b.append("cmf.raw", "k1", "p1")) == 1);
  CHECK(offset_of(b.append("cmf.raw", "k2", "p2")) == 2);

  auto msgs = b.read("cmf.raw", 0, 2);
  REQUIRE(msgs.size() == 2);
  CHECK(msgs[0].offset == 0);
  CHECK(msgs[1].offset == 1);
  CHECK(msgs[1].key == "k1");
  CHECK(msgs[1].payload == "p1");
  CHECK(b.read("cmf.raw", 3, 10).empty());
  CHECK(b.read("cmf.raw", 99, 10).empty());
  CHECK(b.read("cmf.raw", 1, 100).size() == 2);
}

TEST_CASE("back-pressure at the high watermark") {
  TempDir dir;
  Broker b(dir.path());
  TopicConfig cfg;
  cfg.high_watermark_msgs = 10;
  b.create_topic("cf.raw", cfg);
  b.register_group("cf.raw", "transform");
  for (int i = 0; i < 10; ++i) offset_of(b.append("cf.raw", "k", "p"));
  auto r = b.append("cf.raw", "k", "p");
  REQUIRE(std::holds_alternative<Backpressure>(r));
  CHECK(std::get<Backpressure>(r).unconsumed == 10);

  // Consuming relieves the pressure.
  b.commit_offset("cf.raw", "transform", 0);
  CHECK(offset_of(b.append("cf.raw", "k", "p")) == 10);
  CHECK(std::holds_alternative<Backpressure>(b.append("cf.raw", "k", "p")));
}

TEST_CASE("consumer offsets") {
  TempDir dir;
  {
    Broker b(dir.path());
    b.create_topic("sn.epcis");
    for (int i = 0; i < 8; ++i) b.append("sn.epcis", "k", "p" + std::to_string(i));
    CHECK(b.resume_offset("sn.epcis", "loader") == 0);
    b.commit_offset("sn.epcis", "other", 3);  // fresh group, any valid offset
    b.commit_offset("sn.epcis", "loader", 5);
    try {
      b.commit_offset("sn.epcis", "loader", 3);
      FAIL("expected regression");
    } catch (const BrokerError& e) {
      CHECK(e.code() == ErrorCode::OffsetRegression);
    }
    CHECK_THROWS_AS(b.commit_offset("sn.epcis", "loader", 8), BrokerError);
    b.commit_offset("sn.epcis", "loader", 5);  // re-commit is fine
  }
  Broker reopened(dir.path());
  CHECK(reopened.committed("sn.epcis", "loader") == 5u);
  CHECK(reopened.resume_offset("sn.epcis", "loader") == 6);
  CHECK(reopened.read("sn.epcis", 6, 1).at(0).payload == "p6");
}

TEST_CASE("stats") {
  TempDir dir;
  Broker b(dir.path());
  b.create_topic("cmf.raw");
  auto fresh = b.stats("cmf.raw");
  CHECK(fresh.size_bytes == 0);
  CHECK(fresh.disk_bytes == 8);  // segment header
  CHECK(fresh.latest_offset == 0);
  CHECK(fresh.lag.empty());

  b.register_group("cmf.raw", "transform");
  for (int i = 0; i < 5; ++i) b.append("cmf.raw", "k", "payload");
  auto s = b.stats("cmf.raw");
  CHECK(s.lag.at("transform") == 5);
  CHECK(s.latest_offset == 5);
  b.commit_offset("cmf.raw", "transform", 1);
  CHECK(b.stats("cmf.raw").lag.at("transform") == 3);
}

TEST_CASE("retention deletes whole oldest segments and reads below the floor fail") {
  TempDir dir;
  Broker b(dir.path());
  TopicConfig cfg;
  cfg.segment_bytes = 4096;
  cfg.retention_bytes = 16384;
  b.create_topic("cmf.raw", cfg);
  const std::string payload(200, 'x');
  for (int i = 0; i < 400; ++i) {
    b.append("cmf.raw", "key", payload);
    CHECK(disk_log_bytes(dir / "cmf.raw") <= cfg.retention_bytes + cfg.segment_bytes);
  }
  auto s = b.stats("cmf.raw");
  CHECK(s.earliest_offset > 0);
  CHECK(s.disk_bytes >= cfg.retention_bytes);
  try {
    b.read("cmf.raw", 0, 1);
    FAIL("expected offset_out_of_range");
  } catch (const BrokerError& e) {
    CHECK(e.code() == ErrorCode::OffsetOutOfRange);
    CHECK(e.floor() == s.earliest_offset);
  }
  CHECK(b.read("cmf.raw", s.earliest_offset, 1).at(0).offset == s.earliest_offset);
}

TEST_CASE("property: retention bound holds for random message sizes") {
  TempDir dir;
  Broker b(dir.path());
  TopicConfig cfg;
  cfg.segment_bytes = 2048;
  cfg.retention_bytes = 10000;
  b.create_topic("cf.dlq", cfg);
  std::mt19937 rng(3);
  for (int i = 0; i < 1500; ++i) {
    b.append("cf.dlq", "k", std::string(rng() % 1500, 'y'));
    REQUIRE(disk_log_bytes(dir / "cf.dlq") <= cfg.retention_bytes + cfg.segment_bytes);
  }
}

TEST_CASE("messages larger than a segment are refused") {
  TempDir dir;
  Broker b(dir.path());
  TopicConfig cfg;
  cfg.segment_bytes = 1024;
  b.create_topic("cf.raw", cfg);
  try {
    b.append("cf.raw", "k", std::string(2000, 'z'));
    FAIL("expected too_large");
  } catch (const BrokerError& e) {
    CHECK(e.code() == ErrorCode::TooLarge);
  }
  CHECK(b.stats("cf.raw").latest_offset == 0);
}

TEST_CASE("property: concurrent producers see a strictly increasing total order") {
  TempDir dir;
  Broker b(dir.path());
  TopicConfig cfg;
  cfg.segment_bytes = 64 * 1024;
  b.create_topic("cmf.raw", cfg);
  constexpr int kThreads = 4;
  constexpr int kPerThread = 500;
  std::vector<std::vector<std::uint64_t>> acked(kThreads);
  std::vector<std::thread> producers;
  for (int t = 0; t < kThreads; ++t) {
    producers.emplace_back([&, t] {
      for (int i = 0; i < kPerThread; ++i) {
        acked[t].push_back(std::get<std::uint64_t>(b.append("cmf.raw", std::to_string(t), std::to_string(i))));
      }
    });
  }
  for (auto& p : producers) p.join();

  std::vector<Message> all;
  std::uint64_t next = 0;
  while (true) {
    auto batch = b.read("cmf.raw", next, 97);
    if (batch.empty()) break;
    for (auto& m : batch) all.push_back(std::move(m));
    next = all.back().offset + 1;
  }
  REQUIRE(all.size() == kThreads * kPerThread);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i].offset == i);
  // Each producer's messages appear in its own append order at the offsets it was given.
  for (int t = 0; t < kThreads; ++t) {
    for (int i = 0; i < kPerThread; ++i) {
      const auto& m = all[acked[t][i]];
      CHECK(m.key == std::to_string(t));
      CHECK(m.payload == std::to_string(i));
    }
    CHECK(std::is_sorted(acked[t].begin(), acked[t].end()));
  }
}

TEST_CASE("isolation: reads never cross topics") {
  TempDir dir;
  Broker b(dir.path());
  const std::vector<std::string> tenants{"cmf", "cf", "sn"};
  for (const auto& t : tenants) b.create_topic(t + ".raw");
  std::mt19937 rng(11);
  for (int i = 0; i < 3000; ++i) {
    const auto& t = tenants[rng() % tenants.size()];
    b.append(t + ".raw", t, t + ":" + std::to_string(i));
  }
  std::size_t total = 0;
  for (const auto& t : tenants) {
    for (const auto& m : b.read(t + ".raw", 0, 10000)) {
      CHECK(m.key == t);
      CHECK(m.payload.rfind(t + ":", 0) == 0);
      ++total;
    }
  }
  CHECK(total == 3000);
}

TEST_CASE("recovery truncates a torn tail and continues the offset sequence") {
  TempDir dir;
  {
    Broker b(dir.path());
    b.create_topic("cmf.raw");
    for (int i = 0; i < 5; ++i) b.append("cmf.raw", "k", "m" + std::to_string(i));
  }
  auto log = dir / "cmf.raw" / "00000000000000000000.log";
  {
    std::ofstream f(log, std::ios::app | std::ios::binary);
    f << "\x40\x00\x00\x00garbage-half-frame";
  }
  Broker b(dir.path());
  CHECK(b.stats("cmf.raw").latest_offset == 5);
  CHECK(offset_of(b.append("cmf.raw", "k", "m5")) == 5);
  auto msgs = b.read("cmf.raw", 0, 10);
  REQUIRE(msgs.size() == 6);
  CHECK(msgs[5].payload == "m5");
}

TEST_CASE("durability: acknowledged appends survive kill -9") {
  TempDir dir;
  {
    Broker b(dir.path());
    TopicConfig cfg;
    cfg.segment_bytes = 8192;  // several segment rolls during the run
    b.create_topic("cf.raw", cfg);
  }
  for (int round = 0; round < 3; ++round) {
    int fds[2];
    REQUIRE(::pipe(fds) == 0);
    pid_t pid = ::fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
      ::close(fds[0]);
      Broker b(dir.path());
      for (std::uint64_t i = 0;; ++i) {
        auto off = std::get<std::uint64_t>(b.append("cf.raw", "r" + std::to_string(round), "v" + std::to_string(i)));
        // Report only after the broker acknowledged the append.
        if (::write(fds[1], &off, sizeof off) != sizeof off) ::_exit(2);
      }
    }
    ::close(fds[1]);
    std::vector<std::uint64_t> acked;
    std::uint64_t off = 0;
    std::mt19937 rng(round);
    std::size_t stop_after = 200 + rng() % 400;
    while (acked.size() < stop_after && ::read(fds[0], &off, sizeof off) == sizeof off) acked.push_back(off);
    ::kill(pid, SIGKILL);
    int status = 0;
    ::waitpid(pid, &status, 0);
    while (::read(fds[0], &off, sizeof off) == sizeof off) acked.push_back(off);
    ::close(fds[0]);

    Broker b(dir.path());
    auto head = b.stats("cf.raw").latest_offset;
    for (auto a : acked) {
      REQUIRE(a < head);
      auto m = b.read("cf.raw", a, 1);
      REQUIRE(m.size() == 1);
      CHECK(m[0].key == "r" + std::to_string(round));
    }
  }
}

TEST_CASE("batched flush policy") {
  TempDir dir;
  {
    Broker b(dir.path(), BrokerOptions{FlushPolicy::Batched, 4});
    b.create_topic("sn.raw");
    for (int i = 0; i < 6; ++i) b.append("sn.raw", "k", std::to_string(i));
    CHECK(b.read("sn.raw", 0, 10).size() == 6);  // readers force a flush
    b.append("sn.raw", "k", "6");
    b.flush();
  }
  Broker b(dir.path());
  CHECK(b.read("sn.raw", 0, 10).size() == 7);
}

TEST_CASE("wait_for wakes on append") {
  TempDir dir;
  Broker b(dir.path());
  b.create_topic("cmf.epcis");
  CHECK_FALSE(b.wait_for("cmf.epcis", 0, std::chrono::milliseconds{10}));
  std::thread producer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds{20});
    b.append("cmf.epcis", "k", "v");
  });
  CHECK(b.wait_for("cmf.epcis", 0, std::chrono::seconds{5}));
  producer.join();
}
