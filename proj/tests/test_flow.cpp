#include <string>
#include <vector>

#include "doctest.h"
#include "etbert/errors.hpp"
#include "etbert/flow.hpp"
#include "etbert/rng.hpp"

using namespace etbert;

namespace {

CleanPacket packet(const IpAddr& src, uint16_t sport, const IpAddr& dst, uint16_t dport,
                   int64_t sec, bytes_t payload, uint64_t index = 0) {
  CleanPacket p;
  p.five_tuple = {src, sport, dst, dport, Transport::tcp};
  p.ts = {sec, 0};
  p.datagram = std::move(payload);
  p.source_index = index;
  return p;
}

const IpAddr kA = IpAddr::v4(10, 0, 0, 1);
const IpAddr kB = IpAddr::v4(10, 0, 0, 2);

// Flow with one packet per direction character, declared directions taken as
// given; payload byte = the packet's index.
Flow direction_flow(const std::string& dirs) {
  Flow f;
  f.id = 1;
  for (size_t i = 0; i < dirs.size(); i++) {
    CleanPacket p = packet(kA, 1000, kB, 2000, int64_t(i), {uint8_t(i)}, i);
    f.packets.emplace_back(std::move(p),
                           dirs[i] == 'A' ? Direction::from_origin : Direction::to_origin);
  }
  return f;
}

}  // namespace

TEST_CASE("canonical flow key ignores direction") {
  FiveTuple ab{kA, 1000, kB, 2000, Transport::tcp};
  FiveTuple ba{kB, 2000, kA, 1000, Transport::tcp};
  CHECK(FlowKey::canonical(ab) == FlowKey::canonical(ba));
  FiveTuple other{kA, 1000, kB, 2001, Transport::tcp};
  CHECK(FlowKey::canonical(ab) != FlowKey::canonical(other));
  FiveTuple udp{kA, 1000, kB, 2000, Transport::udp};
  CHECK(FlowKey::canonical(ab) != FlowKey::canonical(udp));
}

TEST_CASE("assemble_flows groups both directions and keeps first-seen order") {
  std::vector<CleanPacket> pkts;
  pkts.push_back(packet(kA, 1000, kB, 2000, 1, {1}, 0));   // flow 1
  pkts.push_back(packet(kA, 3000, kB, 4000, 2, {2}, 1));   // flow 2
  pkts.push_back(packet(kB, 2000, kA, 1000, 3, {3}, 2));   // flow 1 reply
  pkts.push_back(packet(kA, 1000, kB, 2000, 4, {4}, 3));   // flow 1

  auto flows = assemble_flows(pkts);
  REQUIRE(flows.size() == 2);
  CHECK(flows[0].packets.size() == 3);
  CHECK(flows[1].packets.size() == 1);
  CHECK(flows[0].id == 0);
  CHECK(flows[1].id == 1);

  // origin is the first packet's sender; replies flip direction
  CHECK(flows[0].origin.addr == kA);
  CHECK(flows[0].origin.port == 1000);
  CHECK(flows[0].packets[0].second == Direction::from_origin);
  CHECK(flows[0].packets[1].second == Direction::to_origin);
  CHECK(flows[0].packets[2].second == Direction::from_origin);
}

TEST_CASE("packets inside a flow sort by time then capture order") {
  std::vector<CleanPacket> pkts;
  pkts.push_back(packet(kA, 1, kB, 2, 10, {0}, 5));
  pkts.push_back(packet(kA, 1, kB, 2, 5, {1}, 6));
  pkts.push_back(packet(kA, 1, kB, 2, 10, {2}, 4));  // same second, earlier index
  auto flows = assemble_flows(pkts);
  REQUIRE(flows.size() == 1);
  CHECK(flows[0].packets[0].first.datagram == bytes_t{1});
  CHECK(flows[0].packets[1].first.datagram == bytes_t{2});
  CHECK(flows[0].packets[2].first.datagram == bytes_t{0});
}

TEST_CASE("bursts are maximal same-direction runs") {
  Flow f = direction_flow("AABA");
  auto bursts = generate_bursts(f);
  REQUIRE(bursts.size() == 3);
  CHECK(bursts[0].packet_idx == std::vector<uint32_t>{0, 1});
  CHECK(bursts[1].packet_idx == std::vector<uint32_t>{2});
  CHECK(bursts[2].packet_idx == std::vector<uint32_t>{3});
  CHECK(bursts[0].direction == Direction::from_origin);
  CHECK(bursts[1].direction == Direction::to_origin);
  CHECK(bursts[0].ordinal == 0);
  CHECK(bursts[2].ordinal == 2);
}

TEST_CASE("single packet flow yields one burst") {
  Flow f = direction_flow("A");
  auto bursts = generate_bursts(f);
  REQUIRE(bursts.size() == 1);
  CHECK(bursts[0].packet_idx == std::vector<uint32_t>{0});
}

TEST_CASE("bursts match a brute-force run splitter on every short direction string") {
  for (int len = 1; len <= 10; len++) {
    for (int bitsv = 0; bitsv < (1 << len); bitsv++) {
      std::string dirs;
      for (int i = 0; i < len; i++) dirs += (bitsv >> i & 1) ? 'B' : 'A';

      std::vector<std::vector<uint32_t>> expected;
      for (uint32_t i = 0; i < dirs.size(); i++) {
        if (i == 0 || dirs[i] != dirs[i - 1]) expected.push_back({});
        expected.back().push_back(i);
      }

      auto bursts = generate_bursts(direction_flow(dirs));
      REQUIRE(bursts.size() == expected.size());
      for (size_t bi = 0; bi < bursts.size(); bi++) {
        CHECK(bursts[bi].packet_idx == expected[bi]);
        CHECK(bursts[bi].ordinal == uint32_t(bi));
        CHECK(bursts[bi].direction == (dirs[expected[bi][0]] == 'A' ? Direction::from_origin
                                                                    : Direction::to_origin));
      }
    }
  }
}

TEST_CASE("burst partition invariants on random flows") {
  Rng rng(7);
  for (int t = 0; t < 1000; t++) {
    size_t n = 1 + rng.uniform_u64(40);
    std::string dirs;
    for (size_t i = 0; i < n; i++) dirs += rng.bernoulli(0.5) ? 'A' : 'B';
    Flow f = direction_flow(dirs);
    auto bursts = generate_bursts(f);

    // partition: every packet exactly once, in order, runs contiguous
    std::vector<uint32_t> seen;
    for (const auto& b : bursts) {
      REQUIRE(!b.packet_idx.empty());
      for (size_t i = 1; i < b.packet_idx.size(); i++)
        CHECK(b.packet_idx[i] == b.packet_idx[i - 1] + 1);
      seen.insert(seen.end(), b.packet_idx.begin(), b.packet_idx.end());
    }
    REQUIRE(seen.size() == n);
    for (size_t i = 0; i < n; i++) CHECK(seen[i] == i);

    // alternation: neighbours flip direction
    for (size_t i = 1; i < bursts.size(); i++)
      CHECK(bursts[i].direction != bursts[i - 1].direction);

    // reconstruction: burst bytes concatenate member datagrams
    for (const auto& b : bursts) {
      bytes_t expect;
      for (uint32_t pi : b.packet_idx) {
        const bytes_t& d = f.packets[pi].first.datagram;
        expect.insert(expect.end(), d.begin(), d.end());
      }
      CHECK(burst_bytes(f, b) == expect);
    }
  }
}

TEST_CASE("split_half worked examples") {
  auto [a1, b1] = split_half(bytes_t{1, 2, 3, 4, 5});
  CHECK(a1 == bytes_t{1, 2, 3});
  CHECK(b1 == bytes_t{4, 5});
  auto [a2, b2] = split_half(bytes_t{1, 2, 3, 4});
  CHECK(a2 == bytes_t{1, 2});
  CHECK(b2 == bytes_t{3, 4});
  CHECK_THROWS_AS(split_half(bytes_t{1, 2, 3}), TooShort);
  CHECK_THROWS_AS(split_half(bytes_t{}), TooShort);
}

TEST_CASE("split_half law on random input") {
  Rng rng(8);
  for (int t = 0; t < 200; t++) {
    size_t n = 4 + rng.uniform_u64(100);
    bytes_t x(n);
    for (auto& v : x) v = uint8_t(rng.next_u64());
    auto [a, b] = split_half(x);
    CHECK(a.size() == (n + 1) / 2);
    CHECK(b.size() == n / 2);
    bytes_t joined = a;
    joined.insert(joined.end(), b.begin(), b.end());
    CHECK(joined == x);
  }
}
