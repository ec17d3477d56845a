#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "etbert/capture.hpp"
#include "etbert/errors.hpp"
#include "etbert/synth.hpp"

using namespace etbert;
namespace fs = std::filesystem;

namespace {

const IpAddr kA = IpAddr::v4(192, 168, 0, 1);
const IpAddr kB = IpAddr::v4(192, 168, 0, 2);

struct TmpFile {
  fs::path path;
  explicit TmpFile(const char* name) : path(fs::temp_directory_path() / name) {}
  ~TmpFile() { fs::remove(path); }
  std::string str() const { return path.string(); }
};

RawFrame eth_frame(const bytes_t& bytes) {
  RawFrame f;
  f.link_type = 1;
  f.orig_len = uint32_t(bytes.size());
  f.bytes = bytes;
  return f;
}

}  // namespace

TEST_CASE("ip address parse and print round trip") {
  CHECK(IpAddr::parse("10.1.2.3").str() == "10.1.2.3");
  CHECK(IpAddr::parse("0.0.0.0").str() == "0.0.0.0");
  CHECK(IpAddr::parse("255.255.255.255").str() == "255.255.255.255");
  CHECK_THROWS_AS(IpAddr::parse("256.0.0.1"), MalformedRecord);
  CHECK_THROWS_AS(IpAddr::parse("1.2.3"), MalformedRecord);
  CHECK_THROWS_AS(IpAddr::parse("1.2.3.4.5"), MalformedRecord);
  CHECK_THROWS_AS(IpAddr::parse("a.b.c.d"), MalformedRecord);

  IpAddr v6 = IpAddr::parse("2001:0db8:0000:0000:0000:0000:0000:0001");
  CHECK(v6.v6);
  CHECK(v6.str() == "2001:0db8:0000:0000:0000:0000:0000:0001");
  CHECK_THROWS_AS(IpAddr::parse("2001:db8"), MalformedRecord);
}

TEST_CASE("reader handles both byte orders") {
  bytes_t frame = ethernet_frame(0x0800, ipv4_packet(6, kA, kB,
                                 tcp_segment(1111, 2222, 1, 0, {0x41, 0x42})));
  std::vector<SynthFrame> frames = {{100, 7, 0, frame}};

  for (bool be : {false, true}) {
    TmpFile f(be ? "etbert_cap_be.pcap" : "etbert_cap_le.pcap");
    write_pcap(f.str(), frames, false, be);
    PcapReader reader(f.str());
    CHECK(reader.byte_swapped() == be);
    CHECK(reader.link_type() == 1);
    auto r1 = reader.next();
    REQUIRE(r1.has_value());
    CHECK(r1->ts.sec == 100);
    CHECK(r1->ts.usec == 7);
    CHECK(r1->bytes == frame);
    CHECK(r1->orig_len == frame.size());
    CHECK(!reader.next().has_value());
  }
}

TEST_CASE("reader rejects foreign magics") {
  TmpFile f("etbert_cap_magic.pcap");
  // pcapng section header magic
  std::ofstream(f.str(), std::ios::binary).write("\x0a\x0d\x0d\x0a0123456789abcdefghij", 24);
  CHECK_THROWS_AS(PcapReader r(f.str()), UnknownMagic);

  // nanosecond-resolution magic is deliberately out of scope
  write_pcap(f.str(), {{1, 2, 0, ethernet_frame(0x0800, {})}}, true, false);
  CHECK_THROWS_AS(PcapReader r(f.str()), UnknownMagic);
}

TEST_CASE("reader reports truncation") {
  TmpFile f("etbert_cap_trunc.pcap");
  bytes_t frame = ethernet_frame(0x0800, ipv4_packet(6, kA, kB, tcp_segment(1, 2, 0, 0, {})));
  write_pcap(f.str(), {{1, 0, 0, frame}}, false, false);
  std::string whole = read_file(f.str());

  SUBCASE("partial record header") {
    std::ofstream(f.str(), std::ios::binary) << whole.substr(0, 24 + 7);
    PcapReader r(f.str());
    CHECK_THROWS_AS(r.next(), TruncatedRecord);
  }
  SUBCASE("body shorter than captured length") {
    std::ofstream(f.str(), std::ios::binary) << whole.substr(0, whole.size() - 5);
    PcapReader r(f.str());
    CHECK_THROWS_AS(r.next(), TruncatedRecord);
  }
  SUBCASE("no global header") {
    std::ofstream(f.str(), std::ios::binary) << whole.substr(0, 10);
    CHECK_THROWS_AS(PcapReader r(f.str()), UnknownMagic);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(PcapReader r("/nonexistent/etbert.pcap"), IoError);
  }
}

TEST_CASE("tcp decode keeps the post-port header remainder plus payload") {
  bytes_t payload = {0xde, 0xad, 0xbe, 0xef};
  bytes_t seg = tcp_segment(1111, 2222, 0x01020304, 0x0a0b0c0d, payload);
  auto out = decode_frame(eth_frame(ethernet_frame(0x0800, ipv4_packet(6, kA, kB, seg))));
  auto* p = std::get_if<CleanPacket>(&out);
  REQUIRE(p != nullptr);
  CHECK(p->five_tuple.src == kA);
  CHECK(p->five_tuple.dst == kB);
  CHECK(p->five_tuple.sport == 1111);
  CHECK(p->five_tuple.dport == 2222);
  CHECK(p->five_tuple.proto == Transport::tcp);
  CHECK(p->datagram == bytes_t(seg.begin() + 4, seg.end()));
  CHECK(p->datagram.size() == 16 + payload.size());
}

TEST_CASE("udp decode") {
  bytes_t payload = {1, 2, 3};
  bytes_t dg = udp_datagram(5353, 5354, payload);
  auto out = decode_frame(eth_frame(ethernet_frame(0x0800, ipv4_packet(17, kA, kB, dg))));
  auto* p = std::get_if<CleanPacket>(&out);
  REQUIRE(p != nullptr);
  CHECK(p->five_tuple.proto == Transport::udp);
  CHECK(p->datagram == bytes_t(dg.begin() + 4, dg.end()));  // length + checksum + payload
}

TEST_CASE("ipv6 decode") {
  IpAddr s6, d6;
  s6.v6 = d6.v6 = true;
  s6.b[15] = 1;
  d6.b[15] = 2;
  bytes_t seg = tcp_segment(443, 40000, 5, 6, {0x99});
  auto out = decode_frame(eth_frame(ethernet_frame(0x86dd, ipv6_packet(6, s6, d6, seg))));
  auto* p = std::get_if<CleanPacket>(&out);
  REQUIRE(p != nullptr);
  CHECK(p->five_tuple.src.v6);
  CHECK(p->five_tuple.src == s6);
  CHECK(p->five_tuple.dst == d6);
  CHECK(p->datagram == bytes_t(seg.begin() + 4, seg.end()));
}

TEST_CASE("skip reasons") {
  bytes_t arp_body(28, 0);
  auto arp = decode_frame(eth_frame(ethernet_frame(0x0806, arp_body)));
  CHECK(std::get<SkipReason>(arp) == SkipReason::arp);

  auto vlan = decode_frame(eth_frame(ethernet_frame(0x8100, bytes_t(48, 0))));
  CHECK(std::get<SkipReason>(vlan) == SkipReason::vlan);

  auto qinq = decode_frame(eth_frame(ethernet_frame(0x88a8, bytes_t(48, 0))));
  CHECK(std::get<SkipReason>(qinq) == SkipReason::vlan);

  auto other = decode_frame(eth_frame(ethernet_frame(0x86ff, bytes_t(48, 0))));
  CHECK(std::get<SkipReason>(other) == SkipReason::non_ip);

  // ICMP inside IPv4
  auto icmp = decode_frame(eth_frame(ethernet_frame(0x0800, ipv4_packet(1, kA, kB, bytes_t(8, 0)))));
  CHECK(std::get<SkipReason>(icmp) == SkipReason::non_transport);

  for (auto ports : {std::pair<uint16_t, uint16_t>{68, 67}, {67, 68}}) {
    auto dhcp = decode_frame(eth_frame(ethernet_frame(
        0x0800, ipv4_packet(17, kA, kB, udp_datagram(ports.first, ports.second, bytes_t(32, 0))))));
    CHECK(std::get<SkipReason>(dhcp) == SkipReason::dhcp);
  }

  // DHCP ports only apply to UDP; TCP on 67 stays
  auto tcp67 = decode_frame(eth_frame(ethernet_frame(
      0x0800, ipv4_packet(6, kA, kB, tcp_segment(67, 9999, 0, 0, {1, 2})))));
  CHECK(std::holds_alternative<CleanPacket>(tcp67));
}

TEST_CASE("malformed frames throw") {
  CHECK_THROWS_AS(decode_frame(eth_frame(bytes_t(10, 0))), MalformedPacket);

  bytes_t short_ip = ethernet_frame(0x0800, bytes_t(12, 0));
  CHECK_THROWS_AS(decode_frame(eth_frame(short_ip)), MalformedPacket);

  // version nibble 6 under the IPv4 ethertype
  bytes_t bad_ver = ethernet_frame(0x0800, ipv4_packet(6, kA, kB, tcp_segment(1, 2, 0, 0, {})));
  bad_ver[14] = 0x65;
  CHECK_THROWS_AS(decode_frame(eth_frame(bad_ver)), MalformedPacket);

  // IHL below the minimum
  bytes_t bad_ihl = ethernet_frame(0x0800, ipv4_packet(6, kA, kB, tcp_segment(1, 2, 0, 0, {})));
  bad_ihl[14] = 0x43;
  CHECK_THROWS_AS(decode_frame(eth_frame(bad_ihl)), MalformedPacket);

  // ports cut off by the claimed total length
  bytes_t cut = ethernet_frame(0x0800, ipv4_packet(6, kA, kB, bytes_t{0x01, 0x02}));
  CHECK_THROWS_AS(decode_frame(eth_frame(cut)), MalformedPacket);

  RawFrame wrong_link = eth_frame(bytes_t(64, 0));
  wrong_link.link_type = 113;
  CHECK_THROWS_AS(decode_frame(wrong_link), UnsupportedLinkType);
}

TEST_CASE("ethernet trailer padding stays out of the datagram") {
  bytes_t seg = tcp_segment(1111, 2222, 0, 0, {0x7a, 0x7b});
  bytes_t frame = ethernet_frame(0x0800, ipv4_packet(6, kA, kB, seg));
  while (frame.size() < 60) frame.push_back(0xcc);  // minimum-size frame padding
  auto out = decode_frame(eth_frame(frame));
  auto* p = std::get_if<CleanPacket>(&out);
  REQUIRE(p != nullptr);
  CHECK(p->datagram == bytes_t(seg.begin() + 4, seg.end()));
}

TEST_CASE("snap-length slicing truncates the datagram without an error") {
  bytes_t seg = tcp_segment(1111, 2222, 0, 0, bytes_t(40, 0x55));
  bytes_t frame = ethernet_frame(0x0800, ipv4_packet(6, kA, kB, seg));
  bytes_t sliced(frame.begin(), frame.begin() + 60);
  RawFrame f = eth_frame(sliced);
  f.orig_len = uint32_t(frame.size());
  auto out = decode_frame(f);
  auto* p = std::get_if<CleanPacket>(&out);
  REQUIRE(p != nullptr);
  // 60 bytes total: 14 ethernet + 20 ip + 4 ports leaves 22
  CHECK(p->datagram.size() == 22);
  CHECK(p->datagram == bytes_t(seg.begin() + 4, seg.begin() + 26));
}

TEST_CASE("ingest_file counts every outcome and stamps provenance") {
  TmpFile f("etbert_cap_ingest.pcap");
  std::vector<SynthFrame> frames;
  auto add = [&](const bytes_t& b) { frames.push_back({uint32_t(frames.size()), 0, 0, b}); };
  add(ethernet_frame(0x0800, ipv4_packet(6, kA, kB, tcp_segment(1, 2, 0, 0, {1, 2, 3}))));
  add(ethernet_frame(0x0806, bytes_t(28, 0)));                                     // arp
  add(ethernet_frame(0x0800, ipv4_packet(17, kA, kB, udp_datagram(68, 67, {}))));  // dhcp
  add(bytes_t(5, 0));                                                              // malformed
  add(ethernet_frame(0x0800, ipv4_packet(6, kB, kA, tcp_segment(2, 1, 0, 0, {9}))));
  write_pcap(f.str(), frames, false, false);

  IngestCounters c;
  auto packets = ingest_file(f.str(), c);
  CHECK(c.frames == 5);
  CHECK(c.packets == 2);
  CHECK(c.skipped[size_t(SkipReason::arp)] == 1);
  CHECK(c.skipped[size_t(SkipReason::dhcp)] == 1);
  CHECK(c.malformed == 1);
  REQUIRE(packets.size() == 2);
  CHECK(packets[0].source_index == 0);
  CHECK(packets[1].source_index == 4);
  CHECK(packets[0].capture == "etbert_cap_ingest.pcap");
}
