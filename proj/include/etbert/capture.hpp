#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "etbert/common.hpp"

namespace etbert {

struct Timestamp {
  int64_t sec = 0;
  int32_t usec = 0;
  auto operator<=>(const Timestamp&) const = default;
};

struct IpAddr {
  bool v6 = false;
  std::array<uint8_t, 16> b{};  // v4 uses the first 4 bytes

  static IpAddr v4(uint8_t a, uint8_t b_, uint8_t c, uint8_t d) {
    IpAddr ip;
    ip.b[0] = a; ip.b[1] = b_; ip.b[2] = c; ip.b[3] = d;
    return ip;
  }
  std::string str() const;
  static IpAddr parse(const std::string& s);  // throws MalformedRecord
  auto operator<=>(const IpAddr&) const = default;
};

enum class Transport : uint8_t { tcp = 6, udp = 17 };

const char* transport_name(Transport t);

struct FiveTuple {
  IpAddr src;
  uint16_t sport = 0;
  IpAddr dst;
  uint16_t dport = 0;
  Transport proto = Transport::tcp;
  auto operator<=>(const FiveTuple&) const = default;
};

struct RawFrame {
  Timestamp ts;
  uint32_t link_type = 0;
  uint32_t orig_len = 0;
  bytes_t bytes;  // captured bytes, length == incl_len
};

struct CleanPacket {
  FiveTuple five_tuple;
  Timestamp ts;
  bytes_t datagram;        // transport payload prefixed by the post-port header remainder
  uint64_t source_index = 0;
  std::string capture;
};

enum class SkipReason : uint8_t { arp, dhcp, vlan, non_ip, non_transport };

const char* skip_reason_name(SkipReason r);

// One frame either decodes, is skipped for a counted reason, or is malformed
// (reported via exception).
using DecodeOutcome = std::variant<CleanPacket, SkipReason>;

DecodeOutcome decode_frame(const RawFrame& frame);  // throws MalformedPacket, UnsupportedLinkType

// Streaming reader of classic pcap files in either byte order.
class PcapReader {
public:
  explicit PcapReader(const std::string& path);  // throws IoError, UnknownMagic, TruncatedRecord

  std::optional<RawFrame> next();  // throws TruncatedRecord
  uint32_t link_type() const { return link_type_; }
  bool byte_swapped() const { return swapped_; }

private:
  uint32_t read_u32();
  uint16_t read_u16();

  std::ifstream in_;
  std::string path_;
  bool swapped_ = false;
  uint32_t link_type_ = 0;
  uint32_t snaplen_ = 0;
};

struct IngestCounters {
  uint64_t frames = 0;
  uint64_t packets = 0;
  uint64_t skipped[5] = {0, 0, 0, 0, 0};  // indexed by SkipReason
  uint64_t malformed = 0;
};

// Reads a whole capture, decoding every frame. Malformed frames are counted
// and dropped rather than aborting the file.
std::vector<CleanPacket> ingest_file(const std::string& path, IngestCounters& counters);

}  // namespace etbert
