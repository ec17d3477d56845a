#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "etbert/capture.hpp"

namespace etbert {

// Frame builders shared by the generator and by tests that craft captures.

bytes_t ethernet_frame(uint16_t ethertype, const bytes_t& payload);
bytes_t ipv4_packet(uint8_t proto, const IpAddr& src, const IpAddr& dst, const bytes_t& payload);
bytes_t ipv6_packet(uint8_t next_header, const IpAddr& src, const IpAddr& dst,
                    const bytes_t& payload);
bytes_t tcp_segment(uint16_t sport, uint16_t dport, uint32_t seq, uint32_t ack,
                    const bytes_t& payload);
bytes_t udp_datagram(uint16_t sport, uint16_t dport, const bytes_t& payload);

struct SynthFrame {
  uint32_t ts_sec = 0;
  uint32_t ts_frac = 0;  // microseconds (or nanoseconds for a nanosecond capture)
  uint32_t orig_len = 0;  // 0 = captured length
  bytes_t bytes;
};

// Classic pcap, Ethernet link type. big_endian flips the on-disk byte order.
void write_pcap(const std::string& path, const std::vector<SynthFrame>& frames,
                bool nanosecond = false, bool big_endian = false);

// Deterministic labelled traffic: every class speaks its own first-order byte
// chain (4 successors per byte, a noise rate of uniform bytes), in TCP flows
// whose server port identifies the class.
struct SynthConfig {
  int classes = 4;
  int flows_per_class = 60;
  int min_packets = 6, max_packets = 12;
  int min_payload = 24, max_payload = 48;
  double noise = 0.1;
  uint16_t base_port = 9001;
  uint64_t seed = 7;
};

// Returns the number of frames written.
size_t write_synthetic_capture(const std::string& pcap_path, const SynthConfig& cfg);

// Matching label-map JSON (dst-port rules, classes "class0".."classK-1").
std::string synthetic_label_map_json(const SynthConfig& cfg);

}  // namespace etbert
