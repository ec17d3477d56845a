#include "etbert/synth.hpp"

#include <nlohmann/json.hpp>

#include "etbert/common.hpp"
#include "etbert/errors.hpp"
#include "etbert/rng.hpp"

namespace etbert {

namespace {

void put_be16(bytes_t& out, uint16_t v) {
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

void put_be32(bytes_t& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

uint16_t inet_checksum(const uint8_t* data, size_t len) {
  uint32_t sum = 0;
  for (size_t i = 0; i + 1 < len; i += 2) sum += uint32_t(data[i]) << 8 | data[i + 1];
  if (len & 1) sum += uint32_t(data[len - 1]) << 8;
  while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
  return uint16_t(~sum);
}

}  // namespace

bytes_t ethernet_frame(uint16_t ethertype, const bytes_t& payload) {
  bytes_t out = {0xaa, 0xbb, 0xcc, 0x00, 0x00, 0x02, 0xaa, 0xbb, 0xcc, 0x00, 0x00, 0x01};
  put_be16(out, ethertype);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

bytes_t ipv4_packet(uint8_t proto, const IpAddr& src, const IpAddr& dst,
                    const bytes_t& payload) {
  bytes_t out;
  out.push_back(0x45);
  out.push_back(0x00);
  put_be16(out, uint16_t(20 + payload.size()));
  put_be16(out, 0x1234);
  put_be16(out, 0x4000);  // DF
  out.push_back(64);
  out.push_back(proto);
  put_be16(out, 0);  // checksum slot
  out.insert(out.end(), src.b.begin(), src.b.begin() + 4);
  out.insert(out.end(), dst.b.begin(), dst.b.begin() + 4);
  uint16_t ck = inet_checksum(out.data(), 20);
  out[10] = uint8_t(ck >> 8);
  out[11] = uint8_t(ck);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

bytes_t ipv6_packet(uint8_t next_header, const IpAddr& src, const IpAddr& dst,
                    const bytes_t& payload) {
  bytes_t out = {0x60, 0x00, 0x00, 0x00};
  put_be16(out, uint16_t(payload.size()));
  out.push_back(next_header);
  out.push_back(64);
  out.insert(out.end(), src.b.begin(), src.b.end());
  out.insert(out.end(), dst.b.begin(), dst.b.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

bytes_t tcp_segment(uint16_t sport, uint16_t dport, uint32_t seq, uint32_t ack,
                    const bytes_t& payload) {
  bytes_t out;
  put_be16(out, sport);
  put_be16(out, dport);
  put_be32(out, seq);
  put_be32(out, ack);
  out.push_back(0x50);  // data offset 5
  out.push_back(0x18);  // PSH|ACK
  put_be16(out, 0xffff);
  put_be16(out, 0);  // checksum, unverified downstream
  put_be16(out, 0);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

bytes_t udp_datagram(uint16_t sport, uint16_t dport, const bytes_t& payload) {
  bytes_t out;
  put_be16(out, sport);
  put_be16(out, dport);
  put_be16(out, uint16_t(8 + payload.size()));
  put_be16(out, 0);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

void write_pcap(const std::string& path, const std::vector<SynthFrame>& frames, bool nanosecond,
                bool big_endian) {
  std::string out;
  auto u16 = [&](uint16_t v) {
    if (big_endian) {
      out += char(v >> 8);
      out += char(v);
    } else {
      out += char(v);
      out += char(v >> 8);
    }
  };
  auto u32 = [&](uint32_t v) {
    if (big_endian) {
      out += char(v >> 24);
      out += char(v >> 16);
      out += char(v >> 8);
      out += char(v);
    } else {
      out += char(v);
      out += char(v >> 8);
      out += char(v >> 16);
      out += char(v >> 24);
    }
  };
  u32(nanosecond ? 0xa1b23c4du : 0xa1b2c3d4u);
  u16(2);
  u16(4);
  u32(0);
  u32(0);
  u32(65535);
  u32(1);  // Ethernet
  for (const auto& f : frames) {
    u32(f.ts_sec);
    u32(f.ts_frac);
    u32(uint32_t(f.bytes.size()));
    u32(f.orig_len ? f.orig_len : uint32_t(f.bytes.size()));
    out.append(reinterpret_cast<const char*>(f.bytes.data()), f.bytes.size());
  }
  atomic_write_file(path, out);
}

size_t write_synthetic_capture(const std::string& pcap_path, const SynthConfig& cfg) {
  if (cfg.classes < 1 || cfg.flows_per_class < 1 || cfg.min_packets < 1 ||
      cfg.max_packets < cfg.min_packets || cfg.min_payload < 2 ||
      cfg.max_payload < cfg.min_payload)
    throw UsageError("bad synthetic traffic configuration");

  // per-class byte chains: 4 deterministic successors per byte value
  std::vector<std::array<uint8_t, 1024>> chain(size_t(cfg.classes));
  for (int c = 0; c < cfg.classes; c++) {
    Rng crng(mix_seed({cfg.seed, 0x43484e, uint64_t(c)}));
    for (auto& b : chain[size_t(c)]) b = uint8_t(crng.next_u64());
  }

  std::vector<SynthFrame> frames;
  uint32_t base_sec = 1700000000;
  uint64_t g = 0;
  for (int c = 0; c < cfg.classes; c++) {
    for (int f = 0; f < cfg.flows_per_class; f++, g++) {
      Rng rng(mix_seed({cfg.seed, 0x464c4f57, uint64_t(c), uint64_t(f)}));
      IpAddr client = IpAddr::v4(10, 0, uint8_t(c), uint8_t(1 + f % 250));
      IpAddr server = IpAddr::v4(10, 1, 0, 1);
      uint16_t sport = uint16_t(40000 + g % 20000);
      uint16_t dport = uint16_t(cfg.base_port + c);
      int npkt = cfg.min_packets +
                 int(rng.uniform_u64(uint64_t(cfg.max_packets - cfg.min_packets + 1)));
      uint32_t seq_c = uint32_t(rng.next_u64());
      uint32_t seq_s = uint32_t(rng.next_u64());
      bool from_client = true;
      int run_left = 1 + int(rng.uniform_u64(3));
      for (int p = 0; p < npkt; p++) {
        size_t plen = size_t(cfg.min_payload) +
                      rng.uniform_u64(uint64_t(cfg.max_payload - cfg.min_payload + 1));
        bytes_t payload(plen);
        uint8_t cur = uint8_t(rng.next_u64());
        for (size_t i = 0; i < plen; i++) {
          if (rng.uniform() < cfg.noise)
            cur = uint8_t(rng.next_u64());
          else
            cur = chain[size_t(c)][size_t(cur) * 4 + rng.uniform_u64(4)];
          payload[i] = cur;
        }
        bytes_t seg = from_client ? tcp_segment(sport, dport, seq_c, seq_s, payload)
                                  : tcp_segment(dport, sport, seq_s, seq_c, payload);
        if (from_client)
          seq_c += uint32_t(plen);
        else
          seq_s += uint32_t(plen);
        const IpAddr& src = from_client ? client : server;
        const IpAddr& dst = from_client ? server : client;
        SynthFrame fr;
        fr.ts_sec = base_sec + uint32_t(g);
        fr.ts_frac = uint32_t(100 * p);
        fr.bytes = ethernet_frame(0x0800, ipv4_packet(6, src, dst, seg));
        frames.push_back(std::move(fr));
        if (--run_left == 0) {
          from_client = !from_client;
          run_left = 1 + int(rng.uniform_u64(3));
        }
      }
    }
  }
  write_pcap(pcap_path, frames);
  return frames.size();
}

std::string synthetic_label_map_json(const SynthConfig& cfg) {
  nlohmann::ordered_json rules = nlohmann::ordered_json::array();
  for (int c = 0; c < cfg.classes; c++) {
    nlohmann::ordered_json r;
    r["match"] = {{"dst_port", cfg.base_port + c}};
    r["class"] = "class" + std::to_string(c);
    rules.push_back(r);
  }
  return rules.dump(2) + "\n";
}

}  // namespace etbert
