#include "etbert/capture.hpp"

#include <cstring>
#include <filesystem>
#include <sstream>

#include "etbert/errors.hpp"

namespace etbert {

const char* transport_name(Transport t) { return t == Transport::tcp ? "tcp" : "udp"; }

const char* skip_reason_name(SkipReason r) {
  switch (r) {
    case SkipReason::arp: return "arp";
    case SkipReason::dhcp: return "dhcp";
    case SkipReason::vlan: return "vlan";
    case SkipReason::non_ip: return "non_ip";
    case SkipReason::non_transport: return "non_transport";
  }
  return "?";
}

std::string IpAddr::str() const {
  std::ostringstream ss;
  if (!v6) {
    ss << int(b[0]) << '.' << int(b[1]) << '.' << int(b[2]) << '.' << int(b[3]);
  } else {
    static const char* digits = "0123456789abcdef";
    for (int g = 0; g < 8; g++) {
      if (g) ss << ':';
      uint16_t w = uint16_t(b[2 * g] << 8 | b[2 * g + 1]);
      ss << digits[w >> 12 & 0xf] << digits[w >> 8 & 0xf] << digits[w >> 4 & 0xf]
         << digits[w & 0xf];
    }
  }
  return ss.str();
}

IpAddr IpAddr::parse(const std::string& s) {
  IpAddr ip;
  if (s.find(':') != std::string::npos) {
    // full uncompressed v6 form only, 8 hex groups
    ip.v6 = true;
    std::istringstream ss(s);
    std::string group;
    int g = 0;
    while (std::getline(ss, group, ':')) {
      if (g >= 8 || group.empty() || group.size() > 4) throw MalformedRecord("bad address " + s);
      uint32_t w = 0;
      for (char c : group) {
        int v = c >= '0' && c <= '9'   ? c - '0'
                : c >= 'a' && c <= 'f' ? c - 'a' + 10
                : c >= 'A' && c <= 'F' ? c - 'A' + 10
                                       : -1;
        if (v < 0) throw MalformedRecord("bad address " + s);
        w = w << 4 | uint32_t(v);
      }
      ip.b[2 * g] = uint8_t(w >> 8);
      ip.b[2 * g + 1] = uint8_t(w & 0xff);
      g++;
    }
    if (g != 8) throw MalformedRecord("bad address " + s);
    return ip;
  }
  std::istringstream ss(s);
  std::string part;
  int g = 0;
  while (std::getline(ss, part, '.')) {
    if (g >= 4 || part.empty() || part.size() > 3) throw MalformedRecord("bad address " + s);
    int v = 0;
    for (char c : part) {
      if (c < '0' || c > '9') throw MalformedRecord("bad address " + s);
      v = v * 10 + (c - '0');
    }
    if (v > 255) throw MalformedRecord("bad address " + s);
    ip.b[g++] = uint8_t(v);
  }
  if (g != 4) throw MalformedRecord("bad address " + s);
  return ip;
}

PcapReader::PcapReader(const std::string& path) : path_(path) {
  in_.open(path, std::ios::binary);
  if (!in_) throw IoError("cannot open " + path);
  uint8_t hdr[24];
  in_.read(reinterpret_cast<char*>(hdr), 24);
  if (in_.gcount() != 24) throw UnknownMagic(path + ": no capture global header");
  uint32_t magic;
  std::memcpy(&magic, hdr, 4);
  if (magic == 0xa1b2c3d4u) {
    swapped_ = false;
  } else if (magic == 0xd4c3b2a1u) {
    swapped_ = true;
  } else {
    throw UnknownMagic(path + ": not a classic capture file");
  }
  auto u32at = [&](int off) {
    uint32_t v;
    std::memcpy(&v, hdr + off, 4);
    if (swapped_) v = __builtin_bswap32(v);
    return v;
  };
  snaplen_ = u32at(16);
  link_type_ = u32at(20);
}

std::optional<RawFrame> PcapReader::next() {
  uint8_t rec[16];
  in_.read(reinterpret_cast<char*>(rec), 16);
  std::streamsize got = in_.gcount();
  if (got == 0) return std::nullopt;
  if (got != 16) throw TruncatedRecord(path_ + ": partial record header");
  auto u32at = [&](int off) {
    uint32_t v;
    std::memcpy(&v, rec + off, 4);
    if (swapped_) v = __builtin_bswap32(v);
    return v;
  };
  RawFrame f;
  f.ts.sec = int64_t(u32at(0));
  f.ts.usec = int32_t(u32at(4));
  uint32_t incl = u32at(8);
  f.orig_len = u32at(12);
  f.link_type = link_type_;
  f.bytes.resize(incl);
  if (incl) {
    in_.read(reinterpret_cast<char*>(f.bytes.data()), incl);
    if (in_.gcount() != std::streamsize(incl))
      throw TruncatedRecord(path_ + ": record body shorter than captured length");
  }
  return f;
}

static uint16_t be16(const uint8_t* p) { return uint16_t(p[0] << 8 | p[1]); }

DecodeOutcome decode_frame(const RawFrame& frame) {
  if (frame.link_type != 1)
    throw UnsupportedLinkType("link type " + std::to_string(frame.link_type));
  const auto& b = frame.bytes;
  if (b.size() < 14) throw MalformedPacket("frame shorter than an Ethernet header");
  uint16_t ethertype = be16(&b[12]);
  if (ethertype == 0x0806) return SkipReason::arp;
  if (ethertype == 0x8100 || ethertype == 0x88a8) return SkipReason::vlan;

  size_t off = 14;
  size_t transport_off, end;
  uint8_t proto;
  IpAddr src, dst;
  if (ethertype == 0x0800) {
    if (b.size() < off + 20) throw MalformedPacket("IPv4 header does not fit the frame");
    if (b[off] >> 4 != 4) throw MalformedPacket("IPv4 ethertype but version nibble is not 4");
    size_t ihl = b[off] & 0xf;
    if (ihl < 5) throw MalformedPacket("IPv4 IHL below 5");
    size_t ip_hlen = ihl * 4;
    size_t total_len = be16(&b[off + 2]);
    if (total_len < ip_hlen) throw MalformedPacket("IPv4 total length below header length");
    if (b.size() < off + ip_hlen) throw MalformedPacket("IPv4 options run past the frame");
    proto = b[off + 9];
    std::memcpy(src.b.data(), &b[off + 12], 4);
    std::memcpy(dst.b.data(), &b[off + 16], 4);
    transport_off = off + ip_hlen;
    end = std::min(off + total_len, b.size());  // tolerate snap-length slicing
  } else if (ethertype == 0x86dd) {
    if (b.size() < off + 40) throw MalformedPacket("IPv6 header does not fit the frame");
    if (b[off] >> 4 != 6) throw MalformedPacket("IPv6 ethertype but version nibble is not 6");
    size_t payload_len = be16(&b[off + 4]);
    proto = b[off + 6];
    src.v6 = dst.v6 = true;
    std::memcpy(src.b.data(), &b[off + 8], 16);
    std::memcpy(dst.b.data(), &b[off + 24], 16);
    transport_off = off + 40;
    end = std::min(off + 40 + payload_len, b.size());
  } else {
    return SkipReason::non_ip;
  }

  if (proto != 6 && proto != 17) return SkipReason::non_transport;
  if (transport_off + 4 > end) throw MalformedPacket("transport ports run past the packet");

  uint16_t sport = be16(&b[transport_off]);
  uint16_t dport = be16(&b[transport_off + 2]);
  if (proto == 17 && (sport == 67 || sport == 68 || dport == 67 || dport == 68))
    return SkipReason::dhcp;

  CleanPacket p;
  p.five_tuple.src = src;
  p.five_tuple.dst = dst;
  p.five_tuple.sport = sport;
  p.five_tuple.dport = dport;
  p.five_tuple.proto = proto == 6 ? Transport::tcp : Transport::udp;
  p.ts = frame.ts;
  p.datagram.assign(b.begin() + std::ptrdiff_t(transport_off + 4), b.begin() + std::ptrdiff_t(end));
  return p;
}

std::vector<CleanPacket> ingest_file(const std::string& path, IngestCounters& counters) {
  PcapReader reader(path);
  std::string name = std::filesystem::path(path).filename().string();
  std::vector<CleanPacket> out;
  uint64_t index = 0;
  while (auto frame = reader.next()) {
    counters.frames++;
    try {
      DecodeOutcome outcome = decode_frame(*frame);
      if (auto* p = std::get_if<CleanPacket>(&outcome)) {
        p->source_index = index;
        p->capture = name;
        out.push_back(std::move(*p));
        counters.packets++;
      } else {
        counters.skipped[size_t(std::get<SkipReason>(outcome))]++;
      }
    } catch (const MalformedPacket&) {
      counters.malformed++;
    }
    index++;
  }
  return out;
}

}  // namespace etbert
