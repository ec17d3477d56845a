#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "etbert/capture.hpp"

namespace etbert {

struct Endpoint {
  IpAddr addr;
  uint16_t port = 0;
  auto operator<=>(const Endpoint&) const = default;
};

// Canonical bidirectional session key: endpoints ordered so that
// key(A->B) == key(B->A).
struct FlowKey {
  Endpoint lo, hi;
  Transport proto = Transport::tcp;

  static FlowKey canonical(const FiveTuple& ft) {
    Endpoint a{ft.src, ft.sport}, b{ft.dst, ft.dport};
    FlowKey k;
    k.proto = ft.proto;
    if (b < a) std::swap(a, b);
    k.lo = a;
    k.hi = b;
    return k;
  }
  auto operator<=>(const FlowKey&) const = default;
};

enum class Direction : uint8_t { from_origin, to_origin };

struct Flow {
  uint64_t id = 0;
  FlowKey key;
  Endpoint origin;  // (addr, port) that sent the first packet
  std::vector<std::pair<CleanPacket, Direction>> packets;
};

struct Burst {
  uint64_t flow_id = 0;
  uint32_t ordinal = 0;
  Direction direction = Direction::from_origin;
  std::vector<uint32_t> packet_idx;  // indices into the flow's packet list
};

// Groups packets by canonical key. Flows come out in first-appearance order;
// within a flow, packets are stably sorted by (timestamp, source_index).
std::vector<Flow> assemble_flows(std::vector<CleanPacket> packets);

// Maximal same-direction runs, in flow order.
std::vector<Burst> generate_bursts(const Flow& flow);

bytes_t burst_bytes(const Flow& flow, const Burst& burst);

// First ceil(n/2) bytes and the rest. Throws TooShort below 4 bytes.
std::pair<bytes_t, bytes_t> split_half(const bytes_t& bytes);

}  // namespace etbert
