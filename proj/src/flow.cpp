#include "etbert/flow.hpp"

#include <algorithm>
#include <map>

#include "etbert/errors.hpp"

namespace etbert {

std::vector<Flow> assemble_flows(std::vector<CleanPacket> packets) {
  std::vector<Flow> flows;
  std::map<FlowKey, size_t> index;
  for (auto& p : packets) {
    FlowKey key = FlowKey::canonical(p.five_tuple);
    auto [it, fresh] = index.try_emplace(key, flows.size());
    if (fresh) {
      Flow f;
      f.id = flows.size();
      f.key = key;
      flows.push_back(std::move(f));
    }
    flows[it->second].packets.emplace_back(std::move(p), Direction::from_origin);
  }
  for (auto& f : flows) {
    std::stable_sort(f.packets.begin(), f.packets.end(), [](const auto& a, const auto& b) {
      if (a.first.ts != b.first.ts) return a.first.ts < b.first.ts;
      return a.first.source_index < b.first.source_index;
    });
    const FiveTuple& first = f.packets.front().first.five_tuple;
    f.origin = Endpoint{first.src, first.sport};
    for (auto& [pkt, dir] : f.packets) {
      bool from_origin = pkt.five_tuple.src == f.origin.addr && pkt.five_tuple.sport == f.origin.port;
      dir = from_origin ? Direction::from_origin : Direction::to_origin;
    }
  }
  return flows;
}

std::vector<Burst> generate_bursts(const Flow& flow) {
  std::vector<Burst> bursts;
  for (uint32_t i = 0; i < flow.packets.size(); i++) {
    Direction d = flow.packets[i].second;
    if (bursts.empty() || bursts.back().direction != d) {
      Burst b;
      b.flow_id = flow.id;
      b.ordinal = uint32_t(bursts.size());
      b.direction = d;
      bursts.push_back(std::move(b));
    }
    bursts.back().packet_idx.push_back(i);
  }
  return bursts;
}

bytes_t burst_bytes(const Flow& flow, const Burst& burst) {
  bytes_t out;
  for (uint32_t i : burst.packet_idx) {
    const bytes_t& d = flow.packets[i].first.datagram;
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

std::pair<bytes_t, bytes_t> split_half(const bytes_t& bytes) {
  if (bytes.size() < 4)
    throw TooShort("cannot split " + std::to_string(bytes.size()) + " bytes into sub-halves");
  size_t cut = (bytes.size() + 1) / 2;
  return {bytes_t(bytes.begin(), bytes.begin() + std::ptrdiff_t(cut)),
          bytes_t(bytes.begin() + std::ptrdiff_t(cut), bytes.end())};
}

}  // namespace etbert
