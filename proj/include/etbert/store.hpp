#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "etbert/capture.hpp"
#include "etbert/flow.hpp"

namespace etbert {

// Packet store: JSON-lines, one CleanPacket per line with hex datagram.
void write_store(const std::vector<CleanPacket>& packets, const std::string& path);
std::vector<CleanPacket> read_store(const std::string& path);  // MalformedRecord(line)

struct LabelRule {
  std::optional<std::string> capture_glob;
  std::optional<std::string> src_addr, dst_addr;
  std::optional<uint16_t> src_port, dst_port;
  std::optional<Transport> proto;
  std::string class_name;
};

// JSON array of {"match": {...}, "class": name}; first matching rule wins.
std::vector<LabelRule> read_label_map(const std::string& path);

bool rule_matches(const LabelRule& rule, const CleanPacket& pkt);

struct FlowLabels {
  std::vector<int> class_of_flow;        // -1 when no rule matched
  std::vector<std::string> class_names;  // index = class id, file order
  uint64_t unmatched = 0;
};

// A flow takes the class of the first rule matching its first packet.
FlowLabels label_flows(const std::vector<Flow>& flows, const std::vector<LabelRule>& rules);

}  // namespace etbert
