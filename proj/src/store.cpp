#include "etbert/store.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "etbert/common.hpp"
#include "etbert/errors.hpp"

namespace etbert {

using ojson = nlohmann::ordered_json;

void write_store(const std::vector<CleanPacket>& packets, const std::string& path) {
  std::ostringstream out;
  for (const auto& p : packets) {
    ojson j;
    j["src"] = p.five_tuple.src.str();
    j["sport"] = p.five_tuple.sport;
    j["dst"] = p.five_tuple.dst.str();
    j["dport"] = p.five_tuple.dport;
    j["proto"] = transport_name(p.five_tuple.proto);
    j["ts_sec"] = p.ts.sec;
    j["ts_usec"] = p.ts.usec;
    j["index"] = p.source_index;
    j["capture"] = p.capture;
    j["datagram"] = hex_encode(p.datagram);
    out << j.dump() << '\n';
  }
  atomic_write_file(path, out.str());
}

std::vector<CleanPacket> read_store(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<CleanPacket> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    if (line.empty()) continue;
    std::string where = "line " + std::to_string(line_no);
    ojson j = ojson::parse(line, nullptr, false);
    if (j.is_discarded()) throw MalformedRecord(where + ": not valid JSON");
    for (const char* key :
         {"src", "sport", "dst", "dport", "proto", "ts_sec", "ts_usec", "index", "capture",
          "datagram"})
      if (!j.contains(key)) throw MalformedRecord(where + ": missing \"" + key + "\"");
    try {
      CleanPacket p;
      p.five_tuple.src = IpAddr::parse(j["src"].get<std::string>());
      p.five_tuple.sport = j["sport"].get<uint16_t>();
      p.five_tuple.dst = IpAddr::parse(j["dst"].get<std::string>());
      p.five_tuple.dport = j["dport"].get<uint16_t>();
      std::string proto = j["proto"].get<std::string>();
      if (proto == "tcp") p.five_tuple.proto = Transport::tcp;
      else if (proto == "udp") p.five_tuple.proto = Transport::udp;
      else throw MalformedRecord(where + ": unknown proto \"" + proto + "\"");
      p.ts.sec = j["ts_sec"].get<int64_t>();
      p.ts.usec = j["ts_usec"].get<int32_t>();
      p.source_index = j["index"].get<uint64_t>();
      p.capture = j["capture"].get<std::string>();
      p.datagram = hex_decode(j["datagram"].get<std::string>());
      out.push_back(std::move(p));
    } catch (const MalformedRecord&) {
      throw;
    } catch (const ojson::exception& e) {
      throw MalformedRecord(where + ": " + e.what());
    }
  }
  return out;
}

std::vector<LabelRule> read_label_map(const std::string& path) {
  ojson j = ojson::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw MalformedRecord(path + ": not valid JSON");
  if (!j.is_array()) throw MalformedRecord(path + ": label map must be a JSON array");
  std::vector<LabelRule> rules;
  size_t idx = 0;
  for (const auto& item : j) {
    std::string where = path + ": rule " + std::to_string(idx++);
    if (!item.is_object() || !item.contains("class") || !item["class"].is_string())
      throw MalformedRecord(where + ": needs a \"class\" string");
    LabelRule r;
    r.class_name = item["class"].get<std::string>();
    if (item.contains("match")) {
      const auto& m = item["match"];
      if (!m.is_object()) throw MalformedRecord(where + ": \"match\" must be an object");
      try {
        if (m.contains("capture")) r.capture_glob = m["capture"].get<std::string>();
        if (m.contains("src_addr")) r.src_addr = m["src_addr"].get<std::string>();
        if (m.contains("dst_addr")) r.dst_addr = m["dst_addr"].get<std::string>();
        if (m.contains("src_port")) r.src_port = m["src_port"].get<uint16_t>();
        if (m.contains("dst_port")) r.dst_port = m["dst_port"].get<uint16_t>();
        if (m.contains("proto")) {
          std::string p = m["proto"].get<std::string>();
          if (p == "tcp") r.proto = Transport::tcp;
          else if (p == "udp") r.proto = Transport::udp;
          else throw MalformedRecord(where + ": unknown proto \"" + p + "\"");
        }
      } catch (const MalformedRecord&) {
        throw;
      } catch (const ojson::exception& e) {
        throw MalformedRecord(where + ": " + e.what());
      }
    }
    rules.push_back(std::move(r));
  }
  return rules;
}

bool rule_matches(const LabelRule& r, const CleanPacket& p) {
  if (r.capture_glob && !glob_match(*r.capture_glob, p.capture)) return false;
  if (r.src_addr && IpAddr::parse(*r.src_addr) != p.five_tuple.src) return false;
  if (r.dst_addr && IpAddr::parse(*r.dst_addr) != p.five_tuple.dst) return false;
  if (r.src_port && *r.src_port != p.five_tuple.sport) return false;
  if (r.dst_port && *r.dst_port != p.five_tuple.dport) return false;
  if (r.proto && *r.proto != p.five_tuple.proto) return false;
  return true;
}

FlowLabels label_flows(const std::vector<Flow>& flows, const std::vector<LabelRule>& rules) {
  FlowLabels out;
  std::vector<int> class_of_rule(rules.size(), -1);
  for (size_t i = 0; i < rules.size(); i++) {
    int id = -1;
    for (size_t c = 0; c < out.class_names.size(); c++)
      if (out.class_names[c] == rules[i].class_name) id = int(c);
    if (id < 0) {
      id = int(out.class_names.size());
      out.class_names.push_back(rules[i].class_name);
    }
    class_of_rule[i] = id;
  }
  out.class_of_flow.assign(flows.size(), -1);
  for (size_t f = 0; f < flows.size(); f++) {
    const CleanPacket& first = flows[f].packets.front().first;
    for (size_t i = 0; i < rules.size(); i++) {
      if (rule_matches(rules[i], first)) {
        out.class_of_flow[f] = class_of_rule[i];
        break;
      }
    }
    if (out.class_of_flow[f] < 0) out.unmatched++;
  }
  return out;
}

}  // namespace etbert
