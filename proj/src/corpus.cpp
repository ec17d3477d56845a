#include "etbert/corpus.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "etbert/common.hpp"
#include "etbert/errors.hpp"

namespace etbert {

using ojson = nlohmann::ordered_json;

std::vector<EligibleBurst> collect_eligible_bursts(const std::vector<Flow>& flows,
                                                   uint64_t* dropped_short) {
  std::vector<EligibleBurst> out;
  uint64_t dropped = 0;
  for (const Flow& f : flows) {
    for (const Burst& b : generate_bursts(f)) {
      bytes_t bytes = burst_bytes(f, b);
      if (bytes.size() < 4) {
        dropped++;
        continue;
      }
      EligibleBurst eb;
      eb.origin = "flow" + std::to_string(f.id) + ":burst" + std::to_string(b.ordinal);
      eb.bytes = std::move(bytes);
      out.push_back(std::move(eb));
    }
  }
  if (dropped_short) *dropped_short = dropped;
  return out;
}

std::vector<PretrainRecord> make_pairs(const std::vector<EligibleBurst>& bursts, Rng& rng) {
  if (bursts.size() < 2)
    throw InsufficientBursts("need at least 2 eligible bursts, have " +
                             std::to_string(bursts.size()));
  std::vector<PretrainRecord> out;
  out.reserve(bursts.size());
  for (size_t i = 0; i < bursts.size(); i++) {
    auto [a, b] = split_half(bursts[i].bytes);
    PretrainRecord rec;
    rec.origin = bursts[i].origin;
    rec.tokens_a = encode_bytes(a);
    if (rng.bernoulli(0.5)) {
      rec.sbp_label = 0;
      rec.tokens_b = encode_bytes(b);
    } else {
      rec.sbp_label = 1;
      size_t j = rng.uniform_u64(bursts.size() - 1);
      if (j >= i) j++;
      rec.tokens_b = encode_bytes(split_half(bursts[j].bytes).second);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<PretrainRecord> make_adjacent_pairs(const std::vector<Flow>& flows, Rng& rng) {
  std::vector<const bytes_t*> pool;
  for (const Flow& f : flows)
    for (const auto& [pkt, dir] : f.packets)
      if (pkt.datagram.size() >= 2) pool.push_back(&pkt.datagram);

  std::vector<PretrainRecord> out;
  for (const Flow& f : flows) {
    for (size_t i = 0; i + 1 < f.packets.size(); i++) {
      const bytes_t& a = f.packets[i].first.datagram;
      const bytes_t& b = f.packets[i + 1].first.datagram;
      if (a.size() < 2 || b.size() < 2) continue;
      PretrainRecord rec;
      rec.origin = "flow" + std::to_string(f.id) + ":pkt" + std::to_string(i);
      rec.tokens_a = encode_bytes(a);
      if (rng.bernoulli(0.5)) {
        rec.sbp_label = 0;
        rec.tokens_b = encode_bytes(b);
      } else {
        rec.sbp_label = 1;
        const bytes_t* pick = &b;
        while (pick == &b || pick == &a) {
          if (pool.size() < 3) throw InsufficientBursts("negative pool too small");
          pick = pool[rng.uniform_u64(pool.size())];
        }
        rec.tokens_b = encode_bytes(*pick);
      }
      out.push_back(std::move(rec));
    }
  }
  if (out.size() < 2) throw InsufficientBursts("need at least 2 adjacent packet pairs");
  return out;
}

MaskedExample apply_mask(const TokenSequence& seq, Rng& rng) {
  MaskedExample ex;
  ex.input = seq;
  std::vector<int32_t> candidates;
  for (int32_t i = 0; i < seq.real_len; i++)
    if (!is_special(seq.ids[size_t(i)])) candidates.push_back(i);
  if (candidates.empty()) throw InternalError("sequence has no maskable token");

  for (int32_t pos : candidates)
    if (rng.bernoulli(kMaskSelectP)) ex.mask_positions.push_back(pos);
  if (ex.mask_positions.empty())
    ex.mask_positions.push_back(candidates[rng.uniform_u64(candidates.size())]);

  for (int32_t pos : ex.mask_positions) {
    TokenId orig = ex.input.ids[size_t(pos)];
    ex.mask_targets.push_back(orig);
    double u = rng.uniform();
    if (u < kMaskReplaceP) {
      ex.input.ids[size_t(pos)] = kMask;
    } else if (u < kMaskReplaceP + kMaskRandomP) {
      ex.input.ids[size_t(pos)] =
          TokenId(rng.uniform_u64(uint64_t(kVocabSize - kSpecialCount))) + kSpecialCount;
    }  // else keep
  }
  return ex;
}

void write_corpus(const std::vector<PretrainRecord>& records, const std::string& path) {
  std::ostringstream out;
  for (const auto& rec : records) {
    ojson j;
    j["tokens_a"] = rec.tokens_a;
    j["tokens_b"] = rec.tokens_b;
    j["sbp_label"] = rec.sbp_label;
    j["origin"] = rec.origin;
    out << j.dump() << '\n';
  }
  atomic_write_file(path, out.str());
}

std::vector<PretrainRecord> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<PretrainRecord> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    if (line.empty()) continue;
    ojson j = ojson::parse(line, nullptr, false);
    if (j.is_discarded())
      throw MalformedRecord("line " + std::to_string(line_no) + ": not valid JSON");
    auto need = [&](const char* key) -> const ojson& {
      if (!j.contains(key))
        throw MalformedRecord("line " + std::to_string(line_no) + ": missing \"" + key + "\"");
      return j[key];
    };
    PretrainRecord rec;
    const ojson &ja = need("tokens_a"), &jb = need("tokens_b");
    const ojson &jl = need("sbp_label"), &jo = need("origin");
    if (!ja.is_array() || !jb.is_array() || !jl.is_number_integer() || !jo.is_string())
      throw MalformedRecord("line " + std::to_string(line_no) + ": wrong field type");
    for (const auto& v : ja) {
      if (!v.is_number_integer())
        throw MalformedRecord("line " + std::to_string(line_no) + ": non-integer token");
      rec.tokens_a.push_back(v.get<TokenId>());
    }
    for (const auto& v : jb) {
      if (!v.is_number_integer())
        throw MalformedRecord("line " + std::to_string(line_no) + ": non-integer token");
      rec.tokens_b.push_back(v.get<TokenId>());
    }
    rec.sbp_label = jl.get<int>();
    if (rec.sbp_label != 0 && rec.sbp_label != 1)
      throw MalformedRecord("line " + std::to_string(line_no) + ": sbp_label not in {0,1}");
    rec.origin = jo.get<std::string>();
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace etbert
