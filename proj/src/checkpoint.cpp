#include "etbert/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "etbert/common.hpp"
#include "etbert/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace etbert {

using ojson = nlohmann::ordered_json;

nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
  ojson j;
  j["layers"] = cfg.layers;
  j["hidden"] = cfg.hidden;
  j["heads"] = cfg.heads;
  j["ffn"] = cfg.ffn;
  j["vocab"] = cfg.vocab;
  j["max_positions"] = cfg.max_positions;
  j["dropout"] = cfg.dropout;
  return j;
}

ModelConfig config_from_json(const nlohmann::ordered_json& j) {
  ModelConfig cfg;
  try {
    cfg.layers = j.at("layers").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.ffn = j.at("ffn").get<int>();
    cfg.vocab = j.at("vocab").get<int>();
    cfg.max_positions = j.at("max_positions").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
  } catch (const ojson::exception& e) {
    throw BadMagic(std::string("checkpoint config block: ") + e.what());
  }
  return cfg;
}

namespace {

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<char*>(&v), 4); }
void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<char*>(&v), 8); }

struct Cursor {
  const char* p;
  size_t left;
  std::string path;

  void need(size_t n, const char* what) {
    if (left < n) throw BadMagic(path + ": truncated while reading " + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    left -= 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v;
    std::memcpy(&v, p, 8);
    p += 8;
    left -= 8;
    return v;
  }
};

void write_tensor(std::string& out, const std::string& name, const Tensor<float>& t) {
  put_u32(out, uint32_t(name.size()));
  out.append(name);
  put_u32(out, uint32_t(t.shape.size()));
  for (size_t d : t.shape) put_u64(out, d);
  out.append(reinterpret_cast<const char*>(t.v.data()), t.v.size() * 4);
}

}  // namespace

void save_checkpoint(const Model<float>& model, const CheckpointMeta& meta,
                     const AdamW<float>* opt, const std::string& path) {
  ojson j;
  j["model"] = config_to_json(model.cfg);
  j["kind"] = meta.kind;
  if (meta.kind == "classifier") {
    j["classes"] = meta.class_names;
    j["concat_flow"] = meta.concat_flow;
    j["dataset_mode"] = meta.dataset_mode;
    j["feature_dim"] = model.w.cls_w.rows();
  }
  j["optimizer_state"] = opt != nullptr;
  if (opt) j["opt_step"] = opt->step_count;
  std::string json = j.dump();

  std::string out;
  out.append("ETB1");
  put_u32(out, 1);
  put_u32(out, uint32_t(json.size()));
  out.append(json);

  auto& w = const_cast<Model<float>&>(model).w;
  auto refs = param_refs(w);
  uint32_t count = uint32_t(refs.size());
  if (opt) count += uint32_t(2 * refs.size());
  put_u32(out, count);
  for (auto& r : refs) write_tensor(out, r.name, *r.t);
  if (opt) {
    for (size_t i = 0; i < refs.size(); i++) write_tensor(out, "opt.m." + refs[i].name, opt->m[i]);
    for (size_t i = 0; i < refs.size(); i++) write_tensor(out, "opt.v." + refs[i].name, opt->v[i]);
  }
  atomic_write_file(path, out);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::string data = read_file(path);
  Cursor cur{data.data(), data.size(), path};
  cur.need(4, "magic");
  if (std::memcmp(cur.p, "ETB1", 4) != 0) throw BadMagic(path + ": bad magic");
  cur.p += 4;
  cur.left -= 4;
  uint32_t version = cur.u32("version");
  if (version != 1)
    throw VersionUnsupported(path + ": format version " + std::to_string(version));
  uint32_t jlen = cur.u32("config length");
  cur.need(jlen, "config block");
  ojson j = ojson::parse(std::string_view(cur.p, jlen), nullptr, false);
  if (j.is_discarded()) throw BadMagic(path + ": config block is not valid JSON");
  cur.p += jlen;
  cur.left -= jlen;

  LoadedCheckpoint out;
  out.model.cfg = config_from_json(j.at("model"));
  out.model.allocate();
  out.meta.kind = j.value("kind", "pretrain");
  if (out.meta.kind == "classifier") {
    try {
      out.meta.class_names = j.at("classes").get<std::vector<std::string>>();
      out.meta.concat_flow = j.value("concat_flow", false);
      out.meta.dataset_mode = j.value("dataset_mode", "packet");
      size_t feat = j.value("feature_dim", size_t(out.model.cfg.hidden));
      out.model.w.cls_w = Tensor<float>({feat, out.meta.class_names.size()});
      out.model.w.cls_b = Tensor<float>({out.meta.class_names.size()});
    } catch (const ojson::exception& e) {
      throw BadMagic(path + ": classifier metadata: " + e.what());
    }
  }
  out.meta.has_optimizer = j.value("optimizer_state", false);
  out.meta.opt_step = j.value("opt_step", int64_t(0));

  auto refs = param_refs(out.model.w);
  if (out.meta.has_optimizer) {
    out.opt.attach(out.model.w);
    out.opt.step_count = out.meta.opt_step;
  }

  uint32_t count = cur.u32("tensor count");
  size_t loaded = 0;
  for (uint32_t tix = 0; tix < count; tix++) {
    uint32_t nlen = cur.u32("tensor name length");
    cur.need(nlen, "tensor name");
    std::string name(cur.p, nlen);
    cur.p += nlen;
    cur.left -= nlen;
    uint32_t rank = cur.u32("tensor rank");
    if (rank > 8) throw ShapeMismatch(path + ": absurd rank for " + name);
    std::vector<size_t> dims(rank);
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; d++) {
      dims[d] = size_t(cur.u64("tensor dims"));
      numel *= dims[d];
    }
    Tensor<float>* dst = nullptr;
    for (auto& r : refs)
      if (r.name == name) dst = r.t;
    if (!dst && out.meta.has_optimizer) {
      for (size_t i = 0; i < refs.size(); i++) {
        if (name == "opt.m." + refs[i].name) dst = &out.opt.m[i];
        else if (name == "opt.v." + refs[i].name) dst = &out.opt.v[i];
      }
    }
    if (cur.left < numel * 4) throw ShapeMismatch(path + ": truncated tensor data for " + name);
    if (dst) {
      if (dst->shape != dims)
        throw ShapeMismatch(path + ": shape mismatch for " + name);
      std::memcpy(dst->v.data(), cur.p, numel * 4);
      loaded++;
    }
    cur.p += numel * 4;
    cur.left -= numel * 4;
  }
  size_t expected = refs.size() + (out.meta.has_optimizer ? 2 * refs.size() : 0);
  if (loaded != expected)
    throw ShapeMismatch(path + ": checkpoint holds " + std::to_string(loaded) + " of " +
                        std::to_string(expected) + " expected tensors");
  return out;
}

}  // namespace etbert
