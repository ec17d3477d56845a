#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "etbert/checkpoint.hpp"
#include "etbert/common.hpp"
#include "etbert/errors.hpp"
#include "etbert/model.hpp"
#include "etbert/optimizer.hpp"
#include "etbert/rng.hpp"

using namespace etbert;

namespace {

struct TmpFile {
  std::string path;
  explicit TmpFile(const std::string& name) {
    path = (std::filesystem::temp_directory_path() / name).string();
  }
  ~TmpFile() { std::remove(path.c_str()); }
};

ModelConfig small_cfg() {
  ModelConfig c;
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 16;
  c.vocab = 24;
  c.max_positions = 12;
  c.dropout = 0.0;
  return c;
}

Model<float> small_model(uint64_t seed) {
  Model<float> m;
  m.cfg = small_cfg();
  m.init(seed);
  return m;
}

TokenSequence probe_seq() {
  TokenSequence s;
  s.ids = {kCls, 6, 7, 8, kSep, 0, 0, 0};
  s.segments = {0, 0, 0, 0, 0, 0, 0, 0};
  s.real_len = 5;
  return s;
}

}  // namespace

TEST_CASE("config json round trip") {
  ModelConfig c = small_cfg();
  auto j = config_to_json(c);
  ModelConfig back = config_from_json(j);
  CHECK(back.layers == c.layers);
  CHECK(back.hidden == c.hidden);
  CHECK(back.heads == c.heads);
  CHECK(back.ffn == c.ffn);
  CHECK(back.vocab == c.vocab);
  CHECK(back.max_positions == c.max_positions);
  CHECK(back.dropout == doctest::Approx(c.dropout));
}

TEST_CASE("save and load restore the model bit for bit") {
  TmpFile f("etbert_ckpt_roundtrip.bin");
  auto m = small_model(31);
  CheckpointMeta meta;
  meta.kind = "pretrain";
  save_checkpoint(m, meta, nullptr, f.path);

  auto loaded = load_checkpoint(f.path);
  CHECK(loaded.meta.kind == "pretrain");
  CHECK(!loaded.meta.has_optimizer);
  CHECK(loaded.model.cfg.hidden == m.cfg.hidden);
  auto ra = param_refs(m.w);
  auto rb = param_refs(loaded.model.w);
  REQUIRE(ra.size() == rb.size());
  for (size_t i = 0; i < ra.size(); i++) {
    CHECK(ra[i].name == rb[i].name);
    CHECK(ra[i].t->shape == rb[i].t->shape);
    CHECK(ra[i].t->v == rb[i].t->v);
  }

  // same forward outputs after the round trip
  Cache<float> ca, cb;
  m.forward(probe_seq(), ca, nullptr);
  loaded.model.forward(probe_seq(), cb, nullptr);
  CHECK(ca.hidden.v == cb.hidden.v);
  CHECK(ca.pooled == cb.pooled);

  // resaving the loaded model reproduces the file byte for byte
  TmpFile f2("etbert_ckpt_resave.bin");
  save_checkpoint(loaded.model, loaded.meta, nullptr, f2.path);
  CHECK(read_file(f.path) == read_file(f2.path));
}

TEST_CASE("classifier checkpoints keep head and labels") {
  TmpFile f("etbert_ckpt_cls.bin");
  auto m = small_model(32);
  m.attach_classifier(3, 99);
  CheckpointMeta meta;
  meta.kind = "classifier";
  meta.class_names = {"mail", "video", "bulk"};
  meta.dataset_mode = "packet";
  meta.concat_flow = false;
  save_checkpoint(m, meta, nullptr, f.path);

  auto loaded = load_checkpoint(f.path);
  CHECK(loaded.meta.kind == "classifier");
  CHECK(loaded.meta.class_names == std::vector<std::string>{"mail", "video", "bulk"});
  CHECK(loaded.meta.dataset_mode == "packet");
  REQUIRE(loaded.model.w.cls_w.numel() == m.w.cls_w.numel());
  CHECK(loaded.model.w.cls_w.v == m.w.cls_w.v);
  CHECK(loaded.model.w.cls_b.shape == std::vector<size_t>{3});
}

TEST_CASE("optimizer state rides along") {
  TmpFile f("etbert_ckpt_opt.bin");
  auto m = small_model(33);
  AdamW<float> opt;
  opt.attach(m.w);
  auto g = make_grads(m, true);
  Rng rng(5);
  for (auto& r : param_refs(g))
    for (auto& v : r.t->v) v = float(rng.normal() * 0.01);
  opt.step(m.w, g, 1e-3);
  opt.step(m.w, g, 1e-3);

  CheckpointMeta meta;
  meta.has_optimizer = true;
  meta.opt_step = opt.step_count;
  save_checkpoint(m, meta, &opt, f.path);

  auto loaded = load_checkpoint(f.path);
  CHECK(loaded.meta.has_optimizer);
  CHECK(loaded.meta.opt_step == 2);
  CHECK(loaded.opt.step_count == 2);
  REQUIRE(loaded.opt.m.size() == opt.m.size());
  for (size_t i = 0; i < opt.m.size(); i++) {
    CHECK(loaded.opt.m[i].v == opt.m[i].v);
    CHECK(loaded.opt.v[i].v == opt.v[i].v);
  }
}

TEST_CASE("corrupt files are rejected with typed errors") {
  TmpFile f("etbert_ckpt_corrupt.bin");
  auto m = small_model(34);
  CheckpointMeta meta;
  save_checkpoint(m, meta, nullptr, f.path);
  std::string good = read_file(f.path);

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(f.path + ".nope"), IoError);
  }
  SUBCASE("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    atomic_write_file(f.path, bad);
    CHECK_THROWS_AS(load_checkpoint(f.path), BadMagic);
  }
  SUBCASE("unsupported version") {
    std::string bad = good;
    bad[4] = 99;
    atomic_write_file(f.path, bad);
    CHECK_THROWS_AS(load_checkpoint(f.path), VersionUnsupported);
  }
  SUBCASE("header truncation") {
    atomic_write_file(f.path, good.substr(0, 3));
    CHECK_THROWS_AS(load_checkpoint(f.path), BadMagic);
  }
  SUBCASE("body truncation at several offsets") {
    for (size_t keep : {size_t(10), size_t(40), good.size() / 2, good.size() - 3}) {
      atomic_write_file(f.path, good.substr(0, keep));
      CHECK_THROWS_AS(load_checkpoint(f.path), Error);
    }
  }
  SUBCASE("config contradicting tensor shapes") {
    // same byte count so offsets stay valid: 8 -> 4 plus a padding space
    std::string bad = good;
    auto pos = bad.find("\"hidden\":8");
    REQUIRE(pos != std::string::npos);
    bad.replace(pos, 10, "\"hidden\":4");
    // keep the declared json length unchanged: same length string
    atomic_write_file(f.path, bad);
    CHECK_THROWS_AS(load_checkpoint(f.path), ShapeMismatch);
  }
}
