#include "etbert/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "etbert/common.hpp"
#include "etbert/errors.hpp"

namespace etbert {

namespace {

constexpr uint64_t kTagOrder = 0x4f524452;     // pretrain epoch order
constexpr uint64_t kTagMask = 0x4d41534b;      // masking
constexpr uint64_t kTagDrop = 0x44524f50;      // pretrain dropout
constexpr uint64_t kTagFtOrder = 0x464f5244;   // finetune epoch order
constexpr uint64_t kTagFtDrop = 0x46445250;    // finetune encoder dropout
constexpr uint64_t kTagHeadDrop = 0x48445250;  // finetune head dropout
constexpr uint64_t kTagSplit = 0x53504c54;     // dataset shuffling
constexpr uint64_t kTagHead = 0x48454144;      // classifier init

void check_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw InternalError(std::string("non-finite ") + what);
}

void check_params_finite(Weights<float>& w) {
  for (auto& ref : param_refs(w))
    for (float v : ref.t->v)
      if (!std::isfinite(v)) throw InternalError("non-finite parameter in " + ref.name);
}

void zero_grads(Weights<float>& g) {
  for (auto& ref : param_refs(g)) ref.t->zero();
}

// Token groups for the concatenated-packet ablation: kSep-delimited runs,
// empty runs dropped, at most m groups.
std::vector<std::vector<TokenId>> split_groups(const std::vector<TokenId>& tokens, int m) {
  std::vector<std::vector<TokenId>> out;
  std::vector<TokenId> cur;
  auto flush = [&] {
    if (!cur.empty() && int(out.size()) < m) out.push_back(std::move(cur));
    cur.clear();
  };
  for (TokenId t : tokens) {
    if (t == kSep)
      flush();
    else
      cur.push_back(t);
  }
  flush();
  return out;
}

// Feature vector for one example: pooled output, or the concatenation of the
// per-group pooled outputs (zero for absent groups). Caches are kept for the
// backward pass.
struct FeatureOut {
  std::vector<Cache<float>> caches;  // one per encoded group (1 in plain mode)
  std::vector<int> slot;             // feature slot of each cache (concat mode)
  std::vector<float> feature;
};

void feature_forward(const Model<float>& model, const std::vector<TokenId>& tokens, int max_len,
                     bool concat, int m_packets, Rng* drop, FeatureOut& out) {
  size_t H = size_t(model.cfg.hidden);
  out.caches.clear();
  out.slot.clear();
  if (!concat) {
    out.feature.assign(H, 0.0f);
    TokenSequence seq = build_single_sequence(tokens, max_len);
    out.caches.emplace_back();
    model.forward(seq, out.caches.back(), drop);
    std::copy(out.caches.back().pooled.begin(), out.caches.back().pooled.end(),
              out.feature.begin());
    out.slot.push_back(0);
    return;
  }
  out.feature.assign(size_t(m_packets) * H, 0.0f);
  auto groups = split_groups(tokens, m_packets);
  if (groups.empty()) throw SequenceTooShort("no tokenizable packet group");
  for (size_t gi = 0; gi < groups.size(); gi++) {
    TokenSequence seq = build_single_sequence(groups[gi], max_len);
    out.caches.emplace_back();
    model.forward(seq, out.caches.back(), drop);
    std::copy(out.caches.back().pooled.begin(), out.caches.back().pooled.end(),
              out.feature.begin() + ptrdiff_t(gi * H));
    out.slot.push_back(int(gi));
  }
}

}  // namespace

PretrainResult pretrain(const std::vector<PretrainRecord>& corpus, Model<float>& model,
                        AdamW<float>& opt, const TrainConfig& cfg, int64_t start_step) {
  if (corpus.empty()) throw EmptyCorpus("pretraining corpus is empty");
  for (const auto& rec : corpus)
    for (const auto* side : {&rec.tokens_a, &rec.tokens_b})
      for (TokenId t : *side)
        if (t < kSpecialCount || t >= TokenId(model.cfg.vocab))
          throw IdOutOfRange("corpus token id " + std::to_string(t));

  size_t N = corpus.size();
  size_t B = size_t(cfg.batch_size);
  size_t H = size_t(model.cfg.hidden);

  // Epoch orders are regenerated from the seed on demand so a resumed run
  // walks the same permutations.
  std::map<int64_t, std::vector<size_t>> orders;
  auto order_for = [&](int64_t epoch) -> const std::vector<size_t>& {
    auto it = orders.find(epoch);
    if (it == orders.end()) {
      std::vector<size_t> ord(N);
      std::iota(ord.begin(), ord.end(), size_t(0));
      Rng rng(mix_seed({cfg.seed, kTagOrder, uint64_t(epoch)}));
      rng.shuffle(ord);
      it = orders.emplace(epoch, std::move(ord)).first;
      while (orders.size() > 4) orders.erase(orders.begin());
    }
    return it->second;
  };

  Weights<float> grads = make_grads(model, true);
  PretrainResult result;

  std::vector<MaskedExample> batch(B);
  std::vector<Cache<float>> caches(B);
  std::vector<uint64_t> positions(B);

  for (int64_t step = start_step + 1; step <= cfg.steps; step++) {
    for (size_t i = 0; i < B; i++) {
      uint64_t pos = uint64_t(step - 1) * B + i;
      positions[i] = pos;
      int64_t epoch = int64_t(pos / N);
      size_t idx = order_for(epoch)[size_t(pos % N)];
      const PretrainRecord& rec = corpus[idx];
      TokenSequence seq = build_pair_sequence(rec.tokens_a, rec.tokens_b, cfg.max_len);
      Rng mask_rng(mix_seed({cfg.seed, kTagMask, uint64_t(epoch), uint64_t(idx)}));
      batch[i] = apply_mask(seq, mask_rng);
      batch[i].sbp_label = rec.sbp_label;
    }

    parallel_for(B, [&](size_t lo, size_t hi) {
      for (size_t i = lo; i < hi; i++) {
        Rng drop(mix_seed({cfg.seed, kTagDrop, positions[i]}));
        model.forward(batch[i].input, caches[i], &drop);
      }
    });

    // Gather every masked position of the batch for one chunked MBM pass.
    size_t total_masks = 0;
    for (auto& ex : batch) total_masks += ex.mask_positions.size();
    std::vector<float> h_gather(total_masks * H);
    std::vector<int32_t> targets(total_masks);
    std::vector<double> row_scale(total_masks);
    std::vector<std::pair<size_t, int32_t>> row_owner(total_masks);  // (example, position)
    size_t r = 0;
    for (size_t i = 0; i < B; i++) {
      double scale = 1.0 / (double(B) * double(batch[i].mask_positions.size()));
      for (size_t k = 0; k < batch[i].mask_positions.size(); k++, r++) {
        int32_t p = batch[i].mask_positions[k];
        std::copy_n(caches[i].hidden.row(size_t(p)), H, h_gather.begin() + ptrdiff_t(r * H));
        targets[r] = int32_t(batch[i].mask_targets[k]);
        row_scale[r] = scale;
        row_owner[r] = {i, p};
      }
    }

    zero_grads(grads);
    std::vector<float> dh(total_masks * H, 0.0f);
    double loss_mbm = mbm_batch(model.w.mbm_w, model.w.mbm_b, h_gather.data(), targets.data(),
                                row_scale.data(), total_masks, grads.mbm_w, grads.mbm_b,
                                dh.data());

    double loss_sbp = 0;
    Tensor<float> d_hidden;
    std::vector<float> d_pooled(H);
    r = 0;
    for (size_t i = 0; i < B; i++) {
      const Cache<float>& c = caches[i];
      d_hidden = Tensor<float>({size_t(c.len), H});
      for (; r < total_masks && row_owner[r].first == i; r++)
        std::copy_n(dh.begin() + ptrdiff_t(r * H), H, d_hidden.row(size_t(row_owner[r].second)));

      float logits[2], dlogits[2];
      head_forward(model.w.sbp_w, model.w.sbp_b, c.pooled.data(), logits);
      loss_sbp += softmax_xent(logits, 2, batch[i].sbp_label, dlogits, 1.0 / double(B)) /
                  double(B);
      for (size_t k = 0; k < H; k++) {
        d_pooled[k] = vdot(model.w.sbp_w.row(k), dlogits, 2);
        vaxpy(c.pooled[k], dlogits, grads.sbp_w.row(k), 2);
      }
      grads.sbp_b.v[0] += dlogits[0];
      grads.sbp_b.v[1] += dlogits[1];

      model.backward(c, d_hidden, d_pooled, grads, nullptr);
    }

    check_finite(loss_mbm, "masked-model loss");
    check_finite(loss_sbp, "same-origin loss");

    double lr = scheduled_lr(cfg.learning_rate, step, cfg.steps, cfg.warmup_ratio);
    opt.step(model.w, grads, lr);
    if (step % 50 == 0 || step == cfg.steps) check_params_finite(model.w);

    result.history.push_back({loss_mbm, loss_sbp, loss_mbm + loss_sbp, lr});
  }
  return result;
}

SplitRatio SplitRatio::parse(const std::string& s) {
  SplitRatio r;
  int parts[3];
  size_t pos = 0;
  for (int i = 0; i < 3; i++) {
    size_t next = i < 2 ? s.find(':', pos) : s.size();
    if (next == std::string::npos) throw UsageError("split ratio must look like 8:1:1");
    try {
      size_t used = 0;
      parts[i] = std::stoi(s.substr(pos, next - pos), &used);
      if (used != next - pos) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw UsageError("split ratio must look like 8:1:1");
    }
    if (parts[i] < 0) throw UsageError("split ratio parts must be non-negative");
    pos = next + 1;
  }
  if (parts[0] <= 0 || parts[0] + parts[1] + parts[2] <= 0)
    throw UsageError("split ratio needs a positive training share");
  r.train = parts[0];
  r.val = parts[1];
  r.test = parts[2];
  return r;
}

SplitDataset build_finetune_dataset(const std::vector<Flow>& flows,
                                    const std::vector<int>& flow_class,
                                    const std::vector<std::string>& class_names, TrainMode mode,
                                    size_t cap, double fraction, uint64_t seed, bool concat_flow,
                                    int m_packets, SplitRatio ratio, DatasetStats* stats) {
  if (flows.size() != flow_class.size())
    throw InternalError("flow/label count mismatch");
  size_t K = class_names.size();
  DatasetStats local;
  local.collected.assign(K, 0);
  local.capped.assign(K, 0);

  bool flow_mode = mode == TrainMode::finetune_flow;
  std::vector<std::vector<ClassExample>> per_class(K);

  for (size_t fi = 0; fi < flows.size(); fi++) {
    int cls = flow_class[fi];
    if (cls < 0) {
      local.unlabeled_flows++;
      continue;
    }
    if (size_t(cls) >= K) throw LabelOutOfRange("class id " + std::to_string(cls));
    const Flow& flow = flows[fi];
    if (flow_mode) {
      std::vector<TokenId> toks;
      if (concat_flow) {
        // per-packet groups, each independently tokenizable
        int groups = 0;
        for (const auto& [pkt, dir] : flow.packets) {
          if (int(groups) >= m_packets) break;
          if (pkt.datagram.size() < 2) continue;
          auto ids = encode_bytes(pkt.datagram);
          if (groups) toks.push_back(kSep);
          toks.insert(toks.end(), ids.begin(), ids.end());
          groups++;
        }
        if (!groups) {
          local.skipped_short++;
          continue;
        }
      } else {
        bytes_t stitched;
        int used = 0;
        for (const auto& [pkt, dir] : flow.packets) {
          if (used >= m_packets) break;
          if (pkt.datagram.empty()) continue;
          stitched.insert(stitched.end(), pkt.datagram.begin(), pkt.datagram.end());
          used++;
        }
        if (stitched.size() < 2) {
          local.skipped_short++;
          continue;
        }
        toks = encode_bytes(stitched);
      }
      per_class[size_t(cls)].push_back({cls, std::move(toks)});
    } else {
      for (const auto& [pkt, dir] : flow.packets) {
        if (pkt.datagram.size() < 2) {
          local.skipped_short++;
          continue;
        }
        per_class[size_t(cls)].push_back({cls, encode_bytes(pkt.datagram)});
      }
    }
  }

  SplitDataset ds;
  ds.class_names = class_names;
  if (K < 2) throw ClassEmpty("need at least two classes");
  for (size_t c = 0; c < K; c++) {
    auto& pool = per_class[c];
    local.collected[c] = pool.size();
    if (pool.empty()) throw ClassEmpty("class '" + class_names[c] + "' has no examples");
    Rng rng(mix_seed({seed, kTagSplit, uint64_t(c)}));
    rng.shuffle(pool);
    if (cap && pool.size() > cap) pool.resize(cap);
    local.capped[c] = pool.size();

    size_t n = pool.size();
    size_t denom = size_t(ratio.train + ratio.val + ratio.test);
    size_t n_val = n * size_t(ratio.val) / denom;
    size_t n_test = n * size_t(ratio.test) / denom;
    size_t n_train = n - n_val - n_test;
    size_t n_few = size_t(std::ceil(fraction * double(n_train)));
    n_few = std::clamp<size_t>(n_few, n_train ? 1 : 0, n_train);
    for (size_t i = 0; i < n_few; i++) ds.train.push_back(pool[i]);
    for (size_t i = n_train; i < n_train + n_val; i++) ds.val.push_back(pool[i]);
    for (size_t i = n_train + n_val; i < n; i++) ds.test.push_back(pool[i]);
  }
  if (stats) *stats = std::move(local);
  return ds;
}

void write_dataset_tsv(const std::vector<ClassExample>& examples, const std::string& path) {
  std::string out = "label\ttokens\n";
  for (const auto& ex : examples) {
    out += std::to_string(ex.class_id);
    out += '\t';
    for (size_t i = 0; i < ex.tokens.size(); i++) {
      if (i) out += ' ';
      out += std::to_string(ex.tokens[i]);
    }
    out += '\n';
  }
  atomic_write_file(path, out);
}

std::vector<ClassExample> read_dataset_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<ClassExample> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "label\ttokens")
        throw MalformedRecord("line 1: expected header label<TAB>tokens");
      continue;
    }
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw MalformedRecord("line " + std::to_string(line_no) + ": missing tab");
    ClassExample ex;
    try {
      ex.class_id = std::stoi(line.substr(0, tab));
    } catch (const std::exception&) {
      throw MalformedRecord("line " + std::to_string(line_no) + ": bad label");
    }
    if (ex.class_id < 0)
      throw MalformedRecord("line " + std::to_string(line_no) + ": negative label");
    std::istringstream toks(line.substr(tab + 1));
    long long v;
    while (toks >> v) {
      if (v < 0 || v >= kVocabSize)
        throw MalformedRecord("line " + std::to_string(line_no) + ": token id out of range");
      ex.tokens.push_back(TokenId(v));
    }
    if (!toks.eof())
      throw MalformedRecord("line " + std::to_string(line_no) + ": bad token");
    if (ex.tokens.empty())
      throw MalformedRecord("line " + std::to_string(line_no) + ": no tokens");
    out.push_back(std::move(ex));
  }
  return out;
}

FinetuneResult finetune(const SplitDataset& ds, Model<float>& model, const TrainConfig& cfg) {
  if (ds.train.empty()) throw ClassEmpty("empty training split");
  size_t K = ds.class_names.size();
  for (const auto* split : {&ds.train, &ds.val, &ds.test})
    for (const auto& ex : *split) {
      if (size_t(ex.class_id) >= K)
        throw LabelOutOfRange("class id " + std::to_string(ex.class_id));
      for (TokenId t : ex.tokens)
        if (t >= TokenId(model.cfg.vocab)) throw IdOutOfRange("token id " + std::to_string(t));
    }

  FinetuneResult result;
  result.single_class_warning = K < 2;

  size_t H = size_t(model.cfg.hidden);
  size_t feat_dim = cfg.concat_flow ? size_t(cfg.concat_packets) * H : H;
  if (cfg.concat_flow)
    model.attach_wide_classifier(int(K), feat_dim, mix_seed({cfg.seed, kTagHead}));
  else
    model.attach_classifier(int(K), mix_seed({cfg.seed, kTagHead}));

  AdamW<float> opt;
  opt.cfg.lr = cfg.learning_rate;
  opt.cfg.weight_decay = cfg.weight_decay;
  opt.attach(model.w);
  Weights<float> grads = make_grads(model, true);

  size_t B = size_t(cfg.batch_size);
  size_t n_train = ds.train.size();
  int64_t steps_per_epoch = int64_t((n_train + B - 1) / B);
  int64_t total_steps = steps_per_epoch * cfg.epochs;

  double keep = 1.0 - cfg.head_dropout;
  float keep_inv = keep > 0 ? float(1.0 / keep) : 0.0f;

  double best_f1 = -1;
  std::vector<Tensor<float>> best_params;
  auto snapshot = [&] {
    best_params.clear();
    for (auto& ref : param_refs(model.w)) best_params.push_back(*ref.t);
  };

  int64_t global_step = 0;
  uint64_t global_ex = 0;
  FeatureOut fo;
  std::vector<float> dlogits(K), dfeat(feat_dim);

  for (int epoch = 1; epoch <= cfg.epochs; epoch++) {
    std::vector<size_t> order(n_train);
    std::iota(order.begin(), order.end(), size_t(0));
    Rng ord_rng(mix_seed({cfg.seed, kTagFtOrder, uint64_t(epoch)}));
    ord_rng.shuffle(order);

    double epoch_loss = 0;
    for (size_t base = 0; base < n_train; base += B) {
      size_t bsz = std::min(B, n_train - base);
      zero_grads(grads);
      double batch_loss = 0;
      for (size_t bi = 0; bi < bsz; bi++, global_ex++) {
        const ClassExample& ex = ds.train[order[base + bi]];
        Rng drop(mix_seed({cfg.seed, kTagFtDrop, global_ex}));
        feature_forward(model, ex.tokens, cfg.max_len, cfg.concat_flow, cfg.concat_packets,
                        &drop, fo);

        // classifier-head dropout on the feature vector
        std::vector<uint8_t> hmask(feat_dim, 1);
        std::vector<float> feat = fo.feature;
        if (cfg.head_dropout > 0) {
          Rng hd(mix_seed({cfg.seed, kTagHeadDrop, global_ex}));
          for (size_t k = 0; k < feat_dim; k++) {
            hmask[k] = hd.uniform() >= cfg.head_dropout;
            feat[k] = hmask[k] ? feat[k] * keep_inv : 0.0f;
          }
        }

        std::vector<float> logits(K);
        head_forward(model.w.cls_w, model.w.cls_b, feat.data(), logits.data());
        batch_loss += softmax_xent(logits.data(), K, ex.class_id, dlogits.data(),
                                   1.0 / double(bsz)) /
                      double(bsz);
        for (size_t k = 0; k < feat_dim; k++) {
          dfeat[k] = vdot(model.w.cls_w.row(k), dlogits.data(), K);
          vaxpy(feat[k], dlogits.data(), grads.cls_w.row(k), K);
          if (cfg.head_dropout > 0) dfeat[k] = hmask[k] ? dfeat[k] * keep_inv : 0.0f;
        }
        for (size_t j = 0; j < K; j++) grads.cls_b.v[j] += dlogits[j];

        std::vector<float> d_pooled(H);
        Tensor<float> d_hidden;
        for (size_t ci = 0; ci < fo.caches.size(); ci++) {
          size_t off = size_t(fo.slot[ci]) * H;
          std::copy_n(dfeat.begin() + ptrdiff_t(off), H, d_pooled.begin());
          d_hidden = Tensor<float>({size_t(fo.caches[ci].len), H});
          model.backward(fo.caches[ci], d_hidden, d_pooled, grads, nullptr);
        }
      }
      check_finite(batch_loss, "fine-tuning loss");
      global_step++;
      double lr = scheduled_lr(cfg.learning_rate, global_step, total_steps, cfg.warmup_ratio);
      opt.step(model.w, grads, lr);
      epoch_loss += batch_loss;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = epoch_loss / double(steps_per_epoch);
    if (!ds.val.empty()) {
      MacroReport rep = evaluate(model, ds.val, int(K), cfg.max_len, cfg.concat_flow,
                                 cfg.concat_packets);
      em.val_macro_f1 = rep.macro_f1;
      em.val_accuracy = rep.accuracy;
      if (rep.macro_f1 > best_f1) {
        best_f1 = rep.macro_f1;
        result.best_epoch = epoch;
        snapshot();
      }
    } else {
      result.best_epoch = epoch;
    }
    result.epochs.push_back(em);
    check_params_finite(model.w);
  }

  if (!best_params.empty()) {
    auto refs = param_refs(model.w);
    for (size_t i = 0; i < refs.size(); i++) *refs[i].t = best_params[i];
  }
  return result;
}

std::vector<Prediction> predict(const Model<float>& model,
                                const std::vector<ClassExample>& examples, int max_len,
                                bool concat_flow, int m_packets) {
  if (!model.w.cls_w.numel()) throw UntrainedHead("no classification head attached");
  size_t K = model.w.cls_w.cols();
  // validate up front: worker threads must not throw
  for (const auto& ex : examples) {
    for (TokenId t : ex.tokens)
      if (t < 0 || t >= TokenId(model.cfg.vocab))
        throw IdOutOfRange("token id " + std::to_string(t));
    if (concat_flow && split_groups(ex.tokens, m_packets).empty())
      throw SequenceTooShort("no tokenizable packet group");
  }
  std::vector<Prediction> out(examples.size());
  parallel_for(examples.size(), [&](size_t lo, size_t hi) {
    FeatureOut fo;
    for (size_t i = lo; i < hi; i++) {
      feature_forward(model, examples[i].tokens, max_len, concat_flow, m_packets, nullptr, fo);
      std::vector<float> logits(K);
      head_forward(model.w.cls_w, model.w.cls_b, fo.feature.data(), logits.data());
      out[i].probs.resize(K);
      softmax_xent(logits.data(), K, 0, (float*)nullptr, 0.0, out[i].probs.data());
      int arg = 0;
      for (size_t j = 1; j < K; j++)
        if (out[i].probs[j] > out[i].probs[size_t(arg)]) arg = int(j);
      out[i].class_id = arg;
    }
  });
  return out;
}

MacroReport evaluate(const Model<float>& model, const std::vector<ClassExample>& examples,
                     int num_classes, int max_len, bool concat_flow, int m_packets) {
  auto preds = predict(model, examples, max_len, concat_flow, m_packets);
  std::vector<int> y_true(examples.size()), y_pred(examples.size());
  for (size_t i = 0; i < examples.size(); i++) {
    y_true[i] = examples[i].class_id;
    y_pred[i] = preds[i].class_id;
  }
  ConfusionMatrix cm = confusion(y_true, y_pred, num_classes);
  return macro_report(cm);
}

}  // namespace etbert
