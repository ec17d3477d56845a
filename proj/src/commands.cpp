#include "etbert/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "etbert/capture.hpp"
#include "etbert/checkpoint.hpp"
#include "etbert/common.hpp"
#include "etbert/corpus.hpp"
#include "etbert/errors.hpp"
#include "etbert/flow.hpp"
#include "etbert/randomness.hpp"
#include "etbert/store.hpp"
#include "etbert/trainer.hpp"

namespace etbert {

namespace {

using json = nlohmann::ordered_json;

constexpr uint64_t kTagCorpus = 0x434f5250;  // pair sampling

ModelConfig preset_config(const std::string& name) {
  if (name == "desk") return ModelConfig::desk();
  if (name == "paper") return ModelConfig::paper();
  throw UsageError("unknown preset \"" + name + "\" (expected desk or paper)");
}

int resolve_max_len(int requested, const ModelConfig& cfg) {
  if (requested == 0) return cfg.max_positions;
  if (requested < 8) throw UsageError("max-len must be at least 8");
  if (requested > cfg.max_positions)
    throw Incompatible("max-len " + std::to_string(requested) + " exceeds the model's " +
                       std::to_string(cfg.max_positions) + " positions");
  return requested;
}

std::vector<std::string> load_class_names(const std::string& path) {
  json j = json::parse(read_file(path));
  if (!j.is_array()) throw MalformedRecord(path + ": expected a JSON array of names");
  std::vector<std::string> out;
  for (const auto& item : j) {
    if (!item.is_string()) throw MalformedRecord(path + ": class names must be strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

std::vector<std::string> default_class_names(const std::vector<ClassExample>& examples) {
  int hi = -1;
  for (const auto& ex : examples) hi = std::max(hi, ex.class_id);
  std::vector<std::string> out;
  for (int c = 0; c <= hi; c++) out.push_back("class" + std::to_string(c));
  return out;
}

json history_json(const std::vector<StepLoss>& hist) {
  json out = json::array();
  for (size_t i = 0; i < hist.size(); i++)
    out.push_back({{"mbm", hist[i].mbm},
                   {"sbp", hist[i].sbp},
                   {"total", hist[i].total},
                   {"lr", hist[i].lr}});
  return out;
}

json report_json(const MacroReport& rep, const std::vector<std::string>& names) {
  json per = json::array();
  for (size_t c = 0; c < rep.per_class.size(); c++) {
    per.push_back({{"class", c < names.size() ? names[c] : "class" + std::to_string(c)},
                   {"precision", rep.per_class[c].precision},
                   {"recall", rep.per_class[c].recall},
                   {"f1", rep.per_class[c].f1},
                   {"support", rep.per_class[c].support}});
  }
  return {{"accuracy", rep.accuracy},
          {"macro_precision", rep.macro_precision},
          {"macro_recall", rep.macro_recall},
          {"macro_f1", rep.macro_f1},
          {"macro_ac", rep.macro_ac_alt},
          {"per_class", per}};
}

}  // namespace

json cmd_ingest(const IngestArgs& a) {
  if (a.captures.empty()) throw UsageError("ingest needs at least one capture file");
  if (a.out_store.empty()) throw UsageError("ingest needs an output store path");
  IngestCounters totals;
  std::vector<CleanPacket> all;
  json per_file = json::array();
  for (const auto& path : a.captures) {
    IngestCounters c;
    auto pkts = ingest_file(path, c);
    all.insert(all.end(), std::make_move_iterator(pkts.begin()),
               std::make_move_iterator(pkts.end()));
    json skipped;
    for (int r = 0; r < 5; r++) skipped[skip_reason_name(SkipReason(r))] = c.skipped[r];
    per_file.push_back({{"capture", path},
                        {"frames", c.frames},
                        {"packets", c.packets},
                        {"skipped", skipped},
                        {"malformed", c.malformed}});
    totals.frames += c.frames;
    totals.packets += c.packets;
    totals.malformed += c.malformed;
    for (int r = 0; r < 5; r++) totals.skipped[r] += c.skipped[r];
  }
  write_store(all, a.out_store);
  json skipped;
  for (int r = 0; r < 5; r++) skipped[skip_reason_name(SkipReason(r))] = totals.skipped[r];
  return {{"command", "ingest"},
          {"config", {{"captures", a.captures}, {"out", a.out_store}}},
          {"files", per_file},
          {"frames", totals.frames},
          {"packets", totals.packets},
          {"skipped", skipped},
          {"malformed", totals.malformed}};
}

json cmd_corpus(const CorpusArgs& a) {
  if (a.pairs_from != "burst" && a.pairs_from != "adjacent")
    throw UsageError("pairs-from must be burst or adjacent");
  auto packets = read_store(a.store);
  auto flows = assemble_flows(std::move(packets));
  Rng rng(mix_seed({a.seed, kTagCorpus}));
  std::vector<PretrainRecord> records;
  uint64_t bursts = 0, dropped_short = 0;
  if (a.pairs_from == "burst") {
    auto eligible = collect_eligible_bursts(flows, &dropped_short);
    bursts = eligible.size();
    records = make_pairs(eligible, rng);
  } else {
    records = make_adjacent_pairs(flows, rng);
  }
  uint64_t label0 = 0;
  for (const auto& r : records) label0 += r.sbp_label == 0;
  write_corpus(records, a.out_corpus);
  return {{"command", "corpus"},
          {"config",
           {{"store", a.store},
            {"out", a.out_corpus},
            {"seed", a.seed},
            {"pairs_from", a.pairs_from}}},
          {"flows", flows.size()},
          {"eligible_bursts", bursts},
          {"dropped_short", dropped_short},
          {"records", records.size()},
          {"paired_fraction", records.empty() ? 0.0 : double(label0) / double(records.size())}};
}

json cmd_pretrain(const PretrainArgs& a) {
  auto corpus = read_corpus(a.corpus);

  Model<float> model;
  AdamW<float> opt;
  int64_t start_step = 0;
  if (!a.resume.empty()) {
    LoadedCheckpoint ck = load_checkpoint(a.resume);
    if (ck.meta.kind != "pretrain")
      throw Incompatible("checkpoint " + a.resume + " is not a pre-training checkpoint");
    model = std::move(ck.model);
    if (ck.meta.has_optimizer)
      opt = std::move(ck.opt);
    else
      opt.attach(model.w);
    start_step = ck.meta.opt_step;
  } else {
    model.cfg = preset_config(a.preset);
    model.init(a.seed);
    opt.attach(model.w);
  }

  TrainConfig tc;
  tc.mode = TrainMode::pretrain;
  tc.batch_size = a.batch_size;
  tc.steps = a.steps;
  tc.learning_rate = a.learning_rate;
  tc.warmup_ratio = a.warmup_ratio;
  tc.seed = a.seed;
  tc.max_len = resolve_max_len(a.max_len, model.cfg);
  if (a.batch_size < 1) throw UsageError("batch size must be positive");
  if (a.steps <= start_step)
    throw UsageError("steps (" + std::to_string(a.steps) + ") must exceed the resumed step " +
                     std::to_string(start_step));

  PretrainResult res = pretrain(corpus, model, opt, tc, start_step);

  CheckpointMeta meta;
  meta.kind = "pretrain";
  meta.opt_step = opt.step_count;
  meta.has_optimizer = a.save_optimizer;
  save_checkpoint(model, meta, a.save_optimizer ? &opt : nullptr, a.out_checkpoint);

  json rep = {{"command", "pretrain"},
              {"config",
               {{"corpus", a.corpus},
                {"out", a.out_checkpoint},
                {"resume", a.resume},
                {"preset", a.preset},
                {"seed", a.seed},
                {"steps", a.steps},
                {"batch_size", a.batch_size},
                {"learning_rate", a.learning_rate},
                {"warmup_ratio", a.warmup_ratio},
                {"max_len", tc.max_len},
                {"save_optimizer", a.save_optimizer}}},
              {"records", corpus.size()},
              {"start_step", start_step},
              {"steps_run", res.history.size()},
              {"history", history_json(res.history)}};
  if (!res.history.empty()) {
    rep["final_mbm"] = res.history.back().mbm;
    rep["final_sbp"] = res.history.back().sbp;
    rep["final_total"] = res.history.back().total;
  }
  return rep;
}

json cmd_dataset(const DatasetArgs& a) {
  if (a.mode != "packet" && a.mode != "flow") throw UsageError("mode must be packet or flow");
  if (a.fraction <= 0.0 || a.fraction > 1.0)
    throw UsageError("fraction must lie in (0, 1]");
  SplitRatio ratio = SplitRatio::parse(a.split);
  auto packets = read_store(a.store);
  auto flows = assemble_flows(std::move(packets));
  auto rules = read_label_map(a.label_map);
  FlowLabels labels = label_flows(flows, rules);

  TrainMode mode = a.mode == "flow" ? TrainMode::finetune_flow : TrainMode::finetune_packet;
  size_t cap = a.mode == "flow" ? a.cap_flows : a.cap_packets;
  DatasetStats stats;
  SplitDataset ds =
      build_finetune_dataset(flows, labels.class_of_flow, labels.class_names, mode, cap,
                             a.fraction, a.seed, a.concat_flow, a.m_packets, ratio, &stats);

  write_dataset_tsv(ds.train, a.out_prefix + ".train.tsv");
  write_dataset_tsv(ds.val, a.out_prefix + ".val.tsv");
  write_dataset_tsv(ds.test, a.out_prefix + ".test.tsv");
  json names = json::array();
  for (const auto& n : ds.class_names) names.push_back(n);
  atomic_write_file(a.out_prefix + ".classes.json", names.dump(2) + "\n");

  json per_class = json::array();
  for (size_t c = 0; c < ds.class_names.size(); c++)
    per_class.push_back({{"class", ds.class_names[c]},
                         {"collected", stats.collected[c]},
                         {"kept", stats.capped[c]}});
  return {{"command", "dataset"},
          {"config",
           {{"store", a.store},
            {"labels", a.label_map},
            {"out_prefix", a.out_prefix},
            {"mode", a.mode},
            {"cap_flows", a.cap_flows},
            {"cap_packets", a.cap_packets},
            {"split", a.split},
            {"fraction", a.fraction},
            {"seed", a.seed},
            {"concat_flow", a.concat_flow},
            {"m_packets", a.m_packets}}},
          {"flows", flows.size()},
          {"unlabeled_flows", stats.unlabeled_flows},
          {"skipped_short", stats.skipped_short},
          {"classes", per_class},
          {"train", ds.train.size()},
          {"val", ds.val.size()},
          {"test", ds.test.size()}};
}

json cmd_finetune(const FinetuneArgs& a) {
  if (a.mode != "packet" && a.mode != "flow") throw UsageError("mode must be packet or flow");
  if (a.no_pretrain != a.checkpoint.empty())
    throw UsageError(a.no_pretrain ? "no-pretrain takes no checkpoint"
                                   : "finetune needs a checkpoint (or --no-pretrain)");

  SplitDataset ds;
  ds.train = read_dataset_tsv(a.train_tsv);
  if (!a.val_tsv.empty()) ds.val = read_dataset_tsv(a.val_tsv);
  ds.class_names = a.classes_json.empty() ? default_class_names(ds.train)
                                          : load_class_names(a.classes_json);
  for (const auto* split : {&ds.train, &ds.val})
    for (const auto& ex : *split)
      if (size_t(ex.class_id) >= ds.class_names.size())
        throw LabelOutOfRange("label " + std::to_string(ex.class_id) + " outside the " +
                              std::to_string(ds.class_names.size()) + " known classes");

  Model<float> model;
  if (a.no_pretrain) {
    model.cfg = preset_config(a.preset);
    model.init(a.seed);
  } else {
    LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    if (ck.meta.kind != "pretrain")
      throw Incompatible("checkpoint " + a.checkpoint + " is not a pre-training checkpoint");
    model = std::move(ck.model);
  }

  TrainConfig tc;
  tc.mode = a.mode == "flow" ? TrainMode::finetune_flow : TrainMode::finetune_packet;
  tc.batch_size = a.batch_size;
  tc.epochs = a.epochs;
  tc.learning_rate = a.learning_rate;
  tc.warmup_ratio = a.warmup_ratio;
  tc.head_dropout = a.head_dropout;
  tc.seed = a.seed;
  tc.max_len = resolve_max_len(a.max_len, model.cfg);
  tc.concat_flow = a.concat_flow;
  tc.concat_packets = a.m_packets;
  if (a.batch_size < 1) throw UsageError("batch size must be positive");
  if (a.epochs < 1) throw UsageError("epochs must be positive");

  FinetuneResult res = finetune(ds, model, tc);

  CheckpointMeta meta;
  meta.kind = "classifier";
  meta.class_names = ds.class_names;
  meta.concat_flow = a.concat_flow;
  meta.dataset_mode = a.mode;
  save_checkpoint(model, meta, nullptr, a.out_checkpoint);

  json epochs = json::array();
  for (const auto& em : res.epochs)
    epochs.push_back({{"epoch", em.epoch},
                      {"train_loss", em.train_loss},
                      {"val_macro_f1", em.val_macro_f1},
                      {"val_accuracy", em.val_accuracy}});
  return {{"command", "finetune"},
          {"config",
           {{"train", a.train_tsv},
            {"val", a.val_tsv},
            {"classes", a.classes_json},
            {"checkpoint", a.checkpoint},
            {"out", a.out_checkpoint},
            {"no_pretrain", a.no_pretrain},
            {"preset", a.preset},
            {"seed", a.seed},
            {"epochs", a.epochs},
            {"batch_size", a.batch_size},
            {"learning_rate", a.learning_rate},
            {"warmup_ratio", a.warmup_ratio},
            {"head_dropout", a.head_dropout},
            {"max_len", tc.max_len},
            {"mode", a.mode},
            {"concat_flow", a.concat_flow},
            {"m_packets", a.m_packets}}},
          {"train_examples", ds.train.size()},
          {"val_examples", ds.val.size()},
          {"classes_count", ds.class_names.size()},
          {"single_class_warning", res.single_class_warning},
          {"best_epoch", res.best_epoch},
          {"epochs", epochs}};
}

json cmd_eval(const EvalArgs& a) {
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  if (ck.meta.kind != "classifier" || !ck.model.w.cls_w.numel())
    throw UntrainedHead("checkpoint " + a.checkpoint + " carries no classification head");
  auto test = read_dataset_tsv(a.test_tsv);
  size_t K = ck.model.w.cls_w.cols();
  for (const auto& ex : test)
    if (size_t(ex.class_id) >= K)
      throw LabelOutOfRange("label " + std::to_string(ex.class_id) + " outside the " +
                            std::to_string(K) + " trained classes");
  int max_len = resolve_max_len(a.max_len, ck.model.cfg);
  int m_packets = ck.meta.concat_flow
                      ? int(ck.model.w.cls_w.rows() / size_t(ck.model.cfg.hidden))
                      : 5;
  MacroReport rep = evaluate(ck.model, test, int(K), max_len, ck.meta.concat_flow, m_packets);
  std::vector<std::string> names = ck.meta.class_names;
  if (names.size() != K) {
    names.clear();
    for (size_t c = 0; c < K; c++) names.push_back("class" + std::to_string(c));
  }
  return {{"command", "eval"},
          {"config",
           {{"checkpoint", a.checkpoint},
            {"test", a.test_tsv},
            {"max_len", max_len},
            {"mode", ck.meta.dataset_mode},
            {"concat_flow", ck.meta.concat_flow}}},
          {"test_examples", test.size()},
          {"metrics", report_json(rep, names)},
          {"formatted", format_report(rep, names)}};
}

json cmd_randomness(const RandomnessArgs& a) {
  if (a.inputs.empty()) throw UsageError("randomness needs at least one input");
  if (a.format != "auto" && a.format != "store" && a.format != "raw")
    throw UsageError("format must be auto, store or raw");

  const std::vector<std::string> known = {"monobit",        "block_frequency",
                                          "runs",           "longest_run",
                                          "cusum_forward",  "cusum_backward",
                                          "approximate_entropy", "serial"};
  std::vector<std::string> selected = a.tests.empty() ? known : a.tests;
  for (const auto& t : selected)
    if (std::find(known.begin(), known.end(), t) == known.end())
      throw UsageError("unknown test \"" + t + "\"");

  struct Group {
    std::string name;
    BitSequence bits;
  };
  std::vector<Group> groups;
  for (const auto& path : a.inputs) {
    bool as_store = a.format == "store" ||
                    (a.format == "auto" && path.ends_with(".jsonl"));
    bytes_t bytes;
    if (as_store) {
      for (const auto& pkt : read_store(path))
        bytes.insert(bytes.end(), pkt.datagram.begin(), pkt.datagram.end());
    } else {
      std::string raw = read_file(path);
      bytes.assign(raw.begin(), raw.end());
    }
    if (bytes.empty()) throw EmptyInput(path + " holds no bytes to test");
    Group g;
    g.name = std::filesystem::path(path).filename().string();
    g.bits = bits_from_bytes(bytes);
    if (a.max_bits && g.bits.n() > a.max_bits) g.bits.bits.resize(a.max_bits);
    groups.push_back(std::move(g));
  }

  auto run_one = [](const std::string& name, const BitSequence& seq) -> TestResult {
    if (name == "monobit") return monobit(seq);
    if (name == "block_frequency") return block_frequency(seq);
    if (name == "runs") return runs(seq);
    if (name == "longest_run") return longest_run(seq);
    if (name == "cusum_forward") return cumulative_sums(seq, false);
    if (name == "cusum_backward") return cumulative_sums(seq, true);
    if (name == "approximate_entropy") return approximate_entropy(seq);
    return serial(seq);
  };

  json rows = json::array();
  for (const auto& t : selected) {
    json p1 = json::array(), p2 = json::array();
    bool has_p2 = false;
    for (const auto& g : groups) {
      try {
        TestResult r = run_one(t, g.bits);
        p1.push_back(r.p_value);
        if (r.p_value2) {
          p2.push_back(*r.p_value2);
          has_p2 = true;
        } else {
          p2.push_back(nullptr);
        }
      } catch (const Error&) {
        p1.push_back(nullptr);  // not applicable at this length
        p2.push_back(nullptr);
      }
    }
    json row = {{"test", t}, {"p_values", p1}};
    if (has_p2) row["p_values_2"] = p2;
    rows.push_back(row);
  }

  json group_info = json::array();
  for (const auto& g : groups) group_info.push_back({{"input", g.name}, {"bits", g.bits.n()}});
  json rep = {{"command", "randomness"},
              {"config",
               {{"inputs", a.inputs},
                {"tests", selected},
                {"format", a.format},
                {"max_bits", a.max_bits},
                {"out", a.out_table}}},
              {"groups", group_info},
              {"results", rows}};
  std::string table = randomness_table(rep);
  rep["table"] = table;
  if (!a.out_table.empty()) atomic_write_file(a.out_table, table);
  return rep;
}

std::string randomness_table(const json& report) {
  const auto& groups = report.at("groups");
  const auto& rows = report.at("results");
  size_t name_w = 4;
  for (const auto& r : rows) {
    size_t w = r.at("test").get<std::string>().size() + 4;  // room for " (2)"
    name_w = std::max(name_w, w);
  }
  std::vector<size_t> col_w;
  std::string head(name_w, ' ');
  head.replace(0, 4, "test");
  for (const auto& g : groups) {
    std::string n = g.at("input").get<std::string>();
    size_t w = std::max<size_t>(n.size(), 8);
    col_w.push_back(w);
    head += "  " + std::string(w - n.size(), ' ') + n;
  }
  std::string out = head + "\n";
  char buf[32];
  auto emit = [&](const std::string& label, const json& ps) {
    std::string line = label + std::string(name_w - label.size(), ' ');
    for (size_t c = 0; c < ps.size(); c++) {
      std::string cell;
      if (ps[c].is_null()) {
        cell = "-";
      } else {
        snprintf(buf, sizeof buf, "%.6f", ps[c].get<double>());
        cell = buf;
      }
      line += "  " + std::string(col_w[c] > cell.size() ? col_w[c] - cell.size() : 0, ' ') + cell;
    }
    out += line + "\n";
  };
  for (const auto& r : rows) {
    emit(r.at("test").get<std::string>(), r.at("p_values"));
    if (r.contains("p_values_2")) emit(r.at("test").get<std::string>() + " (2)", r.at("p_values_2"));
  }
  return out;
}

json cmd_synth(const SynthArgs& a) {
  if (a.out_pcap.empty()) throw UsageError("synth needs an output capture path");
  size_t frames = write_synthetic_capture(a.out_pcap, a.cfg);
  if (!a.out_labels.empty()) atomic_write_file(a.out_labels, synthetic_label_map_json(a.cfg));
  return {{"command", "synth"},
          {"config",
           {{"out", a.out_pcap},
            {"labels", a.out_labels},
            {"classes", a.cfg.classes},
            {"flows_per_class", a.cfg.flows_per_class},
            {"min_packets", a.cfg.min_packets},
            {"max_packets", a.cfg.max_packets},
            {"min_payload", a.cfg.min_payload},
            {"max_payload", a.cfg.max_payload},
            {"noise", a.cfg.noise},
            {"base_port", a.cfg.base_port},
            {"seed", a.cfg.seed}}},
          {"frames", frames}};
}

}  // namespace etbert
