#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "etbert/synth.hpp"

namespace etbert {

// Each command runs a pipeline stage, writes its primary outputs atomically
// and returns the run report (the resolved configuration plus counters).

struct IngestArgs {
  std::vector<std::string> captures;
  std::string out_store;
};
nlohmann::ordered_json cmd_ingest(const IngestArgs& a);

struct CorpusArgs {
  std::string store;
  std::string out_corpus;
  uint64_t seed = 1;
  std::string pairs_from = "burst";  // or "adjacent"
};
nlohmann::ordered_json cmd_corpus(const CorpusArgs& a);

struct PretrainArgs {
  std::string corpus;
  std::string out_checkpoint;
  std::string resume;  // checkpoint to continue from
  std::string preset = "desk";
  uint64_t seed = 1;
  int64_t steps = 200;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double warmup_ratio = 0.1;
  int max_len = 0;  // 0 = model max positions
  bool save_optimizer = true;
};
nlohmann::ordered_json cmd_pretrain(const PretrainArgs& a);

struct DatasetArgs {
  std::string store;
  std::string label_map;
  std::string out_prefix;  // writes <prefix>.{train,val,test}.tsv + <prefix>.classes.json
  std::string mode = "packet";
  size_t cap_flows = 500;
  size_t cap_packets = 5000;
  std::string split = "8:1:1";
  double fraction = 1.0;
  uint64_t seed = 1;
  bool concat_flow = false;
  int m_packets = 5;
};
nlohmann::ordered_json cmd_dataset(const DatasetArgs& a);

struct FinetuneArgs {
  std::string train_tsv;
  std::string val_tsv;       // optional
  std::string classes_json;  // optional class-name list
  std::string checkpoint;    // pre-trained encoder; empty with no_pretrain
  std::string out_checkpoint;
  bool no_pretrain = false;
  std::string preset = "desk";  // used only with no_pretrain
  uint64_t seed = 1;
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double warmup_ratio = 0.1;
  double head_dropout = 0.5;
  int max_len = 0;
  std::string mode = "packet";
  bool concat_flow = false;
  int m_packets = 5;
};
nlohmann::ordered_json cmd_finetune(const FinetuneArgs& a);

struct EvalArgs {
  std::string checkpoint;
  std::string test_tsv;
  int max_len = 0;
};
nlohmann::ordered_json cmd_eval(const EvalArgs& a);

struct RandomnessArgs {
  std::vector<std::string> inputs;   // packet stores (.jsonl) or raw byte files
  std::vector<std::string> tests;    // empty = all
  std::string format = "auto";       // auto | store | raw
  size_t max_bits = 0;               // 0 = no limit
  std::string out_table;             // optional text table copy
};
nlohmann::ordered_json cmd_randomness(const RandomnessArgs& a);

struct SynthArgs {
  std::string out_pcap;
  std::string out_labels;
  SynthConfig cfg;
};
nlohmann::ordered_json cmd_synth(const SynthArgs& a);

// Text rendering of the randomness table (rows = tests, columns = inputs).
std::string randomness_table(const nlohmann::ordered_json& report);

}  // namespace etbert
