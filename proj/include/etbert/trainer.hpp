#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "etbert/corpus.hpp"
#include "etbert/metrics.hpp"
#include "etbert/model.hpp"
#include "etbert/optimizer.hpp"

namespace etbert {

enum class TrainMode { pretrain, finetune_packet, finetune_flow };

struct TrainConfig {
  TrainMode mode = TrainMode::pretrain;
  int batch_size = 32;
  int64_t steps = 0;       // pretrain length
  int epochs = 10;         // finetune length
  double learning_rate = 2e-5;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  double head_dropout = 0.5;  // classifier-head dropout while fine-tuning
  uint64_t seed = 1;
  int max_len = 128;
  bool concat_flow = false;  // ablation: per-packet encoding, pooled concat
  int concat_packets = 5;    // M
};

struct StepLoss {
  double mbm = 0, sbp = 0, total = 0, lr = 0;
};

struct PretrainResult {
  std::vector<StepLoss> history;
};

// Runs steps start_step+1 .. cfg.steps. All random streams are derived from
// (cfg.seed, absolute step position), so a resumed run continues exactly as
// the uninterrupted one would.
PretrainResult pretrain(const std::vector<PretrainRecord>& corpus, Model<float>& model,
                        AdamW<float>& opt, const TrainConfig& cfg, int64_t start_step = 0);

struct ClassExample {
  int class_id = 0;
  std::vector<TokenId> tokens;  // bi-gram ids; SEP marks packet groups in concat mode
};

struct SplitDataset {
  std::vector<ClassExample> train, val, test;
  std::vector<std::string> class_names;
};

struct DatasetStats {
  std::vector<size_t> collected, capped;  // per class
  uint64_t skipped_short = 0;             // packets/flows too short to tokenize
  uint64_t unlabeled_flows = 0;
};

struct SplitRatio {
  int train = 8, val = 1, test = 1;

  static SplitRatio parse(const std::string& s);  // "8:1:1"
};

// Per-class shuffle under the seed, cap, ratio split (validation and test
// take floor(n * part / total) each, integer arithmetic), then the few-shot
// fraction ceil(f * n_train) applied to the training split only.
SplitDataset build_finetune_dataset(const std::vector<Flow>& flows,
                                    const std::vector<int>& flow_class,
                                    const std::vector<std::string>& class_names, TrainMode mode,
                                    size_t cap, double fraction, uint64_t seed, bool concat_flow,
                                    int m_packets, SplitRatio ratio = {},
                                    DatasetStats* stats = nullptr);

void write_dataset_tsv(const std::vector<ClassExample>& examples, const std::string& path);
std::vector<ClassExample> read_dataset_tsv(const std::string& path);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double val_macro_f1 = 0;
  double val_accuracy = 0;
};

struct FinetuneResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  bool single_class_warning = false;
};

// Attaches a fresh classification head, trains all parameters, and leaves the
// model at the epoch with the best validation macro-F1 (ties keep the earlier
// epoch; an empty validation split keeps the final epoch).
FinetuneResult finetune(const SplitDataset& ds, Model<float>& model, const TrainConfig& cfg);

struct Prediction {
  int class_id = 0;
  std::vector<double> probs;
};

std::vector<Prediction> predict(const Model<float>& model,
                                const std::vector<ClassExample>& examples, int max_len,
                                bool concat_flow = false, int m_packets = 5);

MacroReport evaluate(const Model<float>& model, const std::vector<ClassExample>& examples,
                     int num_classes, int max_len, bool concat_flow = false, int m_packets = 5);

}  // namespace etbert
