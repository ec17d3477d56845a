#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "etbert/commands.hpp"
#include "etbert/common.hpp"
#include "etbert/errors.hpp"

namespace {

using etbert::ExitCode;

constexpr const char* kExitCodeHelp =
    "Exit codes: 0 ok, 1 usage, 2 io, 3 malformed input, 4 incompatible inputs, "
    "5 insufficient data, 70 internal error.";

std::string g_report_path;

int emit(const nlohmann::ordered_json& report) {
  std::string text = report.dump(2) + "\n";
  fputs(text.c_str(), stdout);
  if (!g_report_path.empty()) etbert::atomic_write_file(g_report_path, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string("etbert: BURST-token traffic encoder pipeline.\n") + kExitCodeHelp};
  app.require_subcommand(1);
  app.add_option("--report", g_report_path, "also write the JSON run report to this file");

  etbert::IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "captures -> clean packet store");
  c_ingest->add_option("captures", ingest.captures, "classic capture files")->required();
  c_ingest->add_option("-o,--out", ingest.out_store, "output store (JSON lines)")->required();

  etbert::CorpusArgs corpus;
  auto* c_corpus = app.add_subcommand("corpus", "packet store -> pre-training pair corpus");
  c_corpus->add_option("store", corpus.store, "packet store")->required();
  c_corpus->add_option("-o,--out", corpus.out_corpus, "output corpus (JSON lines)")->required();
  c_corpus->add_option("--seed", corpus.seed, "run seed");
  c_corpus->add_option("--pairs-from", corpus.pairs_from, "burst | adjacent (ablation)");

  etbert::PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "corpus -> pre-trained encoder checkpoint");
  c_pre->add_option("corpus", pre.corpus, "pair corpus")->required();
  c_pre->add_option("-o,--out", pre.out_checkpoint, "output checkpoint")->required();
  c_pre->add_option("--resume", pre.resume, "continue from this checkpoint");
  c_pre->add_option("--preset", pre.preset, "desk | paper");
  c_pre->add_option("--seed", pre.seed, "run seed");
  c_pre->add_option("--steps", pre.steps, "total optimizer steps");
  c_pre->add_option("--batch-size", pre.batch_size, "examples per step");
  c_pre->add_option("--lr", pre.learning_rate, "peak learning rate");
  c_pre->add_option("--warmup", pre.warmup_ratio, "warmup fraction of total steps");
  c_pre->add_option("--max-len", pre.max_len, "sequence length (0 = model maximum)");
  bool no_opt_state = false;
  c_pre->add_flag("--no-optimizer-state", no_opt_state,
                  "drop optimizer state from the checkpoint");

  etbert::DatasetArgs ds;
  auto* c_ds = app.add_subcommand("dataset", "labelled store -> train/val/test TSVs");
  c_ds->add_option("store", ds.store, "packet store")->required();
  c_ds->add_option("--labels", ds.label_map, "label map JSON")->required();
  c_ds->add_option("-o,--out", ds.out_prefix, "output path prefix")->required();
  c_ds->add_option("--mode", ds.mode, "packet | flow");
  c_ds->add_option("--cap-flows", ds.cap_flows, "per-class flow cap (flow mode)");
  c_ds->add_option("--cap-packets", ds.cap_packets, "per-class packet cap (packet mode)");
  c_ds->add_option("--split", ds.split, "train:val:test ratio");
  c_ds->add_option("--fraction", ds.fraction, "few-shot fraction of the training split");
  c_ds->add_option("--seed", ds.seed, "run seed");
  c_ds->add_flag("--concat-flow", ds.concat_flow, "keep per-packet groups (ablation)");
  c_ds->add_option("--m-packets", ds.m_packets, "packets per flow example");

  etbert::FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "TSVs + checkpoint -> classifier checkpoint");
  c_ft->add_option("train", ft.train_tsv, "training TSV")->required();
  c_ft->add_option("--val", ft.val_tsv, "validation TSV");
  c_ft->add_option("--classes", ft.classes_json, "class-name JSON array");
  c_ft->add_option("--checkpoint", ft.checkpoint, "pre-trained encoder checkpoint");
  c_ft->add_option("-o,--out", ft.out_checkpoint, "output classifier checkpoint")->required();
  c_ft->add_flag("--no-pretrain", ft.no_pretrain, "train from random weights (ablation)");
  c_ft->add_option("--preset", ft.preset, "desk | paper (with --no-pretrain)");
  c_ft->add_option("--seed", ft.seed, "run seed");
  c_ft->add_option("--epochs", ft.epochs, "training epochs");
  c_ft->add_option("--batch-size", ft.batch_size, "examples per step");
  c_ft->add_option("--lr", ft.learning_rate, "peak learning rate");
  c_ft->add_option("--warmup", ft.warmup_ratio, "warmup fraction of total steps");
  c_ft->add_option("--head-dropout", ft.head_dropout, "classifier-head dropout rate");
  c_ft->add_option("--max-len", ft.max_len, "sequence length (0 = model maximum)");
  c_ft->add_option("--mode", ft.mode, "packet | flow (recorded in the checkpoint)");
  c_ft->add_flag("--concat-flow", ft.concat_flow, "per-packet encoding, pooled concat (ablation)");
  c_ft->add_option("--m-packets", ft.m_packets, "packet groups per flow example");

  etbert::EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "classifier checkpoint + test TSV -> macro report");
  c_ev->add_option("checkpoint", ev.checkpoint, "classifier checkpoint")->required();
  c_ev->add_option("test", ev.test_tsv, "test TSV")->required();
  c_ev->add_option("--max-len", ev.max_len, "sequence length (0 = model maximum)");

  etbert::RandomnessArgs rnd;
  auto* c_rnd = app.add_subcommand("randomness", "byte streams -> statistical test p-values");
  c_rnd->add_option("inputs", rnd.inputs, "packet stores (.jsonl) or raw byte files")->required();
  c_rnd->add_option("--tests", rnd.tests, "subset of tests to run");
  c_rnd->add_option("--format", rnd.format, "auto | store | raw");
  c_rnd->add_option("--max-bits", rnd.max_bits, "truncate every input to this many bits");
  c_rnd->add_option("-o,--out", rnd.out_table, "write the text table here too");

  etbert::SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "generate a labelled synthetic capture");
  c_syn->add_option("-o,--out", syn.out_pcap, "output capture file")->required();
  c_syn->add_option("--labels-out", syn.out_labels, "output label map JSON");
  c_syn->add_option("--classes", syn.cfg.classes, "traffic classes");
  c_syn->add_option("--flows-per-class", syn.cfg.flows_per_class, "flows per class");
  c_syn->add_option("--min-packets", syn.cfg.min_packets, "packets per flow, lower bound");
  c_syn->add_option("--max-packets", syn.cfg.max_packets, "packets per flow, upper bound");
  c_syn->add_option("--min-payload", syn.cfg.min_payload, "payload bytes, lower bound");
  c_syn->add_option("--max-payload", syn.cfg.max_payload, "payload bytes, upper bound");
  c_syn->add_option("--noise", syn.cfg.noise, "uniform-byte noise rate");
  c_syn->add_option("--base-port", syn.cfg.base_port, "server port of class 0");
  c_syn->add_option("--seed", syn.cfg.seed, "run seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? int(ExitCode::usage) : 0;
  }
  pre.save_optimizer = !no_opt_state;

  try {
    if (c_ingest->parsed()) return emit(etbert::cmd_ingest(ingest));
    if (c_corpus->parsed()) return emit(etbert::cmd_corpus(corpus));
    if (c_pre->parsed()) return emit(etbert::cmd_pretrain(pre));
    if (c_ds->parsed()) return emit(etbert::cmd_dataset(ds));
    if (c_ft->parsed()) return emit(etbert::cmd_finetune(ft));
    if (c_ev->parsed()) return emit(etbert::cmd_eval(ev));
    if (c_rnd->parsed()) return emit(etbert::cmd_randomness(rnd));
    if (c_syn->parsed()) return emit(etbert::cmd_synth(syn));
  } catch (const etbert::Error& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return int(e.code());
  } catch (const std::exception& e) {
    fprintf(stderr, "internal error: %s\n", e.what());
    return int(ExitCode::internal);
  }
  fprintf(stderr, "error: no subcommand\n");
  return int(ExitCode::usage);
}
