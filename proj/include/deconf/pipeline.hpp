#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deconf/attribution.hpp"
#include "deconf/corpus.hpp"
#include "deconf/model.hpp"
#include "deconf/treeminer.hpp"

namespace deconf::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

std::string bytes_hash(const std::string& bytes);  // fnv1a-64, hex
std::string file_hash(const std::string& path);

// Run manifest: every stage directory holds exactly one manifest.json with
// the command, seed, input hashes and output hashes. `verify_outputs`
// recomputes the output hashes and fails on drift.
struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> input_hashes;
  std::map<std::string, std::string> output_hashes;  // path relative to the dir
  std::string tool_version = kToolVersion;
};

void write_manifest(Manifest m, const std::string& dir);
Manifest read_manifest(const std::string& dir);
void verify_outputs(const std::string& dir);

// Refuses to reuse a directory that already holds a manifest unless forced.
void prepare_out_dir(const std::string& dir, bool force);

// Deterministic content-addressed splits: assignment depends only on the
// doc_id hash, so every variant and seed sees the same partition.
struct Splits {
  corpus::Corpus train, dev, test;
};

Splits split_corpus(const corpus::Corpus& c, double train_frac = 0.70,
                    double dev_frac = 0.15);

const corpus::Corpus& pick_split(const Splits& s, const std::string& name);

// ---- stages ---------------------------------------------------------------

struct SynthResult {
  std::string corpus_path;
};
SynthResult stage_synth(const corpus::SynthSpec& spec, const std::string& out_dir, bool force);

struct IngestResult {
  std::size_t n_docs = 0;
  std::string store_path;
};
IngestResult stage_ingest(const std::string& corpus_path,
                          const std::optional<std::string>& registry_path,
                          const std::string& out_dir, bool force);

struct MineOptions {
  stats::Task task = stats::Task::J;
  std::size_t max_iters = 10;
  std::size_t depth = 3;
  double z_min = 2.0;
  std::size_t parallel = 1;
  std::uint64_t seed = 0;
};

struct MineResult {
  std::vector<treeminer::MiningRun> runs;
  std::string runs_path;
  std::string review_template_path;
};
MineResult stage_mine(const std::string& corpus_path, const MineOptions& opt,
                      const std::string& out_dir, bool force);

// regenerates the expert-facing review TSV from a mine directory
std::string stage_review_template(const std::string& mine_dir, const std::string& out_dir,
                                  bool force);

struct TrainOptions {
  model::ModelConfig config;
  std::optional<std::string> lexicon_path;
  std::uint64_t seed = 0;
  std::size_t parallel = 1;
};

struct TrainStageResult {
  std::string checkpoint_path;
  double best_dev_f1 = 0.0;
  double best_lr = 0.0;
};
TrainStageResult stage_train(const std::string& corpus_path, const TrainOptions& opt,
                             const std::string& out_dir, bool force);

struct AttributeOptions {
  std::string split = "test";
  std::size_t steps = 128;
  std::size_t limit = 16;  // documents to attribute
  std::size_t parallel = 1;
  std::string article;  // attribution target for article tasks; empty = argmax
};
std::string stage_attribute(const std::string& checkpoint_path, const std::string& corpus_path,
                            const AttributeOptions& opt, const std::string& out_dir, bool force);

struct AlignOptions {
  std::string split = "test";
  std::size_t steps = 128;
  std::size_t limit = 0;  // 0 = all documents with rationales
  std::string article;
};
attribution::AlignmentReport stage_align(const std::string& checkpoint_path,
                                         const std::string& corpus_path, const AlignOptions& opt,
                                         const std::string& out_dir, bool force);

struct EvalOptions {
  std::string split = "test";
  std::optional<std::string> align_report_path;  // embedded into the metrics report
};
std::string stage_eval(const std::string& checkpoint_path, const std::string& corpus_path,
                       const EvalOptions& opt, const std::string& out_dir, bool force);

struct ReportOptions {
  std::vector<std::string> run_dirs;  // each holding metrics.json / alignment.json
  std::string reference_variant;      // empty = paraRem if present, else baseline
};
std::string stage_report(const ReportOptions& opt, const std::string& out_dir, bool force);

}  // namespace deconf::pipeline
