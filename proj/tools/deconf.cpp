// deconf: mine label-correlated distractor tokens with shallow trees, train
// deconfounded hierarchical attention classifiers, and score gradient-based
// rationales against gold paragraph annotations.

#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "deconf/errors.hpp"
#include "deconf/pipeline.hpp"

using namespace deconf;
using nlohmann::json;

namespace {

void error_line(const std::string& kind, const std::string& message) {
  json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
}

model::ModelConfig load_config(const std::string& config_path, const std::string& task,
                               const std::string& variant, const std::string& preset) {
  model::ModelConfig cfg;
  stats::Task t = stats::parse_task(task);
  if (!config_path.empty()) {
    cfg = model::config_from_json_file(config_path);
    cfg.task = t;  // CLI flags override the file for task/variant
  } else if (preset == "full") {
    cfg = model::ModelConfig::full_preset(t);
  } else {
    cfg = model::ModelConfig::desk_preset(t);
  }
  cfg.task = t;
  cfg.variant = model::parse_variant(variant);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"expert-informed deconfounding for text-outcome classification"};
  app.require_subcommand(1);

  std::string corpus_path, config_path, lexicon_path, out_dir, task = "J";
  std::string variant = "baseline", split = "test", article, preset = "desk";
  std::string registry_path, mine_dir, reference;
  std::vector<std::string> run_dirs;
  std::uint64_t seed = 0;
  bool force = false;
  std::size_t parallel = 1, steps = 128, limit = 16, max_iters = 10, depth = 3;
  double z_min = 2.0;
  corpus::SynthSpec synth;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_flag("--force", force, "overwrite an existing run directory");
  };

  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  synth_cmd->add_option("--n-docs", synth.n_docs);
  synth_cmd->add_option("--n-articles", synth.n_articles);
  synth_cmd->add_option("--genuine-vocab", synth.genuine_vocab);
  synth_cmd->add_option("--decoy-vocab", synth.decoy_vocab);
  synth_cmd->add_option("--filler-vocab", synth.filler_vocab);
  synth_cmd->add_option("--decoy-corr", synth.decoy_label_corr,
                        "P(decoy token | positive label)");
  synth_cmd->add_option("--state-skew", synth.state_skew);
  synth_cmd->add_option("--length-gap", synth.length_gap);
  synth_cmd->add_flag("--para-numbers", synth.paragraph_number_offset,
                      "prepend label-offset paragraph numbers");
  synth_cmd->add_option("--n-states", synth.n_states);
  synth_cmd->add_option("--seed", synth.seed);
  add_common(synth_cmd);

  CLI::App* ingest_cmd = app.add_subcommand("ingest", "validate and store a corpus");
  ingest_cmd->add_option("--corpus", corpus_path)->required();
  ingest_cmd->add_option("--registry", registry_path, "article registry file");
  add_common(ingest_cmd);

  CLI::App* mine_cmd =
      app.add_subcommand("mine", "mine distractor candidates with iterated trees");
  mine_cmd->add_option("--corpus", corpus_path)->required();
  mine_cmd->add_option("--task", task, "J, A, B or AB");
  mine_cmd->add_option("--max-iters", max_iters);
  mine_cmd->add_option("--depth", depth);
  mine_cmd->add_option("--z-min", z_min);
  mine_cmd->add_option("--seed", seed);
  mine_cmd->add_option("--parallel", parallel);
  add_common(mine_cmd);

  CLI::App* review_cmd =
      app.add_subcommand("review-template", "emit the expert review TSV for a mine run");
  review_cmd->add_option("--mine-dir", mine_dir)->required();
  add_common(review_cmd);

  CLI::App* train_cmd = app.add_subcommand("train", "train a model variant");
  train_cmd->add_option("--corpus", corpus_path)->required();
  train_cmd->add_option("--config", config_path, "model config JSON");
  train_cmd->add_option("--preset", preset, "desk or full (when no --config)");
  train_cmd->add_option("--task", task);
  train_cmd->add_option("--variant", variant,
                        "baseline|paraRem|gradCou|gradLen|gradVocab|gradAll");
  train_cmd->add_option("--lexicon", lexicon_path, "imported review TSV");
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--parallel", parallel, "concurrent grid points");
  add_common(train_cmd);

  CLI::App* attr_cmd = app.add_subcommand("attribute", "integrated-gradients dumps + HTML");
  attr_cmd->add_option("--checkpoint", config_path)->required();
  attr_cmd->add_option("--corpus", corpus_path)->required();
  attr_cmd->add_option("--split", split);
  attr_cmd->add_option("--steps", steps);
  attr_cmd->add_option("--limit", limit);
  attr_cmd->add_option("--article", article);
  attr_cmd->add_option("--parallel", parallel);
  add_common(attr_cmd);

  CLI::App* align_cmd = app.add_subcommand("align", "precision@Oracle alignment report");
  align_cmd->add_option("--checkpoint", config_path)->required();
  align_cmd->add_option("--corpus", corpus_path)->required();
  align_cmd->add_option("--split", split);
  align_cmd->add_option("--steps", steps);
  align_cmd->add_option("--limit", limit, "0 = all rationale documents");
  align_cmd->add_option("--article", article);
  add_common(align_cmd);

  CLI::App* eval_cmd = app.add_subcommand("eval", "prediction metrics report");
  eval_cmd->add_option("--checkpoint", config_path)->required();
  eval_cmd->add_option("--corpus", corpus_path)->required();
  eval_cmd->add_option("--split", split);
  eval_cmd->add_option("--align-report", lexicon_path, "alignment.json to embed");
  add_common(eval_cmd);

  CLI::App* report_cmd = app.add_subcommand("report", "consolidated variant comparison");
  report_cmd->add_option("--runs", run_dirs, "stage directories to consolidate")
      ->required()
      ->delimiter(',');
  report_cmd->add_option("--reference", reference, "reference variant for t-tests");
  add_common(report_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    error_line("usage", e.what());
    return 1;
  }

  try {
    if (synth_cmd->parsed()) {
      auto r = pipeline::stage_synth(synth, out_dir, force);
      std::cout << "wrote " << r.corpus_path << std::endl;
    } else if (ingest_cmd->parsed()) {
      std::optional<std::string> reg;
      if (!registry_path.empty()) reg = registry_path;
      auto r = pipeline::stage_ingest(corpus_path, reg, out_dir, force);
      std::cout << "ingested " << r.n_docs << " documents -> " << r.store_path << std::endl;
    } else if (mine_cmd->parsed()) {
      pipeline::MineOptions opt;
      opt.task = stats::parse_task(task);
      opt.max_iters = max_iters;
      opt.depth = depth;
      opt.z_min = z_min;
      opt.parallel = parallel;
      opt.seed = seed;
      auto r = pipeline::stage_mine(corpus_path, opt, out_dir, force);
      std::cout << "mined " << r.runs.size() << " view(s) -> " << r.runs_path << std::endl;
    } else if (review_cmd->parsed()) {
      std::string path = pipeline::stage_review_template(mine_dir, out_dir, force);
      std::cout << "wrote " << path << std::endl;
    } else if (train_cmd->parsed()) {
      pipeline::TrainOptions opt;
      opt.config = load_config(config_path, task, variant, preset);
      if (!lexicon_path.empty()) opt.lexicon_path = lexicon_path;
      opt.seed = seed;
      opt.parallel = parallel;
      auto r = pipeline::stage_train(corpus_path, opt, out_dir, force);
      std::cout << "best dev F1 " << r.best_dev_f1 << " at lr " << r.best_lr << " -> "
                << r.checkpoint_path << std::endl;
    } else if (attr_cmd->parsed()) {
      pipeline::AttributeOptions opt;
      opt.split = split;
      opt.steps = steps;
      opt.limit = limit;
      opt.parallel = parallel;
      opt.article = article;
      std::string path = pipeline::stage_attribute(config_path, corpus_path, opt, out_dir, force);
      std::cout << "wrote " << path << std::endl;
    } else if (align_cmd->parsed()) {
      pipeline::AlignOptions opt;
      opt.split = split;
      opt.steps = steps;
      opt.limit = limit;
      opt.article = article;
      auto rep = pipeline::stage_align(config_path, corpus_path, opt, out_dir, force);
      std::cout << "mean precision@Oracle " << rep.mean << " (se " << rep.standard_error
                << ", n=" << rep.n << ")" << std::endl;
    } else if (eval_cmd->parsed()) {
      pipeline::EvalOptions opt;
      opt.split = split;
      if (!lexicon_path.empty()) opt.align_report_path = lexicon_path;
      std::string path = pipeline::stage_eval(config_path, corpus_path, opt, out_dir, force);
      std::cout << "wrote " << path << std::endl;
    } else if (report_cmd->parsed()) {
      pipeline::ReportOptions opt;
      opt.run_dirs = run_dirs;
      opt.reference_variant = reference;
      std::string path = pipeline::stage_report(opt, out_dir, force);
      std::cout << "wrote " << path << std::endl;
    }
  } catch (const ValidationError& e) {
    error_line("validation", e.what());
    return 2;
  } catch (const std::exception& e) {
    error_line("runtime", e.what());
    return 3;
  }
  return 0;
}
