#include "deconf/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "deconf/errors.hpp"
#include "deconf/evalmetrics.hpp"
#include "deconf/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace deconf::pipeline {

std::string bytes_hash(const std::string& bytes) {
  std::uint64_t h = diffcore::hash64(bytes);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot hash missing file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return bytes_hash(ss.str());
}

void write_manifest(Manifest m, const std::string& dir) {
  json j;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["input_hashes"] = m.input_hashes;
  j["output_hashes"] = m.output_hashes;
  j["tool_version"] = m.tool_version;
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw ValidationError("cannot write manifest in " + dir);
  out << j.dump(2) << "\n";
}

Manifest read_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw ValidationError("missing manifest.json in " + dir);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("invalid manifest in " + dir + ": " + e.what());
  }
  Manifest m;
  m.command = j.value("command", std::string());
  m.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("input_hashes"))
    m.input_hashes = j["input_hashes"].get<std::map<std::string, std::string>>();
  if (j.contains("output_hashes"))
    m.output_hashes = j["output_hashes"].get<std::map<std::string, std::string>>();
  m.tool_version = j.value("tool_version", std::string());
  return m;
}

void verify_outputs(const std::string& dir) {
  Manifest m = read_manifest(dir);
  for (const auto& [rel, expected] : m.output_hashes) {
    std::string actual = file_hash((fs::path(dir) / rel).string());
    if (actual != expected)
      throw ValidationError("artifact hash mismatch in " + dir + " for '" + rel +
                            "': manifest " + expected + ", file " + actual);
  }
}

void prepare_out_dir(const std::string& dir, bool force) {
  fs::path p(dir);
  if (fs::exists(p / "manifest.json") && !force)
    throw ValidationError("output directory " + dir +
                          " already holds a run (use --force to overwrite)");
  fs::create_directories(p);
}

Splits split_corpus(const corpus::Corpus& c, double train_frac, double dev_frac) {
  if (train_frac <= 0 || dev_frac < 0 || train_frac + dev_frac >= 1.0)
    throw ValidationError("split_corpus: bad fractions");
  Splits s;
  s.train.article_registry = s.dev.article_registry = s.test.article_registry =
      c.article_registry;
  for (const auto& d : c.docs) {
    double u = static_cast<double>(diffcore::hash64(d.doc_id + ":split") % 1000000) / 1e6;
    if (u < train_frac) s.train.docs.push_back(d);
    else if (u < train_frac + dev_frac) s.dev.docs.push_back(d);
    else s.test.docs.push_back(d);
  }
  return s;
}

const corpus::Corpus& pick_split(const Splits& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "dev") return s.dev;
  if (name == "test") return s.test;
  throw ValidationError("unknown split '" + name + "' (expected train, dev or test)");
}

SynthResult stage_synth(const corpus::SynthSpec& spec, const std::string& out_dir, bool force) {
  prepare_out_dir(out_dir, force);
  corpus::Corpus c = corpus::synthesize_corpus(spec);
  std::string path = (fs::path(out_dir) / "corpus.jsonl").string();
  corpus::export_corpus(c, path);

  json sj;
  sj["n_docs"] = spec.n_docs;
  sj["n_articles"] = spec.n_articles;
  sj["genuine_vocab"] = spec.genuine_vocab;
  sj["decoy_vocab"] = spec.decoy_vocab;
  sj["filler_vocab"] = spec.filler_vocab;
  sj["decoy_label_corr"] = spec.decoy_label_corr;
  sj["state_skew"] = spec.state_skew;
  sj["length_gap"] = spec.length_gap;
  sj["paragraph_number_offset"] = spec.paragraph_number_offset;
  sj["n_states"] = spec.n_states;
  sj["seed"] = spec.seed;
  std::string spec_path = (fs::path(out_dir) / "synth_spec.json").string();
  std::ofstream(spec_path) << sj.dump(2) << "\n";

  Manifest m;
  m.command = "synth";
  m.seed = spec.seed;
  m.output_hashes["corpus.jsonl"] = file_hash(path);
  m.output_hashes["synth_spec.json"] = file_hash(spec_path);
  write_manifest(std::move(m), out_dir);
  return {path};
}

IngestResult stage_ingest(const std::string& corpus_path,
                          const std::optional<std::string>& registry_path,
                          const std::string& out_dir, bool force) {
  prepare_out_dir(out_dir, force);
  auto registry = registry_path ? corpus::load_article_registry(*registry_path)
                                : corpus::default_article_registry();
  corpus::Corpus c = corpus::ingest_corpus(corpus_path, registry);
  std::string store = (fs::path(out_dir) / "corpus.jsonl").string();
  corpus::export_corpus(c, store);

  Manifest m;
  m.command = "ingest";
  m.input_hashes["corpus"] = file_hash(corpus_path);
  if (registry_path) m.input_hashes["registry"] = file_hash(*registry_path);
  m.output_hashes["corpus.jsonl"] = file_hash(store);
  write_manifest(std::move(m), out_dir);
  return {c.docs.size(), store};
}

namespace {

json run_to_json(const treeminer::MiningRun& run) {
  json j;
  j["view"] = run.view.name();
  j["task"] = stats::task_name(run.view.task);
  j["article"] = run.view.article;
  j["z_min"] = run.z_min;
  j["max_depth"] = run.max_depth;
  j["n_candidates"] = run.candidate_vocabulary.size();
  j["token_z"] = run.token_z;
  json iters = json::array();
  for (const auto& it : run.iterations) {
    json ij;
    ij["iteration"] = it.iteration;
    ij["accuracy"] = it.accuracy;
    ij["macro_f1"] = it.macro_f1;
    ij["extracted"] = it.extracted;
    iters.push_back(std::move(ij));
  }
  j["iterations"] = std::move(iters);
  return j;
}

treeminer::MiningRun run_from_json(const json& j) {
  treeminer::MiningRun run;
  run.view.task = stats::parse_task(j.at("task").get<std::string>());
  run.view.article = j.value("article", std::string());
  run.z_min = j.value("z_min", 2.0);
  run.max_depth = j.value("max_depth", std::size_t{3});
  if (j.contains("token_z"))
    run.token_z = j["token_z"].get<std::map<std::string, double>>();
  for (const auto& [tok, z] : run.token_z) {
    (void)z;
    run.candidate_vocabulary.insert(tok);
  }
  for (const auto& ij : j.at("iterations")) {
    treeminer::IterationRecord rec;
    rec.iteration = ij.at("iteration").get<std::size_t>();
    rec.accuracy = ij.at("accuracy").get<double>();
    rec.macro_f1 = ij.at("macro_f1").get<double>();
    for (const auto& t : ij.at("extracted")) rec.extracted.insert(t.get<std::string>());
    run.iterations.push_back(std::move(rec));
    for (const auto& t : run.iterations.back().extracted) run.removed.insert(t);
  }
  return run;
}

}  // namespace

MineResult stage_mine(const std::string& corpus_path, const MineOptions& opt,
                      const std::string& out_dir, bool force) {
  prepare_out_dir(out_dir, force);
  corpus::Corpus raw = corpus::ingest_corpus(corpus_path);
  // mining operates on the training partition of number-stripped text
  corpus::Corpus stripped = corpus::strip_paragraph_numbers(raw);
  Splits splits = split_corpus(stripped);
  const corpus::Corpus& train = splits.train;

  std::vector<stats::LabelView> views;
  if (opt.task == stats::Task::J) {
    views.push_back({stats::Task::J, ""});
  } else {
    for (const auto& a : train.article_registry) views.push_back({opt.task, a});
  }

  std::vector<treeminer::MiningRun> runs(views.size());
  std::vector<std::string> errors(views.size());
  auto mine_one = [&](std::size_t i) {
    try {
      runs[i] = treeminer::mine_candidates(train, views[i], opt.max_iters, opt.depth, opt.z_min);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  if (opt.parallel <= 1 || views.size() == 1) {
    for (std::size_t i = 0; i < views.size(); ++i) mine_one(i);
  } else {
    std::vector<std::thread> pool;
    std::size_t workers = std::min(opt.parallel, views.size());
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w, workers]() {
        for (std::size_t i = w; i < views.size(); i += workers) mine_one(i);
      });
    for (auto& t : pool) t.join();
  }
  // views with an empty class are reported, not fatal, for article tasks
  std::vector<treeminer::MiningRun> kept;
  json skipped = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!errors[i].empty()) {
      if (views.size() == 1) throw ValidationError(errors[i]);
      skipped.push_back({{"view", views[i].name()}, {"error", errors[i]}});
      continue;
    }
    kept.push_back(std::move(runs[i]));
  }

  json j;
  j["task"] = stats::task_name(opt.task);
  j["z_min"] = opt.z_min;
  j["depth"] = opt.depth;
  j["max_iters"] = opt.max_iters;
  j["skipped_views"] = std::move(skipped);
  json jr = json::array();
  for (const auto& r : kept) jr.push_back(run_to_json(r));
  j["runs"] = std::move(jr);
  std::string runs_path = (fs::path(out_dir) / "mining_runs.json").string();
  std::ofstream(runs_path) << j.dump(2) << "\n";

  // Fig-style per-iteration metric table
  std::string metrics_path = (fs::path(out_dir) / "iteration_metrics.tsv").string();
  {
    std::ofstream mt(metrics_path);
    mt << "view\titeration\taccuracy\tmacro_f1\tn_extracted\n";
    for (const auto& r : kept)
      for (const auto& it : r.iterations)
        mt << r.view.name() << '\t' << it.iteration << '\t' << it.accuracy << '\t'
           << it.macro_f1 << '\t' << it.extracted.size() << '\n';
  }

  // token/label score dump for every mined view
  std::string scores_path = (fs::path(out_dir) / "scores.tsv").string();
  {
    std::ofstream st(scores_path);
    bool first = true;
    for (const auto& r : kept) {
      std::ostringstream block;
      auto table = stats::build_table(train, r.view);
      stats::write_scores_tsv(stats::score_tokens(table, r.view), r.view, block);
      std::string text = block.str();
      if (!first) text.erase(0, text.find('\n') + 1);  // keep one header
      st << text;
      first = false;
    }
  }

  std::string review_path = (fs::path(out_dir) / "review_template.tsv").string();
  treeminer::export_review(kept, review_path);

  Manifest m;
  m.command = "mine";
  m.seed = opt.seed;
  m.input_hashes["corpus"] = file_hash(corpus_path);
  m.output_hashes["mining_runs.json"] = file_hash(runs_path);
  m.output_hashes["iteration_metrics.tsv"] = file_hash(metrics_path);
  m.output_hashes["scores.tsv"] = file_hash(scores_path);
  m.output_hashes["review_template.tsv"] = file_hash(review_path);
  write_manifest(std::move(m), out_dir);

  MineResult res;
  res.runs = std::move(kept);
  res.runs_path = runs_path;
  res.review_template_path = review_path;
  return res;
}

std::string stage_review_template(const std::string& mine_dir, const std::string& out_dir,
                                  bool force) {
  prepare_out_dir(out_dir, force);
  std::string runs_path = (fs::path(mine_dir) / "mining_runs.json").string();
  std::ifstream in(runs_path);
  if (!in) throw ValidationError("missing mining_runs.json in " + mine_dir);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("invalid mining_runs.json: " + std::string(e.what()));
  }
  std::vector<treeminer::MiningRun> runs;
  for (const auto& rj : j.at("runs")) runs.push_back(run_from_json(rj));
  std::string path = (fs::path(out_dir) / "review.tsv").string();
  treeminer::export_review(runs, path);

  Manifest m;
  m.command = "review-template";
  m.input_hashes["mining_runs"] = file_hash(runs_path);
  m.output_hashes["review.tsv"] = file_hash(path);
  write_manifest(std::move(m), out_dir);
  return path;
}

namespace {

corpus::Corpus load_for_variant(const std::string& corpus_path, model::Variant v) {
  corpus::Corpus c = corpus::ingest_corpus(corpus_path);
  if (model::variant_strips_numbers(v)) return corpus::strip_paragraph_numbers(c);
  return c;
}

json loss_breakdown_json(const model::LossBreakdown& l) {
  json j;
  j["total"] = l.total;
  j["main"] = l.main;
  for (const auto& [k, v] : l.disc) j[k] = v;
  return j;
}

}  // namespace

TrainStageResult stage_train(const std::string& corpus_path, const TrainOptions& opt,
                             const std::string& out_dir, bool force) {
  prepare_out_dir(out_dir, force);
  const model::ModelConfig& cfg = opt.config;

  treeminer::SpuriousLexicon lexicon;
  bool have_lexicon = false;
  if (model::variant_has_vocab(cfg.variant)) {
    if (!opt.lexicon_path)
      throw ValidationError("variant " + model::variant_name(cfg.variant) +
                            " requires --lexicon (missing artifact: spurious lexicon)");
    lexicon = treeminer::import_review(*opt.lexicon_path);
    have_lexicon = true;
  }

  corpus::Corpus prepared = load_for_variant(corpus_path, cfg.variant);
  Splits splits = split_corpus(prepared);

  model::TrainResult result = model::train(splits.train, splits.dev, cfg,
                                           have_lexicon ? &lexicon : nullptr, opt.seed,
                                           opt.parallel);

  std::string log_path = (fs::path(out_dir) / "train_log.jsonl").string();
  {
    std::ofstream log(log_path);
    for (const auto& e : result.log) {
      json j;
      j["lr"] = e.lr;
      j["epoch"] = e.epoch;
      j["train_loss"] = loss_breakdown_json(e.train_loss);
      j["dev_f1"] = e.dev_f1;
      j["improved"] = e.improved;
      log << j.dump() << "\n";
    }
    json fin;
    fin["best_lr"] = result.best_lr;
    fin["best_epoch"] = result.best_epoch;
    fin["best_dev_f1"] = result.best_dev_f1;
    fin["diverged_lrs"] = result.diverged_lrs;
    log << fin.dump() << "\n";
  }

  std::map<std::string, std::string> extra;
  extra["corpus_hash"] = file_hash(corpus_path);
  if (opt.lexicon_path) extra["lexicon_hash"] = file_hash(*opt.lexicon_path);
  extra["seed"] = std::to_string(opt.seed);
  std::string ckpt_path = (fs::path(out_dir) / "checkpoint.json").string();
  model::save_checkpoint(result.model, ckpt_path, extra);

  Manifest m;
  m.command = "train";
  m.seed = opt.seed;
  m.input_hashes["corpus"] = file_hash(corpus_path);
  if (opt.lexicon_path) m.input_hashes["lexicon"] = file_hash(*opt.lexicon_path);
  m.output_hashes["checkpoint.json"] = file_hash(ckpt_path);
  m.output_hashes["train_log.jsonl"] = file_hash(log_path);
  write_manifest(std::move(m), out_dir);

  return {ckpt_path, result.best_dev_f1, result.best_lr};
}

std::string stage_attribute(const std::string& checkpoint_path, const std::string& corpus_path,
                            const AttributeOptions& opt, const std::string& out_dir,
                            bool force) {
  prepare_out_dir(out_dir, force);
  model::ModelBundle bundle = model::load_checkpoint(checkpoint_path);
  corpus::Corpus prepared = load_for_variant(corpus_path, bundle.cfg.variant);
  Splits splits = split_corpus(prepared);
  const corpus::Corpus& split = pick_split(splits, opt.split);

  std::size_t n = split.docs.size();
  if (opt.limit > 0) n = std::min(n, opt.limit);

  std::vector<attribution::AttributionResult> results(n);
  attribution::TargetSpec target{opt.article};
  auto attribute_one = [&](std::size_t i) {
    results[i] = attribution::integrated_gradients(bundle, split.docs[i], target, opt.steps);
  };
  if (opt.parallel <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) attribute_one(i);
  } else {
    std::vector<std::thread> pool;
    std::size_t workers = std::min(opt.parallel, n);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w, workers]() {
        for (std::size_t i = w; i < n; i += workers) attribute_one(i);
      });
    for (auto& t : pool) t.join();
  }

  std::string dump_path = (fs::path(out_dir) / "attributions.jsonl").string();
  fs::create_directories(fs::path(out_dir) / "viz");
  {
    std::ofstream dump(dump_path);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = results[i];
      json j;
      j["doc_id"] = r.doc_id;
      j["target"] = r.target;
      j["token_scores"] = r.token_scores;
      j["paragraph_scores"] = r.paragraph_scores;
      j["ranking"] = r.ranking;
      j["completeness_gap"] = r.completeness_gap;
      dump << j.dump() << "\n";
      attribution::write_attribution_html(
          split.docs[i], r, (fs::path(out_dir) / "viz" / (r.doc_id + ".html")).string());
    }
  }

  Manifest m;
  m.command = "attribute";
  m.input_hashes["checkpoint"] = file_hash(checkpoint_path);
  m.input_hashes["corpus"] = file_hash(corpus_path);
  m.output_hashes["attributions.jsonl"] = file_hash(dump_path);
  write_manifest(std::move(m), out_dir);
  return dump_path;
}

attribution::AlignmentReport stage_align(const std::string& checkpoint_path,
                                         const std::string& corpus_path, const AlignOptions& opt,
                                         const std::string& out_dir, bool force) {
  prepare_out_dir(out_dir, force);
  model::ModelBundle bundle = model::load_checkpoint(checkpoint_path);
  corpus::Corpus prepared = load_for_variant(corpus_path, bundle.cfg.variant);
  Splits splits = split_corpus(prepared);
  corpus::Corpus eval_set = pick_split(splits, opt.split);
  if (opt.limit > 0 && eval_set.docs.size() > opt.limit) eval_set.docs.resize(opt.limit);

  attribution::TargetSpec target{opt.article};
  attribution::AlignmentReport rep =
      attribution::alignment_report(bundle, eval_set, target, opt.steps);

  json j;
  j["variant"] = model::variant_name(bundle.cfg.variant);
  j["task"] = stats::task_name(bundle.cfg.task);
  j["split"] = opt.split;
  j["mean_p_at_oracle"] = rep.mean;
  j["standard_error"] = rep.standard_error;
  j["n"] = rep.n;
  j["skipped"] = rep.skipped;
  j["ig_steps"] = rep.ig_steps;
  j["ig_baseline"] = rep.ig_baseline;
  json rows = json::array();
  for (const auto& r : rep.per_doc)
    rows.push_back({{"doc_id", r.doc_id}, {"p_at_oracle", r.p_at_oracle},
                    {"oracle_k", r.oracle_k}});
  j["per_doc"] = std::move(rows);
  std::string path = (fs::path(out_dir) / "alignment.json").string();
  std::ofstream(path) << j.dump(2) << "\n";

  Manifest m;
  m.command = "align";
  m.input_hashes["checkpoint"] = file_hash(checkpoint_path);
  m.input_hashes["corpus"] = file_hash(corpus_path);
  m.output_hashes["alignment.json"] = file_hash(path);
  write_manifest(std::move(m), out_dir);
  return rep;
}

std::string stage_eval(const std::string& checkpoint_path, const std::string& corpus_path,
                       const EvalOptions& opt, const std::string& out_dir, bool force) {
  prepare_out_dir(out_dir, force);
  model::ModelBundle bundle = model::load_checkpoint(checkpoint_path);
  corpus::Corpus prepared = load_for_variant(corpus_path, bundle.cfg.variant);
  Splits splits = split_corpus(prepared);
  const corpus::Corpus& eval_set = pick_split(splits, opt.split);
  if (eval_set.docs.empty()) throw ValidationError("stage_eval: empty evaluation split");

  std::vector<evalmetrics::Prediction> preds;
  preds.reserve(eval_set.docs.size());
  for (const auto& d : eval_set.docs)
    preds.push_back({d.doc_id, model::predict_positive(bundle, d)});

  evalmetrics::F1Report f1 = evalmetrics::f1_scores(preds, eval_set, bundle.cfg.task);

  json j;
  j["task"] = stats::task_name(bundle.cfg.task);
  j["variant"] = model::variant_name(bundle.cfg.variant);
  j["split"] = opt.split;
  j["n_docs"] = eval_set.docs.size();
  j["macro_f1"] = f1.macro;
  j["micro_f1"] = f1.micro;
  j["per_article"] = f1.per_article;
  j["zero_support"] = f1.zero_support;
  if (bundle.cfg.task == stats::Task::A || bundle.cfg.task == stats::Task::AB) {
    evalmetrics::HardF1Report hard = evalmetrics::hard_macro_f1(preds, eval_set);
    j["hard_macro_f1"] = hard.macro;
    j["hard_per_article"] = hard.per_article;
    j["hard_excluded"] = hard.excluded;
  }
  if (opt.align_report_path) {
    std::ifstream in(*opt.align_report_path);
    if (!in) throw ValidationError("cannot open alignment report: " + *opt.align_report_path);
    json aj;
    in >> aj;
    j["alignment"] = {{"mean_p_at_oracle", aj.value("mean_p_at_oracle", 0.0)},
                      {"standard_error", aj.value("standard_error", 0.0)},
                      {"n", aj.value("n", 0)}};
  }
  std::string path = (fs::path(out_dir) / "metrics.json").string();
  std::ofstream(path) << j.dump(2) << "\n";

  Manifest m;
  m.command = "eval";
  m.input_hashes["checkpoint"] = file_hash(checkpoint_path);
  m.input_hashes["corpus"] = file_hash(corpus_path);
  if (opt.align_report_path) m.input_hashes["alignment"] = file_hash(*opt.align_report_path);
  m.output_hashes["metrics.json"] = file_hash(path);
  write_manifest(std::move(m), out_dir);
  return path;
}

std::string stage_report(const ReportOptions& opt, const std::string& out_dir, bool force) {
  prepare_out_dir(out_dir, force);
  if (opt.run_dirs.empty()) throw ValidationError("stage_report: no run directories given");

  struct Row {
    std::string variant;
    std::string task;
    json metrics;                       // may be null
    json alignment;                     // may be null
    std::vector<attribution::AlignmentRow> per_doc;
  };
  std::vector<Row> rows;

  for (const auto& dir : opt.run_dirs) {
    verify_outputs(dir);  // recompute artifact hashes against the manifest
    Row row;
    fs::path mp = fs::path(dir) / "metrics.json";
    fs::path ap = fs::path(dir) / "alignment.json";
    if (fs::exists(mp)) {
      std::ifstream in(mp);
      in >> row.metrics;
      row.variant = row.metrics.value("variant", std::string());
      row.task = row.metrics.value("task", std::string());
    }
    if (fs::exists(ap)) {
      std::ifstream in(ap);
      in >> row.alignment;
      if (row.variant.empty()) row.variant = row.alignment.value("variant", std::string());
      if (row.task.empty()) row.task = row.alignment.value("task", std::string());
      for (const auto& r : row.alignment.value("per_doc", json::array()))
        row.per_doc.push_back({r.at("doc_id").get<std::string>(),
                               r.at("p_at_oracle").get<double>(),
                               r.at("oracle_k").get<std::size_t>()});
    }
    if (row.metrics.is_null() && row.alignment.is_null())
      throw ValidationError("run dir " + dir + " has neither metrics.json nor alignment.json");
    rows.push_back(std::move(row));
  }

  std::string reference = opt.reference_variant;
  if (reference.empty()) {
    for (const auto& r : rows)
      if (r.variant == "paraRem") reference = "paraRem";
    if (reference.empty())
      for (const auto& r : rows)
        if (r.variant == "baseline") reference = "baseline";
    if (reference.empty()) reference = rows.front().variant;
  }
  const Row* ref_row = nullptr;
  for (const auto& r : rows)
    if (r.variant == reference) ref_row = &r;

  json out;
  out["reference"] = reference;
  json jrows = json::array();
  for (const auto& r : rows) {
    json jr;
    jr["variant"] = r.variant;
    jr["task"] = r.task;
    if (!r.metrics.is_null()) {
      jr["macro_f1"] = r.metrics.value("macro_f1", 0.0);
      jr["micro_f1"] = r.metrics.value("micro_f1", 0.0);
      if (r.metrics.contains("hard_macro_f1"))
        jr["hard_macro_f1"] = r.metrics["hard_macro_f1"];
    }
    if (!r.alignment.is_null()) {
      jr["p_at_oracle"] = r.alignment.value("mean_p_at_oracle", 0.0);
      jr["p_at_oracle_se"] = r.alignment.value("standard_error", 0.0);
      // paired t-test against the reference on the per-document scores
      if (ref_row && ref_row != &r && !ref_row->per_doc.empty() && !r.per_doc.empty()) {
        std::map<std::string, double> ref_scores;
        for (const auto& pr : ref_row->per_doc) ref_scores[pr.doc_id] = pr.p_at_oracle;
        std::vector<double> a, b;
        for (const auto& pr : r.per_doc) {
          auto it = ref_scores.find(pr.doc_id);
          if (it == ref_scores.end()) continue;
          a.push_back(pr.p_at_oracle);
          b.push_back(it->second);
        }
        if (a.size() >= 2) {
          evalmetrics::TTestResult t = evalmetrics::paired_t_test(a, b);
          jr["p_value_vs_reference"] = t.p;
          jr["t_vs_reference"] = t.t;
          jr["paired_n"] = a.size();
        }
      }
    }
    jrows.push_back(std::move(jr));
  }
  out["rows"] = std::move(jrows);

  std::string path = (fs::path(out_dir) / "report.json").string();
  std::ofstream(path) << out.dump(2) << "\n";

  Manifest m;
  m.command = "report";
  for (const auto& dir : opt.run_dirs)
    m.input_hashes[dir] = file_hash((fs::path(dir) / "manifest.json").string());
  m.output_hashes["report.json"] = file_hash(path);
  write_manifest(std::move(m), out_dir);
  return path;
}

}  // namespace deconf::pipeline
