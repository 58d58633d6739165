#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "deconf/errors.hpp"
#include "deconf/evalmetrics.hpp"
#include "deconf/model.hpp"
#include "deconf/pipeline.hpp"

using namespace deconf;
using diffcore::Tensor;
using diffcore::Value;
using model::ModelBundle;
using model::ModelConfig;
using model::Variant;

namespace {

corpus::Document doc_with_sentences(const std::vector<std::size_t>& lengths) {
  corpus::Document d;
  d.doc_id = "packdoc";
  corpus::Paragraph p;
  p.index = 0;
  std::string text;
  for (std::size_t len : lengths) {
    for (std::size_t i = 0; i < len; ++i) text += "w" + std::to_string(i) + " ";
    text += ". ";
  }
  p.raw_text = text;
  d.paragraphs.push_back(p);
  corpus::finalize_document(d);
  return d;
}

ModelConfig tiny_config(stats::Task task, Variant variant) {
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.token_ctx_dim = 4;
  cfg.gru_hidden = 3;
  cfg.sent_ctx_dim = 4;
  cfg.clf_hidden = 4;
  cfg.disc_hidden = 4;
  cfg.packet_max_tokens = 16;
  cfg.dropout = 0.0;
  cfg.batch_size = 4;
  cfg.lr_grid = {1e-3};
  cfg.max_epochs = 2;
  cfg.patience = 5;
  cfg.length_bins = 3;
  cfg.task = task;
  cfg.variant = variant;
  return cfg;
}

corpus::Corpus tiny_corpus(std::size_t n, std::uint64_t seed, double q = 0.8) {
  corpus::SynthSpec spec;
  spec.n_docs = n;
  spec.seed = seed;
  spec.decoy_label_corr = q;
  spec.state_skew = 0.5;
  spec.length_gap = 4.0;
  return corpus::synthesize_corpus(spec);
}

treeminer::SpuriousLexicon decoy_lexicon() {
  treeminer::SpuriousLexicon lex;
  treeminer::LexiconEntry e;
  e.category = treeminer::Category::Spurious;
  lex.entries["decoyword0"] = e;
  return lex;
}

}  // namespace

TEST_CASE("greedy packing follows the sentence-fitting rule") {
  corpus::Document d = doc_with_sentences({300, 300, 200});
  model::Packing pk = model::pack_sentences(d, 512);
  REQUIRE(pk.packets.size() == 2);
  CHECK(pk.packets[0].size() == 300);
  CHECK(pk.packets[1].size() == 500);
}

TEST_CASE("an oversized sentence splits into max-sized parts") {
  corpus::Document d = doc_with_sentences({1100});
  model::Packing pk = model::pack_sentences(d, 512);
  REQUIRE(pk.packets.size() == 3);
  CHECK(pk.packets[0].size() == 512);
  CHECK(pk.packets[1].size() == 512);
  CHECK(pk.packets[2].size() == 76);
}

TEST_CASE("an empty document packs to zero packets and a zero feature vector") {
  corpus::Document d;
  d.doc_id = "empty";
  corpus::finalize_document(d);
  model::Packing pk = model::pack_sentences(d, 64);
  CHECK(pk.packets.empty());

  corpus::Corpus c = tiny_corpus(12, 1);
  ModelBundle b = model::init_bundle(tiny_config(stats::Task::J, Variant::Baseline), c,
                                     nullptr, 7);
  model::DocForward f = model::extract_features(b, d, nullptr);
  for (std::size_t i = 0; i < f.features.val().size(); ++i)
    CHECK(f.features.val()[i] == 0.0);
}

TEST_CASE("packing keeps the token-to-paragraph map") {
  corpus::Document d;
  d.doc_id = "map";
  corpus::Paragraph p0, p1;
  p0.index = 0;
  p0.raw_text = "alpha beta. gamma.";
  p1.index = 1;
  p1.raw_text = "delta epsilon zeta.";
  d.paragraphs = {p0, p1};
  corpus::finalize_document(d);
  model::Packing pk = model::pack_sentences(d, 4);
  REQUIRE(pk.tokens.size() == 6);
  CHECK(pk.tokens[0].paragraph == 0);
  CHECK(pk.tokens[2].paragraph == 0);
  CHECK(pk.tokens[3].paragraph == 1);
  CHECK(pk.tokens[5].token == "zeta");
  CHECK(pk.n_paragraphs == 2);
}

TEST_CASE("full-scale preset pins the reference dimensions") {
  ModelConfig j = ModelConfig::full_preset(stats::Task::J);
  CHECK(j.embed_dim == 768);
  CHECK(j.token_ctx_dim == 300);
  CHECK(j.gru_hidden == 200);
  CHECK(j.sent_ctx_dim == 200);
  CHECK(j.clf_hidden == 100);
  CHECK(j.disc_hidden == 100);
  CHECK(j.dropout == 0.1);
  CHECK(j.batch_size == 8);
  CHECK(j.packet_max_tokens == 512);
  ModelConfig a = ModelConfig::full_preset(stats::Task::A);
  CHECK(a.batch_size == 16);
  // bidirectional feature dimension is 2 x 200
  corpus::Corpus c = tiny_corpus(10, 2);
  ModelConfig desk = ModelConfig::desk_preset(stats::Task::J);
  CHECK(desk.scale_divisor == 8);
  ModelBundle b = model::init_bundle(desk, c, nullptr, 1);
  CHECK(b.embed_dim == 96);
  CHECK(b.gru_hidden == 25);
  CHECK(b.feature_dim() == 50);
}

TEST_CASE("task A main loss at zero logits is 10 ln 2") {
  corpus::Corpus c = tiny_corpus(12, 3);
  ModelBundle b = model::init_bundle(tiny_config(stats::Task::A, Variant::ParaRem), c,
                                     nullptr, 5);
  // uniform heads: zero the output layer so every logit is exactly 0
  b.clf_w2.val().fill(0.0);
  b.clf_b2.val().fill(0.0);
  model::LossBreakdown parts;
  model::forward_loss(b, {&c.docs[0]}, nullptr, &parts);
  CHECK(std::fabs(parts.main - 10.0 * std::log(2.0)) < 1e-9);
}

TEST_CASE("A|B classifier consumes the allegation vector") {
  corpus::Corpus c = tiny_corpus(12, 4);
  ModelBundle b = model::init_bundle(tiny_config(stats::Task::AB, Variant::ParaRem), c,
                                     nullptr, 6);
  corpus::Document d = c.docs[0];
  model::DocForward f = model::extract_features(b, d, nullptr);

  corpus::Document all_zero = d;
  all_zero.labels.alleged.clear();
  corpus::Document all_one = d;
  for (const auto& a : b.articles) all_one.labels.alleged.insert(a);

  Value lg0 = model::classifier_logits(b, f.features, all_zero, nullptr);
  Value lg1 = model::classifier_logits(b, f.features, all_one, nullptr);
  bool differ = false;
  for (std::size_t i = 0; i < lg0.val().size(); ++i)
    differ = differ || lg0.val()[i] != lg1.val()[i];
  CHECK(differ);
}

TEST_CASE("with all lambdas zero the discriminator branches leave theta_f untouched") {
  corpus::Corpus c = tiny_corpus(16, 5);
  ModelConfig cfg = tiny_config(stats::Task::J, Variant::GradAll);
  cfg.lambda_country = cfg.lambda_length = cfg.lambda_vocab = 0.0;
  auto lex = decoy_lexicon();
  ModelBundle all = model::init_bundle(cfg, c, &lex, 9);

  ModelConfig para_cfg = cfg;
  para_cfg.variant = Variant::ParaRem;
  ModelBundle para = model::init_bundle(para_cfg, c, nullptr, 9);

  std::vector<const corpus::Document*> batch = {&c.docs[0], &c.docs[1], &c.docs[2]};
  for (const Value& p : all.parameters()) p.zero_grad();
  for (const Value& p : para.parameters()) p.zero_grad();
  model::forward_loss(all, batch, nullptr, nullptr).backward();
  model::forward_loss(para, batch, nullptr, nullptr).backward();

  auto pa = all.parameters();
  auto pb = para.parameters();
  REQUIRE(pb.size() < pa.size());  // shared prefix + discriminator heads
  for (std::size_t k = 0; k < pb.size(); ++k) {
    REQUIRE(pa[k].name() == pb[k].name());
    REQUIRE(pa[k].val().size() == pb[k].val().size());
    for (std::size_t i = 0; i < pb[k].val().size(); ++i) {
      CHECK(pa[k].val()[i] == pb[k].val()[i]);    // same init
      CHECK(pa[k].grad()[i] == pb[k].grad()[i]);  // bitwise equal gradients
    }
  }
}

TEST_CASE("lambda zero training trajectory equals paraRem under identical seeds") {
  corpus::Corpus c = tiny_corpus(40, 6);
  ModelConfig cfg = tiny_config(stats::Task::J, Variant::GradAll);
  cfg.lambda_country = cfg.lambda_length = cfg.lambda_vocab = 0.0;
  cfg.dropout = 0.1;  // exercise the per-branch dropout streams too
  cfg.max_epochs = 2;
  auto lex = decoy_lexicon();
  pipeline::Splits s = pipeline::split_corpus(c);

  model::TrainResult r_all = model::train(s.train, s.dev, cfg, &lex, 11);
  ModelConfig para_cfg = cfg;
  para_cfg.variant = Variant::ParaRem;
  model::TrainResult r_para = model::train(s.train, s.dev, para_cfg, nullptr, 11);

  auto pa = r_all.model.parameters();
  auto pb = r_para.model.parameters();
  for (std::size_t k = 0; k < pb.size(); ++k) {
    REQUIRE(pa[k].name() == pb[k].name());
    for (std::size_t i = 0; i < pb[k].val().size(); ++i)
      CHECK(pa[k].val()[i] == pb[k].val()[i]);
  }
  REQUIRE(r_all.log.size() == r_para.log.size());
  for (std::size_t i = 0; i < r_all.log.size(); ++i)
    CHECK(r_all.log[i].dev_f1 == r_para.log[i].dev_f1);
}

TEST_CASE("joint objective gradient matches finite differences per parameter group") {
  // The GRL makes single-pass reverse mode equal to the min-max gradients:
  // discriminator and classifier parameters see the total loss T, while the
  // feature extractor sees the surrogate M - sum(lambda^2 L_k) = 2M - T at
  // lambda = 1 (M = main loss alone).
  corpus::Corpus c = tiny_corpus(10, 7);
  ModelConfig cfg = tiny_config(stats::Task::J, Variant::GradAll);
  auto lex = decoy_lexicon();
  ModelBundle b = model::init_bundle(cfg, c, &lex, 13);
  std::vector<const corpus::Document*> batch = {&c.docs[0], &c.docs[1]};

  ModelBundle main_view = b;  // shares parameter nodes; no discriminators
  main_view.d_country.reset();
  main_view.d_length.reset();
  main_view.d_vocab.reset();

  auto total = [&]() { return model::forward_loss(b, batch, nullptr, nullptr); };
  auto main_only = [&]() { return model::forward_loss(main_view, batch, nullptr, nullptr); };

  for (const Value& p : b.parameters()) p.zero_grad();
  total().backward();

  double worst = 0.0;
  // wide step: cancellation noise eps*|f|/2h must stay below the 1e-8
  // relative floor, and the composite loss is O(10)
  const double h = 1e-3;
  for (const Value& p : b.parameters()) {
    bool is_disc = p.name().rfind("disc.", 0) == 0;
    bool is_clf = p.name().rfind("clf.", 0) == 0;
    Tensor& theta = p.node()->value;
    // probe a deterministic subset of coordinates to keep the test quick
    std::size_t stride = std::max<std::size_t>(1, theta.size() / 25);
    for (std::size_t i = 0; i < theta.size(); i += stride) {
      double keep = theta[i];
      auto fd_of = [&](const std::function<Value()>& f) {
        theta[i] = keep + h;
        double up = f().val()[0];
        theta[i] = keep - h;
        double dn = f().val()[0];
        theta[i] = keep;
        return (up - dn) / (2 * h);
      };
      double expected;
      if (is_disc || is_clf) {
        expected = fd_of(total);
      } else {
        expected = 2.0 * fd_of(main_only) - fd_of(total);
      }
      double got = p.grad()[i];
      double rel = std::fabs(got - expected) /
                   std::max({std::fabs(got), std::fabs(expected), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("forward_loss value is invariant to batch order") {
  corpus::Corpus c = tiny_corpus(12, 8);
  ModelBundle b = model::init_bundle(tiny_config(stats::Task::J, Variant::ParaRem), c,
                                     nullptr, 3);
  std::vector<const corpus::Document*> batch = {&c.docs[0], &c.docs[1], &c.docs[2],
                                                &c.docs[3]};
  model::LossBreakdown p1, p2;
  model::forward_loss(b, batch, nullptr, &p1);
  std::reverse(batch.begin(), batch.end());
  model::forward_loss(b, batch, nullptr, &p2);
  CHECK(std::fabs(p1.total - p2.total) < 1e-9);
}

TEST_CASE("identical token embeddings make packet order irrelevant") {
  corpus::Corpus c = tiny_corpus(8, 9);
  ModelBundle b = model::init_bundle(tiny_config(stats::Task::J, Variant::ParaRem), c,
                                     nullptr, 4);
  // collapse every embedding row to the same vector
  Tensor& e = b.embedding.val();
  std::size_t dim = e.cols();
  for (std::size_t r = 1; r < e.rows(); ++r)
    for (std::size_t col = 0; col < dim; ++col) e[r * dim + col] = e[col];

  corpus::Document d1 = doc_with_sentences({5, 5});
  corpus::Document d2 = doc_with_sentences({5, 5});
  // permute tokens inside d2's first sentence
  std::swap(d2.paragraphs[0].sentences[0][0], d2.paragraphs[0].sentences[0][3]);
  auto f1 = model::extract_features(b, d1, nullptr);
  auto f2 = model::extract_features(b, d2, nullptr);
  for (std::size_t i = 0; i < f1.features.val().size(); ++i)
    CHECK(f1.features.val()[i] == doctest::Approx(f2.features.val()[i]).epsilon(1e-12));
}

TEST_CASE("patience zero stops after exactly one epoch per grid point") {
  corpus::Corpus c = tiny_corpus(30, 10);
  pipeline::Splits s = pipeline::split_corpus(c);
  ModelConfig cfg = tiny_config(stats::Task::J, Variant::ParaRem);
  cfg.patience = 0;
  cfg.max_epochs = 8;
  cfg.lr_grid = {1e-3, 3e-4};
  model::TrainResult r = model::train(s.train, s.dev, cfg, nullptr, 17);
  REQUIRE(r.log.size() == 2);  // one entry per grid point
  CHECK(r.log[0].epoch == 1);
  CHECK(r.log[1].epoch == 1);
  CHECK(r.log[0].lr == 1e-3);
  CHECK(r.log[1].lr == 3e-4);
}

TEST_CASE("training logs are deterministic given the seed") {
  corpus::Corpus c = tiny_corpus(36, 11);
  pipeline::Splits s = pipeline::split_corpus(c);
  ModelConfig cfg = tiny_config(stats::Task::J, Variant::ParaRem);
  cfg.dropout = 0.1;
  cfg.max_epochs = 3;
  model::TrainResult a = model::train(s.train, s.dev, cfg, nullptr, 23);
  model::TrainResult b = model::train(s.train, s.dev, cfg, nullptr, 23);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss.total == b.log[i].train_loss.total);
    CHECK(a.log[i].dev_f1 == b.log[i].dev_f1);
  }
  auto snap_a = a.model.snapshot();
  auto snap_b = b.model.snapshot();
  for (std::size_t k = 0; k < snap_a.size(); ++k)
    for (std::size_t i = 0; i < snap_a[k].size(); ++i)
      CHECK(snap_a[k][i] == snap_b[k][i]);
}

TEST_CASE("early stopping returns the best dev checkpoint") {
  corpus::Corpus c = tiny_corpus(60, 12, 1.0);
  pipeline::Splits s = pipeline::split_corpus(c);
  ModelConfig cfg = tiny_config(stats::Task::J, Variant::Baseline);
  cfg.max_epochs = 6;
  cfg.patience = 2;
  model::TrainResult r = model::train(s.train, s.dev, cfg, nullptr, 31);
  double best_logged = 0.0;
  for (const auto& e : r.log) best_logged = std::max(best_logged, e.dev_f1);
  CHECK(r.best_dev_f1 == doctest::Approx(best_logged));
  // the returned model reproduces the best dev score
  std::vector<evalmetrics::Prediction> preds;
  for (const auto& d : s.dev.docs)
    preds.push_back({d.doc_id, model::predict_positive(r.model, d)});
  double again = evalmetrics::f1_scores(preds, s.dev, cfg.task).macro;
  CHECK(again == doctest::Approx(r.best_dev_f1));
}

TEST_CASE("adversary warmup restricts checkpoints to the adversarial phase") {
  corpus::Corpus c = tiny_corpus(40, 16);
  pipeline::Splits s = pipeline::split_corpus(c);
  ModelConfig cfg = tiny_config(stats::Task::J, Variant::GradCou);
  cfg.adversary_start_epoch = 2;
  cfg.max_epochs = 4;
  cfg.patience = 4;
  model::TrainResult r = model::train(s.train, s.dev, cfg, nullptr, 41);
  CHECK(r.best_epoch >= 3);  // warmup epochs are never checkpointed
  REQUIRE(r.log.size() == 4);
  for (const auto& e : r.log)
    if (e.epoch <= 2) CHECK_FALSE(e.improved);

  // without discriminators the warmup setting is inert
  ModelConfig bcfg = tiny_config(stats::Task::J, Variant::Baseline);
  bcfg.adversary_start_epoch = 2;
  bcfg.max_epochs = 2;
  bcfg.patience = 4;
  model::TrainResult rb = model::train(s.train, s.dev, bcfg, nullptr, 41);
  CHECK(rb.best_epoch >= 1);
}

TEST_CASE("gradVocab without a lexicon fails naming the missing artifact") {
  corpus::Corpus c = tiny_corpus(12, 13);
  ModelConfig cfg = tiny_config(stats::Task::J, Variant::GradVocab);
  CHECK_THROWS_WITH_AS(model::init_bundle(cfg, c, nullptr, 1), doctest::Contains("lexicon"),
                       ValidationError);
}

TEST_CASE("constant features drive the probe to the majority-class rate") {
  corpus::Corpus c = tiny_corpus(60, 14);
  ModelConfig cfg = tiny_config(stats::Task::J, Variant::GradCou);
  ModelBundle b = model::init_bundle(cfg, c, nullptr, 19);
  b.embedding.val().fill(0.0);  // every document maps to the same features

  pipeline::Splits s = pipeline::split_corpus(c);
  double acc = model::discriminator_probe(b, s.train, s.test, model::DiscKind::Country, 3);
  std::map<std::string, std::size_t> counts;
  for (const auto& d : s.test.docs) counts[d.state]++;
  std::size_t majority = 0;
  for (const auto& [st, n] : counts) majority = std::max(majority, n);
  double majority_rate = static_cast<double>(majority) / s.test.docs.size();
  CHECK(acc <= majority_rate + 0.1);
}

TEST_CASE("checkpoints round-trip bitwise through save and load") {
  corpus::Corpus c = tiny_corpus(20, 15);
  ModelConfig cfg = tiny_config(stats::Task::AB, Variant::GradAll);
  auto lex = decoy_lexicon();
  ModelBundle b = model::init_bundle(cfg, c, &lex, 29);

  std::string path = "ckpt_roundtrip.json";
  model::save_checkpoint(b, path, {{"note", "test"}});
  ModelBundle loaded = model::load_checkpoint(path);
  CHECK(loaded.cfg.task == cfg.task);
  CHECK(loaded.cfg.variant == cfg.variant);
  CHECK(loaded.vocab == b.vocab);
  CHECK(loaded.state_registry == b.state_registry);
  CHECK(loaded.lexicon_tokens == b.lexicon_tokens);
  CHECK(loaded.bins.upper == b.bins.upper);

  auto sa = b.snapshot();
  auto sb = loaded.snapshot();
  REQUIRE(sa.size() == sb.size());
  for (std::size_t k = 0; k < sa.size(); ++k)
    for (std::size_t i = 0; i < sa[k].size(); ++i) CHECK(sa[k][i] == sb[k][i]);

  auto la = model::predict_logits(b, c.docs[0]);
  auto lb = model::predict_logits(loaded, c.docs[0]);
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i] == lb[i]);
  std::remove(path.c_str());
}

TEST_CASE("missing format version is rejected") {
  std::string path = "ckpt_bad.json";
  std::ofstream(path) << "{\"params\": {}}\n";
  CHECK_THROWS_WITH_AS(model::load_checkpoint(path), doctest::Contains("format_version"),
                       ValidationError);
  std::remove(path.c_str());
}
