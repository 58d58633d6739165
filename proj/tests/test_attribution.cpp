#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "deconf/attribution.hpp"
#include "deconf/errors.hpp"
#include "deconf/rng.hpp"
#include "oracles.hpp"

using namespace deconf;
using diffcore::Tensor;
using model::ModelBundle;
using model::ModelConfig;

namespace {

ModelConfig tiny_config(stats::Task task) {
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.token_ctx_dim = 4;
  cfg.gru_hidden = 3;
  cfg.sent_ctx_dim = 4;
  cfg.clf_hidden = 4;
  cfg.disc_hidden = 4;
  cfg.packet_max_tokens = 16;
  cfg.dropout = 0.0;
  cfg.task = task;
  cfg.variant = model::Variant::ParaRem;
  return cfg;
}

corpus::Corpus small_corpus(std::size_t n, std::uint64_t seed) {
  corpus::SynthSpec spec;
  spec.n_docs = n;
  spec.seed = seed;
  spec.decoy_label_corr = 0.8;
  return corpus::synthesize_corpus(spec);
}

model::Packing packing_of(std::size_t n_tokens_per_para, std::size_t n_paras) {
  corpus::Document d;
  d.doc_id = "p";
  for (std::size_t p = 0; p < n_paras; ++p) {
    corpus::Paragraph para;
    para.index = static_cast<int>(p);
    std::string text;
    for (std::size_t t = 0; t < n_tokens_per_para; ++t) text += "tok ";
    para.raw_text = text + ".";
    d.paragraphs.push_back(para);
  }
  corpus::finalize_document(d);
  return model::pack_sentences(d, 64);
}

}  // namespace

TEST_CASE("paragraph aggregation formula") {
  model::Packing pk = packing_of(4, 1);
  std::vector<double> scores = {1, 1, 1, 1};
  auto ps = attribution::paragraph_scores(scores, pk, stats::Task::J);
  REQUIRE(ps.size() == 1);
  CHECK(ps[0] == doctest::Approx(4.0 / std::sqrt(4.0)));  // = 2.0

  model::Packing pk2 = packing_of(2, 1);
  auto ps2 = attribution::paragraph_scores({3, 4}, pk2, stats::Task::J);
  CHECK(ps2[0] == doctest::Approx(25.0 / std::sqrt(2.0)).epsilon(1e-9));  // 17.6777

  // task B zeroes negative scores first
  auto ps3 = attribution::paragraph_scores({-5, 2}, pk2, stats::Task::B);
  CHECK(ps3[0] == doctest::Approx(4.0 / std::sqrt(2.0)).epsilon(1e-9));  // 2.8284
  // other tasks keep them
  auto ps4 = attribution::paragraph_scores({-5, 2}, pk2, stats::Task::J);
  CHECK(ps4[0] == doctest::Approx(29.0 / std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("paragraph scores are nonnegative and order-invariant within a paragraph") {
  model::Packing pk = packing_of(5, 2);
  std::vector<double> s = {0.3, -1.2, 0.0, 2.0, -0.4, 1.0, 1.0, -3.0, 0.5, 0.1};
  auto ps = attribution::paragraph_scores(s, pk, stats::Task::J);
  for (double v : ps) CHECK(v >= 0.0);
  std::vector<double> permuted = s;
  std::swap(permuted[0], permuted[4]);  // both in paragraph 0
  std::swap(permuted[5], permuted[9]);  // both in paragraph 1
  auto ps2 = attribution::paragraph_scores(permuted, pk, stats::Task::J);
  for (std::size_t p = 0; p < ps.size(); ++p)
    CHECK(ps[p] == doctest::Approx(ps2[p]).epsilon(1e-12));
}

TEST_CASE("ranking sorts by score with ascending-index tie break") {
  std::vector<double> scores = {1.0, 3.0, 3.0, 0.5};
  auto rank = attribution::rank_paragraphs(scores);
  CHECK(rank == std::vector<int>{1, 2, 0, 3});
}

TEST_CASE("precision at k on the pinned examples") {
  std::vector<int> ranking = {5, 7, 1, 2, 0, 3, 4, 6};
  CHECK(attribution::precision_at_k(ranking, {2, 5}, 2) == doctest::Approx(0.5));
  CHECK(attribution::precision_at_oracle(ranking, {5, 7}) == doctest::Approx(1.0));
  std::vector<int> r2 = {0, 9, 8, 1, 2, 3, 4, 5, 6, 7};
  CHECK(attribution::precision_at_oracle(r2, {0, 1, 2}) == doctest::Approx(1.0 / 3));
  CHECK(attribution::precision_at_k(r2, {5, 6}, 3) == doctest::Approx(0.0));
  CHECK_THROWS_AS(attribution::precision_at_k(ranking, {}, 2), ValidationError);
}

TEST_CASE("precision at k ignores permutations below position k") {
  auto rng = diffcore::make_stream(5, "pk");
  std::vector<int> ranking = {3, 1, 4, 0, 2, 5};
  std::set<int> gold = {3, 1};
  double base = attribution::precision_at_k(ranking, gold, 2);
  std::vector<int> tail(ranking.begin() + 2, ranking.end());
  for (int i = 0; i < 10; ++i) {
    diffcore::shuffle(tail, rng);
    std::vector<int> perm(ranking.begin(), ranking.begin() + 2);
    perm.insert(perm.end(), tail.begin(), tail.end());
    CHECK(attribution::precision_at_k(perm, gold, 2) == base);
  }
}

TEST_CASE("precision at k matches the reference on random instances") {
  auto rng = diffcore::make_stream(11, "pk-oracle");
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 2 + rng.uniform_int(10);
    std::vector<int> ranking(n);
    for (std::size_t i = 0; i < n; ++i) ranking[i] = static_cast<int>(i);
    diffcore::shuffle(ranking, rng);
    std::set<int> gold;
    std::size_t g = 1 + rng.uniform_int(n);
    while (gold.size() < g) gold.insert(static_cast<int>(rng.uniform_int(n)));
    std::size_t k = 1 + rng.uniform_int(n);
    CHECK(attribution::precision_at_k(ranking, gold, k) ==
          doctest::Approx(oracle::ref_precision_at_k(ranking, gold, k)).epsilon(1e-15));
  }
}

TEST_CASE("random rankings have expected precision at oracle G/N") {
  // hypergeometric expectation: E |top-G intersect gold| / G = G/N
  auto rng = diffcore::make_stream(7, "mc");
  const std::size_t n = 12, g = 4, trials = 100000;
  std::vector<int> ranking(n);
  for (std::size_t i = 0; i < n; ++i) ranking[i] = static_cast<int>(i);
  std::set<int> gold = {0, 1, 2, 3};
  double sum = 0, sum2 = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    diffcore::shuffle(ranking, rng);
    double p = attribution::precision_at_oracle(ranking, gold);
    sum += p;
    sum2 += p * p;
  }
  double mean = sum / trials;
  double sd = std::sqrt(sum2 / trials - mean * mean);
  double expect = static_cast<double>(g) / n;
  CHECK(std::fabs(mean - expect) < 3.0 * sd / std::sqrt(static_cast<double>(trials)));
}

TEST_CASE("constant model output gives zero scores and zero gap") {
  corpus::Corpus c = small_corpus(10, 31);
  ModelBundle b = model::init_bundle(tiny_config(stats::Task::J), c, nullptr, 3);
  // zero classifier: output is constant regardless of the input
  b.clf_w1.val().fill(0.0);
  b.clf_b1.val().fill(0.0);
  b.clf_w2.val().fill(0.0);
  b.clf_b2.val().fill(0.0);
  auto r = attribution::integrated_gradients(b, c.docs[0], {}, 8);
  for (double s : r.token_scores) CHECK(s == 0.0);
  CHECK(r.completeness_gap == doctest::Approx(0.0));
}

TEST_CASE("path integration is exact for a linear head at any step count") {
  // linear head F = sum over rows of (row . w): IG token score must equal
  // row . w exactly for every m >= 1, and the completeness gap must vanish
  auto rng = diffcore::make_stream(3, "linear-ig");
  std::size_t d = 5;
  Tensor w({d});
  for (std::size_t i = 0; i < d; ++i) w[i] = rng.normal();
  diffcore::Value wv = diffcore::Value::constant(w);

  std::vector<Tensor> inputs;
  Tensor m1({3, d}), m2({2, d});
  for (auto& x : m1.vec()) x = rng.normal();
  for (auto& x : m2.vec()) x = rng.normal();
  inputs = {m1, m2};

  attribution::HeadFn head = [&](const std::vector<diffcore::Value>& leaves) {
    std::vector<diffcore::Value> sums;
    for (const auto& leaf : leaves) sums.push_back(diffcore::sum(diffcore::matvec(leaf, wv)));
    return diffcore::add_scalars(sums);
  };

  for (std::size_t steps : {1u, 2u, 7u}) {
    double gap = -1.0;
    auto scores = attribution::path_integrated_scores(inputs, head, steps, &gap);
    CHECK(gap < 1e-10);
    for (std::size_t p = 0; p < inputs.size(); ++p)
      for (std::size_t r = 0; r < inputs[p].rows(); ++r) {
        double expect = 0.0;
        for (std::size_t ccol = 0; ccol < d; ++ccol)
          expect += inputs[p][r * d + ccol] * w[ccol];
        CHECK(scores[p][r] == doctest::Approx(expect).epsilon(1e-12));
      }
  }
}

TEST_CASE("completeness gap shrinks as steps grow on a trained-ish model") {
  corpus::Corpus c = small_corpus(60, 33);
  ModelBundle b = model::init_bundle(tiny_config(stats::Task::J), c, nullptr, 7);
  // a few training steps to move off the random init
  diffcore::Adam opt(b.parameters(), 1e-2);
  for (int step = 0; step < 10; ++step) {
    std::vector<const corpus::Document*> batch;
    for (std::size_t i = 0; i < 6; ++i) batch.push_back(&c.docs[(step * 6 + i) % c.docs.size()]);
    opt.zero_grad();
    model::forward_loss(b, batch, nullptr, nullptr).backward();
    opt.step();
  }
  double gap8 = 0, gap256 = 0;
  for (int i = 0; i < 3; ++i) {
    gap8 += attribution::integrated_gradients(b, c.docs[i], {}, 8).completeness_gap;
    gap256 += attribution::integrated_gradients(b, c.docs[i], {}, 256).completeness_gap;
  }
  CHECK(gap256 < gap8);
}

TEST_CASE("alignment report pins the {1.0, 0.0} mean and standard error") {
  corpus::Corpus c = small_corpus(2, 36);
  ModelBundle b = model::init_bundle(tiny_config(stats::Task::J), c, nullptr, 13);
  // choose gold sets against the computed rankings: doc 0 scores 1.0 by
  // construction, doc 1 scores 0.0
  auto r0 = attribution::integrated_gradients(b, c.docs[0], {}, 4);
  auto r1 = attribution::integrated_gradients(b, c.docs[1], {}, 4);
  c.docs[0].gold_rationale = std::set<int>{r0.ranking.front()};
  c.docs[1].gold_rationale = std::set<int>{r1.ranking.back()};
  auto rep = attribution::alignment_report(b, c, {}, 4);
  REQUIRE(rep.n == 2);
  CHECK(rep.per_doc[0].p_at_oracle == doctest::Approx(1.0));
  CHECK(rep.per_doc[1].p_at_oracle == doctest::Approx(0.0));
  CHECK(rep.mean == doctest::Approx(0.5));
  CHECK(rep.standard_error == doctest::Approx(0.3536).epsilon(1e-3));
}

TEST_CASE("alignment report over a corpus skips docs without rationales") {
  corpus::Corpus c = small_corpus(12, 34);
  c.docs[0].gold_rationale.reset();
  c.docs[1].gold_rationale->clear();
  ModelBundle b = model::init_bundle(tiny_config(stats::Task::J), c, nullptr, 9);
  auto rep = attribution::alignment_report(b, c, {}, 4);
  CHECK(rep.skipped == 2);
  CHECK(rep.n == c.docs.size() - 2);
  CHECK(rep.ig_baseline == "zero-embedding");
  // mean/se reproduce the population-std convention over per-doc rows
  double sum = 0;
  for (const auto& r : rep.per_doc) sum += r.p_at_oracle;
  double mean = sum / rep.n;
  double var = 0;
  for (const auto& r : rep.per_doc) var += (r.p_at_oracle - mean) * (r.p_at_oracle - mean);
  var /= rep.n;
  CHECK(rep.mean == doctest::Approx(mean));
  CHECK(rep.standard_error == doctest::Approx(std::sqrt(var / rep.n)));
}

TEST_CASE("html export writes a span per token") {
  corpus::Corpus c = small_corpus(6, 35);
  ModelBundle b = model::init_bundle(tiny_config(stats::Task::J), c, nullptr, 11);
  auto r = attribution::integrated_gradients(b, c.docs[0], {}, 4);
  std::string path = "attr_test.html";
  attribution::write_attribution_html(c.docs[0], r, path);
  std::ifstream in(path);
  std::string html((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t spans = 0;
  for (std::size_t pos = 0; (pos = html.find("<span", pos)) != std::string::npos; ++pos) ++spans;
  CHECK(spans == r.token_scores.size());
  std::remove(path.c_str());
}
