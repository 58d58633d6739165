#include "deconf/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "deconf/errors.hpp"

namespace deconf::attribution {

using diffcore::Tensor;
using diffcore::Value;

namespace {

std::size_t resolve_target_index(const model::ModelBundle& b, const corpus::Document& d,
                                 const TargetSpec& target, std::string* name_out) {
  if (b.cfg.task == stats::Task::J) {
    if (name_out) *name_out = "J";
    return 0;
  }
  if (!target.article.empty()) {
    auto it = std::find(b.articles.begin(), b.articles.end(), target.article);
    if (it == b.articles.end())
      throw ValidationError("attribution: unknown article '" + target.article + "'");
    if (name_out) *name_out = target.article;
    return static_cast<std::size_t>(it - b.articles.begin());
  }
  std::vector<double> logits = model::predict_logits(b, d);
  std::size_t arg = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[arg]) arg = i;
  if (name_out) *name_out = b.articles[arg];
  return arg;
}

}  // namespace

std::vector<std::vector<double>> path_integrated_scores(
    const std::vector<Tensor>& inputs, const HeadFn& head, std::size_t steps,
    double* completeness_gap) {
  if (steps < 1) throw ValidationError("path_integrated_scores: steps must be >= 1");

  std::vector<Tensor> grad_sum;
  for (const auto& e : inputs) grad_sum.emplace_back(Tensor::zeros(e.shape()));

  for (std::size_t s = 0; s < steps; ++s) {
    double alpha = (static_cast<double>(s) + 0.5) / static_cast<double>(steps);
    std::vector<Value> leaves;
    for (const auto& e : inputs) {
      Tensor t = e;
      for (auto& x : t.vec()) x *= alpha;
      leaves.push_back(Value::leaf(std::move(t)));
    }
    Value out = head(leaves);
    out.backward();
    for (std::size_t p = 0; p < leaves.size(); ++p) {
      const Tensor& g = leaves[p].grad();
      if (g.empty()) continue;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i]))
          throw std::runtime_error("path_integrated_scores: non-finite gradient");
        grad_sum[p][i] += g[i];
      }
    }
  }

  double inv_m = 1.0 / static_cast<double>(steps);
  double total = 0.0;
  std::vector<std::vector<double>> scores;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    std::size_t cols = inputs[p].cols();
    std::vector<double> row_scores(inputs[p].rows(), 0.0);
    for (std::size_t row = 0; row < inputs[p].rows(); ++row) {
      double score = 0.0;
      for (std::size_t c = 0; c < cols; ++c)
        score += inputs[p][row * cols + c] * grad_sum[p][row * cols + c] * inv_m;
      row_scores[row] = score;
      total += score;
    }
    scores.push_back(std::move(row_scores));
  }

  if (completeness_gap) {
    std::vector<Value> input_leaves, zero_leaves;
    for (const auto& e : inputs) {
      input_leaves.push_back(Value::constant(e));
      zero_leaves.push_back(Value::constant(Tensor::zeros(e.shape())));
    }
    double fx = head(input_leaves).val()[0];
    double f0 = head(zero_leaves).val()[0];
    *completeness_gap = std::fabs(total - (fx - f0));
  }
  return scores;
}

AttributionResult integrated_gradients(const model::ModelBundle& b,
                                       const corpus::Document& d, const TargetSpec& target,
                                       std::size_t steps) {
  AttributionResult res;
  res.doc_id = d.doc_id;
  res.ig_steps = steps;

  model::Packing pk = model::pack_sentences(d, b.packet_max);
  std::size_t idx = resolve_target_index(b, d, target, &res.target);

  auto ids = model::packet_token_ids(b, pk);
  std::vector<Tensor> full;  // input embedding matrices
  for (const auto& packet_ids : ids)
    full.push_back(diffcore::embedding_lookup(b.embedding, packet_ids).val());

  res.token_scores.assign(pk.tokens.size(), 0.0);
  if (pk.packets.empty()) {
    res.paragraph_scores = paragraph_scores(res.token_scores, pk, b.cfg.task);
    res.ranking = rank_paragraphs(res.paragraph_scores);
    return res;
  }

  HeadFn head = [&](const std::vector<Value>& leaves) {
    Value f = model::features_from_embeddings(b, leaves);
    Value logits = model::classifier_logits(b, f, d, nullptr);
    return diffcore::element(logits, idx);
  };
  auto scores = path_integrated_scores(full, head, steps, &res.completeness_gap);
  for (std::size_t p = 0; p < pk.packets.size(); ++p)
    for (std::size_t row = 0; row < pk.packets[p].size(); ++row)
      res.token_scores[pk.packets[p][row]] = scores[p][row];

  res.paragraph_scores = paragraph_scores(res.token_scores, pk, b.cfg.task);
  res.ranking = rank_paragraphs(res.paragraph_scores);
  return res;
}

std::vector<double> paragraph_scores(const std::vector<double>& token_scores,
                                     const model::Packing& packing, stats::Task task) {
  if (token_scores.size() != packing.tokens.size())
    throw ValidationError("paragraph_scores: score/token count mismatch");
  std::vector<double> sq_sum(packing.n_paragraphs, 0.0);
  std::vector<std::size_t> n_tokens(packing.n_paragraphs, 0);
  for (std::size_t i = 0; i < token_scores.size(); ++i) {
    double s = token_scores[i];
    if (task == stats::Task::B && s < 0.0) s = 0.0;  // negative scores zeroed for B
    int para = packing.tokens[i].paragraph;
    sq_sum[para] += s * s;
    ++n_tokens[para];
  }
  std::vector<double> out(packing.n_paragraphs, 0.0);
  for (std::size_t p = 0; p < out.size(); ++p)
    if (n_tokens[p] > 0) out[p] = sq_sum[p] / std::sqrt(static_cast<double>(n_tokens[p]));
  return out;
}

std::vector<int> rank_paragraphs(const std::vector<double>& scores) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return idx;
}

double precision_at_k(const std::vector<int>& ranking, const std::set<int>& gold,
                      std::size_t k) {
  if (gold.empty()) throw ValidationError("precision_at_k: empty gold set");
  if (k < 1 || k > ranking.size())
    throw ValidationError("precision_at_k: k out of range");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i)
    if (gold.count(ranking[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(k);
}

double precision_at_oracle(const std::vector<int>& ranking, const std::set<int>& gold) {
  return precision_at_k(ranking, gold, gold.size());
}

AlignmentReport alignment_report(const model::ModelBundle& b, const corpus::Corpus& eval_set,
                                 const TargetSpec& target, std::size_t steps) {
  AlignmentReport rep;
  rep.ig_steps = steps;
  for (const auto& d : eval_set.docs) {
    if (!d.gold_rationale || d.gold_rationale->empty()) {
      ++rep.skipped;
      continue;
    }
    AttributionResult r = integrated_gradients(b, d, target, steps);
    AlignmentRow row;
    row.doc_id = d.doc_id;
    row.oracle_k = d.gold_rationale->size();
    row.p_at_oracle = precision_at_oracle(r.ranking, *d.gold_rationale);
    rep.per_doc.push_back(std::move(row));
  }
  rep.n = rep.per_doc.size();
  if (rep.n == 0) return rep;
  double sum = 0.0;
  for (const auto& r : rep.per_doc) sum += r.p_at_oracle;
  rep.mean = sum / static_cast<double>(rep.n);
  double var = 0.0;
  for (const auto& r : rep.per_doc) var += (r.p_at_oracle - rep.mean) * (r.p_at_oracle - rep.mean);
  var /= static_cast<double>(rep.n);
  rep.standard_error = std::sqrt(var) / std::sqrt(static_cast<double>(rep.n));
  return rep;
}

void write_attribution_html(const corpus::Document& d, const AttributionResult& r,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write attribution html: " + path);
  double max_abs = 1e-12;
  for (double s : r.token_scores) max_abs = std::max(max_abs, std::fabs(s));

  out << "<!doctype html><html><head><meta charset=\"utf-8\"><title>" << d.doc_id
      << "</title></head><body>\n";
  out << "<h3>" << d.doc_id << " &mdash; target " << r.target << "</h3>\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", r.completeness_gap);
  out << "<p>steps: " << r.ig_steps << ", completeness gap: " << buf << "</p>\n";

  // token order in r.token_scores follows document order, so walk the
  // document's tokens in parallel
  std::size_t flat = 0;
  for (const auto& para : d.paragraphs) {
    bool gold = d.gold_rationale && d.gold_rationale->count(para.index);
    out << "<p style=\"border-left:4px solid " << (gold ? "#2a7" : "#ddd")
        << ";padding-left:8px\">";
    for (const auto& sent : para.sentences) {
      for (const auto& tok : sent) {
        double a = flat < r.token_scores.size()
                       ? std::fabs(r.token_scores[flat]) / max_abs
                       : 0.0;
        std::snprintf(buf, sizeof buf, "%.3f", a);
        out << "<span style=\"background:rgba(255,140,0," << buf << ")\">" << tok
            << "</span> ";
        ++flat;
      }
    }
    out << "</p>\n";
  }
  out << "</body></html>\n";
}

}  // namespace deconf::attribution
