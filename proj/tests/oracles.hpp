// Independent brute-force reference implementations used as oracles. These
// re-derive every quantity from first principles with plain loops and must
// stay decoupled from the library code paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace oracle {

// ---- token/label statistics ------------------------------------------------

struct LabeledDoc {
  std::vector<std::string> tokens;
  int label = 0;
};

struct LmiRef {
  double p_ty = 0.0;
  double pmi = 0.0;
  double lmi = 0.0;
};

inline LmiRef brute_force_lmi(const std::vector<LabeledDoc>& docs, const std::string& token,
                              int label) {
  std::set<std::string> vocab;
  double count_ty = 0, count_t = 0, mass_y = 0, mass_total = 0;
  for (const auto& d : docs) {
    for (const auto& tok : d.tokens) {
      vocab.insert(tok);
      mass_total += 1;
      if (d.label == label) mass_y += 1;
      if (tok == token) {
        count_t += 1;
        if (d.label == label) count_ty += 1;
      }
    }
  }
  LmiRef r;
  r.p_ty = count_ty / static_cast<double>(vocab.size());
  if (count_ty == 0) return r;  // lmi := 0 by the x log x limit
  double p_t_given_y = count_ty / mass_y;
  double p_t = count_t / mass_total;
  r.pmi = std::log(p_t_given_y / p_t);
  r.lmi = r.p_ty * r.pmi;
  return r;
}

// ---- greedy decision tree ---------------------------------------------------

struct RefTree {
  // level-by-level greedy structure: token at each internal node, or empty
  std::string split;
  double weighted_gini = 0.0;
  std::vector<int> docs;  // indices
  std::unique_ptr<RefTree> absent, present;
};

inline double ref_gini(const std::vector<int>& idx, const std::vector<LabeledDoc>& docs) {
  if (idx.empty()) return 0.0;
  double pos = 0;
  for (int i : idx)
    if (docs[i].label == 1) pos += 1;
  double pp = pos / idx.size();
  return 1.0 - pp * pp - (1 - pp) * (1 - pp);
}

inline bool ref_has(const LabeledDoc& d, const std::string& tok) {
  return std::find(d.tokens.begin(), d.tokens.end(), tok) != d.tokens.end();
}

// exhaustive split enumeration minimizing weighted Gini, lexicographic
// tie-break, strict improvement required
inline std::optional<std::string> ref_best_split(const std::vector<int>& idx,
                                                 const std::vector<LabeledDoc>& docs,
                                                 const std::set<std::string>& candidates) {
  double parent = ref_gini(idx, docs);
  std::optional<std::string> best;
  double best_w = 0.0;
  for (const auto& tok : candidates) {
    std::vector<int> in, out;
    for (int i : idx) (ref_has(docs[i], tok) ? in : out).push_back(i);
    if (in.empty() || out.empty()) continue;
    double w = (in.size() * ref_gini(in, docs) + out.size() * ref_gini(out, docs)) /
               static_cast<double>(idx.size());
    if (w >= parent) continue;
    if (!best || w < best_w) {
      best = tok;
      best_w = w;
    }
  }
  return best;
}

inline std::unique_ptr<RefTree> ref_grow(const std::vector<int>& idx,
                                         const std::vector<LabeledDoc>& docs,
                                         const std::set<std::string>& candidates,
                                         std::size_t depth_left) {
  auto node = std::make_unique<RefTree>();
  node->docs = idx;
  if (depth_left == 0 || ref_gini(idx, docs) == 0.0) return node;
  auto split = ref_best_split(idx, docs, candidates);
  if (!split) return node;
  node->split = *split;
  std::vector<int> in, out;
  for (int i : idx) (ref_has(docs[i], *split) ? in : out).push_back(i);
  node->absent = ref_grow(out, docs, candidates, depth_left - 1);
  node->present = ref_grow(in, docs, candidates, depth_left - 1);
  return node;
}

// ---- classification metrics -------------------------------------------------

struct RefConfusion {
  double tp = 0, fp = 0, fn = 0;
  double f1() const { return 2 * tp + fp + fn == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn); }
};

// pred/gold: per doc, set of positive article ids
inline double ref_macro_f1(const std::vector<std::set<std::string>>& pred,
                           const std::vector<std::set<std::string>>& gold,
                           const std::vector<std::string>& articles) {
  double total = 0;
  for (const auto& art : articles) {
    RefConfusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      bool p = pred[i].count(art), g = gold[i].count(art);
      if (p && g) c.tp += 1;
      else if (p) c.fp += 1;
      else if (g) c.fn += 1;
    }
    total += c.f1();
  }
  return total / articles.size();
}

inline double ref_micro_f1(const std::vector<std::set<std::string>>& pred,
                           const std::vector<std::set<std::string>>& gold,
                           const std::vector<std::string>& articles) {
  RefConfusion c;
  for (const auto& art : articles)
    for (std::size_t i = 0; i < pred.size(); ++i) {
      bool p = pred[i].count(art), g = gold[i].count(art);
      if (p && g) c.tp += 1;
      else if (p) c.fp += 1;
      else if (g) c.fn += 1;
    }
  return c.f1();
}

inline double ref_hard_macro_f1(const std::vector<std::set<std::string>>& pred,
                                const std::vector<std::set<std::string>>& alleged,
                                const std::vector<std::set<std::string>>& violated,
                                const std::vector<std::string>& articles) {
  double total = 0;
  std::size_t used = 0;
  for (const auto& art : articles) {
    RefConfusion c;
    bool any = false;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      bool a = alleged[i].count(art), v = violated[i].count(art);
      if (!a && !v) continue;
      any = true;
      bool p = pred[i].count(art);
      if (v && p) c.tp += 1;
      else if (v) c.fn += 1;
      else if (p) c.fp += 1;
    }
    if (!any) continue;
    total += c.f1();
    ++used;
  }
  return used == 0 ? 0.0 : total / used;
}

inline double ref_precision_at_k(const std::vector<int>& ranking, const std::set<int>& gold,
                                 std::size_t k) {
  double hits = 0;
  for (std::size_t i = 0; i < k; ++i)
    if (gold.count(ranking[i])) hits += 1;
  return hits / static_cast<double>(k);
}

// ---- t distribution ----------------------------------------------------------

// two-sided p via Simpson quadrature of the t density on [|t|, |t| + tail]
inline double ref_t_two_sided_p(double t, double df) {
  double a = std::fabs(t);
  auto pdf = [df](double x) {
    double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) /
               std::sqrt(df * 3.14159265358979323846);
    return c * std::pow(1 + x * x / df, -(df + 1) / 2);
  };
  double upper = a + 400.0;  // density is negligible beyond
  int n = 200000;
  double h = (upper - a) / n;
  double s = pdf(a) + pdf(upper);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4.0 : 2.0);
  double tail = s * h / 3.0;
  return 2.0 * tail;
}

}  // namespace oracle
