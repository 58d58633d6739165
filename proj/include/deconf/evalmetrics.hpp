#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "deconf/stats.hpp"

namespace deconf::evalmetrics {

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  double f1() const {
    std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
};

// Per-document predictions for one evaluation split. For task J,
// `positive` holds a single pseudo-article "J"; for article tasks it holds
// the set of article ids predicted positive at the 0.5 threshold.
struct Prediction {
  std::string doc_id;
  std::set<std::string> positive;
};

struct F1Report {
  double macro = 0.0;
  double micro = 0.0;
  std::map<std::string, double> per_article;
  std::vector<std::string> zero_support;  // articles with F1 defined as 0
};

// Task J: macro over the {violation, non-violation} class pair.
// Tasks A/B/AB: per-article F1 with positives = docs carrying the article
// in the task's target set and everything else negative.
F1Report f1_scores(const std::vector<Prediction>& preds, const corpus::Corpus& gold,
                   stats::Task task);

struct HardF1Report {
  double macro = 0.0;
  std::map<std::string, double> per_article;
  std::vector<std::string> excluded;  // articles with no alleged instances
};

// Hard macro-F1: per article, negatives restricted to documents where the
// article was alleged but not violated; all other documents are excluded
// from that article's confusion.
HardF1Report hard_macro_f1(const std::vector<Prediction>& preds, const corpus::Corpus& gold);

struct TTestResult {
  double t = 0.0;
  std::size_t df = 0;
  double p = 1.0;       // two-sided
  bool degenerate = false;  // zero spread in the differences
};

// Paired two-sided t-test over per-document score pairs (sample standard
// deviation, df = n-1). Zero spread: p = 1 when the mean difference is 0,
// else p -> 0, flagged degenerate.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta I_x(a, b) and the two-sided t-distribution
// tail P(|T| >= |t|); exposed for reuse and oracle testing.
double incomplete_beta(double a, double b, double x);
double t_two_sided_p(double t, double df);

}  // namespace deconf::evalmetrics
