#include "deconf/evalmetrics.hpp"

#include <cmath>
#include <stdexcept>

#include "deconf/errors.hpp"

namespace deconf::evalmetrics {

namespace {

double lgamma_series(double x) {
  static const double cof[6] = {76.18009172947146,  -86.50532032941677, 24.01409824083091,
                                -1.231739572450155, 0.1208650973866179e-2,
                                -0.5395239384953e-5};
  double y = x;
  double tmp = x + 5.5;
  tmp -= (x + 0.5) * std::log(tmp);
  double ser = 1.000000000190015;
  for (int j = 0; j < 6; ++j) ser += cof[j] / ++y;
  return -tmp + std::log(2.5066282746310005 * ser / x);
}

// continued fraction for the incomplete beta (Lentz's method)
double betacf(double a, double b, double x) {
  constexpr double kFpMin = 1e-30;
  constexpr double kEps = 1e-12;
  constexpr int kMaxIter = 300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  int m = 1;
  for (; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  if (m > kMaxIter) throw std::runtime_error("incomplete_beta: continued fraction did not converge");
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete_beta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  double bt = std::exp(lgamma_series(a + b) - lgamma_series(a) - lgamma_series(b) +
                       a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double t_two_sided_p(double t, double df) {
  if (df <= 0.0) throw std::invalid_argument("t_two_sided_p: df must be positive");
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

F1Report f1_scores(const std::vector<Prediction>& preds, const corpus::Corpus& gold,
                   stats::Task task) {
  if (preds.empty()) throw ValidationError("f1_scores: empty evaluation set");

  auto gold_set = [&](const corpus::Document& d) -> std::set<std::string> {
    switch (task) {
      case stats::Task::J:
        return d.labels.j && *d.labels.j ? std::set<std::string>{"J"} : std::set<std::string>{};
      case stats::Task::B:
        return d.labels.alleged;
      case stats::Task::A:
      case stats::Task::AB:
        return d.labels.violated;
    }
    return {};
  };

  std::vector<std::string> articles =
      task == stats::Task::J ? std::vector<std::string>{"J"} : gold.article_registry;

  std::map<std::string, Confusion> conf;
  for (const auto& pred : preds) {
    const corpus::Document* doc = gold.find(pred.doc_id);
    if (!doc) throw ValidationError("f1_scores: prediction for unknown doc '" + pred.doc_id + "'");
    std::set<std::string> g = gold_set(*doc);
    for (const auto& art : articles) {
      bool predicted = pred.positive.count(art) > 0;
      bool actual = g.count(art) > 0;
      Confusion& cm = conf[art];
      if (predicted && actual) ++cm.tp;
      else if (predicted) ++cm.fp;
      else if (actual) ++cm.fn;
      else ++cm.tn;
    }
  }

  F1Report r;
  if (task == stats::Task::J) {
    // macro over the positive and negative class views of the binary task
    const Confusion& cm = conf["J"];
    Confusion neg{cm.tn, cm.fn, cm.fp, cm.tp};
    r.per_article["violation"] = cm.f1();
    r.per_article["non-violation"] = neg.f1();
    r.macro = 0.5 * (cm.f1() + neg.f1());
    std::size_t pooled_tp = cm.tp + neg.tp, pooled_fp = cm.fp + neg.fp, pooled_fn = cm.fn + neg.fn;
    Confusion pooled{pooled_tp, pooled_fp, pooled_fn, 0};
    r.micro = pooled.f1();
    return r;
  }

  double macro_sum = 0.0;
  Confusion pooled;
  for (const auto& art : articles) {
    const Confusion& cm = conf[art];
    double f1 = cm.f1();
    if (cm.tp == 0 && cm.fp == 0 && cm.fn == 0) r.zero_support.push_back(art);
    r.per_article[art] = f1;
    macro_sum += f1;
    pooled.tp += cm.tp;
    pooled.fp += cm.fp;
    pooled.fn += cm.fn;
  }
  r.macro = macro_sum / static_cast<double>(articles.size());
  r.micro = pooled.f1();
  return r;
}

HardF1Report hard_macro_f1(const std::vector<Prediction>& preds, const corpus::Corpus& gold) {
  if (preds.empty()) throw ValidationError("hard_macro_f1: empty evaluation set");
  std::map<std::string, Confusion> conf;
  std::map<std::string, std::size_t> alleged_count;
  for (const auto& pred : preds) {
    const corpus::Document* doc = gold.find(pred.doc_id);
    if (!doc)
      throw ValidationError("hard_macro_f1: prediction for unknown doc '" + pred.doc_id + "'");
    for (const auto& art : gold.article_registry) {
      bool alleged = doc->labels.alleged.count(art) > 0;
      bool violated = doc->labels.violated.count(art) > 0;
      if (!alleged && !violated) continue;  // excluded from this article's confusion
      ++alleged_count[art];
      bool predicted = pred.positive.count(art) > 0;
      Confusion& cm = conf[art];
      if (violated) (predicted ? cm.tp : cm.fn)++;
      else (predicted ? cm.fp : cm.tn)++;
    }
  }
  HardF1Report r;
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& art : gold.article_registry) {
    if (alleged_count[art] == 0) {
      r.excluded.push_back(art);
      continue;
    }
    double f1 = conf[art].f1();
    r.per_article[art] = f1;
    sum += f1;
    ++used;
  }
  r.macro = used == 0 ? 0.0 : sum / static_cast<double>(used);
  return r;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("paired_t_test: length mismatch");
  if (a.size() < 2) throw ValidationError("paired_t_test: need at least 2 pairs");
  std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = a[i] - b[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);  // sample variance
  TTestResult r;
  r.df = n - 1;
  if (var == 0.0) {
    r.degenerate = true;
    r.t = mean == 0.0 ? 0.0 : (mean > 0 ? 1e308 : -1e308);
    r.p = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  r.p = t_two_sided_p(r.t, static_cast<double>(r.df));
  return r;
}

}  // namespace deconf::evalmetrics
