#pragma once

#include <set>
#include <string>
#include <vector>

#include "deconf/model.hpp"

namespace deconf::attribution {

// Which output logit to attribute. Task J uses the single outcome logit;
// article tasks name an article (empty = the article with the highest
// predicted logit for the document).
struct TargetSpec {
  std::string article;
};

struct AttributionResult {
  std::string doc_id;
  std::string target;
  std::vector<double> token_scores;      // per packed token, document order
  std::vector<double> paragraph_scores;  // >= 0, one per paragraph
  std::vector<int> ranking;              // paragraph indices, best first
  std::size_t ig_steps = 0;
  double completeness_gap = 0.0;
};

// Core path integration: scalar head over per-packet embedding matrices,
// scores from the zero baseline to the inputs with the midpoint Riemann
// rule. Returns one score per input row, grouped like the inputs.
using HeadFn = std::function<diffcore::Value(const std::vector<diffcore::Value>&)>;
std::vector<std::vector<double>> path_integrated_scores(
    const std::vector<diffcore::Tensor>& inputs, const HeadFn& head, std::size_t steps,
    double* completeness_gap);

// Integrated gradients from the zero-embedding baseline to the input
// embeddings (midpoint Riemann rule, m steps). Token score = (input -
// baseline) embedding row dotted with the step-averaged gradient. The
// completeness gap |sum(scores) - (F(x) - F(baseline))| is always recorded.
AttributionResult integrated_gradients(const model::ModelBundle& b,
                                       const corpus::Document& d, const TargetSpec& target,
                                       std::size_t steps);

// Paragraph aggregate: negative token scores are zeroed first for task B
// only, then score(p) = sum of squared token scores / sqrt(token count).
std::vector<double> paragraph_scores(const std::vector<double>& token_scores,
                                     const model::Packing& packing, stats::Task task);

// paragraph indices sorted by score descending, ties by ascending index
std::vector<int> rank_paragraphs(const std::vector<double>& paragraph_scores);

double precision_at_k(const std::vector<int>& ranking, const std::set<int>& gold,
                      std::size_t k);

// precision@k with k = |gold|
double precision_at_oracle(const std::vector<int>& ranking, const std::set<int>& gold);

struct AlignmentRow {
  std::string doc_id;
  double p_at_oracle = 0.0;
  std::size_t oracle_k = 0;
};

struct AlignmentReport {
  double mean = 0.0;
  double standard_error = 0.0;  // population std / sqrt(n)
  std::size_t n = 0;
  std::size_t skipped = 0;  // documents without gold rationales
  std::size_t ig_steps = 0;
  std::string ig_baseline = "zero-embedding";
  std::vector<AlignmentRow> per_doc;
};

AlignmentReport alignment_report(const model::ModelBundle& b, const corpus::Corpus& eval_set,
                                 const TargetSpec& target, std::size_t steps);

// static visualization: one span per token, background opacity ~ |score|
void write_attribution_html(const corpus::Document& d, const AttributionResult& r,
                            const std::string& path);

}  // namespace deconf::attribution
