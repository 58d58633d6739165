#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deconf/corpus.hpp"

namespace deconf::stats {

enum class Task { J, A, B, AB };

Task parse_task(const std::string& s);
std::string task_name(Task t);

// How a corpus is read as a binary labeling for token statistics and tree
// mining. J is the plain binary outcome; A and B are one-vs-rest per
// article (violated resp. alleged); AB is one-vs-one per article (positives
// violated, negatives alleged but not violated, others excluded).
struct LabelView {
  Task task = Task::J;
  std::string article;  // empty for J

  bool one_vs_rest() const { return task == Task::A || task == Task::B; }
  std::string name() const;
};

// Binary label of a document under a view; nullopt = excluded.
std::optional<int> view_label(const LabelView& view, const corpus::Document& d);

// Occurrence-level token/label co-occurrence counts.
class CooccurrenceTable {
 public:
  struct Counts {
    std::size_t pos = 0;
    std::size_t neg = 0;
    std::size_t total() const { return pos + neg; }
  };

  const Counts* lookup(const std::string& token) const;
  std::size_t count(const std::string& token, int label) const;

  std::size_t unique_tokens() const { return counts_.size(); }  // |D|
  std::size_t label_mass(int label) const { return label ? mass_pos_ : mass_neg_; }
  std::size_t total_mass() const { return mass_pos_ + mass_neg_; }
  std::size_t docs(int label) const { return label ? docs_pos_ : docs_neg_; }

  const std::map<std::string, Counts>& entries() const { return counts_; }

  friend CooccurrenceTable build_table(const corpus::Corpus& c, const LabelView& view);

 private:
  std::map<std::string, Counts> counts_;
  std::size_t mass_pos_ = 0, mass_neg_ = 0;
  std::size_t docs_pos_ = 0, docs_neg_ = 0;
};

CooccurrenceTable build_table(const corpus::Corpus& c, const LabelView& view);

struct LmiScore {
  std::string token;
  int label = 1;
  double p_ty = 0.0;
  double pmi = 0.0;
  double lmi = 0.0;
  bool zero_count = false;  // lmi defined as 0 by the x*log(x) limit
};

// LMI(t,y) = p(t,y) * PMI(t,y) with p(t,y) = count(t,y)/|D| and
// PMI = ln( p(t|y) / p(t) ). p(t,y) is used exactly as defined even though
// it is not normalized.
LmiScore lmi(const CooccurrenceTable& table, const std::string& token, int label);

// Class contrast of LMI: |pos - neg| for binary and one-vs-one framings,
// signed pos - neg for one-vs-rest.
double effective_lmi(const CooccurrenceTable& table, const std::string& token,
                     const LabelView& view);

struct ScoredToken {
  std::string token;
  CooccurrenceTable::Counts counts;
  double pmi_pos = 0.0;
  double lmi_pos = 0.0;
  double lmi_neg = 0.0;
  double effective = 0.0;
  double z = 0.0;
};

// Effective-LMI z-scores over the whole token population (population
// standard deviation).
std::vector<ScoredToken> score_tokens(const CooccurrenceTable& table, const LabelView& view);

// (re)computes z over the `effective` fields of the given population
void fill_zscores(std::vector<ScoredToken>& scores);

struct FilterResult {
  std::set<std::string> tokens;
  bool degenerate = false;  // zero spread in the score population
};

FilterResult zscore_filter(const std::vector<ScoredToken>& scores, double z_min);

void write_scores_tsv(const std::vector<ScoredToken>& scores, const LabelView& view,
                      std::ostream& out);

}  // namespace deconf::stats
