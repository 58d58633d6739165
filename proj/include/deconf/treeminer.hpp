#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deconf/stats.hpp"

namespace deconf::treeminer {

// Instances are binary unigram-presence vectors represented as token sets.
struct Instance {
  std::set<std::string> tokens;
  int label = 0;  // 0/1
};

struct TreeNode {
  std::string split_token;  // empty at leaves
  double gini = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  std::unique_ptr<TreeNode> absent;   // token not present
  std::unique_ptr<TreeNode> present;  // token present

  bool is_leaf() const { return split_token.empty(); }
  int predicted() const { return n_pos > n_neg ? 1 : 0; }  // tie -> 0
};

struct DecisionTree {
  std::size_t max_depth = 3;
  std::unique_ptr<TreeNode> root;

  int predict(const std::set<std::string>& tokens) const;
  std::size_t depth() const;
  std::set<std::string> node_tokens() const;
};

// Greedy Gini-minimizing splits on token presence. Candidate tokens are
// tried in lexicographic order and ties keep the smallest token, which
// makes training deterministic. Splitting stops at max_depth, at a pure
// node, or when no split reduces impurity.
DecisionTree train_tree(const std::vector<Instance>& instances,
                        const std::set<std::string>& candidate_tokens,
                        std::size_t max_depth);

struct IterationRecord {
  std::size_t iteration = 0;
  std::set<std::string> extracted;  // tokens appearing in this iteration's tree
  double accuracy = 0.0;            // training accuracy
  double macro_f1 = 0.0;            // training macro-F1
};

struct MiningRun {
  stats::LabelView view;
  double z_min = 2.0;
  std::size_t max_depth = 3;
  std::set<std::string> candidate_vocabulary;  // after the LMI z-filter
  std::map<std::string, double> token_z;       // z of each candidate
  std::vector<IterationRecord> iterations;
  std::set<std::string> removed;  // union of extracted tokens
};

// Iterated mining: filter candidates by effective-LMI z-score, then train a
// tree, extract all of its tokens, remove them from the feature set, and
// repeat until max_iters or no split is found.
MiningRun mine_candidates(const corpus::Corpus& c, const stats::LabelView& view,
                          std::size_t max_iters, std::size_t depth, double z_min);

enum class Category { Spurious, Genuine, Unreviewed };

Category parse_category(const std::string& s);
std::string category_name(Category c);

struct LexiconEntry {
  Category category = Category::Unreviewed;
  std::string note;
  std::string view;       // provenance
  std::size_t iteration = 0;
  double z = 0.0;
};

struct SpuriousLexicon {
  std::map<std::string, LexiconEntry> entries;

  // tokens with category == spurious, in deterministic (sorted) order;
  // this ordering defines the vocabulary-discriminator target layout
  std::vector<std::string> spurious_tokens() const;
};

// Review TSV: token, view, iteration, z, category, note. Export writes
// category = unreviewed; the expert fills it in offline and the file is
// imported back.
void export_review(const std::vector<MiningRun>& runs, const std::string& path);
SpuriousLexicon import_review(const std::string& path);

}  // namespace deconf::treeminer
