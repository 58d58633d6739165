#include "deconf/treeminer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "deconf/errors.hpp"

namespace deconf::treeminer {

namespace {

double gini(std::size_t pos, std::size_t neg) {
  std::size_t n = pos + neg;
  if (n == 0) return 0.0;
  double pp = static_cast<double>(pos) / n;
  double pn = static_cast<double>(neg) / n;
  return 1.0 - pp * pp - pn * pn;
}

struct SplitChoice {
  std::string token;
  double weighted_gini = 0.0;
};

// Best split by weighted child Gini; candidates visited in lexicographic
// order, strict improvement required, so the smallest token wins ties.
std::optional<SplitChoice> best_split(const std::vector<const Instance*>& docs,
                                      const std::set<std::string>& candidates) {
  std::size_t pos = 0, neg = 0;
  for (const auto* d : docs) (d->label ? pos : neg)++;
  double parent = gini(pos, neg);
  std::optional<SplitChoice> best;
  for (const auto& tok : candidates) {
    std::size_t p_pos = 0, p_neg = 0;
    for (const auto* d : docs)
      if (d->tokens.count(tok)) (d->label ? p_pos : p_neg)++;
    std::size_t a_pos = pos - p_pos, a_neg = neg - p_neg;
    std::size_t n_present = p_pos + p_neg;
    std::size_t n_absent = a_pos + a_neg;
    if (n_present == 0 || n_absent == 0) continue;
    double w = (n_absent * gini(a_pos, a_neg) + n_present * gini(p_pos, p_neg)) /
               static_cast<double>(docs.size());
    if (w >= parent) continue;  // must strictly reduce impurity
    if (!best || w < best->weighted_gini) best = SplitChoice{tok, w};
  }
  return best;
}

std::unique_ptr<TreeNode> grow(const std::vector<const Instance*>& docs,
                               const std::set<std::string>& candidates,
                               std::size_t depth_left) {
  auto node = std::make_unique<TreeNode>();
  for (const auto* d : docs) (d->label ? node->n_pos : node->n_neg)++;
  node->gini = gini(node->n_pos, node->n_neg);
  if (depth_left == 0 || node->gini == 0.0) return node;
  auto split = best_split(docs, candidates);
  if (!split) return node;
  node->split_token = split->token;
  std::vector<const Instance*> absent, present;
  for (const auto* d : docs)
    (d->tokens.count(split->token) ? present : absent).push_back(d);
  node->absent = grow(absent, candidates, depth_left - 1);
  node->present = grow(present, candidates, depth_left - 1);
  return node;
}

void collect_tokens(const TreeNode* n, std::set<std::string>& out) {
  if (!n || n->is_leaf()) return;
  out.insert(n->split_token);
  collect_tokens(n->absent.get(), out);
  collect_tokens(n->present.get(), out);
}

std::size_t node_depth(const TreeNode* n) {
  if (!n || n->is_leaf()) return 0;
  return 1 + std::max(node_depth(n->absent.get()), node_depth(n->present.get()));
}

}  // namespace

int DecisionTree::predict(const std::set<std::string>& tokens) const {
  const TreeNode* n = root.get();
  while (n && !n->is_leaf()) n = tokens.count(n->split_token) ? n->present.get() : n->absent.get();
  return n ? n->predicted() : 0;
}

std::size_t DecisionTree::depth() const { return node_depth(root.get()); }

std::set<std::string> DecisionTree::node_tokens() const {
  std::set<std::string> out;
  collect_tokens(root.get(), out);
  return out;
}

DecisionTree train_tree(const std::vector<Instance>& instances,
                        const std::set<std::string>& candidate_tokens,
                        std::size_t max_depth) {
  if (instances.size() < 2) throw ValidationError("train_tree: need at least 2 instances");
  bool has_pos = false, has_neg = false;
  for (const auto& d : instances) (d.label ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) throw ValidationError("train_tree: single-class input");
  std::vector<const Instance*> ptrs;
  ptrs.reserve(instances.size());
  for (const auto& d : instances) ptrs.push_back(&d);
  DecisionTree t;
  t.max_depth = max_depth;
  t.root = grow(ptrs, candidate_tokens, max_depth);
  return t;
}

namespace {

struct TreeMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

TreeMetrics evaluate(const DecisionTree& t, const std::vector<Instance>& docs) {
  std::size_t correct = 0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& d : docs) {
    int pred = t.predict(d.tokens);
    if (pred == d.label) ++correct;
    if (pred == 1 && d.label == 1) ++tp;
    else if (pred == 1) ++fp;
    else if (d.label == 1) ++fn;
    else ++tn;
  }
  auto f1 = [](std::size_t tp_, std::size_t fp_, std::size_t fn_) {
    std::size_t denom = 2 * tp_ + fp_ + fn_;
    return denom == 0 ? 0.0 : 2.0 * tp_ / static_cast<double>(denom);
  };
  TreeMetrics m;
  m.accuracy = docs.empty() ? 0.0 : static_cast<double>(correct) / docs.size();
  m.macro_f1 = 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp));  // positive + negative class views
  return m;
}

}  // namespace

MiningRun mine_candidates(const corpus::Corpus& c, const stats::LabelView& view,
                          std::size_t max_iters, std::size_t depth, double z_min) {
  MiningRun run;
  run.view = view;
  run.z_min = z_min;
  run.max_depth = depth;

  auto table = stats::build_table(c, view);
  auto scored = stats::score_tokens(table, view);
  auto filtered = stats::zscore_filter(scored, z_min);
  run.candidate_vocabulary = filtered.tokens;
  for (const auto& s : scored)
    if (run.candidate_vocabulary.count(s.token)) run.token_z[s.token] = s.z;
  if (run.candidate_vocabulary.empty()) {
    if (max_iters > 0)
      throw ValidationError("mine_candidates: no candidate tokens survive the z filter for view " +
                            view.name());
    return run;
  }

  std::vector<Instance> instances;
  for (const auto& d : c.docs) {
    auto y = stats::view_label(view, d);
    if (!y) continue;
    Instance inst;
    inst.label = *y;
    for (const auto& tok : d.all_tokens()) inst.tokens.insert(tok);
    instances.push_back(std::move(inst));
  }

  std::set<std::string> remaining = run.candidate_vocabulary;
  for (std::size_t it = 0; it < max_iters && !remaining.empty(); ++it) {
    DecisionTree tree = train_tree(instances, remaining, depth);
    auto extracted = tree.node_tokens();
    if (extracted.empty()) break;  // no impurity-reducing split left
    IterationRecord rec;
    rec.iteration = it + 1;
    rec.extracted = extracted;
    TreeMetrics m = evaluate(tree, instances);
    rec.accuracy = m.accuracy;
    rec.macro_f1 = m.macro_f1;
    run.iterations.push_back(std::move(rec));
    for (const auto& tok : extracted) {
      remaining.erase(tok);
      run.removed.insert(tok);
    }
  }
  return run;
}

Category parse_category(const std::string& s) {
  if (s == "spurious") return Category::Spurious;
  if (s == "genuine") return Category::Genuine;
  if (s == "unreviewed" || s.empty()) return Category::Unreviewed;
  throw ValidationError("invalid category '" + s + "'");
}

std::string category_name(Category c) {
  switch (c) {
    case Category::Spurious: return "spurious";
    case Category::Genuine: return "genuine";
    case Category::Unreviewed: return "unreviewed";
  }
  return "?";
}

std::vector<std::string> SpuriousLexicon::spurious_tokens() const {
  std::vector<std::string> out;
  for (const auto& [tok, e] : entries)
    if (e.category == Category::Spurious) out.push_back(tok);
  return out;  // std::map iteration is already sorted
}

void export_review(const std::vector<MiningRun>& runs, const std::string& path) {
  bool any = false;
  for (const auto& r : runs) any = any || !r.iterations.empty();
  if (!any) throw ValidationError("export_review: no mined tokens to review");
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write review file: " + path);
  out << "token\tview\titeration\tz\tcategory\tnote\n";
  for (const auto& run : runs) {
    for (const auto& rec : run.iterations)
      for (const auto& tok : rec.extracted) {
        auto it = run.token_z.find(tok);
        out << tok << '\t' << run.view.name() << '\t' << rec.iteration << '\t'
            << (it == run.token_z.end() ? 0.0 : it->second) << "\tunreviewed\t\n";
      }
  }
}

SpuriousLexicon import_review(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open review file: " + path);
  SpuriousLexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("token\t", 0) == 0) continue;  // header
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    while (fields.size() < 6) fields.emplace_back();
    if (fields[0].empty())
      throw ValidationError("review file " + path + " line " + std::to_string(line_no) +
                            ": empty token");
    LexiconEntry e;
    e.view = fields[1];
    try {
      e.iteration = fields[2].empty() ? 0 : std::stoul(fields[2]);
      e.z = fields[3].empty() ? 0.0 : std::stod(fields[3]);
    } catch (const std::exception&) {
      throw ValidationError("review file " + path + " line " + std::to_string(line_no) +
                            ": bad iteration or z value");
    }
    try {
      e.category = parse_category(fields[4]);
    } catch (const ValidationError& err) {
      throw ValidationError("review file " + path + " line " + std::to_string(line_no) + ": " +
                            err.what());
    }
    e.note = fields[5];
    lex.entries[fields[0]] = std::move(e);  // one entry per token; last wins
  }
  return lex;
}

}  // namespace deconf::treeminer
