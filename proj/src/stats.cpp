#include "deconf/stats.hpp"

#include <cmath>
#include <ostream>

#include "deconf/errors.hpp"

namespace deconf::stats {

Task parse_task(const std::string& s) {
  if (s == "J" || s == "j") return Task::J;
  if (s == "A" || s == "a") return Task::A;
  if (s == "B" || s == "b") return Task::B;
  if (s == "AB" || s == "ab" || s == "A|B") return Task::AB;
  throw ValidationError("unknown task '" + s + "' (expected J, A, B or AB)");
}

std::string task_name(Task t) {
  switch (t) {
    case Task::J: return "J";
    case Task::A: return "A";
    case Task::B: return "B";
    case Task::AB: return "AB";
  }
  return "?";
}

std::string LabelView::name() const {
  return article.empty() ? task_name(task) : task_name(task) + ":" + article;
}

std::optional<int> view_label(const LabelView& view, const corpus::Document& d) {
  switch (view.task) {
    case Task::J:
      if (!d.labels.j) return std::nullopt;
      return *d.labels.j;
    case Task::B:
      return d.labels.alleged.count(view.article) ? 1 : 0;
    case Task::A:
      return d.labels.violated.count(view.article) ? 1 : 0;
    case Task::AB:
      if (d.labels.violated.count(view.article)) return 1;
      if (d.labels.alleged.count(view.article)) return 0;
      return std::nullopt;  // article never alleged: excluded
  }
  return std::nullopt;
}

const CooccurrenceTable::Counts* CooccurrenceTable::lookup(const std::string& token) const {
  auto it = counts_.find(token);
  return it == counts_.end() ? nullptr : &it->second;
}

std::size_t CooccurrenceTable::count(const std::string& token, int label) const {
  const Counts* c = lookup(token);
  if (!c) return 0;
  return label ? c->pos : c->neg;
}

CooccurrenceTable build_table(const corpus::Corpus& c, const LabelView& view) {
  CooccurrenceTable t;
  for (const auto& d : c.docs) {
    auto y = view_label(view, d);
    if (!y) continue;
    if (*y) ++t.docs_pos_; else ++t.docs_neg_;
    for (const auto& p : d.paragraphs)
      for (const auto& s : p.sentences)
        for (const auto& tok : s) {
          auto& e = t.counts_[tok];
          if (*y) { ++e.pos; ++t.mass_pos_; } else { ++e.neg; ++t.mass_neg_; }
        }
  }
  if (t.docs_pos_ == 0 || t.docs_neg_ == 0)
    throw ValidationError("build_table: view " + view.name() +
                          " has an empty positive or negative class");
  return t;
}

LmiScore lmi(const CooccurrenceTable& table, const std::string& token, int label) {
  const auto* c = table.lookup(token);
  LmiScore s;
  s.token = token;
  s.label = label;
  std::size_t cty = c ? (label ? c->pos : c->neg) : 0;
  s.p_ty = static_cast<double>(cty) / static_cast<double>(table.unique_tokens());
  if (cty == 0) {
    // x*log(x) -> 0: define LMI = 0 rather than propagate -inf
    s.zero_count = true;
    s.pmi = 0.0;
    s.lmi = 0.0;
    return s;
  }
  double p_t_given_y = static_cast<double>(cty) / static_cast<double>(table.label_mass(label));
  double p_t = static_cast<double>(c->total()) / static_cast<double>(table.total_mass());
  s.pmi = std::log(p_t_given_y / p_t);
  s.lmi = s.p_ty * s.pmi;
  return s;
}

double effective_lmi(const CooccurrenceTable& table, const std::string& token,
                     const LabelView& view) {
  double pos = lmi(table, token, 1).lmi;
  double neg = lmi(table, token, 0).lmi;
  double diff = pos - neg;
  return view.one_vs_rest() ? diff : std::fabs(diff);
}

std::vector<ScoredToken> score_tokens(const CooccurrenceTable& table, const LabelView& view) {
  std::vector<ScoredToken> out;
  out.reserve(table.entries().size());
  for (const auto& [tok, counts] : table.entries()) {
    ScoredToken s;
    s.token = tok;
    s.counts = counts;
    LmiScore lp = lmi(table, tok, 1);
    LmiScore ln = lmi(table, tok, 0);
    s.pmi_pos = lp.pmi;
    s.lmi_pos = lp.lmi;
    s.lmi_neg = ln.lmi;
    double diff = lp.lmi - ln.lmi;
    s.effective = view.one_vs_rest() ? diff : std::fabs(diff);
    out.push_back(std::move(s));
  }
  fill_zscores(out);
  return out;
}

void fill_zscores(std::vector<ScoredToken>& scores) {
  if (scores.empty()) return;
  double mean = 0.0;
  for (const auto& s : scores) mean += s.effective;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (const auto& s : scores) var += (s.effective - mean) * (s.effective - mean);
  var /= static_cast<double>(scores.size());  // population variance
  double sd = std::sqrt(var);
  for (auto& s : scores) s.z = sd > 0.0 ? (s.effective - mean) / sd : 0.0;
}

FilterResult zscore_filter(const std::vector<ScoredToken>& scores, double z_min) {
  FilterResult r;
  if (scores.size() < 2) {
    r.degenerate = true;
    return r;
  }
  bool spread = false;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i].effective != scores[0].effective) { spread = true; break; }
  if (!spread) {
    r.degenerate = true;
    return r;
  }
  for (const auto& s : scores)
    if (s.z >= z_min) r.tokens.insert(s.token);
  return r;
}

void write_scores_tsv(const std::vector<ScoredToken>& scores, const LabelView& view,
                      std::ostream& out) {
  out << "token\tlabel_view\tcount_pos\tcount_neg\tpmi_pos\tlmi_pos\tlmi_neg"
         "\teffective_lmi\tz\n";
  for (const auto& s : scores) {
    out << s.token << '\t' << view.name() << '\t' << s.counts.pos << '\t' << s.counts.neg
        << '\t' << s.pmi_pos << '\t' << s.lmi_pos << '\t' << s.lmi_neg << '\t'
        << s.effective << '\t' << s.z << '\n';
  }
}

}  // namespace deconf::stats
