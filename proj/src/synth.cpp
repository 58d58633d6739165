#include <algorithm>
#include <string>
#include <vector>

#include "deconf/corpus.hpp"
#include "deconf/errors.hpp"
#include "deconf/rng.hpp"

namespace deconf::corpus {

namespace {

using diffcore::RngStream;

const char* kStateNames[] = {"arcadia",  "borduria",    "cassia",    "drassena",
                             "elbonia",  "florin",      "grandfen",  "hyrkania",
                             "illyria",  "jotunheim",   "krakozhia", "latveria"};

std::string num_token(const std::string& prefix, std::size_t i) {
  return prefix + std::to_string(i);
}

struct SynthVocab {
  std::vector<std::vector<std::string>> topical;  // per article
  std::vector<std::string> outcome_pos;
  std::vector<std::string> outcome_neg;
  std::vector<std::string> decoy;
  std::vector<std::string> filler;
  std::vector<std::string> states;
  std::vector<std::string> ruling;  // state-keyed outcome markers
};

SynthVocab build_vocab(const SynthSpec& spec) {
  SynthVocab v;
  std::size_t groups = spec.n_articles + 2;
  std::size_t per_group = std::max<std::size_t>(4, spec.genuine_vocab / groups);
  char article_tag = 'a';
  for (std::size_t a = 0; a < spec.n_articles; ++a) {
    std::vector<std::string> g;
    for (std::size_t i = 0; i < per_group; ++i)
      g.push_back(num_token(std::string("topic") + static_cast<char>(article_tag + a), i));
    v.topical.push_back(std::move(g));
  }
  for (std::size_t i = 0; i < per_group; ++i) {
    v.outcome_pos.push_back(num_token("gainword", i));
    v.outcome_neg.push_back(num_token("failword", i));
  }
  for (std::size_t i = 0; i < spec.decoy_vocab; ++i) v.decoy.push_back(num_token("decoyword", i));
  for (std::size_t i = 0; i < spec.filler_vocab; ++i) v.filler.push_back(num_token("filler", i));
  for (std::size_t i = 0; i < spec.n_states; ++i) v.states.push_back(kStateNames[i % 12]);
  for (std::size_t i = 0; i < spec.n_states; ++i) v.ruling.push_back(num_token("ruling", i));
  return v;
}

const std::string& pick(const std::vector<std::string>& pool, RngStream& rng) {
  return pool[rng.uniform_int(pool.size())];
}

std::string join_sentence(const std::vector<std::string>& toks) {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s.push_back(' ');
    s += toks[i];
  }
  return s;
}

std::string join_paragraph(const std::vector<std::vector<std::string>>& sents) {
  std::string s;
  for (const auto& sent : sents) {
    s += join_sentence(sent);
    s += ". ";
  }
  if (!s.empty()) s.pop_back();
  return s;
}

std::vector<std::string> filler_sentence(const SynthVocab& v, RngStream& rng,
                                         std::size_t lo, std::size_t hi) {
  std::size_t n = lo + rng.uniform_int(hi - lo + 1);
  std::vector<std::string> toks;
  for (std::size_t i = 0; i < n; ++i) toks.push_back(pick(v.filler, rng));
  return toks;
}

}  // namespace

std::vector<std::string> synth_decoy_tokens(const SynthSpec& spec) {
  return build_vocab(spec).decoy;
}

std::vector<std::string> synth_state_codes(const SynthSpec& spec) {
  auto states = build_vocab(spec).states;
  std::sort(states.begin(), states.end());
  return states;
}

Corpus synthesize_corpus(const SynthSpec& spec) {
  if (spec.decoy_label_corr < 0.0 || spec.decoy_label_corr > 1.0)
    throw ValidationError("synthesize_corpus: decoy_label_corr must be in [0,1]");
  if (spec.state_skew < 0.0 || spec.state_skew > 1.0)
    throw ValidationError("synthesize_corpus: state_skew must be in [0,1]");
  if (spec.n_articles == 0 || spec.n_articles > default_article_registry().size())
    throw ValidationError("synthesize_corpus: n_articles must be in 1..10");
  if (spec.n_states < 2 || spec.n_states > 12)
    throw ValidationError("synthesize_corpus: n_states must be in 2..12");

  SynthVocab vocab = build_vocab(spec);
  Corpus c;
  c.article_registry = default_article_registry();
  std::vector<std::string> articles(c.article_registry.begin(),
                                    c.article_registry.begin() + spec.n_articles);

  for (std::size_t di = 0; di < spec.n_docs; ++di) {
    std::string doc_id = "synth-" + std::to_string(spec.seed) + "-" + std::to_string(di);
    RngStream rng = diffcore::make_stream(spec.seed, "synthdoc:" + std::to_string(di));

    Document d;
    d.doc_id = doc_id;
    // label-skewed categorical state: each state carries its own outcome
    // prior, spread over [0.5 - 0.45*skew, 0.5 + 0.45*skew]; state-keyed
    // ruling pairs below add a joint state-label interaction
    std::size_t state_idx = rng.uniform_int(spec.n_states);
    double offset = spec.n_states == 1
                        ? 0.0
                        : -0.45 + 0.9 * static_cast<double>(state_idx) /
                                      static_cast<double>(spec.n_states - 1);
    double p_positive = 0.5 + spec.state_skew * offset;
    d.state = vocab.states[state_idx];
    int label = rng.bernoulli(p_positive) ? 1 : 0;
    d.labels.j = label;

    for (const auto& a : articles)
      if (rng.bernoulli(0.3)) d.labels.alleged.insert(a);
    if (d.labels.alleged.empty())
      d.labels.alleged.insert(articles[rng.uniform_int(articles.size())]);
    if (label == 1) {
      for (const auto& a : d.labels.alleged)
        if (rng.bernoulli(0.7)) d.labels.violated.insert(a);
      if (d.labels.violated.empty()) {
        std::vector<std::string> pool(d.labels.alleged.begin(), d.labels.alleged.end());
        d.labels.violated.insert(pool[rng.uniform_int(pool.size())]);
      }
    }

    // paragraph 0: procedural boilerplate; carries the decoy and the state
    // token but never genuine signal
    auto ruling_for = [&](RngStream& r) {
      return rng.bernoulli(0.95)
                 ? vocab.ruling[(state_idx + (label ? spec.n_states / 2 : 0)) % spec.n_states]
                 : vocab.ruling[r.uniform_int(spec.n_states)];
    };
    std::vector<std::vector<std::string>> para0;
    {
      std::vector<std::string> s1 = filler_sentence(vocab, rng, 2, 3);
      s1.insert(s1.begin() + rng.uniform_int(s1.size() + 1), d.state);
      double p_decoy = label == 1 ? spec.decoy_label_corr : 1.0 - spec.decoy_label_corr;
      if (rng.bernoulli(p_decoy)) {
        const std::string& decoy = vocab.decoy[rng.uniform_int(vocab.decoy.size())];
        s1.insert(s1.begin() + rng.uniform_int(s1.size() + 1), decoy);
      }
      if (rng.bernoulli(spec.state_skew)) {
        std::size_t at = rng.uniform_int(s1.size() + 1);
        s1.insert(s1.begin() + at, ruling_for(rng));
        s1.insert(s1.begin() + at, d.state);
      }
      para0.push_back(std::move(s1));
    }

    // one gold paragraph per alleged article (capped) holding topical tokens
    // for the article plus outcome-flavored tokens. A quarter of the outcome
    // draws flip class, keeping the genuine signal informative but imperfect
    // so that shortcut signals stay attractive, as in real fact statements.
    std::vector<std::string> gold_articles(d.labels.alleged.begin(), d.labels.alleged.end());
    if (gold_articles.size() > 3) gold_articles.resize(3);
    std::vector<std::vector<std::vector<std::string>>> gold_paras;
    for (const auto& a : gold_articles) {
      std::size_t ai = static_cast<std::size_t>(
          std::find(articles.begin(), articles.end(), a) - articles.begin());
      bool art_pos = d.labels.violated.count(a) > 0;
      std::vector<std::vector<std::string>> sents;
      for (int si = 0; si < 2; ++si) {
        std::vector<std::string> toks;
        for (int k = 0; k < 2; ++k) toks.push_back(pick(vocab.topical[ai], rng));
        for (int k = 0; k < 3; ++k) {
          bool flip = rng.bernoulli(0.32);
          bool use_pos = art_pos != flip;
          toks.push_back(pick(use_pos ? vocab.outcome_pos : vocab.outcome_neg, rng));
        }
        for (int k = 0; k < 2; ++k) toks.push_back(pick(vocab.filler, rng));
        if (rng.bernoulli(0.40)) toks.push_back(d.state);  // respondent named in facts
        diffcore::shuffle(toks, rng);
        sents.push_back(std::move(toks));
      }
      gold_paras.push_back(std::move(sents));
    }

    // filler paragraphs; positives receive extra ones to realize the length
    // gap, and the state code recurs through them the way respondent names
    // recur through fact statements
    std::size_t n_filler = 3 + rng.uniform_int(3);
    if (label == 1 && spec.length_gap > 0)
      n_filler += static_cast<std::size_t>(spec.length_gap / 2.0 + 0.5);
    std::vector<std::vector<std::vector<std::string>>> filler_paras;
    // one procedural paragraph carries a state-keyed ruling marker next to
    // the respondent state: the marker alone is uninformative, its outcome
    // reading depends on which state it is paired with (state-specific
    // fact patterns); skew scales how often the pair appears
    std::size_t pair_at = rng.bernoulli(0.95 * spec.state_skew) ? rng.uniform_int(n_filler)
                                                                : n_filler;
    std::size_t pair_at2 = rng.bernoulli(0.9 * spec.state_skew) ? rng.uniform_int(n_filler)
                                                                : n_filler;
    for (std::size_t f = 0; f < n_filler; ++f) {
      std::vector<std::vector<std::string>> sents;
      sents.push_back(filler_sentence(vocab, rng, 4, 7));
      sents.push_back(filler_sentence(vocab, rng, 4, 7));
      if (f == pair_at || f == pair_at2) {
        // the pair paragraph is short and formulaic, like a recital
        sents.clear();
        std::vector<std::string> s = filler_sentence(vocab, rng, 2, 3);
        std::size_t at = rng.uniform_int(s.size() + 1);
        s.insert(s.begin() + at, ruling_for(rng));
        s.insert(s.begin() + at, d.state);
        sents.push_back(std::move(s));
      } else if (rng.bernoulli(0.4)) {
        auto& target = sents[rng.uniform_int(sents.size())];
        target.insert(target.begin() + rng.uniform_int(target.size() + 1), d.state);
      }
      filler_paras.push_back(std::move(sents));
    }

    // interleave gold and filler paragraphs after paragraph 0
    std::vector<std::pair<bool, std::size_t>> order;  // (is_gold, index)
    for (std::size_t g = 0; g < gold_paras.size(); ++g) order.emplace_back(true, g);
    for (std::size_t f = 0; f < filler_paras.size(); ++f) order.emplace_back(false, f);
    diffcore::shuffle(order, rng);

    std::set<int> gold_idx;
    std::vector<std::vector<std::vector<std::string>>> all_paras;
    all_paras.push_back(std::move(para0));
    for (const auto& [is_gold, idx] : order) {
      if (is_gold) gold_idx.insert(static_cast<int>(all_paras.size()));
      all_paras.push_back(is_gold ? std::move(gold_paras[idx]) : std::move(filler_paras[idx]));
    }

    int para_start = label == 1 ? 6 : 1;
    for (std::size_t pi = 0; pi < all_paras.size(); ++pi) {
      Paragraph p;
      p.index = static_cast<int>(pi);
      p.raw_text = join_paragraph(all_paras[pi]);
      if (spec.paragraph_number_offset)
        p.raw_text = std::to_string(para_start + static_cast<int>(pi)) + ". " + p.raw_text;
      d.paragraphs.push_back(std::move(p));
    }
    d.gold_rationale = std::move(gold_idx);
    finalize_document(d);
    c.docs.push_back(std::move(d));
  }
  return c;
}

}  // namespace deconf::corpus
