#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace deconf::corpus {

struct TaskLabels {
  std::optional<int> j;            // binary outcome, 0/1
  std::set<std::string> alleged;   // article ids
  std::set<std::string> violated;  // article ids; violated <= alleged is NOT enforced
};

struct Paragraph {
  int index = 0;
  std::string raw_text;
  std::vector<std::vector<std::string>> sentences;  // tokenized

  std::size_t n_tokens() const;
};

struct Document {
  std::string doc_id;
  std::vector<Paragraph> paragraphs;
  std::string state;
  std::size_t n_sentences = 0;  // sum of per-paragraph sentence counts
  TaskLabels labels;
  std::optional<std::set<int>> gold_rationale;  // paragraph indices

  std::vector<std::string> all_tokens() const;
};

struct Corpus {
  std::vector<Document> docs;
  std::vector<std::string> article_registry;

  const Document* find(const std::string& doc_id) const;
};

// lowercase, whitespace-split, leading/trailing punctuation stripped,
// empty tokens dropped
std::vector<std::string> tokenize(const std::string& text);

// period/semicolon sentence heuristic
std::vector<std::string> split_sentences(const std::string& raw);

// recompute sentences and token sequences of a paragraph from raw_text
void retokenize(Paragraph& p);

// recompute derived fields (sentence tokenization, n_sentences)
void finalize_document(Document& d);

std::vector<std::string> default_article_registry();
std::vector<std::string> load_article_registry(const std::string& path);

Corpus ingest_corpus(const std::string& path,
                     std::vector<std::string> registry = default_article_registry());
Corpus parse_corpus_jsonl(std::istream& in, std::vector<std::string> registry,
                          const std::string& source_name);
void export_corpus(const Corpus& c, const std::string& path);
void write_corpus_jsonl(const Corpus& c, std::ostream& out);

// Removes leading "N." / "N)" enumeration markers (optionally whitespace
// padded, possibly several in a row) from each paragraph, then retokenizes.
// Idempotent; interior numbers are untouched.
Document strip_paragraph_numbers(const Document& d);
Corpus strip_paragraph_numbers(const Corpus& c);

// Equal-frequency bins over sentence counts. `upper[i]` is the inclusive
// upper bound of bin i; the last bin is unbounded.
struct LengthBinning {
  std::vector<std::size_t> upper;
  bool collapsed = false;  // requested bin count exceeded distinct lengths

  std::size_t n_bins() const { return upper.size(); }
  std::size_t bin_of(std::size_t n_sentences) const;
};

LengthBinning derive_length_bins(const Corpus& c, std::size_t n_bins);

// Deterministic per-stratum sampling. Supported keys: "j", "state",
// "alleged", "violated" (the article-valued keys place a document in one
// stratum per article carried). A document is selected at most once.
struct StratifiedSample {
  std::vector<std::string> doc_ids;
  std::map<std::string, std::size_t> shortfalls;  // stratum -> missing count
};

StratifiedSample stratified_sample(const Corpus& c, std::size_t per_stratum,
                                   const std::string& strata_key, std::uint64_t seed);

// Overlay file: one {"doc_id": ..., "gold_paragraphs": [...]} per line.
void apply_rationale_overlay(Corpus& c, const std::string& path);

// ---- synthetic corpus ---------------------------------------------------

// Generator for label-correlated distractor phenomena: a decoy token in the
// first paragraph, a state code skewed by label, a label-conditional length
// gap, and optional paragraph-number offsets. Genuine topical tokens are
// placed only in gold-rationale paragraphs.
struct SynthSpec {
  std::size_t n_docs = 2000;
  std::size_t n_articles = 10;     // first n ids of the article registry
  std::size_t genuine_vocab = 144; // split across per-article and outcome groups
  std::size_t decoy_vocab = 1;
  std::size_t filler_vocab = 300;
  double decoy_label_corr = 0.5;   // P(decoy | positive); P(decoy | negative) = 1 - this
  double state_skew = 0.0;         // 0 = independent, 1 = state group determined by label
  double length_gap = 0.0;         // expected extra sentences for positive documents
  bool paragraph_number_offset = false;
  std::size_t n_states = 6;
  std::uint64_t seed = 0;
};

Corpus synthesize_corpus(const SynthSpec& spec);

// vocab groups the generator uses; exposed so tests and the expert-review
// simulation can reference them
std::vector<std::string> synth_decoy_tokens(const SynthSpec& spec);
std::vector<std::string> synth_state_codes(const SynthSpec& spec);

}  // namespace deconf::corpus
