#include "deconf/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "deconf/errors.hpp"
#include "deconf/rng.hpp"

using nlohmann::json;

namespace deconf::corpus {

std::size_t Paragraph::n_tokens() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

std::vector<std::string> Document::all_tokens() const {
  std::vector<std::string> out;
  for (const auto& p : paragraphs)
    for (const auto& s : p.sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

const Document* Corpus::find(const std::string& doc_id) const {
  for (const auto& d : docs)
    if (d.doc_id == doc_id) return &d;
  return nullptr;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      std::size_t a = i, b = j;
      while (a < b && std::ispunct(static_cast<unsigned char>(text[a]))) ++a;
      while (b > a && std::ispunct(static_cast<unsigned char>(text[b - 1]))) --b;
      if (b > a) {
        std::string tok;
        tok.reserve(b - a);
        for (std::size_t k = a; k < b; ++k)
          tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[k]))));
        out.push_back(std::move(tok));
      }
    }
    i = j;
  }
  return out;
}

std::vector<std::string> split_sentences(const std::string& raw) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : raw) {
    if (c == '.' || c == ';') {
      if (cur.find_first_not_of(" \t\r\n") != std::string::npos) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (cur.find_first_not_of(" \t\r\n") != std::string::npos) out.push_back(cur);
  return out;
}

void retokenize(Paragraph& p) {
  p.sentences.clear();
  for (const std::string& s : split_sentences(p.raw_text)) {
    auto toks = tokenize(s);
    if (!toks.empty()) p.sentences.push_back(std::move(toks));
  }
}

void finalize_document(Document& d) {
  d.n_sentences = 0;
  for (auto& p : d.paragraphs) {
    retokenize(p);
    d.n_sentences += p.sentences.size();
  }
}

std::vector<std::string> default_article_registry() {
  return {"2", "3", "5", "6", "8", "9", "10", "11", "14", "P1-1"};
}

std::vector<std::string> load_article_registry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open article registry: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  if (out.empty()) throw ValidationError("article registry is empty: " + path);
  return out;
}

namespace {

std::string loc(const std::string& source, std::size_t line_no) {
  return source + ":" + std::to_string(line_no);
}

}  // namespace

Corpus parse_corpus_jsonl(std::istream& in, std::vector<std::string> registry,
                          const std::string& source_name) {
  Corpus c;
  c.article_registry = std::move(registry);
  std::set<std::string> known(c.article_registry.begin(), c.article_registry.end());
  std::set<std::string> seen_ids;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("malformed JSON at " + loc(source_name, line_no) + ": " + e.what());
    }
    Document d;
    try {
      d.doc_id = j.at("doc_id").get<std::string>();
      if (!seen_ids.insert(d.doc_id).second)
        throw ValidationError("duplicate doc_id '" + d.doc_id + "' at " +
                              loc(source_name, line_no));
      for (const auto& pj : j.at("paragraphs")) {
        Paragraph p;
        p.index = pj.at("index").get<int>();
        p.raw_text = pj.at("text").get<std::string>();
        d.paragraphs.push_back(std::move(p));
      }
      for (std::size_t i = 0; i < d.paragraphs.size(); ++i) {
        if (d.paragraphs[i].index != static_cast<int>(i))
          throw ValidationError("paragraph indices not contiguous in doc '" + d.doc_id +
                                "' at " + loc(source_name, line_no));
      }
      d.state = j.value("state", std::string());
      const json& lj = j.at("labels");
      if (lj.contains("j") && !lj["j"].is_null()) {
        int v = lj["j"].get<int>();
        if (v != 0 && v != 1)
          throw ValidationError("label j must be 0, 1 or null in doc '" + d.doc_id + "'");
        d.labels.j = v;
      }
      auto read_articles = [&](const char* key, std::set<std::string>& dst) {
        if (!lj.contains(key) || lj[key].is_null()) return;
        for (const auto& a : lj[key]) {
          std::string id = a.get<std::string>();
          if (!known.count(id))
            throw ValidationError("unknown article id '" + id + "' at " +
                                  loc(source_name, line_no));
          dst.insert(id);
        }
      };
      read_articles("alleged", d.labels.alleged);
      read_articles("violated", d.labels.violated);
      if (j.contains("gold_rationale") && !j["gold_rationale"].is_null()) {
        std::set<int> gr;
        for (const auto& g : j["gold_rationale"]) {
          int idx = g.get<int>();
          if (idx < 0 || idx >= static_cast<int>(d.paragraphs.size()))
            throw ValidationError("gold_rationale index " + std::to_string(idx) +
                                  " out of range in doc '" + d.doc_id + "'");
          gr.insert(idx);
        }
        d.gold_rationale = std::move(gr);
      }
    } catch (const json::exception& e) {
      throw ValidationError("invalid document at " + loc(source_name, line_no) + ": " +
                            e.what());
    }
    finalize_document(d);
    c.docs.push_back(std::move(d));
  }
  return c;
}

Corpus ingest_corpus(const std::string& path, std::vector<std::string> registry) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file: " + path);
  return parse_corpus_jsonl(in, std::move(registry), path);
}

void write_corpus_jsonl(const Corpus& c, std::ostream& out) {
  for (const auto& d : c.docs) {
    json j;
    j["doc_id"] = d.doc_id;
    json paras = json::array();
    for (const auto& p : d.paragraphs)
      paras.push_back({{"index", p.index}, {"text", p.raw_text}});
    j["paragraphs"] = std::move(paras);
    j["state"] = d.state;
    json labels;
    if (d.labels.j) labels["j"] = *d.labels.j;
    else labels["j"] = nullptr;
    labels["alleged"] = d.labels.alleged;
    labels["violated"] = d.labels.violated;
    j["labels"] = std::move(labels);
    if (d.gold_rationale) j["gold_rationale"] = *d.gold_rationale;
    else j["gold_rationale"] = nullptr;
    out << j.dump() << "\n";
  }
}

void export_corpus(const Corpus& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write corpus file: " + path);
  write_corpus_jsonl(c, out);
}

Document strip_paragraph_numbers(const Document& d) {
  Document out = d;
  for (auto& p : out.paragraphs) {
    std::string& t = p.raw_text;
    for (;;) {
      std::size_t i = 0;
      while (i < t.size() && (t[i] == ' ' || t[i] == '\t')) ++i;
      std::size_t ds = i;
      while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
      if (i == ds || i >= t.size() || (t[i] != '.' && t[i] != ')')) break;
      ++i;  // the marker char
      while (i < t.size() && (t[i] == ' ' || t[i] == '\t')) ++i;
      t.erase(0, i);
    }
  }
  finalize_document(out);
  return out;
}

Corpus strip_paragraph_numbers(const Corpus& c) {
  Corpus out;
  out.article_registry = c.article_registry;
  out.docs.reserve(c.docs.size());
  for (const auto& d : c.docs) out.docs.push_back(strip_paragraph_numbers(d));
  return out;
}

std::size_t LengthBinning::bin_of(std::size_t n_sentences) const {
  for (std::size_t i = 0; i + 1 < upper.size(); ++i)
    if (n_sentences <= upper[i]) return i;
  return upper.empty() ? 0 : upper.size() - 1;
}

LengthBinning derive_length_bins(const Corpus& c, std::size_t n_bins) {
  if (n_bins < 2) throw ValidationError("derive_length_bins: n_bins must be >= 2");
  if (c.docs.empty()) throw ValidationError("derive_length_bins: empty corpus");
  std::vector<std::size_t> lengths;
  lengths.reserve(c.docs.size());
  for (const auto& d : c.docs) lengths.push_back(d.n_sentences);
  std::sort(lengths.begin(), lengths.end());

  LengthBinning b;
  std::size_t n = lengths.size();
  for (std::size_t i = 0; i + 1 < n_bins; ++i) {
    std::size_t cut = (i + 1) * n / n_bins;  // first index of the next bin
    if (cut == 0 || cut >= n) continue;
    b.upper.push_back(lengths[cut - 1]);
  }
  // collapse ties, then terminate with an unbounded last bin
  b.upper.erase(std::unique(b.upper.begin(), b.upper.end()), b.upper.end());
  if (!b.upper.empty() && b.upper.back() >= lengths.back()) b.upper.pop_back();
  b.upper.push_back(std::numeric_limits<std::size_t>::max());
  b.collapsed = b.upper.size() < n_bins;
  return b;
}

StratifiedSample stratified_sample(const Corpus& c, std::size_t per_stratum,
                                   const std::string& strata_key, std::uint64_t seed) {
  // stratum label(s) per document
  auto strata_of = [&](const Document& d) -> std::vector<std::string> {
    if (strata_key == "state") return {d.state};
    if (strata_key == "j") {
      if (!d.labels.j) throw ValidationError("stratified_sample: doc '" + d.doc_id +
                                             "' lacks label j");
      return {*d.labels.j ? "1" : "0"};
    }
    if (strata_key == "alleged")
      return {d.labels.alleged.begin(), d.labels.alleged.end()};
    if (strata_key == "violated")
      return {d.labels.violated.begin(), d.labels.violated.end()};
    throw ValidationError("stratified_sample: unknown strata key '" + strata_key + "'");
  };

  std::map<std::string, std::vector<std::string>> strata;  // sorted stratum -> doc ids
  for (const auto& d : c.docs)
    for (const auto& s : strata_of(d)) strata[s].push_back(d.doc_id);

  StratifiedSample out;
  std::set<std::string> taken;
  for (auto& [stratum, ids] : strata) {
    auto rng = diffcore::make_stream(seed, "stratified:" + strata_key + ":" + stratum);
    diffcore::shuffle(ids, rng);
    std::size_t got = 0;
    for (const auto& id : ids) {
      if (got == per_stratum) break;
      if (taken.insert(id).second) {
        out.doc_ids.push_back(id);
        ++got;
      }
    }
    if (got < per_stratum) out.shortfalls[stratum] = per_stratum - got;
  }
  return out;
}

void apply_rationale_overlay(Corpus& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open rationale overlay: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("malformed overlay line at " + loc(path, line_no) + ": " + e.what());
    }
    std::string id = j.at("doc_id").get<std::string>();
    Document* target = nullptr;
    for (auto& d : c.docs)
      if (d.doc_id == id) { target = &d; break; }
    if (!target)
      throw ValidationError("overlay references unknown doc_id '" + id + "' at " +
                            loc(path, line_no));
    std::set<int> gr;
    for (const auto& g : j.at("gold_paragraphs")) {
      int idx = g.get<int>();
      if (idx < 0 || idx >= static_cast<int>(target->paragraphs.size()))
        throw ValidationError("overlay index " + std::to_string(idx) +
                              " out of range for doc '" + id + "'");
      gr.insert(idx);
    }
    target->gold_rationale = std::move(gr);
  }
}

}  // namespace deconf::corpus
