#include "deconf/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "deconf/errors.hpp"

using nlohmann::json;

namespace deconf::model {

using diffcore::RngStream;
using diffcore::Tensor;

Variant parse_variant(const std::string& s) {
  if (s == "baseline") return Variant::Baseline;
  if (s == "paraRem") return Variant::ParaRem;
  if (s == "gradCou") return Variant::GradCou;
  if (s == "gradLen") return Variant::GradLen;
  if (s == "gradVocab") return Variant::GradVocab;
  if (s == "gradAll") return Variant::GradAll;
  throw ValidationError("unknown variant '" + s + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::ParaRem: return "paraRem";
    case Variant::GradCou: return "gradCou";
    case Variant::GradLen: return "gradLen";
    case Variant::GradVocab: return "gradVocab";
    case Variant::GradAll: return "gradAll";
  }
  return "?";
}

bool variant_strips_numbers(Variant v) { return v != Variant::Baseline; }
bool variant_has_country(Variant v) { return v == Variant::GradCou || v == Variant::GradAll; }
bool variant_has_length(Variant v) { return v == Variant::GradLen || v == Variant::GradAll; }
bool variant_has_vocab(Variant v) { return v == Variant::GradVocab || v == Variant::GradAll; }

ModelConfig ModelConfig::full_preset(stats::Task t) {
  ModelConfig c;
  c.task = t;
  c.batch_size = t == stats::Task::J ? 8 : 16;
  return c;
}

ModelConfig ModelConfig::desk_preset(stats::Task t) {
  ModelConfig c = full_preset(t);
  c.scale_divisor = 8;
  c.packet_max_tokens = 64;
  c.max_epochs = 20;
  return c;
}

namespace {

json config_to_json(const ModelConfig& c) {
  json j;
  j["embed_dim"] = c.embed_dim;
  j["token_ctx_dim"] = c.token_ctx_dim;
  j["gru_hidden"] = c.gru_hidden;
  j["sent_ctx_dim"] = c.sent_ctx_dim;
  j["clf_hidden"] = c.clf_hidden;
  j["disc_hidden"] = c.disc_hidden;
  j["packet_max_tokens"] = c.packet_max_tokens;
  j["dropout"] = c.dropout;
  j["lambda_country"] = c.lambda_country;
  j["lambda_length"] = c.lambda_length;
  j["lambda_vocab"] = c.lambda_vocab;
  j["batch_size"] = c.batch_size;
  j["lr_grid"] = c.lr_grid;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["length_bins"] = c.length_bins;
  j["adversary_start_epoch"] = c.adversary_start_epoch;
  j["task"] = stats::task_name(c.task);
  j["variant"] = variant_name(c.variant);
  j["scale_divisor"] = c.scale_divisor;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.token_ctx_dim = j.value("token_ctx_dim", c.token_ctx_dim);
  c.gru_hidden = j.value("gru_hidden", c.gru_hidden);
  c.sent_ctx_dim = j.value("sent_ctx_dim", c.sent_ctx_dim);
  c.clf_hidden = j.value("clf_hidden", c.clf_hidden);
  c.disc_hidden = j.value("disc_hidden", c.disc_hidden);
  c.packet_max_tokens = j.value("packet_max_tokens", c.packet_max_tokens);
  c.dropout = j.value("dropout", c.dropout);
  c.lambda_country = j.value("lambda_country", c.lambda_country);
  c.lambda_length = j.value("lambda_length", c.lambda_length);
  c.lambda_vocab = j.value("lambda_vocab", c.lambda_vocab);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("lr_grid")) c.lr_grid = j["lr_grid"].get<std::vector<double>>();
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.length_bins = j.value("length_bins", c.length_bins);
  c.adversary_start_epoch = j.value("adversary_start_epoch", c.adversary_start_epoch);
  if (j.contains("task")) c.task = stats::parse_task(j["task"].get<std::string>());
  if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
  c.scale_divisor = j.value("scale_divisor", c.scale_divisor);
  return c;
}

std::size_t scaled(std::size_t dim, std::size_t divisor) {
  return std::max<std::size_t>(1, dim / std::max<std::size_t>(1, divisor));
}

Value init_matrix(std::size_t rows, std::size_t cols, const std::string& name,
                  std::uint64_t seed) {
  RngStream rng = diffcore::make_stream(seed, "init:" + name);
  Tensor t({rows, cols});
  double s = 1.0 / std::sqrt(static_cast<double>(cols));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * s;
  return Value::parameter(std::move(t), name);
}

Value init_vector(std::size_t n, const std::string& name, std::uint64_t seed, double sd) {
  RngStream rng = diffcore::make_stream(seed, "init:" + name);
  Tensor t({n});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = sd == 0.0 ? 0.0 : rng.normal() * sd;
  return Value::parameter(std::move(t), name);
}

diffcore::GruParams init_gru(std::size_t hidden, std::size_t input, const std::string& prefix,
                             std::uint64_t seed) {
  diffcore::GruParams p;
  p.wz = init_matrix(hidden, input, prefix + ".wz", seed);
  p.uz = init_matrix(hidden, hidden, prefix + ".uz", seed);
  p.bz = init_vector(hidden, prefix + ".bz", seed, 0.0);
  p.wr = init_matrix(hidden, input, prefix + ".wr", seed);
  p.ur = init_matrix(hidden, hidden, prefix + ".ur", seed);
  p.br = init_vector(hidden, prefix + ".br", seed, 0.0);
  p.wh = init_matrix(hidden, input, prefix + ".wh", seed);
  p.uh = init_matrix(hidden, hidden, prefix + ".uh", seed);
  p.bh = init_vector(hidden, prefix + ".bh", seed, 0.0);
  return p;
}

diffcore::AttentionParams init_attention(std::size_t dim, std::size_t ctx,
                                         const std::string& prefix, std::uint64_t seed) {
  diffcore::AttentionParams p;
  p.proj_w = init_matrix(dim, ctx, prefix + ".proj_w", seed);
  p.proj_b = init_vector(ctx, prefix + ".proj_b", seed, 0.0);
  p.context = init_vector(ctx, prefix + ".context", seed,
                          1.0 / std::sqrt(static_cast<double>(ctx)));
  return p;
}

DiscriminatorHead init_disc(std::size_t in_dim, std::size_t hidden, std::size_t out_dim,
                            double lambda, const std::string& prefix, std::uint64_t seed) {
  DiscriminatorHead h;
  h.w1 = init_matrix(hidden, in_dim, prefix + ".w1", seed);
  h.b1 = init_vector(hidden, prefix + ".b1", seed, 0.0);
  h.w2 = init_matrix(out_dim, hidden, prefix + ".w2", seed);
  h.b2 = init_vector(out_dim, prefix + ".b2", seed, 0.0);
  h.lambda = lambda;
  return h;
}

void push_att(std::vector<Value>& out, const diffcore::AttentionParams& p) {
  out.push_back(p.proj_w);
  out.push_back(p.proj_b);
  out.push_back(p.context);
}

void push_gru(std::vector<Value>& out, const diffcore::GruParams& p) {
  out.insert(out.end(), {p.wz, p.uz, p.bz, p.wr, p.ur, p.br, p.wh, p.uh, p.bh});
}

void push_disc(std::vector<Value>& out, const DiscriminatorHead& h) {
  out.insert(out.end(), {h.w1, h.b1, h.w2, h.b2});
}

}  // namespace

ModelConfig config_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("invalid config JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void write_config_json(const ModelConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write config file: " + path);
  out << config_to_json(cfg).dump(2) << "\n";
}

std::size_t ModelBundle::output_dim() const {
  return cfg.task == stats::Task::J ? 1 : articles.size();
}

std::size_t ModelBundle::classifier_input_dim() const {
  return feature_dim() + (cfg.task == stats::Task::AB ? articles.size() : 0);
}

int ModelBundle::token_id(const std::string& tok) const {
  auto it = vocab_index.find(tok);
  return it == vocab_index.end() ? 0 : it->second;
}

std::vector<Value> ModelBundle::parameters() const {
  std::vector<Value> out;
  out.push_back(embedding);
  push_att(out, token_att);
  push_gru(out, gru_fwd);
  push_gru(out, gru_bwd);
  push_att(out, sent_att);
  out.insert(out.end(), {clf_w1, clf_b1, clf_w2, clf_b2});
  if (d_country) push_disc(out, *d_country);
  if (d_length) push_disc(out, *d_length);
  if (d_vocab) push_disc(out, *d_vocab);
  return out;
}

std::vector<Tensor> ModelBundle::snapshot() const {
  std::vector<Tensor> out;
  for (const Value& p : parameters()) out.push_back(p.val());
  return out;
}

void ModelBundle::restore(const std::vector<Tensor>& snap) {
  auto params = parameters();
  if (snap.size() != params.size())
    throw ValidationError("restore: snapshot size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i].val() = snap[i];
}

namespace {

// allocates the parameter tensors for the given registries; values come from
// the init streams keyed by (seed, parameter name)
ModelBundle make_structure(const ModelConfig& cfg, std::vector<std::string> vocab,
                           std::vector<std::string> states, corpus::LengthBinning bins,
                           std::vector<std::string> lexicon, std::vector<std::string> articles,
                           std::uint64_t seed) {
  ModelBundle b;
  b.cfg = cfg;
  b.embed_dim = scaled(cfg.embed_dim, cfg.scale_divisor);
  b.token_ctx = scaled(cfg.token_ctx_dim, cfg.scale_divisor);
  b.gru_hidden = scaled(cfg.gru_hidden, cfg.scale_divisor);
  b.sent_ctx = scaled(cfg.sent_ctx_dim, cfg.scale_divisor);
  b.clf_hidden = scaled(cfg.clf_hidden, cfg.scale_divisor);
  b.disc_hidden = scaled(cfg.disc_hidden, cfg.scale_divisor);
  b.packet_max = cfg.packet_max_tokens;
  b.vocab = std::move(vocab);
  for (std::size_t i = 0; i < b.vocab.size(); ++i) b.vocab_index[b.vocab[i]] = static_cast<int>(i);
  b.state_registry = std::move(states);
  b.bins = std::move(bins);
  b.lexicon_tokens = std::move(lexicon);
  b.articles = std::move(articles);

  {
    RngStream rng = diffcore::make_stream(seed, "init:embedding");
    Tensor t({b.vocab.size(), b.embed_dim});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * 0.1;
    b.embedding = Value::parameter(std::move(t), "embedding");
  }
  b.token_att = init_attention(b.embed_dim, b.token_ctx, "token_att", seed);
  b.gru_fwd = init_gru(b.gru_hidden, b.embed_dim, "gru_fwd", seed);
  b.gru_bwd = init_gru(b.gru_hidden, b.embed_dim, "gru_bwd", seed);
  b.sent_att = init_attention(b.feature_dim(), b.sent_ctx, "sent_att", seed);
  b.clf_w1 = init_matrix(b.clf_hidden, b.classifier_input_dim(), "clf.w1", seed);
  b.clf_b1 = init_vector(b.clf_hidden, "clf.b1", seed, 0.0);
  b.clf_w2 = init_matrix(b.output_dim(), b.clf_hidden, "clf.w2", seed);
  b.clf_b2 = init_vector(b.output_dim(), "clf.b2", seed, 0.0);

  if (variant_has_country(cfg.variant))
    b.d_country = init_disc(b.feature_dim(), b.disc_hidden, b.state_registry.size(),
                            cfg.lambda_country, "disc.country", seed);
  if (variant_has_length(cfg.variant))
    b.d_length = init_disc(b.feature_dim(), b.disc_hidden, b.bins.n_bins(),
                           cfg.lambda_length, "disc.length", seed);
  if (variant_has_vocab(cfg.variant))
    b.d_vocab = init_disc(b.feature_dim(), b.disc_hidden, b.lexicon_tokens.size(),
                          cfg.lambda_vocab, "disc.vocab", seed);
  return b;
}

}  // namespace

ModelBundle init_bundle(const ModelConfig& cfg, const corpus::Corpus& train_split,
                        const treeminer::SpuriousLexicon* lexicon, std::uint64_t seed) {
  if (train_split.docs.empty()) throw ValidationError("init_bundle: empty training split");

  std::set<std::string> vocab_set;
  std::set<std::string> state_set;
  for (const auto& d : train_split.docs) {
    for (const auto& tok : d.all_tokens()) vocab_set.insert(tok);
    if (!d.state.empty()) state_set.insert(d.state);
  }
  std::vector<std::string> vocab;
  vocab.reserve(vocab_set.size() + 1);
  vocab.push_back("<unk>");
  vocab.insert(vocab.end(), vocab_set.begin(), vocab_set.end());

  std::vector<std::string> states(state_set.begin(), state_set.end());
  if (variant_has_country(cfg.variant) && states.empty())
    throw ValidationError("init_bundle: variant " + variant_name(cfg.variant) +
                          " requires documents with a state code");

  corpus::LengthBinning bins;
  if (variant_has_length(cfg.variant)) bins = corpus::derive_length_bins(train_split, cfg.length_bins);

  std::vector<std::string> lexicon_tokens;
  if (variant_has_vocab(cfg.variant)) {
    if (!lexicon)
      throw ValidationError("init_bundle: variant " + variant_name(cfg.variant) +
                            " requires a spurious lexicon (missing artifact: lexicon)");
    lexicon_tokens = lexicon->spurious_tokens();
    if (lexicon_tokens.empty())
      throw ValidationError("init_bundle: spurious lexicon has no token marked 'spurious'");
  }

  return make_structure(cfg, std::move(vocab), std::move(states), std::move(bins),
                        std::move(lexicon_tokens), train_split.article_registry, seed);
}

Packing pack_sentences(const corpus::Document& d, std::size_t max_tokens) {
  if (max_tokens < 1) throw ValidationError("pack_sentences: max_tokens must be >= 1");
  Packing pk;
  pk.n_paragraphs = d.paragraphs.size();
  std::size_t cur = 0;  // tokens in the open packet
  bool open = false;

  auto new_packet = [&]() {
    pk.packets.emplace_back();
    cur = 0;
    open = true;
  };
  auto push_token = [&](int para, const std::string& tok) {
    pk.packets.back().push_back(pk.tokens.size());
    pk.tokens.push_back({para, tok});
    ++cur;
  };

  for (const auto& p : d.paragraphs) {
    for (const auto& sent : p.sentences) {
      if (sent.empty()) continue;
      if (sent.size() > max_tokens) {
        // oversized sentence: split into max-sized parts, each starting a
        // fresh packet; the final partial part stays open for later sentences
        std::size_t i = 0;
        while (i < sent.size()) {
          new_packet();
          std::size_t take = std::min(max_tokens, sent.size() - i);
          for (std::size_t k = 0; k < take; ++k) push_token(p.index, sent[i + k]);
          i += take;
        }
        continue;
      }
      if (!open || cur + sent.size() > max_tokens) new_packet();
      for (const auto& tok : sent) push_token(p.index, tok);
    }
  }
  return pk;
}

std::vector<std::vector<int>> packet_token_ids(const ModelBundle& b, const Packing& p) {
  std::vector<std::vector<int>> out;
  out.reserve(p.packets.size());
  for (const auto& packet : p.packets) {
    std::vector<int> ids;
    ids.reserve(packet.size());
    for (std::size_t flat : packet) ids.push_back(b.token_id(p.tokens[flat].token));
    out.push_back(std::move(ids));
  }
  return out;
}

namespace {

Value maybe_dropout(const Value& v, const DropoutCtx* drop, const std::string& site) {
  if (!drop || drop->rate == 0.0) return v;
  RngStream rng = diffcore::make_stream(drop->seed, "drop:" + site);
  return diffcore::dropout(v, drop->rate, rng);
}

// word-level dropout on an embedding matrix: whole rows are zeroed with
// inverted scaling, so a token either contributes fully or not at all
Value maybe_word_dropout(const Value& rows, const DropoutCtx* drop, const std::string& site) {
  if (!drop || drop->rate == 0.0) return rows;
  RngStream rng = diffcore::make_stream(drop->seed, "wdrop:" + site);
  std::size_t n = rows.val().rows(), d = rows.val().cols();
  Tensor mask({n, d});
  double keep_scale = 1.0 / (1.0 - drop->rate);
  for (std::size_t r = 0; r < n; ++r) {
    double v = rng.uniform() >= drop->rate ? keep_scale : 0.0;
    for (std::size_t c = 0; c < d; ++c) mask[r * d + c] = v;
  }
  return diffcore::mul(rows, Value::constant(std::move(mask)));
}

Value hier_forward(const ModelBundle& b, const std::vector<Value>& packet_embs,
                   const DropoutCtx* drop, const std::string& site_prefix) {
  if (packet_embs.empty())
    return Value::constant(Tensor::zeros({b.feature_dim()}));

  std::vector<Value> packet_vecs;
  for (std::size_t p = 0; p < packet_embs.size(); ++p) {
    std::vector<unsigned char> keep(packet_embs[p].val().rows(), 1);
    Value pv = diffcore::attention_pool(packet_embs[p], b.token_att, keep);
    packet_vecs.push_back(
        maybe_dropout(pv, drop, site_prefix + ":tokpool:" + std::to_string(p)));
  }

  std::size_t n = packet_vecs.size();
  std::vector<Value> fwd(n), bwd(n);
  Value h = Value::constant(Tensor::zeros({b.gru_hidden}));
  for (std::size_t i = 0; i < n; ++i) {
    h = diffcore::gru_cell(packet_vecs[i], h, b.gru_fwd);
    fwd[i] = h;
  }
  h = Value::constant(Tensor::zeros({b.gru_hidden}));
  for (std::size_t i = n; i-- > 0;) {
    h = diffcore::gru_cell(packet_vecs[i], h, b.gru_bwd);
    bwd[i] = h;
  }
  std::vector<Value> ctx;
  ctx.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Value c = diffcore::concat({fwd[i], bwd[i]});
    ctx.push_back(maybe_dropout(c, drop, site_prefix + ":gruout:" + std::to_string(i)));
  }
  Value stacked = diffcore::stack_rows(ctx);
  std::vector<unsigned char> keep(n, 1);
  Value doc = diffcore::attention_pool(stacked, b.sent_att, keep);
  return maybe_dropout(doc, drop, site_prefix + ":docvec");
}

std::vector<double> violated_multihot(const ModelBundle& b, const corpus::Document& d) {
  std::vector<double> v(b.articles.size(), 0.0);
  for (std::size_t i = 0; i < b.articles.size(); ++i)
    if (d.labels.violated.count(b.articles[i])) v[i] = 1.0;
  return v;
}

std::vector<double> alleged_multihot(const ModelBundle& b, const corpus::Document& d) {
  std::vector<double> v(b.articles.size(), 0.0);
  for (std::size_t i = 0; i < b.articles.size(); ++i)
    if (d.labels.alleged.count(b.articles[i])) v[i] = 1.0;
  return v;
}

}  // namespace

DocForward extract_features(const ModelBundle& b, const corpus::Document& d,
                            const DropoutCtx* drop) {
  Packing pk = pack_sentences(d, b.packet_max);
  auto ids = packet_token_ids(b, pk);
  DocForward out;
  for (std::size_t p = 0; p < ids.size(); ++p) {
    Value rows = diffcore::embedding_lookup(b.embedding, ids[p]);
    out.packet_embeddings.push_back(
        maybe_word_dropout(rows, drop, d.doc_id + ":emb:" + std::to_string(p)));
  }
  out.features = hier_forward(b, out.packet_embeddings, drop, d.doc_id);
  return out;
}

Value features_from_embeddings(const ModelBundle& b, const std::vector<Value>& packet_embs) {
  return hier_forward(b, packet_embs, nullptr, "");
}

Value classifier_logits(const ModelBundle& b, const Value& features,
                        const corpus::Document& d, const DropoutCtx* drop) {
  Value input = features;
  if (b.cfg.task == stats::Task::AB) {
    Tensor alleg = Tensor::from_vector(alleged_multihot(b, d));
    input = diffcore::concat({features, Value::constant(std::move(alleg))});
  }
  Value h = diffcore::tanh(diffcore::add(diffcore::matvec(b.clf_w1, input), b.clf_b1));
  h = maybe_dropout(h, drop, d.doc_id + ":clf");
  return diffcore::add(diffcore::matvec(b.clf_w2, h), b.clf_b2);
}

namespace {

Value disc_logits(const DiscriminatorHead& head, const Value& features,
                  const DropoutCtx* drop, const std::string& site) {
  Value g = diffcore::grl(features, head.lambda);
  Value h = diffcore::tanh(diffcore::add(diffcore::matvec(head.w1, g), head.b1));
  h = maybe_dropout(h, drop, site);
  return diffcore::add(diffcore::matvec(head.w2, h), head.b2);
}

Value main_loss(const ModelBundle& b, const Value& logits, const corpus::Document& d) {
  switch (b.cfg.task) {
    case stats::Task::J: {
      if (!d.labels.j)
        throw ValidationError("forward_loss: doc '" + d.doc_id + "' lacks label j");
      return diffcore::bce_per_label(logits, {static_cast<double>(*d.labels.j)});
    }
    case stats::Task::B:
      return diffcore::bce_per_label(logits, alleged_multihot(b, d));
    case stats::Task::A:
    case stats::Task::AB:
      return diffcore::bce_per_label(logits, violated_multihot(b, d));
  }
  throw ValidationError("forward_loss: bad task");
}

}  // namespace

Value forward_loss(const ModelBundle& b, std::vector<const corpus::Document*> batch,
                   const DropoutCtx* drop, LossBreakdown* parts) {
  if (batch.empty()) throw ValidationError("forward_loss: empty batch");
  std::sort(batch.begin(), batch.end(),
            [](const corpus::Document* a, const corpus::Document* c) {
              return a->doc_id < c->doc_id;
            });

  std::vector<Value> mains;
  std::vector<Value> country_losses, length_losses, vocab_losses;

  for (const corpus::Document* d : batch) {
    DocForward f = extract_features(b, *d, drop);
    Value logits = classifier_logits(b, f.features, *d, drop);
    mains.push_back(main_loss(b, logits, *d));

    if (b.d_country) {
      auto it = std::find(b.state_registry.begin(), b.state_registry.end(), d->state);
      if (it == b.state_registry.end())
        throw ValidationError("forward_loss: doc '" + d->doc_id +
                              "' lacks a registered state (confounder target)");
      Value lg = disc_logits(*b.d_country, f.features, drop, d->doc_id + ":disc.country");
      country_losses.push_back(diffcore::cross_entropy(
          lg, static_cast<std::size_t>(it - b.state_registry.begin())));
    }
    if (b.d_length) {
      Value lg = disc_logits(*b.d_length, f.features, drop, d->doc_id + ":disc.length");
      length_losses.push_back(diffcore::cross_entropy(lg, b.bins.bin_of(d->n_sentences)));
    }
    if (b.d_vocab) {
      std::vector<double> target(b.lexicon_tokens.size(), 0.0);
      std::set<std::string> toks;
      for (const auto& t : d->all_tokens()) toks.insert(t);
      for (std::size_t i = 0; i < b.lexicon_tokens.size(); ++i)
        if (toks.count(b.lexicon_tokens[i])) target[i] = 1.0;
      Value lg = disc_logits(*b.d_vocab, f.features, drop, d->doc_id + ":disc.vocab");
      vocab_losses.push_back(diffcore::bce_per_label(lg, target));
    }
  }

  double inv_n = 1.0 / static_cast<double>(batch.size());
  Value total = diffcore::scale(diffcore::add_scalars(mains), inv_n);
  if (parts) {
    parts->disc.clear();
    parts->main = total.val()[0];
  }
  auto add_branch = [&](const std::vector<Value>& losses, double lambda, const char* name) {
    if (losses.empty()) return;
    Value mean_loss = diffcore::scale(diffcore::add_scalars(losses), inv_n);
    if (parts) parts->disc[name] = mean_loss.val()[0];
    total = diffcore::add(total, diffcore::scale(mean_loss, lambda));
  };
  if (b.d_country) add_branch(country_losses, b.d_country->lambda, "country");
  if (b.d_length) add_branch(length_losses, b.d_length->lambda, "length");
  if (b.d_vocab) add_branch(vocab_losses, b.d_vocab->lambda, "vocab");
  if (parts) parts->total = total.val()[0];
  return total;
}

std::vector<double> predict_logits(const ModelBundle& b, const corpus::Document& d) {
  DocForward f = extract_features(b, d, nullptr);
  Value logits = classifier_logits(b, f.features, d, nullptr);
  return logits.val().vec();
}

std::set<std::string> predict_positive(const ModelBundle& b, const corpus::Document& d) {
  std::vector<double> logits = predict_logits(b, d);
  std::set<std::string> out;
  if (b.cfg.task == stats::Task::J) {
    if (logits[0] > 0.0) out.insert("J");  // sigmoid(logit) > 0.5
    return out;
  }
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (logits[i] > 0.0) out.insert(b.articles[i]);
  return out;
}

// ---- checkpoints ----------------------------------------------------------

void save_checkpoint(const ModelBundle& b, const std::string& path,
                     const std::map<std::string, std::string>& extra_manifest) {
  json j;
  j["format_version"] = 1;
  json manifest;
  manifest["variant"] = variant_name(b.cfg.variant);
  manifest["task"] = stats::task_name(b.cfg.task);
  for (const auto& [k, v] : extra_manifest) manifest[k] = v;
  j["manifest"] = std::move(manifest);
  j["config"] = config_to_json(b.cfg);
  json reg;
  reg["vocab"] = b.vocab;
  reg["states"] = b.state_registry;
  reg["articles"] = b.articles;
  reg["lexicon"] = b.lexicon_tokens;
  reg["bin_upper"] = b.bins.upper;
  reg["bins_collapsed"] = b.bins.collapsed;
  j["registries"] = std::move(reg);
  json params;
  for (const Value& p : b.parameters()) {
    json pj;
    pj["shape"] = p.val().shape();
    pj["data"] = p.val().vec();
    params[p.name()] = std::move(pj);
  }
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  out << j.dump() << "\n";
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("invalid checkpoint JSON in " + path + ": " + e.what());
  }
  if (!j.contains("format_version"))
    throw ValidationError("checkpoint " + path + " lacks format_version");
  if (j["format_version"].get<int>() != 1)
    throw ValidationError("checkpoint " + path + " has unsupported format_version");

  ModelConfig cfg = config_from_json(j.at("config"));
  const json& reg = j.at("registries");
  corpus::LengthBinning bins;
  bins.upper = reg.at("bin_upper").get<std::vector<std::size_t>>();
  bins.collapsed = reg.value("bins_collapsed", false);

  ModelBundle b = make_structure(cfg, reg.at("vocab").get<std::vector<std::string>>(),
                                 reg.at("states").get<std::vector<std::string>>(), bins,
                                 reg.at("lexicon").get<std::vector<std::string>>(),
                                 reg.at("articles").get<std::vector<std::string>>(),
                                 /*seed=*/0);
  const json& params = j.at("params");
  for (const Value& p : b.parameters()) {
    if (!params.contains(p.name()))
      throw ValidationError("checkpoint " + path + " lacks parameter '" + p.name() + "'");
    const json& pj = params[p.name()];
    auto shape = pj.at("shape").get<std::vector<std::size_t>>();
    auto data = pj.at("data").get<std::vector<double>>();
    if (shape != p.val().shape())
      throw ValidationError("checkpoint " + path + " parameter '" + p.name() +
                            "' has unexpected shape");
    p.node()->value = Tensor(shape, std::move(data));
  }
  return b;
}

}  // namespace deconf::model
