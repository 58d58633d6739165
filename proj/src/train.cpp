#include <algorithm>
#include <cmath>
#include <thread>

#include "deconf/errors.hpp"
#include "deconf/evalmetrics.hpp"
#include "deconf/model.hpp"

namespace deconf::model {

using diffcore::RngStream;
using diffcore::Tensor;
using diffcore::Value;

namespace {

double dev_macro_f1(const ModelBundle& b, const corpus::Corpus& dev) {
  std::vector<evalmetrics::Prediction> preds;
  preds.reserve(dev.docs.size());
  for (const auto& d : dev.docs)
    preds.push_back({d.doc_id, predict_positive(b, d)});
  return evalmetrics::f1_scores(preds, dev, b.cfg.task).macro;
}

struct GridOutcome {
  bool diverged = false;
  double best_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::vector<Tensor> best_params;
  std::vector<TrainLogEntry> log;
};

GridOutcome run_grid_point(const corpus::Corpus& train_split, const corpus::Corpus& dev_split,
                           const ModelConfig& cfg, const treeminer::SpuriousLexicon* lexicon,
                           std::uint64_t seed, std::size_t lr_index) {
  double lr = cfg.lr_grid[lr_index];
  GridOutcome out;
  ModelBundle bundle = init_bundle(cfg, train_split, lexicon, seed);
  diffcore::Adam opt(bundle.parameters(), lr);

  std::vector<const corpus::Document*> docs;
  for (const auto& d : train_split.docs) docs.push_back(&d);

  bool has_disc = bundle.d_country || bundle.d_length || bundle.d_vocab;
  std::size_t adv_start = has_disc ? cfg.adversary_start_epoch : 0;

  std::size_t since_improve = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    // warmup phase: discriminator branches held at lambda = 0 so the main
    // heads converge first and the adversary then faces a near-optimal
    // discriminator; checkpointing is restricted to the adversarial phase
    bool adversary_on = epoch > adv_start;
    if (bundle.d_country) bundle.d_country->lambda = adversary_on ? cfg.lambda_country : 0.0;
    if (bundle.d_length) bundle.d_length->lambda = adversary_on ? cfg.lambda_length : 0.0;
    if (bundle.d_vocab) bundle.d_vocab->lambda = adversary_on ? cfg.lambda_vocab : 0.0;
    // the shuffle stream depends only on (seed, epoch): identical across
    // variants and grid points by construction
    RngStream shuffle_rng =
        diffcore::make_stream(seed, "shuffle:e" + std::to_string(epoch));
    diffcore::shuffle(docs, shuffle_rng);

    LossBreakdown epoch_loss;
    std::size_t n_batches = 0;
    bool diverged = false;
    for (std::size_t start = 0; start < docs.size(); start += cfg.batch_size) {
      std::size_t end = std::min(docs.size(), start + cfg.batch_size);
      std::vector<const corpus::Document*> batch(docs.begin() + start, docs.begin() + end);
      DropoutCtx drop;
      drop.rate = cfg.dropout;
      drop.seed = diffcore::make_stream(
                      seed, "drop:g" + std::to_string(lr_index) + ":e" + std::to_string(epoch) +
                                ":b" + std::to_string(start / cfg.batch_size))
                      .key();
      opt.zero_grad();
      LossBreakdown parts;
      Value loss = forward_loss(bundle, batch, cfg.dropout > 0 ? &drop : nullptr, &parts);
      if (!std::isfinite(parts.total)) {
        diverged = true;
        break;
      }
      loss.backward();
      opt.step();
      epoch_loss.total += parts.total;
      epoch_loss.main += parts.main;
      for (const auto& [k, v] : parts.disc) epoch_loss.disc[k] += v;
      ++n_batches;
    }
    if (diverged) {
      out.diverged = true;
      return out;
    }
    if (n_batches > 0) {
      epoch_loss.total /= n_batches;
      epoch_loss.main /= n_batches;
      for (auto& [k, v] : epoch_loss.disc) v /= n_batches;
    }

    double f1 = dev_macro_f1(bundle, dev_split);
    bool eligible = epoch > adv_start;
    bool improved = eligible && f1 > out.best_f1;
    if (improved) {
      out.best_f1 = f1;
      out.best_epoch = epoch;
      out.best_params = bundle.snapshot();
      since_improve = 0;
    } else if (eligible) {
      ++since_improve;
    }
    TrainLogEntry entry;
    entry.lr = lr;
    entry.epoch = epoch;
    entry.train_loss = epoch_loss;
    entry.dev_f1 = f1;
    entry.improved = improved;
    out.log.push_back(std::move(entry));

    if (eligible && since_improve >= cfg.patience) break;
  }
  return out;
}

}  // namespace

TrainResult train(const corpus::Corpus& train_split, const corpus::Corpus& dev_split,
                  const ModelConfig& cfg, const treeminer::SpuriousLexicon* lexicon,
                  std::uint64_t seed, std::size_t parallel) {
  if (train_split.docs.empty() || dev_split.docs.empty())
    throw ValidationError("train: train and dev splits must be nonempty");
  if (cfg.lr_grid.empty()) throw ValidationError("train: empty learning-rate grid");

  std::vector<GridOutcome> outcomes(cfg.lr_grid.size());
  if (parallel <= 1 || cfg.lr_grid.size() == 1) {
    for (std::size_t i = 0; i < cfg.lr_grid.size(); ++i)
      outcomes[i] = run_grid_point(train_split, dev_split, cfg, lexicon, seed, i);
  } else {
    std::vector<std::thread> pool;
    std::size_t workers = std::min(parallel, cfg.lr_grid.size());
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w, workers]() {
        for (std::size_t i = w; i < cfg.lr_grid.size(); i += workers)
          outcomes[i] = run_grid_point(train_split, dev_split, cfg, lexicon, seed, i);
      });
    }
    for (auto& t : pool) t.join();
  }

  TrainResult result;
  std::size_t best_idx = cfg.lr_grid.size();
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    for (const auto& e : outcomes[i].log) result.log.push_back(e);
    if (outcomes[i].diverged) {
      result.diverged_lrs.push_back(cfg.lr_grid[i]);
      continue;
    }
    if (best_idx == cfg.lr_grid.size() || outcomes[i].best_f1 > outcomes[best_idx].best_f1)
      best_idx = i;
  }
  if (best_idx == cfg.lr_grid.size())
    throw std::runtime_error("train: every grid point diverged");

  result.model = init_bundle(cfg, train_split, lexicon, seed);
  result.model.restore(outcomes[best_idx].best_params);
  result.best_dev_f1 = outcomes[best_idx].best_f1;
  result.best_lr = cfg.lr_grid[best_idx];
  result.best_epoch = outcomes[best_idx].best_epoch;
  return result;
}

double discriminator_probe(const ModelBundle& trained, const corpus::Corpus& fit,
                           const corpus::Corpus& held_out, DiscKind k, std::uint64_t seed) {
  std::size_t fdim = trained.feature_dim();

  // frozen features: plain tensors, detached from the trained graph
  auto featurize = [&](const corpus::Corpus& c) {
    std::vector<Tensor> out;
    out.reserve(c.docs.size());
    for (const auto& d : c.docs)
      out.push_back(extract_features(trained, d, nullptr).features.val());
    return out;
  };

  std::size_t out_dim = 0;
  auto target_of = [&](const corpus::Document& d) -> std::optional<std::size_t> {
    switch (k) {
      case DiscKind::Country: {
        auto it = std::find(trained.state_registry.begin(), trained.state_registry.end(), d.state);
        if (it == trained.state_registry.end()) return std::nullopt;
        return static_cast<std::size_t>(it - trained.state_registry.begin());
      }
      case DiscKind::Length:
        return trained.bins.bin_of(d.n_sentences);
      case DiscKind::Vocab:
        return std::nullopt;  // handled as multi-label below
    }
    return std::nullopt;
  };

  auto vocab_target = [&](const corpus::Document& d) {
    std::vector<double> t(trained.lexicon_tokens.size(), 0.0);
    std::set<std::string> toks;
    for (const auto& tok : d.all_tokens()) toks.insert(tok);
    for (std::size_t i = 0; i < trained.lexicon_tokens.size(); ++i)
      if (toks.count(trained.lexicon_tokens[i])) t[i] = 1.0;
    return t;
  };

  switch (k) {
    case DiscKind::Country:
      if (trained.state_registry.empty())
        throw ValidationError("discriminator_probe: model has no state registry");
      out_dim = trained.state_registry.size();
      break;
    case DiscKind::Length: {
      if (trained.bins.n_bins() == 0)
        throw ValidationError("discriminator_probe: model has no length binning");
      out_dim = trained.bins.n_bins();
      break;
    }
    case DiscKind::Vocab:
      if (trained.lexicon_tokens.empty())
        throw ValidationError("discriminator_probe: model has no spurious lexicon");
      out_dim = trained.lexicon_tokens.size();
      break;
  }

  std::size_t hidden = trained.disc_hidden;
  RngStream rng = diffcore::make_stream(seed, "probe:init");
  auto init_mat = [&](std::size_t r, std::size_t c, const char* name) {
    Tensor t({r, c});
    double s = 1.0 / std::sqrt(static_cast<double>(c));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * s;
    return Value::parameter(std::move(t), name);
  };
  Value w1 = init_mat(hidden, fdim, "probe.w1");
  Value b1 = Value::parameter(Tensor::zeros({hidden}), "probe.b1");
  Value w2 = init_mat(out_dim, hidden, "probe.w2");
  Value b2 = Value::parameter(Tensor::zeros({out_dim}), "probe.b2");
  diffcore::Adam opt({w1, b1, w2, b2}, 1e-3);

  auto logits_of = [&](const Tensor& feat) {
    Value f = Value::constant(feat);
    Value h = diffcore::tanh(diffcore::add(diffcore::matvec(w1, f), b1));
    return diffcore::add(diffcore::matvec(w2, h), b2);
  };

  std::vector<Tensor> fit_feats = featurize(fit);
  std::vector<Tensor> eval_feats = featurize(held_out);

  constexpr std::size_t kEpochs = 80;
  constexpr std::size_t kBatch = 32;
  std::vector<std::size_t> order(fit_feats.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < kEpochs; ++epoch) {
    RngStream srng = diffcore::make_stream(seed, "probe:shuffle:e" + std::to_string(epoch));
    diffcore::shuffle(order, srng);
    for (std::size_t start = 0; start < order.size(); start += kBatch) {
      std::size_t end = std::min(order.size(), start + kBatch);
      std::vector<Value> losses;
      for (std::size_t i = start; i < end; ++i) {
        const corpus::Document& d = fit.docs[order[i]];
        Value lg = logits_of(fit_feats[order[i]]);
        if (k == DiscKind::Vocab) {
          losses.push_back(diffcore::bce_per_label(lg, vocab_target(d)));
        } else {
          auto t = target_of(d);
          if (!t) continue;
          losses.push_back(diffcore::cross_entropy(lg, *t));
        }
      }
      if (losses.empty()) continue;
      opt.zero_grad();
      Value loss = diffcore::scale(diffcore::add_scalars(losses),
                                   1.0 / static_cast<double>(losses.size()));
      loss.backward();
      opt.step();
    }
  }

  // held-out accuracy: argmax match for single-label probes, mean per-label
  // threshold accuracy for the multi-label vocabulary probe
  double correct = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < held_out.docs.size(); ++i) {
    const corpus::Document& d = held_out.docs[i];
    Value lg = logits_of(eval_feats[i]);
    const Tensor& t = lg.val();
    if (k == DiscKind::Vocab) {
      auto target = vocab_target(d);
      double acc = 0.0;
      for (std::size_t c = 0; c < t.size(); ++c)
        if ((t[c] > 0.0) == (target[c] > 0.5)) acc += 1.0;
      correct += acc / static_cast<double>(t.size());
      ++counted;
    } else {
      auto target = target_of(d);
      if (!target) continue;
      std::size_t arg = 0;
      for (std::size_t c = 1; c < t.size(); ++c)
        if (t[c] > t[arg]) arg = c;
      if (arg == *target) correct += 1.0;
      ++counted;
    }
  }
  if (counted == 0) throw ValidationError("discriminator_probe: no evaluable documents");
  return correct / static_cast<double>(counted);
}

}  // namespace deconf::model
