#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "deconf/autodiff.hpp"
#include "deconf/corpus.hpp"
#include "deconf/stats.hpp"
#include "deconf/treeminer.hpp"

namespace deconf::model {

using diffcore::Value;

enum class Variant { Baseline, ParaRem, GradCou, GradLen, GradVocab, GradAll };

Variant parse_variant(const std::string& s);
std::string variant_name(Variant v);

// every variant except the baseline trains on number-stripped text
bool variant_strips_numbers(Variant v);
bool variant_has_country(Variant v);
bool variant_has_length(Variant v);
bool variant_has_vocab(Variant v);

struct ModelConfig {
  std::size_t embed_dim = 768;
  std::size_t token_ctx_dim = 300;
  std::size_t gru_hidden = 200;  // per direction
  std::size_t sent_ctx_dim = 200;
  std::size_t clf_hidden = 100;
  std::size_t disc_hidden = 100;
  std::size_t packet_max_tokens = 512;
  double dropout = 0.1;
  double lambda_country = 1.0;
  double lambda_length = 1.0;
  double lambda_vocab = 1.0;
  std::size_t batch_size = 16;
  std::vector<double> lr_grid = {1e-3, 3e-4};
  std::size_t max_epochs = 30;
  std::size_t patience = 3;
  std::size_t length_bins = 4;
  // warmup epochs with the discriminators held at lambda = 0 before the
  // adversarial phase starts; checkpoints are taken from the adversarial
  // phase only. 0 = adversary active from the first epoch.
  std::size_t adversary_start_epoch = 0;
  stats::Task task = stats::Task::J;
  Variant variant = Variant::Baseline;
  std::size_t scale_divisor = 1;  // dims divided by this at bundle init

  static ModelConfig full_preset(stats::Task t);
  static ModelConfig desk_preset(stats::Task t);
};

ModelConfig config_from_json_file(const std::string& path);
void write_config_json(const ModelConfig& cfg, const std::string& path);

struct DiscriminatorHead {
  Value w1, b1, w2, b2;
  double lambda = 1.0;
};

struct ModelBundle {
  ModelConfig cfg;
  // effective (scaled) dimensions
  std::size_t embed_dim = 0, token_ctx = 0, gru_hidden = 0, sent_ctx = 0;
  std::size_t clf_hidden = 0, disc_hidden = 0, packet_max = 0;

  std::vector<std::string> vocab;  // id -> token; id 0 is the unknown token
  std::unordered_map<std::string, int> vocab_index;
  std::vector<std::string> state_registry;   // sorted unique training states
  corpus::LengthBinning bins;
  std::vector<std::string> lexicon_tokens;   // spurious lexicon order
  std::vector<std::string> articles;

  Value embedding;  // {V, embed_dim}
  diffcore::AttentionParams token_att, sent_att;
  diffcore::GruParams gru_fwd, gru_bwd;
  Value clf_w1, clf_b1, clf_w2, clf_b2;
  std::optional<DiscriminatorHead> d_country, d_length, d_vocab;

  std::size_t feature_dim() const { return 2 * gru_hidden; }
  std::size_t output_dim() const;
  std::size_t classifier_input_dim() const;  // feature_dim + registry size for task A|B
  int token_id(const std::string& tok) const;

  std::vector<Value> parameters() const;  // stable order
  std::vector<diffcore::Tensor> snapshot() const;
  void restore(const std::vector<diffcore::Tensor>& snap);
};

// Builds registries from the training split and initializes parameters from
// the seed. gradVocab/gradAll require a lexicon with at least one spurious
// token; gradLen/gradAll derive length bins from the training split.
ModelBundle init_bundle(const ModelConfig& cfg, const corpus::Corpus& train_split,
                        const treeminer::SpuriousLexicon* lexicon, std::uint64_t seed);

// ---- sentence packing ---------------------------------------------------

struct Packing {
  struct TokenRef {
    int paragraph = 0;
    std::string token;
  };
  std::vector<std::vector<std::size_t>> packets;  // packet -> flat token indices
  std::vector<TokenRef> tokens;                   // flat, in document order
  std::size_t n_paragraphs = 0;
};

// Greedy packing: sentences are appended to the current packet while the
// total stays within max_tokens; an oversized sentence is split into
// max_tokens-sized parts.
Packing pack_sentences(const corpus::Document& d, std::size_t max_tokens);

std::vector<std::vector<int>> packet_token_ids(const ModelBundle& b, const Packing& p);

// ---- forward ------------------------------------------------------------

// Deterministic dropout context: each (document, site) pair draws from its
// own stream, so adding a branch never perturbs another branch's masks.
struct DropoutCtx {
  std::uint64_t seed = 0;
  double rate = 0.0;
};

struct DocForward {
  Value features;                        // {2*gru_hidden}
  std::vector<Value> packet_embeddings;  // inputs, one {n,d} per packet
};

DocForward extract_features(const ModelBundle& b, const corpus::Document& d,
                            const DropoutCtx* drop);

// forward from caller-supplied packet embedding leaves (attribution path)
Value features_from_embeddings(const ModelBundle& b, const std::vector<Value>& packet_embs);

Value classifier_logits(const ModelBundle& b, const Value& features,
                        const corpus::Document& d, const DropoutCtx* drop);

std::vector<double> predict_logits(const ModelBundle& b, const corpus::Document& d);

// main-task prediction at the 0.5 sigmoid threshold
std::set<std::string> predict_positive(const ModelBundle& b, const corpus::Document& d);

struct LossBreakdown {
  double total = 0.0;
  double main = 0.0;
  std::map<std::string, double> disc;  // per active discriminator
};

// Joint objective: mean main loss plus sum_k lambda_k * mean discriminator
// loss, every discriminator branch entered through grl(features, lambda_k).
// Batch reduction is a sequential sum over documents sorted by doc_id.
Value forward_loss(const ModelBundle& b, std::vector<const corpus::Document*> batch,
                   const DropoutCtx* drop, LossBreakdown* parts);

// ---- training -----------------------------------------------------------

struct TrainLogEntry {
  double lr = 0.0;
  std::size_t epoch = 0;
  LossBreakdown train_loss;
  double dev_f1 = 0.0;
  bool improved = false;
};

struct TrainResult {
  ModelBundle model;
  double best_dev_f1 = 0.0;
  double best_lr = 0.0;
  std::size_t best_epoch = 0;
  std::vector<TrainLogEntry> log;
  std::vector<double> diverged_lrs;
};

// Grid search over learning rates with early stopping on dev macro-F1 of
// the main task; keeps the best-dev checkpoint. Grid points are independent
// and may run concurrently (`parallel`); the log is ordered by grid point.
TrainResult train(const corpus::Corpus& train_split, const corpus::Corpus& dev_split,
                  const ModelConfig& cfg, const treeminer::SpuriousLexicon* lexicon,
                  std::uint64_t seed, std::size_t parallel = 1);

// ---- discriminator probe --------------------------------------------------

enum class DiscKind { Country, Length, Vocab };

// Freezes the feature extractor, trains a fresh discriminator-shaped probe
// on its outputs over `fit`, and reports accuracy on `held_out`.
double discriminator_probe(const ModelBundle& trained, const corpus::Corpus& fit,
                           const corpus::Corpus& held_out, DiscKind k, std::uint64_t seed);

// ---- checkpoints ----------------------------------------------------------

// JSON checkpoint: format version, manifest (variant/task/registries/bins),
// and a name -> {shape, row-major data} parameter map.
void save_checkpoint(const ModelBundle& b, const std::string& path,
                     const std::map<std::string, std::string>& extra_manifest = {});
ModelBundle load_checkpoint(const std::string& path);

}  // namespace deconf::model
