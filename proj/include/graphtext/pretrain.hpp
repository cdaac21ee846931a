#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "graphtext/dataset.hpp"
#include "graphtext/model.hpp"
#include "graphtext/optimizer.hpp"
#include "graphtext/rng.hpp"

namespace graphtext {

constexpr int64_t kIgnoreLabel = -1;

// ---------------------------------------------------------------------------
// Masking plans.

enum class MaskAction { MaskToken, RandomToken, Keep };

struct MaskingPlan {
  std::vector<int64_t> positions;    // selected positions
  std::vector<MaskAction> actions;   // aligned with positions
  std::vector<int64_t> labels;       // full length, kIgnoreLabel when unmasked
};

// Mutates `tokens` in place per the 80/10/10 rule; special tokens are never
// selected. The action split is adjustable for tests.
MaskingPlan apply_mlm_mask(std::vector<int64_t>& tokens, double p, Rng& rng,
                           int64_t vocab_size, double mask_frac = 0.8,
                           double random_frac = 0.1);

// Literal nodes only, always replaced by [MASK]_G. Labels are literal
// indices (graph id minus the reserved count).
MaskingPlan apply_mlp_mask(std::vector<int64_t>& node_ids,
                           const std::vector<bool>& is_literal, double p,
                           Rng& rng);

// Uniform sample of unordered node pairs: round(fraction * C(N,2)) of them,
// bounded by cap; labels come from the edge set, Not Connected otherwise.
// Pairs are canonical (lower index first).
struct RelationSample {
  std::vector<std::pair<int64_t, int64_t>> pairs;
  std::vector<int64_t> labels;
};
RelationSample sample_relation_pairs(const EhrGraph& graph, double fraction,
                                     Rng& rng,
                                     const RelationVocabulary& relations,
                                     int64_t cap = 512);

// ---------------------------------------------------------------------------
// Batches.

struct TaskSet {
  bool mlm = true, mlp = true, rc = true, ap = true;

  bool any() const { return mlm || mlp || rc || ap; }
  std::string to_string() const;
  static TaskSet parse(const std::string& csv);  // e.g. "mlm,mlp,ap"
};

struct PretrainOptions {
  double mlm_p = 0.15;
  double mlp_p = 0.15;
  double rc_fraction = 0.10;
  int64_t rc_cap = 512;
  double ap_replace_p = 0.5;
  double mlm_mask_frac = 0.8;
  double mlm_random_frac = 0.1;
};

struct PretrainSample {
  std::string admission_key;
  TextInputs text;    // masked token ids
  GraphInputs graph;  // masked node ids, descriptions scrubbed to match
  std::vector<int64_t> mlm_labels;  // length = text length
  std::vector<int64_t> mlp_labels;  // length = graph length, literal indices
  std::vector<std::pair<int64_t, int64_t>> rc_pairs;
  std::vector<int64_t> rc_labels;
  int alignment_label = 1;
};

// Builds one batch from a dataset slice. Misaligned pairs (text swapped in
// from another admission) carry no MLM/MLP labels. A slice of one cannot be
// replaced; the skip is counted in `replacement_skipped`.
std::vector<PretrainSample> build_pretrain_batch(
    const std::vector<const PairRecord*>& slice,
    const SubwordVocabulary& text_vocab, const GraphVocabulary& graph_vocab,
    const RelationVocabulary& relations, const ModelConfig& config,
    const TaskSet& tasks, const PretrainOptions& options, Rng& rng,
    int64_t* replacement_skipped = nullptr);

// ---------------------------------------------------------------------------
// Training step.

struct PretrainLosses {
  double mlm = 0.0, mlp = 0.0, rc = 0.0, ap = 0.0, total = 0.0;
  int64_t mlm_count = 0, mlp_count = 0, rc_count = 0, ap_count = 0;
  int64_t ap_correct = 0;
  Tensor total_loss;  // backward-ready
};

// Forward + per-task losses over the batch; total is the unweighted sum of
// the active task losses. Throws when the active set is empty.
PretrainLosses pretrain_step(Model& model,
                             const std::vector<PretrainSample>& batch,
                             const TaskSet& active);

// ---------------------------------------------------------------------------
// Training loop.

struct PretrainRunConfig {
  int64_t epochs = 40;
  int64_t batch_size = 16;
  double learning_rate = 1e-4;
  uint64_t seed = 1;
  TaskSet tasks;
  PretrainOptions options;
  std::string log_path;  // JSONL, one line per step; empty disables
  // Called after each epoch with (epoch, mean losses); returning true stops
  // training early.
  std::function<bool(int64_t, const PretrainLosses&)> epoch_callback;
};

struct PretrainRunStats {
  int64_t epochs_run = 0;
  int64_t steps = 0;
  double first_epoch_mlm = 0.0;
  double last_epoch_mlm = 0.0;
  double last_epoch_total = 0.0;
  double last_epoch_ap_accuracy = 0.0;
};

PretrainRunStats run_pretraining(Model& model, const PairDataset& train,
                                 const SubwordVocabulary& text_vocab,
                                 const GraphVocabulary& graph_vocab,
                                 const RelationVocabulary& relations,
                                 const PretrainRunConfig& run);

}  // namespace graphtext
