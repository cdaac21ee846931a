#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "graphtext/dataset.hpp"
#include "graphtext/model.hpp"
#include "graphtext/pretrain.hpp"
#include "graphtext/rng.hpp"

namespace graphtext {

// ---------------------------------------------------------------------------
// Input assembly for one record.

struct PreparedPair {
  TextInputs text;
  GraphInputs graph;
};

PreparedPair prepare_pair(const EhrGraph& graph, const TextSequence& text,
                          const SubwordVocabulary& text_vocab,
                          const GraphVocabulary& graph_vocab,
                          const ModelConfig& config);

// ---------------------------------------------------------------------------
// Pair scoring and retrieval.

// P(aligned) from the pair head, softmax over its two logits.
double alignment_score(Model& model, const PreparedPair& pair);

enum class RetrievalDirection { TextRetrieval, GraphRetrieval };

struct RetrievalResult {
  std::vector<int64_t> ranking;  // candidate indices, best first
  std::vector<double> scores;    // per candidate, pool order
  int64_t true_rank = 0;         // 1-based; deterministic tie-break
};

// 1-based rank of entry `true_index` under descending scores; ties resolve
// by pool order (earlier candidates rank ahead).
int64_t rank_with_tie_break(const std::vector<double>& scores,
                            int64_t true_index);

// Scores the query against every pool candidate. TextRetrieval pairs the
// query's graph with candidate texts; GraphRetrieval pairs the query's text
// with candidate graphs. The true partner is the candidate whose admission
// key equals the query's, which must occur exactly once.
RetrievalResult retrieve(Model& model, const PairRecord& query,
                         const std::vector<const PairRecord*>& pool,
                         RetrievalDirection direction,
                         const SubwordVocabulary& text_vocab,
                         const GraphVocabulary& graph_vocab);

// Sigmoid of the single temporal logit.
double predict_binary(Model& model, const PreparedPair& pair);

// ---------------------------------------------------------------------------
// Error detection.

using LiteralPools = std::map<std::string, std::vector<std::string>>;

// Distinct literal surfaces per literal_type. With a non-empty filter, only
// those types are collected.
LiteralPools build_literal_pools(const std::vector<const EhrGraph*>& graphs,
                                 const std::set<std::string>& type_filter = {});

struct CorruptionResult {
  EhrGraph graph;
  std::vector<int> labels;  // per node, 1 = replaced
  int64_t skipped_no_alternative = 0;
};

// Independently replaces literals whose type has a pool with probability p,
// drawing a different same-type literal uniformly. Surfaces in `exclude`
// are never chosen as replacements.
CorruptionResult corrupt_graph(const EhrGraph& graph, double p,
                               const LiteralPools& pools, Rng& rng,
                               const std::set<std::string>* exclude = nullptr);

// Per-node corruption probabilities (sigmoid of the OVA head), length N_v.
std::vector<double> detect_errors(Model& model, const PreparedPair& pair);

// ---------------------------------------------------------------------------
// Generation.

struct GenerationConfig {
  enum class Strategy { Greedy, TopP };
  Strategy strategy = Strategy::Greedy;
  double top_p = 0.9;
  int64_t max_length = 64;
  int sep_count = 1;  // stop after this many emitted [SEP]
  int start_section = 0;
  bool switch_section_after_first_sep = false;
  double sep_mask_prob = 0.5;  // fine-tuning only

  static GenerationConfig for_style(const std::string& style);
};

struct GeneratedText {
  std::vector<int64_t> token_ids;  // includes [CLS] and emitted [SEP]s
  bool truncated = false;
};

// Auto-regressive decoding under the S2S mask: append [MASK], read its
// distribution, emit greedy argmax or nucleus sample, repeat.
GeneratedText generate_note(Model& model, const EhrGraph& graph,
                            const SubwordVocabulary& text_vocab,
                            const GraphVocabulary& graph_vocab,
                            const GenerationConfig& config, Rng& rng);

// Masked-LM loss under the S2S mask: standard masking on content tokens plus
// forced [SEP] masking at sep_mask_prob.
Tensor generation_loss(Model& model, const PairRecord& record,
                       const SubwordVocabulary& text_vocab,
                       const GraphVocabulary& graph_vocab, double mlm_p,
                       double sep_mask_prob, Rng& rng, int64_t* count_out);

// ---------------------------------------------------------------------------
// Fine-tuning loops. Each uses Adam at the given rate over minibatches.

struct FinetuneConfig {
  int64_t epochs = 20;
  double learning_rate = 1e-5;
  int64_t batch_size = 16;
  uint64_t seed = 1;
  std::string log_path;
  // (epoch, mean loss) -> stop?
  std::function<bool(int64_t, double)> epoch_callback;
};

// In-batch negatives, one per positive, on the shared pair head.
double finetune_retrieval(Model& model, const PairDataset& train,
                          const SubwordVocabulary& text_vocab,
                          const GraphVocabulary& graph_vocab,
                          const FinetuneConfig& config);

enum class TemporalTarget { Mortality, Readmission };

double finetune_temporal(Model& model, const PairDataset& train,
                         const SubwordVocabulary& text_vocab,
                         const GraphVocabulary& graph_vocab,
                         TemporalTarget target, const FinetuneConfig& config);

// Corruptions are redrawn every epoch from the run seed.
double finetune_error_detection(Model& model, const PairDataset& train,
                                const SubwordVocabulary& text_vocab,
                                const GraphVocabulary& graph_vocab,
                                const LiteralPools& pools, double corruption_p,
                                const FinetuneConfig& config,
                                bool exclude_text_literals = false);

double finetune_generation(Model& model, const PairDataset& train,
                           const SubwordVocabulary& text_vocab,
                           const GraphVocabulary& graph_vocab,
                           const GenerationConfig& gen_config,
                           const FinetuneConfig& config, double mlm_p = 0.15);

// ---------------------------------------------------------------------------
// Evaluation drivers.

struct RetrievalEval {
  std::vector<int64_t> ranks;
  double mrr = 0.0;
  double hits_at_10 = 0.0;
};

RetrievalEval evaluate_retrieval(Model& model, const PairDataset& pool,
                                 RetrievalDirection direction,
                                 const SubwordVocabulary& text_vocab,
                                 const GraphVocabulary& graph_vocab);

struct TemporalEval {
  std::vector<double> scores;
  std::vector<int> labels;
  double auprc_value = 0.0;
};

TemporalEval evaluate_temporal(Model& model, const PairDataset& test,
                               TemporalTarget target,
                               const SubwordVocabulary& text_vocab,
                               const GraphVocabulary& graph_vocab);

struct ErrorDetectionEval {
  std::vector<int> predictions;  // thresholded at 0.5
  std::vector<int> labels;
  double f1_value = 0.0;
};

ErrorDetectionEval evaluate_error_detection(
    Model& model, const PairDataset& test, const LiteralPools& pools,
    double corruption_p, uint64_t corruption_seed,
    const SubwordVocabulary& text_vocab, const GraphVocabulary& graph_vocab,
    bool exclude_text_literals = false);

struct GenerationEval {
  double rouge2 = 0.0;
  double rougel = 0.0;
  std::vector<std::string> outputs;  // detokenized
};

GenerationEval evaluate_generation(Model& model, const PairDataset& test,
                                   const SubwordVocabulary& text_vocab,
                                   const GraphVocabulary& graph_vocab,
                                   const GenerationConfig& config,
                                   uint64_t seed);

}  // namespace graphtext
