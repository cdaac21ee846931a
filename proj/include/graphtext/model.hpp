#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "graphtext/ehr_graph.hpp"
#include "graphtext/rng.hpp"
#include "graphtext/tensor.hpp"
#include "graphtext/text.hpp"

namespace graphtext {

// ---------------------------------------------------------------------------
// Configuration.

struct ModelConfig {
  int64_t hidden = 128;
  int64_t heads = 4;
  int64_t text_layers = 2;
  int64_t graph_layers = 2;
  int64_t cross_blocks = 4;
  int64_t ff_inner = 512;
  double dropout = 0.1;

  bool use_summary = true;
  bool use_init_embedding = false;
  bool use_adjacency = true;

  int64_t text_vocab_size = 0;
  int64_t graph_vocab_size = 0;
  int64_t relation_count = 0;
  int64_t max_text_len = kMaxTextLength;
  int64_t max_nodes = kDefaultNodeCap;

  double mask_value = -1e9;
  double layer_norm_eps = 1e-12;
  double init_std = 0.02;

  int64_t head_dim() const { return hidden / heads; }
  int64_t literal_vocab_size() const {
    return graph_vocab_size - GraphVocabulary::kReservedCount;
  }
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// ---------------------------------------------------------------------------
// Prepared per-sample inputs. Sequences may be padded; masks mark padding.

struct TextInputs {
  std::vector<int64_t> token_ids;
  std::vector<int64_t> positions;
  std::vector<int> section_ids;
  Tensor pad_mask;  // (1, L_T) additive key mask
  int64_t real_len = 0;

  int64_t length() const { return static_cast<int64_t>(token_ids.size()); }
};

struct GraphInputs {
  std::vector<int64_t> node_ids;  // graph-vocabulary ids, [PAD]_G beyond real_len
  std::vector<int64_t> positions;
  std::vector<bool> is_literal;
  std::vector<std::vector<int64_t>> descriptions;  // per node, text token ids
  std::vector<int64_t> desc_tokens;                // concatenation, H_D source
  Tensor adjacency_mask;  // (L_G, L_G)
  Tensor pad_mask;        // (1, L_G)
  Tensor desc_pad_mask;   // (1, max(N_D, 1))
  int64_t real_len = 0;

  int64_t length() const { return static_cast<int64_t>(node_ids.size()); }
};

TextInputs make_text_inputs(const TextSequence& seq, const ModelConfig& config,
                            int64_t pad_to = 0);
GraphInputs make_graph_inputs(const EhrGraph& graph, const EncodedGraph& encoded,
                              const ModelConfig& config, int64_t pad_to = 0);

// Causal (lower-triangular) additive mask for the text stream in
// sequence-to-sequence mode; combines with padding.
Tensor build_s2s_text_mask(int64_t text_len, const Tensor& pad_mask,
                           double mask_value = -1e9);

// ---------------------------------------------------------------------------
// Parameter bundles.

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln_gamma, ln_beta;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
  Tensor ln_gamma, ln_beta;
};

struct EncoderLayerParams {
  AttentionParams attn;
  FeedForwardParams ff;
};

struct GraphLayerParams {
  EncoderLayerParams gat;
  EncoderLayerParams summary;
};

struct CrossBlockParams {
  AttentionParams text_cross, graph_cross, text_self, graph_self;
  FeedForwardParams text_ff, graph_ff;
};

// ---------------------------------------------------------------------------
// Forward results.

struct AttentionMap {
  std::string name;  // e.g. "cross.2.graph_queries_text"
  Tensor probs;      // (heads, L_q, L_k), rows normalized over unmasked keys
};

struct EncoderOutputs {
  Tensor text_states;   // (L_T, hidden)
  Tensor graph_states;  // (1 + L_G, hidden); row 0 is the summary position
  Tensor summary;       // (1, hidden)
  Tensor pooled;        // (1, 2*hidden): [SUM] state ++ [CLS] state
  std::vector<AttentionMap> attention;
};

struct ForwardOptions {
  bool s2s_mode = false;
  bool retain_attention = false;
};

// ---------------------------------------------------------------------------
// The two-stream encoder with task heads.

class Model {
 public:
  Model(ModelConfig config, uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  // Ablation switches are behavioral and may be toggled on a built model;
  // every configuration owns the same parameter set.
  void set_ablation(bool use_summary, bool use_init_embedding,
                    bool use_adjacency);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  // Dropout stream; reseeded per training run for reproducibility.
  void seed_dropout(uint64_t seed) { dropout_rng_ = Rng(seed); }

  std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const {
    return params_;
  }
  Tensor param(const std::string& name) const;

  // --- embeddings
  Tensor embed_text(const TextInputs& in);
  Tensor embed_graph(const GraphInputs& in);
  Tensor embed_description_tokens(const std::vector<int64_t>& tokens);

  // --- encoder stacks (exposed for tests)
  Tensor encode_text_stream(Tensor h, const Tensor& mask,
                            std::vector<AttentionMap>* retain = nullptr);
  std::pair<Tensor, Tensor> encode_graph_stream(
      Tensor h, const Tensor& struct_mask, const Tensor& h_d,
      const Tensor& d_mask, std::vector<AttentionMap>* retain = nullptr);

  // --- full pipeline
  EncoderOutputs forward(const TextInputs& text, const GraphInputs& graph,
                         const ForwardOptions& options = {});

  // --- task heads
  Tensor mlm_logits(const Tensor& text_states);    // (L_T, text vocab)
  Tensor mlp_logits(const Tensor& graph_states);   // (L_G, literal vocab)
  Tensor rc_logits(const Tensor& graph_states,     // (n_pairs, relations)
                   const std::vector<std::pair<int64_t, int64_t>>& node_pairs);
  Tensor pair_logits(const Tensor& pooled);        // (1, 2) alignment scores
  Tensor binary_logit(const Tensor& pooled);       // (1, 1) temporal head
  Tensor ova_logits(const Tensor& graph_states);   // (L_G, 1) per-node head

  // one full transformer layer: attention + residual/norm + feed-forward
  Tensor encoder_layer(const Tensor& h_q, const Tensor& h_kv, const Tensor& mask,
                       const EncoderLayerParams& p, const std::string& map_name,
                       std::vector<AttentionMap>* retain);

 private:
  Tensor attention_unit(const Tensor& h_q, const Tensor& h_kv, const Tensor& mask,
                        const AttentionParams& p, const std::string& map_name,
                        std::vector<AttentionMap>* retain);
  Tensor feed_forward_unit(const Tensor& h, const FeedForwardParams& p);
  Tensor maybe_dropout(const Tensor& x);

  Tensor new_param(const std::string& name, Shape shape, double std_dev);
  Tensor new_zeros_param(const std::string& name, Shape shape);
  Tensor new_ones_param(const std::string& name, Shape shape);
  AttentionParams make_attention_params(const std::string& prefix);
  FeedForwardParams make_ff_params(const std::string& prefix);
  EncoderLayerParams make_layer_params(const std::string& prefix);

  ModelConfig config_;
  Rng init_rng_;
  Rng dropout_rng_;
  bool training_ = false;

  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, Tensor> by_name_;

  Tensor text_token_table_, text_pos_table_, text_section_table_;
  Tensor node_table_, node_pos_table_;
  std::vector<EncoderLayerParams> text_layers_;
  std::vector<GraphLayerParams> graph_layers_;
  std::vector<CrossBlockParams> cross_blocks_;
  Tensor mlm_w_, mlm_b_, mlp_w_, mlp_b_, rc_w_, rc_b_;
  Tensor pair_w1_, pair_b1_, pair_w2_, pair_b2_;
  Tensor binary_w1_, binary_b1_, binary_w2_, binary_b2_;
  Tensor ova_w_, ova_b_;
};

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary container, parameter path -> shape -> values.
// Round-trips bit-exactly.

void save_checkpoint(const Model& model, const std::string& path);
// Loads parameters by name. With allow_partial, missing/unknown names are
// skipped (weight-import path); otherwise any mismatch throws.
void load_checkpoint(Model& model, const std::string& path,
                     bool allow_partial = false);
// Reads just the embedded config from a checkpoint.
ModelConfig checkpoint_config(const std::string& path);

}  // namespace graphtext
