#include "graphtext/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace graphtext {

using nlohmann::json;

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (hidden <= 0 || heads <= 0 || hidden % heads != 0) {
    throw std::invalid_argument("config: hidden must be a positive multiple of heads");
  }
  if (text_layers < 0 || graph_layers < 0 || cross_blocks < 0) {
    throw std::invalid_argument("config: layer counts must be non-negative");
  }
  if (ff_inner <= 0) throw std::invalid_argument("config: ff_inner must be positive");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("config: dropout must be in [0, 1)");
  }
  if (text_vocab_size < SubwordVocabulary::kReservedCount) {
    throw std::invalid_argument("config: text vocabulary too small");
  }
  if (graph_vocab_size < GraphVocabulary::kReservedCount) {
    throw std::invalid_argument("config: graph vocabulary too small");
  }
  if (relation_count < 1) {
    throw std::invalid_argument("config: relation_count must be at least 1");
  }
  if (max_text_len <= 0 || max_nodes <= 0) {
    throw std::invalid_argument("config: sequence caps must be positive");
  }
  if (mask_value >= -1e8) {
    throw std::invalid_argument("config: mask_value must be a large negative number");
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["hidden"] = hidden;
  j["heads"] = heads;
  j["text_layers"] = text_layers;
  j["graph_layers"] = graph_layers;
  j["cross_blocks"] = cross_blocks;
  j["ff_inner"] = ff_inner;
  j["dropout"] = dropout;
  j["use_summary"] = use_summary;
  j["use_init_embedding"] = use_init_embedding;
  j["use_adjacency"] = use_adjacency;
  j["text_vocab_size"] = text_vocab_size;
  j["graph_vocab_size"] = graph_vocab_size;
  j["relation_count"] = relation_count;
  j["max_text_len"] = max_text_len;
  j["max_nodes"] = max_nodes;
  j["mask_value"] = mask_value;
  j["layer_norm_eps"] = layer_norm_eps;
  j["init_std"] = init_std;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.text_layers = j.value("text_layers", c.text_layers);
  c.graph_layers = j.value("graph_layers", c.graph_layers);
  c.cross_blocks = j.value("cross_blocks", c.cross_blocks);
  c.ff_inner = j.value("ff_inner", c.ff_inner);
  c.dropout = j.value("dropout", c.dropout);
  c.use_summary = j.value("use_summary", c.use_summary);
  c.use_init_embedding = j.value("use_init_embedding", c.use_init_embedding);
  c.use_adjacency = j.value("use_adjacency", c.use_adjacency);
  c.text_vocab_size = j.value("text_vocab_size", c.text_vocab_size);
  c.graph_vocab_size = j.value("graph_vocab_size", c.graph_vocab_size);
  c.relation_count = j.value("relation_count", c.relation_count);
  c.max_text_len = j.value("max_text_len", c.max_text_len);
  c.max_nodes = j.value("max_nodes", c.max_nodes);
  c.mask_value = j.value("mask_value", c.mask_value);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  c.init_std = j.value("init_std", c.init_std);
  return c;
}

// ---------------------------------------------------------------------------
// Input preparation

TextInputs make_text_inputs(const TextSequence& seq, const ModelConfig& config,
                            int64_t pad_to) {
  TextInputs in;
  in.real_len = seq.length();
  if (in.real_len > config.max_text_len) {
    throw std::invalid_argument("text longer than configured maximum");
  }
  int64_t total = pad_to > 0 ? pad_to : in.real_len;
  if (total < in.real_len) {
    throw std::invalid_argument("pad_to shorter than the sequence");
  }
  in.token_ids = seq.token_ids;
  in.positions = seq.positions;
  in.section_ids = seq.section_ids;
  std::vector<double> mask(total, 0.0);
  for (int64_t i = in.real_len; i < total; ++i) {
    in.token_ids.push_back(SubwordVocabulary::kPad);
    in.positions.push_back(i);
    in.section_ids.push_back(0);
    mask[i] = config.mask_value;
  }
  in.pad_mask = Tensor::from_values({1, total}, std::move(mask));
  return in;
}

GraphInputs make_graph_inputs(const EhrGraph& graph, const EncodedGraph& encoded,
                              const ModelConfig& config, int64_t pad_to) {
  GraphInputs in;
  in.real_len = encoded.length();
  if (in.real_len > config.max_nodes) {
    throw std::invalid_argument("graph larger than configured node cap");
  }
  int64_t total = pad_to > 0 ? pad_to : in.real_len;
  if (total < in.real_len) {
    throw std::invalid_argument("pad_to smaller than the graph");
  }
  in.node_ids = encoded.node_ids;
  in.positions = encoded.positions;
  in.is_literal = encoded.is_literal;
  in.descriptions = encoded.descriptions;
  in.desc_tokens = encoded.descriptions_concat;
  std::vector<double> mask(total, 0.0);
  for (int64_t i = in.real_len; i < total; ++i) {
    in.node_ids.push_back(GraphVocabulary::kPadG);
    in.positions.push_back(i);
    in.is_literal.push_back(false);
    in.descriptions.emplace_back();
    mask[i] = config.mask_value;
  }
  in.pad_mask = Tensor::from_values({1, total}, std::move(mask));
  in.adjacency_mask = build_adjacency_mask(graph, total, config.mask_value);

  if (in.desc_tokens.empty()) {
    // keep the summary attention well-formed: one fully masked key
    in.desc_tokens.push_back(SubwordVocabulary::kPad);
    in.desc_pad_mask =
        Tensor::from_values({1, 1}, {config.mask_value});
  } else {
    in.desc_pad_mask =
        Tensor::zeros({1, static_cast<int64_t>(in.desc_tokens.size())});
  }
  return in;
}

Tensor build_s2s_text_mask(int64_t text_len, const Tensor& pad_mask,
                           double mask_value) {
  if (text_len <= 0) throw std::invalid_argument("s2s mask: empty text");
  std::vector<double> m(text_len * text_len, 0.0);
  for (int64_t q = 0; q < text_len; ++q) {
    for (int64_t k = 0; k < text_len; ++k) {
      double v = k > q ? mask_value : 0.0;
      if (pad_mask.defined() && pad_mask.values()[k] != 0.0) v = mask_value;
      m[q * text_len + k] = v;
    }
  }
  return Tensor::from_values({text_len, text_len}, std::move(m));
}

// ---------------------------------------------------------------------------
// Model construction

Model::Model(ModelConfig config, uint64_t init_seed)
    : config_(std::move(config)),
      init_rng_(init_seed),
      dropout_rng_(Rng::mix(init_seed, 0x9d10)) {
  config_.validate();
  const int64_t d = config_.hidden;

  text_token_table_ = new_param("text.embed.token", {config_.text_vocab_size, d},
                                config_.init_std);
  text_pos_table_ = new_param("text.embed.position", {config_.max_text_len, d},
                              config_.init_std);
  text_section_table_ = new_param("text.embed.section", {3, d}, config_.init_std);
  node_table_ = new_param("graph.embed.node", {config_.graph_vocab_size, d},
                          config_.init_std);
  node_pos_table_ = new_param("graph.embed.position", {config_.max_nodes, d},
                              config_.init_std);

  for (int64_t l = 0; l < config_.text_layers; ++l) {
    text_layers_.push_back(make_layer_params("text." + std::to_string(l)));
  }
  for (int64_t l = 0; l < config_.graph_layers; ++l) {
    GraphLayerParams g;
    g.gat = make_layer_params("graph." + std::to_string(l) + ".gat");
    g.summary = make_layer_params("graph." + std::to_string(l) + ".summary");
    graph_layers_.push_back(std::move(g));
  }
  for (int64_t b = 0; b < config_.cross_blocks; ++b) {
    std::string p = "cross." + std::to_string(b);
    CrossBlockParams c;
    c.text_cross = make_attention_params(p + ".text_cross");
    c.graph_cross = make_attention_params(p + ".graph_cross");
    c.text_self = make_attention_params(p + ".text_self");
    c.graph_self = make_attention_params(p + ".graph_self");
    c.text_ff = make_ff_params(p + ".text_ff");
    c.graph_ff = make_ff_params(p + ".graph_ff");
    cross_blocks_.push_back(std::move(c));
  }

  mlm_w_ = new_param("head.mlm.w", {d, config_.text_vocab_size}, config_.init_std);
  mlm_b_ = new_zeros_param("head.mlm.b", {config_.text_vocab_size});
  int64_t literals = std::max<int64_t>(config_.literal_vocab_size(), 1);
  mlp_w_ = new_param("head.mlp.w", {d, literals}, config_.init_std);
  mlp_b_ = new_zeros_param("head.mlp.b", {literals});
  rc_w_ = new_param("head.rc.w", {2 * d, config_.relation_count}, config_.init_std);
  rc_b_ = new_zeros_param("head.rc.b", {config_.relation_count});
  pair_w1_ = new_param("head.pair.w1", {2 * d, d}, config_.init_std);
  pair_b1_ = new_zeros_param("head.pair.b1", {d});
  pair_w2_ = new_param("head.pair.w2", {d, 2}, config_.init_std);
  pair_b2_ = new_zeros_param("head.pair.b2", {2});
  binary_w1_ = new_param("head.binary.w1", {2 * d, d}, config_.init_std);
  binary_b1_ = new_zeros_param("head.binary.b1", {d});
  binary_w2_ = new_param("head.binary.w2", {d, 1}, config_.init_std);
  binary_b2_ = new_zeros_param("head.binary.b2", {1});
  ova_w_ = new_param("head.ova.w", {d, 1}, config_.init_std);
  ova_b_ = new_zeros_param("head.ova.b", {1});
}

void Model::set_ablation(bool use_summary, bool use_init_embedding,
                         bool use_adjacency) {
  config_.use_summary = use_summary;
  config_.use_init_embedding = use_init_embedding;
  config_.use_adjacency = use_adjacency;
}

Tensor Model::param(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) {
    throw std::invalid_argument("unknown parameter: " + name);
  }
  return it->second;
}

Tensor Model::new_param(const std::string& name, Shape shape, double std_dev) {
  Tensor t = Tensor::randn(std::move(shape), init_rng_, std_dev, true);
  params_.emplace_back(name, t);
  by_name_[name] = t;
  return t;
}

Tensor Model::new_zeros_param(const std::string& name, Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  params_.emplace_back(name, t);
  by_name_[name] = t;
  return t;
}

Tensor Model::new_ones_param(const std::string& name, Shape shape) {
  Tensor t = Tensor::full(std::move(shape), 1.0, true);
  params_.emplace_back(name, t);
  by_name_[name] = t;
  return t;
}

AttentionParams Model::make_attention_params(const std::string& prefix) {
  const int64_t d = config_.hidden;
  AttentionParams p;
  p.wq = new_param(prefix + ".wq", {d, d}, config_.init_std);
  p.bq = new_zeros_param(prefix + ".bq", {d});
  p.wk = new_param(prefix + ".wk", {d, d}, config_.init_std);
  p.bk = new_zeros_param(prefix + ".bk", {d});
  p.wv = new_param(prefix + ".wv", {d, d}, config_.init_std);
  p.bv = new_zeros_param(prefix + ".bv", {d});
  p.wo = new_param(prefix + ".wo", {d, d}, config_.init_std);
  p.bo = new_zeros_param(prefix + ".bo", {d});
  p.ln_gamma = new_ones_param(prefix + ".ln_g", {d});
  p.ln_beta = new_zeros_param(prefix + ".ln_b", {d});
  return p;
}

FeedForwardParams Model::make_ff_params(const std::string& prefix) {
  const int64_t d = config_.hidden;
  FeedForwardParams p;
  p.w1 = new_param(prefix + ".w1", {d, config_.ff_inner}, config_.init_std);
  p.b1 = new_zeros_param(prefix + ".b1", {config_.ff_inner});
  p.w2 = new_param(prefix + ".w2", {config_.ff_inner, d}, config_.init_std);
  p.b2 = new_zeros_param(prefix + ".b2", {d});
  p.ln_gamma = new_ones_param(prefix + ".ln_g", {d});
  p.ln_beta = new_zeros_param(prefix + ".ln_b", {d});
  return p;
}

EncoderLayerParams Model::make_layer_params(const std::string& prefix) {
  EncoderLayerParams p;
  p.attn = make_attention_params(prefix + ".attn");
  p.ff = make_ff_params(prefix + ".ffn");
  return p;
}

// ---------------------------------------------------------------------------
// Embeddings

Tensor Model::embed_text(const TextInputs& in) {
  Tensor tok = gather_rows(text_token_table_, in.token_ids);
  Tensor pos = gather_rows(text_pos_table_, in.positions);
  std::vector<int64_t> secs(in.section_ids.begin(), in.section_ids.end());
  Tensor sec = gather_rows(text_section_table_, secs);
  return add(add(tok, pos), sec);
}

Tensor Model::embed_graph(const GraphInputs& in) {
  Tensor nodes;
  if (!config_.use_init_embedding) {
    nodes = gather_rows(node_table_, in.node_ids);
  } else {
    // literal embeddings become the mean of their description token
    // embeddings; abstract, special and masked nodes keep the table rows
    std::vector<Tensor> rows;
    rows.reserve(in.node_ids.size());
    for (size_t i = 0; i < in.node_ids.size(); ++i) {
      bool use_desc = i < in.is_literal.size() && in.is_literal[i] &&
                      in.node_ids[i] != GraphVocabulary::kMaskG &&
                      !in.descriptions[i].empty();
      if (use_desc) {
        Tensor desc = gather_rows(text_token_table_, in.descriptions[i]);
        rows.push_back(reshape(mean_axis0(desc), {1, config_.hidden}));
      } else {
        rows.push_back(gather_rows(node_table_, {in.node_ids[i]}));
      }
    }
    nodes = concat(rows, 0);
  }
  Tensor pos = gather_rows(node_pos_table_, in.positions);
  return add(nodes, pos);
}

Tensor Model::embed_description_tokens(const std::vector<int64_t>& tokens) {
  return gather_rows(text_token_table_, tokens);
}

// ---------------------------------------------------------------------------
// Sublayers

Tensor Model::maybe_dropout(const Tensor& x) {
  if (!training_ || config_.dropout <= 0.0) return x;
  return dropout(x, config_.dropout, dropout_rng_);
}

Tensor Model::attention_unit(const Tensor& h_q, const Tensor& h_kv,
                             const Tensor& mask, const AttentionParams& p,
                             const std::string& map_name,
                             std::vector<AttentionMap>* retain) {
  const int64_t heads = config_.heads;
  const int64_t dk = config_.head_dim();
  const int64_t lq = h_q.dim(0);
  const int64_t lk = h_kv.dim(0);

  Tensor q = add(matmul(h_q, p.wq), p.bq);
  Tensor k = add(matmul(h_kv, p.wk), p.bk);
  Tensor v = add(matmul(h_kv, p.wv), p.bv);
  Tensor qh = permute(reshape(q, {lq, heads, dk}), {1, 0, 2});
  Tensor kh = permute(reshape(k, {lk, heads, dk}), {1, 2, 0});
  Tensor vh = permute(reshape(v, {lk, heads, dk}), {1, 0, 2});

  Tensor scores = scale(matmul(qh, kh), 1.0 / std::sqrt(double(dk)));
  Tensor probs = masked_softmax(scores, mask);
  if (retain) retain->push_back({map_name, probs});
  Tensor ctx = matmul(maybe_dropout(probs), vh);
  Tensor merged = reshape(permute(ctx, {1, 0, 2}), {lq, config_.hidden});
  Tensor out = add(matmul(merged, p.wo), p.bo);
  return layer_norm(add(h_q, maybe_dropout(out)), p.ln_gamma, p.ln_beta,
                    config_.layer_norm_eps);
}

Tensor Model::feed_forward_unit(const Tensor& h, const FeedForwardParams& p) {
  Tensor inner = activation(add(matmul(h, p.w1), p.b1), Activation::Gelu);
  Tensor out = add(matmul(inner, p.w2), p.b2);
  return layer_norm(add(h, maybe_dropout(out)), p.ln_gamma, p.ln_beta,
                    config_.layer_norm_eps);
}

Tensor Model::encoder_layer(const Tensor& h_q, const Tensor& h_kv,
                            const Tensor& mask, const EncoderLayerParams& p,
                            const std::string& map_name,
                            std::vector<AttentionMap>* retain) {
  return feed_forward_unit(attention_unit(h_q, h_kv, mask, p.attn, map_name, retain),
                           p.ff);
}

// ---------------------------------------------------------------------------
// Encoder stacks

Tensor Model::encode_text_stream(Tensor h, const Tensor& mask,
                                 std::vector<AttentionMap>* retain) {
  for (size_t l = 0; l < text_layers_.size(); ++l) {
    h = encoder_layer(h, h, mask, text_layers_[l],
                      "text.self." + std::to_string(l), retain);
  }
  return h;
}

std::pair<Tensor, Tensor> Model::encode_graph_stream(
    Tensor h, const Tensor& struct_mask, const Tensor& h_d, const Tensor& d_mask,
    std::vector<AttentionMap>* retain) {
  Tensor s0 = gather_rows(node_table_, {GraphVocabulary::kSum});
  Tensor s = s0;
  for (size_t l = 0; l < graph_layers_.size(); ++l) {
    h = encoder_layer(h, h, struct_mask, graph_layers_[l].gat,
                      "graph.gat." + std::to_string(l), retain);
    if (config_.use_summary) {
      s = encoder_layer(s, h_d, d_mask, graph_layers_[l].summary,
                        "graph.summary." + std::to_string(l), retain);
    }
  }
  return {h, config_.use_summary ? s : s0};
}

// ---------------------------------------------------------------------------
// Full pipeline

EncoderOutputs Model::forward(const TextInputs& text, const GraphInputs& graph,
                              const ForwardOptions& options) {
  EncoderOutputs out;
  std::vector<AttentionMap>* retain =
      options.retain_attention ? &out.attention : nullptr;

  Tensor text_struct_mask =
      options.s2s_mode
          ? build_s2s_text_mask(text.length(), text.pad_mask, config_.mask_value)
          : text.pad_mask;

  Tensor h_t = maybe_dropout(embed_text(text));
  h_t = encode_text_stream(h_t, text_struct_mask, retain);

  Tensor graph_struct_mask =
      config_.use_adjacency ? graph.adjacency_mask : graph.pad_mask;
  Tensor h_g = maybe_dropout(embed_graph(graph));
  Tensor h_d = embed_description_tokens(graph.desc_tokens);
  auto [g_states, summary] =
      encode_graph_stream(h_g, graph_struct_mask, h_d, graph.desc_pad_mask, retain);

  // graph stream gains the summary vector at position 0
  Tensor o_g = concat({summary, g_states}, 0);
  std::vector<double> gp(1 + graph.length(), 0.0);
  for (int64_t i = 0; i < graph.length(); ++i) {
    gp[1 + i] = graph.pad_mask.values()[i];
  }
  Tensor graph_pad_ext = Tensor::from_values({1, 1 + graph.length()}, std::move(gp));

  Tensor o_t = h_t;
  for (size_t b = 0; b < cross_blocks_.size(); ++b) {
    const CrossBlockParams& p = cross_blocks_[b];
    std::string name = "cross." + std::to_string(b);
    Tensor t_cross = attention_unit(o_t, o_g, graph_pad_ext, p.text_cross,
                                    name + ".text_queries_graph", retain);
    // in s2s mode the graph-queries-text path is severed so no text
    // information can flow back into text through the graph stream
    Tensor g_cross = options.s2s_mode
                         ? o_g
                         : attention_unit(o_g, o_t, text.pad_mask, p.graph_cross,
                                          name + ".graph_queries_text", retain);
    Tensor t_self = attention_unit(t_cross, t_cross, text_struct_mask, p.text_self,
                                   name + ".text_self", retain);
    Tensor g_self = attention_unit(g_cross, g_cross, graph_pad_ext, p.graph_self,
                                   name + ".graph_self", retain);
    o_t = feed_forward_unit(t_self, p.text_ff);
    o_g = feed_forward_unit(g_self, p.graph_ff);
  }

  out.text_states = o_t;
  out.graph_states = o_g;
  out.summary = summary;
  out.pooled = concat({slice(o_g, 0, 0, 1), slice(o_t, 0, 0, 1)}, 1);
  return out;
}

// ---------------------------------------------------------------------------
// Heads

Tensor Model::mlm_logits(const Tensor& text_states) {
  return add(matmul(text_states, mlm_w_), mlm_b_);
}

Tensor Model::mlp_logits(const Tensor& graph_states) {
  Tensor nodes = slice(graph_states, 0, 1, graph_states.dim(0) - 1);
  return add(matmul(nodes, mlp_w_), mlp_b_);
}

Tensor Model::rc_logits(const Tensor& graph_states,
                        const std::vector<std::pair<int64_t, int64_t>>& node_pairs) {
  std::vector<int64_t> first, second;
  first.reserve(node_pairs.size());
  second.reserve(node_pairs.size());
  for (const auto& [a, b] : node_pairs) {
    first.push_back(a + 1);  // +1 skips the summary position
    second.push_back(b + 1);
  }
  Tensor pairs = concat({gather_rows(graph_states, first),
                         gather_rows(graph_states, second)}, 1);
  return add(matmul(pairs, rc_w_), rc_b_);
}

Tensor Model::pair_logits(const Tensor& pooled) {
  Tensor h = activation(add(matmul(pooled, pair_w1_), pair_b1_), Activation::Tanh);
  return add(matmul(h, pair_w2_), pair_b2_);
}

Tensor Model::binary_logit(const Tensor& pooled) {
  Tensor h = activation(add(matmul(pooled, binary_w1_), binary_b1_),
                        Activation::Tanh);
  return add(matmul(h, binary_w2_), binary_b2_);
}

Tensor Model::ova_logits(const Tensor& graph_states) {
  Tensor nodes = slice(graph_states, 0, 1, graph_states.dim(0) - 1);
  return add(matmul(nodes, ova_w_), ova_b_);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kMagic[4] = {'G', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  write_pod(out, kVersion);
  std::string cfg = model.config().to_json();
  write_pod(out, static_cast<uint32_t>(cfg.size()));
  out.write(cfg.data(), cfg.size());
  write_pod(out, static_cast<uint64_t>(model.parameters().size()));
  for (const auto& [name, t] : model.parameters()) {
    write_pod(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), name.size());
    write_pod(out, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) write_pod(out, d);
    out.write(reinterpret_cast<const char*>(t.values().data()),
              t.numel() * sizeof(double));
  }
}

namespace {

struct CheckpointData {
  ModelConfig config;
  std::map<std::string, std::pair<Shape, std::vector<double>>> params;
};

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  uint32_t version = read_pod<uint32_t>(in);
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  }
  CheckpointData data;
  uint32_t cfg_len = read_pod<uint32_t>(in);
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), cfg_len);
  data.config = ModelConfig::from_json(cfg);
  uint64_t n = read_pod<uint64_t>(in);
  for (uint64_t i = 0; i < n; ++i) {
    uint32_t name_len = read_pod<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t ndim = read_pod<uint32_t>(in);
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = read_pod<int64_t>(in);
    std::vector<double> values(shape_numel(shape));
    in.read(reinterpret_cast<char*>(values.data()),
            values.size() * sizeof(double));
    if (!in) throw std::runtime_error("checkpoint: truncated parameter " + name);
    data.params[name] = {std::move(shape), std::move(values)};
  }
  return data;
}

}  // namespace

void load_checkpoint(Model& model, const std::string& path, bool allow_partial) {
  CheckpointData data = read_checkpoint(path);
  size_t used = 0;
  for (auto& [name, t] : model.parameters()) {
    auto it = data.params.find(name);
    if (it == data.params.end()) {
      if (allow_partial) continue;
      throw std::runtime_error("checkpoint missing parameter " + name);
    }
    if (it->second.first != t.shape()) {
      if (allow_partial) continue;
      throw std::runtime_error("checkpoint shape mismatch for " + name + ": " +
                               shape_str(it->second.first) + " vs " +
                               shape_str(t.shape()));
    }
    t.values() = it->second.second;
    ++used;
  }
  if (!allow_partial && used != data.params.size()) {
    throw std::runtime_error("checkpoint has unknown parameters");
  }
}

ModelConfig checkpoint_config(const std::string& path) {
  return read_checkpoint(path).config;
}

}  // namespace graphtext
