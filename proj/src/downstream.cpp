#include "graphtext/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "graphtext/metrics.hpp"
#include "graphtext/optimizer.hpp"

namespace graphtext {

using nlohmann::json;

// ---------------------------------------------------------------------------

PreparedPair prepare_pair(const EhrGraph& graph, const TextSequence& text,
                          const SubwordVocabulary& text_vocab,
                          const GraphVocabulary& graph_vocab,
                          const ModelConfig& config) {
  PreparedPair p;
  EncodedGraph enc = encode_graph(graph, text_vocab, graph_vocab);
  p.graph = make_graph_inputs(graph, enc, config);
  p.text = make_text_inputs(text, config);
  return p;
}

double alignment_score(Model& model, const PreparedPair& pair) {
  EncoderOutputs out = model.forward(pair.text, pair.graph);
  Tensor logits = model.pair_logits(out.pooled);
  double a = logits.values()[0], b = logits.values()[1];
  double m = std::max(a, b);
  double ea = std::exp(a - m), eb = std::exp(b - m);
  return eb / (ea + eb);
}

RetrievalResult retrieve(Model& model, const PairRecord& query,
                         const std::vector<const PairRecord*>& pool,
                         RetrievalDirection direction,
                         const SubwordVocabulary& text_vocab,
                         const GraphVocabulary& graph_vocab) {
  if (pool.empty()) throw std::invalid_argument("retrieve: empty pool");
  int64_t true_index = -1;
  for (size_t i = 0; i < pool.size(); ++i) {
    if (pool[i]->admission_key == query.admission_key) {
      if (true_index >= 0) {
        throw std::invalid_argument("retrieve: true partner appears twice");
      }
      true_index = static_cast<int64_t>(i);
    }
  }
  if (true_index < 0) {
    throw std::invalid_argument("retrieve: pool lacks the true partner");
  }

  RetrievalResult result;
  result.scores.resize(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) {
    PreparedPair pair =
        direction == RetrievalDirection::TextRetrieval
            ? prepare_pair(query.graph, pool[i]->text, text_vocab, graph_vocab,
                           model.config())
            : prepare_pair(pool[i]->graph, query.text, text_vocab, graph_vocab,
                           model.config());
    result.scores[i] = alignment_score(model, pair);
  }

  result.ranking.resize(pool.size());
  std::iota(result.ranking.begin(), result.ranking.end(), 0);
  std::stable_sort(result.ranking.begin(), result.ranking.end(),
                   [&](int64_t a, int64_t b) {
                     return result.scores[a] > result.scores[b];
                   });

  result.true_rank = rank_with_tie_break(result.scores, true_index);
  return result;
}

int64_t rank_with_tie_break(const std::vector<double>& scores,
                            int64_t true_index) {
  double s_true = scores[true_index];
  int64_t rank = 1;
  for (int64_t j = 0; j < static_cast<int64_t>(scores.size()); ++j) {
    if (scores[j] > s_true) ++rank;
    else if (scores[j] == s_true && j < true_index) ++rank;
  }
  return rank;
}

double predict_binary(Model& model, const PreparedPair& pair) {
  EncoderOutputs out = model.forward(pair.text, pair.graph);
  double z = model.binary_logit(out.pooled).values()[0];
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// ---------------------------------------------------------------------------
// Corruption

LiteralPools build_literal_pools(const std::vector<const EhrGraph*>& graphs,
                                 const std::set<std::string>& type_filter) {
  std::map<std::string, std::set<std::string>> sets;
  for (const EhrGraph* g : graphs) {
    for (const Node& n : g->nodes) {
      if (n.kind != NodeKind::Literal) continue;
      if (!type_filter.empty() && !type_filter.count(n.literal_type)) continue;
      sets[n.literal_type].insert(n.surface);
    }
  }
  LiteralPools pools;
  for (auto& [type, surfaces] : sets) {
    pools[type] = std::vector<std::string>(surfaces.begin(), surfaces.end());
  }
  return pools;
}

CorruptionResult corrupt_graph(const EhrGraph& graph, double p,
                               const LiteralPools& pools, Rng& rng,
                               const std::set<std::string>* exclude) {
  if (p < 0.0 || p > 1.0) {
    throw std::invalid_argument("corrupt_graph: bad probability");
  }
  CorruptionResult result;
  result.graph = graph;
  result.labels.assign(graph.nodes.size(), 0);
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    const Node& node = graph.nodes[i];
    if (node.kind != NodeKind::Literal) continue;
    auto pool_it = pools.find(node.literal_type);
    if (pool_it == pools.end()) continue;
    if (!rng.bernoulli(p)) continue;
    std::vector<const std::string*> candidates;
    for (const std::string& s : pool_it->second) {
      if (s == node.surface) continue;
      if (exclude && exclude->count(s)) continue;
      candidates.push_back(&s);
    }
    if (candidates.empty()) {
      ++result.skipped_no_alternative;
      continue;
    }
    const std::string& pick =
        *candidates[rng.uniform_int(static_cast<int64_t>(candidates.size()))];
    Node& target = result.graph.nodes[i];
    target.surface = pick;
    target.label = target.label == node.surface ? pick : target.label;
    result.labels[i] = 1;
  }
  return result;
}

std::vector<double> detect_errors(Model& model, const PreparedPair& pair) {
  EncoderOutputs out = model.forward(pair.text, pair.graph);
  Tensor logits = model.ova_logits(out.graph_states);
  std::vector<double> probs(logits.numel());
  for (int64_t i = 0; i < logits.numel(); ++i) {
    double z = logits.values()[i];
    probs[i] =
        z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return probs;
}

// ---------------------------------------------------------------------------
// Generation

GenerationConfig GenerationConfig::for_style(const std::string& style) {
  GenerationConfig c;
  if (style == "dxpx") {
    c.strategy = Strategy::Greedy;
    c.sep_count = 2;
    c.start_section = 0;
    c.switch_section_after_first_sep = true;
  } else if (style == "rx") {
    c.strategy = Strategy::TopP;
    c.top_p = 0.9;
    c.sep_count = 1;
    c.start_section = 2;
    c.switch_section_after_first_sep = false;
  } else {
    throw std::invalid_argument("unknown generation style: " + style);
  }
  return c;
}

namespace {

std::vector<double> row_softmax(const Tensor& logits, int64_t row) {
  int64_t cols = logits.dim(1);
  std::vector<double> probs(cols);
  const double* z = logits.values().data() + row * cols;
  double m = z[0];
  for (int64_t j = 1; j < cols; ++j) m = std::max(m, z[j]);
  double denom = 0.0;
  for (int64_t j = 0; j < cols; ++j) {
    probs[j] = std::exp(z[j] - m);
    denom += probs[j];
  }
  for (double& v : probs) v /= denom;
  return probs;
}

int64_t pick_greedy(const std::vector<double>& probs) {
  int64_t best = 0;
  for (size_t j = 1; j < probs.size(); ++j) {
    if (probs[j] > probs[best]) best = static_cast<int64_t>(j);
  }
  return best;
}

// smallest probability-sorted prefix with cumulative mass >= p, renormalized
int64_t pick_top_p(const std::vector<double>& probs, double p, Rng& rng) {
  std::vector<int64_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return probs[a] > probs[b]; });
  double mass = 0.0;
  size_t cut = 0;
  while (cut < order.size()) {
    mass += probs[order[cut]];
    ++cut;
    if (mass >= p) break;
  }
  double u = rng.uniform() * mass;
  double c = 0.0;
  for (size_t j = 0; j < cut; ++j) {
    c += probs[order[j]];
    if (u < c) return order[j];
  }
  return order[cut - 1];
}

}  // namespace

GeneratedText generate_note(Model& model, const EhrGraph& graph,
                            const SubwordVocabulary& text_vocab,
                            const GraphVocabulary& graph_vocab,
                            const GenerationConfig& config, Rng& rng) {
  if (config.top_p <= 0.0 || config.top_p > 1.0) {
    throw std::invalid_argument("generation: top_p must be in (0, 1]");
  }
  bool was_training = model.training();
  model.set_training(false);
  EncodedGraph enc = encode_graph(graph, text_vocab, graph_vocab);
  GraphInputs graph_in = make_graph_inputs(graph, enc, model.config());

  GeneratedText out;
  std::vector<int64_t> ids = {SubwordVocabulary::kCls};
  std::vector<int> sections = {config.start_section};
  int cur_section = config.start_section;
  int sep_seen = 0;
  ForwardOptions opts;
  opts.s2s_mode = true;

  for (;;) {
    if (static_cast<int64_t>(ids.size()) + 1 > config.max_length) {
      out.truncated = true;
      break;
    }
    TextInputs ti;
    ti.token_ids = ids;
    ti.token_ids.push_back(SubwordVocabulary::kMask);
    ti.section_ids = sections;
    ti.section_ids.push_back(cur_section);
    ti.positions.resize(ti.token_ids.size());
    for (size_t i = 0; i < ti.positions.size(); ++i) {
      ti.positions[i] = static_cast<int64_t>(i);
    }
    ti.real_len = static_cast<int64_t>(ti.token_ids.size());
    ti.pad_mask = Tensor::zeros({1, ti.real_len});

    EncoderOutputs enc_out = model.forward(ti, graph_in, opts);
    Tensor logits = model.mlm_logits(enc_out.text_states);
    std::vector<double> probs = row_softmax(logits, ti.real_len - 1);
    int64_t token = config.strategy == GenerationConfig::Strategy::Greedy
                        ? pick_greedy(probs)
                        : pick_top_p(probs, config.top_p, rng);
    ids.push_back(token);
    sections.push_back(cur_section);
    if (token == SubwordVocabulary::kSep) {
      ++sep_seen;
      if (sep_seen == 1 && config.switch_section_after_first_sep) {
        cur_section = 1;
      }
      if (sep_seen >= config.sep_count) break;
    }
  }
  out.token_ids = std::move(ids);
  model.set_training(was_training);
  return out;
}

Tensor generation_loss(Model& model, const PairRecord& record,
                       const SubwordVocabulary& text_vocab,
                       const GraphVocabulary& graph_vocab, double mlm_p,
                       double sep_mask_prob, Rng& rng, int64_t* count_out) {
  TextSequence masked = record.text;
  MaskingPlan plan = apply_mlm_mask(masked.token_ids, mlm_p, rng,
                                    model.config().text_vocab_size);
  std::vector<int64_t> labels = plan.labels;
  // the model must learn to emit [SEP]: mask terminators at their own rate
  for (size_t i = 0; i < record.text.token_ids.size(); ++i) {
    if (record.text.token_ids[i] != SubwordVocabulary::kSep) continue;
    if (!rng.bernoulli(sep_mask_prob)) continue;
    masked.token_ids[i] = SubwordVocabulary::kMask;
    labels[i] = SubwordVocabulary::kSep;
  }

  EncodedGraph enc = encode_graph(record.graph, text_vocab, graph_vocab);
  GraphInputs graph_in = make_graph_inputs(record.graph, enc, model.config());
  TextInputs text_in = make_text_inputs(masked, model.config());
  ForwardOptions opts;
  opts.s2s_mode = true;
  EncoderOutputs out = model.forward(text_in, graph_in, opts);
  Tensor logits = model.mlm_logits(out.text_states);
  return cross_entropy(logits, labels, kIgnoreLabel, Reduction::Sum, count_out);
}

// ---------------------------------------------------------------------------
// Shared fine-tune loop

namespace {

using BatchLoss = std::function<std::pair<Tensor, int64_t>(
    const std::vector<const PairRecord*>&, Rng&)>;

double run_finetune_loop(Model& model, const PairDataset& train,
                         const FinetuneConfig& config, const BatchLoss& batch_loss) {
  if (train.records.empty()) {
    throw std::invalid_argument("finetune: empty dataset");
  }
  Rng root(config.seed);
  model.seed_dropout(Rng::mix(config.seed, 0xf17e));
  model.set_training(true);
  AdamOptimizer::Options opt_options;
  opt_options.lr = config.learning_rate;
  AdamOptimizer optimizer(model.parameters(), opt_options);

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path);
    if (!log) throw std::runtime_error("cannot write log: " + config.log_path);
  }

  std::vector<size_t> order(train.records.size());
  std::iota(order.begin(), order.end(), 0);
  // carried across epochs whose draws selected nothing, so early-stop
  // callbacks never see a spurious zero
  double last_epoch_mean = std::numeric_limits<double>::infinity();
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng epoch_rng = root.derive(0xe90c + epoch);
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = epoch_rng.uniform_int(static_cast<int64_t>(i));
      std::swap(order[i - 1], order[j]);
    }
    double loss_sum = 0.0;
    int64_t loss_count = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const PairRecord*> slice;
      for (size_t i = start; i < end; ++i) slice.push_back(&train.records[order[i]]);
      Rng batch_rng = epoch_rng.derive(0xba7c + start);
      auto [loss, count] = batch_loss(slice, batch_rng);
      if (count == 0) continue;
      Tensor mean = scale(loss, 1.0 / static_cast<double>(count));
      backward(mean);
      optimizer.step();
      loss_sum += mean.item() * static_cast<double>(count);
      loss_count += count;
      if (log) {
        json j;
        j["epoch"] = epoch;
        j["loss"] = mean.item();
        log << j.dump() << "\n";
      }
    }
    if (loss_count > 0) last_epoch_mean = loss_sum / double(loss_count);
    if (config.epoch_callback && config.epoch_callback(epoch, last_epoch_mean)) {
      break;
    }
  }
  model.set_training(false);
  return last_epoch_mean;
}

}  // namespace

// ---------------------------------------------------------------------------
// Protocols

double finetune_retrieval(Model& model, const PairDataset& train,
                          const SubwordVocabulary& text_vocab,
                          const GraphVocabulary& graph_vocab,
                          const FinetuneConfig& config) {
  BatchLoss loss = [&](const std::vector<const PairRecord*>& slice, Rng& rng)
      -> std::pair<Tensor, int64_t> {
    std::vector<Tensor> parts;
    int64_t count = 0;
    for (size_t i = 0; i < slice.size(); ++i) {
      PreparedPair positive = prepare_pair(slice[i]->graph, slice[i]->text,
                                           text_vocab, graph_vocab,
                                           model.config());
      EncoderOutputs out = model.forward(positive.text, positive.graph);
      parts.push_back(cross_entropy(model.pair_logits(out.pooled), {1},
                                    kIgnoreLabel, Reduction::Sum));
      ++count;
      if (slice.size() >= 2) {  // one in-batch negative per positive
        int64_t j = rng.uniform_int(static_cast<int64_t>(slice.size()) - 1);
        if (j >= static_cast<int64_t>(i)) ++j;
        PreparedPair negative = prepare_pair(slice[i]->graph, slice[j]->text,
                                             text_vocab, graph_vocab,
                                             model.config());
        EncoderOutputs nout = model.forward(negative.text, negative.graph);
        parts.push_back(cross_entropy(model.pair_logits(nout.pooled), {0},
                                      kIgnoreLabel, Reduction::Sum));
        ++count;
      }
    }
    Tensor total = parts.empty() ? Tensor::scalar(0.0) : parts[0];
    for (size_t k = 1; k < parts.size(); ++k) total = add(total, parts[k]);
    return {total, count};
  };
  return run_finetune_loop(model, train, config, loss);
}

double finetune_temporal(Model& model, const PairDataset& train,
                         const SubwordVocabulary& text_vocab,
                         const GraphVocabulary& graph_vocab,
                         TemporalTarget target, const FinetuneConfig& config) {
  BatchLoss loss = [&](const std::vector<const PairRecord*>& slice, Rng&)
      -> std::pair<Tensor, int64_t> {
    std::vector<Tensor> parts;
    int64_t count = 0;
    for (const PairRecord* rec : slice) {
      PreparedPair pair = prepare_pair(rec->graph, rec->text, text_vocab,
                                       graph_vocab, model.config());
      EncoderOutputs out = model.forward(pair.text, pair.graph);
      double label = target == TemporalTarget::Mortality
                         ? rec->mortality_label
                         : rec->readmission_label;
      parts.push_back(bce_with_logits(model.binary_logit(out.pooled), {label},
                                      Reduction::Sum));
      ++count;
    }
    Tensor total = parts.empty() ? Tensor::scalar(0.0) : parts[0];
    for (size_t k = 1; k < parts.size(); ++k) total = add(total, parts[k]);
    return {total, count};
  };
  return run_finetune_loop(model, train, config, loss);
}

namespace {

std::set<std::string> literal_surfaces(const EhrGraph& graph) {
  std::set<std::string> out;
  for (const Node& n : graph.nodes) {
    if (n.kind == NodeKind::Literal) out.insert(n.surface);
  }
  return out;
}

}  // namespace

double finetune_error_detection(Model& model, const PairDataset& train,
                                const SubwordVocabulary& text_vocab,
                                const GraphVocabulary& graph_vocab,
                                const LiteralPools& pools, double corruption_p,
                                const FinetuneConfig& config,
                                bool exclude_text_literals) {
  BatchLoss loss = [&](const std::vector<const PairRecord*>& slice, Rng& rng)
      -> std::pair<Tensor, int64_t> {
    std::vector<Tensor> parts;
    int64_t count = 0;
    for (size_t i = 0; i < slice.size(); ++i) {
      Rng crng = rng.derive(0xc0bb + i);
      std::set<std::string> exclude;
      if (exclude_text_literals) exclude = literal_surfaces(slice[i]->graph);
      CorruptionResult corrupted =
          corrupt_graph(slice[i]->graph, corruption_p, pools, crng,
                        exclude_text_literals ? &exclude : nullptr);
      PreparedPair pair = prepare_pair(corrupted.graph, slice[i]->text,
                                       text_vocab, graph_vocab, model.config());
      EncoderOutputs out = model.forward(pair.text, pair.graph);
      Tensor logits = model.ova_logits(out.graph_states);
      std::vector<double> labels(corrupted.labels.begin(),
                                 corrupted.labels.end());
      parts.push_back(bce_with_logits(logits, labels, Reduction::Sum));
      count += static_cast<int64_t>(labels.size());
    }
    Tensor total = parts.empty() ? Tensor::scalar(0.0) : parts[0];
    for (size_t k = 1; k < parts.size(); ++k) total = add(total, parts[k]);
    return {total, count};
  };
  return run_finetune_loop(model, train, config, loss);
}

double finetune_generation(Model& model, const PairDataset& train,
                           const SubwordVocabulary& text_vocab,
                           const GraphVocabulary& graph_vocab,
                           const GenerationConfig& gen_config,
                           const FinetuneConfig& config, double mlm_p) {
  BatchLoss loss = [&](const std::vector<const PairRecord*>& slice, Rng& rng)
      -> std::pair<Tensor, int64_t> {
    std::vector<Tensor> parts;
    int64_t count = 0;
    for (size_t i = 0; i < slice.size(); ++i) {
      Rng srng = rng.derive(0x6e7 + i);
      int64_t n = 0;
      Tensor part = generation_loss(model, *slice[i], text_vocab, graph_vocab,
                                    mlm_p, gen_config.sep_mask_prob, srng, &n);
      if (n > 0) {
        parts.push_back(part);
        count += n;
      }
    }
    Tensor total = parts.empty() ? Tensor::scalar(0.0) : parts[0];
    for (size_t k = 1; k < parts.size(); ++k) total = add(total, parts[k]);
    return {total, count};
  };
  return run_finetune_loop(model, train, config, loss);
}

// ---------------------------------------------------------------------------
// Evaluation

RetrievalEval evaluate_retrieval(Model& model, const PairDataset& pool,
                                 RetrievalDirection direction,
                                 const SubwordVocabulary& text_vocab,
                                 const GraphVocabulary& graph_vocab) {
  model.set_training(false);
  std::vector<const PairRecord*> candidates;
  for (const PairRecord& r : pool.records) candidates.push_back(&r);
  RetrievalEval eval;
  for (const PairRecord& query : pool.records) {
    RetrievalResult res = retrieve(model, query, candidates, direction,
                                   text_vocab, graph_vocab);
    eval.ranks.push_back(res.true_rank);
  }
  eval.mrr = mrr(eval.ranks);
  eval.hits_at_10 = hits_at_k(eval.ranks, 10);
  return eval;
}

TemporalEval evaluate_temporal(Model& model, const PairDataset& test,
                               TemporalTarget target,
                               const SubwordVocabulary& text_vocab,
                               const GraphVocabulary& graph_vocab) {
  model.set_training(false);
  TemporalEval eval;
  for (const PairRecord& rec : test.records) {
    PreparedPair pair = prepare_pair(rec.graph, rec.text, text_vocab,
                                     graph_vocab, model.config());
    eval.scores.push_back(predict_binary(model, pair));
    eval.labels.push_back(target == TemporalTarget::Mortality
                              ? rec.mortality_label
                              : rec.readmission_label);
  }
  bool any_pos = std::any_of(eval.labels.begin(), eval.labels.end(),
                             [](int v) { return v == 1; });
  eval.auprc_value = any_pos ? auprc(eval.scores, eval.labels) : -1.0;
  return eval;
}

ErrorDetectionEval evaluate_error_detection(
    Model& model, const PairDataset& test, const LiteralPools& pools,
    double corruption_p, uint64_t corruption_seed,
    const SubwordVocabulary& text_vocab, const GraphVocabulary& graph_vocab,
    bool exclude_text_literals) {
  model.set_training(false);
  ErrorDetectionEval eval;
  Rng root(corruption_seed);
  for (size_t i = 0; i < test.records.size(); ++i) {
    const PairRecord& rec = test.records[i];
    Rng crng = root.derive(0xe44 + i);
    std::set<std::string> exclude;
    if (exclude_text_literals) exclude = literal_surfaces(rec.graph);
    CorruptionResult corrupted =
        corrupt_graph(rec.graph, corruption_p, pools, crng,
                      exclude_text_literals ? &exclude : nullptr);
    PreparedPair pair = prepare_pair(corrupted.graph, rec.text, text_vocab,
                                     graph_vocab, model.config());
    std::vector<double> probs = detect_errors(model, pair);
    for (size_t n = 0; n < corrupted.labels.size(); ++n) {
      eval.predictions.push_back(probs[n] >= 0.5 ? 1 : 0);
      eval.labels.push_back(corrupted.labels[n]);
    }
  }
  eval.f1_value = f1(eval.predictions, eval.labels);
  return eval;
}

GenerationEval evaluate_generation(Model& model, const PairDataset& test,
                                   const SubwordVocabulary& text_vocab,
                                   const GraphVocabulary& graph_vocab,
                                   const GenerationConfig& config,
                                   uint64_t seed) {
  model.set_training(false);
  GenerationEval eval;
  Rng root(seed);
  double rg2_sum = 0.0, rgl_sum = 0.0;
  for (size_t i = 0; i < test.records.size(); ++i) {
    const PairRecord& rec = test.records[i];
    Rng rng = root.derive(0x6e9 + i);
    GeneratedText gen = generate_note(model, rec.graph, text_vocab, graph_vocab,
                                      config, rng);
    std::string candidate = detokenize(gen.token_ids, text_vocab);
    std::string reference = detokenize(rec.text.token_ids, text_vocab);
    eval.outputs.push_back(candidate);
    rg2_sum += rouge(split_words(candidate), split_words(reference),
                     RougeVariant::RG2);
    rgl_sum += rouge(split_words(candidate), split_words(reference),
                     RougeVariant::RGL);
  }
  if (!test.records.empty()) {
    eval.rouge2 = rg2_sum / static_cast<double>(test.records.size());
    eval.rougel = rgl_sum / static_cast<double>(test.records.size());
  }
  return eval;
}

}  // namespace graphtext
