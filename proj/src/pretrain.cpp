#include "graphtext/pretrain.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace graphtext {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Masking

namespace {

bool mlm_selectable(int64_t token) {
  return token != SubwordVocabulary::kPad && token != SubwordVocabulary::kCls &&
         token != SubwordVocabulary::kSep && token != SubwordVocabulary::kMask;
}

}  // namespace

MaskingPlan apply_mlm_mask(std::vector<int64_t>& tokens, double p, Rng& rng,
                           int64_t vocab_size, double mask_frac,
                           double random_frac) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("mlm mask: bad probability");
  MaskingPlan plan;
  plan.labels.assign(tokens.size(), kIgnoreLabel);
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (!mlm_selectable(tokens[i])) continue;
    if (!rng.bernoulli(p)) continue;
    plan.positions.push_back(static_cast<int64_t>(i));
    plan.labels[i] = tokens[i];
    double u = rng.uniform();
    if (u < mask_frac) {
      plan.actions.push_back(MaskAction::MaskToken);
      tokens[i] = SubwordVocabulary::kMask;
    } else if (u < mask_frac + random_frac) {
      plan.actions.push_back(MaskAction::RandomToken);
      tokens[i] = SubwordVocabulary::kReservedCount +
                  rng.uniform_int(vocab_size - SubwordVocabulary::kReservedCount);
    } else {
      plan.actions.push_back(MaskAction::Keep);
    }
  }
  return plan;
}

MaskingPlan apply_mlp_mask(std::vector<int64_t>& node_ids,
                           const std::vector<bool>& is_literal, double p,
                           Rng& rng) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("mlp mask: bad probability");
  if (node_ids.size() != is_literal.size()) {
    throw std::invalid_argument("mlp mask: id/literal flag size mismatch");
  }
  MaskingPlan plan;
  plan.labels.assign(node_ids.size(), kIgnoreLabel);
  for (size_t i = 0; i < node_ids.size(); ++i) {
    if (!is_literal[i] || node_ids[i] < GraphVocabulary::kReservedCount) continue;
    if (!rng.bernoulli(p)) continue;
    plan.positions.push_back(static_cast<int64_t>(i));
    plan.actions.push_back(MaskAction::MaskToken);
    plan.labels[i] = node_ids[i] - GraphVocabulary::kReservedCount;
    node_ids[i] = GraphVocabulary::kMaskG;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Relation pairs

RelationSample sample_relation_pairs(const EhrGraph& graph, double fraction,
                                     Rng& rng,
                                     const RelationVocabulary& relations,
                                     int64_t cap) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw std::invalid_argument("relation sample: fraction must be in (0, 1]");
  }
  RelationSample sample;
  int64_t n = graph.node_count();
  if (n < 2) return sample;
  int64_t total = n * (n - 1) / 2;
  int64_t want = std::llround(fraction * static_cast<double>(total));
  want = std::max<int64_t>(want, 1);
  want = std::min(want, total);
  if (cap > 0) want = std::min(want, cap);

  std::set<int64_t> picked;
  if (want == total) {
    for (int64_t i = 0; i < total; ++i) picked.insert(i);
  } else {
    while (static_cast<int64_t>(picked.size()) < want) {
      picked.insert(rng.uniform_int(total));
    }
  }

  std::unordered_map<int64_t, int64_t> edge_map;
  for (const Edge& e : graph.edges) {
    int64_t a = std::min(e.src, e.dst), b = std::max(e.src, e.dst);
    edge_map[a * n + b] = e.relation;
  }

  for (int64_t flat : picked) {
    // map flat index to (i, j), i < j, lexicographic over rows
    int64_t i = 0, remaining = flat;
    while (remaining >= n - 1 - i) {
      remaining -= n - 1 - i;
      ++i;
    }
    int64_t j = i + 1 + remaining;
    sample.pairs.emplace_back(i, j);
    auto it = edge_map.find(i * n + j);
    sample.labels.push_back(it == edge_map.end() ? relations.not_connected_id()
                                                 : it->second);
  }
  return sample;
}

// ---------------------------------------------------------------------------
// TaskSet

std::string TaskSet::to_string() const {
  std::vector<std::string> names;
  if (mlm) names.push_back("mlm");
  if (mlp) names.push_back("mlp");
  if (rc) names.push_back("rc");
  if (ap) names.push_back("ap");
  std::string out;
  for (size_t i = 0; i < names.size(); ++i) {
    if (i) out += ",";
    out += names[i];
  }
  return out;
}

TaskSet TaskSet::parse(const std::string& csv) {
  TaskSet t;
  t.mlm = t.mlp = t.rc = t.ap = false;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "mlm") t.mlm = true;
    else if (item == "mlp") t.mlp = true;
    else if (item == "rc") t.rc = true;
    else if (item == "ap") t.ap = true;
    else if (!item.empty()) throw std::invalid_argument("unknown task: " + item);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Batch construction

std::vector<PretrainSample> build_pretrain_batch(
    const std::vector<const PairRecord*>& slice,
    const SubwordVocabulary& text_vocab, const GraphVocabulary& graph_vocab,
    const RelationVocabulary& relations, const ModelConfig& config,
    const TaskSet& tasks, const PretrainOptions& options, Rng& rng,
    int64_t* replacement_skipped) {
  std::vector<PretrainSample> batch;
  batch.reserve(slice.size());
  for (size_t i = 0; i < slice.size(); ++i) {
    const PairRecord& record = *slice[i];
    PretrainSample sample;
    sample.admission_key = record.admission_key;
    sample.alignment_label = 1;

    const TextSequence* text = &record.text;
    if (tasks.ap && rng.bernoulli(options.ap_replace_p)) {
      if (slice.size() < 2) {
        if (replacement_skipped) ++*replacement_skipped;
      } else {
        int64_t j = rng.uniform_int(static_cast<int64_t>(slice.size()) - 1);
        if (j >= static_cast<int64_t>(i)) ++j;
        text = &slice[j]->text;
        sample.alignment_label = 0;
      }
    }
    bool aligned = sample.alignment_label == 1;

    Rng sample_rng = rng.derive(0x5ab0 + i);

    // text side
    TextSequence masked_text = *text;
    MaskingPlan mlm_plan;
    if (tasks.mlm) {
      mlm_plan = apply_mlm_mask(masked_text.token_ids, options.mlm_p, sample_rng,
                                config.text_vocab_size, options.mlm_mask_frac,
                                options.mlm_random_frac);
    }
    sample.text = make_text_inputs(masked_text, config);
    sample.mlm_labels.assign(masked_text.token_ids.size(), kIgnoreLabel);
    if (tasks.mlm && aligned) sample.mlm_labels = mlm_plan.labels;

    // graph side
    EncodedGraph enc = encode_graph(record.graph, text_vocab, graph_vocab);
    MaskingPlan mlp_plan;
    if (tasks.mlp) {
      mlp_plan = apply_mlp_mask(enc.node_ids, enc.is_literal, options.mlp_p,
                                sample_rng);
      // a masked node's description must not leak through the summary path
      if (!mlp_plan.positions.empty()) {
        for (int64_t pos : mlp_plan.positions) {
          for (int64_t& tok : enc.descriptions[pos]) {
            tok = SubwordVocabulary::kMask;
          }
        }
        enc.descriptions_concat.clear();
        for (const auto& d : enc.descriptions) {
          enc.descriptions_concat.insert(enc.descriptions_concat.end(),
                                         d.begin(), d.end());
        }
      }
    }
    sample.graph = make_graph_inputs(record.graph, enc, config);
    sample.mlp_labels.assign(enc.node_ids.size(), kIgnoreLabel);
    if (tasks.mlp && aligned) sample.mlp_labels = mlp_plan.labels;

    if (tasks.rc) {
      RelationSample rc = sample_relation_pairs(record.graph, options.rc_fraction,
                                                sample_rng, relations,
                                                options.rc_cap);
      sample.rc_pairs = std::move(rc.pairs);
      sample.rc_labels = std::move(rc.labels);
    }
    batch.push_back(std::move(sample));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Step

namespace {

Tensor sum_tensors(const std::vector<Tensor>& parts) {
  if (parts.empty()) return Tensor::scalar(0.0);
  Tensor acc = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return acc;
}

}  // namespace

PretrainLosses pretrain_step(Model& model,
                             const std::vector<PretrainSample>& batch,
                             const TaskSet& active) {
  if (!active.any()) {
    throw std::invalid_argument("pretrain_step: no active tasks");
  }
  PretrainLosses out;
  std::vector<Tensor> mlm_parts, mlp_parts, rc_parts, ap_parts;

  for (const PretrainSample& sample : batch) {
    EncoderOutputs enc = model.forward(sample.text, sample.graph);

    if (active.mlm) {
      int64_t count = 0;
      Tensor logits = model.mlm_logits(enc.text_states);
      Tensor loss = cross_entropy(logits, sample.mlm_labels, kIgnoreLabel,
                                  Reduction::Sum, &count);
      if (count > 0) {
        mlm_parts.push_back(loss);
        out.mlm_count += count;
      }
    }
    if (active.mlp) {
      int64_t count = 0;
      Tensor logits = model.mlp_logits(enc.graph_states);
      Tensor loss = cross_entropy(logits, sample.mlp_labels, kIgnoreLabel,
                                  Reduction::Sum, &count);
      if (count > 0) {
        mlp_parts.push_back(loss);
        out.mlp_count += count;
      }
    }
    if (active.rc && !sample.rc_pairs.empty()) {
      Tensor logits = model.rc_logits(enc.graph_states, sample.rc_pairs);
      int64_t count = 0;
      Tensor loss = cross_entropy(logits, sample.rc_labels, kIgnoreLabel,
                                  Reduction::Sum, &count);
      rc_parts.push_back(loss);
      out.rc_count += count;
    }
    if (active.ap) {
      Tensor logits = model.pair_logits(enc.pooled);
      std::vector<int64_t> target = {sample.alignment_label};
      ap_parts.push_back(
          cross_entropy(logits, target, kIgnoreLabel, Reduction::Sum));
      out.ap_count += 1;
      int pred = logits.values()[1] > logits.values()[0] ? 1 : 0;
      if (pred == sample.alignment_label) ++out.ap_correct;
    }
  }

  std::vector<Tensor> total_parts;
  auto finalize = [&](std::vector<Tensor>& parts, int64_t count, double& value,
                      bool is_active) {
    if (!is_active) return;
    Tensor mean = count > 0 ? scale(sum_tensors(parts), 1.0 / double(count))
                            : Tensor::scalar(0.0);
    value = mean.item();
    total_parts.push_back(mean);
  };
  finalize(mlm_parts, out.mlm_count, out.mlm, active.mlm);
  finalize(mlp_parts, out.mlp_count, out.mlp, active.mlp);
  finalize(rc_parts, out.rc_count, out.rc, active.rc);
  finalize(ap_parts, out.ap_count, out.ap, active.ap);

  out.total_loss = sum_tensors(total_parts);
  out.total = out.total_loss.item();
  return out;
}

// ---------------------------------------------------------------------------
// Loop

PretrainRunStats run_pretraining(Model& model, const PairDataset& train,
                                 const SubwordVocabulary& text_vocab,
                                 const GraphVocabulary& graph_vocab,
                                 const RelationVocabulary& relations,
                                 const PretrainRunConfig& run) {
  if (train.records.empty()) {
    throw std::invalid_argument("pretraining: empty dataset");
  }
  if (!run.tasks.any()) {
    throw std::invalid_argument("pretraining: no active tasks");
  }
  PretrainRunStats stats;
  Rng root(run.seed);
  model.seed_dropout(Rng::mix(run.seed, 0xd120));
  model.set_training(true);
  AdamOptimizer::Options opt_options;
  opt_options.lr = run.learning_rate;
  AdamOptimizer optimizer(model.parameters(), opt_options);

  std::ofstream log;
  if (!run.log_path.empty()) {
    log.open(run.log_path);
    if (!log) throw std::runtime_error("cannot write log: " + run.log_path);
  }

  std::vector<size_t> order(train.records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int64_t epoch = 0; epoch < run.epochs; ++epoch) {
    Rng epoch_rng = root.derive(0xe90c + epoch);
    // Fisher-Yates
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = epoch_rng.uniform_int(static_cast<int64_t>(i));
      std::swap(order[i - 1], order[j]);
    }

    double mlm_sum = 0, total_sum = 0;
    int64_t mlm_count = 0, steps_this_epoch = 0;
    int64_t ap_correct = 0, ap_total = 0;

    for (size_t start = 0; start < order.size(); start += run.batch_size) {
      size_t end = std::min(order.size(), start + run.batch_size);
      std::vector<const PairRecord*> slice;
      for (size_t i = start; i < end; ++i) {
        slice.push_back(&train.records[order[i]]);
      }
      Rng batch_rng = epoch_rng.derive(0xba7c + start);
      std::vector<PretrainSample> batch = build_pretrain_batch(
          slice, text_vocab, graph_vocab, relations, model.config(), run.tasks,
          run.options, batch_rng);
      PretrainLosses losses = pretrain_step(model, batch, run.tasks);
      backward(losses.total_loss);
      optimizer.step();
      ++stats.steps;
      ++steps_this_epoch;
      mlm_sum += losses.mlm * losses.mlm_count;
      mlm_count += losses.mlm_count;
      total_sum += losses.total;
      ap_correct += losses.ap_correct;
      ap_total += losses.ap_count;

      if (log) {
        json j;
        j["epoch"] = epoch;
        j["step"] = stats.steps;
        j["mlm"] = losses.mlm;
        j["mlp"] = losses.mlp;
        j["rc"] = losses.rc;
        j["ap"] = losses.ap;
        j["total"] = losses.total;
        log << j.dump() << "\n";
      }
    }

    PretrainLosses epoch_mean;
    epoch_mean.mlm = mlm_count > 0 ? mlm_sum / double(mlm_count) : 0.0;
    epoch_mean.total = steps_this_epoch > 0 ? total_sum / double(steps_this_epoch) : 0.0;
    epoch_mean.ap_count = ap_total;
    epoch_mean.ap_correct = ap_correct;
    if (epoch == 0) stats.first_epoch_mlm = epoch_mean.mlm;
    stats.last_epoch_mlm = epoch_mean.mlm;
    stats.last_epoch_total = epoch_mean.total;
    stats.last_epoch_ap_accuracy =
        ap_total > 0 ? double(ap_correct) / double(ap_total) : 0.0;
    stats.epochs_run = epoch + 1;

    if (run.epoch_callback && run.epoch_callback(epoch, epoch_mean)) break;
  }
  model.set_training(false);
  return stats;
}

}  // namespace graphtext
