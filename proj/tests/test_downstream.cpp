#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "graphtext/downstream.hpp"
#include "graphtext/metrics.hpp"

using namespace graphtext;
using fixtures::make_toy_dataset;
using fixtures::ToyDataset;

namespace {

void zero_param(Model& model, const std::string& name) {
  Tensor t = model.param(name);
  std::fill(t.values().begin(), t.values().end(), 0.0);
}

PreparedPair prepare_record(const ToyDataset& d, const PairRecord& r,
                            Model& model) {
  return prepare_pair(r.graph, r.text, d.text_vocab, d.graph_vocab,
                      model.config());
}

// independent rank oracle: stable sort by score desc, find the true index
int64_t rank_oracle(const std::vector<double>& scores, int64_t true_index) {
  std::vector<int64_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return scores[a] > scores[b]; });
  for (size_t i = 0; i < order.size(); ++i) {
    if (order[i] == true_index) return static_cast<int64_t>(i) + 1;
  }
  return -1;
}

}  // namespace

TEST_CASE("alignment score: zero head gives 0.5, scoring is deterministic") {
  ToyDataset d = make_toy_dataset(4);
  Model model(d.config, 3);
  PreparedPair pair = prepare_record(d, d.pairs.records[0], model);

  zero_param(model, "head.pair.w2");
  zero_param(model, "head.pair.b2");
  CHECK(alignment_score(model, pair) == doctest::Approx(0.5).epsilon(1e-12));

  Model fresh(d.config, 5);
  double a = alignment_score(fresh, pair);
  double b = alignment_score(fresh, pair);
  CHECK(a == b);
}

TEST_CASE("alignment score ordering follows logit ordering on a 4-pair pool") {
  ToyDataset d = make_toy_dataset(4);
  Model model(d.config, 7);
  std::vector<double> scores, logit_gaps;
  for (const PairRecord& r : d.pairs.records) {
    PreparedPair pair = prepare_record(d, r, model);
    EncoderOutputs out = model.forward(pair.text, pair.graph);
    Tensor logits = model.pair_logits(out.pooled);
    logit_gaps.push_back(logits.values()[1] - logits.values()[0]);
    scores.push_back(alignment_score(model, pair));
  }
  for (size_t i = 0; i < scores.size(); ++i) {
    for (size_t j = 0; j < scores.size(); ++j) {
      CHECK((scores[i] < scores[j]) == (logit_gaps[i] < logit_gaps[j]));
    }
  }
}

TEST_CASE("retrieve: pool of one, brute-force rank agreement") {
  ToyDataset d = make_toy_dataset(6);
  Model model(d.config, 11);
  std::vector<const PairRecord*> pool = {&d.pairs.records[0]};
  RetrievalResult res = retrieve(model, d.pairs.records[0], pool,
                                 RetrievalDirection::TextRetrieval,
                                 d.text_vocab, d.graph_vocab);
  CHECK(res.true_rank == 1);
  CHECK(mrr({res.true_rank}) == 1.0);
  CHECK(hits_at_k({res.true_rank}, 10) == 1.0);

  std::vector<const PairRecord*> full;
  for (const PairRecord& r : d.pairs.records) full.push_back(&r);
  RetrievalResult r2 = retrieve(model, d.pairs.records[2], full,
                                RetrievalDirection::GraphRetrieval,
                                d.text_vocab, d.graph_vocab);
  CHECK(r2.true_rank == rank_oracle(r2.scores, 2));
  CHECK(r2.ranking.size() == full.size());

  CHECK_THROWS_AS(retrieve(model, d.pairs.records[0], {}, RetrievalDirection::TextRetrieval,
                           d.text_vocab, d.graph_vocab),
                  std::invalid_argument);
}

TEST_CASE("rank tie-break matches the brute-force oracle on 1000 random pools") {
  Rng rng(13);
  for (int t = 0; t < 1000; ++t) {
    int n = 1 + int(rng.uniform_int(64));
    std::vector<double> scores(n);
    for (double& s : scores) s = rng.uniform_int(6) / 6.0;  // force ties
    int64_t true_index = rng.uniform_int(n);
    CHECK(rank_with_tie_break(scores, true_index) ==
          rank_oracle(scores, true_index));
  }
}

TEST_CASE("predict_binary: zero head gives 0.5 and saturates at +30") {
  ToyDataset d = make_toy_dataset(2);
  Model model(d.config, 17);
  PreparedPair pair = prepare_record(d, d.pairs.records[0], model);

  zero_param(model, "head.binary.w2");
  zero_param(model, "head.binary.b2");
  CHECK(predict_binary(model, pair) == doctest::Approx(0.5).epsilon(1e-12));

  Tensor b2 = model.param("head.binary.b2");
  b2.values()[0] = 30.0;
  CHECK(predict_binary(model, pair) >= 1.0 - 1e-12);
}

TEST_CASE("temporal BCE gradient matches finite differences") {
  ToyDataset d = make_toy_dataset(3);
  Model model(d.config, 19);
  // the output-layer parameters: their gradients are large enough that
  // central differences resolve the tight tolerance
  std::vector<Tensor> params = {model.param("head.binary.w2"),
                                model.param("head.binary.b2")};
  Rng rng(23);
  auto f = [&] {
    std::vector<Tensor> parts;
    for (const PairRecord& r : d.pairs.records) {
      PreparedPair pair = prepare_record(d, r, model);
      EncoderOutputs out = model.forward(pair.text, pair.graph);
      double label = r.readmission_label;
      parts.push_back(bce_with_logits(model.binary_logit(out.pooled), {label},
                                      Reduction::Sum));
    }
    Tensor total = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
    return scale(total, 1.0 / double(parts.size()));
  };
  CHECK(grad_check(f, params, 1e-5, rng, 8) <= 1e-6);

  // and over every parameter at the model-wide tolerance
  std::vector<Tensor> all_params;
  for (auto& [name, t] : model.parameters()) all_params.push_back(t);
  CHECK(grad_check(f, all_params, 1e-3, rng, 2, 1e-5) <= 1e-4);
}

TEST_CASE("corrupt_graph basics and Monte Carlo") {
  ToyDataset d = make_toy_dataset(6);
  std::vector<const EhrGraph*> graphs;
  for (const PairRecord& r : d.pairs.records) graphs.push_back(&r.graph);
  LiteralPools pools = build_literal_pools(graphs);
  REQUIRE(!pools.empty());

  SUBCASE("p=0 changes nothing") {
    Rng rng(29);
    CorruptionResult res =
        corrupt_graph(d.pairs.records[0].graph, 0.0, pools, rng);
    for (int l : res.labels) CHECK(l == 0);
    for (size_t i = 0; i < res.graph.nodes.size(); ++i) {
      CHECK(res.graph.nodes[i].surface ==
            d.pairs.records[0].graph.nodes[i].surface);
    }
  }
  SUBCASE("p=1 with a two-surface pool flips to the unique alternative") {
    LiteralPools two;
    two["/diagnoses_long_title"] = {"alpha", "beta"};
    EhrGraph g = d.pairs.records[0].graph;  // literals alpha and delta
    Rng rng(31);
    CorruptionResult res = corrupt_graph(g, 1.0, two, rng);
    for (size_t i = 0; i < g.nodes.size(); ++i) {
      if (g.nodes[i].kind != NodeKind::Literal) {
        CHECK(res.labels[i] == 0);
        continue;
      }
      if (g.nodes[i].surface == "alpha") {
        CHECK(res.graph.nodes[i].surface == "beta");
        CHECK(res.labels[i] == 1);
      }
      if (g.nodes[i].surface == "delta") {
        // delta is not in this pool: only one alternative path applies
        CHECK(res.graph.nodes[i].surface != "delta");
        CHECK(res.labels[i] == 1);
      }
    }
  }
  SUBCASE("singleton pool is skipped with a counter") {
    LiteralPools solo;
    solo["/diagnoses_long_title"] = {"alpha"};
    EhrGraph g = d.pairs.records[0].graph;
    Rng rng(37);
    CorruptionResult res = corrupt_graph(g, 1.0, solo, rng);
    CHECK(res.skipped_no_alternative >= 1);
    for (size_t i = 0; i < g.nodes.size(); ++i) {
      if (g.nodes[i].surface == "alpha") CHECK(res.labels[i] == 0);
    }
  }
  SUBCASE("Monte Carlo rate 0.25 and replacements always differ") {
    LiteralPools big;
    std::vector<std::string> pool;
    for (int i = 0; i < 40; ++i) pool.push_back("w" + std::to_string(i));
    big["/t"] = pool;
    EhrGraph g;
    Node root;
    root.kind = NodeKind::AbstractAdm;
    g.nodes = {root};
    for (int i = 1; i <= 1000; ++i) {
      Node lit;
      lit.kind = NodeKind::Literal;
      lit.surface = pool[i % 40];
      lit.literal_type = "/t";
      g.nodes.push_back(lit);
      g.edges.push_back({0, i, 0});
    }
    int64_t corrupted = 0, total = 0;
    Rng rng(41);
    for (int rep = 0; rep < 100; ++rep) {
      CorruptionResult res = corrupt_graph(g, 0.25, big, rng);
      for (size_t i = 1; i < g.nodes.size(); ++i) {
        ++total;
        if (res.labels[i]) {
          ++corrupted;
          CHECK(res.graph.nodes[i].surface != g.nodes[i].surface);
        }
      }
      CHECK(res.labels[0] == 0);  // abstract node untouched
    }
    CHECK(total == 100000);
    CHECK(std::abs(double(corrupted) / double(total) - 0.25) < 0.01);
  }
  SUBCASE("excluded surfaces are never chosen") {
    LiteralPools two;
    two["/diagnoses_long_title"] = {"alpha", "beta", "gamma"};
    std::set<std::string> exclude = {"beta"};
    EhrGraph g = d.pairs.records[0].graph;
    Rng rng(43);
    for (int rep = 0; rep < 50; ++rep) {
      CorruptionResult res = corrupt_graph(g, 1.0, two, rng, &exclude);
      for (const Node& n : res.graph.nodes) CHECK(n.surface != "beta");
    }
  }
}

TEST_CASE("detect_errors: zero head gives 0.5 everywhere, length N_v") {
  ToyDataset d = make_toy_dataset(3);
  Model model(d.config, 43);
  zero_param(model, "head.ova.w");
  zero_param(model, "head.ova.b");
  PreparedPair pair = prepare_record(d, d.pairs.records[0], model);
  std::vector<double> probs = detect_errors(model, pair);
  CHECK(probs.size() == size_t(d.pairs.records[0].graph.node_count()));
  for (double p : probs) CHECK(p == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("per-node BCE loss equals the probability oracle") {
  ToyDataset d = make_toy_dataset(2);
  Model model(d.config, 47);
  const PairRecord& rec = d.pairs.records[0];
  PreparedPair pair = prepare_record(d, rec, model);

  EncoderOutputs out = model.forward(pair.text, pair.graph);
  Tensor logits = model.ova_logits(out.graph_states);
  std::vector<double> labels(rec.graph.node_count(), 0.0);
  labels[2] = 1.0;
  Tensor loss = bce_with_logits(logits, labels, Reduction::Mean);

  std::vector<double> probs = detect_errors(model, pair);
  double oracle = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    oracle += labels[i] == 1.0 ? -std::log(probs[i]) : -std::log(1.0 - probs[i]);
  }
  oracle /= double(probs.size());
  CHECK(std::abs(loss.item() - oracle) < 1e-12);
}

TEST_CASE("s2s text mask: sizes and triangular oracle") {
  Tensor one = build_s2s_text_mask(1, Tensor());
  CHECK(one.shape() == Shape{1, 1});
  CHECK(one.values()[0] == 0.0);

  Tensor three = build_s2s_text_mask(3, Tensor());
  int64_t allowed = 0;
  for (double v : three.values()) allowed += v == 0.0;
  CHECK(allowed == 6);

  Rng rng(53);
  for (int t = 0; t < 20; ++t) {
    int64_t n = 1 + rng.uniform_int(20);
    Tensor m = build_s2s_text_mask(n, Tensor());
    for (int64_t q = 0; q < n; ++q) {
      for (int64_t k = 0; k < n; ++k) {
        CHECK((m.at({q, k}) == 0.0) == (k <= q));
      }
    }
  }
}

TEST_CASE("generation loss: masking plans and gradient") {
  ToyDataset d = make_toy_dataset(2);
  Model model(d.config, 59);
  const PairRecord& rec = d.pairs.records[0];

  SUBCASE("nothing masked gives zero loss") {
    Rng rng(61);
    int64_t count = -1;
    Tensor loss = generation_loss(model, rec, d.text_vocab, d.graph_vocab, 0.0,
                                  0.0, rng, &count);
    CHECK(count == 0);
    CHECK(loss.item() == 0.0);
  }
  SUBCASE("[SEP]-only masking labels exactly the [SEP] slots") {
    Rng rng(67);
    int64_t count = -1;
    generation_loss(model, rec, d.text_vocab, d.graph_vocab, 0.0, 1.0, rng,
                    &count);
    int64_t seps = 0;
    for (int64_t id : rec.text.token_ids) seps += id == SubwordVocabulary::kSep;
    CHECK(count == seps);
  }
  SUBCASE("gradient matches finite differences") {
    std::vector<Tensor> params;
    for (auto& [name, t] : model.parameters()) params.push_back(t);
    Rng rng(71);
    auto f = [&] {
      Rng loss_rng(73);  // frozen masking per evaluation
      int64_t count = 0;
      Tensor sum = generation_loss(model, rec, d.text_vocab, d.graph_vocab,
                                   0.3, 0.5, loss_rng, &count);
      return count > 0 ? scale(sum, 1.0 / double(count)) : sum;
    };
    CHECK(grad_check(f, params, 1e-3, rng, 2, 1e-5) <= 1e-4);
  }
}

TEST_CASE("generate_note: a [SEP]-rigged model stops immediately") {
  ToyDataset d = make_toy_dataset(2);
  Model model(d.config, 79);
  Tensor bias = model.param("head.mlm.b");
  bias.values()[SubwordVocabulary::kSep] = 100.0;

  GenerationConfig cfg;
  cfg.max_length = 16;
  Rng rng(83);
  GeneratedText out = generate_note(model, d.pairs.records[0].graph,
                                    d.text_vocab, d.graph_vocab, cfg, rng);
  REQUIRE(out.token_ids.size() == 2);
  CHECK(out.token_ids[0] == SubwordVocabulary::kCls);
  CHECK(out.token_ids[1] == SubwordVocabulary::kSep);
  CHECK_FALSE(out.truncated);
  CHECK(detokenize(out.token_ids, d.text_vocab).empty());
}

TEST_CASE("nucleus sampling with p -> 0+ matches greedy token for token") {
  ToyDataset d = make_toy_dataset(3);
  Model model(d.config, 89);
  GenerationConfig greedy;
  greedy.strategy = GenerationConfig::Strategy::Greedy;
  greedy.max_length = 12;
  GenerationConfig nucleus = greedy;
  nucleus.strategy = GenerationConfig::Strategy::TopP;
  nucleus.top_p = 1e-12;

  Rng r1(97), r2(97);
  GeneratedText a = generate_note(model, d.pairs.records[1].graph, d.text_vocab,
                                  d.graph_vocab, greedy, r1);
  GeneratedText b = generate_note(model, d.pairs.records[1].graph, d.text_vocab,
                                  d.graph_vocab, nucleus, r2);
  CHECK(a.token_ids == b.token_ids);
}

TEST_CASE("nucleus sampling is deterministic under a fixed seed") {
  ToyDataset d = make_toy_dataset(3);
  Model model(d.config, 101);
  GenerationConfig cfg;
  cfg.strategy = GenerationConfig::Strategy::TopP;
  cfg.top_p = 0.9;
  cfg.max_length = 12;
  Rng r1(5), r2(5), r3(6);
  GeneratedText a = generate_note(model, d.pairs.records[0].graph, d.text_vocab,
                                  d.graph_vocab, cfg, r1);
  GeneratedText b = generate_note(model, d.pairs.records[0].graph, d.text_vocab,
                                  d.graph_vocab, cfg, r2);
  CHECK(a.token_ids == b.token_ids);
  // a different seed is allowed to differ; just has to run
  generate_note(model, d.pairs.records[0].graph, d.text_vocab, d.graph_vocab,
                cfg, r3);
}

TEST_CASE("suffix perturbation cannot change earlier next-token distributions") {
  ToyDataset d = make_toy_dataset(2);
  Model model(d.config, 103);
  const PairRecord& rec = d.pairs.records[0];
  PreparedPair pair = prepare_record(d, rec, model);
  ForwardOptions opts;
  opts.s2s_mode = true;

  EncoderOutputs base = model.forward(pair.text, pair.graph, opts);
  Tensor base_logits = model.mlm_logits(base.text_states);

  TextInputs mutated = pair.text;
  int64_t t = 2;
  for (size_t i = t + 1; i < mutated.token_ids.size(); ++i) {
    mutated.token_ids[i] =
        (mutated.token_ids[i] + 1 + int64_t(i)) % d.config.text_vocab_size;
  }
  EncoderOutputs alt = model.forward(mutated, pair.graph, opts);
  Tensor alt_logits = model.mlm_logits(alt.text_states);
  for (int64_t i = 0; i <= t; ++i) {
    for (int64_t j = 0; j < d.config.text_vocab_size; ++j) {
      CHECK(base_logits.at({i, j}) == alt_logits.at({i, j}));
    }
  }
}

TEST_CASE("generation fine-tuning memorizes a single pair") {
  ToyDataset d = make_toy_dataset(1);
  Model model(d.config, 107);
  PairDataset one;
  one.records.push_back(d.pairs.records[0]);

  GenerationConfig gen;
  gen.sep_count = 1;
  gen.start_section = 0;
  gen.max_length = int64_t(d.pairs.records[0].text.token_ids.size()) + 4;

  FinetuneConfig ft;
  ft.epochs = 400;
  ft.learning_rate = 3e-3;
  ft.batch_size = 1;
  ft.seed = 11;
  ft.epoch_callback = [](int64_t, double loss) { return loss < 0.02; };
  finetune_generation(model, one, d.text_vocab, d.graph_vocab, gen, ft);

  Rng rng(113);
  GeneratedText out = generate_note(model, one.records[0].graph, d.text_vocab,
                                    d.graph_vocab, gen, rng);
  std::string produced = detokenize(out.token_ids, d.text_vocab);
  std::string reference = detokenize(one.records[0].text.token_ids, d.text_vocab);
  CHECK(rouge(split_words(produced), split_words(reference),
              RougeVariant::RGL) >= 0.9);
}

TEST_CASE("fine-tune loops run and reduce their loss on toy data") {
  ToyDataset d = make_toy_dataset(8);
  FinetuneConfig ft;
  ft.epochs = 4;
  ft.learning_rate = 1e-3;
  ft.batch_size = 4;
  ft.seed = 3;

  SUBCASE("retrieval") {
    Model model(d.config, 109);
    double first = -1;
    FinetuneConfig cfg = ft;
    cfg.epoch_callback = [&](int64_t epoch, double loss) {
      if (epoch == 0) first = loss;
      return false;
    };
    double last = finetune_retrieval(model, d.pairs, d.text_vocab,
                                     d.graph_vocab, cfg);
    CHECK(last < first);
  }
  SUBCASE("temporal") {
    Model model(d.config, 127);
    double last = finetune_temporal(model, d.pairs, d.text_vocab, d.graph_vocab,
                                    TemporalTarget::Readmission, ft);
    CHECK(std::isfinite(last));
  }
  SUBCASE("error detection") {
    Model model(d.config, 131);
    std::vector<const EhrGraph*> graphs;
    for (const PairRecord& r : d.pairs.records) graphs.push_back(&r.graph);
    LiteralPools pools = build_literal_pools(graphs);
    double last = finetune_error_detection(model, d.pairs, d.text_vocab,
                                           d.graph_vocab, pools, 0.25, ft);
    CHECK(std::isfinite(last));
    ErrorDetectionEval eval = evaluate_error_detection(
        model, d.pairs, pools, 0.25, 17, d.text_vocab, d.graph_vocab);
    CHECK(eval.predictions.size() == eval.labels.size());
  }
}
