#pragma once

// Shared toy fixtures for model/pretrain/downstream tests.

#include <string>
#include <vector>

#include "graphtext/dataset.hpp"
#include "graphtext/ehr_graph.hpp"
#include "graphtext/model.hpp"
#include "graphtext/text.hpp"

namespace fixtures {

using namespace graphtext;

inline ModelConfig tiny_config(int64_t text_vocab, int64_t graph_vocab,
                               int64_t relations) {
  ModelConfig c;
  c.hidden = 8;
  c.heads = 2;
  c.text_layers = 1;
  c.graph_layers = 1;
  c.cross_blocks = 1;
  c.ff_inner = 16;
  c.dropout = 0.0;
  c.text_vocab_size = text_vocab;
  c.graph_vocab_size = graph_vocab;
  c.relation_count = relations;
  c.max_text_len = 64;
  c.max_nodes = 32;
  return c;
}

struct ToyWorld {
  SubwordVocabulary text_vocab;
  GraphVocabulary graph_vocab;
  RelationVocabulary relations;
  EhrGraph graph;
  EncodedGraph encoded;
  TextSequence text;
  ModelConfig config;
};

// A 5-node admission graph (ADM -> DX -> code, title; ADM -> RX -> drug is
// trimmed to keep it small) paired with a short two-section text.
inline ToyWorld make_toy_world() {
  ToyWorld w;
  w.text_vocab = SubwordVocabulary(
      {"fever", "aspirin", "oral", "c11", "mild", "chest", "pain"});
  w.relations = RelationVocabulary(
      {"/diagnoses", "/diagnoses_icd9_code", "/diagnoses_long_title"});

  Node adm;
  adm.kind = NodeKind::AbstractAdm;
  adm.label = "ADM_ID/1";
  Node dx;
  dx.kind = NodeKind::AbstractDx;
  dx.label = "DX_ID/d1";
  Node code;
  code.kind = NodeKind::Literal;
  code.surface = "c11";
  code.literal_type = "/diagnoses_icd9_code";
  code.label = "ICD9_CODE/c11";
  Node title;
  title.kind = NodeKind::Literal;
  title.surface = "chest pain";
  title.literal_type = "/diagnoses_long_title";
  title.label = "chest pain";
  Node title2;
  title2.kind = NodeKind::Literal;
  title2.surface = "fever";
  title2.literal_type = "/diagnoses_long_title";
  title2.label = "fever";

  w.graph.admission_key = "1";
  w.graph.nodes = {adm, dx, code, title, title2};
  w.graph.edges = {{0, 1, 0}, {1, 2, 1}, {2, 3, 2}, {2, 4, 2}};
  w.graph = bfs_reorder(w.graph);

  w.graph_vocab = build_graph_vocab({w.graph});
  w.encoded = encode_graph(w.graph, w.text_vocab, w.graph_vocab);
  w.text = encode_text({{0, "mild chest pain"}, {1, "fever"}}, w.text_vocab);
  w.config = tiny_config(w.text_vocab.size(), w.graph_vocab.size(),
                         w.relations.size());
  return w;
}

struct ToyDataset {
  PairDataset pairs;
  SubwordVocabulary text_vocab;
  GraphVocabulary graph_vocab;
  RelationVocabulary relations;
  ModelConfig config;
};

// n small admissions; record i carries two literals drawn from a fixed word
// pool, and the paired text mentions both.
inline ToyDataset make_toy_dataset(int n) {
  const std::vector<std::string> pool = {"alpha", "beta",  "gamma", "delta",
                                         "epsilon", "zeta", "eta",  "theta"};
  ToyDataset d;
  d.relations = RelationVocabulary({"/diagnoses", "/diagnoses_long_title"});

  std::vector<std::string> corpus;
  for (int i = 0; i < n; ++i) {
    const std::string& a = pool[i % pool.size()];
    const std::string& b = pool[(i + 3) % pool.size()];
    corpus.push_back("patient has " + a + " and " + b);
  }
  d.text_vocab = build_text_vocab(corpus, 200);

  std::vector<EhrGraph> graphs;
  for (int i = 0; i < n; ++i) {
    const std::string& a = pool[i % pool.size()];
    const std::string& b = pool[(i + 3) % pool.size()];
    EhrGraph g;
    g.admission_key = "adm" + std::to_string(i);
    Node adm;
    adm.kind = NodeKind::AbstractAdm;
    adm.label = "ADM_ID/" + g.admission_key;
    Node dx;
    dx.kind = NodeKind::AbstractDx;
    dx.label = "DX_ID/d" + std::to_string(i);
    Node la;
    la.kind = NodeKind::Literal;
    la.surface = a;
    la.literal_type = "/diagnoses_long_title";
    la.label = a;
    Node lb = la;
    lb.surface = b;
    lb.label = b;
    g.nodes = {adm, dx, la, lb};
    g.edges = {{0, 1, 0}, {1, 2, 1}, {1, 3, 1}};
    graphs.push_back(bfs_reorder(g));
  }
  d.graph_vocab = build_graph_vocab(graphs);

  for (int i = 0; i < n; ++i) {
    PairRecord r;
    r.admission_key = graphs[i].admission_key;
    r.graph = graphs[i];
    r.text = encode_text({{0, corpus[i]}}, d.text_vocab);
    d.pairs.records.push_back(std::move(r));
  }
  d.config = tiny_config(d.text_vocab.size(), d.graph_vocab.size(),
                         d.relations.size());
  return d;
}

}  // namespace fixtures
