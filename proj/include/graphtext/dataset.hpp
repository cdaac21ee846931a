#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graphtext/ehr_graph.hpp"
#include "graphtext/text.hpp"

namespace graphtext {

// One aligned (graph, text) pair with task labels.
struct PairRecord {
  std::string admission_key;
  EhrGraph graph;
  TextSequence text;
  int mortality_label = 0;
  int readmission_label = 0;
};

struct PairDataset {
  std::vector<PairRecord> records;

  int64_t size() const { return static_cast<int64_t>(records.size()); }
};

void write_pairs_jsonl(const PairDataset& dataset, const std::string& path);
PairDataset read_pairs_jsonl(const std::string& path);

// A complete dataset directory: train/valid/test splits plus the
// vocabularies they were encoded with.
struct DatasetBundle {
  PairDataset train, valid, test;
  SubwordVocabulary text_vocab;
  GraphVocabulary graph_vocab;
  RelationVocabulary relations;

  void save(const std::string& dir) const;
  static DatasetBundle load(const std::string& dir);
};

}  // namespace graphtext
