#include "graphtext/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace graphtext {

using nlohmann::json;

namespace {

json graph_to_json(const EhrGraph& g) {
  json j;
  j["admission_key"] = g.admission_key;
  j["nodes"] = json::array();
  for (const Node& n : g.nodes) {
    json jn;
    jn["kind"] = node_kind_name(n.kind);
    if (!n.surface.empty()) jn["surface"] = n.surface;
    if (!n.literal_type.empty()) jn["type"] = n.literal_type;
    if (!n.label.empty()) jn["label"] = n.label;
    j["nodes"].push_back(std::move(jn));
  }
  j["edges"] = json::array();
  for (const Edge& e : g.edges) {
    j["edges"].push_back(json::array({e.src, e.dst, e.relation}));
  }
  return j;
}

EhrGraph graph_from_json(const json& j) {
  EhrGraph g;
  g.admission_key = j.at("admission_key");
  for (const json& jn : j.at("nodes")) {
    Node n;
    n.kind = node_kind_from_name(jn.at("kind"));
    n.surface = jn.value("surface", "");
    n.literal_type = jn.value("type", "");
    n.label = jn.value("label", "");
    g.nodes.push_back(std::move(n));
  }
  for (const json& je : j.at("edges")) {
    g.edges.push_back({je.at(0).get<int64_t>(), je.at(1).get<int64_t>(),
                       je.at(2).get<int64_t>()});
  }
  return g;
}

}  // namespace

void write_pairs_jsonl(const PairDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  for (const PairRecord& r : dataset.records) {
    json j;
    j["admission_key"] = r.admission_key;
    j["graph"] = graph_to_json(r.graph);
    j["text"] = {{"token_ids", r.text.token_ids},
                 {"section_ids", r.text.section_ids}};
    j["labels"] = {{"mortality", r.mortality_label},
                   {"readmission", r.readmission_label}};
    out << j.dump() << "\n";
  }
}

PairDataset read_pairs_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset: " + path);
  PairDataset ds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    PairRecord r;
    r.admission_key = j.at("admission_key");
    r.graph = graph_from_json(j.at("graph"));
    r.text.token_ids = j.at("text").at("token_ids").get<std::vector<int64_t>>();
    r.text.section_ids = j.at("text").at("section_ids").get<std::vector<int>>();
    r.text.positions.resize(r.text.token_ids.size());
    for (size_t i = 0; i < r.text.positions.size(); ++i) {
      r.text.positions[i] = static_cast<int64_t>(i);
    }
    r.mortality_label = j.at("labels").value("mortality", 0);
    r.readmission_label = j.at("labels").value("readmission", 0);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

void DatasetBundle::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  write_pairs_jsonl(train, dir + "/train.jsonl");
  write_pairs_jsonl(valid, dir + "/valid.jsonl");
  write_pairs_jsonl(test, dir + "/test.jsonl");
  text_vocab.save(dir + "/text_vocab.txt");
  graph_vocab.save(dir + "/graph_vocab.json");
  relations.save(dir + "/relations.json");
}

DatasetBundle DatasetBundle::load(const std::string& dir) {
  DatasetBundle b;
  b.train = read_pairs_jsonl(dir + "/train.jsonl");
  b.valid = read_pairs_jsonl(dir + "/valid.jsonl");
  b.test = read_pairs_jsonl(dir + "/test.jsonl");
  b.text_vocab = SubwordVocabulary::load(dir + "/text_vocab.txt");
  b.graph_vocab = GraphVocabulary::load(dir + "/graph_vocab.json");
  b.relations = RelationVocabulary::load(dir + "/relations.json");
  return b;
}

}  // namespace graphtext
