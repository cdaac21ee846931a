#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <deque>
#include <set>
#include <string>
#include <vector>

#include "graphtext/ehr_graph.hpp"
#include "graphtext/rng.hpp"

using namespace graphtext;

namespace {

// Dx+Px-style schema: two tables, three relations each.
ConversionSchema dxpx_schema() {
  ConversionSchema s;
  TableSchema dx;
  dx.name = "diagnoses";
  dx.admission_column = "ADM_ID";
  dx.primary_key = "DX_ID";
  dx.entity_kind = "DX";
  dx.admission_relation = "/diagnoses";
  dx.columns = {
      {"ICD9_CODE", "/diagnoses_icd9_code", "", true},
      {"LONG_TITLE", "/diagnoses_long_title", "ICD9_CODE", false},
  };
  TableSchema px = dx;
  px.name = "procedures";
  px.primary_key = "PX_ID";
  px.entity_kind = "PX";
  px.admission_relation = "/procedures";
  px.columns = {
      {"ICD9_CODE", "/procedures_icd9_code", "", true},
      {"LONG_TITLE", "/procedures_long_title", "ICD9_CODE", false},
  };
  s.tables = {dx, px};
  return s;
}

ConversionSchema rx_schema() {
  ConversionSchema s;
  TableSchema rx;
  rx.name = "prescriptions";
  rx.admission_column = "ADM_ID";
  rx.primary_key = "RX_ID";
  rx.entity_kind = "RX";
  rx.admission_relation = "/prescriptions";
  rx.columns = {
      {"ICUSTAY_ID", "/icustay_id", "", false},
      {"DRUG_TYPE", "/drug_type", "", false},
      {"DRUG", "/drug", "", false},
      {"ROUTE", "/route", "", false},
      {"FORMULARY_DRUG_CD", "/formulary_drug_cd", "", false},
      {"DOSE", "/drug_dose", "", false},
  };
  s.tables = {rx};
  return s;
}

Table make_table(std::string name, std::vector<std::string> columns,
                 std::vector<std::vector<std::string>> rows) {
  Table t;
  t.name = std::move(name);
  t.columns = std::move(columns);
  t.rows = std::move(rows);
  return t;
}

// Random tree with the root as ADM and literal children.
EhrGraph random_tree(Rng& rng, int64_t n) {
  EhrGraph g;
  g.admission_key = "t";
  Node root;
  root.kind = NodeKind::AbstractAdm;
  root.label = "ADM_ID/t";
  g.nodes.push_back(root);
  for (int64_t i = 1; i < n; ++i) {
    Node lit;
    lit.kind = NodeKind::Literal;
    lit.surface = "lit" + std::to_string(i);
    lit.literal_type = "/r";
    lit.label = lit.surface;
    g.nodes.push_back(lit);
    g.edges.push_back({rng.uniform_int(i), i, 0});
  }
  return g;
}

// Queue-based reference BFS over edge-order adjacency.
std::vector<int64_t> reference_bfs(const EhrGraph& g, int64_t root) {
  std::vector<std::vector<int64_t>> adj(g.node_count());
  for (const Edge& e : g.edges) {
    adj[e.src].push_back(e.dst);
    adj[e.dst].push_back(e.src);
  }
  std::vector<int64_t> rank(g.node_count(), -1);
  std::deque<int64_t> q{root};
  rank[root] = 0;
  int64_t next = 1;
  while (!q.empty()) {
    int64_t cur = q.front();
    q.pop_front();
    for (int64_t c : adj[cur]) {
      if (rank[c] < 0) {
        rank[c] = next++;
        q.push_back(c);
      }
    }
  }
  return rank;
}

}  // namespace

TEST_CASE("converter reproduces the procedures fixture triples") {
  TableSet ts;
  ts.add(make_table("diagnoses",
                    {"ADM_ID", "DX_ID", "ICD9_CODE", "LONG_TITLE"},
                    {{"198041", "35897", "5070",
                      "Food/vomit pneumonitis"}}));
  ts.add(make_table("procedures",
                    {"ADM_ID", "PX_ID", "ICD9_CODE", "LONG_TITLE"},
                    {{"198041", "186630", "4513",
                      "Other endoscopy of small intestine"}}));
  ConversionResult res = convert_tables(ts, dxpx_schema());

  REQUIRE(res.graphs.size() == 1);
  Triple key_link{"ADM_ID/198041", "/procedures", "PX_ID/186630"};
  Triple title_link{"ICD9_CODE/4513", "/procedures_long_title",
                    "Other endoscopy of small intestine"};
  CHECK(std::find(res.triples.begin(), res.triples.end(), key_link) !=
        res.triples.end());
  CHECK(std::find(res.triples.begin(), res.triples.end(), title_link) !=
        res.triples.end());
  // hand-enumerated: 2 rows x (1 admission link + 2 value cells)
  CHECK(res.triples.size() == 6);
}

TEST_CASE("Dx+Px schema yields 6 relations and Rx 7, before Not Connected") {
  CHECK(dxpx_schema().relation_names().size() == 6);
  CHECK(rx_schema().relation_names().size() == 7);
  RelationVocabulary rv(dxpx_schema().relation_names());
  CHECK(rv.size() == 7);  // + Not Connected
  CHECK(rv.name(rv.not_connected_id()) == std::string("Not Connected"));
}

TEST_CASE("admission with zero child rows becomes a single-node graph") {
  TableSet ts;
  ts.add(make_table("admissions", {"ADM_ID"}, {{"1"}, {"2"}}));
  ts.add(make_table("prescriptions",
                    {"ADM_ID", "RX_ID", "ICUSTAY_ID", "DRUG_TYPE", "DRUG",
                     "ROUTE", "FORMULARY_DRUG_CD", "DOSE"},
                    {{"1", "r1", "333", "MAIN", "aspirin", "po", "asa325",
                      "325mg"}}));
  ConversionSchema schema = rx_schema();
  schema.admissions_table = "admissions";
  schema.admissions_key_column = "ADM_ID";
  ConversionResult res = convert_tables(ts, schema);
  REQUIRE(res.graphs.size() == 2);
  CHECK(res.graphs[0].admission_key == "1");
  CHECK(res.graphs[0].node_count() == 8);  // ADM + RX + 6 literals
  CHECK(res.graphs[1].node_count() == 1);
  CHECK(res.graphs[1].edges.empty());
  CHECK(res.graphs[1].nodes[0].kind == NodeKind::AbstractAdm);
}

TEST_CASE("converter rejects duplicate primary keys and dangling admissions") {
  TableSet dup;
  dup.add(make_table("prescriptions",
                     {"ADM_ID", "RX_ID", "ICUSTAY_ID", "DRUG_TYPE", "DRUG",
                      "ROUTE", "FORMULARY_DRUG_CD", "DOSE"},
                     {{"1", "r1", "", "", "a", "", "", ""},
                      {"1", "r1", "", "", "b", "", "", ""}}));
  CHECK_THROWS_WITH_AS(convert_tables(dup, rx_schema()),
                       doctest::Contains("duplicate primary key"),
                       std::runtime_error);

  TableSet dangling;
  dangling.add(make_table("admissions", {"ADM_ID"}, {{"1"}}));
  dangling.add(make_table("prescriptions",
                          {"ADM_ID", "RX_ID", "ICUSTAY_ID", "DRUG_TYPE",
                           "DRUG", "ROUTE", "FORMULARY_DRUG_CD", "DOSE"},
                          {{"99", "r1", "", "", "a", "", "", ""}}));
  ConversionSchema schema = rx_schema();
  schema.admissions_table = "admissions";
  schema.admissions_key_column = "ADM_ID";
  CHECK_THROWS_WITH_AS(convert_tables(dangling, schema),
                       doctest::Contains("row 1"), std::runtime_error);
}

TEST_CASE("triple set equals exhaustive row-walk oracle on a 3-table fixture") {
  TableSet ts;
  ts.add(make_table("diagnoses", {"ADM_ID", "DX_ID", "ICD9_CODE", "LONG_TITLE"},
                    {{"a1", "d1", "c1", "t1"},
                     {"a1", "d2", "c2", ""},   // null title
                     {"a2", "d3", "c1", "t1"}}));
  ts.add(make_table("procedures", {"ADM_ID", "PX_ID", "ICD9_CODE", "LONG_TITLE"},
                    {{"a1", "p1", "c9", "t9"}, {"a2", "p2", "", ""}}));
  ts.add(make_table("admissions", {"ADM_ID"}, {{"a1"}, {"a2"}, {"a3"}}));
  ConversionSchema schema = dxpx_schema();
  schema.admissions_table = "admissions";
  schema.admissions_key_column = "ADM_ID";
  ConversionResult res = convert_tables(ts, schema);

  // oracle: walk every row, emit expected triples
  std::vector<Triple> expect;
  auto row = [&](const std::string& adm, const std::string& pk,
                 const std::string& pkcol, const std::string& table,
                 const std::string& code, const std::string& title) {
    expect.push_back({"ADM_ID/" + adm, "/" + table, pkcol + "/" + pk});
    if (!code.empty()) {
      expect.push_back({pkcol + "/" + pk, "/" + table + "_icd9_code",
                        "ICD9_CODE/" + code});
      if (!title.empty()) {
        expect.push_back({"ICD9_CODE/" + code, "/" + table + "_long_title",
                          title});
      }
    }
  };
  row("a1", "d1", "DX_ID", "diagnoses", "c1", "t1");
  row("a1", "d2", "DX_ID", "diagnoses", "c2", "");
  row("a2", "d3", "DX_ID", "diagnoses", "c1", "t1");
  row("a1", "p1", "PX_ID", "procedures", "c9", "t9");
  row("a2", "p2", "PX_ID", "procedures", "", "");

  CHECK(res.triples.size() == expect.size());
  for (const Triple& t : expect) {
    CHECK(std::find(res.triples.begin(), res.triples.end(), t) !=
          res.triples.end());
  }
  // count invariant: non-null value cells + key-link rows
  int64_t non_null_cells = 4 + 3;  // codes c1,c2,c1,c9 + titles t1,t1,t9
  int64_t key_links = 5;
  CHECK(static_cast<int64_t>(res.triples.size()) == non_null_cells + key_links);
  CHECK(res.graphs.size() == 3);
}

TEST_CASE("bfs order on a spelled-out two-level tree") {
  // built out of BFS order on purpose: ADM, DX1, lit1, DX2, lit2
  EhrGraph g;
  g.admission_key = "a";
  Node adm;
  adm.kind = NodeKind::AbstractAdm;
  Node dx1, dx2;
  dx1.kind = dx2.kind = NodeKind::AbstractDx;
  Node l1, l2;
  l1.kind = l2.kind = NodeKind::Literal;
  l1.surface = "x";
  l2.surface = "y";
  g.nodes = {adm, dx1, l1, dx2, l2};
  g.edges = {{0, 1, 0}, {1, 2, 1}, {0, 3, 0}, {3, 4, 1}};
  std::vector<int64_t> order = bfs_serialize(g);
  // expected ranks: ADM=0, DX1=1, DX2=2, lit1=3, lit2=4
  CHECK(order == std::vector<int64_t>{0, 1, 3, 2, 4});

  EhrGraph re = bfs_reorder(g);
  CHECK(re.nodes[0].kind == NodeKind::AbstractAdm);
  CHECK(re.nodes[1].kind == NodeKind::AbstractDx);
  CHECK(re.nodes[2].kind == NodeKind::AbstractDx);
  CHECK(re.nodes[3].surface == "x");
  CHECK(re.nodes[4].surface == "y");
}

TEST_CASE("bfs of a single ADM node") {
  EhrGraph g;
  Node adm;
  adm.kind = NodeKind::AbstractAdm;
  g.nodes = {adm};
  CHECK(bfs_serialize(g) == std::vector<int64_t>{0});
}

TEST_CASE("bfs matches queue-based reference on random 20-node trees") {
  Rng rng(2024);
  for (int t = 0; t < 50; ++t) {
    EhrGraph g = random_tree(rng, 20);
    CHECK(bfs_serialize(g) == reference_bfs(g, 0));
  }
}

TEST_CASE("bfs positions are a permutation of 0..N-1") {
  Rng rng(4);
  EhrGraph g = random_tree(rng, 33);
  std::vector<int64_t> order = bfs_serialize(g);
  std::set<int64_t> seen(order.begin(), order.end());
  CHECK(seen.size() == 33);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 32);
}

TEST_CASE("bfs rejects disconnected nodes") {
  EhrGraph g;
  Node adm;
  adm.kind = NodeKind::AbstractAdm;
  Node stray;
  stray.kind = NodeKind::Literal;
  stray.surface = "s";
  g.nodes = {adm, stray};
  CHECK_THROWS_AS(bfs_serialize(g), std::invalid_argument);
}

TEST_CASE("adjacency mask basics") {
  EhrGraph pair;
  Node a;
  a.kind = NodeKind::AbstractAdm;
  Node b;
  b.kind = NodeKind::Literal;
  b.surface = "v";
  pair.nodes = {a, b};

  SUBCASE("two nodes, one edge: all zeros") {
    pair.edges = {{0, 1, 0}};
    Tensor m = build_adjacency_mask(pair, 2);
    for (double v : m.values()) CHECK(v == 0.0);
  }
  SUBCASE("two nodes, no edge: zeros on diagonal only") {
    Tensor m = build_adjacency_mask(pair, 2);
    CHECK(m.at({0, 0}) == 0.0);
    CHECK(m.at({1, 1}) == 0.0);
    CHECK(m.at({0, 1}) == -1e9);
    CHECK(m.at({1, 0}) == -1e9);
  }
  SUBCASE("padding rows and columns fully negative") {
    pair.edges = {{0, 1, 0}};
    Tensor m = build_adjacency_mask(pair, 4);
    for (int64_t i = 0; i < 4; ++i) {
      for (int64_t j = 0; j < 4; ++j) {
        if (i >= 2 || j >= 2) CHECK(m.at({i, j}) == -1e9);
      }
    }
  }
}

TEST_CASE("adjacency mask zero-pattern equals adjacency-plus-identity oracle") {
  Rng rng(8);
  EhrGraph g = random_tree(rng, 20);
  Tensor m = build_adjacency_mask(g, 20);
  std::set<std::pair<int64_t, int64_t>> allowed;
  for (int64_t i = 0; i < 20; ++i) allowed.insert({i, i});
  for (const Edge& e : g.edges) {
    allowed.insert({e.src, e.dst});
    allowed.insert({e.dst, e.src});
  }
  for (int64_t i = 0; i < 20; ++i) {
    for (int64_t j = 0; j < 20; ++j) {
      bool zero = m.at({i, j}) == 0.0;
      CHECK(zero == allowed.count({i, j}));
      CHECK(m.at({i, j}) == m.at({j, i}));
    }
  }
}

TEST_CASE("filter_oversize boundary") {
  Rng rng(6);
  CHECK(filter_oversize(random_tree(rng, 768), 768));
  CHECK_FALSE(filter_oversize(random_tree(rng, 769), 768));
  int64_t kept = 0;
  std::vector<EhrGraph> corpus;
  for (int i = 0; i < 30; ++i) corpus.push_back(random_tree(rng, 3 + rng.uniform_int(12)));
  for (const auto& g : corpus) {
    if (filter_oversize(g, 8)) ++kept;
  }
  int64_t oracle = 0;
  for (const auto& g : corpus) oracle += g.node_count() <= 8 ? 1 : 0;
  CHECK(kept == oracle);
}

TEST_CASE("graph vocabulary: reserved tokens and distinct literals") {
  CHECK(build_graph_vocab({}).size() == GraphVocabulary::kReservedCount);

  EhrGraph g;
  Node adm;
  adm.kind = NodeKind::AbstractAdm;
  Node l1, l2, l3;
  l1.kind = l2.kind = l3.kind = NodeKind::Literal;
  l1.surface = "a";
  l2.surface = "b";
  l3.surface = "a";
  g.nodes = {adm, l1, l2, l3};
  GraphVocabulary v = build_graph_vocab({g});
  CHECK(v.size() == GraphVocabulary::kReservedCount + 2);
  CHECK(v.literal_count() == 2);
  CHECK(v.id_of_surface("a") == GraphVocabulary::kReservedCount);
  CHECK(v.id_for_node(adm) == GraphVocabulary::kAdm);
}

TEST_CASE("graph vocabulary size equals distinct-literal count plus reserved") {
  Rng rng(12);
  std::vector<EhrGraph> corpus;
  std::set<std::string> distinct;
  for (int i = 0; i < 10; ++i) {
    EhrGraph g = random_tree(rng, 12);
    for (Node& n : g.nodes) {
      if (n.kind == NodeKind::Literal) {
        n.surface = "lit" + std::to_string(rng.uniform_int(17));
        distinct.insert(n.surface);
      }
    }
    corpus.push_back(g);
  }
  CHECK(build_graph_vocab(corpus).size() ==
        GraphVocabulary::kReservedCount +
            static_cast<int64_t>(distinct.size()));
}

TEST_CASE("encode_graph concatenates literal descriptions in order") {
  SubwordVocabulary tv({"aspirin", "oral", "325mg"});
  EhrGraph g;
  Node adm;
  adm.kind = NodeKind::AbstractAdm;
  Node l1, l2;
  l1.kind = l2.kind = NodeKind::Literal;
  l1.surface = "aspirin";
  l1.literal_type = "/drug";
  l2.surface = "oral";
  l2.literal_type = "/route";
  g.nodes = {adm, l1, l2};
  g.edges = {{0, 1, 0}, {0, 2, 1}};
  GraphVocabulary gv = build_graph_vocab({g});
  EncodedGraph enc = encode_graph(g, tv, gv);
  CHECK(enc.length() == 3);
  CHECK(enc.positions == std::vector<int64_t>{0, 1, 2});
  CHECK(enc.descriptions[0].empty());
  std::vector<int64_t> expected_concat = {tv.id_of("aspirin"), tv.id_of("oral")};
  CHECK(enc.descriptions_concat == expected_concat);
  CHECK(enc.is_literal == std::vector<bool>{false, true, true});
}

TEST_CASE("graph JSONL round-trip") {
  Rng rng(99);
  std::vector<EhrGraph> graphs;
  for (int i = 0; i < 5; ++i) {
    EhrGraph g = random_tree(rng, 6);
    g.admission_key = "adm" + std::to_string(i);
    graphs.push_back(g);
  }
  std::string path = "graphs_roundtrip_test.jsonl";
  write_graphs_jsonl(graphs, path);
  std::vector<EhrGraph> loaded = read_graphs_jsonl(path);
  REQUIRE(loaded.size() == graphs.size());
  for (size_t i = 0; i < graphs.size(); ++i) {
    CHECK(loaded[i].admission_key == graphs[i].admission_key);
    REQUIRE(loaded[i].node_count() == graphs[i].node_count());
    for (int64_t n = 0; n < graphs[i].node_count(); ++n) {
      CHECK(loaded[i].nodes[n].kind == graphs[i].nodes[n].kind);
      CHECK(loaded[i].nodes[n].surface == graphs[i].nodes[n].surface);
    }
    REQUIRE(loaded[i].edges.size() == graphs[i].edges.size());
    for (size_t e = 0; e < graphs[i].edges.size(); ++e) {
      CHECK(loaded[i].edges[e].src == graphs[i].edges[e].src);
      CHECK(loaded[i].edges[e].dst == graphs[i].edges[e].dst);
      CHECK(loaded[i].edges[e].relation == graphs[i].edges[e].relation);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("csv quoting round-trip") {
  Table t = make_table("x", {"A", "B"},
                       {{"plain", "with, comma"},
                        {"with \"quotes\"", "multi word value"}});
  write_csv(t, "csv_roundtrip_test.csv");
  Table r = read_csv("csv_roundtrip_test.csv", "x");
  CHECK(r.columns == t.columns);
  CHECK(r.rows == t.rows);
  std::remove("csv_roundtrip_test.csv");
}

TEST_CASE("schema JSON round-trip keeps relation order") {
  ConversionSchema s = dxpx_schema();
  s.admissions_table = "admissions";
  s.admissions_key_column = "ADM_ID";
  s.save("schema_roundtrip_test.json");
  ConversionSchema r = ConversionSchema::load("schema_roundtrip_test.json");
  CHECK(r.relation_names() == s.relation_names());
  CHECK(r.admissions_table == "admissions");
  CHECK(r.tables.size() == 2);
  CHECK(r.tables[0].columns[1].attach_to == "ICD9_CODE");
  std::remove("schema_roundtrip_test.json");
}
