#include "graphtext/ehr_graph.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

namespace graphtext {

using nlohmann::json;

// ---------------------------------------------------------------------------
// CSV

int Table::column_index(const std::string& column) const {
  for (size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == column) return static_cast<int>(i);
  }
  return -1;
}

namespace {

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

Table read_csv(const std::string& path, const std::string& name) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read table: " + path);
  Table table;
  table.name = name;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && in.peek() == EOF) break;
    auto fields = parse_csv_line(line);
    if (header) {
      table.columns = std::move(fields);
      header = false;
    } else {
      if (fields.size() != table.columns.size()) {
        throw std::runtime_error("table " + name + ": row " +
                                 std::to_string(table.rows.size() + 1) +
                                 " has " + std::to_string(fields.size()) +
                                 " fields, header has " +
                                 std::to_string(table.columns.size()));
      }
      table.rows.push_back(std::move(fields));
    }
  }
  if (header) throw std::runtime_error("table " + name + ": missing header");
  return table;
}

void write_csv(const Table& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write table: " + path);
  for (size_t i = 0; i < table.columns.size(); ++i) {
    if (i) out << ',';
    out << csv_escape(table.columns[i]);
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << csv_escape(row[i]);
    }
    out << '\n';
  }
}

const Table& TableSet::get(const std::string& name) const {
  auto it = tables.find(name);
  if (it == tables.end()) throw std::runtime_error("missing table: " + name);
  return it->second;
}

// ---------------------------------------------------------------------------
// Schema

namespace {

std::string default_relation(const std::string& column) {
  std::string out = "/";
  for (char c : column) out.push_back(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

ConversionSchema ConversionSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read schema: " + path);
  json j = json::parse(in);
  ConversionSchema schema;
  schema.admission_label_column = j.value("admission_label_column", "ADM_ID");
  if (j.contains("admissions")) {
    schema.admissions_table = j["admissions"].value("table", "");
    schema.admissions_key_column = j["admissions"].value("key_column", "");
  }
  for (const json& jt : j.at("tables")) {
    TableSchema t;
    t.name = jt.at("name");
    t.admission_column = jt.at("admission_column");
    t.primary_key = jt.at("primary_key");
    t.entity_kind = jt.at("entity_kind");
    t.admission_relation = jt.value("admission_relation", "/" + t.name);
    for (const json& jc : jt.value("columns", json::array())) {
      ColumnSpec c;
      c.column = jc.at("column");
      c.relation = jc.value("relation", default_relation(c.column));
      c.attach_to = jc.value("attach_to", "");
      c.entity = jc.value("entity", false);
      t.columns.push_back(std::move(c));
    }
    schema.tables.push_back(std::move(t));
  }
  return schema;
}

void ConversionSchema::save(const std::string& path) const {
  json j;
  j["admission_label_column"] = admission_label_column;
  if (!admissions_table.empty()) {
    j["admissions"] = {{"table", admissions_table},
                       {"key_column", admissions_key_column}};
  }
  j["tables"] = json::array();
  for (const TableSchema& t : tables) {
    json jt;
    jt["name"] = t.name;
    jt["admission_column"] = t.admission_column;
    jt["primary_key"] = t.primary_key;
    jt["entity_kind"] = t.entity_kind;
    jt["admission_relation"] = t.admission_relation;
    jt["columns"] = json::array();
    for (const ColumnSpec& c : t.columns) {
      json jc;
      jc["column"] = c.column;
      jc["relation"] = c.relation;
      if (!c.attach_to.empty()) jc["attach_to"] = c.attach_to;
      if (c.entity) jc["entity"] = true;
      jt["columns"].push_back(std::move(jc));
    }
    j["tables"].push_back(std::move(jt));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write schema: " + path);
  out << j.dump(2) << "\n";
}

std::vector<std::string> ConversionSchema::relation_names() const {
  std::vector<std::string> names;
  auto push = [&](const std::string& n) {
    if (std::find(names.begin(), names.end(), n) == names.end()) {
      names.push_back(n);
    }
  };
  for (const TableSchema& t : tables) {
    push(t.admission_relation);
    for (const ColumnSpec& c : t.columns) push(c.relation);
  }
  return names;
}

// ---------------------------------------------------------------------------
// Node / graph basics

bool is_abstract(NodeKind kind) {
  return kind == NodeKind::AbstractAdm || kind == NodeKind::AbstractDx ||
         kind == NodeKind::AbstractPx || kind == NodeKind::AbstractRx;
}

std::string node_kind_name(NodeKind kind) {
  switch (kind) {
    case NodeKind::AbstractAdm: return "ADM";
    case NodeKind::AbstractDx: return "DX";
    case NodeKind::AbstractPx: return "PX";
    case NodeKind::AbstractRx: return "RX";
    case NodeKind::Literal: return "literal";
    case NodeKind::Special: return "special";
  }
  return "literal";
}

NodeKind node_kind_from_name(const std::string& name) {
  if (name == "ADM") return NodeKind::AbstractAdm;
  if (name == "DX") return NodeKind::AbstractDx;
  if (name == "PX") return NodeKind::AbstractPx;
  if (name == "RX") return NodeKind::AbstractRx;
  if (name == "literal") return NodeKind::Literal;
  if (name == "special") return NodeKind::Special;
  throw std::runtime_error("unknown node kind: " + name);
}

std::optional<int64_t> EhrGraph::edge_relation(int64_t a, int64_t b) const {
  for (const Edge& e : edges) {
    if ((e.src == a && e.dst == b) || (e.src == b && e.dst == a)) {
      return e.relation;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Vocabularies

RelationVocabulary::RelationVocabulary(std::vector<std::string> names) {
  names_ = std::move(names);
  names_.push_back(kNotConnected);
  for (size_t i = 0; i < names_.size(); ++i) {
    ids_[names_[i]] = static_cast<int64_t>(i);
  }
  if (ids_.size() != names_.size()) {
    throw std::invalid_argument("relation vocabulary: duplicate names");
  }
}

int64_t RelationVocabulary::id_of(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) {
    throw std::invalid_argument("unknown relation: " + name);
  }
  return it->second;
}

void RelationVocabulary::save(const std::string& path) const {
  json j = json::array();
  for (const std::string& n : names_) j.push_back(n);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write relations: " + path);
  out << j.dump(2) << "\n";
}

RelationVocabulary RelationVocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read relations: " + path);
  json j = json::parse(in);
  std::vector<std::string> names = j.get<std::vector<std::string>>();
  if (names.empty() || names.back() != kNotConnected) {
    throw std::runtime_error("relations file missing Not Connected: " + path);
  }
  names.pop_back();
  return RelationVocabulary(std::move(names));
}

namespace {
const char* kGraphReserved[] = {"[ADM]",    "[DX]",  "[PX]",  "[RX]",
                                "[SUM]", "[MASK]_G", "[PAD]_G"};
}

GraphVocabulary::GraphVocabulary(std::vector<std::string> sorted_surfaces) {
  surfaces_ = std::move(sorted_surfaces);
  for (size_t i = 0; i < surfaces_.size(); ++i) {
    ids_[surfaces_[i]] = kReservedCount + static_cast<int64_t>(i);
  }
  if (ids_.size() != surfaces_.size()) {
    throw std::invalid_argument("graph vocabulary: duplicate surfaces");
  }
}

int64_t GraphVocabulary::id_of_surface(const std::string& surface) const {
  auto it = ids_.find(surface);
  return it == ids_.end() ? -1 : it->second;
}

int64_t GraphVocabulary::id_for_node(const Node& node) const {
  switch (node.kind) {
    case NodeKind::AbstractAdm: return kAdm;
    case NodeKind::AbstractDx: return kDx;
    case NodeKind::AbstractPx: return kPx;
    case NodeKind::AbstractRx: return kRx;
    case NodeKind::Special:
      throw std::invalid_argument("special nodes are not graph content");
    case NodeKind::Literal: {
      int64_t id = id_of_surface(node.surface);
      if (id < 0) {
        throw std::invalid_argument("unknown literal surface: " + node.surface);
      }
      return id;
    }
  }
  throw std::invalid_argument("bad node kind");
}

const std::string& GraphVocabulary::surface(int64_t id) const {
  if (id < kReservedCount || id >= size()) {
    throw std::invalid_argument("not a literal id: " + std::to_string(id));
  }
  return surfaces_[id - kReservedCount];
}

void GraphVocabulary::save(const std::string& path) const {
  json j;
  j["reserved"] = json::array();
  for (const char* r : kGraphReserved) j["reserved"].push_back(r);
  j["literals"] = surfaces_;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write graph vocabulary: " + path);
  out << j.dump(2) << "\n";
}

GraphVocabulary GraphVocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read graph vocabulary: " + path);
  json j = json::parse(in);
  return GraphVocabulary(j.at("literals").get<std::vector<std::string>>());
}

// ---------------------------------------------------------------------------
// Conversion

namespace {

NodeKind entity_kind_from_name(const std::string& name,
                               const std::string& table) {
  if (name == "DX") return NodeKind::AbstractDx;
  if (name == "PX") return NodeKind::AbstractPx;
  if (name == "RX") return NodeKind::AbstractRx;
  throw std::runtime_error("table " + table + ": entity_kind must be DX, PX or RX");
}

struct GraphBuilder {
  EhrGraph graph;
  std::vector<std::vector<int64_t>> children;  // insertion order per node

  int64_t add_node(Node node) {
    graph.nodes.push_back(std::move(node));
    children.emplace_back();
    return graph.node_count() - 1;
  }
  void add_edge(int64_t src, int64_t dst, int64_t relation) {
    graph.edges.push_back({src, dst, relation});
    children[src].push_back(dst);
  }
};

}  // namespace

ConversionResult convert_tables(const TableSet& tables,
                                const ConversionSchema& schema) {
  ConversionResult result;
  result.relations = RelationVocabulary(schema.relation_names());

  // admission universe
  std::set<std::string> admission_keys;
  bool closed_universe = !schema.admissions_table.empty();
  if (closed_universe) {
    const Table& adm = tables.get(schema.admissions_table);
    int key_col = adm.column_index(schema.admissions_key_column);
    if (key_col < 0) {
      throw std::runtime_error("admissions table lacks key column " +
                               schema.admissions_key_column);
    }
    for (size_t r = 0; r < adm.rows.size(); ++r) {
      if (!admission_keys.insert(adm.cell(r, key_col)).second) {
        throw std::runtime_error("duplicate admission key " +
                                 adm.cell(r, key_col));
      }
    }
  }

  // validate tables, collect row indices per admission, check key uniqueness
  struct TableView {
    const Table* table;
    const TableSchema* schema;
    int adm_col;
    int pk_col;
    std::vector<int> value_cols;
    std::map<std::string, int64_t> attachable;  // column -> index into columns
  };
  std::vector<TableView> views;
  std::set<std::string> seen_pks;
  for (const TableSchema& ts : schema.tables) {
    TableView v;
    v.table = &tables.get(ts.name);
    v.schema = &ts;
    v.adm_col = v.table->column_index(ts.admission_column);
    v.pk_col = v.table->column_index(ts.primary_key);
    if (v.adm_col < 0 || v.pk_col < 0) {
      throw std::runtime_error("table " + ts.name + ": missing key column " +
                               (v.adm_col < 0 ? ts.admission_column
                                              : ts.primary_key));
    }
    for (size_t ci = 0; ci < ts.columns.size(); ++ci) {
      const ColumnSpec& c = ts.columns[ci];
      int col = v.table->column_index(c.column);
      if (col < 0) {
        throw std::runtime_error("table " + ts.name + ": missing column " +
                                 c.column);
      }
      v.value_cols.push_back(col);
      if (!c.attach_to.empty()) {
        bool ok = false;
        for (size_t cj = 0; cj < ci; ++cj) {
          ok = ok || (ts.columns[cj].column == c.attach_to &&
                      ts.columns[cj].entity);
        }
        if (!ok) {
          throw std::runtime_error("table " + ts.name + ": column " + c.column +
                                   " attaches to undeclared entity column " +
                                   c.attach_to);
        }
      }
    }
    for (size_t r = 0; r < v.table->rows.size(); ++r) {
      const std::string pk = ts.primary_key + "/" + v.table->cell(r, v.pk_col);
      if (!seen_pks.insert(pk).second) {
        throw std::runtime_error("table " + ts.name + ": duplicate primary key " +
                                 v.table->cell(r, v.pk_col));
      }
      const std::string& adm = v.table->cell(r, v.adm_col);
      if (closed_universe && !admission_keys.count(adm)) {
        throw std::runtime_error("table " + ts.name + ": row " +
                                 std::to_string(r + 1) +
                                 " references unknown admission " + adm);
      }
      admission_keys.insert(adm);
    }
    views.push_back(std::move(v));
  }

  // one graph per admission, sorted by key
  for (const std::string& adm_key : admission_keys) {
    GraphBuilder b;
    b.graph.admission_key = adm_key;
    Node root;
    root.kind = NodeKind::AbstractAdm;
    root.label = schema.admission_label_column + "/" + adm_key;
    int64_t root_id = b.add_node(std::move(root));

    for (const TableView& v : views) {
      const TableSchema& ts = *v.schema;
      NodeKind row_kind = entity_kind_from_name(ts.entity_kind, ts.name);
      for (size_t r = 0; r < v.table->rows.size(); ++r) {
        if (v.table->cell(r, v.adm_col) != adm_key) continue;
        Node row_node;
        row_node.kind = row_kind;
        row_node.label = ts.primary_key + "/" + v.table->cell(r, v.pk_col);
        int64_t row_id = b.add_node(std::move(row_node));
        b.add_edge(root_id, row_id,
                   result.relations.id_of(ts.admission_relation));
        result.triples.push_back({b.graph.nodes[root_id].label,
                                  ts.admission_relation,
                                  b.graph.nodes[row_id].label});

        std::map<std::string, int64_t> entity_nodes;  // column -> node index
        for (size_t ci = 0; ci < ts.columns.size(); ++ci) {
          const ColumnSpec& c = ts.columns[ci];
          const std::string& value = v.table->cell(r, v.value_cols[ci]);
          if (value.empty()) continue;  // null cell
          int64_t parent = row_id;
          if (!c.attach_to.empty()) {
            auto it = entity_nodes.find(c.attach_to);
            if (it == entity_nodes.end()) continue;  // its entity cell was null
            parent = it->second;
          }
          Node lit;
          lit.kind = NodeKind::Literal;
          lit.surface = value;
          lit.literal_type = c.relation;
          lit.label = c.entity ? c.column + "/" + value : value;
          int64_t lit_id = b.add_node(std::move(lit));
          b.add_edge(parent, lit_id, result.relations.id_of(c.relation));
          result.triples.push_back({b.graph.nodes[parent].label, c.relation,
                                    b.graph.nodes[lit_id].label});
          if (c.entity) entity_nodes[c.column] = lit_id;
        }
      }
    }
    result.graphs.push_back(bfs_reorder(b.graph));
  }
  return result;
}

// ---------------------------------------------------------------------------
// BFS

std::vector<int64_t> bfs_serialize(const EhrGraph& graph) {
  int64_t n = graph.node_count();
  if (n == 0) throw std::invalid_argument("bfs_serialize: empty graph");
  int64_t root = -1;
  for (int64_t i = 0; i < n; ++i) {
    if (graph.nodes[i].kind == NodeKind::AbstractAdm) {
      root = i;
      break;
    }
  }
  if (root < 0) throw std::invalid_argument("bfs_serialize: no ADM root");

  // children in edge insertion order, either direction
  std::vector<std::vector<int64_t>> adj(n);
  for (const Edge& e : graph.edges) {
    adj[e.src].push_back(e.dst);
    adj[e.dst].push_back(e.src);
  }
  std::vector<int64_t> order(n, -1);  // node -> bfs rank
  std::deque<int64_t> queue{root};
  order[root] = 0;
  int64_t rank = 1;
  while (!queue.empty()) {
    int64_t cur = queue.front();
    queue.pop_front();
    for (int64_t next : adj[cur]) {
      if (order[next] >= 0) continue;
      order[next] = rank++;
      queue.push_back(next);
    }
  }
  for (int64_t i = 0; i < n; ++i) {
    if (order[i] < 0) {
      throw std::invalid_argument("bfs_serialize: node " + std::to_string(i) +
                                  " (" + graph.nodes[i].label +
                                  ") is disconnected");
    }
  }
  return order;
}

EhrGraph bfs_reorder(const EhrGraph& graph) {
  std::vector<int64_t> order = bfs_serialize(graph);
  EhrGraph out;
  out.admission_key = graph.admission_key;
  out.nodes.resize(graph.nodes.size());
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    out.nodes[order[i]] = graph.nodes[i];
  }
  out.edges.reserve(graph.edges.size());
  for (const Edge& e : graph.edges) {
    out.edges.push_back({order[e.src], order[e.dst], e.relation});
  }
  std::sort(out.edges.begin(), out.edges.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.src, a.dst) < std::tie(b.src, b.dst);
  });
  return out;
}

// ---------------------------------------------------------------------------

Tensor build_adjacency_mask(const EhrGraph& graph, int64_t seq_len,
                            double mask_value) {
  int64_t n = graph.node_count();
  if (seq_len < n) {
    throw std::invalid_argument("adjacency mask: seq_len " +
                                std::to_string(seq_len) + " < node count " +
                                std::to_string(n));
  }
  std::vector<double> m(seq_len * seq_len, mask_value);
  for (int64_t i = 0; i < n; ++i) m[i * seq_len + i] = 0.0;
  for (const Edge& e : graph.edges) {
    m[e.src * seq_len + e.dst] = 0.0;
    m[e.dst * seq_len + e.src] = 0.0;
  }
  return Tensor::from_values({seq_len, seq_len}, std::move(m));
}

bool filter_oversize(const EhrGraph& graph, int64_t cap) {
  if (cap <= 0) throw std::invalid_argument("filter_oversize: cap must be positive");
  return graph.node_count() <= cap;
}

GraphVocabulary build_graph_vocab(const std::vector<EhrGraph>& graphs) {
  std::set<std::string> surfaces;
  for (const EhrGraph& g : graphs) {
    for (const Node& node : g.nodes) {
      if (node.kind == NodeKind::Literal) surfaces.insert(node.surface);
    }
  }
  return GraphVocabulary(
      std::vector<std::string>(surfaces.begin(), surfaces.end()));
}

// ---------------------------------------------------------------------------

EncodedGraph encode_graph(const EhrGraph& graph,
                          const SubwordVocabulary& text_vocab,
                          const GraphVocabulary& graph_vocab) {
  EncodedGraph enc;
  int64_t n = graph.node_count();
  enc.node_ids.reserve(n);
  enc.positions.reserve(n);
  enc.descriptions.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    const Node& node = graph.nodes[i];
    enc.node_ids.push_back(graph_vocab.id_for_node(node));
    enc.positions.push_back(i);
    enc.is_literal.push_back(node.kind == NodeKind::Literal);
    if (node.kind == NodeKind::Literal) {
      enc.descriptions[i] = tokenize(node.surface, text_vocab);
      enc.descriptions_concat.insert(enc.descriptions_concat.end(),
                                     enc.descriptions[i].begin(),
                                     enc.descriptions[i].end());
    }
  }
  return enc;
}

// ---------------------------------------------------------------------------
// JSONL

void write_graphs_jsonl(const std::vector<EhrGraph>& graphs,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write graphs: " + path);
  for (const EhrGraph& g : graphs) {
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
    out << j.dump() << "\n";
  }
}

std::vector<EhrGraph> read_graphs_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read graphs: " + path);
  std::vector<EhrGraph> graphs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
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
    graphs.push_back(std::move(g));
  }
  return graphs;
}

}  // namespace graphtext
