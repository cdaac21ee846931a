#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphtext/tensor.hpp"
#include "graphtext/text.hpp"

namespace graphtext {

// ---------------------------------------------------------------------------
// Column-oriented tables (CSV with a header row, RFC 4180 quoting).

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column_index(const std::string& column) const;  // -1 when absent
  const std::string& cell(size_t row, int col) const { return rows[row][col]; }
};

Table read_csv(const std::string& path, const std::string& name);
void write_csv(const Table& table, const std::string& path);

struct TableSet {
  std::map<std::string, Table> tables;

  const Table& get(const std::string& name) const;
  void add(Table table) { tables[table.name] = std::move(table); }
};

// ---------------------------------------------------------------------------
// Conversion schema: which columns are keys, which are values, and the
// relation each link carries.

struct ColumnSpec {
  std::string column;
  std::string relation;   // defaults to "/" + lowercased column name
  std::string attach_to;  // value column this hangs off; empty = primary key
  bool entity = false;    // entities render as COLUMN/value in triples
};

struct TableSchema {
  std::string name;
  std::string admission_column;
  std::string primary_key;
  std::string entity_kind;  // DX, PX or RX placeholder for the row entity
  std::string admission_relation;  // defaults to "/" + table name
  std::vector<ColumnSpec> columns;
};

struct ConversionSchema {
  std::string admission_label_column = "ADM_ID";
  // Optional admissions table. When set it defines the admission universe
  // (so childless admissions still yield a one-node graph) and child rows
  // whose admission key is absent from it are dangling-key errors.
  std::string admissions_table;
  std::string admissions_key_column;
  std::vector<TableSchema> tables;

  static ConversionSchema load(const std::string& path);
  void save(const std::string& path) const;
  // Relation names in declaration order, without the Not Connected label.
  std::vector<std::string> relation_names() const;
};

// ---------------------------------------------------------------------------
// Graphs.

enum class NodeKind { AbstractAdm, AbstractDx, AbstractPx, AbstractRx, Literal, Special };

bool is_abstract(NodeKind kind);
std::string node_kind_name(NodeKind kind);
NodeKind node_kind_from_name(const std::string& name);

struct Node {
  NodeKind kind = NodeKind::Literal;
  std::string surface;       // literal value; empty for abstract nodes
  std::string literal_type;  // relation tag; empty for abstract nodes
  std::string label;         // triple rendering, e.g. "ADM_ID/198041"
};

struct Edge {
  int64_t src = 0;  // node indices; direction is relational provenance only
  int64_t dst = 0;
  int64_t relation = 0;
};

// Per-admission graph. After conversion the node order is the BFS
// serialization order and node index == position id.
struct EhrGraph {
  std::string admission_key;
  std::vector<Node> nodes;
  std::vector<Edge> edges;

  int64_t node_count() const { return static_cast<int64_t>(nodes.size()); }
  // Undirected lookup; relation id of the connecting edge if one exists.
  std::optional<int64_t> edge_relation(int64_t a, int64_t b) const;
};

struct Triple {
  std::string subject;
  std::string relation;
  std::string object;
  bool operator==(const Triple&) const = default;
};

// ---------------------------------------------------------------------------
// Relation and graph vocabularies.

class RelationVocabulary {
 public:
  RelationVocabulary() = default;
  // Appends the reserved Not Connected label after the given names.
  explicit RelationVocabulary(std::vector<std::string> names);

  int64_t size() const { return static_cast<int64_t>(names_.size()); }
  int64_t not_connected_id() const { return size() - 1; }
  int64_t id_of(const std::string& name) const;  // throws on unknown
  const std::string& name(int64_t id) const { return names_.at(id); }

  void save(const std::string& path) const;
  static RelationVocabulary load(const std::string& path);

  static constexpr const char* kNotConnected = "Not Connected";

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int64_t> ids_;
};

class GraphVocabulary {
 public:
  // Reserved ids, fixed at the front.
  static constexpr int64_t kAdm = 0;
  static constexpr int64_t kDx = 1;
  static constexpr int64_t kPx = 2;
  static constexpr int64_t kRx = 3;
  static constexpr int64_t kSum = 4;
  static constexpr int64_t kMaskG = 5;
  static constexpr int64_t kPadG = 6;
  static constexpr int64_t kReservedCount = 7;

  GraphVocabulary() = default;
  explicit GraphVocabulary(std::vector<std::string> sorted_surfaces);

  int64_t size() const {
    return kReservedCount + static_cast<int64_t>(surfaces_.size());
  }
  int64_t literal_count() const {
    return static_cast<int64_t>(surfaces_.size());
  }
  int64_t id_of_surface(const std::string& surface) const;  // -1 when absent
  int64_t id_for_node(const Node& node) const;              // throws on unknown
  const std::string& surface(int64_t id) const;  // id must be a literal id
  // Literal index = id - kReservedCount, the masked-literal label space.
  int64_t literal_index(int64_t id) const { return id - kReservedCount; }

  void save(const std::string& path) const;
  static GraphVocabulary load(const std::string& path);

 private:
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, int64_t> ids_;
};

// ---------------------------------------------------------------------------
// Operations.

struct ConversionResult {
  std::vector<EhrGraph> graphs;  // sorted by admission key
  std::vector<Triple> triples;   // provenance-directed export
  RelationVocabulary relations;
};

// One graph per admission: row entities become abstract nodes, value cells
// become literal children under their declared relation. Throws on duplicate
// primary keys and dangling admission keys.
ConversionResult convert_tables(const TableSet& tables,
                                const ConversionSchema& schema);

// BFS order from the ADM root, children in insertion order; returns the node
// permutation old index -> bfs rank. Throws when a node is unreachable.
std::vector<int64_t> bfs_serialize(const EhrGraph& graph);

// Reorders nodes (and rewrites edges) so node index == BFS position.
EhrGraph bfs_reorder(const EhrGraph& graph);

// Additive attention mask: 0 on the diagonal and across edges, the negative
// constant elsewhere; rows/columns at padding positions fully negative.
Tensor build_adjacency_mask(const EhrGraph& graph, int64_t seq_len,
                            double mask_value = -1e9);

constexpr int64_t kDefaultNodeCap = 768;

// Keep/drop decision for oversize graphs.
bool filter_oversize(const EhrGraph& graph, int64_t cap = kDefaultNodeCap);

// Distinct literal surface forms, sorted, behind the reserved ids.
GraphVocabulary build_graph_vocab(const std::vector<EhrGraph>& graphs);

// ---------------------------------------------------------------------------
// Model-facing encoding.

struct EncodedGraph {
  std::vector<int64_t> node_ids;   // graph-vocabulary ids, BFS order
  std::vector<int64_t> positions;  // 0..N_v-1
  std::vector<bool> is_literal;
  std::vector<std::vector<int64_t>> descriptions;  // token ids per node
  std::vector<int64_t> descriptions_concat;

  int64_t length() const { return static_cast<int64_t>(node_ids.size()); }
};

EncodedGraph encode_graph(const EhrGraph& graph, const SubwordVocabulary& text_vocab,
                          const GraphVocabulary& graph_vocab);

// ---------------------------------------------------------------------------
// Line-delimited graph dataset files.

void write_graphs_jsonl(const std::vector<EhrGraph>& graphs,
                        const std::string& path);
std::vector<EhrGraph> read_graphs_jsonl(const std::string& path);

}  // namespace graphtext
