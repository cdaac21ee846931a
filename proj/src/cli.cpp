#include "graphtext/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "graphtext/dataset.hpp"
#include "graphtext/downstream.hpp"
#include "graphtext/ehr_graph.hpp"
#include "graphtext/metrics.hpp"
#include "graphtext/model.hpp"
#include "graphtext/pretrain.hpp"
#include "graphtext/synth.hpp"

namespace graphtext {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Manifest

void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::vector<std::string>& args, uint64_t seed,
                    const json& config, const json& metrics,
                    const json& outputs) {
  json j;
  j["command"] = command;
  j["args"] = args;
  j["seed"] = seed;
  if (!config.is_null()) j["config"] = config;
  if (!metrics.is_null()) j["metrics"] = metrics;
  if (!outputs.is_null()) j["outputs"] = outputs;
  std::ofstream out(out_dir + "/manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + out_dir);
  out << j.dump(2) << "\n";
}

json dataset_meta(const std::string& data_dir) {
  std::ifstream in(data_dir + "/meta.json");
  if (!in) return json::object();
  return json::parse(in);
}

// ---------------------------------------------------------------------------
// Model config plumbing

struct ModelFlags {
  int64_t hidden = 128, heads = 4, text_layers = 2, graph_layers = 2,
          cross_blocks = 4, ff_inner = 512;
  double dropout = 0.1;
  bool no_summary = false, init_embedding = false, no_adjacency = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--hidden", hidden, "Hidden size");
    cmd->add_option("--heads", heads, "Attention heads");
    cmd->add_option("--text-layers", text_layers, "Text encoder layers");
    cmd->add_option("--graph-layers", graph_layers, "Graph encoder layers");
    cmd->add_option("--cross-blocks", cross_blocks, "Cross-modal blocks");
    cmd->add_option("--ff-inner", ff_inner, "Feed-forward inner size");
    cmd->add_option("--dropout", dropout, "Dropout probability");
    cmd->add_flag("--no-summary", no_summary, "Disable the summary network");
    cmd->add_flag("--init-embedding", init_embedding,
                  "Literal embeddings from description token means");
    cmd->add_flag("--no-adjacency", no_adjacency,
                  "Replace the structure mask with the padding mask");
  }

  ModelConfig build(const DatasetBundle& bundle) const {
    ModelConfig c;
    c.hidden = hidden;
    c.heads = heads;
    c.text_layers = text_layers;
    c.graph_layers = graph_layers;
    c.cross_blocks = cross_blocks;
    c.ff_inner = ff_inner;
    c.dropout = dropout;
    c.use_summary = !no_summary;
    c.use_init_embedding = init_embedding;
    c.use_adjacency = !no_adjacency;
    c.text_vocab_size = bundle.text_vocab.size();
    c.graph_vocab_size = bundle.graph_vocab.size();
    c.relation_count = bundle.relations.size();
    return c;
  }
};

Model load_model(const std::string& checkpoint_path) {
  ModelConfig config = checkpoint_config(checkpoint_path);
  Model model(config, 0);
  load_checkpoint(model, checkpoint_path);
  return model;
}

const PairDataset& pick_split(const DatasetBundle& bundle,
                              const std::string& split) {
  if (split == "train") return bundle.train;
  if (split == "valid") return bundle.valid;
  if (split == "test") return bundle.test;
  throw std::invalid_argument("unknown split: " + split);
}

LiteralPools pools_for(const DatasetBundle& bundle) {
  std::vector<const EhrGraph*> graphs;
  for (const PairDataset* ds : {&bundle.train, &bundle.valid, &bundle.test}) {
    for (const PairRecord& r : ds->records) graphs.push_back(&r.graph);
  }
  return build_literal_pools(graphs);
}

// ---------------------------------------------------------------------------
// synth

int run_synth(const std::vector<std::string>& args, int64_t n, uint64_t seed,
              std::string out_dir, std::string style, double noise,
              std::string schema_path, double f_train, double f_valid,
              double f_test) {
  fs::create_directories(out_dir);
  SynthSchema schema;
  if (!schema_path.empty()) {
    schema = SynthSchema::load(schema_path);
  } else {
    schema.style = style;
    schema.noise_rate = noise;
  }
  schema.ensure_default_synonyms();

  SynthDatasetResult result =
      make_dataset(schema, n, seed, {f_train, f_valid, f_test});

  fs::create_directories(out_dir + "/tables");
  for (const auto& [name, table] : result.tables.tables.tables) {
    write_csv(table, out_dir + "/tables/" + name + ".csv");
  }
  schema.save(out_dir + "/synth_schema.json");
  result.conversion.save(out_dir + "/conversion_schema.json");
  std::string data_dir = out_dir + "/dataset";
  result.bundle.save(data_dir);
  {
    json meta;
    meta["style"] = schema.style;
    meta["seed"] = seed;
    meta["n"] = n;
    meta["noise_rate"] = schema.noise_rate;
    std::ofstream mo(data_dir + "/meta.json");
    mo << meta.dump(2) << "\n";
  }

  json metrics;
  metrics["pairs_train"] = result.bundle.train.size();
  metrics["pairs_valid"] = result.bundle.valid.size();
  metrics["pairs_test"] = result.bundle.test.size();
  metrics["dropped_short_text"] = result.dropped_short_text;
  metrics["dropped_oversize"] = result.dropped_oversize;
  json outputs;
  outputs["dataset"] = data_dir;
  outputs["tables"] = out_dir + "/tables";
  write_manifest(out_dir, "synth", args, seed, json::object(), metrics, outputs);
  return 0;
}

// ---------------------------------------------------------------------------
// convert

int run_convert(const std::vector<std::string>& args, std::string tables_dir,
                std::string schema_path, std::string out_dir, int64_t cap,
                uint64_t seed) {
  fs::create_directories(out_dir);
  ConversionSchema schema = ConversionSchema::load(schema_path);
  TableSet tables;
  if (!schema.admissions_table.empty()) {
    tables.add(read_csv(tables_dir + "/" + schema.admissions_table + ".csv",
                        schema.admissions_table));
  }
  for (const TableSchema& ts : schema.tables) {
    tables.add(read_csv(tables_dir + "/" + ts.name + ".csv", ts.name));
  }
  ConversionResult result = convert_tables(tables, schema);

  int64_t kept = 0, dropped = 0;
  std::vector<EhrGraph> kept_graphs;
  for (const EhrGraph& g : result.graphs) {
    if (filter_oversize(g, cap)) {
      kept_graphs.push_back(g);
      ++kept;
    } else {
      ++dropped;
    }
  }
  write_graphs_jsonl(kept_graphs, out_dir + "/graphs.jsonl");
  result.relations.save(out_dir + "/relations.json");
  {
    std::ofstream triples(out_dir + "/triples.tsv");
    for (const Triple& t : result.triples) {
      triples << t.subject << "\t" << t.relation << "\t" << t.object << "\n";
    }
  }

  json metrics;
  metrics["graphs"] = kept;
  metrics["dropped_oversize"] = dropped;
  metrics["triples"] = result.triples.size();
  metrics["relations"] = result.relations.size();
  json outputs;
  outputs["graphs"] = out_dir + "/graphs.jsonl";
  outputs["relations"] = out_dir + "/relations.json";
  outputs["triples"] = out_dir + "/triples.tsv";
  write_manifest(out_dir, "convert", args, seed, json::object(), metrics,
                 outputs);
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

int run_pretrain(const std::vector<std::string>& args, std::string data_dir,
                 std::string out_dir, std::string tasks_csv, int64_t epochs,
                 int64_t batch, double lr, uint64_t seed,
                 const ModelFlags& flags, double mlm_prob, double mlp_prob,
                 std::string init_from) {
  fs::create_directories(out_dir);
  DatasetBundle bundle = DatasetBundle::load(data_dir);
  ModelConfig config = flags.build(bundle);

  TaskSet tasks;
  if (tasks_csv.empty()) {
    // relation classification is excluded for the Rx-style dataset
    json meta = dataset_meta(data_dir);
    tasks = meta.value("style", "dxpx") == "rx" ? TaskSet::parse("mlm,mlp,ap")
                                                : TaskSet::parse("mlm,mlp,rc,ap");
  } else {
    tasks = TaskSet::parse(tasks_csv);
  }

  Model model(config, seed);
  if (!init_from.empty()) {
    load_checkpoint(model, init_from, /*allow_partial=*/true);
  }

  PretrainRunConfig run;
  run.epochs = epochs;
  run.batch_size = batch;
  run.learning_rate = lr;
  run.seed = seed;
  run.tasks = tasks;
  run.options.mlm_p = mlm_prob;
  run.options.mlp_p = mlp_prob;
  run.log_path = out_dir + "/train_log.jsonl";
  PretrainRunStats stats = run_pretraining(model, bundle.train,
                                           bundle.text_vocab, bundle.graph_vocab,
                                           bundle.relations, run);
  save_checkpoint(model, out_dir + "/model.ckpt");

  json metrics;
  metrics["epochs_run"] = stats.epochs_run;
  metrics["steps"] = stats.steps;
  metrics["first_epoch_mlm"] = stats.first_epoch_mlm;
  metrics["last_epoch_mlm"] = stats.last_epoch_mlm;
  metrics["last_epoch_total"] = stats.last_epoch_total;
  metrics["last_epoch_ap_accuracy"] = stats.last_epoch_ap_accuracy;
  json config_json = json::parse(config.to_json());
  config_json["tasks"] = tasks.to_string();
  json outputs;
  outputs["checkpoint"] = out_dir + "/model.ckpt";
  outputs["log"] = out_dir + "/train_log.jsonl";
  write_manifest(out_dir, "pretrain", args, seed, config_json, metrics, outputs);
  return 0;
}

// ---------------------------------------------------------------------------
// finetune

int run_finetune(const std::vector<std::string>& args, std::string task,
                 std::string data_dir, std::string checkpoint,
                 std::string out_dir, int64_t epochs, double lr, int64_t batch,
                 uint64_t seed, double corruption, std::string style_flag,
                 double sep_mask_prob) {
  fs::create_directories(out_dir);
  DatasetBundle bundle = DatasetBundle::load(data_dir);
  Model model = load_model(checkpoint);

  // task defaults when the caller did not override
  if (epochs <= 0) epochs = task == "generation" ? 30 : 20;
  if (lr <= 0) {
    if (task == "retrieval" || task == "error") lr = 1e-5;
    else if (task == "generation") lr = 3e-5;
    else lr = 1e-4;
  }

  FinetuneConfig config;
  config.epochs = epochs;
  config.learning_rate = lr;
  config.batch_size = batch;
  config.seed = seed;
  config.log_path = out_dir + "/train_log.jsonl";

  std::string style = style_flag;
  if (style.empty()) style = dataset_meta(data_dir).value("style", "dxpx");

  double final_loss = 0.0;
  if (task == "retrieval") {
    final_loss = finetune_retrieval(model, bundle.train, bundle.text_vocab,
                                    bundle.graph_vocab, config);
  } else if (task == "mortality" || task == "readmission") {
    TemporalTarget target = task == "mortality" ? TemporalTarget::Mortality
                                                : TemporalTarget::Readmission;
    final_loss = finetune_temporal(model, bundle.train, bundle.text_vocab,
                                   bundle.graph_vocab, target, config);
  } else if (task == "error") {
    final_loss = finetune_error_detection(model, bundle.train, bundle.text_vocab,
                                          bundle.graph_vocab, pools_for(bundle),
                                          corruption, config);
  } else if (task == "generation") {
    GenerationConfig gen = GenerationConfig::for_style(style);
    gen.sep_mask_prob = sep_mask_prob;
    final_loss = finetune_generation(model, bundle.train, bundle.text_vocab,
                                     bundle.graph_vocab, gen, config);
  } else {
    throw std::invalid_argument("unknown finetune task: " + task);
  }
  save_checkpoint(model, out_dir + "/model.ckpt");

  json metrics;
  metrics["final_loss"] = final_loss;
  metrics["epochs"] = epochs;
  metrics["learning_rate"] = lr;
  json config_json = json::parse(model.config().to_json());
  config_json["task"] = task;
  json outputs;
  outputs["checkpoint"] = out_dir + "/model.ckpt";
  write_manifest(out_dir, "finetune", args, seed, config_json, metrics, outputs);
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

json evaluate_one(Model& model, const DatasetBundle& bundle,
                  const std::string& task, const std::string& split,
                  const std::string& direction, double corruption,
                  uint64_t seed, const std::string& style) {
  const PairDataset& data = pick_split(bundle, split);
  json metrics;
  if (task == "retrieval") {
    RetrievalDirection dir = direction == "graph"
                                 ? RetrievalDirection::GraphRetrieval
                                 : RetrievalDirection::TextRetrieval;
    RetrievalEval eval = evaluate_retrieval(model, data, dir, bundle.text_vocab,
                                            bundle.graph_vocab);
    metrics["mrr"] = eval.mrr;
    metrics["hits_at_10"] = eval.hits_at_10;
    metrics["queries"] = eval.ranks.size();
  } else if (task == "mortality" || task == "readmission") {
    TemporalTarget target = task == "mortality" ? TemporalTarget::Mortality
                                                : TemporalTarget::Readmission;
    TemporalEval eval = evaluate_temporal(model, data, target,
                                          bundle.text_vocab, bundle.graph_vocab);
    metrics["auprc"] = eval.auprc_value;
    metrics["samples"] = eval.labels.size();
  } else if (task == "error") {
    ErrorDetectionEval eval = evaluate_error_detection(
        model, data, pools_for(bundle), corruption, Rng::mix(seed, 0xc0bb),
        bundle.text_vocab, bundle.graph_vocab);
    metrics["f1"] = eval.f1_value;
    metrics["nodes"] = eval.labels.size();
  } else if (task == "generation") {
    GenerationConfig gen = GenerationConfig::for_style(style);
    GenerationEval eval = evaluate_generation(model, data, bundle.text_vocab,
                                              bundle.graph_vocab, gen, seed);
    metrics["rouge2"] = eval.rouge2;
    metrics["rougel"] = eval.rougel;
    metrics["samples"] = data.size();
  } else {
    throw std::invalid_argument("unknown evaluate task: " + task);
  }
  return metrics;
}

int run_evaluate(const std::vector<std::string>& args, std::string task,
                 std::string data_dir, std::vector<std::string> checkpoints,
                 std::string out_dir, std::string split, std::string direction,
                 double corruption, uint64_t seed, std::string style_flag) {
  fs::create_directories(out_dir);
  if (checkpoints.empty()) {
    throw std::invalid_argument("evaluate: at least one --checkpoint required");
  }
  DatasetBundle bundle = DatasetBundle::load(data_dir);
  std::string style = style_flag;
  if (style.empty()) style = dataset_meta(data_dir).value("style", "dxpx");

  json per_run = json::array();
  std::map<std::string, std::vector<double>> series;
  for (const std::string& ckpt : checkpoints) {
    Model model = load_model(ckpt);
    json metrics = evaluate_one(model, bundle, task, split, direction,
                                corruption, seed, style);
    per_run.push_back({{"checkpoint", ckpt}, {"metrics", metrics}});
    for (auto& [key, value] : metrics.items()) {
      if (value.is_number()) series[key].push_back(value.get<double>());
    }
  }

  json metrics;
  metrics["runs"] = per_run;
  if (checkpoints.size() > 1) {
    json agg;
    for (auto& [key, values] : series) {
      MeanStd ms = mean_std(values);
      agg[key] = {{"mean", ms.mean}, {"std", ms.std_dev}};
    }
    metrics["aggregate"] = agg;
  } else {
    metrics["values"] = per_run[0]["metrics"];
  }

  json config_json;
  config_json["task"] = task;
  config_json["split"] = split;
  write_manifest(out_dir, "evaluate", args, seed, config_json, metrics,
                 json::object());
  return 0;
}

// ---------------------------------------------------------------------------
// generate

int run_generate(const std::vector<std::string>& args, std::string data_dir,
                 std::string checkpoint, std::string out_dir,
                 std::string strategy, double top_p, int64_t max_len,
                 std::string split, uint64_t seed, int64_t limit,
                 std::string style_flag) {
  fs::create_directories(out_dir);
  DatasetBundle bundle = DatasetBundle::load(data_dir);
  Model model = load_model(checkpoint);
  std::string style = style_flag;
  if (style.empty()) style = dataset_meta(data_dir).value("style", "dxpx");

  GenerationConfig gen = GenerationConfig::for_style(style);
  if (strategy == "greedy") gen.strategy = GenerationConfig::Strategy::Greedy;
  else if (strategy == "top_p") gen.strategy = GenerationConfig::Strategy::TopP;
  else if (!strategy.empty()) {
    throw std::invalid_argument("unknown strategy: " + strategy);
  }
  if (top_p > 0) gen.top_p = top_p;
  if (max_len > 0) gen.max_length = max_len;

  const PairDataset& data = pick_split(bundle, split);
  int64_t n = limit > 0 ? std::min<int64_t>(limit, data.size()) : data.size();

  Rng root(seed);
  std::ofstream out(out_dir + "/generations.jsonl");
  if (!out) throw std::runtime_error("cannot write generations");
  double rg2_sum = 0, rgl_sum = 0;
  for (int64_t i = 0; i < n; ++i) {
    const PairRecord& rec = data.records[i];
    Rng rng = root.derive(0x6e9 + i);
    GeneratedText g = generate_note(model, rec.graph, bundle.text_vocab,
                                    bundle.graph_vocab, gen, rng);
    std::string candidate = detokenize(g.token_ids, bundle.text_vocab);
    std::string reference = detokenize(rec.text.token_ids, bundle.text_vocab);
    rg2_sum += rouge(split_words(candidate), split_words(reference),
                     RougeVariant::RG2);
    rgl_sum += rouge(split_words(candidate), split_words(reference),
                     RougeVariant::RGL);
    json j;
    j["admission_key"] = rec.admission_key;
    j["token_ids"] = g.token_ids;
    j["text"] = candidate;
    j["reference"] = reference;
    j["truncated"] = g.truncated;
    out << j.dump() << "\n";
  }

  json metrics;
  metrics["samples"] = n;
  metrics["rouge2"] = n > 0 ? rg2_sum / double(n) : 0.0;
  metrics["rougel"] = n > 0 ? rgl_sum / double(n) : 0.0;
  json outputs;
  outputs["generations"] = out_dir + "/generations.jsonl";
  write_manifest(out_dir, "generate", args, seed, json::object(), metrics,
                 outputs);
  return 0;
}

// ---------------------------------------------------------------------------
// export-attn

std::string heat_color(double v) {
  // white -> blue ramp
  int r = static_cast<int>(255 * (1.0 - v));
  int g = static_cast<int>(255 * (1.0 - 0.6 * v));
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02xff", r, g);
  return buf;
}

int run_export_attn(const std::vector<std::string>& args, std::string data_dir,
                    std::string checkpoint, std::string out_dir,
                    std::string admission, int64_t block, int64_t head,
                    std::string split, uint64_t seed) {
  fs::create_directories(out_dir);
  DatasetBundle bundle = DatasetBundle::load(data_dir);
  Model model = load_model(checkpoint);

  const PairDataset& data = pick_split(bundle, split);
  const PairRecord* record = nullptr;
  for (const PairRecord& r : data.records) {
    if (admission.empty() || r.admission_key == admission) {
      record = &r;
      break;
    }
  }
  if (!record) {
    throw std::invalid_argument("admission not found in split: " + admission);
  }
  if (block < 0 || block >= model.config().cross_blocks) {
    throw std::invalid_argument("block out of range: " + std::to_string(block));
  }
  if (head < 0 || head >= model.config().heads) {
    throw std::invalid_argument("head out of range: " + std::to_string(head));
  }

  model.set_training(false);
  PreparedPair pair = prepare_pair(record->graph, record->text,
                                   bundle.text_vocab, bundle.graph_vocab,
                                   model.config());
  ForwardOptions opts;
  opts.retain_attention = true;
  EncoderOutputs out = model.forward(pair.text, pair.graph, opts);

  std::string want = "cross." + std::to_string(block) + ".graph_queries_text";
  const AttentionMap* map = nullptr;
  for (const AttentionMap& m : out.attention) {
    if (m.name == want) map = &m;
  }
  if (!map) throw std::runtime_error("attention map not retained: " + want);

  // rows: graph-stream queries ([SUM] + nodes); columns: text keys
  int64_t rows = map->probs.dim(1);
  int64_t cols = map->probs.dim(2);
  std::vector<std::string> row_labels = {"[SUM]"};
  for (const Node& n : record->graph.nodes) {
    row_labels.push_back(n.kind == NodeKind::Literal ? n.surface
                                                     : node_kind_name(n.kind));
  }
  std::vector<std::string> col_labels;
  for (int64_t id : record->text.token_ids) {
    col_labels.push_back(bundle.text_vocab.piece(id));
  }

  json jm;
  jm["admission_key"] = record->admission_key;
  jm["block"] = block;
  jm["head"] = head;
  jm["rows"] = row_labels;
  jm["columns"] = col_labels;
  json values = json::array();
  for (int64_t i = 0; i < rows; ++i) {
    json row = json::array();
    for (int64_t j = 0; j < cols; ++j) {
      row.push_back(map->probs.at({head, i, j}));
    }
    values.push_back(std::move(row));
  }
  jm["weights"] = values;
  {
    std::ofstream jo(out_dir + "/attention.json");
    jo << jm.dump() << "\n";
  }

  // SVG heatmap
  {
    const int cell = 14, margin_left = 220, margin_top = 120;
    std::ofstream svg(out_dir + "/attention.svg");
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
        << margin_left + cols * cell + 10 << "\" height=\""
        << margin_top + rows * cell + 10 << "\" font-family=\"monospace\" "
        << "font-size=\"10\">\n";
    for (int64_t i = 0; i < rows; ++i) {
      svg << "<text x=\"" << margin_left - 6 << "\" y=\""
          << margin_top + i * cell + cell - 3
          << "\" text-anchor=\"end\">" << row_labels[i] << "</text>\n";
      for (int64_t j = 0; j < cols; ++j) {
        double v = map->probs.at({head, i, j});
        svg << "<rect x=\"" << margin_left + j * cell << "\" y=\""
            << margin_top + i * cell << "\" width=\"" << cell << "\" height=\""
            << cell << "\" fill=\"" << heat_color(v) << "\"/>\n";
      }
    }
    for (int64_t j = 0; j < cols; ++j) {
      svg << "<text x=\"" << margin_left + j * cell + cell / 2 << "\" y=\""
          << margin_top - 6 << "\" transform=\"rotate(-60 "
          << margin_left + j * cell + cell / 2 << " " << margin_top - 6
          << ")\">" << col_labels[j] << "</text>\n";
    }
    svg << "</svg>\n";
  }

  json metrics;
  metrics["rows"] = rows;
  metrics["columns"] = cols;
  json outputs;
  outputs["json"] = out_dir + "/attention.json";
  outputs["svg"] = out_dir + "/attention.svg";
  write_manifest(out_dir, "export-attn", args, seed, json::object(), metrics,
                 outputs);
  return 0;
}

int run_rerun(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot read manifest: " + manifest_path);
  json j = json::parse(in);
  std::vector<std::string> args = j.at("args").get<std::vector<std::string>>();
  return dispatch(args);
}

}  // namespace

// ---------------------------------------------------------------------------

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"graph-text multi-modal EHR representation learning"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic EHR dataset");
  int64_t n = 100;
  uint64_t seed = 1;
  std::string out_dir, style = "dxpx", schema_path;
  double noise = 0.0, f_train = 0.8, f_valid = 0.1, f_test = 0.1;
  synth->add_option("--n", n, "Number of admissions");
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--style", style, "dxpx or rx");
  synth->add_option("--noise", noise, "Paraphrase rate");
  synth->add_option("--schema", schema_path, "Synth schema file");
  synth->add_option("--train", f_train, "Train fraction");
  synth->add_option("--valid", f_valid, "Valid fraction");
  synth->add_option("--test", f_test, "Test fraction");

  // convert
  auto* convert = app.add_subcommand("convert", "Tables to knowledge graphs");
  std::string tables_dir, conv_schema, conv_out;
  int64_t cap = kDefaultNodeCap;
  uint64_t conv_seed = 1;
  convert->add_option("--tables", tables_dir, "Directory of CSV tables")->required();
  convert->add_option("--schema", conv_schema, "Conversion schema JSON")->required();
  convert->add_option("--out", conv_out, "Output directory")->required();
  convert->add_option("--cap", cap, "Node-count cap");
  convert->add_option("--seed", conv_seed, "Recorded seed");

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "Run the pre-training loop");
  std::string pt_data, pt_out, pt_tasks, pt_init;
  int64_t pt_epochs = 40, pt_batch = 16;
  double pt_lr = 1e-4, mlm_prob = 0.15, mlp_prob = 0.15;
  uint64_t pt_seed = 1;
  ModelFlags pt_flags;
  pretrain->add_option("--data", pt_data, "Dataset directory")->required();
  pretrain->add_option("--out", pt_out, "Output directory")->required();
  pretrain->add_option("--tasks", pt_tasks, "Comma list: mlm,mlp,rc,ap");
  pretrain->add_option("--epochs", pt_epochs, "Training epochs");
  pretrain->add_option("--batch", pt_batch, "Batch size");
  pretrain->add_option("--lr", pt_lr, "Learning rate");
  pretrain->add_option("--seed", pt_seed, "Random seed");
  pretrain->add_option("--mlm-prob", mlm_prob, "Text masking probability");
  pretrain->add_option("--mlp-prob", mlp_prob, "Literal masking probability");
  pretrain->add_option("--init-from", pt_init,
                       "Checkpoint for partial weight import");
  pt_flags.attach(pretrain);

  // finetune
  auto* finetune = app.add_subcommand("finetune", "Fine-tune on a downstream task");
  std::string ft_task, ft_data, ft_ckpt, ft_out, ft_style;
  int64_t ft_epochs = 0, ft_batch = 16;
  double ft_lr = 0.0, corruption = 0.25, sep_mask_prob = 0.5;
  uint64_t ft_seed = 1;
  finetune->add_option("--task", ft_task,
                       "retrieval|mortality|readmission|error|generation")
      ->required();
  finetune->add_option("--data", ft_data, "Dataset directory")->required();
  finetune->add_option("--checkpoint", ft_ckpt, "Input checkpoint")->required();
  finetune->add_option("--out", ft_out, "Output directory")->required();
  finetune->add_option("--epochs", ft_epochs, "Epochs (task default if unset)");
  finetune->add_option("--lr", ft_lr, "Learning rate (task default if unset)");
  finetune->add_option("--batch", ft_batch, "Batch size");
  finetune->add_option("--seed", ft_seed, "Random seed");
  finetune->add_option("--corruption", corruption, "Error-detection corruption");
  finetune->add_option("--sep-mask-prob", sep_mask_prob,
                       "[SEP] masking rate for generation");
  finetune->add_option("--style", ft_style, "dxpx or rx (dataset default)");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate checkpoints");
  std::string ev_task, ev_data, ev_out, ev_split = "test", ev_direction = "text",
              ev_style;
  std::vector<std::string> ev_ckpts;
  double ev_corruption = 0.25;
  uint64_t ev_seed = 1;
  evaluate->add_option("--task", ev_task,
                       "retrieval|mortality|readmission|error|generation")
      ->required();
  evaluate->add_option("--data", ev_data, "Dataset directory")->required();
  evaluate->add_option("--checkpoint", ev_ckpts, "Checkpoint(s), one per seed")
      ->required();
  evaluate->add_option("--out", ev_out, "Output directory")->required();
  evaluate->add_option("--split", ev_split, "train|valid|test");
  evaluate->add_option("--direction", ev_direction, "text|graph retrieval");
  evaluate->add_option("--corruption", ev_corruption, "Corruption probability");
  evaluate->add_option("--seed", ev_seed, "Random seed");
  evaluate->add_option("--style", ev_style, "dxpx or rx (dataset default)");

  // generate
  auto* generate = app.add_subcommand("generate", "Decode notes from graphs");
  std::string gen_data, gen_ckpt, gen_out, gen_strategy, gen_split = "test",
              gen_style;
  double gen_top_p = 0.0;
  int64_t gen_max_len = 0, gen_limit = 0;
  uint64_t gen_seed = 1;
  generate->add_option("--data", gen_data, "Dataset directory")->required();
  generate->add_option("--checkpoint", gen_ckpt, "Checkpoint")->required();
  generate->add_option("--out", gen_out, "Output directory")->required();
  generate->add_option("--strategy", gen_strategy, "greedy|top_p");
  generate->add_option("--p", gen_top_p, "Nucleus mass");
  generate->add_option("--max-len", gen_max_len, "Maximum length");
  generate->add_option("--split", gen_split, "train|valid|test");
  generate->add_option("--seed", gen_seed, "Random seed");
  generate->add_option("--limit", gen_limit, "Generate at most this many");
  generate->add_option("--style", gen_style, "dxpx or rx (dataset default)");

  // export-attn
  auto* export_attn = app.add_subcommand("export-attn",
                                         "Export a cross-attention heatmap");
  std::string ea_data, ea_ckpt, ea_out, ea_admission, ea_split = "test";
  int64_t ea_block = 0, ea_head = 0;
  uint64_t ea_seed = 1;
  export_attn->add_option("--data", ea_data, "Dataset directory")->required();
  export_attn->add_option("--checkpoint", ea_ckpt, "Checkpoint")->required();
  export_attn->add_option("--out", ea_out, "Output directory")->required();
  export_attn->add_option("--admission", ea_admission,
                          "Admission key (first record if unset)");
  export_attn->add_option("--block", ea_block, "Cross-modal block");
  export_attn->add_option("--head", ea_head, "Attention head");
  export_attn->add_option("--split", ea_split, "train|valid|test");
  export_attn->add_option("--seed", ea_seed, "Recorded seed");

  // rerun
  auto* rerun = app.add_subcommand("rerun", "Re-run a command from its manifest");
  std::string rerun_manifest;
  rerun->add_option("manifest", rerun_manifest, "manifest.json path")->required();

  try {
    std::vector<const char*> argv = {"graphtext"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());

    if (synth->parsed()) {
      return run_synth(args, n, seed, out_dir, style, noise, schema_path,
                       f_train, f_valid, f_test);
    }
    if (convert->parsed()) {
      return run_convert(args, tables_dir, conv_schema, conv_out, cap, conv_seed);
    }
    if (pretrain->parsed()) {
      return run_pretrain(args, pt_data, pt_out, pt_tasks, pt_epochs, pt_batch,
                          pt_lr, pt_seed, pt_flags, mlm_prob, mlp_prob, pt_init);
    }
    if (finetune->parsed()) {
      return run_finetune(args, ft_task, ft_data, ft_ckpt, ft_out, ft_epochs,
                          ft_lr, ft_batch, ft_seed, corruption, ft_style,
                          sep_mask_prob);
    }
    if (evaluate->parsed()) {
      return run_evaluate(args, ev_task, ev_data, ev_ckpts, ev_out, ev_split,
                          ev_direction, ev_corruption, ev_seed, ev_style);
    }
    if (generate->parsed()) {
      return run_generate(args, gen_data, gen_ckpt, gen_out, gen_strategy,
                          gen_top_p, gen_max_len, gen_split, gen_seed,
                          gen_limit, gen_style);
    }
    if (export_attn->parsed()) {
      return run_export_attn(args, ea_data, ea_ckpt, ea_out, ea_admission,
                             ea_block, ea_head, ea_split, ea_seed);
    }
    if (rerun->parsed()) {
      return run_rerun(rerun_manifest);
    }
    std::cerr << "no command selected\n";
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::cout << app.help();
      return 0;
    }
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace graphtext
