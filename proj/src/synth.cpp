#include "graphtext/synth.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "graphtext/text.hpp"

namespace graphtext {

using nlohmann::json;

namespace {

const std::vector<std::string> kAdjectives = {
    "acute", "chronic", "mild", "severe", "recurrent",
    "focal", "diffuse", "primary", "secondary", "transient"};
const std::vector<std::pair<std::string, std::string>> kAdjectiveSynonyms = {
    {"acute", "sudden"},       {"chronic", "longstanding"},
    {"mild", "minor"},         {"severe", "serious"},
    {"recurrent", "relapsing"},{"focal", "localized"},
    {"diffuse", "widespread"}, {"primary", "principal"},
    {"secondary", "derivative"},{"transient", "temporary"}};
const std::vector<std::string> kConditions = {
    "gastropathy", "neuroma", "dermatosis", "nephrosis", "hepatitis",
    "arthropathy", "myelosis", "cardiopathy", "pneumonitis", "colitis",
    "cystitis", "fibrosis", "stenosis", "embolism", "neuritis"};
const std::vector<std::string> kSites = {
    "ankle", "femur", "liver", "kidney", "lung",
    "spine", "wrist", "shoulder", "colon", "bladder"};
const std::vector<std::string> kProcAdjectives = {"partial", "total", "open",
                                                  "closed"};
const std::vector<std::string> kProcVerbs = {
    "repair", "excision", "biopsy", "drainage", "endoscopy",
    "imaging", "resection", "ligation", "grafting", "irrigation"};
const std::vector<std::string> kDrugStems = {
    "alpra", "beta", "cefa", "dora", "elo", "fina", "gluco",
    "hydro", "iso", "keto", "lido", "meto", "nifedi", "oxa",
    "predni", "quina", "rami", "sulfa", "tetra", "vera"};
const std::vector<std::string> kDrugSuffixes = {
    "zolam", "pril", "dine", "micin", "phen",
    "statin", "codone", "mab", "cillin", "azole"};
const std::vector<std::string> kRoutes = {
    "oral", "intravenous", "intramuscular", "subcutaneous",
    "topical", "sublingual", "rectal", "inhaled"};
const std::vector<std::string> kDoses = {
    "5mg", "10mg", "20mg", "25mg", "50mg", "100mg", "150mg", "200mg",
    "250mg", "325mg", "400mg", "500mg", "650mg", "750mg", "1000mg"};
const std::vector<std::string> kDrugTypes = {"main", "base", "additive"};

std::vector<std::string> diagnosis_names(int64_t count) {
  std::vector<std::string> out;
  for (const auto& adj : kAdjectives) {
    for (const auto& cond : kConditions) {
      for (const auto& site : kSites) {
        if (static_cast<int64_t>(out.size()) >= count) return out;
        out.push_back(adj + " " + cond + " of the " + site);
      }
    }
  }
  return out;
}

std::vector<std::string> procedure_names(int64_t count) {
  std::vector<std::string> out;
  for (const auto& adj : kProcAdjectives) {
    for (const auto& verb : kProcVerbs) {
      for (const auto& site : kSites) {
        if (static_cast<int64_t>(out.size()) >= count) return out;
        out.push_back(adj + " " + verb + " of the " + site);
      }
    }
  }
  return out;
}

std::vector<std::string> drug_names(int64_t count) {
  std::vector<std::string> out;
  for (const auto& stem : kDrugStems) {
    for (const auto& suffix : kDrugSuffixes) {
      if (static_cast<int64_t>(out.size()) >= count) return out;
      out.push_back(stem + suffix);
    }
  }
  return out;
}

}  // namespace

void SynthSchema::ensure_default_synonyms() {
  if (!synonyms.empty()) return;
  for (const auto& [word, alt] : kAdjectiveSynonyms) synonyms[word] = alt;
}

void SynthSchema::save(const std::string& path) const {
  json j;
  j["style"] = style;
  j["diagnosis_pool"] = diagnosis_pool;
  j["procedure_pool"] = procedure_pool;
  j["drug_pool"] = drug_pool;
  j["min_dx"] = min_dx;
  j["max_dx"] = max_dx;
  j["min_px"] = min_px;
  j["max_px"] = max_px;
  j["min_rx"] = min_rx;
  j["max_rx"] = max_rx;
  j["noise_rate"] = noise_rate;
  j["mortality_prevalence"] = mortality_prevalence;
  j["readmission_prevalence"] = readmission_prevalence;
  j["node_cap"] = node_cap;
  j["min_text_words"] = min_text_words;
  j["synonyms"] = synonyms;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write synth schema: " + path);
  out << j.dump(2) << "\n";
}

SynthSchema SynthSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read synth schema: " + path);
  json j = json::parse(in);
  SynthSchema s;
  s.style = j.value("style", s.style);
  s.diagnosis_pool = j.value("diagnosis_pool", s.diagnosis_pool);
  s.procedure_pool = j.value("procedure_pool", s.procedure_pool);
  s.drug_pool = j.value("drug_pool", s.drug_pool);
  s.min_dx = j.value("min_dx", s.min_dx);
  s.max_dx = j.value("max_dx", s.max_dx);
  s.min_px = j.value("min_px", s.min_px);
  s.max_px = j.value("max_px", s.max_px);
  s.min_rx = j.value("min_rx", s.min_rx);
  s.max_rx = j.value("max_rx", s.max_rx);
  s.noise_rate = j.value("noise_rate", s.noise_rate);
  s.mortality_prevalence = j.value("mortality_prevalence", s.mortality_prevalence);
  s.readmission_prevalence = j.value("readmission_prevalence", s.readmission_prevalence);
  s.node_cap = j.value("node_cap", s.node_cap);
  s.min_text_words = j.value("min_text_words", s.min_text_words);
  if (j.contains("synonyms")) {
    s.synonyms = j["synonyms"].get<std::map<std::string, std::string>>();
  }
  return s;
}

ConversionSchema conversion_schema_for_style(const std::string& style) {
  ConversionSchema s;
  s.admissions_table = "admissions";
  s.admissions_key_column = "ADM_ID";
  if (style == "dxpx") {
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
  if (style == "rx") {
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
  throw std::invalid_argument("unknown synth style: " + style);
}

// ---------------------------------------------------------------------------

SynthTables generate_admissions(const SynthSchema& schema, int64_t n,
                                uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_admissions: n must be >= 1");
  SynthTables out;
  Rng root(seed);

  std::vector<std::string> dx_names = diagnosis_names(schema.diagnosis_pool);
  std::vector<std::string> px_names = procedure_names(schema.procedure_pool);
  std::vector<std::string> drugs = drug_names(schema.drug_pool);

  Table admissions;
  admissions.name = "admissions";
  admissions.columns = {"ADM_ID", "MORTALITY_30D", "READMISSION_30D"};
  Table diagnoses;
  diagnoses.name = "diagnoses";
  diagnoses.columns = {"ADM_ID", "DX_ID", "ICD9_CODE", "LONG_TITLE"};
  Table procedures;
  procedures.name = "procedures";
  procedures.columns = {"ADM_ID", "PX_ID", "ICD9_CODE", "LONG_TITLE"};
  Table prescriptions;
  prescriptions.name = "prescriptions";
  prescriptions.columns = {"ADM_ID", "RX_ID", "ICUSTAY_ID", "DRUG_TYPE",
                           "DRUG", "ROUTE", "FORMULARY_DRUG_CD", "DOSE"};

  int64_t uid = 0;
  for (int64_t i = 0; i < n; ++i) {
    Rng rng = root.derive(0xada0 + i);
    AdmissionRecord rec;
    rec.admission_key = std::to_string(100000 + i);
    rec.mortality = rng.bernoulli(schema.mortality_prevalence) ? 1 : 0;
    rec.readmission = rng.bernoulli(schema.readmission_prevalence) ? 1 : 0;
    admissions.rows.push_back({rec.admission_key, std::to_string(rec.mortality),
                               std::to_string(rec.readmission)});

    if (schema.style == "dxpx") {
      int64_t n_dx =
          schema.min_dx + rng.uniform_int(schema.max_dx - schema.min_dx + 1);
      for (int64_t k = 0; k < n_dx; ++k) {
        int64_t idx = rng.uniform_int(int64_t(dx_names.size()));
        rec.dx_titles.push_back(dx_names[idx]);
        diagnoses.rows.push_back({rec.admission_key, "d" + std::to_string(uid++),
                                  "dc" + std::to_string(1000 + idx),
                                  dx_names[idx]});
      }
      int64_t n_px =
          schema.min_px + rng.uniform_int(schema.max_px - schema.min_px + 1);
      for (int64_t k = 0; k < n_px; ++k) {
        int64_t idx = rng.uniform_int(int64_t(px_names.size()));
        rec.px_titles.push_back(px_names[idx]);
        procedures.rows.push_back({rec.admission_key, "p" + std::to_string(uid++),
                                   "pc" + std::to_string(5000 + idx),
                                   px_names[idx]});
      }
    } else {
      int64_t n_rx =
          schema.min_rx + rng.uniform_int(schema.max_rx - schema.min_rx + 1);
      for (int64_t k = 0; k < n_rx; ++k) {
        int64_t idx = rng.uniform_int(int64_t(drugs.size()));
        SynthPrescription p;
        p.drug = drugs[idx];
        p.formulary = "f" + std::to_string(2000 + idx);
        p.route = kRoutes[rng.uniform_int(int64_t(kRoutes.size()))];
        p.dose = kDoses[rng.uniform_int(int64_t(kDoses.size()))];
        p.drug_type = kDrugTypes[rng.uniform_int(int64_t(kDrugTypes.size()))];
        p.icustay = std::to_string(30000 + rng.uniform_int(50));
        rec.prescriptions.push_back(p);
        prescriptions.rows.push_back({rec.admission_key,
                                      "r" + std::to_string(uid++), p.icustay,
                                      p.drug_type, p.drug, p.route, p.formulary,
                                      p.dose});
      }
    }
    out.admissions.push_back(std::move(rec));
  }

  out.tables.add(std::move(admissions));
  if (schema.style == "dxpx") {
    out.tables.add(std::move(diagnoses));
    out.tables.add(std::move(procedures));
  } else {
    out.tables.add(std::move(prescriptions));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// one literal mention; paraphrases swap every synonym-table word
std::string render_mention(const std::string& surface, const SynthSchema& schema,
                           double noise_rate, Rng& rng, RenderStats* stats) {
  bool paraphrasable = false;
  for (const std::string& word : split_words(surface)) {
    if (schema.synonyms.count(word)) {
      paraphrasable = true;
      break;
    }
  }
  if (!paraphrasable) return surface;
  if (stats) ++stats->mentions;
  if (noise_rate <= 0.0 || !rng.bernoulli(noise_rate)) return surface;
  if (stats) ++stats->paraphrased;
  std::string out;
  for (const std::string& word : split_words(surface)) {
    auto it = schema.synonyms.find(word);
    if (!out.empty()) out += ' ';
    out += it == schema.synonyms.end() ? word : it->second;
  }
  return out;
}

}  // namespace

std::vector<std::pair<int, std::string>> render_summary(
    const AdmissionRecord& admission, const SynthSchema& schema,
    double noise_rate, Rng& rng, RenderStats* stats) {
  if (noise_rate < 0.0 || noise_rate >= 1.0) {
    throw std::invalid_argument("render_summary: noise_rate must be in [0, 1)");
  }
  std::vector<std::pair<int, std::string>> sections;
  if (schema.style == "dxpx") {
    std::string dx = "discharge diagnosis :";
    for (const std::string& title : admission.dx_titles) {
      dx += " " + render_mention(title, schema, noise_rate, rng, stats) + " ;";
    }
    std::string px = "major surgical or invasive procedure :";
    for (const std::string& title : admission.px_titles) {
      px += " " + render_mention(title, schema, noise_rate, rng, stats) + " ;";
    }
    sections.emplace_back(0, dx);
    sections.emplace_back(1, px);
  } else {
    std::string rx = "discharge medication :";
    for (const SynthPrescription& p : admission.prescriptions) {
      rx += " " + render_mention(p.drug, schema, noise_rate, rng, stats) + " " +
            p.dose + " " + p.route + " ;";
    }
    sections.emplace_back(2, rx);
  }
  return sections;
}

// ---------------------------------------------------------------------------

SynthDatasetResult make_dataset(const SynthSchema& schema_in, int64_t n,
                                uint64_t seed, SplitFractions fractions) {
  double total = fractions.train + fractions.valid + fractions.test;
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("make_dataset: split fractions must sum to 1");
  }
  SynthSchema schema = schema_in;
  schema.ensure_default_synonyms();

  SynthDatasetResult result;
  result.tables = generate_admissions(schema, n, seed);
  result.conversion = conversion_schema_for_style(schema.style);

  ConversionResult conv = convert_tables(result.tables.tables, result.conversion);

  // render all texts
  Rng root(seed);
  std::map<std::string, std::vector<std::pair<int, std::string>>> texts;
  std::vector<std::string> corpus;
  for (const AdmissionRecord& rec : result.tables.admissions) {
    Rng rng = root.derive(0x7e87 + std::stoll(rec.admission_key));
    auto sections = render_summary(rec, schema, schema.noise_rate, rng);
    std::string full;
    for (const auto& [h, t] : sections) full += t + " ";
    corpus.push_back(full);
    texts[rec.admission_key] = std::move(sections);
  }
  // literal surfaces join the vocabulary corpus so graph descriptions
  // tokenize without [UNK]
  std::set<std::string> surface_words;
  for (const EhrGraph& g : conv.graphs) {
    for (const Node& node : g.nodes) {
      if (node.kind == NodeKind::Literal) {
        for (const std::string& word : split_words(node.surface)) {
          surface_words.insert(word);
        }
      }
    }
  }
  for (const std::string& word : surface_words) corpus.push_back(word);

  std::set<std::string> all_words;
  std::set<char> alphabet;
  for (const std::string& doc : corpus) {
    for (const std::string& word : split_words(doc)) {
      std::string lower = word;
      for (char& c : lower) c = std::tolower(static_cast<unsigned char>(c));
      all_words.insert(lower);
      for (char c : lower) alphabet.insert(c);
    }
  }
  int64_t vocab_target = SubwordVocabulary::kReservedCount +
                         2 * int64_t(alphabet.size()) + int64_t(all_words.size());
  result.bundle.text_vocab = build_text_vocab(corpus, vocab_target);

  // pair graphs and texts, applying the drop rules
  std::map<std::string, const AdmissionRecord*> by_key;
  for (const AdmissionRecord& rec : result.tables.admissions) {
    by_key[rec.admission_key] = &rec;
  }
  std::vector<PairRecord> kept;
  std::vector<EhrGraph> kept_graphs;
  for (const EhrGraph& g : conv.graphs) {
    const AdmissionRecord& rec = *by_key.at(g.admission_key);
    std::string full;
    for (const auto& [h, t] : texts[g.admission_key]) full += t + " ";
    if (int64_t(split_words(full).size()) < schema.min_text_words) {
      ++result.dropped_short_text;
      continue;
    }
    if (!filter_oversize(g, schema.node_cap)) {
      ++result.dropped_oversize;
      continue;
    }
    PairRecord pr;
    pr.admission_key = g.admission_key;
    pr.graph = g;
    pr.text = encode_text(texts[g.admission_key], result.bundle.text_vocab);
    pr.mortality_label = rec.mortality;
    pr.readmission_label = rec.readmission;
    kept.push_back(std::move(pr));
    kept_graphs.push_back(g);
  }
  result.bundle.graph_vocab = build_graph_vocab(kept_graphs);
  result.bundle.relations = conv.relations;

  // split by admission, deterministic shuffle
  std::vector<size_t> order(kept.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng = root.derive(0x59117);
  for (size_t i = order.size(); i > 1; --i) {
    size_t j = split_rng.uniform_int(int64_t(i));
    std::swap(order[i - 1], order[j]);
  }
  int64_t n_kept = int64_t(kept.size());
  int64_t n_train = std::llround(fractions.train * double(n_kept));
  int64_t n_valid = std::llround(fractions.valid * double(n_kept));
  n_train = std::min(n_train, n_kept);
  n_valid = std::min(n_valid, n_kept - n_train);
  for (int64_t i = 0; i < n_kept; ++i) {
    PairRecord& r = kept[order[i]];
    if (i < n_train) result.bundle.train.records.push_back(std::move(r));
    else if (i < n_train + n_valid) result.bundle.valid.records.push_back(std::move(r));
    else result.bundle.test.records.push_back(std::move(r));
  }
  auto expect_nonempty = [&](double fraction, const PairDataset& split,
                             const char* name) {
    if (fraction > 0.0 && split.records.empty()) {
      throw std::runtime_error(std::string("make_dataset: split '") + name +
                               "' is empty");
    }
  };
  expect_nonempty(fractions.train, result.bundle.train, "train");
  expect_nonempty(fractions.valid, result.bundle.valid, "valid");
  expect_nonempty(fractions.test, result.bundle.test, "test");

  // deterministic order within each split
  auto sort_split = [](PairDataset& ds) {
    std::sort(ds.records.begin(), ds.records.end(),
              [](const PairRecord& a, const PairRecord& b) {
                return a.admission_key < b.admission_key;
              });
  };
  sort_split(result.bundle.train);
  sort_split(result.bundle.valid);
  sort_split(result.bundle.test);
  return result;
}

}  // namespace graphtext
