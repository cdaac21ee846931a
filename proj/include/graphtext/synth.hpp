#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graphtext/dataset.hpp"
#include "graphtext/ehr_graph.hpp"
#include "graphtext/rng.hpp"

namespace graphtext {

// ---------------------------------------------------------------------------
// Generator configuration. Everything that shapes the data lives here so a
// schema file pins the corpus exactly.

struct SynthSchema {
  std::string style = "dxpx";  // "dxpx" (diagnoses+procedures) or "rx"

  int64_t diagnosis_pool = 200;
  int64_t procedure_pool = 200;
  int64_t drug_pool = 200;

  int64_t min_dx = 1, max_dx = 4;
  int64_t min_px = 0, max_px = 3;
  int64_t min_rx = 1, max_rx = 5;

  double noise_rate = 0.0;  // paraphrase probability per literal mention
  double mortality_prevalence = 0.04;
  double readmission_prevalence = 0.27;

  int64_t node_cap = kDefaultNodeCap;
  int64_t min_text_words = 5;

  // word -> paraphrase, applied to name mentions when noise triggers
  std::map<std::string, std::string> synonyms;

  void save(const std::string& path) const;
  static SynthSchema load(const std::string& path);
  // fills the synonym table with the built-in adjective pairs when empty
  void ensure_default_synonyms();
};

// The conversion schema matching a generator style (the Dx+Px or Rx table
// layout with Appendix-style relation names).
ConversionSchema conversion_schema_for_style(const std::string& style);

// ---------------------------------------------------------------------------
// Intermediate per-admission view used for rendering.

struct SynthPrescription {
  std::string drug, drug_type, route, formulary, dose, icustay;
};

struct AdmissionRecord {
  std::string admission_key;
  std::vector<std::string> dx_titles, px_titles;
  std::vector<SynthPrescription> prescriptions;
  int mortality = 0;
  int readmission = 0;
};

struct SynthTables {
  TableSet tables;
  std::vector<AdmissionRecord> admissions;
};

// Deterministic relational tables for n admissions. The admissions table
// carries the ground-truth outcome labels.
SynthTables generate_admissions(const SynthSchema& schema, int64_t n,
                                uint64_t seed);

struct RenderStats {
  int64_t mentions = 0;     // paraphrasable literal mentions
  int64_t paraphrased = 0;
};

// Sectioned summary text enumerating the admission's literals. At
// noise_rate > 0, mentions flip to their synonym-table paraphrase.
std::vector<std::pair<int, std::string>> render_summary(
    const AdmissionRecord& admission, const SynthSchema& schema,
    double noise_rate, Rng& rng, RenderStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Full dataset build: tables -> graphs -> encoded pairs -> splits.

struct SplitFractions {
  double train = 0.8, valid = 0.1, test = 0.1;
};

struct SynthDatasetResult {
  SynthTables tables;
  ConversionSchema conversion;
  DatasetBundle bundle;
  int64_t dropped_short_text = 0;
  int64_t dropped_oversize = 0;
};

SynthDatasetResult make_dataset(const SynthSchema& schema, int64_t n,
                                uint64_t seed, SplitFractions fractions);

}  // namespace graphtext
