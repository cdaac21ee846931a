#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <filesystem>
#include <sstream>

#include "graphtext/synth.hpp"
#include "graphtext/text.hpp"

using namespace graphtext;

namespace {

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool tables_equal(const Table& a, const Table& b) {
  return a.columns == b.columns && a.rows == b.rows;
}

}  // namespace

TEST_CASE("n=1 yields one admissions row plus its child rows") {
  SynthSchema schema;
  schema.style = "dxpx";
  SynthTables t = generate_admissions(schema, 1, 5);
  CHECK(t.tables.get("admissions").rows.size() == 1);
  const auto& dx = t.tables.get("diagnoses").rows;
  CHECK(dx.size() >= size_t(schema.min_dx));
  CHECK(dx.size() <= size_t(schema.max_dx));
  for (const auto& row : dx) CHECK(row[0] == t.admissions[0].admission_key);
}

TEST_CASE("generation is byte-identical for identical (schema, n, seed)") {
  SynthSchema schema;
  schema.style = "rx";
  SynthTables a = generate_admissions(schema, 20, 77);
  SynthTables b = generate_admissions(schema, 20, 77);
  for (const auto& [name, table] : a.tables.tables) {
    CHECK(tables_equal(table, b.tables.get(name)));
  }
  SynthTables c = generate_admissions(schema, 20, 78);
  bool all_same = true;
  for (const auto& [name, table] : a.tables.tables) {
    all_same = all_same && tables_equal(table, c.tables.get(name));
  }
  CHECK_FALSE(all_same);
}

TEST_CASE("outcome prevalences land within one percent at n=10000") {
  SynthSchema schema;
  schema.style = "dxpx";
  SynthTables t = generate_admissions(schema, 10000, 123);
  double mort = 0, readm = 0;
  for (const AdmissionRecord& rec : t.admissions) {
    mort += rec.mortality;
    readm += rec.readmission;
  }
  CHECK(std::abs(mort / 10000.0 - 0.04) < 0.01);
  CHECK(std::abs(readm / 10000.0 - 0.27) < 0.01);
}

TEST_CASE("render at noise 0 shows every literal verbatim; empty section keeps header") {
  SynthSchema schema;
  schema.style = "dxpx";
  schema.min_px = 0;
  schema.max_px = 0;
  schema.ensure_default_synonyms();
  SynthTables t = generate_admissions(schema, 5, 9);
  Rng rng(1);
  for (const AdmissionRecord& rec : t.admissions) {
    auto sections = render_summary(rec, schema, 0.0, rng);
    REQUIRE(sections.size() == 2);
    for (const std::string& title : rec.dx_titles) {
      CHECK(sections[0].second.find(title) != std::string::npos);
    }
    CHECK(sections[1].second == "major surgical or invasive procedure :");
  }
}

TEST_CASE("paraphrase rate matches noise over many mentions") {
  SynthSchema schema;
  schema.style = "dxpx";
  schema.min_dx = 4;
  schema.max_dx = 4;
  schema.ensure_default_synonyms();
  SynthTables t = generate_admissions(schema, 2500, 31);
  Rng rng(2);
  RenderStats stats;
  for (const AdmissionRecord& rec : t.admissions) {
    render_summary(rec, schema, 0.3, rng, &stats);
  }
  CHECK(stats.mentions >= 10000);
  double frac = double(stats.paraphrased) / double(stats.mentions);
  CHECK(std::abs(frac - 0.3) < 0.02);
}

TEST_CASE("paraphrased mention uses the schema synonym table exactly") {
  SynthSchema schema;
  schema.style = "dxpx";
  schema.synonyms = {{"acute", "sudden"}};
  AdmissionRecord rec;
  rec.admission_key = "1";
  rec.dx_titles = {"acute colitis of the colon"};
  Rng rng(3);
  bool saw_paraphrase = false, saw_original = false;
  for (int i = 0; i < 200; ++i) {
    auto sections = render_summary(rec, schema, 0.5, rng);
    if (sections[0].second.find("sudden colitis of the colon") !=
        std::string::npos) {
      saw_paraphrase = true;
    }
    if (sections[0].second.find("acute colitis of the colon") !=
        std::string::npos) {
      saw_original = true;
    }
  }
  CHECK(saw_paraphrase);
  CHECK(saw_original);
}

TEST_CASE("style schemas expose the 6 and 7 relation names") {
  CHECK(conversion_schema_for_style("dxpx").relation_names().size() == 6);
  CHECK(conversion_schema_for_style("rx").relation_names().size() == 7);
  CHECK_THROWS_AS(conversion_schema_for_style("bogus"), std::invalid_argument);
}

TEST_CASE("make_dataset: all-train split, disjoint keys, recount, coverage") {
  SynthSchema schema;
  schema.style = "dxpx";
  SplitFractions all_train{1.0, 0.0, 0.0};
  SynthDatasetResult r = make_dataset(schema, 30, 11, all_train);
  CHECK(r.bundle.train.size() ==
        30 - r.dropped_short_text - r.dropped_oversize);
  CHECK(r.bundle.valid.size() == 0);
  CHECK(r.bundle.test.size() == 0);

  SplitFractions split{0.6, 0.2, 0.2};
  SynthDatasetResult s = make_dataset(schema, 40, 13, split);
  std::set<std::string> keys;
  int64_t total = 0;
  for (const PairDataset* ds : {&s.bundle.train, &s.bundle.valid, &s.bundle.test}) {
    for (const PairRecord& rec : ds->records) {
      CHECK(keys.insert(rec.admission_key).second);  // disjoint and unique
      ++total;
    }
  }
  CHECK(total == 40 - s.dropped_short_text - s.dropped_oversize);

  // every encoded text avoids [UNK] and respects framing
  for (const PairRecord& rec : s.bundle.train.records) {
    CHECK(rec.text.token_ids.front() == SubwordVocabulary::kCls);
    CHECK(rec.text.token_ids.back() == SubwordVocabulary::kSep);
    for (int64_t id : rec.text.token_ids) {
      CHECK(id != SubwordVocabulary::kUnk);
    }
  }
}

TEST_CASE("dataset files are byte-identical across rebuilds") {
  SynthSchema schema;
  schema.style = "rx";
  SplitFractions split{0.8, 0.1, 0.1};
  SynthDatasetResult a = make_dataset(schema, 25, 21, split);
  SynthDatasetResult b = make_dataset(schema, 25, 21, split);
  a.bundle.save("synth_bundle_a");
  b.bundle.save("synth_bundle_b");
  for (const char* f : {"/train.jsonl", "/valid.jsonl", "/test.jsonl",
                        "/text_vocab.txt", "/graph_vocab.json",
                        "/relations.json"}) {
    CHECK(file_bytes(std::string("synth_bundle_a") + f) ==
          file_bytes(std::string("synth_bundle_b") + f));
  }
  for (const char* d : {"synth_bundle_a", "synth_bundle_b"}) {
    for (const char* f : {"/train.jsonl", "/valid.jsonl", "/test.jsonl",
                          "/text_vocab.txt", "/graph_vocab.json",
                          "/relations.json"}) {
      std::remove((std::string(d) + f).c_str());
    }
    std::filesystem::remove(d);
  }
}

TEST_CASE("learnability: partner texts share literals, non-partners share fewer") {
  SynthSchema schema;
  schema.style = "dxpx";
  SynthDatasetResult r = make_dataset(schema, 1000, 17, {1.0, 0.0, 0.0});
  const auto& records = r.bundle.train.records;
  REQUIRE(records.size() >= 900);

  auto shared_literals = [&](const PairRecord& graph_rec,
                             const PairRecord& text_rec) {
    std::string text = detokenize(text_rec.text.token_ids, r.bundle.text_vocab);
    int64_t count = 0;
    for (const Node& node : graph_rec.graph.nodes) {
      if (node.kind == NodeKind::Literal &&
          node.literal_type.find("long_title") != std::string::npos &&
          text.find(node.surface) != std::string::npos) {
        ++count;
      }
    }
    return count;
  };

  Rng rng(5);
  double partner_sum = 0, other_sum = 0;
  for (int t = 0; t < 1000; ++t) {
    int64_t i = rng.uniform_int(int64_t(records.size()));
    int64_t j = rng.uniform_int(int64_t(records.size()) - 1);
    if (j >= i) ++j;
    int64_t partner = shared_literals(records[i], records[i]);
    CHECK(partner >= 1);
    partner_sum += double(partner);
    other_sum += double(shared_literals(records[i], records[j]));
  }
  CHECK(partner_sum / 1000.0 > other_sum / 1000.0);
}
