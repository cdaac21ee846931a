#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace graphtext {

// Ranking and classification metrics. All functions are pure and
// deterministic; see tests for the brute-force oracles they are held to.

// Fraction of ranks <= k. Ranks are 1-based.
double hits_at_k(const std::vector<int64_t>& ranks, int64_t k);

// Mean of 1/rank.
double mrr(const std::vector<int64_t>& ranks);

// Area under the precision-recall curve as step-interpolated average
// precision: sort by descending score (stable), process equal scores as one
// threshold block, sum P * dR over blocks. Requires at least one positive.
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

// Binary F1 = 2PR/(P+R); 0 when P+R is 0.
double f1(const std::vector<int>& predictions, const std::vector<int>& labels);

enum class RougeVariant { RG2, RGL };

// RG2: clipped bigram-overlap F1. RGL: longest-common-subsequence F1 with
// equal precision/recall weighting. Empty candidate or reference scores 0.
double rouge(const std::vector<std::string>& candidate,
             const std::vector<std::string>& reference, RougeVariant variant);

// Mean and standard deviation (population) of per-seed metric values, used
// by the multi-seed evaluation report.
struct MeanStd {
  double mean = 0.0;
  double std_dev = 0.0;
};
MeanStd mean_std(const std::vector<double>& values);

}  // namespace graphtext
