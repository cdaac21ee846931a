#include "graphtext/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace graphtext {

double hits_at_k(const std::vector<int64_t>& ranks, int64_t k) {
  if (ranks.empty()) throw std::invalid_argument("hits_at_k: no ranks");
  if (k < 1) throw std::invalid_argument("hits_at_k: k must be >= 1");
  int64_t hits = 0;
  for (int64_t r : ranks) {
    if (r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mrr(const std::vector<int64_t>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr: no ranks");
  double total = 0.0;
  for (int64_t r : ranks) {
    if (r < 1) throw std::invalid_argument("mrr: rank must be >= 1");
    total += 1.0 / static_cast<double>(r);
  }
  return total / static_cast<double>(ranks.size());
}

double auprc(const std::vector<double>& scores,
             const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("auprc: scores/labels size mismatch");
  }
  int64_t total_pos = std::accumulate(labels.begin(), labels.end(), int64_t{0});
  if (total_pos == 0) throw std::invalid_argument("auprc: no positive labels");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return scores[a] > scores[b];
  });

  double area = 0.0;
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    // one threshold block per distinct score value
    int64_t block_tp = 0, block_fp = 0;
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]]) ++block_tp; else ++block_fp;
      ++j;
    }
    tp += block_tp;
    fp += block_fp;
    double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    double delta_recall =
        static_cast<double>(block_tp) / static_cast<double>(total_pos);
    area += precision * delta_recall;
    i = j;
  }
  return area;
}

double f1(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("f1: predictions/labels size mismatch");
  }
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] && labels[i]) ++tp;
    else if (predictions[i] && !labels[i]) ++fp;
    else if (!predictions[i] && labels[i]) ++fn;
  }
  if (tp == 0) return 0.0;
  double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
  double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * p * r / (p + r);
}

namespace {

int64_t lcs_length(const std::vector<std::string>& a,
                   const std::vector<std::string>& b) {
  std::vector<int64_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double fscore(double matches, double cand_total, double ref_total) {
  if (matches == 0.0) return 0.0;
  double p = matches / cand_total;
  double r = matches / ref_total;
  return 2.0 * p * r / (p + r);
}

}  // namespace

double rouge(const std::vector<std::string>& candidate,
             const std::vector<std::string>& reference, RougeVariant variant) {
  if (candidate.empty() || reference.empty()) return 0.0;
  if (variant == RougeVariant::RGL) {
    double lcs = static_cast<double>(lcs_length(candidate, reference));
    return fscore(lcs, static_cast<double>(candidate.size()),
                  static_cast<double>(reference.size()));
  }
  // RG2: clipped bigram counts
  if (candidate.size() < 2 || reference.size() < 2) return 0.0;
  std::unordered_map<std::string, int64_t> ref_bigrams;
  for (size_t i = 0; i + 1 < reference.size(); ++i) {
    ref_bigrams[reference[i] + "\x1f" + reference[i + 1]] += 1;
  }
  std::unordered_map<std::string, int64_t> cand_bigrams;
  for (size_t i = 0; i + 1 < candidate.size(); ++i) {
    cand_bigrams[candidate[i] + "\x1f" + candidate[i + 1]] += 1;
  }
  int64_t matches = 0;
  for (const auto& [bg, n] : cand_bigrams) {
    auto it = ref_bigrams.find(bg);
    if (it != ref_bigrams.end()) matches += std::min(n, it->second);
  }
  return fscore(static_cast<double>(matches),
                static_cast<double>(candidate.size() - 1),
                static_cast<double>(reference.size() - 1));
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - out.mean) * (v - out.mean);
  out.std_dev = std::sqrt(var / static_cast<double>(values.size()));
  return out;
}

}  // namespace graphtext
