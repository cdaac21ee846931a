#include "graphtext/optimizer.hpp"

#include <cmath>

namespace graphtext {

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, Tensor>>& params,
                             Options options)
    : options_(options) {
  params_.reserve(params.size());
  for (auto& [name, t] : params) {
    params_.push_back(t);
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamOptimizer::step() {
  ++t_;
  double clip_scale = 1.0;
  if (options_.clip_norm > 0.0) {
    double sq = 0.0;
    for (Tensor& p : params_) {
      for (double g : p.grad()) sq += g * g;
    }
    double norm = std::sqrt(sq);
    if (norm > options_.clip_norm) clip_scale = options_.clip_norm / norm;
  }
  double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    std::vector<double>& values = p.values();
    std::vector<double>& grad = p.grad();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (size_t j = 0; j < values.size(); ++j) {
      double g = grad[j] * clip_scale;
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g;
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g * g;
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      values[j] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
  zero_grad();
}

void AdamOptimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace graphtext
