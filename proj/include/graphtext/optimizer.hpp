#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "graphtext/tensor.hpp"

namespace graphtext {

// Adam with global gradient-norm clipping. step() consumes and zeroes the
// parameter gradients.
class AdamOptimizer {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping
  };

  explicit AdamOptimizer(std::vector<std::pair<std::string, Tensor>>& params)
      : AdamOptimizer(params, Options()) {}
  AdamOptimizer(std::vector<std::pair<std::string, Tensor>>& params,
                Options options);

  void step();
  void zero_grad();
  int64_t steps_taken() const { return t_; }
  Options& options() { return options_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  Options options_;
  int64_t t_ = 0;
};

}  // namespace graphtext
