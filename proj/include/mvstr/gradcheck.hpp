#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mvstr/tensor.hpp"

namespace mvstr {

struct GradcheckOptions {
  double tol = 1e-4;
  // Central-difference step is rel_step * max(1, |x|).
  double rel_step = 1e-5;
  // Denominator floor so that vanishing gradients compare absolutely.
  double abs_floor = 1e-6;
  // 0 checks every entry of every input.
  int max_samples_per_input = 0;
  std::uint64_t seed = 7;
};

struct GradcheckEntry {
  std::size_t input = 0;
  std::int64_t index = 0;
  double analytic = 0, numeric = 0, rel_error = 0;
};

struct GradcheckReport {
  std::string name;
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0;
  double tol = 0;
  bool passed = false;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares tape gradients of a scalar function against central differences.
// Inputs must be in verification precision.
GradcheckReport gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& options = {}, std::string name = {});

}  // namespace mvstr
