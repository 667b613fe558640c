#include "mvstr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "mvstr/autograd.hpp"

namespace mvstr {

GradcheckReport gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& options, std::string name) {
  for (const auto& in : inputs) {
    if (in.precision() != Precision::verification) {
      throw UsageError("gradcheck requires verification (64-bit) precision inputs");
    }
  }
  GradcheckReport report;
  report.name = std::move(name);
  report.tol = options.tol;

  std::vector<Tensor> leaves;
  for (const auto& in : inputs) leaves.push_back(in.clone().set_requires_grad(true));

  Tape tape;
  Gradients grads;
  {
    TapeScope scope(tape);
    Tensor loss = f(leaves);
    grads = tape.backward(loss);
  }

  auto eval = [&](const std::vector<Tensor>& xs) {
    NoGradGuard no_grad;
    return f(xs).item();
  };

  std::mt19937_64 rng(options.seed);
  std::vector<Tensor> probe;
  for (const auto& in : inputs) probe.push_back(in.clone().set_requires_grad(false));

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto n = inputs[i].numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (options.max_samples_per_input > 0 && n > options.max_samples_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(options.max_samples_per_input));
      std::sort(idx.begin(), idx.end());
    }
    const auto analytic = grads.get(leaves[i]).to_vector();
    auto buf = probe[i].mutable_data<double>();
    for (auto k : idx) {
      const auto ku = static_cast<std::size_t>(k);
      const double x0 = buf[ku];
      const double h = options.rel_step * std::max(1.0, std::abs(x0));
      buf[ku] = x0 + h;
      const double fp = eval(probe);
      buf[ku] = x0 - h;
      const double fm = eval(probe);
      buf[ku] = x0;
      GradcheckEntry e;
      e.input = i;
      e.index = k;
      e.analytic = analytic[ku];
      e.numeric = (fp - fm) / (2 * h);
      const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), options.abs_floor});
      e.rel_error = std::abs(e.analytic - e.numeric) / denom;
      if (!std::isfinite(e.rel_error)) e.rel_error = std::numeric_limits<double>::infinity();
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.entries.push_back(e);
    }
  }
  report.passed = report.max_rel_error < options.tol;
  return report;
}

}  // namespace mvstr
