#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "surfuse/tensor.hpp"

namespace surfuse {

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0;  ///< worst over inputs and trials
  double tolerance = 0;
  Index trials = 0;
  Index n_checked = 0;  ///< scalar entries compared
  bool passed() const { return max_rel_error < tolerance; }
};

/// max|a - n| / max(max|a|, max|n|, floor) over one tensor.
double gradient_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-8);

/// Central differences of `loss` (which must build its scalar from `inputs` and be
/// deterministic across calls) against reverse mode. Returns the worst per-tensor error.
/// A tensor whose true gradient is zero (an attention key bias, say) is measured
/// against 1e-6 of the largest gradient among `inputs` instead of its own scale.
double check_gradients(std::span<const Tensor<double>> inputs, const std::function<Tensor<double>()>& loss,
                       double h = 1e-5, Index* n_checked = nullptr);

/// Every differentiable primitive plus the composed tiny model with the composite loss,
/// `trials` seeded random instances each.
std::vector<GradcheckResult> run_gradcheck_suite(Index trials = 10, std::uint64_t seed = 0, double h = 1e-5);

}  // namespace surfuse
