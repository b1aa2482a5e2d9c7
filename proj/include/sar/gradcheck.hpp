#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sar/tensor.hpp"

namespace sar {

// A scalar-valued function of several tensors. It is called twice per check:
// once with tape leaves (analytic pass) and many times with plain tensors
// (finite differences), so it must not depend on anything else that varies.
using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

// ||analytic - numeric|| / max(||analytic||, ||numeric||), with the norms
// taken over all inputs and central differences of step h. Returns 0 when
// both gradients vanish.
double gradient_relative_error(const ScalarFn& fn, std::span<const Tensor> point, double h = kGradCheckStep);

struct GradCheckCase {
  std::string name;
  ScalarFn fn;
  // Produces the evaluation point for a given trial seed.
  std::function<std::vector<Tensor>(std::uint64_t)> point;
  int trials = 10;
};

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0.0;
  int trials = 0;
  bool passed = false;
};

std::vector<GradCheckResult> run_gradcheck(std::span<const GradCheckCase> cases,
                                           double tolerance = kGradCheckTolerance);

// Every differentiable primitive plus the encoder, SAR and combined-loss
// pipelines (M=8, K=3, P=2).
std::vector<GradCheckCase> default_gradcheck_cases(std::uint64_t seed);

}  // namespace sar
