#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nuiworld/nn/params.hpp"

namespace nuiworld::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[index]" with the largest error
  size_t coords_checked = 0;
};

/// Builds a scalar loss from the tape, the store, and one leaf per input.
using LossBuilder = std::function<Var(Tape<double>&, ParameterStore<double>&, const std::vector<Var>&)>;

/// Compares reverse-mode gradients of every input and parameter against
/// central differences. Per coordinate the error is |a - n| / max(|a|, |n|, floor).
/// At most max_coords coordinates per tensor are probed (chosen by seed).
GradCheckResult grad_check(const LossBuilder& loss, ParameterStore<double>& store, const std::vector<Mat<double>>& inputs,
                           uint64_t seed, size_t max_coords = 24, double h = 1e-5, double floor = 1e-6);

/// Replaces every parameter with N(0, scale^2) values so zero-initialized
/// gates do not hide gradient paths.
void randomize(ParameterStore<double>& store, uint64_t seed, double scale = 0.3);

}  // namespace nuiworld::nn
