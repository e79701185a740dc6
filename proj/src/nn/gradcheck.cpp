#include "nuiworld/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nuiworld::nn {

namespace {

std::vector<Eigen::Index> pick(Eigen::Index n, size_t max_coords, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (idx.size() <= max_coords) return idx;
  for (size_t i = 0; i < max_coords; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  idx.resize(max_coords);
  return idx;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, ParameterStore<double>& store, const std::vector<Mat<double>>& inputs,
                           uint64_t seed, size_t max_coords, double h, double floor) {
  std::vector<Mat<double>> xs = inputs;
  auto evaluate = [&]() {
    Tape<double> t;
    std::vector<Var> leaves;
    for (const auto& x : xs) leaves.push_back(t.constant(x));
    return t.scalar(loss(t, store, leaves));
  };

  // Analytic pass.
  store.zero_grad();
  Tape<double> t;
  std::vector<Var> leaves;
  for (const auto& x : xs) leaves.push_back(t.input(x));
  t.backward(loss(t, store, leaves));
  std::vector<Mat<double>> input_grads;
  for (Var v : leaves) input_grads.push_back(t.grad(v));
  std::vector<std::pair<std::string, Mat<double>>> param_grads;
  for (const auto& [name, p] : store) param_grads.emplace_back(name, p.grad);

  GradCheckResult res;
  Rng rng(seed);
  auto probe = [&](double& slot, double analytic, const std::string& label) {
    const double keep = slot;
    slot = keep + h;
    const double up = evaluate();
    slot = keep - h;
    const double down = evaluate();
    slot = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    ++res.coords_checked;
    if (err >= res.max_rel_error) {
      res.max_rel_error = err;
      res.worst = label;
    }
  };
  for (size_t i = 0; i < xs.size(); ++i)
    for (Eigen::Index j : pick(xs[i].size(), max_coords, rng))
      probe(xs[i].data()[j], input_grads[i].data()[j], "input" + std::to_string(i) + "[" + std::to_string(j) + "]");
  for (const auto& [name, g] : param_grads) {
    auto& p = store.get(name);
    for (Eigen::Index j : pick(p.value.size(), max_coords, rng))
      probe(p.value.data()[j], g.data()[j], name + "[" + std::to_string(j) + "]");
  }
  return res;
}

void randomize(ParameterStore<double>& store, uint64_t seed, double scale) {
  for (auto& [name, p] : store) {
    Rng rng(derive_seed(seed, fnv1a(name)));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = scale * rng.normal();
  }
}

}  // namespace nuiworld::nn
