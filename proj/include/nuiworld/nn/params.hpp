#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "nuiworld/nn/tape.hpp"

namespace nuiworld::nn {

template <class T>
struct Parameter {
  Mat<T> value;
  Mat<T> grad;
  Mat<T> m;  // first moment
  Mat<T> v;  // second moment
};

enum class Init { Zeros, Ones, Xavier, Normal };

/// Named parameters plus AdamW state. Iteration order is by name, which
/// fixes the checkpoint layout.
template <class T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Mat<T> value);
  /// Creates a parameter with a seeded initializer; the stream is derived
  /// from (seed, name) so adding parameters never shifts other values.
  Parameter<T>& create(const std::string& name, int rows, int cols, Init init, uint64_t seed, double scale = 1.0);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  size_t tensor_count() const { return params_.size(); }
  size_t element_count() const;
  std::vector<std::string> names() const;

  void zero_grad();
  /// Global L2 norm of all gradients.
  double grad_norm() const;
  void scale_grads(T s);

  int64_t step = 0;

  template <class U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, p] : params_) {
      auto& q = out.add(name, p.value.template cast<U>());
      q.m = p.m.template cast<U>();
      q.v = p.v.template cast<U>();
    }
    out.step = step;
    return out;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter<T>> params_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int64_t total_steps = 1000;
  int64_t warmup_steps = 0;
  double final_lr_fraction = 0.0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

/// Learning rate at a step: linear warmup, then cosine annealing that
/// reaches final_lr_fraction * lr at total_steps.
double cosine_lr(const AdamWConfig& cfg, int64_t step);

/// One AdamW update using the store's gradients and its step counter.
/// Returns the learning rate used. NaN/Inf gradients raise
/// TrainingDivergence before any parameter changes.
template <class T>
double adamw_step(ParameterStore<T>& store, const AdamWConfig& cfg);

/// Checkpoint layout: magic "NUIW\0\1" + tag "PRMS", u64 header length,
/// JSON header {dtype, step, meta, tensors:[{name, shape}]}, then for each
/// tensor in header order its value, first moment, second moment as
/// little-endian f32.
void save_checkpoint(const ParameterStore<float>& store, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());
ParameterStore<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace nuiworld::nn
