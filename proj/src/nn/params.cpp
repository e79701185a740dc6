#include "nuiworld/nn/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "nuiworld/formats.hpp"

namespace nuiworld::nn {

template <class T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, Mat<T> value) {
  require(!name.empty(), ErrorKind::InvalidArgument, "parameter name is empty");
  require(!has(name), ErrorKind::InvalidArgument, "duplicate parameter " + name);
  Parameter<T> p;
  p.grad = Mat<T>::Zero(value.rows(), value.cols());
  p.m = Mat<T>::Zero(value.rows(), value.cols());
  p.v = Mat<T>::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  return params_.emplace(name, std::move(p)).first->second;
}

template <class T>
Parameter<T>& ParameterStore<T>::create(const std::string& name, int rows, int cols, Init init, uint64_t seed,
                                        double scale) {
  require(rows >= 1 && cols >= 1, ErrorKind::InvalidArgument, "parameter " + name + " has an empty shape");
  Mat<T> m(rows, cols);
  Rng rng(derive_seed(seed, fnv1a(name)));
  switch (init) {
    case Init::Zeros: m.setZero(); break;
    case Init::Ones: m.setOnes(); break;
    case Init::Xavier: {
      const double bound = scale * std::sqrt(6.0 / (rows + cols));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
      break;
    }
    case Init::Normal:
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(scale * rng.normal());
      break;
  }
  return add(name, std::move(m));
}

template <class T>
Parameter<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = params_.find(name);
  require(it != params_.end(), ErrorKind::InvalidArgument, "unknown parameter " + name);
  return it->second;
}

template <class T>
const Parameter<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), ErrorKind::InvalidArgument, "unknown parameter " + name);
  return it->second;
}

template <class T>
size_t ParameterStore<T>::element_count() const {
  size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<size_t>(p.value.size());
  return n;
}

template <class T>
std::vector<std::string> ParameterStore<T>::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

template <class T>
void ParameterStore<T>::zero_grad() {
  for (auto& [_, p] : params_) p.grad.setZero();
}

template <class T>
double ParameterStore<T>::grad_norm() const {
  double s = 0.0;
  for (const auto& [_, p] : params_) s += static_cast<double>(p.grad.squaredNorm());
  return std::sqrt(s);
}

template <class T>
void ParameterStore<T>::scale_grads(T s) {
  for (auto& [_, p] : params_) p.grad *= s;
}

template class ParameterStore<float>;
template class ParameterStore<double>;

double cosine_lr(const AdamWConfig& cfg, int64_t step) {
  require(cfg.total_steps >= 1, ErrorKind::InvalidArgument, "total_steps must be positive");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  const double span = static_cast<double>(std::max<int64_t>(1, cfg.total_steps - cfg.warmup_steps));
  const double progress = std::clamp(static_cast<double>(step - cfg.warmup_steps) / span, 0.0, 1.0);
  const double floor = cfg.lr * cfg.final_lr_fraction;
  return floor + 0.5 * (cfg.lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class T>
double adamw_step(ParameterStore<T>& store, const AdamWConfig& cfg) {
  for (const auto& [name, p] : store)
    if (!p.grad.allFinite()) fail(ErrorKind::TrainingDivergence, "non-finite gradient in " + name);
  if (cfg.clip_norm > 0.0) {
    const double norm = store.grad_norm();
    if (norm > cfg.clip_norm) store.scale_grads(static_cast<T>(cfg.clip_norm / norm));
  }
  const double lr = cosine_lr(cfg, store.step);
  store.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(store.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(store.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(cfg.eps);
  const T decay = static_cast<T>(1.0 - lr * cfg.weight_decay);
  for (auto& [_, p] : store) {
    p.m = b1 * p.m + (T(1) - b1) * p.grad;
    p.v = b2 * p.v + (T(1) - b2) * p.grad.cwiseAbs2();
    if (cfg.weight_decay != 0.0) p.value *= decay;
    p.value.array() -= step_size * p.m.array() / ((p.v.array() * inv_bc2).sqrt() + eps);
  }
  return lr;
}

template double adamw_step<float>(ParameterStore<float>&, const AdamWConfig&);
template double adamw_step<double>(ParameterStore<double>&, const AdamWConfig&);

namespace {

constexpr char kTag[4] = {'P', 'R', 'M', 'S'};

}  // namespace

void save_checkpoint(const ParameterStore<float>& store, const std::filesystem::path& path, const nlohmann::json& meta) {
  nlohmann::json header;
  header["dtype"] = "f32";
  header["step"] = store.step;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, p] : store)
    header["tensors"].push_back({{"name", name}, {"shape", {p.value.rows(), p.value.cols()}}});
  const std::string h = header.dump();
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::Persistence, "cannot open " + path.string() + " for writing");
  os.write(io::kMagic, sizeof(io::kMagic));
  os.write(kTag, 4);
  const uint64_t len = h.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [_, p] : store)
    for (const Mat<float>* m : {&p.value, &p.m, &p.v})
      os.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(float)));
  os.flush();
  require(static_cast<bool>(os), ErrorKind::Persistence, "write failed for " + path.string());
}

ParameterStore<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  const auto bytes = io::read_bytes(path);
  size_t pos = 0;
  auto take = [&](void* dst, size_t n) {
    require(pos + n <= bytes.size(), ErrorKind::Persistence, "truncated checkpoint " + path.string());
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[6], tag[4];
  take(magic, 6);
  take(tag, 4);
  require(std::memcmp(magic, io::kMagic, 6) == 0 && std::memcmp(tag, kTag, 4) == 0, ErrorKind::Persistence,
          "not a parameter checkpoint: " + path.string());
  uint64_t len = 0;
  take(&len, sizeof(len));
  std::string h(len, '\0');
  take(h.data(), len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Persistence, std::string("malformed checkpoint header: ") + e.what());
  }
  require(header.value("dtype", "") == "f32", ErrorKind::Persistence, "unsupported checkpoint dtype");
  ParameterStore<float> store;
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("shape").at(0).get<Eigen::Index>();
    const auto cols = t.at("shape").at(1).get<Eigen::Index>();
    Mat<float> value(rows, cols);
    take(value.data(), static_cast<size_t>(value.size()) * sizeof(float));
    auto& p = store.add(t.at("name").get<std::string>(), std::move(value));
    take(p.m.data(), static_cast<size_t>(p.m.size()) * sizeof(float));
    take(p.v.data(), static_cast<size_t>(p.v.size()) * sizeof(float));
  }
  require(pos == bytes.size(), ErrorKind::Persistence, "trailing bytes in checkpoint " + path.string());
  store.step = header.at("step").get<int64_t>();
  if (meta) *meta = header.at("meta");
  return store;
}

}  // namespace nuiworld::nn
