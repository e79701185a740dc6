#include "nuiworld/nn/layers.hpp"

#include <cmath>

namespace nuiworld::nn {

template <class T>
void add_linear(ParameterStore<T>& s, const std::string& prefix, int in, int out, uint64_t seed, bool bias, Init init,
                double scale) {
  s.create(prefix + ".w", in, out, init, seed, scale);
  if (bias) s.create(prefix + ".b", 1, out, Init::Zeros, seed);
}

template <class T>
void add_attention(ParameterStore<T>& s, const std::string& prefix, int width, int kv_width, uint64_t seed) {
  add_linear(s, prefix + ".q", width, width, seed);
  add_linear(s, prefix + ".k", kv_width, width, seed, false);
  add_linear(s, prefix + ".v", kv_width, width, seed);
  add_linear(s, prefix + ".o", width, width, seed);
}

template <class T>
void add_ffn(ParameterStore<T>& s, const std::string& prefix, int width, int hidden, uint64_t seed) {
  add_linear(s, prefix + ".w1", width, hidden, seed);
  add_linear(s, prefix + ".w2", hidden, width, seed);
}

template <class T>
void add_modulated_block(ParameterStore<T>& s, const std::string& prefix, int width, int cond_width, int ctx_width,
                         uint64_t seed) {
  add_linear(s, prefix + ".mod", cond_width, 6 * width, seed, true, Init::Zeros);
  add_attention(s, prefix + ".attn", width, width, seed);
  if (ctx_width > 0) add_attention(s, prefix + ".xattn", width, ctx_width, seed);
  add_ffn(s, prefix + ".ffn", width, 4 * width, seed);
}

template <class T>
void add_transformer_block(ParameterStore<T>& s, const std::string& prefix, int width, uint64_t seed) {
  add_attention(s, prefix + ".attn", width, width, seed);
  add_ffn(s, prefix + ".ffn", width, 4 * width, seed);
}

template <class T>
Var linear(Graph<T>& g, const std::string& prefix, Var x) {
  const std::string b = prefix + ".b";
  return g.tape.linear(x, g.p(prefix + ".w"), g.store.has(b) ? g.p(b) : Var{});
}

template <class T>
Var attention_core(Graph<T>& g, const std::string& prefix, Var xq, Var xkv, int heads, int group) {
  const Var q = linear(g, prefix + ".q", xq);
  const Var k = linear(g, prefix + ".k", xkv);
  const Var v = linear(g, prefix + ".v", xkv);
  return linear(g, prefix + ".o", g.tape.attention(q, k, v, heads, group));
}

template <class T>
Var self_attention(Graph<T>& g, const std::string& prefix, Var x, int heads, int group) {
  const Var h = g.tape.layer_norm(x);
  return g.tape.add(x, attention_core(g, prefix, h, h, heads, group));
}

template <class T>
Var cross_attention(Graph<T>& g, const std::string& prefix, Var x, Var kv, int heads) {
  require(g.tape.rows(kv) >= 1, ErrorKind::InvalidArgument, "cross_attention: empty key/value set");
  return g.tape.add(x, attention_core(g, prefix, g.tape.layer_norm(x), g.tape.layer_norm(kv), heads));
}

template <class T>
Var ffn_core(Graph<T>& g, const std::string& prefix, Var x) {
  return linear(g, prefix + ".w2", g.tape.gelu(linear(g, prefix + ".w1", x)));
}

template <class T>
Var transformer_block(Graph<T>& g, const std::string& prefix, Var x, int heads) {
  x = self_attention(g, prefix + ".attn", x, heads);
  return g.tape.add(x, ffn_core(g, prefix + ".ffn", g.tape.layer_norm(x)));
}

template <class T>
Var modulated_block(Graph<T>& g, const std::string& prefix, Var x, Var cond, int heads, Var ctx, int group) {
  auto& t = g.tape;
  const int w = t.cols(x);
  const bool per_token = t.rows(cond) == t.rows(x) && t.rows(cond) != 1;
  require(t.rows(cond) == 1 || per_token, ErrorKind::InvalidArgument,
          "modulated_block: conditioning must be one row or one row per token");
  const Var mod = linear(g, prefix + ".mod", t.silu(cond));
  require(t.cols(mod) == 6 * w, ErrorKind::InvalidArgument, "modulated_block: conditioning width mismatch");
  auto part = [&](int i) { return t.slice_cols(mod, i * w, w); };
  auto gate = [&](Var h, Var by) { return per_token ? t.mul(h, by) : t.mul_row(h, by); };
  auto modulate = [&](Var h, Var shift, Var scale) {
    const Var scaled = gate(h, t.add_scalar(scale, T(1)));
    return per_token ? t.add(scaled, shift) : t.add_row(scaled, shift);
  };

  Var h = modulate(t.layer_norm(x), part(0), part(1));
  x = t.add(x, gate(attention_core(g, prefix + ".attn", h, h, heads, group), part(2)));
  if (ctx.valid()) x = t.add(x, attention_core(g, prefix + ".xattn", t.layer_norm(x), t.layer_norm(ctx), heads));
  h = modulate(t.layer_norm(x), part(3), part(4));
  return t.add(x, gate(ffn_core(g, prefix + ".ffn", h), part(5)));
}

template <class T>
Mat<T> sinusoidal_embed(double value, int dim) {
  require(dim >= 2 && dim % 2 == 0, ErrorKind::InvalidArgument, "sinusoidal_embed: dim must be even");
  Mat<T> out(1, dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double w = std::pow(10000.0, -2.0 * i / dim);
    out(0, 2 * i) = static_cast<T>(std::sin(value * w));
    out(0, 2 * i + 1) = static_cast<T>(std::cos(value * w));
  }
  return out;
}

template <class T>
Mat<T> pixel_shuffle_tokens(const Mat<T>& x, int k) {
  require(k >= 1 && x.cols() % k == 0, ErrorKind::InvalidArgument, "pixel_shuffle_tokens: channels not divisible by k");
  return Eigen::Map<const Mat<T>>(x.data(), x.rows() * k, x.cols() / k);
}

template <class T>
Mat<T> pixel_unshuffle_tokens(const Mat<T>& x, int k) {
  require(k >= 1 && x.rows() % k == 0, ErrorKind::InvalidArgument, "pixel_unshuffle_tokens: rows not divisible by k");
  return Eigen::Map<const Mat<T>>(x.data(), x.rows() / k, x.cols() * k);
}

#define NUIWORLD_INSTANTIATE(T)                                                                                      \
  template void add_linear<T>(ParameterStore<T>&, const std::string&, int, int, uint64_t, bool, Init, double);     \
  template void add_attention<T>(ParameterStore<T>&, const std::string&, int, int, uint64_t);                      \
  template void add_ffn<T>(ParameterStore<T>&, const std::string&, int, int, uint64_t);                            \
  template void add_modulated_block<T>(ParameterStore<T>&, const std::string&, int, int, int, uint64_t);           \
  template void add_transformer_block<T>(ParameterStore<T>&, const std::string&, int, uint64_t);                   \
  template Var linear<T>(Graph<T>&, const std::string&, Var);                                                      \
  template Var attention_core<T>(Graph<T>&, const std::string&, Var, Var, int, int);                               \
  template Var self_attention<T>(Graph<T>&, const std::string&, Var, int, int);                                    \
  template Var cross_attention<T>(Graph<T>&, const std::string&, Var, Var, int);                                   \
  template Var ffn_core<T>(Graph<T>&, const std::string&, Var);                                                    \
  template Var transformer_block<T>(Graph<T>&, const std::string&, Var, int);                                      \
  template Var modulated_block<T>(Graph<T>&, const std::string&, Var, Var, int, Var, int);                         \
  template Mat<T> sinusoidal_embed<T>(double, int);                                                                \
  template Mat<T> pixel_shuffle_tokens<T>(const Mat<T>&, int);                                                     \
  template Mat<T> pixel_unshuffle_tokens<T>(const Mat<T>&, int);

NUIWORLD_INSTANTIATE(float)
NUIWORLD_INSTANTIATE(double)

#undef NUIWORLD_INSTANTIATE

}  // namespace nuiworld::nn
