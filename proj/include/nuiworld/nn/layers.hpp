#pragma once

#include <string>

#include "nuiworld/nn/params.hpp"
#include "nuiworld/nn/tape.hpp"

namespace nuiworld::nn {

/// A tape plus the store its parameters come from.
template <class T>
struct Graph {
  Tape<T>& tape;
  ParameterStore<T>& store;
  Var p(const std::string& name) { return tape.param(store, name); }
};

/// Graph over parameters that are only read (no backward through it).
template <class T>
Graph<T> frozen_graph(Tape<T>& t, const ParameterStore<T>& s) {
  return Graph<T>{t, const_cast<ParameterStore<T>&>(s)};
}

// Parameter creation. Names are prefix + "." + part.
template <class T>
void add_linear(ParameterStore<T>& s, const std::string& prefix, int in, int out, uint64_t seed, bool bias = true,
                Init init = Init::Xavier, double scale = 1.0);
template <class T>
void add_attention(ParameterStore<T>& s, const std::string& prefix, int width, int kv_width, uint64_t seed);
template <class T>
void add_ffn(ParameterStore<T>& s, const std::string& prefix, int width, int hidden, uint64_t seed);
/// Self-attention + feed-forward block with adaptive scale/shift/gate from a
/// conditioning vector; the modulation projection starts at zero so the
/// block is the identity at initialization. ctx_width > 0 adds a
/// cross-attention sublayer between the two.
template <class T>
void add_modulated_block(ParameterStore<T>& s, const std::string& prefix, int width, int cond_width, int ctx_width,
                         uint64_t seed);
/// Pre-norm self-attention + feed-forward block.
template <class T>
void add_transformer_block(ParameterStore<T>& s, const std::string& prefix, int width, uint64_t seed);

// Forward builders.
template <class T>
Var linear(Graph<T>& g, const std::string& prefix, Var x);
/// Projected multi-head attention without residual: out(attn(q(xq), k(xkv), v(xkv))).
template <class T>
Var attention_core(Graph<T>& g, const std::string& prefix, Var xq, Var xkv, int heads, int group = 0);
/// x + attention over LN(x).
template <class T>
Var self_attention(Graph<T>& g, const std::string& prefix, Var x, int heads, int group = 0);
/// x + attention from LN(x) over LN(kv).
template <class T>
Var cross_attention(Graph<T>& g, const std::string& prefix, Var x, Var kv, int heads);
/// Feed-forward without residual: w2(gelu(w1(x))).
template <class T>
Var ffn_core(Graph<T>& g, const std::string& prefix, Var x);
template <class T>
Var transformer_block(Graph<T>& g, const std::string& prefix, Var x, int heads);
/// cond is one row shared by all tokens or one row per token; ctx may be
/// invalid when the block has no cross-attention. group > 0 restricts
/// self-attention to consecutive runs of that many tokens.
template <class T>
Var modulated_block(Graph<T>& g, const std::string& prefix, Var x, Var cond, int heads, Var ctx = {}, int group = 0);

/// Interleaved [sin(v w_0), cos(v w_0), sin(v w_1), ...] with
/// w_i = 10000^(-2i/dim).
template <class T>
Mat<T> sinusoidal_embed(double value, int dim);

/// Each token's channels split into k consecutive tokens: V x c -> (V k) x (c / k).
template <class T>
Mat<T> pixel_shuffle_tokens(const Mat<T>& x, int k);
template <class T>
Mat<T> pixel_unshuffle_tokens(const Mat<T>& x, int k);

}  // namespace nuiworld::nn
