// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal attention: one post-norm encoder block whose queries come from
// one modality and whose keys/values come from the other.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dign/autodiff.hpp"
#include "dign/dgn.hpp"
#include "dign/errors.hpp"
#include "dign/gradcheck.hpp"
#include "dign/rng.hpp"

namespace dign {

struct AttentionBlock {
  std::size_t heads = 1;
  std::size_t d = 0;
  std::size_t d_ff = 0;
  // Head h owns rows [h·d/H, (h+1)·d/H) of wq, wk, wv.
  Var wq, wk, wv, wo;
  Var ln1_gain, ln1_bias;
  Var ff_w1, ff_b1, ff_w2, ff_b2;
  Var ln2_gain, ln2_bias;

  std::size_t head_dim() const { return d / heads; }

  static AttentionBlock init(std::size_t heads, std::size_t d, std::size_t d_ff, Rng& rng) {
    if (heads == 0 || d % heads != 0) throw ConfigError("head count must divide d_out");
    AttentionBlock b;
    b.heads = heads;
    b.d = d;
    b.d_ff = d_ff;
    b.wq = parameter(uniform_init({d, d}, d, rng));
    b.wk = parameter(uniform_init({d, d}, d, rng));
    b.wv = parameter(uniform_init({d, d}, d, rng));
    b.wo = parameter(uniform_init({d, d}, d, rng));
    b.ln1_gain = parameter(Tensor({d}, 1.0));
    b.ln1_bias = parameter(Tensor::zeros({d}));
    b.ff_w1 = parameter(uniform_init({d_ff, d}, d, rng));
    b.ff_b1 = parameter(Tensor::zeros({d_ff}));
    b.ff_w2 = parameter(uniform_init({d, d_ff}, d_ff, rng));
    b.ff_b2 = parameter(Tensor::zeros({d}));
    b.ln2_gain = parameter(Tensor({d}, 1.0));
    b.ln2_bias = parameter(Tensor::zeros({d}));
    return b;
  }

  std::vector<NamedParam> named(const std::string& prefix) const {
    return {{prefix + ".wq", wq},           {prefix + ".wk", wk},           {prefix + ".wv", wv},
            {prefix + ".wo", wo},           {prefix + ".ln1_gain", ln1_gain}, {prefix + ".ln1_bias", ln1_bias},
            {prefix + ".ff_w1", ff_w1},     {prefix + ".ff_b1", ff_b1},     {prefix + ".ff_w2", ff_w2},
            {prefix + ".ff_b2", ff_b2},     {prefix + ".ln2_gain", ln2_gain}, {prefix + ".ln2_bias", ln2_bias}};
  }
};

/// Separate blocks for the two directions.
struct FusionParams {
  AttentionBlock phrase;  // phrases attend over regions
  AttentionBlock visual;  // regions attend over phrases

  static FusionParams init(std::size_t heads, std::size_t d, Rng& rng) {
    FusionParams p;
    p.phrase = AttentionBlock::init(heads, d, 2 * d, rng);
    p.visual = AttentionBlock::init(heads, d, 2 * d, rng);
    return p;
  }

  std::vector<NamedParam> named(const std::string& prefix) const {
    auto out = phrase.named(prefix + ".phrase");
    auto v = visual.named(prefix + ".visual");
    out.insert(out.end(), v.begin(), v.end());
    return out;
  }
};

struct AttentionResult {
  Var output;
  std::vector<Tensor> attention;  // per head, a × b, rows on the simplex
};

struct FusionOptions {
  bool training = false;
  double dropout = 0.1;
  Rng* rng = nullptr;
};

inline AttentionResult multihead_cross_attention(const Var& queries, const Var& keys_values, const AttentionBlock& blk,
                                                 const FusionOptions& opt = {}) {
  const Tensor& qv = queries.value();
  const Tensor& kvv = keys_values.value();
  if (kvv.rank() != 2 || kvv.rows() == 0) throw ContractError("cross attention needs at least one key");
  if (qv.cols() != blk.d || kvv.cols() != blk.d) throw DimensionError("cross attention width mismatch");

  auto maybe_dropout = [&](const Var& v) {
    if (!opt.training || opt.dropout <= 0.0) return v;
    if (!opt.rng) throw ContractError("training-mode dropout needs an rng");
    return dropout(v, opt.dropout, *opt.rng);
  };

  const std::size_t dh = blk.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var q = matmul_nt(queries, blk.wq);
  Var k = matmul_nt(keys_values, blk.wk);
  Var v = matmul_nt(keys_values, blk.wv);

  AttentionResult res;
  std::vector<Var> heads;
  for (std::size_t h = 0; h < blk.heads; ++h) {
    Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = slice_cols(v, h * dh, (h + 1) * dh);
    Var p = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
    res.attention.push_back(p.value());
    heads.push_back(matmul(p, vh));
  }
  Var attn = blk.heads == 1 ? heads[0] : concat_cols(heads);
  Var x = layer_norm_rows(add(queries, maybe_dropout(matmul_nt(attn, blk.wo))), blk.ln1_gain, blk.ln1_bias);
  Var ff = add_row_bias(matmul_nt(relu(add_row_bias(matmul_nt(x, blk.ff_w1), blk.ff_b1)), blk.ff_w2), blk.ff_b2);
  res.output = layer_norm_rows(add(x, maybe_dropout(ff)), blk.ln2_gain, blk.ln2_bias);
  return res;
}

struct FusedFeatures {
  Var phrase;  // c^T, n × d
  Var visual;  // c^V, m × d
};

inline FusedFeatures fuse(const Var& h_phrase, const Var& h_visual, const FusionParams& params,
                          const FusionOptions& opt = {}) {
  return {multihead_cross_attention(h_phrase, h_visual, params.phrase, opt).output,
          multihead_cross_attention(h_visual, h_phrase, params.visual, opt).output};
}

/// S[i][j] = <c^T_i, c^V_j>.
inline Var similarity_matrix(const Var& c_phrase, const Var& c_visual) { return matmul_nt(c_phrase, c_visual); }

}  // namespace dign
