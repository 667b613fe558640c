#pragma once

#include <random>
#include <string>
#include <vector>

#include "mvstr/params.hpp"
#include "mvstr/tensor.hpp"

namespace mvstr {

// y = x W + b with W [in, out].
struct LinearParams {
  Tensor w;
  Tensor b;
};

struct AttentionParams {
  LinearParams q, k, v, out;
};

// One attention block, used for Layer-S (self) and both cross layers:
//   y = LN2(FFN(concat(LN1(MHA(q, kv)), q))) + q
// with FFN 2C -> 2C (ELU) -> C.
struct BlockParams {
  AttentionParams attn;
  Tensor ln1_g, ln1_b;
  LinearParams ffn1, ffn2;
  Tensor ln2_g, ln2_b;
};

struct RoundParams {
  BlockParams self;    // Layer-S
  BlockParams cross_r; // Layer-C^r
  BlockParams cross_s; // Layer-C^s
};

struct TransformerConfig {
  int channels = 32;
  int heads = 4;
  int rounds = 4;  // Z
  // Resolution the positional table is stored at.
  int pos_h = 16;
  int pos_w = 16;
};

struct TransformerParams {
  TransformerConfig config;
  Tensor pos;  // [pos_h * pos_w, C]
  std::vector<RoundParams> rounds;
};

TransformerParams init_transformer(ParamStore& store, const TransformerConfig& config,
                                   std::mt19937_64& rng, const std::string& prefix = "tf");

Tensor linear(const Tensor& x, const LinearParams& p);

// Positional table for an h x w map; bilinearly resized when the size differs
// from the stored one.
Tensor positional_table(const TransformerParams& params, std::int64_t h, std::int64_t w);

// F [C,h,w] -> X [h*w, C] (or batched [B,C,h,w] -> [B,h*w,C]); row k is
// pixel (k / w, k % w) plus P[k].
Tensor encode_and_flatten(const Tensor& F, const Tensor& P);
// Inverse layout of encode_and_flatten without the encoding.
Tensor unflatten(const Tensor& X, std::int64_t h, std::int64_t w);

// Kernelized attention with phi(x) = elu(x) + 1, no projections.
// Q, K, V are [..., j, C]; batch dims broadcast.
Tensor linear_attention(const Tensor& Q, const Tensor& K, const Tensor& V, int heads);
// Projected multi-head attention: linear_attention(q Wq, kv Wk, kv Wv) Wo.
Tensor multi_head_attention(const Tensor& q, const Tensor& kv, const AttentionParams& p, int heads);

Tensor attention_block(const Tensor& q, const Tensor& kv, const BlockParams& p, int heads);

// X [j,C] or [V,j,C]; self attention per view.
Tensor layer_s(const Tensor& X, const BlockParams& p, int heads);

// Cross attention from the reference to each source, averaged. Sources
// are summed pairwise in ascending view id, so the result does not depend
// on their order. Throws UsageError with no sources.
Tensor layer_cr(const Tensor& c_r, const std::vector<Tensor>& c_s, const std::vector<int>& view_ids,
                const BlockParams& p, int heads);

// Cross attention from every source ([N,j,C] or [j,C]) to T_r.
Tensor layer_cs(const Tensor& c_s, const Tensor& t_r, const BlockParams& p, int heads);

struct TransformerOutput {
  Tensor ref;      // [C,h,w]
  Tensor sources;  // [N,C,h,w], same order as the input
};

// f_ref [C,h,w]; f_src [N,C,h,w]; src_ids gives each source's view id.
TransformerOutput transformer_stack(const Tensor& f_ref, const Tensor& f_src,
                                    const std::vector<int>& src_ids, const TransformerParams& params);

}  // namespace mvstr
