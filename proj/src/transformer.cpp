#include "mvstr/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvstr/errors.hpp"
#include "mvstr/ops.hpp"

namespace mvstr {

namespace {

LinearParams init_linear(ParamStore& store, const std::string& name, int in, int out,
                         std::mt19937_64& rng) {
  const auto prec = store.precision();
  const double a = std::sqrt(6.0 / (in + out));
  return {store.add(name + ".w", uniform({in, out}, -a, a, rng, prec)),
          store.add(name + ".b", Tensor::zeros({out}, prec))};
}

BlockParams init_block(ParamStore& store, const std::string& name, int C, std::mt19937_64& rng) {
  const auto prec = store.precision();
  BlockParams p;
  p.attn.q = init_linear(store, name + ".attn.q", C, C, rng);
  p.attn.k = init_linear(store, name + ".attn.k", C, C, rng);
  p.attn.v = init_linear(store, name + ".attn.v", C, C, rng);
  p.attn.out = init_linear(store, name + ".attn.o", C, C, rng);
  p.ln1_g = store.add(name + ".ln1.g", Tensor::ones({C}, prec));
  p.ln1_b = store.add(name + ".ln1.b", Tensor::zeros({C}, prec));
  p.ffn1 = init_linear(store, name + ".ffn1", 2 * C, 2 * C, rng);
  p.ffn2 = init_linear(store, name + ".ffn2", 2 * C, C, rng);
  p.ln2_g = store.add(name + ".ln2.g", Tensor::ones({C}, prec));
  p.ln2_b = store.add(name + ".ln2.b", Tensor::zeros({C}, prec));
  return p;
}

// [..., j, C] -> [..., heads, j, C/heads]
Tensor split_heads(const Tensor& x, int heads) {
  Shape s = x.shape();
  const auto C = s.back();
  s.back() = heads;
  s.push_back(C / heads);
  const int r = static_cast<int>(s.size());
  return ops::transpose(ops::reshape(x, s), r - 3, r - 2);
}

// [..., heads, j, c] -> [..., j, heads * c]
Tensor merge_heads(const Tensor& x) {
  const int r = x.rank();
  Tensor t = ops::transpose(x, r - 3, r - 2);
  Shape s(t.shape().begin(), t.shape().end() - 2);
  s.push_back(t.dim(-2) * t.dim(-1));
  return ops::reshape(t, s);
}

Tensor pairwise_sum(const std::vector<Tensor>& xs, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return xs[lo];
  const auto mid = lo + (hi - lo) / 2;
  return ops::add(pairwise_sum(xs, lo, mid), pairwise_sum(xs, mid, hi));
}

Tensor stack(const std::vector<Tensor>& xs) {
  std::vector<Tensor> u;
  u.reserve(xs.size());
  for (const auto& x : xs) u.push_back(ops::unsqueeze(x, 0));
  return u.size() == 1 ? u[0] : ops::concat(u, 0);
}

}  // namespace

TransformerParams init_transformer(ParamStore& store, const TransformerConfig& config,
                                   std::mt19937_64& rng, const std::string& prefix) {
  if (config.channels <= 0 || config.heads <= 0 || config.channels % config.heads != 0) {
    throw ConfigError("transformer channels must be a positive multiple of heads");
  }
  if (config.rounds < 0) throw ConfigError("transformer rounds must be >= 0");
  if (config.pos_h <= 0 || config.pos_w <= 0) throw ConfigError("positional table size must be positive");
  TransformerParams p;
  p.config = config;
  const int C = config.channels;
  p.pos = store.add(prefix + ".pos",
                    uniform({config.pos_h * config.pos_w, C}, -0.1, 0.1, rng, store.precision()));
  for (int z = 0; z < config.rounds; ++z) {
    const auto name = prefix + ".round" + std::to_string(z);
    RoundParams r;
    r.self = init_block(store, name + ".s", C, rng);
    r.cross_r = init_block(store, name + ".cr", C, rng);
    r.cross_s = init_block(store, name + ".cs", C, rng);
    p.rounds.push_back(std::move(r));
  }
  return p;
}

Tensor linear(const Tensor& x, const LinearParams& p) {
  return ops::add(ops::matmul(x, p.w), p.b);
}

Tensor positional_table(const TransformerParams& params, std::int64_t h, std::int64_t w) {
  const std::int64_t ph = params.config.pos_h;
  const std::int64_t pw = params.config.pos_w;
  const auto C = params.pos.dim(1);
  if (h == ph && w == pw) return params.pos;
  std::vector<double> g(static_cast<std::size_t>(h * w * 2));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(2 * (y * w + x));
      g[i] = w > 1 ? static_cast<double>(x) * (pw - 1) / (w - 1) : 0.0;
      g[i + 1] = h > 1 ? static_cast<double>(y) * (ph - 1) / (h - 1) : 0.0;
    }
  }
  Tensor grid = Tensor::from_vector({1, h, w, 2}, std::span<const double>(g), params.pos.precision());
  Tensor img = ops::unsqueeze(ops::permute(ops::reshape(params.pos, {ph, pw, C}), {2, 0, 1}), 0);
  Tensor resized = ops::grid_sample_bilinear(img, grid).output;  // [1,C,h,w]
  return ops::reshape(ops::permute(ops::squeeze(resized, 0), {1, 2, 0}), {h * w, C});
}

Tensor encode_and_flatten(const Tensor& F, const Tensor& P) {
  if (F.rank() != 3 && F.rank() != 4) {
    throw DimensionError("encode_and_flatten expects [C,h,w] or [B,C,h,w], got " + shape_str(F.shape()));
  }
  const bool batched = F.rank() == 4;
  const int r = F.rank();
  const auto C = F.dim(r - 3);
  const auto j = F.dim(r - 2) * F.dim(r - 1);
  if (P.rank() != 2 || P.dim(0) != j || P.dim(1) != C) {
    throw DimensionError("positional table " + shape_str(P.shape()) + " does not match features " +
                         shape_str(F.shape()));
  }
  Tensor x = batched ? ops::reshape(ops::permute(F, {0, 2, 3, 1}), {F.dim(0), j, C})
                     : ops::reshape(ops::permute(F, {1, 2, 0}), {j, C});
  return ops::add(x, P);
}

Tensor unflatten(const Tensor& X, std::int64_t h, std::int64_t w) {
  if ((X.rank() != 2 && X.rank() != 3) || X.dim(-2) != h * w) {
    throw DimensionError("unflatten: " + shape_str(X.shape()) + " is not a sequence of " +
                         std::to_string(h * w));
  }
  const auto C = X.dim(-1);
  if (X.rank() == 2) return ops::permute(ops::reshape(X, {h, w, C}), {2, 0, 1});
  return ops::permute(ops::reshape(X, {X.dim(0), h, w, C}), {0, 3, 1, 2});
}

Tensor linear_attention(const Tensor& Q, const Tensor& K, const Tensor& V, int heads) {
  const auto C = Q.dim(-1);
  if (heads <= 0 || C % heads != 0) {
    throw ConfigError("attention width " + std::to_string(C) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (K.dim(-1) != C || V.dim(-1) != C || K.dim(-2) != V.dim(-2)) {
    throw DimensionError("linear_attention: Q " + shape_str(Q.shape()) + ", K " + shape_str(K.shape()) +
                         ", V " + shape_str(V.shape()));
  }
  Tensor fq = ops::elu_plus_one(split_heads(Q, heads));
  Tensor fk = ops::elu_plus_one(split_heads(K, heads));
  Tensor v = split_heads(V, heads);
  const int r = fk.rank();
  Tensor kv = ops::matmul(ops::transpose(fk, r - 2, r - 1), v);        // [..., h, c, c]
  Tensor ksum = ops::sum(fk, r - 2, true);                              // [..., h, 1, c]
  Tensor num = ops::matmul(fq, kv);                                     // [..., h, j, c]
  Tensor den = ops::matmul(fq, ops::transpose(ksum, r - 2, r - 1));     // [..., h, j, 1]
  return merge_heads(ops::div(num, den));
}

Tensor multi_head_attention(const Tensor& q, const Tensor& kv, const AttentionParams& p, int heads) {
  Tensor a = linear_attention(linear(q, p.q), linear(kv, p.k), linear(kv, p.v), heads);
  return linear(a, p.out);
}

Tensor attention_block(const Tensor& q, const Tensor& kv, const BlockParams& p, int heads) {
  Tensor a = ops::layer_norm(multi_head_attention(q, kv, p.attn, heads), p.ln1_g, p.ln1_b);
  if (a.shape() != q.shape()) {
    throw DimensionError("attention_block: query " + shape_str(q.shape()) + " vs attention output " +
                         shape_str(a.shape()));
  }
  Tensor x = ops::concat({a, q}, q.rank() - 1);
  Tensor f = linear(ops::elu(linear(x, p.ffn1)), p.ffn2);
  return ops::add(ops::layer_norm(f, p.ln2_g, p.ln2_b), q);
}

Tensor layer_s(const Tensor& X, const BlockParams& p, int heads) {
  return attention_block(X, X, p, heads);
}

Tensor layer_cr(const Tensor& c_r, const std::vector<Tensor>& c_s, const std::vector<int>& view_ids,
                const BlockParams& p, int heads) {
  if (c_s.empty()) throw UsageError("layer_cr needs at least one source view");
  if (view_ids.size() != c_s.size()) throw UsageError("layer_cr: one view id per source required");
  std::vector<std::size_t> order(c_s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return view_ids[a] < view_ids[b]; });
  std::vector<Tensor> sorted;
  for (auto i : order) sorted.push_back(c_s[i]);
  const auto N = sorted.size();
  Tensor kv = stack(sorted);
  Tensor q = stack(std::vector<Tensor>(N, c_r));
  Tensor per_source = attention_block(q, kv, p, heads);  // [N,j,C]
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < N; ++i) {
    parts.push_back(ops::squeeze(ops::slice(per_source, 0, static_cast<std::int64_t>(i), 1), 0));
  }
  return ops::mul_scalar(pairwise_sum(parts, 0, N), 1.0 / static_cast<double>(N));
}

Tensor layer_cs(const Tensor& c_s, const Tensor& t_r, const BlockParams& p, int heads) {
  return attention_block(c_s, t_r, p, heads);
}

TransformerOutput transformer_stack(const Tensor& f_ref, const Tensor& f_src,
                                    const std::vector<int>& src_ids, const TransformerParams& params) {
  if (f_ref.rank() != 3 || f_src.rank() != 4 || f_src.dim(1) != f_ref.dim(0) ||
      f_src.dim(2) != f_ref.dim(1) || f_src.dim(3) != f_ref.dim(2)) {
    throw DimensionError("transformer_stack: reference " + shape_str(f_ref.shape()) + " and sources " +
                         shape_str(f_src.shape()) + " disagree");
  }
  const auto N = f_src.dim(0);
  if (static_cast<std::int64_t>(src_ids.size()) != N) {
    throw UsageError("transformer_stack: one view id per source required");
  }
  const auto h = f_ref.dim(1);
  const auto w = f_ref.dim(2);
  const int heads = params.config.heads;
  Tensor P = positional_table(params, h, w);
  Tensor x_r = encode_and_flatten(f_ref, P);
  Tensor x_s = encode_and_flatten(f_src, P);
  for (const auto& round : params.rounds) {
    Tensor s = layer_s(ops::concat({ops::unsqueeze(x_r, 0), x_s}, 0), round.self, heads);
    Tensor s_r = ops::squeeze(ops::slice(s, 0, 0, 1), 0);
    Tensor s_s = ops::slice(s, 0, 1, N);
    std::vector<Tensor> srcs;
    for (std::int64_t i = 0; i < N; ++i) srcs.push_back(ops::squeeze(ops::slice(s_s, 0, i, 1), 0));
    x_r = layer_cr(s_r, srcs, src_ids, round.cross_r, heads);
    x_s = layer_cs(s_s, x_r, round.cross_s, heads);
  }
  return {unflatten(x_r, h, w), unflatten(x_s, h, w)};
}

}  // namespace mvstr
