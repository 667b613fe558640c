#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mvstr/autograd.hpp"
#include "mvstr/errors.hpp"
#include "mvstr/gradcheck.hpp"
#include "mvstr/ops.hpp"
#include "mvstr/transformer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mvstr;
using testing::max_abs_diff;
using testing::quadratic_attention;
using testing::random_tensor;

namespace {

Tensor permute_rows(const Tensor& x, const std::vector<std::int64_t>& perm) {
  std::vector<Tensor> rows;
  for (auto p : perm) rows.push_back(ops::slice(x, x.rank() - 2, p, 1));
  return ops::concat(rows, x.rank() - 2);
}

TransformerParams small_params(ParamStore& store, int rounds, int hw, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TransformerConfig cfg;
  cfg.channels = 8;
  cfg.heads = 4;
  cfg.rounds = rounds;
  cfg.pos_h = hw;
  cfg.pos_w = hw;
  return init_transformer(store, cfg, rng);
}

}  // namespace

TEST_CASE("encode_and_flatten") {
  std::mt19937_64 rng(1);
  auto F = random_tensor({3, 2, 4}, rng);
  auto X = encode_and_flatten(F, Tensor::zeros({8, 3}));
  CHECK(X.shape() == Shape{8, 3});
  for (std::int64_t k = 0; k < 8; ++k) {
    for (std::int64_t c = 0; c < 3; ++c) CHECK(X.at({k, c}) == F.at({c, k / 4, k % 4}));
  }
  auto P = random_tensor({8, 3}, rng);
  auto Z = encode_and_flatten(Tensor::zeros({2, 3, 2, 4}), P);
  CHECK(Z.shape() == Shape{2, 8, 3});
  CHECK(max_abs_diff(ops::slice(Z, 0, 0, 1), ops::unsqueeze(P, 0)) == 0.0);
  CHECK(max_abs_diff(ops::slice(Z, 0, 1, 1), ops::unsqueeze(P, 0)) == 0.0);
  CHECK(max_abs_diff(unflatten(encode_and_flatten(F, Tensor::zeros({8, 3})), 2, 4), F) == 0.0);
  CHECK_THROWS_AS(encode_and_flatten(F, Tensor::zeros({9, 3})), DimensionError);
}

TEST_CASE("positional table resizing") {
  ParamStore store(Precision::verification);
  auto p = small_params(store, 0, 4, 2);
  CHECK(positional_table(p, 4, 4).same_impl(p.pos));
  auto big = positional_table(p, 7, 7);
  CHECK(big.shape() == Shape{49, 8});
  // Corners are kept exactly.
  for (std::int64_t c = 0; c < 8; ++c) {
    CHECK(big.at({0, c}) == doctest::Approx(p.pos.at({0, c})));
    CHECK(big.at({48, c}) == doctest::Approx(p.pos.at({15, c})));
  }
}

TEST_CASE("linear attention matches the quadratic oracle") {
  std::mt19937_64 rng(3);
  for (std::int64_t j : {1, 2, 7, 64}) {
    auto Q = random_tensor({j, 8}, rng, -3, 3, Precision::verification);
    auto K = random_tensor({j, 8}, rng, -3, 3, Precision::verification);
    auto V = random_tensor({j, 8}, rng, -3, 3, Precision::verification);
    auto got = linear_attention(Q, K, V, 4).to_vector();
    auto want = quadratic_attention(Q.to_vector(), K.to_vector(), V.to_vector(), static_cast<std::size_t>(j), 8, 4);
    CHECK(max_abs_diff(got, want) < 1e-10);
    if (j == 1) CHECK(max_abs_diff(got, V.to_vector()) < 1e-12);
  }
  CHECK_THROWS_AS(linear_attention(Tensor::zeros({2, 6}), Tensor::zeros({2, 6}), Tensor::zeros({2, 6}), 4),
                  ConfigError);
}

TEST_CASE("linear attention is permutation equivariant") {
  std::mt19937_64 rng(4);
  auto Q = random_tensor({10, 8}, rng, -1, 1, Precision::verification);
  auto K = random_tensor({10, 8}, rng, -1, 1, Precision::verification);
  auto V = random_tensor({10, 8}, rng, -1, 1, Precision::verification);
  std::vector<std::int64_t> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto a = permute_rows(linear_attention(Q, K, V, 4), perm);
  auto b = linear_attention(permute_rows(Q, perm), permute_rows(K, perm), permute_rows(V, perm), 4);
  CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("multi-head attention with one token returns the projected value") {
  ParamStore store(Precision::verification);
  auto p = small_params(store, 1, 1, 5);
  std::mt19937_64 rng(5);
  auto q = random_tensor({1, 8}, rng, -1, 1, Precision::verification);
  auto kv = random_tensor({1, 8}, rng, -1, 1, Precision::verification);
  const auto& attn = p.rounds[0].self.attn;
  auto out = multi_head_attention(q, kv, attn, 4);
  auto expect = linear(linear(kv, attn.v), attn.out);
  CHECK(max_abs_diff(out, expect) < 1e-12);
}

TEST_CASE("layer_s") {
  ParamStore store(Precision::verification);
  auto p = small_params(store, 1, 3, 6);
  std::mt19937_64 rng(6);
  auto X = random_tensor({9, 8}, rng, -1, 1, Precision::verification);
  CHECK(layer_s(X, p.rounds[0].self, 4).shape() == Shape{9, 8});

  // Zero FFN and zero LN2 gain: output is beta + X.
  BlockParams b = p.rounds[0].self;
  b.ffn1.w = Tensor::zeros(b.ffn1.w.shape(), Precision::verification);
  b.ffn2.w = Tensor::zeros(b.ffn2.w.shape(), Precision::verification);
  b.ln2_g = Tensor::zeros({8}, Precision::verification);
  b.ln2_b = random_tensor({8}, rng, -1, 1, Precision::verification);
  CHECK(max_abs_diff(layer_s(X, b, 4), ops::add(X, b.ln2_b)) < 1e-12);

  auto report = gradcheck(
      [&](const std::vector<Tensor>& in) {
        BlockParams q = p.rounds[0].self;
        q.attn.q.w = in[1];
        q.ffn1.w = in[2];
        auto y = layer_s(in[0], q, 4);
        return ops::sum(ops::mul(y, y));
      },
      {X, p.rounds[0].self.attn.q.w, p.rounds[0].self.ffn1.w}, {}, "layer_s");
  CHECK(report.max_rel_error < 1e-3);
}

TEST_CASE("layer_cr averaging") {
  ParamStore store(Precision::verification);
  auto p = small_params(store, 1, 3, 7);
  const auto& blk = p.rounds[0].cross_r;
  std::mt19937_64 rng(7);
  auto cr = random_tensor({9, 8}, rng, -1, 1, Precision::verification);
  std::vector<Tensor> cs;
  for (int i = 0; i < 3; ++i) cs.push_back(random_tensor({9, 8}, rng, -1, 1, Precision::verification));

  auto one = layer_cr(cr, {cs[0]}, {4}, blk, 4);
  CHECK(max_abs_diff(one, attention_block(cr, cs[0], blk, 4)) == 0.0);
  CHECK(max_abs_diff(layer_cr(cr, {cs[0], cs[0]}, {4, 5}, blk, 4), one) == 0.0);

  auto abc = layer_cr(cr, {cs[0], cs[1], cs[2]}, {1, 2, 3}, blk, 4);
  auto cab = layer_cr(cr, {cs[2], cs[0], cs[1]}, {3, 1, 2}, blk, 4);
  CHECK(max_abs_diff(abc, cab) == 0.0);

  CHECK_THROWS_AS(layer_cr(cr, {}, {}, blk, 4), UsageError);
}

TEST_CASE("layer_cs") {
  ParamStore store(Precision::verification);
  auto p = small_params(store, 1, 3, 8);
  const auto& blk = p.rounds[0].cross_s;
  std::mt19937_64 rng(8);
  auto tr = random_tensor({9, 8}, rng, -1, 1, Precision::verification);
  auto s = random_tensor({9, 8}, rng, -1, 1, Precision::verification);
  auto out = layer_cs(ops::concat({ops::unsqueeze(s, 0), ops::unsqueeze(s, 0)}, 0), tr, blk, 4);
  CHECK(out.shape() == Shape{2, 9, 8});
  CHECK(max_abs_diff(ops::slice(out, 0, 0, 1), ops::slice(out, 0, 1, 1)) == 0.0);

  auto report = gradcheck(
      [&](const std::vector<Tensor>& in) {
        BlockParams q = blk;
        q.attn.k.w = in[2];
        q.ln1_g = in[3];
        auto y = layer_cs(in[0], in[1], q, 4);
        return ops::sum(ops::mul(y, y));
      },
      {s, tr, blk.attn.k.w, blk.ln1_g}, {}, "layer_cs");
  CHECK(report.max_rel_error < 1e-3);
}

TEST_CASE("transformer stack") {
  std::mt19937_64 rng(9);
  SUBCASE("Z = 0 passes the encoded input through") {
    ParamStore store(Precision::verification);
    auto p = small_params(store, 0, 4, 9);
    auto fr = random_tensor({8, 4, 4}, rng, -1, 1, Precision::verification);
    auto fs = random_tensor({2, 8, 4, 4}, rng, -1, 1, Precision::verification);
    auto out = transformer_stack(fr, fs, {1, 2}, p);
    CHECK(max_abs_diff(out.ref, unflatten(encode_and_flatten(fr, p.pos), 4, 4)) == 0.0);
    CHECK(max_abs_diff(out.sources, unflatten(encode_and_flatten(fs, p.pos), 4, 4)) == 0.0);
  }
  SUBCASE("Z = 4 on 16x16 maps stays finite") {
    ParamStore store;
    auto p = small_params(store, 4, 16, 10);
    auto fr = random_tensor({8, 16, 16}, rng, -10, 10);
    auto fs = random_tensor({2, 8, 16, 16}, rng, -10, 10);
    auto out = transformer_stack(fr, fs, {1, 2}, p);
    CHECK(out.ref.shape() == Shape{8, 16, 16});
    CHECK(out.sources.shape() == Shape{2, 8, 16, 16});
    for (double v : out.ref.to_vector()) REQUIRE(std::isfinite(v));
    for (double v : out.sources.to_vector()) REQUIRE(std::isfinite(v));
  }
  SUBCASE("source reordering") {
    ParamStore store(Precision::verification);
    auto p = small_params(store, 2, 4, 11);
    auto fr = random_tensor({8, 4, 4}, rng, -1, 1, Precision::verification);
    auto a = random_tensor({1, 8, 4, 4}, rng, -1, 1, Precision::verification);
    auto b = random_tensor({1, 8, 4, 4}, rng, -1, 1, Precision::verification);
    auto ab = transformer_stack(fr, ops::concat({a, b}, 0), {3, 7}, p);
    auto ba = transformer_stack(fr, ops::concat({b, a}, 0), {7, 3}, p);
    CHECK(max_abs_diff(ab.ref, ba.ref) < 1e-6);
    CHECK(max_abs_diff(ops::slice(ab.sources, 0, 0, 1), ops::slice(ba.sources, 0, 1, 1)) < 1e-6);
    CHECK(max_abs_diff(ops::slice(ab.sources, 0, 1, 1), ops::slice(ba.sources, 0, 0, 1)) < 1e-6);
  }
  SUBCASE("spatial permutation with zero positional table") {
    ParamStore store(Precision::verification);
    auto p = small_params(store, 2, 4, 12);
    p.pos = Tensor::zeros({16, 8}, Precision::verification);
    auto fr = random_tensor({8, 4, 4}, rng, -1, 1, Precision::verification);
    auto fs = random_tensor({2, 8, 4, 4}, rng, -1, 1, Precision::verification);
    std::vector<std::int64_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto shuffle_map = [&](const Tensor& f) {
      // Permute the pixels of [..., C, 4, 4] through the flattened layout.
      Shape s = f.shape();
      Shape flat(s.begin(), s.end() - 2);
      flat.push_back(16);
      Tensor x = ops::reshape(f, flat);
      std::vector<Tensor> cols;
      for (auto k : perm) cols.push_back(ops::slice(x, x.rank() - 1, k, 1));
      return ops::reshape(ops::concat(cols, x.rank() - 1), s);
    };
    auto base = transformer_stack(fr, fs, {1, 2}, p);
    auto moved = transformer_stack(shuffle_map(fr), shuffle_map(fs), {1, 2}, p);
    CHECK(max_abs_diff(shuffle_map(base.ref), moved.ref) < 1e-10);
    CHECK(max_abs_diff(shuffle_map(base.sources), moved.sources) < 1e-10);
  }
  SUBCASE("gradcheck through the full stack on 8x8 maps") {
    ParamStore store(Precision::verification);
    auto p = small_params(store, 1, 8, 13);
    auto fr = random_tensor({8, 8, 8}, rng, -1, 1, Precision::verification);
    auto fs = random_tensor({2, 8, 8, 8}, rng, -1, 1, Precision::verification);
    GradcheckOptions opt;
    opt.max_samples_per_input = 20;
    auto report = gradcheck(
        [&](const std::vector<Tensor>& in) {
          auto q = p;
          q.pos = in[2];
          q.rounds[0].cross_r.attn.v.w = in[3];
          q.rounds[0].cross_s.ffn2.w = in[4];
          auto out = transformer_stack(in[0], in[1], {1, 2}, q);
          return ops::add(ops::sum(ops::mul(out.ref, out.ref)), ops::mean(out.sources));
        },
        {fr, fs, p.pos, p.rounds[0].cross_r.attn.v.w, p.rounds[0].cross_s.ffn2.w}, opt, "stack");
    CHECK(report.max_rel_error < 1e-3);
  }
}
