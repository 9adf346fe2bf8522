#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <vector>

#include "dart/model.hpp"
#include "dart/pruner.hpp"
#include "dart/rng.hpp"
#include "dart/weights_io.hpp"
#include "oracles.hpp"

using namespace dart;

namespace {

using oracle::DVec;
using oracle::rms;
constexpr auto silu_d = oracle::silu;

std::vector<std::uint32_t> random_tokens(Rng& rng, std::size_t n, std::uint32_t vocab) {
  std::vector<std::uint32_t> t(n);
  for (auto& x : t) x = static_cast<std::uint32_t>(rng.below(vocab));
  return t;
}

NeuronMask random_mask(Rng& rng, std::size_t layer, std::size_t m) {
  NeuronMask mask{layer, std::vector<std::uint8_t>(m, 0), 0};
  for (auto& b : mask.bits)
    if (rng.below(2)) b = 1, ++mask.k;
  return mask;
}

std::vector<Vector> run_cached(const ModelWeights& w, const std::vector<std::uint32_t>& toks, const MaskSet& masks = {}) {
  KvCache cache(w.config);
  std::vector<Vector> out;
  for (auto t : toks) out.push_back(forward_token(w, t, cache, masks).logits);
  return out;
}

const ModelConfig kGqa{3, 16, 24, 4, 2, 4, 20, 64};

}  // namespace

TEST(Synth, SeedDeterminism) {
  const ModelConfig c;
  std::ostringstream a, b, other;
  write_weights(a, synth_model(0, c));
  write_weights(b, synth_model(0, c));
  write_weights(other, synth_model(1, c));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), other.str());
}

TEST(WeightsIo, ExactFileSizeForSmallConfig) {
  const ModelConfig c{2, 8, 16, 2, 1, 4, 16, 64};
  std::ostringstream os;
  write_weights(os, synth_model(0, c));
  // header 6 + 32; embed + unembed 2*16*8; per layer q 2*8*4, k,v 2*8*4, o 8*8, up/gate/down 3*8*16
  const std::size_t floats = 2 * 16 * 8 + 2 * (64 + 64 + 64 + 384);
  EXPECT_EQ(os.str().size(), 38 + 4 * floats);
  EXPECT_EQ(weight_file_size(c), os.str().size());
}

TEST(WeightsIo, RoundTripAndRejectsCorruption) {
  const auto w = synth_model(5, kGqa);
  std::ostringstream os;
  write_weights(os, w);
  std::istringstream is(os.str());
  EXPECT_EQ(read_weights(is), w);

  std::string bad = os.str();
  bad[0] = 'X';
  std::istringstream b1(bad);
  EXPECT_THROW(read_weights(b1), FormatError);
  std::istringstream b2(os.str().substr(0, os.str().size() - 3));
  EXPECT_THROW(read_weights(b2), FormatError);
  std::istringstream b3(os.str() + "x");
  EXPECT_THROW(read_weights(b3), FormatError);
  std::string nan = os.str();
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + 38, &q, 4);
  std::istringstream b4(nan);
  EXPECT_THROW(read_weights(b4), FormatError);
}

TEST(Attention, SingletonCacheIsValueProjection) {
  const ModelConfig c;
  const auto w = synth_model(2, c);
  KvCache cache(c);
  Rng rng(1);
  Vector x(c.hidden_dim);
  for (auto& v : x) v = static_cast<float>(rng.normal());
  const Vector out = attention_step(c, w.layers[0], x, cache.layer(0));
  // weights are [1]: each head returns its group's value vector
  const Vector h = rms_norm(x);
  Vector concat;
  for (std::uint32_t head = 0; head < c.num_heads; ++head) {
    const Vector v = vecmat(h, w.layers[0].w_v[c.group_of(head)]);
    concat.insert(concat.end(), v.begin(), v.end());
  }
  const Vector want = vecmat(concat, w.layers[0].w_o);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(out[i], want[i], 1e-6);

  // a second identical token leaves the output unchanged
  const Vector again = attention_step(c, w.layers[0], x, cache.layer(0));
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(again[i], out[i], 1e-6);
}

TEST(Attention, RejectsOverflowAndBadShapes) {
  ModelConfig c;
  c.max_seq = 2;
  const auto w = synth_model(0, c);
  KvCache cache(c);
  forward_token(w, 1, cache);
  forward_token(w, 1, cache);
  EXPECT_THROW(forward_token(w, 1, cache), DimensionError);
  KvCache fresh(c);
  EXPECT_THROW(forward_token(w, c.vocab_size, fresh), DimensionError);
  EXPECT_THROW(forward_token(w, 0, fresh, MaskSet{NeuronMask::dense(0, c.ffn_dim)}), DimensionError);
}

TEST(Ffn, AllOnesMaskIsExactlyDense) {
  const auto w = synth_model(3, kGqa);
  Rng rng(2);
  Vector y(kGqa.hidden_dim);
  for (auto& v : y) v = static_cast<float>(rng.normal());
  const auto dense = ffn_step(kGqa, w.layers[1], y);
  const auto ones = NeuronMask::dense(1, kGqa.ffn_dim);
  const auto masked = ffn_step(kGqa, w.layers[1], y, &ones);
  EXPECT_EQ(dense.z, masked.z);
  EXPECT_EQ(dense.u, masked.u);
}

TEST(Ffn, AllZeroMaskIsResidualOnly) {
  const auto w = synth_model(3, kGqa);
  Vector y(kGqa.hidden_dim, 0.5f);
  y[0] = -2.0f;
  NeuronMask zero{0, std::vector<std::uint8_t>(kGqa.ffn_dim, 0), 0};
  EXPECT_EQ(ffn_step(kGqa, w.layers[0], y, &zero).z, y);
}

TEST(Ffn, RandomMasksMatchColumnDeletion) {
  const ModelConfig c{1, 8, 6, 2, 1, 4, 8, 16};
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto w = synth_model(static_cast<std::uint64_t>(trial), c);
    const auto mask = random_mask(rng, 0, c.ffn_dim);
    Vector y(c.hidden_dim);
    for (auto& v : y) v = static_cast<float>(rng.normal());
    // oracle: physically delete pruned columns/rows, then run the plain formula
    DVec n = rms(DVec(y.begin(), y.end()));
    DVec z(y.begin(), y.end());
    for (std::size_t j = 0; j < c.ffn_dim; ++j) {
      if (!mask.kept(j)) continue;
      double a = 0, g = 0;
      for (std::size_t r = 0; r < c.hidden_dim; ++r) {
        a += n[r] * w.layers[0].w_up(r, j);
        g += n[r] * w.layers[0].w_gate(r, j);
      }
      const double u = a * silu_d(g);
      for (std::size_t col = 0; col < c.hidden_dim; ++col) z[col] += u * w.layers[0].w_down(j, col);
    }
    const auto got = ffn_step(c, w.layers[0], y, &mask);
    const auto compact = CompactFfn::build(w.layers[0], mask).step(y);
    for (std::size_t i = 0; i < c.hidden_dim; ++i) {
      EXPECT_NEAR(got.z[i], z[i], 1e-6);
      EXPECT_NEAR(compact[i], z[i], 1e-6);
    }
  }
}

TEST(Forward, MatchesStraightLineOracle) {
  const ModelConfig c{2, 8, 16, 2, 1, 4, 16, 64};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto w = synth_model(seed, c);
    Rng rng(seed + 100);
    const auto toks = random_tokens(rng, 10, c.vocab_size);
    const auto got = run_cached(w, toks);
    const auto want = oracle::forward(w, toks);
    for (std::size_t t = 0; t < toks.size(); ++t)
      for (std::size_t v = 0; v < c.vocab_size; ++v) EXPECT_NEAR(got[t][v], want[t][v], 1e-5);
  }
}

TEST(Forward, KvCacheEqualsFullRecompute) {
  // GQA with two groups; 12-token sequences
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = synth_model(seed, kGqa);
    Rng rng(seed * 7 + 1);
    const auto toks = random_tokens(rng, 12, kGqa.vocab_size);
    const auto cached = run_cached(w, toks);
    // engine itself without cache reuse: fresh cache, full prefix, keep last
    for (std::size_t t = 0; t < toks.size(); ++t) {
      std::vector<std::uint32_t> prefix(toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(t + 1));
      const auto full = run_cached(w, prefix).back();
      for (std::size_t v = 0; v < kGqa.vocab_size; ++v) EXPECT_NEAR(cached[t][v], full[v], 1e-5);
    }
    const auto want = oracle::forward(w, toks);
    for (std::size_t t = 0; t < toks.size(); ++t)
      for (std::size_t v = 0; v < kGqa.vocab_size; ++v) EXPECT_NEAR(cached[t][v], want[t][v], 1e-5);
  }
}

TEST(Forward, MaskedForwardMatchesOracle) {
  const auto w = synth_model(11, kGqa);
  Rng rng(12);
  MaskSet masks;
  for (std::size_t l = 0; l < kGqa.num_layers; ++l) masks.push_back(random_mask(rng, l, kGqa.ffn_dim));
  const auto toks = random_tokens(rng, 8, kGqa.vocab_size);
  const auto got = run_cached(w, toks, masks);
  oracle::ForwardOptions opt;
  opt.masks = &masks;
  const auto want = oracle::forward(w, toks, opt);
  for (std::size_t t = 0; t < toks.size(); ++t)
    for (std::size_t v = 0; v < kGqa.vocab_size; ++v) EXPECT_NEAR(got[t][v], want[t][v], 1e-5);
}

TEST(Forward, ZeroMasksReduceToAttentionOnly) {
  const auto w = synth_model(13, kGqa);
  MaskSet zero;
  for (std::size_t l = 0; l < kGqa.num_layers; ++l)
    zero.push_back({l, std::vector<std::uint8_t>(kGqa.ffn_dim, 0), 0});
  Rng rng(14);
  const auto toks = random_tokens(rng, 9, kGqa.vocab_size);
  const auto got = run_cached(w, toks, zero);
  oracle::ForwardOptions opt;
  opt.no_ffn = true;
  const auto want = oracle::forward(w, toks, opt);
  for (std::size_t t = 0; t < toks.size(); ++t)
    for (std::size_t v = 0; v < kGqa.vocab_size; ++v) EXPECT_NEAR(got[t][v], want[t][v], 1e-6);
}

TEST(Forward, AllOnesMasksGiveDenseLogitsExactly) {
  const auto w = synth_model(21, kGqa);
  MaskSet ones;
  for (std::size_t l = 0; l < kGqa.num_layers; ++l) ones.push_back(NeuronMask::dense(l, kGqa.ffn_dim));
  Rng rng(22);
  const auto toks = random_tokens(rng, 12, kGqa.vocab_size);
  EXPECT_EQ(run_cached(w, toks, ones), run_cached(w, toks));
}

TEST(Forward, CompactPathMatchesMasks) {
  const auto w = synth_model(31, kGqa);
  Rng rng(32);
  MaskSet masks;
  std::vector<CompactFfn> compact;
  for (std::size_t l = 0; l < kGqa.num_layers; ++l) {
    masks.push_back(random_mask(rng, l, kGqa.ffn_dim));
    compact.push_back(CompactFfn::build(w.layers[l], masks.back()));
  }
  KvCache a(kGqa), b(kGqa);
  for (std::uint32_t t : {1u, 5u, 7u, 2u}) {
    const auto ref = forward_token(w, t, a, masks);
    ForwardOptions opt;
    opt.compact = &compact;
    const auto got = forward_token(w, t, b, {}, opt);
    for (std::size_t v = 0; v < kGqa.vocab_size; ++v) EXPECT_NEAR(got.logits[v], ref.logits[v], 1e-5);
  }
}

TEST(Decode, GreedyIsDeterministic) {
  const auto w = synth_model(0, kGqa);
  const std::vector<std::uint32_t> prompt{1, 2, 3};
  const auto a = greedy_decode(w, prompt, 10);
  EXPECT_EQ(a.size(), 13u);
  EXPECT_EQ(a, greedy_decode(w, prompt, 10));
  EXPECT_EQ(argmax(Vector{1, 3, 3, 0}), 1u);
}

TEST(Forward, TraceCarriesLayerActivations) {
  const auto w = synth_model(0, kGqa);
  KvCache cache(kGqa);
  const auto r = forward_token(w, 3, cache);
  ASSERT_EQ(r.trace.layers.size(), kGqa.num_layers);
  for (const auto& lt : r.trace.layers) {
    EXPECT_EQ(lt.y.size(), kGqa.hidden_dim);
    EXPECT_EQ(lt.u.size(), kGqa.ffn_dim);
    EXPECT_EQ(lt.z.size(), kGqa.hidden_dim);
  }
  EXPECT_EQ(r.trace.last_attention, r.trace.layers.back().y);
  EXPECT_EQ(cache.tokens(), 1u);
}
