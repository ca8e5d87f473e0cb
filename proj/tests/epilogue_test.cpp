#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qgtc/bitgemm.hpp"
#include "qgtc/epilogue.hpp"

namespace qgtc {
namespace {

using DMatrix = Matrix<double>;

template <class T> T take(EpilogueResult r) { return std::get<T>(std::move(r)); }

// Unfused pipeline: each step materializes a full matrix before the next.
DMatrix ref_dequant(const IntMatrix &acc, const AffineDequant &d) {
  DMatrix out(acc.rows(), acc.cols());
  for (std::size_t r = 0; r < acc.rows(); ++r)
    for (std::size_t c = 0; c < acc.cols(); ++c) {
      const double colsum = d.rhs_col_sums.empty() ? 0.0 : double(d.rhs_col_sums[c]);
      const double rowsum = d.lhs_row_sums.empty() ? 0.0 : double(d.lhs_row_sums[r]);
      out(r, c) = d.lhs_scale * d.rhs_scale * double(acc(r, c)) + d.lhs_min * d.rhs_scale * colsum +
                  d.rhs_min * d.lhs_scale * rowsum + double(d.inner_dim) * d.lhs_min * d.rhs_min;
    }
  return out;
}

DMatrix ref_bias(DMatrix m, const std::vector<double> &bias) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) += bias[c];
  return m;
}

DMatrix ref_bn(DMatrix m, const BatchNormParams &bn) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      m(r, c) = (m(r, c) - bn.mean[c]) / std::sqrt(bn.var[c] + bn.eps) * bn.gamma[c] + bn.beta[c];
  return m;
}

DMatrix ref_relu(DMatrix m) {
  for (auto &v : m.data()) v = v > 0.0 ? v : 0.0;
  return m;
}

DMatrix ref_tanh(DMatrix m) {
  for (auto &v : m.data()) v = double(std::tanh(float(v)));
  return m;
}

IntMatrix random_acc(std::mt19937_64 &rng, std::size_t rows, std::size_t cols) {
  std::uniform_int_distribution<std::int32_t> d(0, 5000);
  IntMatrix m(rows, cols);
  for (auto &v : m.data()) v = d(rng);
  return m;
}

BatchNormParams random_bn(std::mt19937_64 &rng, std::size_t cols) {
  std::uniform_real_distribution<double> u(-2.0, 2.0), pos(0.1, 3.0);
  BatchNormParams bn;
  for (std::size_t c = 0; c < cols; ++c) {
    bn.mean.push_back(u(rng));
    bn.var.push_back(pos(rng));
    bn.gamma.push_back(u(rng));
    bn.beta.push_back(u(rng));
  }
  bn.eps = 1e-5;
  return bn;
}

TEST(Epilogue, IdentityBatchNorm) {
  std::mt19937_64 rng(1);
  const auto acc = random_acc(rng, 5, 6);
  EpilogueSpec plain;
  EpilogueSpec with_bn;
  with_bn.bn = BatchNormParams{std::vector<double>(6, 0.0), std::vector<double>(6, 1.0),
                               std::vector<double>(6, 1.0), std::vector<double>(6, 0.0), 0.0};
  EXPECT_EQ(take<RealMatrix>(apply_epilogue(acc, plain)),
            take<RealMatrix>(apply_epilogue(acc, with_bn)));
  const auto m = take<RealMatrix>(apply_epilogue(acc, plain));
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m.data()[i], float(acc.data()[i]));
}

TEST(Epilogue, ReluOfNegativesQuantizesToZeroPlanes) {
  std::mt19937_64 rng(2);
  const auto acc = random_acc(rng, 9, 7);
  EpilogueSpec e;
  e.dequant.lhs_scale = -1.0; // every dequantized value is <= 0
  e.act = Activation::relu;
  const auto real = take<RealMatrix>(apply_epilogue(acc, e));
  for (auto v : real.data()) EXPECT_EQ(v, 0.0f);
  e.quant = OutputQuant{{0.0, 4.0, 3}, Orientation::row_wise, Pad::to128};
  const auto bits = take<BitPlaneStack>(apply_epilogue(acc, e));
  ASSERT_EQ(bits.bits(), 3u);
  for (const auto &p : bits.planes())
    for (auto w : p.words()) EXPECT_EQ(w, 0u);
}

TEST(Epilogue, BadVarianceRejected) {
  IntMatrix acc(2, 2);
  EpilogueSpec e;
  e.bn = BatchNormParams{{0, 0}, {1.0, -1.0}, {1, 1}, {0, 0}, 0.5};
  EXPECT_THROW(apply_epilogue(acc, e), ParameterError);
  e.bn->var[1] = -0.5;
  EXPECT_THROW(apply_epilogue(acc, e), ParameterError);
}

TEST(Epilogue, ShapeChecks) {
  IntMatrix acc(2, 3);
  EpilogueSpec e;
  e.bias = {1.0, 2.0};
  EXPECT_THROW(apply_epilogue(acc, e), ShapeError);
  e.bias.clear();
  e.dequant.rhs_min = 1.0; // needs lhs row sums
  EXPECT_THROW(apply_epilogue(acc, e), ShapeError);
}

TEST(Epilogue, MatchesUnfusedReference) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.001, 0.1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + rng() % 40, cols = 1 + rng() % 30;
    const auto acc = random_acc(rng, rows, cols);
    EpilogueSpec e;
    e.dequant = {u(rng), pos(rng), u(rng), pos(rng), 64, {}, {}};
    std::uniform_int_distribution<std::int64_t> sums(0, 500);
    for (std::size_t r = 0; r < rows; ++r) e.dequant.lhs_row_sums.push_back(sums(rng));
    for (std::size_t c = 0; c < cols; ++c) e.dequant.rhs_col_sums.push_back(sums(rng));
    for (std::size_t c = 0; c < cols; ++c) e.bias.push_back(u(rng));
    e.bn = random_bn(rng, cols);
    e.act = trial % 2 ? Activation::relu : Activation::tanh;

    auto ref = ref_bn(ref_bias(ref_dequant(acc, e.dequant), e.bias), *e.bn);
    ref = e.act == Activation::relu ? ref_relu(std::move(ref)) : ref_tanh(std::move(ref));

    const auto real = take<RealMatrix>(apply_epilogue(acc, e));
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(real.data()[i], float(ref.data()[i]));

    const QuantParams q{-1.0, 2.0, 1 + unsigned(trial % 8)};
    e.quant = OutputQuant{q, Orientation::column_wise, Pad::to8};
    const auto bits = take<BitPlaneStack>(apply_epilogue(acc, e));
    const auto want = pack_stack(quantize_matrix(ref, q), Orientation::column_wise, Pad::to8);
    ASSERT_EQ(bits, want);
  }
}

TEST(Epilogue, FusedGemmEqualsUnfusedComposition) {
  std::mt19937_64 rng(4);
  const QuantParams xq{-0.5, 1.5, 4}, wq{-1.0, 1.0, 3};
  const auto x = pack_stack(QuantMatrix{oracle::random_levels(rng, 50, 70, 4), 4},
                            Orientation::column_wise);
  const auto w = pack_stack(QuantMatrix{oracle::random_levels(rng, 70, 20, 3), 3},
                            Orientation::row_wise, Pad::to128);
  EpilogueSpec e;
  e.dequant = AffineDequant::between(xq, wq, 70);
  e.dequant.lhs_row_sums = line_sums(x);
  e.dequant.rhs_col_sums = line_sums(w);
  e.bn = random_bn(rng, 20);
  e.act = Activation::relu;
  for (auto out : {std::optional<OutputQuant>{},
                   std::optional<OutputQuant>{OutputQuant{{0.0, 3.0, 2}, Orientation::row_wise,
                                                          Pad::to128}}}) {
    e.quant = out;
    const auto unfused = apply_epilogue(gemm_sbit_by_tbit(x, w), e);
    for (bool jump : {false, true})
      for (auto reuse : {Reuse::cross_bit, Reuse::cross_tile})
        EXPECT_EQ(gemm_sbit_by_tbit_fused(x, w, e, {jump, reuse, 3}), unfused);
  }
}

TEST(Epilogue, AffineDequantRecoversRealProduct) {
  // With exactly representable operands the reconstruction is exact.
  const QuantParams xq{-2.0, 2.0, 2}, wq{1.0, 5.0, 2}; // scales 1.0
  std::mt19937_64 rng(5);
  const auto xl = oracle::random_levels(rng, 6, 5, 2);
  const auto wl = oracle::random_levels(rng, 5, 4, 2);
  const auto x = pack_stack(QuantMatrix{xl, 2}, Orientation::column_wise);
  const auto w = pack_stack(QuantMatrix{wl, 2}, Orientation::row_wise);
  EpilogueSpec e;
  e.dequant = AffineDequant::between(xq, wq, 5);
  e.dequant.lhs_row_sums = line_sums(x);
  e.dequant.rhs_col_sums = line_sums(w);
  const auto got = take<RealMatrix>(gemm_sbit_by_tbit_fused(x, w, e));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double want = 0;
      for (std::size_t k = 0; k < 5; ++k)
        want += (-2.0 + xl(i, k)) * (1.0 + wl(k, j));
      EXPECT_EQ(got(i, j), float(want));
    }
}

} // namespace
} // namespace qgtc
