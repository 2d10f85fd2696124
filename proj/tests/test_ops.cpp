#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "tobias/ops.hpp"
#include "tobias/rng.hpp"

using namespace tobias;

namespace {

// Brute-force cross-correlation, written as the direct 7-deep loop so it
// shares no code path with the im2col/GEMM implementation under test.
template <class T>
TensorT<T> conv_naive(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                      int64_t stride, int64_t pad) {
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const int64_t wo = (wd + 2 * pad - kw) / stride + 1;
  TensorT<T> out({n, co, ho, wo});
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          T acc = b.empty() ? T(0) : b[o];
          for (int64_t c = 0; c < ci; ++c)
            for (int64_t i = 0; i < kh; ++i)
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t ih = oh * stride - pad + i;
                const int64_t iw = ow * stride - pad + j;
                if (ih >= 0 && ih < h && iw >= 0 && iw < wd)
                  acc += x.at(ni, c, ih, iw) * w.at(o, c, i, j);
              }
          out.at(ni, o, oh, ow) = acc;
        }
  return out;
}

template <class T>
TensorT<T> maxpool_naive(const TensorT<T>& x, int64_t k, int64_t s, bool ceil_mode) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto osz = [&](int64_t in) {
    if (!ceil_mode) return (in - k) / s + 1;
    int64_t o = (in - k + s - 1) / s + 1;
    if ((o - 1) * s >= in) --o;
    return o;
  };
  const int64_t ho = osz(h), wo = osz(w);
  TensorT<T> out({n, c, ho, wo});
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          for (int64_t ih = oh * s; ih < std::min(oh * s + k, h); ++ih)
            for (int64_t iw = ow * s; iw < std::min(ow * s + k, w); ++iw)
              best = std::max(best, x.at(ni, ci, ih, iw));
          out.at(ni, ci, oh, ow) = best;
        }
  return out;
}

template <class T>
TensorT<T> random_tensor(std::vector<int64_t> dims, RngState& rng) {
  TensorT<T> t(std::move(dims));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-1.0, 1.0));
  return t;
}

template <class T>
double max_rel_err(const TensorT<T>& got, const TensorT<T>& want) {
  REQUIRE(got.dims() == want.dims());
  double worst = 0.0;
  for (int64_t i = 0; i < got.size(); ++i) {
    const double g = static_cast<double>(got[i]);
    const double w = static_cast<double>(want[i]);
    const double err = std::abs(g - w) / std::max(1.0, std::abs(w));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("output size formulas") {
  CHECK(conv_out_size(7, 3, 2, 1) == 4);
  CHECK(conv_out_size(224, 7, 2, 3) == 112);
  CHECK(conv_out_size(8, 3, 1, 1) == 8);
  CHECK(conv_out_size(5, 3, 2, 0) == 2);   // floor division drops the tail
  CHECK(conv_out_size(6, 3, 2, 0) == 2);

  CHECK(pool_out_size(7, 2, 2, true) == 4);    // ceil keeps the partial window
  CHECK(pool_out_size(7, 2, 2, false) == 3);
  CHECK(pool_out_size(112, 3, 2, true) == 56);
  CHECK(pool_out_size(112, 3, 2, false) == 55);
  CHECK(pool_out_size(8, 2, 2, true) == 4);
  CHECK(pool_out_size(8, 2, 2, false) == 4);
  // A window must start inside the input: 6 with k2 s2 has no 4th window
  // even in ceil mode ((4-1)*2 = 6 >= 6).
  CHECK(pool_out_size(6, 2, 2, true) == 3);
}

TEST_CASE("gemm_accum matches a naive ijk product and accumulates into C") {
  RngState rng(101);
  const int64_t m = 7, k = 5, n = 6;
  auto a = random_tensor<double>({m, k}, rng);
  auto b = random_tensor<double>({k, n}, rng);
  DTensor c({m, n}, 0.5);
  DTensor want({m, n}, 0.5);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      for (int64_t p = 0; p < k; ++p) want.at(i, j) += a.at(i, p) * b.at(p, j);
  gemm_accum(a.data(), b.data(), c.data(), m, k, n);
  CHECK(max_rel_err(c, want) < 1e-13);
}

TEST_CASE("transpose") {
  std::vector<double> a = {1, 2, 3, 4, 5, 6};  // 2x3
  auto at = transpose(a.data(), 2, 3);
  CHECK(at == std::vector<double>{1, 4, 2, 5, 3, 6});
}

TEST_CASE("conv2d matches a hand-computed 3x3 example") {
  Tensor x({1, 1, 3, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w({1, 1, 2, 2}, std::vector<float>{1, 1, 1, 1});
  Tensor out = conv2d_forward(x, w, Tensor(), 1, 0);
  CHECK(out.dims() == std::vector<int64_t>{1, 1, 2, 2});
  CHECK(out[0] == 12.0f);
  CHECK(out[1] == 16.0f);
  CHECK(out[2] == 24.0f);
  CHECK(out[3] == 28.0f);

  Tensor b({1}, std::vector<float>{100.0f});
  Tensor outb = conv2d_forward(x, w, b, 1, 0);
  CHECK(outb[0] == 112.0f);
}

TEST_CASE("conv2d matches the brute-force loop over assorted shapes") {
  RngState rng(2024);
  struct Case {
    int64_t n, ci, h, w, co, k, s, p;
  };
  const Case cases[] = {
      {1, 1, 5, 5, 1, 1, 1, 0},  {2, 3, 8, 8, 4, 3, 1, 1},  {1, 2, 9, 7, 3, 3, 2, 1},
      {1, 3, 16, 16, 8, 7, 2, 3}, {2, 4, 10, 10, 2, 5, 4, 2}, {1, 5, 6, 11, 6, 3, 3, 0},
      {3, 1, 7, 7, 2, 2, 2, 0},  {1, 4, 12, 5, 5, 3, 1, 2},  {2, 2, 14, 14, 3, 5, 3, 1},
      {1, 6, 4, 4, 4, 4, 1, 0},
  };
  for (const Case& c : cases) {
    CAPTURE(c.n);
    CAPTURE(c.h);
    CAPTURE(c.k);
    auto x = random_tensor<double>({c.n, c.ci, c.h, c.w}, rng);
    auto w = random_tensor<double>({c.co, c.ci, c.k, c.k}, rng);
    auto b = random_tensor<double>({c.co}, rng);
    auto got = conv2d_forward(x, w, b, c.s, c.p);
    auto want = conv_naive(x, w, b, c.s, c.p);
    CHECK(max_rel_err(got, want) < 1e-13);

    // Float path against the double oracle stays inside 1e-5.
    auto xf = x.cast<float>();
    auto wf = w.cast<float>();
    auto bf = b.cast<float>();
    auto gotf = conv2d_forward(xf, wf, bf, c.s, c.p).cast<double>();
    CHECK(max_rel_err(gotf, want) < 1e-5);
  }
}

TEST_CASE("conv2d rejects mismatched shapes with axis names in the message") {
  RngState rng(1);
  auto x = random_tensor<float>({1, 3, 8, 8}, rng);
  auto w = random_tensor<float>({4, 2, 3, 3}, rng);
  CHECK_THROWS_WITH_AS(conv2d_forward(x, w, Tensor(), 1, 1),
                       doctest::Contains("input channel axis"), DimensionError);

  auto w_ok = random_tensor<float>({4, 3, 3, 3}, rng);
  auto bad_bias = random_tensor<float>({3}, rng);
  CHECK_THROWS_AS(conv2d_forward(x, w_ok, bad_bias, 1, 1), DimensionError);

  auto tiny = random_tensor<float>({1, 3, 2, 2}, rng);
  auto big_k = random_tensor<float>({4, 3, 5, 5}, rng);
  CHECK_THROWS_AS(conv2d_forward(tiny, big_k, Tensor(), 1, 0), DimensionError);
  CHECK_THROWS_AS(conv2d_forward(x, w_ok, Tensor(), 0, 1), DimensionError);
  CHECK_THROWS_AS(conv2d_forward(x, w_ok, Tensor(), 1, -1), DimensionError);
}

TEST_CASE("im2col and col2im are adjoint") {
  RngState rng(7);
  const int64_t c = 3, h = 6, w = 5, k = 3, stride = 2, pad = 1;
  const int64_t ho = conv_out_size(h, k, stride, pad);
  const int64_t wo = conv_out_size(w, k, stride, pad);
  auto x = random_tensor<double>({c, h, w}, rng);
  std::vector<double> cols(static_cast<size_t>(c * k * k * ho * wo));
  im2col(x.data(), c, h, w, k, k, stride, pad, ho, wo, cols.data());

  std::vector<double> g(cols.size());
  for (auto& v : g) v = rng.uniform(-1.0, 1.0);
  DTensor back({c, h, w});
  col2im_accum(g.data(), c, h, w, k, k, stride, pad, ho, wo, back.data());

  double lhs = 0.0, rhs = 0.0;
  for (size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * g[i];
  for (int64_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("maxpool2d matches the brute-force oracle in both rounding modes") {
  RngState rng(33);
  for (bool ceil_mode : {false, true}) {
    for (auto [h, w, k, s] : std::vector<std::array<int64_t, 4>>{
             {7, 7, 2, 2}, {8, 8, 2, 2}, {7, 9, 3, 2}, {112, 112, 3, 2}, {5, 5, 5, 5}}) {
      auto x = random_tensor<float>({2, 3, h, w}, rng);
      auto got = maxpool2d(x, k, s, ceil_mode);
      auto want = maxpool_naive(x, k, s, ceil_mode);
      REQUIRE(got.dims() == want.dims());
      for (int64_t i = 0; i < got.size(); ++i) REQUIRE(got[i] == want[i]);
    }
  }
}

TEST_CASE("maxpool backward routes gradient to the first maximum") {
  Tensor x({1, 1, 2, 2}, std::vector<float>{5, 5, 5, 5});
  std::vector<int32_t> argmax;
  Tensor y = maxpool2d(x, 2, 2, false, &argmax);
  CHECK(y.size() == 1);
  CHECK(y[0] == 5.0f);
  CHECK(argmax[0] == 0);  // ties keep the first element in row-major order

  Tensor gy({1, 1, 1, 1}, std::vector<float>{2.5f});
  Tensor gx = maxpool2d_backward(gy, argmax, x.dims());
  CHECK(gx[0] == 2.5f);
  CHECK(gx[1] == 0.0f);
  CHECK(gx[2] == 0.0f);
  CHECK(gx[3] == 0.0f);
}

TEST_CASE("global average pool") {
  Tensor x({1, 2, 2, 2}, std::vector<float>{1, 2, 3, 4, 10, 20, 30, 40});
  Tensor y = global_avg_pool(x);
  CHECK(y.dims() == std::vector<int64_t>{1, 2, 1, 1});
  CHECK(y[0] == 2.5f);
  CHECK(y[1] == 25.0f);

  Tensor gy({1, 2, 1, 1}, std::vector<float>{4.0f, 8.0f});
  Tensor gx = global_avg_pool_backward(gy, x.dims());
  CHECK(gx[0] == 1.0f);
  CHECK(gx[7] == 2.0f);
}

TEST_CASE("batchnorm matches a naive per-channel normalization") {
  RngState rng(88);
  auto x = random_tensor<double>({3, 4, 5, 5}, rng);
  DTensor gamma({4}), beta({4});
  for (int64_t i = 0; i < 4; ++i) {
    gamma[i] = rng.uniform(0.5, 1.5);
    beta[i] = rng.uniform(-0.5, 0.5);
  }
  const double eps = 1e-5;
  auto got = batchnorm_forward(x, gamma, beta, eps);

  const int64_t n = 3, c = 4, spatial = 25;
  for (int64_t ci = 0; ci < c; ++ci) {
    double mean = 0.0, var = 0.0;
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t s = 0; s < spatial; ++s) mean += x[(ni * c + ci) * spatial + s];
    mean /= static_cast<double>(n * spatial);
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t s = 0; s < spatial; ++s) {
        const double d = x[(ni * c + ci) * spatial + s] - mean;
        var += d * d;
      }
    var /= static_cast<double>(n * spatial);  // biased, matching batch semantics
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t s = 0; s < spatial; ++s) {
        const double want =
            gamma[ci] * (x[(ni * c + ci) * spatial + s] - mean) / std::sqrt(var + eps) + beta[ci];
        REQUIRE(got[(ni * c + ci) * spatial + s] == doctest::Approx(want).epsilon(1e-12));
      }
  }
}

TEST_CASE("batchnorm output has zero mean and unit variance per channel") {
  RngState rng(89);
  auto x = random_tensor<double>({4, 3, 6, 6}, rng);
  for (int64_t i = 0; i < x.size(); ++i) x[i] = x[i] * 3.0 + 2.0;
  DTensor gamma({3}, 1.0), beta({3}, 0.0);
  auto y = batchnorm_forward(x, gamma, beta, 1e-5);
  const int64_t n = 4, c = 3, spatial = 36;
  for (int64_t ci = 0; ci < c; ++ci) {
    double mean = 0.0, sq = 0.0;
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t s = 0; s < spatial; ++s) {
        const double v = y[(ni * c + ci) * spatial + s];
        mean += v;
        sq += v * v;
      }
    mean /= n * spatial;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(sq / (n * spatial) == doctest::Approx(1.0).epsilon(1e-3));
  }
  CHECK_THROWS_AS(batchnorm_forward(x, DTensor({2}), beta, 1e-5), DimensionError);
}

TEST_CASE("linear layer matches naive loops") {
  Tensor x({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  Tensor w({2, 3}, std::vector<float>{1, 0, -1, 0.5f, 0.5f, 0.5f});
  Tensor b({2}, std::vector<float>{10, -10});
  Tensor y = linear_forward(x, w, b);
  CHECK(y.dims() == std::vector<int64_t>{2, 2});
  CHECK(y.at(0, 0) == doctest::Approx(1 - 3 + 10));
  CHECK(y.at(0, 1) == doctest::Approx(3.0 - 10));
  CHECK(y.at(1, 0) == doctest::Approx(4 - 6 + 10));
  CHECK(y.at(1, 1) == doctest::Approx(7.5 - 10));

  RngState rng(55);
  auto xr = random_tensor<double>({4, 7}, rng);
  auto wr = random_tensor<double>({5, 7}, rng);
  auto br = random_tensor<double>({5}, rng);
  auto got = linear_forward(xr, wr, br);
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 5; ++j) {
      double want = br[j];
      for (int64_t p = 0; p < 7; ++p) want += xr.at(i, p) * wr.at(j, p);
      REQUIRE(got.at(i, j) == doctest::Approx(want).epsilon(1e-12));
    }
  CHECK_THROWS_AS(linear_forward(xr, random_tensor<double>({5, 8}, rng), br), DimensionError);
}

TEST_CASE("l2 row normalization produces unit rows and keeps zeros finite") {
  RngState rng(66);
  auto x = random_tensor<double>({5, 8}, rng);
  for (int64_t j = 0; j < 8; ++j) x.at(4, j) = 0.0;  // degenerate row
  std::vector<double> norms;
  auto z = l2normalize_rows(x, &norms);
  for (int64_t i = 0; i < 4; ++i) {
    double sq = 0.0;
    for (int64_t j = 0; j < 8; ++j) sq += z.at(i, j) * z.at(i, j);
    CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-12));
    // Direction preserved: z is a positive multiple of x.
    CHECK(z.at(i, 0) * x.at(i, 0) >= 0.0);
    CHECK(norms[static_cast<size_t>(i)] > 0.0);
  }
  for (int64_t j = 0; j < 8; ++j) CHECK(z.at(4, j) == 0.0);
  CHECK(all_finite(z));
}
