#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "capsan/errors.hpp"
#include "capsan/grad_check.hpp"
#include "capsan/init.hpp"
#include "capsan/kernels.hpp"
#include "capsan/tensor.hpp"
#include "support/oracles.hpp"

using namespace capsan;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, bool requires_grad = false,
                     double lo = -1.0, double hi = 1.0) {
  return Tensor::from_data(shape, oracles::random_vector(shape_numel(shape), rng, lo, hi),
                           requires_grad);
}

}  // namespace

TEST_CASE("gemm kernels match the triple-loop oracle") {
  std::mt19937_64 rng(11);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {3, 4, 5}, {7, 2, 9}, {16, 16, 16}}) {
    auto a = oracles::random_vector(static_cast<std::size_t>(m) * k, rng);
    auto b = oracles::random_vector(static_cast<std::size_t>(k) * n, rng);
    auto want = oracles::matmul(a, b, m, k, n);

    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    kernels::serial::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));

    // gemm_nt consumes b transposed, so feed it b^T and expect the same product.
    std::vector<double> bt(static_cast<std::size_t>(n) * k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < n; ++j) bt[static_cast<std::size_t>(j) * k + i] = b[static_cast<std::size_t>(i) * n + j];
    std::vector<double> c2(c.size(), 0.0);
    kernels::serial::gemm_nt(a.data(), bt.data(), c2.data(), m, k, n, false);
    for (std::size_t i = 0; i < c2.size(); ++i) CHECK(c2[i] == doctest::Approx(want[i]).epsilon(1e-12));

    // gemm_tn consumes a transposed: c (k, n) = a (m, k)^T * rhs (m, n).
    auto rhs = oracles::random_vector(static_cast<std::size_t>(m) * n, rng);
    std::vector<double> at(static_cast<std::size_t>(k) * m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) at[static_cast<std::size_t>(j) * m + i] = a[static_cast<std::size_t>(i) * k + j];
    std::vector<double> c3(static_cast<std::size_t>(k) * n, 0.0);
    kernels::serial::gemm_tn(a.data(), rhs.data(), c3.data(), m, k, n, false);
    std::vector<double> want3 = oracles::matmul(at, rhs, k, m, n);
    for (std::size_t i = 0; i < c3.size(); ++i) CHECK(c3[i] == doctest::Approx(want3[i]).epsilon(1e-12));
  }
}

TEST_CASE("gemm accumulate adds onto the output") {
  std::mt19937_64 rng(12);
  const int m = 3, k = 4, n = 2;
  auto a = oracles::random_vector(static_cast<std::size_t>(m) * k, rng);
  auto b = oracles::random_vector(static_cast<std::size_t>(k) * n, rng);
  auto base = oracles::random_vector(static_cast<std::size_t>(m) * n, rng);
  auto want = oracles::matmul(a, b, m, k, n);
  std::vector<double> c = base;
  kernels::serial::gemm_nn(a.data(), b.data(), c.data(), m, k, n, true);
  for (std::size_t i = 0; i < c.size(); ++i)
    CHECK(c[i] == doctest::Approx(base[i] + want[i]).epsilon(1e-12));
}

TEST_CASE("serial and parallel kernels agree bitwise") {
  std::mt19937_64 rng(13);
  const int m = 37, k = 19, n = 23;
  auto a = oracles::random_vector(static_cast<std::size_t>(m) * k, rng);
  auto b = oracles::random_vector(static_cast<std::size_t>(k) * n, rng);
  auto bt = oracles::random_vector(static_cast<std::size_t>(n) * k, rng);
  auto bm = oracles::random_vector(static_cast<std::size_t>(m) * n, rng);

  std::vector<double> s1(static_cast<std::size_t>(m) * n), p1 = s1;
  kernels::serial::gemm_nn(a.data(), b.data(), s1.data(), m, k, n, false);
  kernels::parallel::gemm_nn(a.data(), b.data(), p1.data(), m, k, n, false);
  CHECK(s1 == p1);

  std::vector<double> s2(static_cast<std::size_t>(m) * n), p2 = s2;
  kernels::serial::gemm_nt(a.data(), bt.data(), s2.data(), m, k, n, false);
  kernels::parallel::gemm_nt(a.data(), bt.data(), p2.data(), m, k, n, false);
  CHECK(s2 == p2);

  std::vector<double> s3(static_cast<std::size_t>(k) * n), p3 = s3;
  kernels::serial::gemm_tn(a.data(), bm.data(), s3.data(), m, k, n, false);
  kernels::parallel::gemm_tn(a.data(), bm.data(), p3.data(), m, k, n, false);
  CHECK(s3 == p3);

  const int rows = 31, width = 41;
  auto x = oracles::random_vector(static_cast<std::size_t>(rows) * width, rng, -5.0, 5.0);
  std::vector<double> ys(x.size()), yp(x.size());
  kernels::serial::softmax_rows(x.data(), ys.data(), rows, width);
  kernels::parallel::softmax_rows(x.data(), yp.data(), rows, width);
  CHECK(ys == yp);

  auto dy = oracles::random_vector(x.size(), rng);
  std::vector<double> dxs(x.size(), 0.0), dxp(x.size(), 0.0);
  kernels::serial::softmax_rows_grad(ys.data(), dy.data(), dxs.data(), rows, width, false);
  kernels::parallel::softmax_rows_grad(yp.data(), dy.data(), dxp.data(), rows, width, false);
  CHECK(dxs == dxp);
}

TEST_CASE("softmax_rows matches the long-double oracle and zeroes masked rows") {
  std::mt19937_64 rng(14);
  const int rows = 6, width = 9;
  auto x = oracles::random_vector(static_cast<std::size_t>(rows) * width, rng, -3.0, 3.0);
  // Row 2 fully masked: every entry at the sentinel level.
  for (int j = 0; j < width; ++j) x[static_cast<std::size_t>(2) * width + j] = -1e9;
  std::vector<double> y(x.size());
  kernels::serial::softmax_rows(x.data(), y.data(), rows, width);
  for (int r = 0; r < rows; ++r) {
    if (r == 2) {
      for (int j = 0; j < width; ++j) CHECK(y[static_cast<std::size_t>(r) * width + j] == 0.0);
      continue;
    }
    std::vector<double> row(x.begin() + static_cast<std::size_t>(r) * width,
                            x.begin() + static_cast<std::size_t>(r + 1) * width);
    auto want = oracles::softmax(row);
    double sum = 0.0;
    for (int j = 0; j < width; ++j) {
      CHECK(y[static_cast<std::size_t>(r) * width + j] == doctest::Approx(want[static_cast<std::size_t>(j)]).epsilon(1e-13));
      sum += y[static_cast<std::size_t>(r) * width + j];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax_rows_grad matches central differences") {
  std::mt19937_64 rng(15);
  const int rows = 3, width = 5;
  auto x = oracles::random_vector(static_cast<std::size_t>(rows) * width, rng, -2.0, 2.0);
  auto dy = oracles::random_vector(x.size(), rng);
  std::vector<double> y(x.size());
  kernels::serial::softmax_rows(x.data(), y.data(), rows, width);
  std::vector<double> dx(x.size(), 0.0);
  kernels::serial::softmax_rows_grad(y.data(), dy.data(), dx.data(), rows, width, false);

  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto probe = [&](double v) {
      std::vector<double> xt = x;
      xt[i] = v;
      std::vector<double> yt(x.size());
      kernels::serial::softmax_rows(xt.data(), yt.data(), rows, width);
      double acc = 0.0;
      for (std::size_t j = 0; j < yt.size(); ++j) acc += dy[j] * yt[j];
      return acc;
    };
    const double numeric = (probe(x[i] + h) - probe(x[i] - h)) / (2.0 * h);
    CHECK(dx[i] == doctest::Approx(numeric).epsilon(1e-5));
  }
}

TEST_CASE("backend dispatch switches between implementations") {
  CHECK(kernels::max_threads() >= 1);
  kernels::set_backend(kernels::Backend::serial);
  CHECK(kernels::backend() == kernels::Backend::serial);
  kernels::set_backend(kernels::Backend::parallel);
  CHECK(kernels::backend() == kernels::Backend::parallel);
  kernels::set_backend(kernels::Backend::serial);
}

TEST_CASE("broadcast arithmetic values and gradient reduction") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b = Tensor::from_data({1, 3}, {10, 20, 30}, true);
  Tensor c = add(a, b);
  CHECK(c.data() == std::vector<double>{11, 22, 33, 14, 25, 36});

  Tensor loss = reduce_sum_all(mul(c, c));
  loss.backward();
  // d loss / d b_j = sum_i 2 * c_ij: the broadcast axis must be reduced.
  CHECK(b.grad()[0] == doctest::Approx(2 * (11 + 14)));
  CHECK(b.grad()[1] == doctest::Approx(2 * (22 + 25)));
  CHECK(b.grad()[2] == doctest::Approx(2 * (33 + 36)));
  CHECK(a.grad()[0] == doctest::Approx(2 * 11));

  Tensor col = Tensor::from_data({2, 1}, {100, 200});
  Tensor d = add(a, col);
  CHECK(d.at({0, 2}) == 103);
  CHECK(d.at({1, 0}) == 204);

  CHECK_THROWS_AS(add(a, Tensor::from_data({2, 2}, {1, 2, 3, 4})), std::invalid_argument);
  CHECK_THROWS_AS(add(a, Tensor::from_data({6}, {1, 2, 3, 4, 5, 6})), std::invalid_argument);
}

TEST_CASE("matmul matches the oracle with and without batch broadcast") {
  std::mt19937_64 rng(16);
  auto a = oracles::random_vector(2 * 3 * 4, rng);
  auto b = oracles::random_vector(2 * 4 * 5, rng);
  Tensor ta = Tensor::from_data({2, 3, 4}, a);
  Tensor tb = Tensor::from_data({2, 4, 5}, b);
  Tensor tc = matmul(ta, tb);
  REQUIRE(tc.shape() == Shape{2, 3, 5});
  for (int batch = 0; batch < 2; ++batch) {
    std::vector<double> ab(a.begin() + batch * 12, a.begin() + (batch + 1) * 12);
    std::vector<double> bb(b.begin() + batch * 20, b.begin() + (batch + 1) * 20);
    auto want = oracles::matmul(ab, bb, 3, 4, 5);
    for (int i = 0; i < 15; ++i)
      CHECK(tc.data()[batch * 15 + i] == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }

  // Right operand without a batch axis broadcasts across the left's batches.
  Tensor tb2 = Tensor::from_data({4, 5}, std::vector<double>(b.begin(), b.begin() + 20));
  Tensor tc2 = matmul(ta, tb2);
  REQUIRE(tc2.shape() == Shape{2, 3, 5});
  for (int batch = 0; batch < 2; ++batch) {
    std::vector<double> ab(a.begin() + batch * 12, a.begin() + (batch + 1) * 12);
    auto want = oracles::matmul(ab, std::vector<double>(b.begin(), b.begin() + 20), 3, 4, 5);
    for (int i = 0; i < 15; ++i)
      CHECK(tc2.data()[batch * 15 + i] == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(matmul(Tensor::from_data({3}, {1, 2, 3}), tb2), std::invalid_argument);
  CHECK_THROWS_AS(matmul(Tensor::from_data({3, 3}, oracles::random_vector(9, rng)), tb2),
                  std::invalid_argument);
}

TEST_CASE("matmul gradient survives a broadcast batch") {
  std::mt19937_64 rng(17);
  Tensor a = random_tensor({2, 3, 4}, rng, true);
  Tensor b = random_tensor({4, 5}, rng, true);
  Tensor out = matmul(a, b);
  reduce_sum_all(mul(out, out)).backward();
  CHECK(a.grad().size() == a.size());
  CHECK(b.grad().size() == b.size());

  auto fa = [&](const Tensor& x) { return reduce_sum_all(mul(matmul(x, b), matmul(x, b))); };
  auto report = grad_check(fa, a);
  CHECK_MESSAGE(report.pass, report.message);
  auto fb = [&](const Tensor& x) { return reduce_sum_all(mul(matmul(a, x), matmul(a, x))); };
  report = grad_check(fb, b);
  CHECK_MESSAGE(report.pass, report.message);
}

TEST_CASE("shape surgery round-trips") {
  std::mt19937_64 rng(18);
  Tensor x = random_tensor({2, 3, 4}, rng);

  Tensor r = reshape(x, {6, 4});
  CHECK(r.data() == x.data());
  CHECK_THROWS_AS(reshape(x, {5, 5}), std::invalid_argument);

  Tensor p = permute(x, {2, 0, 1});
  REQUIRE(p.shape() == Shape{4, 2, 3});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) CHECK(p.at({k, i, j}) == x.at({i, j, k}));

  Tensor t = transpose_last_two(x);
  REQUIRE(t.shape() == Shape{2, 4, 3});
  CHECK(t.at({1, 3, 2}) == x.at({1, 2, 3}));

  Tensor s0 = slice(x, 1, 0, 2);
  Tensor s1 = slice(x, 1, 2, 1);
  Tensor back = concat({s0, s1}, 1);
  CHECK(back.data() == x.data());
  CHECK_THROWS_AS(slice(x, 1, 2, 5), std::invalid_argument);

  Tensor a = Tensor::from_data({2}, {1, 2});
  Tensor b = Tensor::from_data({2}, {3, 4});
  Tensor st = stack({a, b}, 0);
  REQUIRE(st.shape() == Shape{2, 2});
  CHECK(st.data() == std::vector<double>{1, 2, 3, 4});
  Tensor st1 = stack({a, b}, 1);
  CHECK(st1.data() == std::vector<double>{1, 3, 2, 4});
}

TEST_CASE("permute and slice carry gradients") {
  std::mt19937_64 rng(19);
  Tensor x = random_tensor({3, 4}, rng, true);
  auto f = [](const Tensor& v) {
    Tensor p = permute(v, {1, 0});
    return reduce_sum_all(mul(slice(p, 0, 1, 2), slice(p, 0, 1, 2)));
  };
  auto report = grad_check(f, x);
  CHECK_MESSAGE(report.pass, report.message);
}

TEST_CASE("reductions and norms match manual sums") {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(reduce_sum(x, 0).data() == std::vector<double>{5, 7, 9});
  CHECK(reduce_sum(x, 1).data() == std::vector<double>{6, 15});
  CHECK(reduce_sum(x, 1, true).shape() == Shape{2, 1});
  CHECK(reduce_sum(x, -1).data() == std::vector<double>{6, 15});
  CHECK(reduce_sum_all(x).item() == 21);

  Tensor n = l2_norm(x, -1);
  CHECK(n.data()[0] == doctest::Approx(std::sqrt(14.0)));
  CHECK(n.data()[1] == doctest::Approx(std::sqrt(77.0)));

  std::mt19937_64 rng(20);
  Tensor y = random_tensor({2, 5}, rng, true, 0.5, 2.0);
  auto f = [](const Tensor& v) { return reduce_sum_all(l2_norm(v, -1)); };
  auto report = grad_check(f, y);
  CHECK_MESSAGE(report.pass, report.message);
}

TEST_CASE("softmax_last_axis rows are convex weights") {
  std::mt19937_64 rng(21);
  Tensor x = random_tensor({4, 7}, rng, true, -4.0, 4.0);
  Tensor y = softmax_last_axis(x);
  for (int r = 0; r < 4; ++r) {
    double sum = 0.0;
    std::vector<double> row(7);
    for (int j = 0; j < 7; ++j) {
      row[static_cast<std::size_t>(j)] = x.at({r, j});
      sum += y.at({r, j});
      CHECK(y.at({r, j}) > 0.0);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    auto want = oracles::softmax(row);
    for (int j = 0; j < 7; ++j)
      CHECK(y.at({r, j}) == doctest::Approx(want[static_cast<std::size_t>(j)]).epsilon(1e-13));
  }

  auto f = [](const Tensor& v) {
    Tensor s = softmax_last_axis(v);
    return reduce_sum_all(mul(s, s));
  };
  auto report = grad_check(f, x);
  CHECK_MESSAGE(report.pass, report.message);
}

TEST_CASE("masked_fill writes the sentinel and blocks its gradient") {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  Tensor mask = Tensor::from_data({2, 2}, {0, 1, 0, 0});
  Tensor y = masked_fill(x, mask, kMaskSentinel);
  CHECK(y.data() == std::vector<double>{1, kMaskSentinel, 3, 4});
  reduce_sum_all(y).backward();
  CHECK(x.grad() == std::vector<double>{1, 0, 1, 1});
}

TEST_CASE("relu and sqrt behave at their kinks' safe side") {
  Tensor x = Tensor::from_data({4}, {-2, -0.5, 0.5, 2}, true);
  Tensor y = relu(x);
  CHECK(y.data() == std::vector<double>{0, 0, 0.5, 2});
  reduce_sum_all(y).backward();
  CHECK(x.grad() == std::vector<double>{0, 0, 1, 1});

  Tensor z = Tensor::from_data({2}, {4.0, 9.0}, true);
  Tensor s = sqrt_elem(z);
  CHECK(s.data() == std::vector<double>{2, 3});
  reduce_sum_all(s).backward();
  CHECK(z.grad()[0] == doctest::Approx(0.25));
  CHECK(z.grad()[1] == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("gather_rows selects rows and scatter-adds duplicate gradients") {
  Tensor table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tensor picked = gather_rows(table, {2, 0, 2});
  CHECK(picked.data() == std::vector<double>{5, 6, 1, 2, 5, 6});
  reduce_sum_all(picked).backward();
  CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});
  CHECK_THROWS_AS(gather_rows(table, {3}), std::invalid_argument);
  CHECK_THROWS_AS(gather_rows(table, {-1}), std::invalid_argument);
}

TEST_CASE("dropout is identity at rate zero and rescales kept entries") {
  std::mt19937_64 rng(22);
  Tensor x = random_tensor({8, 8}, rng, false, 0.5, 1.5);
  Tensor same = dropout(x, 0.0, &rng);
  CHECK(same.data() == x.data());
  CHECK(dropout(x, 0.5, nullptr).data() == x.data());

  std::mt19937_64 r1(7), r2(7);
  Tensor y1 = dropout(x, 0.5, &r1);
  Tensor y2 = dropout(x, 0.5, &r2);
  CHECK(y1.data() == y2.data());
  int zeros = 0;
  for (std::size_t i = 0; i < y1.size(); ++i) {
    if (y1.data()[i] == 0.0) {
      ++zeros;
    } else {
      CHECK(y1.data()[i] == doctest::Approx(x.data()[i] / 0.5).epsilon(1e-12));
    }
  }
  CHECK(zeros > 8);
  CHECK(zeros < 56);
  CHECK_THROWS_AS(dropout(x, 1.0, &rng), std::invalid_argument);
}

TEST_CASE("detach cuts the graph while keeping the value") {
  Tensor x = Tensor::from_data({2}, {3, 4}, true);
  Tensor d = detach(x);
  CHECK(d.data() == x.data());
  CHECK_FALSE(d.requires_grad());

  // y = detach(x) * x differentiates like c * x, not x^2.
  Tensor y = reduce_sum_all(mul(d, x));
  y.backward();
  CHECK(x.grad() == std::vector<double>{3, 4});
}

TEST_CASE("backward contract: scalar roots, single pass, accumulation across graphs") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor vec = mul(x, x);
  CHECK_THROWS_AS(vec.backward(), std::logic_error);

  Tensor loss = reduce_sum_all(mul(x, x));
  loss.backward();
  CHECK(x.grad() == std::vector<double>{2, 4});
  CHECK_THROWS_AS(loss.backward(), std::logic_error);

  // A second graph accumulates onto the same leaf gradient.
  reduce_sum_all(mul(x, x)).backward();
  CHECK(x.grad() == std::vector<double>{4, 8});
  x.zero_grad();
  reduce_sum_all(x).backward();
  CHECK(x.grad() == std::vector<double>{1, 1});
}

TEST_CASE("NoGradGuard records no graph") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  NoGradGuard ng;
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("cross entropy matches the scalar oracle") {
  std::mt19937_64 rng(23);
  const int rows = 5, vocab = 8;
  auto logits_data = oracles::random_vector(static_cast<std::size_t>(rows) * vocab, rng, -2.0, 2.0);
  std::vector<int> targets{3, 0, 7, 1, 0};  // two pad positions

  Tensor logits = Tensor::from_data({rows, vocab}, logits_data, true);
  auto [ce, count] = cross_entropy_sum(logits, targets, 0);
  CHECK(count == 3);
  CHECK(ce.item() == doctest::Approx(oracles::cross_entropy(logits_data, rows, vocab, targets, 0, 0.0)).epsilon(1e-12));

  ce.backward();
  // Pad rows contribute nothing, so their logits get zero gradient.
  for (int j = 0; j < vocab; ++j) {
    CHECK(logits.grad()[static_cast<std::size_t>(1) * vocab + j] == 0.0);
    CHECK(logits.grad()[static_cast<std::size_t>(4) * vocab + j] == 0.0);
  }

  auto f = [&](const Tensor& v) { return cross_entropy_sum(v, targets, 0).first; };
  Tensor probe = Tensor::from_data({rows, vocab}, logits_data, true);
  auto report = grad_check(f, probe);
  CHECK_MESSAGE(report.pass, report.message);
}

TEST_CASE("cross entropy with label smoothing") {
  std::mt19937_64 rng(24);
  const int rows = 4, vocab = 6;
  auto logits_data = oracles::random_vector(static_cast<std::size_t>(rows) * vocab, rng, -2.0, 2.0);
  std::vector<int> targets{2, 5, 3, 4};
  const double eps = 0.1;

  Tensor logits = Tensor::from_data({rows, vocab}, logits_data, true);
  auto [ce, count] = cross_entropy_sum(logits, targets, 0, eps);
  CHECK(count == 4);
  CHECK(ce.item() == doctest::Approx(oracles::cross_entropy(logits_data, rows, vocab, targets, 0, eps)).epsilon(1e-12));

  auto f = [&](const Tensor& v) { return cross_entropy_sum(v, targets, 0, eps).first; };
  auto report = grad_check(f, logits);
  CHECK_MESSAGE(report.pass, report.message);
}

TEST_CASE("cross entropy limit cases") {
  // Uniform logits price every token at ln(V).
  const int vocab = 32;
  Tensor uniform = Tensor::full({3, vocab}, 0.7);
  Tensor mean = cross_entropy_mean(uniform, {5, 6, 7}, 0);
  CHECK(mean.item() == doctest::Approx(std::log(static_cast<double>(vocab))).epsilon(1e-12));

  // A huge correct-class margin drives the loss to zero.
  Tensor confident = Tensor::zeros({2, vocab});
  confident.at({0, 9}) = 50.0;
  confident.at({1, 4}) = 50.0;
  CHECK(cross_entropy_mean(confident, {9, 4}, 0).item() == doctest::Approx(0.0).epsilon(1e-9));

  CHECK_THROWS_AS(cross_entropy_mean(uniform, {0, 0, 0}, 0), InputError);
  CHECK_THROWS_AS(cross_entropy_sum(uniform, {1, 2}, 0), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy_sum(uniform, {1, 2, 99}, 0), std::invalid_argument);
}

TEST_CASE("graph diagnostics find the first non-finite op") {
  Tensor x = Tensor::from_data({2}, {1.0, 0.0}, true);
  Tensor y = div(Tensor::from_data({2}, {1.0, 1.0}), x);  // inf at index 1
  Tensor loss = reduce_sum_all(y);
  Graph g = Graph::trace(loss.node().get());
  Node* bad = g.first_nonfinite();
  REQUIRE(bad != nullptr);
  CHECK(std::string(bad->op) == "div");
}

TEST_CASE("grad_check reports non-finite forwards instead of passing") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  auto f = [](const Tensor& v) {
    Tensor bad = div(v, sub(v, v));  // 0/0 everywhere
    return reduce_sum_all(bad);
  };
  auto report = grad_check(f, x);
  CHECK_FALSE(report.pass);
  CHECK(report.message.find("non-finite") != std::string::npos);
}

TEST_CASE("deterministic uniform01 stream") {
  std::mt19937_64 a(99), b(99);
  for (int i = 0; i < 100; ++i) {
    const double u = uniform01(a);
    CHECK(u == uniform01(b));
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}
