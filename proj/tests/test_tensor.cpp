#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "flip/random.hpp"
#include "flip/tensor.hpp"

using namespace flip;
using T = Tensor<double>;

namespace {

T random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  T t = T::zeros(std::move(shape), grad);
  for (Index i = 0; i < t.size(); ++i) t.data()(i) = rng.normal();
  return t;
}

// Naive triple loop.
std::vector<double> naive_matmul(const T& a, const T& b) {
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index p = 0; p < k; ++p) out[static_cast<std::size_t>(i * n + j)] += a.data()(i * k + p) * b.data()(p * n + j);
  return out;
}

// Scalar-loop attention for one head set; rows of `qkv` are grouped by
// sequence. Masked keys get -inf unless every key in the group is masked.
std::vector<double> naive_attention(const T& qkv, Index groups, Index heads, const std::vector<std::uint8_t>& valid) {
  const Index rows = qkv.rows(), w = qkv.cols() / 3, len = rows / groups, hd = w / heads;
  auto at = [&](Index r, Index c) { return qkv.data()(r * 3 * w + c); };
  std::vector<double> out(static_cast<std::size_t>(rows * w), 0.0);
  for (Index g = 0; g < groups; ++g) {
    bool any = valid.empty();
    for (Index j = 0; j < len && !any; ++j) any = valid[static_cast<std::size_t>(g * len + j)] != 0;
    for (Index h = 0; h < heads; ++h) {
      for (Index i = 0; i < len; ++i) {
        std::vector<double> s(static_cast<std::size_t>(len));
        double mx = -1e300;
        for (Index j = 0; j < len; ++j) {
          double dot = 0.0;
          for (Index c = 0; c < hd; ++c) dot += at(g * len + i, h * hd + c) * at(g * len + j, w + h * hd + c);
          dot /= std::sqrt(static_cast<double>(hd));
          const bool ok = !any || valid.empty() || valid[static_cast<std::size_t>(g * len + j)];
          s[static_cast<std::size_t>(j)] = ok ? dot : -INFINITY;
          mx = std::max(mx, s[static_cast<std::size_t>(j)]);
        }
        double z = 0.0;
        for (auto& v : s) z += (v = std::exp(v - mx));
        for (Index c = 0; c < hd; ++c) {
          double acc = 0.0;
          for (Index j = 0; j < len; ++j) acc += s[static_cast<std::size_t>(j)] / z * at(g * len + j, 2 * w + h * hd + c);
          out[static_cast<std::size_t>((g * len + i) * w + h * hd + c)] = acc;
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("matmul matches hand and loop oracles") {
  const T eye = T::from({2, 2}, std::vector<double>{1, 0, 0, 1});
  const T b = T::from({2, 2}, std::vector<double>{3, 4, 5, 6});
  const T c = matmul(eye, b);
  for (Index i = 0; i < 4; ++i) CHECK(c.data()(i) == b.data()(i));

  const T row = T::from({1, 2}, std::vector<double>{1, 2});
  const T col = T::from({2, 1}, std::vector<double>{3, 4});
  CHECK(matmul(row, col).item() == 11.0);

  const T x = random_tensor({5, 7}, 1), y = random_tensor({7, 3}, 2);
  const auto expect = naive_matmul(x, y);
  const T z = matmul(x, y);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(z.data()(static_cast<Index>(i)) == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const T a = T::zeros({2, 3}), b = T::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    CHECK(what.find("[2,3]") != std::string::npos);
  }
}

TEST_CASE("layer_norm examples") {
  const T g = T::full({3}, 1.0), b = T::zeros({3});
  const T flat = layer_norm(T::from({1, 3}, std::vector<double>{1, 1, 1}), g, b);
  for (Index i = 0; i < 3; ++i) CHECK(flat.data()(i) == 0.0);

  const T y = layer_norm(T::from({1, 3}, std::vector<double>{1, 2, 3}), g, b, 0.0);
  CHECK(y.data()(0) == doctest::Approx(-1.224744871).epsilon(1e-9));
  CHECK(y.data()(1) == doctest::Approx(0.0));
  CHECK(y.data()(2) == doctest::Approx(1.224744871).epsilon(1e-9));

  CHECK_THROWS_AS(layer_norm(T::zeros({2, 0}), T::zeros({0}), T::zeros({0})), DimensionError);
}

TEST_CASE("gather_rows selects, rejects duplicates and out-of-range indices") {
  const T x = T::from({4, 2}, std::vector<double>{0, 1, 10, 11, 20, 21, 30, 31}, true);
  const T y = gather_rows(x, {2, 0});
  CHECK(y.data()(0) == 20);
  CHECK(y.data()(1) == 21);
  CHECK(y.data()(2) == 0);
  CHECK(y.data()(3) == 1);

  const T same = gather_rows(x, {0, 1, 2, 3});
  CHECK((same.data() == x.data()).all());

  backward(sum(gather_rows(x, {1})));
  for (Index r = 0; r < 4; ++r) {
    for (Index c = 0; c < 2; ++c) CHECK(x.grad()(r * 2 + c) == (r == 1 ? 1.0 : 0.0));
  }

  CHECK_THROWS_AS(gather_rows(x, {1, 1}), IndexError);
  CHECK_THROWS_AS(gather_rows(x, {4}), IndexError);
  CHECK_THROWS_AS(gather_rows(x, {-1}), IndexError);
}

TEST_CASE("elementwise and reduction family") {
  const T s = softmax_rows(T::from({1, 2}, std::vector<double>{0, 0}));
  CHECK(s.data()(0) == 0.5);
  CHECK(s.data()(1) == 0.5);

  CHECK(gelu(T::zeros({1})).item() == 0.0);
  // x * Phi(x) at x = 1
  CHECK(gelu(T::full({1}, 1.0)).item() == doctest::Approx(0.8413447460685429).epsilon(1e-12));

  const T m = mean_over_axis(T::from({2, 2}, std::vector<double>{2, 4, 6, 8}), 0);
  CHECK(m.data()(0) == 4.0);
  CHECK(m.data()(1) == 6.0);
  const T m1 = mean_over_axis(T::from({2, 2}, std::vector<double>{2, 4, 6, 8}), 1);
  CHECK(m1.data()(0) == 3.0);
  CHECK(m1.data()(1) == 7.0);

  CHECK_THROWS_AS(add(T::zeros({2, 2}), T::zeros({2, 3})), DimensionError);
}

TEST_CASE("softmax rows sum to one") {
  const T p = softmax_rows(random_tensor({6, 9}, 3));
  auto pm = p.matrix();
  for (Index r = 0; r < 6; ++r) CHECK(pm.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("l2_normalize_rows yields unit rows") {
  const T y = l2_normalize_rows(random_tensor({4, 5}, 4));
  for (Index r = 0; r < 4; ++r) CHECK(y.matrix().row(r).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("attention agrees with a scalar-loop oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const T qkv = random_tensor({2 * 5, 3 * 8}, 10 + seed);
    const T out = attention(qkv, 2, 2);
    const auto expect = naive_attention(qkv, 2, 2, {});
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(out.data()(static_cast<Index>(i)) == doctest::Approx(expect[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("attention key mask, all-invalid fallback and probabilities") {
  const T qkv = random_tensor({2 * 4, 3 * 4}, 21);
  const std::vector<std::uint8_t> valid = {1, 1, 0, 0, 0, 0, 0, 0};
  AttentionProbe<double> probe;
  const T out = attention(qkv, 2, 1, valid, &probe);
  const auto expect = naive_attention(qkv, 2, 1, valid);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(out.data()(static_cast<Index>(i)) == doctest::Approx(expect[i]).epsilon(1e-10));
  }
  REQUIRE_FALSE(probe.probabilities.empty());
  for (const auto& p : probe.probabilities) {
    for (Index r = 0; r < p.rows(); ++r) CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  // first group: padded keys carry no weight
  CHECK(probe.probabilities[0](0, 2) == 0.0);
  CHECK(probe.probabilities[0](0, 3) == 0.0);
}

TEST_CASE("a tensor with two consumers accumulates both contributions") {
  T x = random_tensor({3, 3}, 5, true);
  // x used twice: f = sum(x*2) + sum(x^T) ; df/dx = 2 + 1
  backward(add(sum(scale(x, 2.0)), sum(transpose(x))));
  for (Index i = 0; i < x.size(); ++i) CHECK(x.grad()(i) == 3.0);

  T y = random_tensor({3, 3}, 5, true);
  backward(sum(scale(y, 3.0)));
  CHECK((x.grad() == y.grad()).all());
}

TEST_CASE("leaf gradients accumulate across backward calls until cleared") {
  T x = T::full({2}, 1.5, true);
  backward(sum(scale(x, 2.0)));
  backward(sum(scale(x, 2.0)));
  CHECK(x.grad()(0) == 4.0);
  x.zero_grad();
  backward(sum(scale(x, 2.0)));
  CHECK(x.grad()(0) == 2.0);
}

TEST_CASE("every tracked tensor is fully populated after backward") {
  T a = random_tensor({4, 3}, 6, true), b = random_tensor({3, 2}, 7, true);
  T h = gelu(matmul(a, b));
  backward(sum(h));
  CHECK(a.grad().size() == a.size());
  CHECK(b.grad().size() == b.size());
  CHECK(h.grad().size() == h.size());
  CHECK(a.grad().allFinite());
}

TEST_CASE("no-grad guard records no graph") {
  T a = random_tensor({2, 2}, 8, true);
  {
    NoGradGuard guard;
    const T y = scale(a, 2.0);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(scale(a, 2.0).requires_grad());
}

TEST_CASE("identical inputs give bit-identical forward and backward results") {
  auto run = [] {
    T a = random_tensor({6, 12}, 9, true);
    T g = T::full({12}, 1.0, true), bias = T::zeros({12}, true);
    T y = attention(layer_norm(a, g, bias), 2, 2);
    backward(sum(gelu(y)));
    return std::pair{y.data(), a.grad()};
  };
  const auto [y1, g1] = run();
  const auto [y2, g2] = run();
  CHECK((y1 == y2).all());
  CHECK((g1 == g2).all());
}

TEST_CASE("shape bookkeeping") {
  const T t = T::zeros({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.cols() == 4);
  CHECK(t.rows() == 6);
  CHECK(shape_string(t.shape()) == "[2,3,4]");
  CHECK_THROWS_AS(reshape(t, {5, 5}), DimensionError);
  CHECK_THROWS_AS(T::from({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("masked_mean_pool rejects an empty group") {
  const T x = random_tensor({4, 2}, 11);
  CHECK_THROWS_AS(masked_mean_pool(x, 2, {1, 1, 0, 0}), IndexError);
  const T p = masked_mean_pool(x, 2, {1, 0, 1, 1});
  CHECK(p.data()(0) == x.data()(0));
  CHECK(p.data()(2) == doctest::Approx((x.data()(4) + x.data()(6)) / 2));
}

TEST_CASE("cross_entropy_rows against log-sum-exp oracle") {
  const T logits = random_tensor({3, 5}, 12);
  const std::vector<Index> targets = {4, 0, 2};
  double expect = 0.0;
  for (Index r = 0; r < 3; ++r) {
    double z = 0.0;
    for (Index c = 0; c < 5; ++c) z += std::exp(logits.data()(r * 5 + c));
    expect += std::log(z) - logits.data()(r * 5 + targets[static_cast<std::size_t>(r)]);
  }
  CHECK(cross_entropy_rows(logits, targets).item() == doctest::Approx(expect / 3).epsilon(1e-12));
}
