#ifndef FLIP_GRADCHECK_HPP_
#define FLIP_GRADCHECK_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flip/random.hpp"
#include "flip/tensor.hpp"

namespace flip {

using VerifyTensor = Tensor<double>;
using OpFunction = std::function<VerifyTensor(const std::vector<VerifyTensor>&)>;
using InputFiller = std::function<void(std::size_t input, VerifyTensor&, Rng&)>;

struct GradCheckReport {
  std::string name;
  /// Worst relative error per input.
  std::vector<double> max_rel_error;
  /// Largest analytic gradient magnitude seen where the numeric one is exactly zero.
  double max_abs_where_numeric_zero = 0.0;
  double tolerance = 0.0;

  double worst() const {
    double w = 0.0;
    for (double e : max_rel_error) w = std::max(w, e);
    return w;
  }
  bool passed() const { return worst() < tolerance; }
};

/// Compares analytic gradients with central differences in double precision.
///
/// The op output is reduced with fixed random weights so that every output
/// element contributes a distinct cotangent. Relative error is
/// |a - n| / max(|a|, |n|, 1e-6) per element.
inline GradCheckReport check_gradients(const OpFunction& op, const std::vector<Shape>& input_shapes, double tolerance,
                                       std::uint64_t seed, double step = 1e-5, const InputFiller& fill = {}) {
  Rng rng(seed);
  std::vector<VerifyTensor> inputs;
  for (std::size_t i = 0; i < input_shapes.size(); ++i) {
    VerifyTensor t = VerifyTensor::zeros(input_shapes[i], true);
    for (Index j = 0; j < t.size(); ++j) t.data()(j) = rng.normal();
    if (fill) fill(i, t, rng);
    inputs.push_back(t);
  }
  VerifyTensor probe = op(inputs);
  VerifyTensor::Array weights(probe.size());
  for (Index j = 0; j < weights.size(); ++j) weights(j) = rng.normal();

  backward(weighted_sum(probe, weights));

  auto objective = [&]() {
    NoGradGuard guard;
    return (op(inputs).data() * weights).sum();
  };

  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& input : inputs) {
    double worst = 0.0;
    for (Index j = 0; j < input.size(); ++j) {
      const double saved = input.data()(j);
      input.data()(j) = saved + step;
      const double up = objective();
      input.data()(j) = saved - step;
      const double down = objective();
      input.data()(j) = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = input.grad()(j);
      if (numeric == 0.0) {
        report.max_abs_where_numeric_zero = std::max(report.max_abs_where_numeric_zero, std::abs(analytic));
      }
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    report.max_rel_error.push_back(worst);
  }
  return report;
}

/// One registered differentiable op with the shapes it is checked on.
struct OpCase {
  std::string name;
  OpFunction op;
  std::vector<Shape> shapes;
  InputFiller fill;
};

/// Every differentiable op of the engine, each bound to a representative
/// configuration used by the gradient suite.
inline std::vector<OpCase> registered_op_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"matmul", [](const auto& in) { return matmul(in[0], in[1]); }, {{3, 4}, {4, 2}}, {}});
  cases.push_back({"transpose", [](const auto& in) { return transpose(in[0]); }, {{3, 5}}, {}});
  cases.push_back({"reshape", [](const auto& in) { return reshape(in[0], {6, 2}); }, {{3, 4}}, {}});
  cases.push_back({"add", [](const auto& in) { return add(in[0], in[1]); }, {{3, 4}, {3, 4}}, {}});
  cases.push_back({"add_tiled(bias)", [](const auto& in) { return add_tiled(in[0], in[1]); }, {{5, 3}, {3}}, {}});
  cases.push_back({"add_tiled(table)", [](const auto& in) { return add_tiled(in[0], in[1]); }, {{6, 3}, {2, 3}}, {}});
  cases.push_back({"scale", [](const auto& in) { return scale(in[0], 0.37); }, {{4, 3}}, {}});
  cases.push_back({"mul_scalar", [](const auto& in) { return mul_scalar(in[0], in[1]); }, {{3, 3}, {1}}, {}});
  cases.push_back({"exp", [](const auto& in) { return exp(in[0]); }, {{2, 5}}, {}});
  cases.push_back({"clamp_max",
                   [](const auto& in) { return clamp_max(in[0], 0.5); },
                   {{4, 4}},
                   [](std::size_t, VerifyTensor& t, Rng&) {
                     // keep every element away from the kink
                     for (Index j = 0; j < t.size(); ++j) {
                       double& x = t.data()(j);
                       if (std::abs(x - 0.5) < 0.05) x += 0.2;
                     }
                   }});
  cases.push_back({"gelu", [](const auto& in) { return gelu(in[0]); }, {{3, 6}}, {}});
  cases.push_back({"layer_norm",
                   [](const auto& in) { return layer_norm(in[0], in[1], in[2], kLayerNormEps); },
                   {{4, 8}, {8}, {8}},
                   {}});
  cases.push_back({"softmax_rows", [](const auto& in) { return softmax_rows(in[0]); }, {{3, 5}}, {}});
  cases.push_back({"l2_normalize_rows", [](const auto& in) { return l2_normalize_rows(in[0]); }, {{4, 3}}, {}});
  cases.push_back({"mean_over_axis(0)", [](const auto& in) { return mean_over_axis(in[0], 0); }, {{3, 4}}, {}});
  cases.push_back({"mean_over_axis(1)", [](const auto& in) { return mean_over_axis(in[0], 1); }, {{3, 4}}, {}});
  cases.push_back({"masked_mean_pool",
                   [](const auto& in) { return masked_mean_pool(in[0], 2, {1, 0, 1, 1, 1, 1, 0, 0}); },
                   {{8, 3}},
                   {}});
  cases.push_back({"gather_rows", [](const auto& in) { return gather_rows(in[0], {7, 2, 9, 0}); }, {{10, 3}}, {}});
  cases.push_back({"scatter_rows", [](const auto& in) { return scatter_rows(in[0], {4, 1, 2}, 6); }, {{3, 2}}, {}});
  cases.push_back({"embedding", [](const auto& in) { return embedding(in[0], {1, 3, 1, 0, 3}); }, {{5, 4}}, {}});
  cases.push_back({"attention",
                   [](const auto& in) { return attention(in[0], 2, 2); },
                   {{6, 12}},
                   {}});
  cases.push_back({"attention(key mask)",
                   [](const auto& in) { return attention(in[0], 2, 2, {1, 1, 0, 0, 0, 0}); },
                   {{6, 12}},
                   {}});
  cases.push_back({"cross_entropy_rows",
                   [](const auto& in) { return cross_entropy_rows(in[0], {0, 2, 1}); },
                   {{3, 4}},
                   {}});
  cases.push_back({"mse",
                   [](const auto& in) {
                     VerifyTensor::Array target = VerifyTensor::Array::LinSpaced(in[0].size(), -1.0, 1.0);
                     return mse(in[0], target);
                   },
                   {{3, 4}},
                   {}});
  cases.push_back({"weighted_sum",
                   [](const auto& in) { return weighted_sum(in[0], VerifyTensor::Array::LinSpaced(6, 0.5, 3.0)); },
                   {{2, 3}},
                   {}});
  return cases;
}

}  // namespace flip

#endif  // FLIP_GRADCHECK_HPP_
