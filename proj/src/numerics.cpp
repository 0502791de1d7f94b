// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include "coopgen/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "coopgen/errors.hpp"

namespace coopgen {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("matrix data has " + std::to_string(data_.size()) + " values, expected " +
                         std::to_string(rows_ * cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch: (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + ") * (" + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
  Matrix out(a.rows(), b.cols());
  kernels::gemm_nn(a.values(), b.values(), out.values(), a.rows(), a.cols(), b.cols());
  return out;
}

namespace kernels {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    if (!accumulate) std::fill(row, row + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    double* orow = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += arow[p] * brow[p];
      orow[j] = accumulate ? orow[j] + sum : sum;
    }
  }
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> out,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    const double* brow = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* orow = out.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void add_column_sums(std::span<const double> b, std::span<double> out, std::size_t m,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = b.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += row[j];
  }
}

void add_row_bias(std::span<double> x, std::span<const double> bias, std::size_t m,
                  std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = x.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
  }
}

}  // namespace kernels

void softmax_in_place(std::span<double> v) {
  if (v.empty()) return;
  const double peak = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double& x : v) {
    x = std::exp(x - peak);
    total += x;
  }
  for (double& x : v) x /= total;
}

std::vector<double> softmax(std::span<const double> v, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("softmax temperature must be > 0");
  std::vector<double> out(v.begin(), v.end());
  if (temperature != 1.0) {
    for (double& x : out) x /= temperature;
  }
  softmax_in_place(out);
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double peak = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(peak)) return peak;
  double total = 0.0;
  for (double x : v) total += std::exp(x - peak);
  return peak + std::log(total);
}

namespace {

// log(sum(exp(v - peak))); subtracting it from (v - peak) keeps full precision
// when the logits are large.
double shifted_log_total(std::span<const double> v, double peak) {
  double total = 0.0;
  for (double x : v) total += std::exp(x - peak);
  return std::log(total);
}

}  // namespace

std::vector<double> log_softmax(std::span<const double> v) {
  std::vector<double> out(v.size());
  if (v.empty()) return out;
  const double peak = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(peak)) {
    const double lse = log_sum_exp(v);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
    return out;
  }
  const double log_total = shifted_log_total(v, peak);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - peak) - log_total;
  return out;
}

double cross_entropy(std::span<const double> logits, std::size_t target_index) {
  if (target_index >= logits.size()) {
    throw IndexError("cross_entropy target " + std::to_string(target_index) +
                     " out of range for " + std::to_string(logits.size()) + " logits");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(peak)) return log_sum_exp(logits) - logits[target_index];
  return shifted_log_total(logits, peak) - (logits[target_index] - peak);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

OptimizerState OptimizerState::for_parameters(std::size_t count, double learning_rate,
                                              double weight_decay) {
  OptimizerState state;
  state.first_moment.assign(count, 0.0);
  state.second_moment.assign(count, 0.0);
  state.learning_rate = learning_rate;
  state.weight_decay = weight_decay;
  return state;
}

void adamw_step(std::span<double> params, std::span<const double> grads, OptimizerState& state) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("adamw_step: parameter, gradient and moment sizes differ");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const double lr = state.learning_rate;
  const double decay = 1.0 - lr * state.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] = params[i] * decay - lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

}  // namespace coopgen
