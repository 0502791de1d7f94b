// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels and the AdamW optimizer. All arithmetic is double precision.
//
// The span-level kernels in `kernels` fix the accumulation order of every
// output element (ascending inner index), independent of how many rows are
// processed at once. The transformer relies on this: a single-row
// incremental forward and a full-sequence forward produce bit-identical
// activations.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace coopgen {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  // Throws DimensionError when values.size() != rows * cols.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool all_finite() const;
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Standard matrix product; throws DimensionError unless a.cols() == b.rows().
Matrix matmul(const Matrix& a, const Matrix& b);

namespace kernels {

// out[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// out[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// out[k x n] += a[m x k]^T * b[m x n]   (weight-gradient shape; always accumulates)
void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> out,
                 std::size_t m, std::size_t k, std::size_t n);
// out[n] += sum over rows of b[m x n]
void add_column_sums(std::span<const double> b, std::span<double> out, std::size_t m,
                     std::size_t n);
// each row of x[m x n] += bias[n]
void add_row_bias(std::span<double> x, std::span<const double> bias, std::size_t m,
                  std::size_t n);

}  // namespace kernels

/// softmax(v / temperature) with max subtraction. Throws ParameterError for
/// temperature <= 0.
std::vector<double> softmax(std::span<const double> v, double temperature = 1.0);
void softmax_in_place(std::span<double> v);
std::vector<double> log_softmax(std::span<const double> v);
double log_sum_exp(std::span<const double> v);

/// -log softmax(logits)[target], via log-sum-exp. Throws IndexError.
double cross_entropy(std::span<const double> logits, std::size_t target_index);

double gelu(double x);
double gelu_derivative(double x);

struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;

  static OptimizerState for_parameters(std::size_t count, double learning_rate,
                                       double weight_decay);
};

/// One AdamW update with decoupled weight decay and bias-corrected moments.
/// Throws DimensionError when params, grads and moments disagree in size.
void adamw_step(std::span<double> params, std::span<const double> grads, OptimizerState& state);

}  // namespace coopgen
