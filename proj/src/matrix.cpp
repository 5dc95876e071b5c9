// Copyright 2026 The oelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "oelm/matrix.hpp"

#include <algorithm>
#include <string>

#include "oelm/error.hpp"

namespace oelm {

namespace {

// Rows of `a` processed together so each row of `b` is reused while cached.
constexpr std::size_t kRowBlock = 8;

void require(bool ok, const char* op, MatrixView a, MatrixView b) {
  if (!ok) {
    fail(ErrorKind::kShape, std::string(op) + ": incompatible shapes " +
                                std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                " and " + std::to_string(b.rows) + "x" +
                                std::to_string(b.cols));
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail(ErrorKind::kShape, "matrix data length " + std::to_string(data_.size()) +
                                " does not match " + std::to_string(rows_) + "x" +
                                std::to_string(cols_));
  }
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void matmul(MatrixView a, MatrixView b, Matrix& c) {
  require(a.cols == b.rows, "matmul", a, b);
  if (c.rows() != a.rows || c.cols() != b.cols) c = Matrix(a.rows, b.cols);
  c.fill(0.0);
  const std::size_t n = b.cols;
  for (std::size_t i0 = 0; i0 < a.rows; i0 += kRowBlock) {
    const std::size_t i1 = std::min(a.rows, i0 + kRowBlock);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double* brow = b.data + k * n;
      for (std::size_t i = i0; i < i1; ++i) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        double* crow = c.row(i).data();
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
    }
  }
}

Matrix matmul(MatrixView a, MatrixView b) {
  Matrix c(a.rows, b.cols);
  matmul(a, b, c);
  return c;
}

void matmul_bt(MatrixView a, MatrixView b, Matrix& c) {
  require(a.cols == b.cols, "matmul_bt", a, b);
  if (c.rows() != a.rows || c.cols() != b.rows) c = Matrix(a.rows, b.rows);
  const std::size_t k = a.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data + i * k;
    double* crow = c.row(i).data();
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.data + j * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
      crow[j] = acc;
    }
  }
}

void matmul_at_acc(MatrixView a, MatrixView b, Matrix& c) {
  require(a.rows == b.rows && c.rows() == a.cols && c.cols() == b.cols, "matmul_at_acc",
          a, b);
  const std::size_t n = b.cols;
  for (std::size_t t = 0; t < a.rows; ++t) {
    const double* brow = b.data + t * n;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double ati = a(t, i);
      if (ati == 0.0) continue;
      double* crow = c.row(i).data();
      for (std::size_t j = 0; j < n; ++j) crow[j] += ati * brow[j];
    }
  }
}

}  // namespace oelm
