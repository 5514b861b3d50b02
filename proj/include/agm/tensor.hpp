// Copyright 2026 The AGM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef AGM_TENSOR_HPP_
#define AGM_TENSOR_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "agm/common.hpp"

namespace agm {

/// Row-major real matrix used for embeddings and probability batches.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Storage is aligned so vectorized kernels take the same path on every run.
using TensorData = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense row-major n-d array of doubles. Image batches use NCHW.
struct Tensor {
  std::vector<int> shape;
  TensorData data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // NCHW accessors.
  double& at(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  double at(int n, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }

  Eigen::Map<Matrix> as_matrix() {
    return Eigen::Map<Matrix>(data.data(), shape.at(0), static_cast<Eigen::Index>(size() / shape.at(0)));
  }
  Eigen::Map<const Matrix> as_matrix() const {
    return Eigen::Map<const Matrix>(data.data(), shape.at(0), static_cast<Eigen::Index>(size() / shape.at(0)));
  }

  static Tensor from_matrix(const Matrix& m) {
    Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    std::copy(m.data(), m.data() + m.size(), t.data.begin());
    return t;
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape) {
    fail(ErrorKind::kShape, what, ": shape mismatch ", a.shape_str(), " vs ", b.shape_str());
  }
}

}  // namespace agm

#endif  // AGM_TENSOR_HPP_
