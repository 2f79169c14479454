#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace edp {

using Vec = Eigen::VectorXd;
using Index = Eigen::Index;
using Shape = std::vector<Index>;

using MatrixRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

Index numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Row-major n-dimensional array over flat 64-bit storage.
struct Tensor {
  Shape shape;
  Vec data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(Vec::Zero(numel(shape))) {}
  Tensor(Shape s, Vec d);

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  Index size() const { return data.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  bool finite() const { return data.allFinite(); }
};

bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace edp
