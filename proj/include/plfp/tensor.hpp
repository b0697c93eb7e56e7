#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace plfp {

// Dense row-major tensor of 64-bit floats.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  Tensor(std::vector<int> s, std::vector<double> d);

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  bool empty() const { return data.empty(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // Bounds-checked multi-index access for tests and cold paths.
  double& at(std::initializer_list<int> idx);
  double at(std::initializer_list<int> idx) const;
};

std::size_t checked_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);
std::string shape_str(const Tensor& t);
bool same_shape(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);
bool bit_equal(const Tensor& a, const Tensor& b);

double l2_norm(const double* p, std::size_t n);
double l2_dist(const double* a, const double* b, std::size_t n);

}  // namespace plfp
