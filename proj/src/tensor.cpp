#include "plfp/tensor.hpp"

#include <cmath>
#include <cstring>

#include "plfp/error.hpp"

namespace plfp {

std::size_t checked_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    check(d >= 0, "tensor: negative dimension in shape ", shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), 0.0) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  check(checked_numel(shape) == data.size(), "tensor: shape ", shape_str(shape),
        " does not match payload of ", data.size(), " values");
}

namespace {
std::size_t flat_index(const Tensor& t, std::initializer_list<int> idx) {
  check(static_cast<int>(idx.size()) == t.rank(), "tensor: index rank ", idx.size(),
        " does not match tensor rank ", t.rank());
  std::size_t flat = 0;
  int axis = 0;
  for (int i : idx) {
    check(i >= 0 && i < t.dim(axis), "tensor: index ", i, " out of range for axis ", axis,
          " of shape ", shape_str(t));
    flat = flat * static_cast<std::size_t>(t.dim(axis)) + static_cast<std::size_t>(i);
    ++axis;
  }
  return flat;
}
}  // namespace

double& Tensor::at(std::initializer_list<int> idx) { return data[flat_index(*this, idx)]; }
double Tensor::at(std::initializer_list<int> idx) const { return data[flat_index(*this, idx)]; }

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  s += "]";
  return s;
}

std::string shape_str(const Tensor& t) { return shape_str(t.shape); }

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

bool all_finite(const Tensor& t) {
  for (double v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  return a.data.size() == b.data.size() &&
         (a.data.empty() ||
          std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0);
}

double l2_norm(const double* p, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += p[i] * p[i];
  return std::sqrt(s);
}

double l2_dist(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace plfp
