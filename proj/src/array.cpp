#include "borderflow/array.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace borderflow {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size())
    throw ShapeError("array: shape " + shape_string(shape_) + " does not hold " +
                     std::to_string(values_.size()) + " values");
}

Array Array::from(std::initializer_list<double> values) {
  return Array(Shape{values.size()}, std::vector<double>(values));
}

double Array::item() const {
  if (values_.size() != 1) throw ShapeError("item() on array of shape " + shape_string(shape_));
  return values_[0];
}

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size())
    throw ShapeError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
  return Array(std::move(shape), values_);
}

void Array::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Array::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace borderflow
