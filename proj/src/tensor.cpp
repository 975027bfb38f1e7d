#include "pmdg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pmdg {

namespace {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
        throw std::invalid_argument("Tensor: data size does not match shape " + shape_str());
    }
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

double& Tensor::at(int i, int j) {
    return data_[static_cast<std::size_t>(i) * dim(1) + j];
}
double Tensor::at(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * dim(1) + j];
}
double& Tensor::at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x];
}
double Tensor::at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x];
}
double& Tensor::at(int b, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
}
double Tensor::at(int b, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ",";
        os << shape_[i];
    }
    os << "]";
    return os.str();
}

Tensor& Tensor::add_(const Tensor& other) {
    if (!same_shape(other)) throw std::invalid_argument("add_: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::scale_(double s) {
    for (auto& v : data_) v *= s;
    return *this;
}

Tensor& Tensor::clamp_(double lo, double hi) {
    for (auto& v : data_) v = std::min(hi, std::max(lo, v));
    return *this;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::min() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : data_) m = std::min(m, v);
    return m;
}

double Tensor::max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : data_) m = std::max(m, v);
    return m;
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    if (a.size() == 0) return true;
    return std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace pmdg
