#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace pmdg {

/**
 * Dense row-major tensor of float64, rank 0..4.
 *
 * This is a plain value type: the training graph, image pipelines and
 * penalties all move Tensors around by value. Shapes use int dims; images are
 * [c,h,w], batches [b,c,h,w], feature matrices [n,d].
 */
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at(int i, int j);              // rank 2
    double at(int i, int j) const;
    double& at(int c, int y, int x);       // rank 3
    double at(int c, int y, int x) const;
    double& at(int b, int c, int y, int x);  // rank 4
    double at(int b, int c, int y, int x) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    // In-place helpers used by pipelines (no gradient semantics).
    Tensor& add_(const Tensor& other);
    Tensor& scale_(double s);
    Tensor& clamp_(double lo, double hi);
    void fill(double v);

    double min() const;
    double max() const;
    double sum() const;
    double mean() const;
    bool all_finite() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace pmdg
