#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace scan {

/// Dense row-major tensor of doubles. Shapes are small (rank <= 4 in
/// practice) and storage is always contiguous; there are no views.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0);
    }

    Tensor(std::initializer_list<int64_t> shape)
        : Tensor(std::vector<int64_t>(shape)) {}

    static Tensor full(std::vector<int64_t> shape, double value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data) {
        if (numel_of(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("Tensor::from_data: shape/data size mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int64_t a, int64_t b) { return data_[static_cast<size_t>(a * shape_[1] + b)]; }
    double at(int64_t a, int64_t b) const { return data_[static_cast<size_t>(a * shape_[1] + b)]; }

    double& at(int64_t a, int64_t b, int64_t c) {
        return data_[static_cast<size_t>((a * shape_[1] + b) * shape_[2] + c)];
    }
    double at(int64_t a, int64_t b, int64_t c) const {
        return data_[static_cast<size_t>((a * shape_[1] + b) * shape_[2] + c)];
    }

    double& at(int64_t a, int64_t b, int64_t c, int64_t d) {
        return data_[static_cast<size_t>(((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d)];
    }
    double at(int64_t a, int64_t b, int64_t c, int64_t d) const {
        return data_[static_cast<size_t>(((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d)];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(std::vector<int64_t> shape) const {
        if (numel_of(shape) != numel())
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape_[i]);
        return s + "]";
    }

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

inline void require_shape(const Tensor& t, const std::vector<int64_t>& shape,
                          const char* what) {
    if (t.shape() != shape)
        throw std::invalid_argument(std::string(what) + ": unexpected shape " + t.shape_str());
}

}  // namespace scan
