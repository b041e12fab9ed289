#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmsc {

// Dense 4-D shape (batch, channel, height, width).
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    bool operator==(const Shape&) const = default;
    std::size_t count() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::string str() const;
};

// Dense 4-D tensor of 64-bit reals in row-major (n,c,h,w) order.
// `grad`, when allocated, mirrors the shape of `data`.
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w) : shape_{n, c, h, w} {
        if (n < 0 || c < 0 || h < 0 || w < 0)
            throw std::invalid_argument("Tensor: negative dimension in " + shape_.str());
        data_.assign(shape_.count(), 0.0);
    }
    explicit Tensor(Shape s) : Tensor(s.n, s.c, s.h, s.w) {}

    static Tensor full(Shape s, double value) {
        Tensor t(s);
        t.data_.assign(t.data_.size(), value);
        return t;
    }

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    std::size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + iy) * shape_.w + ix;
    }
    double& at(int in, int ic, int iy, int ix) { return data_[index(in, ic, iy, ix)]; }
    double at(int in, int ic, int iy, int ix) const { return data_[index(in, ic, iy, ix)]; }

    // Optional gradient storage, same shape as data.
    bool has_grad() const { return !grad_.empty(); }
    void alloc_grad() { grad_.assign(data_.size(), 0.0); }
    void drop_grad() { grad_.clear(); }
    std::vector<double>& grad() {
        if (grad_.empty()) throw std::logic_error("Tensor: grad not allocated");
        return grad_;
    }
    const std::vector<double>& grad() const {
        if (grad_.empty()) throw std::logic_error("Tensor: grad not allocated");
        return grad_;
    }

    bool all_finite() const;

private:
    Shape shape_{};
    std::vector<double> data_;
    std::vector<double> grad_;
};

// Throws std::invalid_argument naming both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& a, double s);
void add_inplace(Tensor& a, const Tensor& b);
void axpy_inplace(Tensor& a, double s, const Tensor& b);  // a += s*b
double dot(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace cmsc
