#ifndef NEARMISS_TENSOR_HPP
#define NEARMISS_TENSOR_HPP

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace nearmiss {

// Dense row-major tensor of doubles. Layout conventions are per use site:
// network activations are (N, C, T, H, W), clip volumes are (T, H, W, C).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(std::size_t(numel_of(shape)), 0.0) {}
    Tensor(std::vector<int> s, double fill)
        : shape(std::move(s)), data(std::size_t(numel_of(shape)), fill) {}

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    std::int64_t numel() const { return std::int64_t(data.size()); }
    int rank() const { return int(shape.size()); }
    int size(int i) const { return shape.at(std::size_t(i)); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& operator[](std::int64_t i) { return data[std::size_t(i)]; }
    double operator[](std::int64_t i) const { return data[std::size_t(i)]; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

}  // namespace nearmiss

#endif
