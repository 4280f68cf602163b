#ifndef NEARMISS_TEST_UTIL_HPP
#define NEARMISS_TEST_UTIL_HPP

#include <cmath>
#include <functional>

#include "nearmiss/rng.hpp"
#include "nearmiss/tensor.hpp"

namespace testutil {

inline void fill_random(nearmiss::Tensor& t, nearmiss::Rng& rng, double scale = 1.0) {
    for (auto& v : t.data) v = rng.normal(0.0, scale);
}

// central finite difference of f w.r.t. *x
inline double fd_grad(double* x, const std::function<double()>& f, double h = 1e-5) {
    double x0 = *x;
    *x = x0 + h;
    double fp = f();
    *x = x0 - h;
    double fm = f();
    *x = x0;
    return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    double denom = std::max({1e-8, std::abs(a), std::abs(b)});
    return std::abs(a - b) / denom;
}

}  // namespace testutil

#endif
