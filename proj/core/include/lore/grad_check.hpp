#pragma once

#include <cstring>
#include <vector>

#include "lore/tensor.hpp"

namespace lore {

// Compares the f32 reverse-mode gradient of a scalar-valued tensor function
// against central finite differences. The difference quotient is evaluated on
// the f64 instantiation of the same graph so the check is limited by the
// truncation error of the stencil, not by f32 rounding. `f` must be callable
// as f(Tape<S>&, const Tensor<S>&) -> scalar Tensor<S> for S in {float,
// double}; a generic lambda fits.
//
// Returns max_i |analytic_i - cd_i| / max(|analytic_i|, |cd_i|, 1e-8).
template <typename F>
double grad_check(F&& f, const Tensor<float>& x0, double eps = 1e-3) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be > 0");

    Tape<float> tape;
    Tensor<float> x = x0.clone(true);
    Tensor<float> y = f(tape, x);
    if (y.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
    const float y0 = y.scalar();
    {
        Tape<float> probe;
        Tensor<float> x2 = x0.clone(true);
        const float y1 = f(probe, x2).scalar();
        if (std::memcmp(&y0, &y1, sizeof(float)) != 0)
            throw numeric_error("grad_check: f is not deterministic");
    }
    tape.backward(y);

    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) {
        auto g = x.grad();
        for (int64_t i = 0; i < x.numel(); ++i) analytic[i] = static_cast<double>(g[i]);
    }

    const Tensor<double> xd = x0.cast<double>();
    double max_err = 0.0;
    for (int64_t i = 0; i < x0.numel(); ++i) {
        double fp, fm;
        {
            Tensor<double> xp = xd.clone(false);
            xp.values_mut()[i] += eps;
            Tape<double> t;
            fp = static_cast<double>(f(t, xp).scalar());
        }
        {
            Tensor<double> xm = xd.clone(false);
            xm.values_mut()[i] -= eps;
            Tape<double> t;
            fm = static_cast<double>(f(t, xm).scalar());
        }
        const double cd = (fp - fm) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(cd), 1e-8});
        max_err = std::max(max_err, std::abs(analytic[i] - cd) / denom);
    }
    return max_err;
}

}  // namespace lore
