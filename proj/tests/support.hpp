#pragma once

// Shared helpers for the test suites: random tensor construction and the
// central finite-difference gradient oracle. The oracle stays independent of
// the tape: it only re-runs a forward closure at perturbed parameter values.

#include <cmath>
#include <functional>
#include <vector>

#include "aga/rng.hpp"
#include "aga/tensor.hpp"

namespace aga::test {

inline Tensor random_tensor(std::vector<size_t> shape, Rng& rng, double scale = 1.0,
                            bool requires_grad = false) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-scale, scale);
    Tensor t(std::move(shape), std::move(v));
    t.set_requires_grad(requires_grad);
    return t;
}

struct FdReport {
    double max_rel_err = 0.0;
    size_t checked = 0;
};

/// Central finite differences on every entry of `params` against the tape
/// gradient of the scalar produced by `forward`. `forward` must rebuild the
/// graph from the current parameter values on each call.
inline FdReport finite_difference_check(const std::function<Tensor()>& forward,
                                        std::vector<Tensor> params,
                                        double h = 1e-5, size_t max_entries_per_param = 64) {
    Tensor loss = forward();
    for (Tensor& p : params) {
        if (p.has_grad()) p.zero_grad();
    }
    backward(loss);

    FdReport report;
    for (Tensor& p : params) {
        std::vector<double> analytic = p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0);
        size_t step = std::max<size_t>(1, p.numel() / max_entries_per_param);
        for (size_t i = 0; i < p.numel(); i += step) {
            double saved = p.data()[i];
            p.data()[i] = saved + h;
            double up = forward().value();
            p.data()[i] = saved - h;
            double down = forward().value();
            p.data()[i] = saved;
            double fd = (up - down) / (2.0 * h);
            double an = analytic[i];
            double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.checked;
        }
    }
    return report;
}

} // namespace aga::test
