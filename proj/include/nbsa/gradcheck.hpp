#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <cstdio>
#include <string>
#include <vector>

#include "nbsa/numerics.hpp"

namespace nbsa {

/// A differentiable operation: forward value plus vector-Jacobian product.
template <typename Scalar = double>
struct DiffOp {
    using Mat = MatX<Scalar>;
    using Inputs = std::span<const Mat>;

    std::function<Mat(Inputs)> forward;
    /// (inputs, output, upstream cotangent) -> one cotangent per input.
    std::function<std::vector<Mat>(Inputs, const Mat&, const Mat&)> vjp;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<double> per_input;
    bool finite = true;
    std::string diagnostic;
    // Location and values of the worst entry.
    std::size_t worst_input = 0;
    Eigen::Index worst_entry = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;

    bool passed(double tolerance) const { return finite && max_rel_err <= tolerance; }
};

/// Relative error with the floor used throughout the check.
inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

/// Compares the VJP of a random scalar projection <R, op(point)> against
/// central differences, entry by entry. R is drawn from `seed`.
template <typename Scalar>
GradCheckReport grad_check(const DiffOp<Scalar>& op, std::vector<MatX<Scalar>> point, Scalar eps,
                           std::uint64_t seed = 0x5eed) {
    if (!(eps > Scalar(0))) {
        throw ArgumentError("grad_check: eps must be positive");
    }
    GradCheckReport report;
    report.per_input.assign(point.size(), 0.0);

    const MatX<Scalar> out = op.forward(point);
    if (!out.allFinite()) {
        report.finite = false;
        report.diagnostic = "non-finite forward output at the base point";
        return report;
    }
    std::mt19937_64 rng(seed);
    const MatX<Scalar> projection = normal_matrix<Scalar>(out.rows(), out.cols(), rng);
    const std::vector<MatX<Scalar>> analytic = op.vjp(point, out, projection);
    if (analytic.size() != point.size()) {
        throw ShapeError("grad_check: vjp returned " + std::to_string(analytic.size()) + " cotangents for " +
                         std::to_string(point.size()) + " inputs");
    }

    auto projected = [&](std::span<const MatX<Scalar>> p) {
        return op.forward(p).cwiseProduct(projection).sum();
    };

    for (std::size_t i = 0; i < point.size(); ++i) {
        if (analytic[i].rows() != point[i].rows() || analytic[i].cols() != point[i].cols()) {
            throw ShapeError("grad_check: cotangent " + std::to_string(i) + " has shape " +
                             shape_str(analytic[i].rows(), analytic[i].cols()) + ", input has " +
                             shape_str(point[i].rows(), point[i].cols()));
        }
        for (Eigen::Index j = 0; j < point[i].size(); ++j) {
            Scalar& entry = point[i].data()[j];
            const Scalar saved = entry;
            entry = saved + eps;
            const Scalar plus = projected(point);
            entry = saved - eps;
            const Scalar minus = projected(point);
            entry = saved;

            const Scalar numeric = (plus - minus) / (2 * eps);
            const Scalar a = analytic[i].data()[j];
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                report.finite = false;
                report.diagnostic = "non-finite value at input " + std::to_string(i) + " entry " + std::to_string(j);
                report.max_rel_err = std::numeric_limits<double>::infinity();
                report.per_input[i] = report.max_rel_err;
                return report;
            }
            const double err = relative_error(static_cast<double>(a), static_cast<double>(numeric));
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_input = i;
                report.worst_entry = j;
                report.worst_analytic = static_cast<double>(a);
                report.worst_numeric = static_cast<double>(numeric);
            }
            report.per_input[i] = std::max(report.per_input[i], err);
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "worst entry %td of input %zu: analytic %.9e, numeric %.9e",
                  static_cast<std::ptrdiff_t>(report.worst_entry), report.worst_input, report.worst_analytic,
                  report.worst_numeric);
    report.diagnostic = buf;
    return report;
}

}  // namespace nbsa
