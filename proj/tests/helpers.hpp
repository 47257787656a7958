#pragma once

// Shared test utilities: central-difference gradient checking and scratch
// directories that live under the ctest working directory.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

namespace testutil {

// Central-difference numeric gradient of a scalar function of a matrix.
inline Eigen::MatrixXd numeric_grad(const std::function<double(const Eigen::MatrixXd&)>& f,
                                    Eigen::MatrixXd x, double h = 1e-6) {
    Eigen::MatrixXd g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double orig = x(i, j);
            x(i, j) = orig + h;
            const double fp = f(x);
            x(i, j) = orig - h;
            const double fm = f(x);
            x(i, j) = orig;
            g(i, j) = (fp - fm) / (2.0 * h);
        }
    }
    return g;
}

// Max relative error between an analytic and a numeric gradient, with an
// absolute floor so near-zero entries do not blow up the ratio.
inline double grad_rel_err(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric,
                           double floor = 1e-6) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.rows(); ++i) {
        for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
            double denom = std::max({std::abs(analytic(i, j)), std::abs(numeric(i, j)), floor});
            worst = std::max(worst, std::abs(analytic(i, j) - numeric(i, j)) / denom);
        }
    }
    return worst;
}

// Fresh empty directory under the current working directory; wiped on entry
// so reruns start clean.
inline std::string scratch_dir(const std::string& name) {
    namespace fs = std::filesystem;
    fs::path p = fs::path("scratch") / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

}  // namespace testutil
