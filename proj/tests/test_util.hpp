#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fusionbench/matrix.hpp"
#include "fusionbench/nn.hpp"
#include "fusionbench/rng.hpp"

// Central-difference gradient oracle. Lives on the test side only; the
// library's analytic backward passes are checked against it but never call it.
namespace fbtest {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

struct GradCheckReport {
    double worst = 0.0;
    std::string where;
};

// Perturbs every parameter coordinate reachable through `visit`, recomputes
// the loss via `loss`, and compares the numeric slope against the analytic
// gradient already accumulated in each Param's grad buffer.
template <typename VisitFn, typename LossFn>
GradCheckReport check_param_gradients(VisitFn&& visit, LossFn&& loss, double h = 1e-5) {
    GradCheckReport report;
    std::vector<std::pair<std::string, fusionbench::Param*>> params;
    visit([&](const std::string& n, fusionbench::Param& p) { params.emplace_back(n, &p); });
    for (auto& [name, p] : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value.raw()[i];
            const double step = h * std::max(1.0, std::abs(saved));
            p->value.raw()[i] = saved + step;
            const double up = loss();
            p->value.raw()[i] = saved - step;
            const double down = loss();
            p->value.raw()[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double err = rel_err(p->grad.raw()[i], numeric);
            if (err > report.worst) {
                report.worst = err;
                report.where = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

// Same oracle for gradients with respect to a plain input matrix.
template <typename LossFn>
GradCheckReport check_input_gradient(fusionbench::Matrix& x, const fusionbench::Matrix& analytic,
                                     LossFn&& loss, double h = 1e-5) {
    GradCheckReport report;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x.raw()[i];
        const double step = h * std::max(1.0, std::abs(saved));
        x.raw()[i] = saved + step;
        const double up = loss();
        x.raw()[i] = saved - step;
        const double down = loss();
        x.raw()[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double err = rel_err(analytic.raw()[i], numeric);
        if (err > report.worst) {
            report.worst = err;
            report.where = "input[" + std::to_string(i) + "]";
        }
    }
    return report;
}

inline fusionbench::Matrix random_matrix(std::size_t rows, std::size_t cols, fusionbench::Rng& rng,
                                         double lo = -1.0, double hi = 1.0) {
    fusionbench::Matrix out(rows, cols);
    for (double& v : out.raw()) v = rng.uniform(lo, hi);
    return out;
}

// Weighted-sum readout used to turn a matrix-valued output into a scalar loss
// with a dense, well-conditioned gradient.
inline double weighted_sum(const fusionbench::Matrix& out, const fusionbench::Matrix& weights) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += out.raw()[i] * weights.raw()[i];
    return acc;
}

// Fresh scratch directory under the test temp root.
inline std::string temp_dir(const std::string& tag) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / ("fusionbench_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

}  // namespace fbtest
