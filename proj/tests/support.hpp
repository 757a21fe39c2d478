#pragma once

#include "kmhe/netgrad.hpp"
#include "kmhe/trajectory.hpp"

#include <doctest.h>

#include <functional>
#include <random>

namespace kmhe::test {

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    }
    return m;
}

inline double rel_error(const Matrix& a, const Matrix& b) {
    const double scale = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / scale;
}

/// Builds a scalar loss from tape variables.
using ScalarGraph = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

/// Worst relative deviation between tape gradients and central differences of step h.
inline double gradient_check(const ScalarGraph& graph, const std::vector<Matrix>& inputs, double h = 1e-6) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    const ad::Var out = graph(tape, vars);
    tape.backward(out);

    auto eval = [&](const std::vector<Matrix>& values) {
        ad::Tape t;
        std::vector<ad::Var> v;
        for (const auto& m : values) v.push_back(t.variable(m));
        return graph(t, v).value()(0, 0);
    };

    double worst = 0.0;
    std::vector<Matrix> probe = inputs;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        Matrix analytic = tape.grad(vars[p]);
        if (analytic.size() == 0) analytic = Matrix::Zero(inputs[p].rows(), inputs[p].cols());
        Matrix numeric(inputs[p].rows(), inputs[p].cols());
        for (Index i = 0; i < inputs[p].size(); ++i) {
            const double orig = probe[p](i);
            probe[p](i) = orig + h;
            const double fp = eval(probe);
            probe[p](i) = orig - h;
            const double fm = eval(probe);
            probe[p](i) = orig;
            numeric(i) = (fp - fm) / (2.0 * h);
        }
        worst = std::max(worst, rel_error(analytic, numeric));
    }
    return worst;
}

/// Fixed random projection of a matrix node to a scalar.
inline ad::Var project(ad::Tape& tape, ad::Var v, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Matrix w = random_matrix(1, v.rows() * v.cols(), rng);
    return ad::sum(ad::matmul(tape.constant(w), ad::reshape(v, v.rows() * v.cols(), 1)));
}

}  // namespace kmhe::test
