#include "kmhe/errors.hpp"
#include "kmhe/qpsolve.hpp"
#include "support.hpp"

#include <limits>

using namespace kmhe;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

QpProblem make_problem(const Matrix& h, const Vector& g, const Matrix& a, const Vector& b) {
    QpProblem qp;
    qp.cost = BlockDiagonal(h.rows());
    qp.cost.add_dense(0, h);
    qp.g = g;
    qp.a_eq = a;
    qp.b_eq = b;
    qp.lower = Vector::Constant(h.rows(), -kInf);
    qp.upper = Vector::Constant(h.rows(), kInf);
    return qp;
}

Matrix random_psd(Index n, Index rank, std::mt19937_64& rng) {
    const Matrix f = test::random_matrix(n, rank, rng);
    return f * f.transpose();
}

}  // namespace

TEST_CASE("kkt_solve on small examples") {
    const auto s1 = kkt_solve(2.0 * Matrix::Identity(3, 3), Vector::Zero(3), (Matrix(1, 3) << 1, 0, 0).finished(),
                              Vector::Ones(1));
    CHECK((s1.x - Vector((Vector(3) << 1, 0, 0).finished())).norm() < 1e-12);

    // min |x - (1,1)|^2 s.t. x1 + x2 = 0
    const auto s2 = kkt_solve(2.0 * Matrix::Identity(2, 2), -2.0 * Vector::Ones(2), Matrix::Ones(1, 2), Vector::Zero(1));
    CHECK(s2.x.norm() < 1e-12);
}

TEST_CASE("kkt_solve residuals on random PSD problems") {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 10; ++t) {
        const Matrix h = random_psd(20, 20, rng);
        const Vector g = test::random_matrix(20, 1, rng);
        const Matrix a = test::random_matrix(8, 20, rng);
        const Vector b = a * test::random_matrix(20, 1, rng);
        const auto sol = kkt_solve(h, g, a, b);
        const QpProblem qp = make_problem(h, g, a, b);
        const auto res = kkt_residuals(qp, sol.x, sol.y_eq, Vector::Zero(20));
        CHECK(res.primal <= 1e-10 * (1.0 + b.norm()));
        CHECK(res.dual <= 1e-10 * (1.0 + g.norm()) * 10.0);
    }
}

TEST_CASE("kkt_solve regularizes or rejects singular systems") {
    // Zero cost with a rank-deficient constraint: singular KKT.
    const Matrix a = (Matrix(2, 2) << 1, 1, 1, 1).finished();
    CHECK_THROWS_AS(kkt_solve(Matrix::Zero(2, 2), Vector::Zero(2), a, (Vector(2) << 1, 2).finished()), Error);
    const auto sol = kkt_solve(Matrix::Zero(2, 2), Vector::Zero(2), Matrix::Ones(1, 2), Vector::Ones(1));
    CHECK(sol.regularized);
    CHECK(std::abs(sol.x.sum() - 1.0) < 1e-8);
}

TEST_CASE("box-clamped scalar") {
    QpProblem qp = make_problem(2.0 * Matrix::Identity(1, 1), Vector::Constant(1, -4.0), Matrix(0, 1), Vector(0));
    qp.lower(0) = 0.0;
    qp.upper(0) = 1.0;
    const auto sol = solve_qp(qp);
    CHECK(sol.status == QpStatus::solved);
    CHECK(sol.x(0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(sol.y_box(0) > 0.0);
}

TEST_CASE("conflicting equality and box is reported infeasible") {
    QpProblem qp = make_problem(Matrix::Identity(2, 2), Vector::Zero(2), (Matrix(1, 2) << 1, 0).finished(),
                                Vector::Constant(1, 5.0));
    qp.upper(0) = 1.0;
    const auto sol = solve_qp(qp);
    CHECK(sol.status == QpStatus::infeasible_suspected);
}

TEST_CASE("box-free random QPs match the KKT reference") {
    std::mt19937_64 rng(37);
    for (int t = 0; t < 20; ++t) {
        const Index n = 12 + t % 7, m = 4 + t % 3;
        const Matrix h = random_psd(n, n, rng) + 0.1 * Matrix::Identity(n, n);
        const Vector g = test::random_matrix(n, 1, rng);
        const Matrix a = test::random_matrix(m, n, rng);
        const Vector b = test::random_matrix(m, 1, rng);
        const QpProblem qp = make_problem(h, g, a, b);
        const auto ref = kkt_solve(h, g, a, b);
        const auto sol = solve_qp(qp);
        CHECK(sol.status == QpStatus::solved);
        CHECK(test::rel_error(sol.x, ref.x) <= 1e-6);
    }
}

TEST_CASE("solved status certifies KKT conditions with active boxes") {
    std::mt19937_64 rng(41);
    for (int t = 0; t < 15; ++t) {
        const Index n = 10, m = 3;
        QpProblem qp = make_problem(random_psd(n, 6, rng) + 1e-3 * Matrix::Identity(n, n),
                                    3.0 * test::random_matrix(n, 1, rng), test::random_matrix(m, n, rng), Vector());
        qp.lower.head(5).setConstant(-0.3);
        qp.upper.head(5).setConstant(0.3);
        Vector feasible = test::random_matrix(n, 1, rng, -0.2, 0.2);
        qp.b_eq = qp.a_eq * feasible;
        const QpSettings settings;
        const auto sol = solve_qp(qp, settings);
        REQUIRE(sol.status == QpStatus::solved);
        const auto res = kkt_residuals(qp, sol.x, sol.y_eq, sol.y_box);
        CHECK(res.primal <= settings.tol_primal);
        CHECK(res.dual <= settings.tol_dual);
        CHECK(res.sign_consistent);
        CHECK(res.complementarity <= settings.tol_dual);

        // Objective is no worse than random feasible points (projected along the equality null space).
        const Eigen::FullPivLU<Matrix> lu(qp.a_eq);
        const Matrix null = lu.kernel();
        int checked = 0;
        for (int k = 0; k < 50; ++k) {
            const Vector cand = feasible + 0.05 * null * test::random_matrix(null.cols(), 1, rng);
            if ((cand.array() < qp.lower.array()).any() || (cand.array() > qp.upper.array()).any()) continue;
            ++checked;
            CHECK(sol.objective <= qp.objective(cand) + 1e-8);
        }
        CHECK(checked > 0);
    }
}

TEST_CASE("solver is deterministic and accepts warm starts") {
    std::mt19937_64 rng(43);
    const Index n = 15;
    QpProblem qp = make_problem(random_psd(n, n, rng), test::random_matrix(n, 1, rng), test::random_matrix(4, n, rng),
                                test::random_matrix(4, 1, rng));
    qp.lower.head(3).setConstant(-0.1);
    qp.upper.head(3).setConstant(0.1);
    const auto a = solve_qp(qp);
    const auto b = solve_qp(qp);
    CHECK(a.x == b.x);
    CHECK(a.iterations == b.iterations);
    const auto warm = solve_qp(qp, {}, a.x);
    CHECK(warm.status == QpStatus::solved);
    CHECK(test::rel_error(warm.x, a.x) <= 1e-6);
}

TEST_CASE("block diagonal cost") {
    BlockDiagonal bd(6);
    bd.add_dense(0, (Matrix(2, 2) << 2, 1, 1, 2).finished());
    bd.add_diagonal(3, Vector::Constant(3, 4.0));
    Matrix dense = Matrix::Zero(6, 6);
    dense.block(0, 0, 2, 2) << 2, 1, 1, 2;
    dense.block(3, 3, 3, 3) = 4.0 * Matrix::Identity(3, 3);
    CHECK(bd.to_dense() == dense);
    const Vector x = Vector::LinSpaced(6, 1, 6);
    CHECK(bd.multiply(x) == dense * x);
    CHECK(bd.min_eigenvalue() == 0.0);  // index 2 uncovered
    const BlockDiagonal sub = bd.restrict_to({0, 1, 4});
    CHECK(sub.to_dense() == (Matrix(3, 3) << 2, 1, 0, 1, 2, 0, 0, 0, 4).finished());
}

TEST_CASE("problem validation and JSON round trip") {
    QpProblem qp = make_problem(Matrix::Identity(2, 2), Vector::Zero(2), Matrix::Ones(1, 2), Vector::Ones(1));
    qp.lower(1) = -2.0;
    CHECK_NOTHROW(qp.validate());
    const QpProblem back = QpProblem::from_json(nlohmann::json::parse(qp.to_json().dump()));
    CHECK(back.lower(0) == -kInf);
    CHECK(back.lower(1) == -2.0);
    CHECK(back.cost.to_dense() == qp.cost.to_dense());

    QpProblem indefinite = make_problem((Matrix(2, 2) << 1, 0, 0, -1).finished(), Vector::Zero(2), Matrix(0, 2), Vector(0));
    CHECK_THROWS_AS(indefinite.validate(), Error);
    QpProblem crossed = qp;
    crossed.lower(0) = 1.0;
    crossed.upper(0) = 0.0;
    CHECK_THROWS_AS(crossed.validate(), Error);
    const auto sol = solve_qp(qp);
    CHECK(sol.to_json()["status"] == "solved");
}
