#include "kmhe/errors.hpp"
#include "kmhe/surrogate.hpp"
#include "support.hpp"

using namespace kmhe;

namespace {

Trajectory rollout(const ExactBenchmark& bm, Index length, std::uint64_t seed, double noise = 0.0) {
    const PlantSpec& p = bm.plant;
    const Matrix u = excitation_signal(p.u_min, p.u_max, 40, length, seed, Vector::Constant(1, 0.01));
    return simulate(p, p.x0, u, Vector::Constant(2, noise), Vector::Constant(1, noise), seed + 1000).noisy;
}

Trajectory random_rollout(const ExactBenchmark& bm, Index length, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Matrix u = test::random_matrix(1, length, rng);
    return simulate(bm.plant, bm.plant.x0, u, Vector::Zero(2), Vector::Zero(1), 1).clean;
}

}  // namespace

TEST_CASE("exact benchmark matrices") {
    const auto bm = make_exact_benchmark();
    const auto& s = bm.surrogate;
    Matrix a(3, 3);
    a << 0.9, 0, 0, 0, 0.8, 0.4, 0, 0, 0.81;
    CHECK((s.A() - a).norm() < 1e-15);
    CHECK(s.B0() == (Matrix(3, 1) << 0.5, 0, 0).finished());
    CHECK(s.Btilde() == (Matrix(3, 1) << 0, 0, 1).finished());
    CHECK(s.reconstruction() == (Matrix(2, 3) << 1, 0, 0, 0, 1, 0).finished());
    CHECK(s.C() == (Matrix(1, 2) << 1, 0).finished());
    CHECK_THROWS_AS(make_exact_benchmark({1.1, 0.5, 0.8, 0.4}), Error);
    CHECK_THROWS_AS(make_exact_benchmark({0.9, 0.5, -1.0, 0.4}), Error);
    const auto j = s.to_json();
    CHECK(j["parameters"]["a"] == 0.9);
}

TEST_CASE("exact LPV surrogate reproduces the plant on lifted trajectories") {
    const auto bm = make_exact_benchmark();
    const Trajectory t = random_rollout(bm, 500, 42);
    const LiftedTrajectory l = lift_trajectory(bm.surrogate, t);
    double worst = 0.0, worst_aug = 0.0, worst_recon = 0.0;
    for (Index k = 0; k < 500; ++k) {
        const Vector pred = bm.surrogate.A() * l.z.col(k) + bm.surrogate.B0() * l.u.col(k) + bm.surrogate.Btilde() * l.v.col(k);
        worst = std::max(worst, (pred - l.z.col(k + 1)).cwiseAbs().maxCoeff());
        const Vector aug = bm.surrogate.step_augmented(l.z.col(k), l.u.col(k), l.v.col(k));
        worst_aug = std::max(worst_aug, (aug - l.z.col(k + 1)).cwiseAbs().maxCoeff());
        worst_recon = std::max(worst_recon, (bm.surrogate.reconstruction() * l.z.col(k) - t.x.col(k)).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-10);
    CHECK(worst_aug <= 1e-10);
    CHECK(worst_recon == 0.0);
}

TEST_CASE("autonomous third lifted coordinate decays by a squared") {
    const auto bm = make_exact_benchmark();
    Vector z = bm.surrogate.lift(Vector::Ones(2));
    for (int k = 0; k < 10; ++k) {
        const Vector next = bm.surrogate.step_lifted(z, Vector::Zero(1));
        CHECK(next(2) == doctest::Approx(0.81 * z(2)).epsilon(1e-14));
        z = next;
    }
    const auto zero = simulate(bm.plant, Vector::Zero(2), Matrix::Zero(1, 10), Vector::Zero(2), Vector::Zero(1), 1);
    CHECK(zero.clean.x.isZero());
}

TEST_CASE("lifting a zero trajectory gives a constant sequence") {
    const auto bm = make_exact_benchmark();
    Trajectory t;
    t.x = Matrix::Zero(2, 6);
    t.u = Matrix::Zero(1, 5);
    const auto l = lift_trajectory(bm.surrogate, t);
    for (Index k = 1; k < 6; ++k) CHECK(l.z.col(k) == l.z.col(0));
    t.x = Matrix::Zero(3, 6);
    CHECK_THROWS_AS(lift_trajectory(bm.surrogate, t), Error);
}

TEST_CASE("rank condition on the oracle") {
    const auto bm = make_exact_benchmark();
    const Trajectory t = rollout(bm, 200, 11);
    const auto report = check_rank_condition(lift_trajectory(bm.surrogate, t), 4);
    CHECK(report.target == 11);
    CHECK(report.rank == 11);
    CHECK(report.pass);

    Trajectory flat = t;
    flat.u.setConstant(0.3);
    flat = simulate(bm.plant, bm.plant.x0, flat.u, Vector::Zero(2), Vector::Zero(1), 1).clean;
    CHECK_FALSE(check_rank_condition(lift_trajectory(bm.surrogate, flat), 4).pass);

    const Trajectory tiny = rollout(bm, 12, 3);
    try {
        check_rank_condition(lift_trajectory(bm.surrogate, tiny), 4);
        FAIL("expected InsufficientData");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InsufficientData);
    }
}

TEST_CASE("implicit representation of fresh, corrupted and copied windows") {
    const auto bm = make_exact_benchmark();
    const auto off = lift_trajectory(bm.surrogate, rollout(bm, 200, 11));
    const Matrix y_off = bm.plant.C * off.x;
    const auto fresh = lift_trajectory(bm.surrogate, rollout(bm, 300, 99));
    const Matrix y_fresh = bm.plant.C * fresh.x;
    const Index n = 4;
    for (Index s : {0, 37, 150}) {
        const double r = implicit_consistency_residual(off.u, off.v, y_off, fresh.u.middleCols(s, n),
                                                       fresh.v.middleCols(s, n), y_fresh.middleCols(s, n + 1));
        CHECK(r <= 1e-8);
        Matrix y_bad = y_fresh.middleCols(s, n + 1);
        y_bad(0, 2) += 1.0;
        CHECK(implicit_consistency_residual(off.u, off.v, y_off, fresh.u.middleCols(s, n), fresh.v.middleCols(s, n),
                                            y_bad) > 1e-3);
    }
    const Index j = 20;
    CHECK(implicit_consistency_residual(off.u, off.v, y_off, off.u.middleCols(j, n), off.v.middleCols(j, n),
                                        y_off.middleCols(j, n + 1)) <= 1e-12);
    CHECK_THROWS_AS(implicit_consistency_residual(off.u, off.v, y_off, off.u.middleCols(j, n), off.v.middleCols(j, 3),
                                                  y_off.middleCols(j, n + 1)),
                    Error);
}

TEST_CASE("implicit coefficients reproduce the observable lifted coordinate") {
    // y = x1 = z1 sees neither x2 nor x1^2, so only z1 is pinned by the output rows.
    const auto bm = make_exact_benchmark();
    const auto off = lift_trajectory(bm.surrogate, rollout(bm, 200, 11));
    const Matrix y_off = bm.plant.C * off.x;
    const auto fresh = lift_trajectory(bm.surrogate, rollout(bm, 100, 5));
    const Index n = 4, s = 30;
    const Vector alpha = implicit_coefficients(off.u, off.v, y_off, fresh.u.middleCols(s, n), fresh.v.middleCols(s, n),
                                               (bm.plant.C * fresh.x).middleCols(s, n + 1));
    const Index cols = off.u.cols() - n + 1;
    const Vector z_pred = hankel_cols(off.z, n + 1, cols) * alpha;
    const Vector z_true = stack_window(fresh.z, s, s + n);
    for (Index j = 0; j <= n; ++j) CHECK(std::abs(z_pred(3 * j) - z_true(3 * j)) <= 1e-8 * (1.0 + z_true.norm()));
    CHECK((hankel_cols(off.u, n, cols) * alpha - stack_window(fresh.u, s, s + n - 1)).norm() <= 1e-8);
}

TEST_CASE("implicit prediction") {
    const auto bm = make_exact_benchmark();
    const Index n = 4;
    auto prediction_error = [&](double noise) {
        const auto off = lift_trajectory(bm.surrogate, rollout(bm, 200, 11, noise));
        const Trajectory win = rollout(bm, 100, 5, noise);
        const auto fresh = lift_trajectory(bm.surrogate, win);
        const Index s = 40;
        const Matrix pred = implicit_predict(off.u, off.v, off.x, off.z, bm.surrogate.reconstruction(),
                                             fresh.u.middleCols(s, n), fresh.v.middleCols(s, n),
                                             fresh.x.middleCols(s, n + 1));
        const Trajectory clean = rollout(bm, 100, 5, 0.0);
        return (pred - clean.x.middleCols(s, n + 1)).norm();
    };
    CHECK(prediction_error(0.0) <= 1e-6);
    const double e1 = prediction_error(1e-4), e2 = prediction_error(2e-4);
    CHECK(e1 <= 1e-2);
    CHECK(e2 / e1 > 1.2);
    CHECK(e2 / e1 < 3.5);

    const auto off = lift_trajectory(bm.surrogate, rollout(bm, 50, 11));
    const Matrix pred0 = implicit_predict(off.u, off.v, off.x, off.z, bm.surrogate.reconstruction(), Matrix(1, 0),
                                          Matrix(1, 0), off.x.col(7));
    CHECK((pred0 - off.x.col(7)).norm() <= 1e-6);
}
