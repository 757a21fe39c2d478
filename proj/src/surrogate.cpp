#include "kmhe/surrogate.hpp"

#include "kmhe/errors.hpp"
#include "kmhe/netgrad.hpp"

#include <cmath>

namespace kmhe {

LiftedTrajectory lift_trajectory(const LiftingMap& lifting, const Trajectory& traj) {
    if (!traj.has_x()) fail(ErrorCode::DimensionMismatch, "lift_trajectory: trajectory has no states");
    if (traj.n_x() != lifting.n_x()) {
        fail(ErrorCode::DimensionMismatch, "lift_trajectory: n_x " + std::to_string(traj.n_x()) + " vs lifting " +
                                               std::to_string(lifting.n_x()));
    }
    if (traj.has_u() && traj.n_u() != lifting.n_u()) {
        fail(ErrorCode::DimensionMismatch, "lift_trajectory: n_u mismatch");
    }
    LiftedTrajectory out;
    out.x = traj.x;
    out.u = traj.has_u() ? traj.u.leftCols(std::min(traj.u.cols(), traj.x.cols())) : Matrix(lifting.n_u(), 0);
    out.z = lifting.lift_batch(traj.x);
    const Index steps = out.u.cols();
    out.p = lifting.schedule_batch(out.z.leftCols(steps), out.u);
    out.v = kron_columns(out.p, out.u);
    return out;
}

ExactLpvSurrogate::ExactLpvSurrogate(const Poly2Params& params) : params_(params) {
    const double a = params.a, c = params.c, d = params.d, b = params.b;
    a_ = Matrix::Zero(3, 3);
    a_(0, 0) = a;
    a_(1, 1) = c;
    a_(1, 2) = d;
    a_(2, 2) = a * a;
    b0_ = Matrix::Zero(3, 1);
    b0_(0, 0) = b;
    bt_ = Matrix::Zero(3, 1);
    bt_(2, 0) = 1.0;
    c_ = Matrix::Zero(1, 2);
    c_(0, 0) = 1.0;
    d_ = Matrix::Zero(2, 3);
    d_(0, 0) = 1.0;
    d_(1, 1) = 1.0;
}

Vector ExactLpvSurrogate::lift(const Vector& x) const {
    Vector z(3);
    z << x(0), x(1), x(0) * x(0);
    return z;
}

Vector ExactLpvSurrogate::schedule(const Vector& z, const Vector& u) const {
    Vector p(1);
    p(0) = 2.0 * params_.a * params_.b * z(0) + params_.b * params_.b * u(0);
    return p;
}

Vector ExactLpvSurrogate::step_lifted(const Vector& z, const Vector& u) const {
    return a_ * z + b0_ * u + bt_ * kron_input(schedule(z, u), u);
}

Vector ExactLpvSurrogate::step_augmented(const Vector& z, const Vector& u, const Vector& v) const {
    Vector aug(u.size() + v.size());
    aug << u, v;
    return a_ * z + B() * aug;
}

Matrix ExactLpvSurrogate::B() const {
    Matrix b(3, b0_.cols() + bt_.cols());
    b << b0_, bt_;
    return b;
}

nlohmann::json ExactLpvSurrogate::to_json() const {
    return {{"kind", "exact_poly2"},
            {"parameters", {{"a", params_.a}, {"b", params_.b}, {"c", params_.c}, {"d", params_.d}}},
            {"n_x", 2},
            {"n_z", 3},
            {"n_u", 1},
            {"n_p", 1},
            {"A", matrix_to_json(a_)},
            {"B0", matrix_to_json(b0_)},
            {"Btilde", matrix_to_json(bt_)},
            {"C", matrix_to_json(c_)},
            {"D", matrix_to_json(d_)},
            {"lifting", "psi(x) = (x1, x2, x1^2)"},
            {"scheduling", "p = 2ab z1 + b^2 u"}};
}

ExactBenchmark make_exact_benchmark(const Poly2Params& params) {
    if (!(std::abs(params.a) < 1.0) || !(std::abs(params.c) < 1.0) || !(params.a * params.a < 1.0)) {
        fail(ErrorCode::UnstableParameters, "exact benchmark requires |a| < 1 and |c| < 1");
    }
    return ExactBenchmark{ExactLpvSurrogate(params), make_poly2(params)};
}

RankReport check_rank_condition(const LiftedTrajectory& offline, Index horizon, double rank_tol) {
    const Index steps = offline.u.cols();
    const Index n_z = offline.z.rows(), n_u = offline.u.rows(), n_p = offline.p.rows();
    RankReport report;
    report.target = n_z + horizon * n_u * (1 + n_p);
    report.columns = steps - horizon + 1;
    if (horizon < 1 || report.columns < report.target) {
        fail(ErrorCode::InsufficientData, "rank condition: " + std::to_string(report.columns) +
                                              " columns cannot reach rank " + std::to_string(report.target));
    }
    const Index cols = report.columns;
    Matrix stacked(n_z + horizon * n_u + horizon * offline.v.rows(), cols);
    stacked << offline.z.leftCols(cols), hankel_cols(offline.u, horizon, cols), hankel_cols(offline.v, horizon, cols);
    report.rank = numerical_rank(stacked, rank_tol);
    report.pass = report.rank == report.target;
    return report;
}

namespace {

struct StackedSystem {
    Matrix g;
    Vector rhs;
};

StackedSystem stacked_system(const Matrix& u_off, const Matrix& v_off, const Matrix& y_off, const Matrix& u_win,
                             const Matrix& v_win, const Matrix& y_win) {
    const Index depth_u = u_win.cols();
    const Index depth_y = y_win.cols();
    if (u_win.rows() != u_off.rows() || v_win.rows() != v_off.rows() || y_win.rows() != y_off.rows() ||
        v_win.cols() != depth_u || (depth_y != depth_u && depth_y != depth_u + 1)) {
        fail(ErrorCode::DimensionMismatch, "implicit representation: window and offline data are inconsistent");
    }
    const Index cols = depth_u == 0 ? y_off.cols() - depth_y + 1 : u_off.cols() - depth_u + 1;
    if (cols < 1) fail(ErrorCode::DimensionMismatch, "implicit representation: offline data too short");
    const Matrix hu = hankel_cols(u_off, depth_u, cols);
    const Matrix hv = hankel_cols(v_off, depth_u, cols);
    const Matrix hy = hankel_cols(y_off, depth_y, cols);
    StackedSystem s;
    s.g.resize(hu.rows() + hv.rows() + hy.rows(), cols);
    s.g << hu, hv, hy;
    s.rhs.resize(s.g.rows());
    s.rhs << Eigen::Map<const Vector>(u_win.data(), u_win.size()), Eigen::Map<const Vector>(v_win.data(), v_win.size()),
        Eigen::Map<const Vector>(y_win.data(), y_win.size());
    return s;
}

}  // namespace

Vector implicit_coefficients(const Matrix& u_off, const Matrix& v_off, const Matrix& y_off, const Matrix& u_win,
                             const Matrix& v_win, const Matrix& y_win) {
    const StackedSystem s = stacked_system(u_off, v_off, y_off, u_win, v_win, y_win);
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(s.g);
    cod.setThreshold(kDefaultRankTol);
    return cod.solve(s.rhs);
}

double implicit_consistency_residual(const Matrix& u_off, const Matrix& v_off, const Matrix& y_off,
                                     const Matrix& u_win, const Matrix& v_win, const Matrix& y_win) {
    const StackedSystem s = stacked_system(u_off, v_off, y_off, u_win, v_win, y_win);
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(s.g);
    cod.setThreshold(kDefaultRankTol);
    const Vector alpha = cod.solve(s.rhs);
    return (s.g * alpha - s.rhs).norm() / (s.rhs.norm() + 1.0);
}

Matrix implicit_predict(const Matrix& u_off, const Matrix& v_off, const Matrix& x_off, const Matrix& z_off,
                        const Matrix& d, const Matrix& u_win, const Matrix& v_win, const Matrix& x_win, double mu) {
    const Index horizon = u_win.cols();
    if (x_win.cols() != horizon + 1 || d.rows() != x_off.rows() || d.cols() != z_off.rows() ||
        z_off.cols() != x_off.cols()) {
        fail(ErrorCode::DimensionMismatch, "implicit_predict: inconsistent dimensions");
    }
    const StackedSystem s = stacked_system(u_off, v_off, x_off, u_win, v_win, x_win);
    const Matrix alpha = ad::ridge_lstsq(s.g, s.rhs, mu);
    const Matrix xz = d * z_off;
    const Matrix pred = hankel_cols(xz, horizon + 1, s.g.cols()) * alpha;
    if (!pred.allFinite()) fail(ErrorCode::NonFiniteResult, "implicit_predict: non-finite prediction");
    return Eigen::Map<const Matrix>(pred.data(), x_off.rows(), horizon + 1);
}

}  // namespace kmhe
