#pragma once

#include "kmhe/lift_map.hpp"
#include "kmhe/plants.hpp"

#include <nlohmann/json.hpp>

namespace kmhe {

/// Lifted view of a trajectory: z_k = psi(x_k), p_k = lambda(z_k, u_k), v_k = p_k ⊗ u_k.
struct LiftedTrajectory {
    Matrix u;  // n_u x T (copied from the source)
    Matrix x;  // n_x x (T+1) (copied from the source)
    Matrix z;  // n_z x (T+1)
    Matrix p;  // n_p x T
    Matrix v;  // n_p*n_u x T
};

LiftedTrajectory lift_trajectory(const LiftingMap& lifting, const Trajectory& traj);

/**
 * Exact LPV Koopman surrogate of the poly2 plant:
 *   psi(x) = (x1, x2, x1^2),  p = 2ab z1 + b^2 u,
 *   z+ = A z + B0 u + Bt (p ⊗ u),  x = D z,  y = C x.
 */
class ExactLpvSurrogate final : public LiftingMap {
   public:
    explicit ExactLpvSurrogate(const Poly2Params& params);

    Index n_x() const override { return 2; }
    Index n_z() const override { return 3; }
    Index n_u() const override { return 1; }
    Index n_p() const override { return 1; }

    Vector lift(const Vector& x) const override;
    Vector schedule(const Vector& z, const Vector& u) const override;
    const Matrix& reconstruction() const override { return d_; }

    /// z+ = A z + B0 u + Bt (p ⊗ u) with p = schedule(z, u).
    Vector step_lifted(const Vector& z, const Vector& u) const;
    /// Augmented-input LTI form z+ = A z + B [u; v].
    Vector step_augmented(const Vector& z, const Vector& u, const Vector& v) const;

    const Poly2Params& params() const { return params_; }
    const Matrix& A() const { return a_; }
    const Matrix& B0() const { return b0_; }
    const Matrix& Btilde() const { return bt_; }
    /// B = [B0, Bt].
    Matrix B() const;
    const Matrix& C() const { return c_; }

    nlohmann::json to_json() const;

   private:
    Poly2Params params_;
    Matrix a_, b0_, bt_, c_, d_;
};

struct ExactBenchmark {
    ExactLpvSurrogate surrogate;
    PlantSpec plant;
};

/// Requires |a| < 1 and |c| < 1 (so |a^2| < 1 as well); otherwise UnstableParameters.
ExactBenchmark make_exact_benchmark(const Poly2Params& params = {});

struct RankReport {
    bool pass = false;
    Index rank = 0;
    Index target = 0;
    Index columns = 0;
};

/**
 * Rank of [H_1(z_[0,T-N]); H_N(u_[0,T-1]); H_N(v_[0,T-1])] against
 * n_z + N n_u (1 + n_p). Throws InsufficientData when T-N+1 < target.
 */
RankReport check_rank_condition(const LiftedTrajectory& offline, Index horizon, double rank_tol = kDefaultRankTol);

/**
 * Relative least-squares residual ||G a - w|| / (||w|| + 1) of
 *   [H_L(u); H_L(v); H_M(y)] a = [u_win; v_win; y_win]
 * with L = u_win.cols() and M = y_win.cols() (L or L+1). All offline
 * Hankels use the column count T - L + 1 of the input Hankel.
 */
double implicit_consistency_residual(const Matrix& u_off, const Matrix& v_off, const Matrix& y_off,
                                     const Matrix& u_win, const Matrix& v_win, const Matrix& y_win);

/// Minimum-norm least-squares coefficients for the same stacked system.
Vector implicit_coefficients(const Matrix& u_off, const Matrix& v_off, const Matrix& y_off, const Matrix& u_win,
                             const Matrix& v_win, const Matrix& y_win);

/**
 * x_hat_[0,N] = D H_{N+1}(z) ridge([H_N(u); H_N(v); H_{N+1}(x)], [u; v; x]).
 * N = u_win.cols(); returns n_x x (N+1).
 */
Matrix implicit_predict(const Matrix& u_off, const Matrix& v_off, const Matrix& x_off, const Matrix& z_off,
                        const Matrix& d, const Matrix& u_win, const Matrix& v_win, const Matrix& x_win,
                        double mu = 1e-8);

}  // namespace kmhe
