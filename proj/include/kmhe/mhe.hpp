#pragma once

#include "kmhe/lift_map.hpp"
#include "kmhe/qpsolve.hpp"

#include <nlohmann/json.hpp>

#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace kmhe {

/**
 * Offline data of the implicit surrogate and its block Hankel matrices.
 * Blocks for every depth 0..N are built up front so that the shrunken
 * windows of the first N steps need no extra work and the stack stays
 * immutable (shareable between streams).
 */
class HankelStack {
   public:
    HankelStack() = default;
    /// u: n_u x T, v: n_v x T, y: n_y x (T+1), z: n_z x (T+1).
    HankelStack(Matrix u, Matrix v, Matrix y, Matrix z, Index horizon);

    Index horizon() const { return horizon_; }
    Index length() const { return u_.cols(); }
    Index n_u() const { return u_.rows(); }
    Index n_v() const { return v_.rows(); }
    Index n_y() const { return y_.rows(); }
    Index n_z() const { return z_.rows(); }
    /// Column count shared by all blocks of depth k: T - k + 1.
    Index columns(Index depth) const { return length() - depth + 1; }

    /// Blocks for input depth k (k <= N): H_k(u), H_k(v), H_{k+1}(y), H_{k+1}(z).
    const Matrix& hu(Index k) const { return blocks_.at(static_cast<std::size_t>(k)).hu; }
    const Matrix& hv(Index k) const { return blocks_.at(static_cast<std::size_t>(k)).hv; }
    const Matrix& hy(Index k) const { return blocks_.at(static_cast<std::size_t>(k)).hy; }
    const Matrix& hz(Index k) const { return blocks_.at(static_cast<std::size_t>(k)).hz; }

    const Matrix& u() const { return u_; }
    const Matrix& v() const { return v_; }
    const Matrix& y() const { return y_; }
    const Matrix& z() const { return z_; }

    nlohmann::json to_json() const;
    static HankelStack from_json(const nlohmann::json& j);

   private:
    struct Blocks {
        Matrix hu, hv, hy, hz;
    };

    Matrix u_, v_, y_, z_;
    Index horizon_ = 0;
    std::vector<Blocks> blocks_;
};

/// Lifts the noisy offline states, computes p and v, and builds the stack.
HankelStack build_hankel_stack(const Trajectory& offline, const LiftingMap& lifting, Index horizon);

struct MheConfig {
    Index horizon = 4;
    // Weights; a 1x1 matrix is shorthand for scalar * identity.
    Matrix P = Matrix::Ones(1, 1);
    Matrix Q = Matrix::Ones(1, 1);
    Matrix R = Matrix::Ones(1, 1);
    double lambda_z = 1.0;
    double lambda_alpha = 1.0;
    double eps_x = 0.0;
    double eps_y = 0.0;
    double delta_z = 0.003;
    double delta_y = 0.003;
    Vector x_lower;  // empty: unbounded
    Vector x_upper;
    Vector x_prior;  // initial guess of x_0
    QpSettings qp;

    /// lambda_alpha * (eps_x + eps_y + delta_z + delta_y).
    double alpha_weight() const { return lambda_alpha * (eps_x + eps_y + delta_z + delta_y); }

    /// Throws ConfigInvalid.
    void validate(Index n_x, Index n_z, Index n_y, bool need_prior = true) const;

    nlohmann::json to_json() const;
    static MheConfig from_json(const nlohmann::json& j);
};

/// Weight matrix of size n: the scalar shorthand expanded, or the dense matrix checked for size.
Matrix expand_weight(const Matrix& w, Index n, const char* name);

/// Variable layout of an assembled window problem.
struct QpLayout {
    Index depth = 0;  // input depth of the window (min(k, N))
    Index n_z = 0, n_y = 0, n_x = 0;
    Index z = 0, pi_y = 0, pi_z = 0, alpha = 0, x = -1;  // block offsets (x < 0: no state copies)
    Index n_alpha = 0;
    Index size = 0;
    double cost_constant = 0.0;  // lambda_z * zbar' P zbar
};

struct WindowProblem {
    QpProblem qp;
    QpLayout layout;
};

/**
 * Decision vector [z_hat; pi_y; pi_z; alpha] (plus x_hat = D z_hat copies
 * when the state box has finite bounds). Window lengths decide the depth:
 * u and v carry `depth` samples, y carries depth + 1.
 */
WindowProblem assemble_qp(const HankelStack& stack, const Matrix& u_win, const Matrix& v_win, const Matrix& y_win,
                          const Vector& z_prior, const Matrix& d, const MheConfig& config);

struct EstimateRecord {
    Index k = 0;
    double t = 0.0;
    Vector z_hat;
    Vector x_hat;
    Vector p;  // p_k, filled once u_k is known
    double cost = 0.0;
    double slack_y_norm = 0.0;
    double slack_z_norm = 0.0;
    double alpha_norm = 0.0;
    int iterations = 0;
    QpStatus status = QpStatus::solved;
    bool degraded = false;
    Index depth = 0;
};

/// Rolling state of one estimation stream.
struct MheState {
    Index k = 0;
    std::deque<Vector> u_buf;  // last N inputs
    std::deque<Vector> v_buf;  // last N augmented inputs
    std::deque<Vector> y_buf;  // last N+1 outputs
    std::deque<Vector> z_filtered;  // z_hat_{j|j}, last N
    Vector z_initial_prior;
    std::optional<Vector> warm_start;
    QpLayout warm_layout;
    std::optional<Vector> last_p;  // p_{k-1} computed at the latest step
};

class MheEstimator {
   public:
    /// The stack and lifting must outlive the estimator.
    MheEstimator(const HankelStack& stack, const LiftingMap& lifting, MheConfig config);

    /// Step k: u_{k-1} (absent at k = 0) and y_k.
    EstimateRecord step(const std::optional<Vector>& u_prev, const Vector& y);

    const MheState& state() const { return state_; }
    const MheConfig& config() const { return config_; }

   private:
    const HankelStack* stack_;
    const LiftingMap* lifting_;
    MheConfig config_;
    MheState state_;
};

struct EstimationMetrics {
    std::vector<double> rmse;  // per state channel
    double rmse_total = 0.0;
    double mean_iterations = 0.0;
    Index failures = 0;
    Index steps = 0;

    nlohmann::json to_json() const;
};

struct EstimationResult {
    std::vector<EstimateRecord> records;
    EstimationMetrics metrics;
};

/**
 * Runs the estimator over online data (known u, measured y). When `truth`
 * has states, RMSE is computed over steps [from, to) (to < 0: all).
 */
EstimationResult run_estimation(const Trajectory& online, const Matrix& truth_x, const HankelStack& stack,
                                const LiftingMap& lifting, const MheConfig& config, Index rmse_from = 0,
                                Index rmse_to = -1);

/// RMSE per channel and aggregate of x_hat against truth over steps [from, to).
EstimationMetrics compute_metrics(const std::vector<EstimateRecord>& records, const Matrix& truth_x, Index from = 0,
                                  Index to = -1);

void write_estimate_csv(std::ostream& os, const std::vector<EstimateRecord>& records, double dt,
                        const std::string& comment = {});

}  // namespace kmhe
