#pragma once

#include "kmhe/lift_map.hpp"
#include "kmhe/netgrad.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace kmhe {

/**
 * Per-channel scalings fitted on training data.
 *
 * Network inputs are standardized (x - center) / spread. Reconstruction
 * targets and inputs are divided by their RMS only, so that x = D z and
 * v = p ⊗ u stay linear in the physical signals.
 */
struct Normalization {
    Vector x_center;
    Vector x_spread;
    Vector x_scale;
    Vector u_scale;

    static Normalization identity(Index n_x, Index n_u);
    static Normalization fit(const std::vector<Trajectory>& data);

    Matrix standardize_x(const Matrix& x) const;
    Matrix scale_x(const Matrix& x) const { return x_scale.cwiseInverse().asDiagonal() * x; }
    Matrix scale_u(const Matrix& u) const { return u_scale.cwiseInverse().asDiagonal() * u; }

    nlohmann::json to_json() const;
    static Normalization from_json(const nlohmann::json& j);
};

/// Learned lifting psi (n_x -> n_z), scheduling lambda (n_z + n_u -> n_p) and reconstruction D.
class LiftingModel final : public LiftingMap {
   public:
    Mlp psi;
    Mlp lambda;
    Matrix d_norm;  // reconstruction in normalized units: x / x_scale = d_norm z
    Normalization norm;
    Index horizon = 4;

    LiftingModel() = default;
    LiftingModel(Mlp psi, Mlp lambda, Matrix d_norm, Normalization norm, Index horizon);

    /// psi embeds x into the first n_x coordinates, D = [I 0], lambda is a zero map.
    static LiftingModel identity_embedding(Index n_x, Index n_z, Index n_u, Index n_p, Index horizon);

    Index n_x() const override { return d_norm.rows(); }
    Index n_z() const override { return d_norm.cols(); }
    Index n_u() const override { return norm.u_scale.size(); }
    Index n_p() const override { return lambda.output_width(); }

    Vector lift(const Vector& x) const override;
    Vector schedule(const Vector& z, const Vector& u) const override;
    /// Physical-unit reconstruction diag(x_scale) * d_norm.
    const Matrix& reconstruction() const override { return d_phys_; }
    Matrix lift_batch(const Matrix& x) const override;
    Matrix schedule_batch(const Matrix& z, const Matrix& u) const override;

    /// Recomputes cached physical quantities after the public fields change.
    void refresh();
    void validate() const;

    nlohmann::json to_json() const;
    static LiftingModel from_json(const nlohmann::json& j);

   private:
    Matrix d_phys_;
};

/**
 * Offline trajectory plus a set of windows. Window samples are stored
 * time-major: column t * B + b holds time t of window b.
 */
struct TrainingBatch {
    Matrix offline_u;  // n_u x T
    Matrix offline_x;  // n_x x (T+1)
    Matrix win_u;      // n_u x (N * B)
    Matrix win_x;      // n_x x ((N+1) * B)
    Index horizon = 0;
    Index windows = 0;
    std::vector<std::size_t> source;  // trajectory index per window
    std::vector<Index> start;         // start sample per window
    std::uint64_t seed = 0;
};

/// Number of valid window starts: states length - N (starts 0 .. L-N-1).
Index window_count(const Trajectory& traj, Index horizon);

/// Throws TrajectoryTooShort naming the first trajectory without a full window.
void check_window_lengths(const std::vector<Trajectory>& data, Index horizon);

/// Gathers the given windows (time-major) into `batch`.
void fill_windows(TrainingBatch& batch, const std::vector<Trajectory>& data, const std::vector<std::size_t>& source,
                  const std::vector<Index>& start);

/// Seeded stream of batches with windows drawn uniformly over all valid (trajectory, start) pairs.
class BatchSampler {
   public:
    BatchSampler(const std::vector<Trajectory>& data, Index horizon, Index windows_per_batch, std::uint64_t seed);

    /// Next batch; the offline trajectory is left empty for the caller to fill.
    TrainingBatch next();
    Index total_windows() const { return total_; }

   private:
    const std::vector<Trajectory>* data_;
    Index horizon_;
    Index per_batch_;
    std::uint64_t seed_;
    std::mt19937_64 rng_;
    std::vector<Index> offsets_;  // cumulative window counts
    Index total_ = 0;
};

/// Loss terms evaluated in normalized units.
struct LossValues {
    double l1 = 0.0;
    double l2 = 0.0;
};

/**
 * Initial-condition rows of the L2 regression. hankel_states stacks the
 * whole state window H_{N+1}(x) against x_[0,N]; lifted_initial uses only
 * the lifted first sample H_1(z) against z_0, so the fitted combination has
 * to predict the remaining N states through the lifted dynamics.
 */
enum class L2Form { hankel_states, lifted_initial };

/// Mean over windows of sum_i ||D psi(x_i) - x_i||.
double loss_l1(const LiftingModel& model, const TrainingBatch& batch);
/// Mean over windows of ||D H_{N+1}(z^o) alpha - x_[0,N]|| with ridge-fitted alpha.
double loss_l2(const LiftingModel& model, const TrainingBatch& batch, double mu,
               L2Form form = L2Form::hankel_states);
LossValues evaluate_losses(const LiftingModel& model, const TrainingBatch& batch, double mu,
                           L2Form form = L2Form::hankel_states);
/// Same losses for a fixed lifting (exact oracle, identity) in physical units.
LossValues evaluate_losses(const LiftingMap& lifting, const TrainingBatch& batch, double mu,
                           L2Form form = L2Form::hankel_states);

/// Loss and gradients for every trainable parameter, in `parameters()` order.
struct LossGradient {
    LossValues value;
    std::vector<Matrix> grads;
};

LossGradient loss_gradient(const LiftingModel& model, const TrainingBatch& batch, double mu, double w1 = 1.0,
                           double w2 = 1.0, L2Form form = L2Form::hankel_states);

/// Pointers to the trainable parameters: psi weights/biases, lambda weights/biases, D.
std::vector<Matrix*> parameters(LiftingModel& model);

struct TrainingConfig {
    Index n_z = 3;
    Index n_p = 1;
    Index horizon = 4;
    std::vector<Index> psi_hidden{32, 64};
    std::vector<Index> lambda_hidden{32, 64, 64};
    int epochs = 400;
    Index batch_size = 256;
    Index steps_per_epoch = 0;  // 0: total windows / batch size
    double lr = 1e-4;
    double lr_final = 0.0;  // > 0: exponential decay from lr to lr_final over the epochs
    double mu = 1e-8;
    double weight_l1 = 1.0;
    double weight_l2 = 1.0;
    Index offline_slice = 200;
    Index val_windows = 512;
    int patience = 0;  // 0 disables early stopping
    bool normalize = true;
    bool relu_on_input = false;
    L2Form l2_form = L2Form::hankel_states;
    std::uint64_t seed = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainingConfig from_json(const nlohmann::json& j);
};

struct HistoryRow {
    int epoch = 0;
    double l1 = 0.0;
    double l2 = 0.0;
    double val_l1 = 0.0;
    double val_l2 = 0.0;
};

struct TrainingResult {
    LiftingModel model;  // best validation epoch
    std::vector<HistoryRow> history;
    int best_epoch = 0;
    double best_val = 0.0;
};

/**
 * Trains psi, lambda and D with Adam on L = w1 L1 + w2 L2. The first
 * training trajectory supplies the offline Hankel data.
 */
TrainingResult train(const TrainingConfig& config, const std::vector<Trajectory>& train_data,
                     const std::vector<Trajectory>& val_data);

void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& history, const std::string& comment = {});

}  // namespace kmhe
