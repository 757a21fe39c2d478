#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace kmhe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Default relative threshold for numerical rank decisions.
inline constexpr double kDefaultRankTol = 1e-10;

/**
 * Sampled input/state/output record.
 *
 * Each channel is stored column-wise: column k holds the sample at time k.
 * An absent channel has zero rows. Inputs may be one sample shorter than
 * states/outputs (u_[0,T-1] next to x_[0,T]).
 */
struct Trajectory {
    double dt = 1.0;
    Matrix u;
    Matrix x;
    Matrix y;
    std::vector<std::string> u_labels;
    std::vector<std::string> x_labels;
    std::vector<std::string> y_labels;

    bool has_u() const { return u.rows() > 0; }
    bool has_x() const { return x.rows() > 0; }
    bool has_y() const { return y.rows() > 0; }

    Index n_u() const { return u.rows(); }
    Index n_x() const { return x.rows(); }
    Index n_y() const { return y.rows(); }

    /// Number of time samples (length of the longest channel).
    Index length() const;

    /// Throws DimensionMismatch when channel lengths violate the data protocol.
    void validate() const;

    /// Fills missing labels with u1.., x1.., y1...
    void default_labels();
};

enum class Channel { u, x, y };

/// Block Hankel matrix of depth `depth`; column j stacks seq[j..j+depth-1].
Matrix hankel(const Eigen::Ref<const Matrix>& seq, Index depth);

/**
 * Hankel matrix of depth `depth` restricted to its first `ncols` columns,
 * i.e. built from seq[0 .. ncols+depth-2]. Depth 0 yields a 0 x ncols matrix.
 */
Matrix hankel_cols(const Eigen::Ref<const Matrix>& seq, Index depth, Index ncols);

/// Stacked vector seq[from..to] (inclusive), time-major.
Vector stack_window(const Eigen::Ref<const Matrix>& seq, Index from, Index to);

/// Stacked window of one trajectory channel.
Vector window(const Trajectory& traj, Channel channel, Index from, Index to);

/// v = p ⊗ u with v[i*n_u + j] = p[i]*u[j].
Vector kron_input(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& u);

/// Column-wise Kronecker product of two equally long sequences.
Matrix kron_columns(const Eigen::Ref<const Matrix>& p, const Eigen::Ref<const Matrix>& u);

/// Number of singular values above rel_tol * sigma_max (0 for a zero matrix).
Index numerical_rank(const Eigen::Ref<const Matrix>& m, double rel_tol = kDefaultRankTol);

struct ExcitationReport {
    bool exciting = false;
    Index rank = 0;
    Index required = 0;
};

/// Persistency of excitation of order `order`: rank H_order(seq) == order * m.
ExcitationReport is_persistently_exciting(const Eigen::Ref<const Matrix>& seq, Index order,
                                          double rank_tol = kDefaultRankTol);

/// Writes `t,u1..,x1..,y1..` CSV with 17 significant digits. A non-empty
/// `comment` is emitted as a leading `# ` line. Missing trailing inputs are empty cells.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const std::string& comment = {});
void write_trajectory_csv(const std::string& path, const Trajectory& traj, const std::string& comment = {});

/// Parses the CSV written by write_trajectory_csv. Lines starting with '#'
/// are collected into `comment` (without the marker) when non-null.
Trajectory read_trajectory_csv(std::istream& is, std::string* comment = nullptr);
Trajectory read_trajectory_csv(const std::string& path, std::string* comment = nullptr);

/// "%.17g" formatting used by every text artifact.
std::string format_double(double value);

}  // namespace kmhe
