#pragma once

#include "kmhe/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace kmhe {

/// One diagonal block of a block-diagonal matrix: either dense or diagonal.
struct CostBlock {
    Index start = 0;
    Matrix dense;
    Vector diag;

    bool is_diagonal() const { return dense.size() == 0; }
    Index size() const { return is_diagonal() ? diag.size() : dense.rows(); }
};

/// Symmetric block-diagonal matrix; indices outside every block are zero.
class BlockDiagonal {
   public:
    explicit BlockDiagonal(Index n = 0) : n_(n) {}

    void add_dense(Index start, Matrix block);
    void add_diagonal(Index start, Vector diag);

    Index size() const { return n_; }
    const std::vector<CostBlock>& blocks() const { return blocks_; }

    Vector multiply(const Vector& x) const;
    Matrix to_dense() const;
    /// Smallest eigenvalue over all blocks (0 if some index is uncovered).
    double min_eigenvalue() const;
    /// Restriction to the listed indices (sorted ascending), renumbered 0..k-1.
    BlockDiagonal restrict_to(const std::vector<Index>& keep) const;

   private:
    Index n_;
    std::vector<CostBlock> blocks_;
};

/**
 * minimize 1/2 x' H x + g' x  s.t.  A_eq x = b_eq,  lower <= x <= upper.
 * Bounds may be infinite.
 */
struct QpProblem {
    BlockDiagonal cost;
    Vector g;
    Matrix a_eq;
    Vector b_eq;
    Vector lower;
    Vector upper;

    Index n() const { return g.size(); }
    Index m() const { return a_eq.rows(); }
    bool has_finite_bounds() const;
    double objective(const Vector& x) const;

    /// Throws DimensionMismatch / ConfigInvalid. PSD is checked per block.
    void validate() const;

    nlohmann::json to_json() const;
    static QpProblem from_json(const nlohmann::json& j);
};

enum class QpStatus { solved, max_iter, infeasible_suspected };

std::string to_string(QpStatus status);

struct QpSolution {
    Vector x;
    Vector y_eq;   // equality multipliers
    Vector y_box;  // bound multipliers (> 0 at upper, < 0 at lower), size n
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double objective = 0.0;
    int iterations = 0;
    QpStatus status = QpStatus::max_iter;
    bool polished = false;
    bool regularized = false;

    nlohmann::json to_json() const;
};

struct QpSettings {
    double tol_primal = 1e-8;
    double tol_dual = 1e-8;
    int max_iter = 20000;
    double relaxation = 1.6;
    double sigma = 1e-6;
    double rho = 0.1;
    bool adaptive_rho = true;
    int check_every = 25;
    bool polish = true;
    double infeasibility_tol = 1e-5;
};

struct KktResiduals {
    double primal = 0.0;          // max(|A x - b|, bound violation)
    double dual = 0.0;            // |H x + g + A' y_eq + y_box|
    double complementarity = 0.0; // worst |y_i| * distance to the matching bound
    bool sign_consistent = true;
};

KktResiduals kkt_residuals(const QpProblem& qp, const Vector& x, const Vector& y_eq, const Vector& y_box);

/**
 * Reference solver for the equality-constrained QP via a dense
 * symmetric-indefinite factorization of [H A'; A 0]. Adds 1e-10 I to H when
 * the KKT matrix is singular (reported in `regularized`); throws SingularKkt
 * if that does not help.
 */
QpSolution kkt_solve(const Matrix& h, const Vector& g, const Matrix& a_eq, const Vector& b_eq);

/// Operator-splitting solver with adaptive penalty and active-set polishing.
QpSolution solve_qp(const QpProblem& qp, const QpSettings& settings = {},
                    const std::optional<Vector>& warm_start = std::nullopt);

}  // namespace kmhe
