#include "kmhe/qpsolve.hpp"

#include "kmhe/errors.hpp"
#include "kmhe/netgrad.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace kmhe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

void BlockDiagonal::add_dense(Index start, Matrix block) {
    if (block.rows() != block.cols()) fail(ErrorCode::DimensionMismatch, "cost block must be square");
    if (start < 0 || start + block.rows() > n_) fail(ErrorCode::DimensionMismatch, "cost block out of range");
    if (block.rows() == 0) return;
    blocks_.push_back(CostBlock{start, std::move(block), Vector()});
}

void BlockDiagonal::add_diagonal(Index start, Vector diag) {
    if (start < 0 || start + diag.size() > n_) fail(ErrorCode::DimensionMismatch, "cost block out of range");
    if (diag.size() == 0) return;
    blocks_.push_back(CostBlock{start, Matrix(), std::move(diag)});
}

Vector BlockDiagonal::multiply(const Vector& x) const {
    Vector out = Vector::Zero(n_);
    for (const auto& b : blocks_) {
        if (b.is_diagonal()) {
            out.segment(b.start, b.size()) += b.diag.cwiseProduct(x.segment(b.start, b.size()));
        } else {
            out.segment(b.start, b.size()) += b.dense * x.segment(b.start, b.size());
        }
    }
    return out;
}

Matrix BlockDiagonal::to_dense() const {
    Matrix out = Matrix::Zero(n_, n_);
    for (const auto& b : blocks_) {
        if (b.is_diagonal()) {
            out.diagonal().segment(b.start, b.size()) += b.diag;
        } else {
            out.block(b.start, b.start, b.size(), b.size()) += b.dense;
        }
    }
    return out;
}

double BlockDiagonal::min_eigenvalue() const {
    std::vector<bool> covered(static_cast<std::size_t>(n_), false);
    double lo = kInf;
    for (const auto& b : blocks_) {
        for (Index i = 0; i < b.size(); ++i) covered[static_cast<std::size_t>(b.start + i)] = true;
        if (b.is_diagonal()) {
            lo = std::min(lo, b.diag.minCoeff());
        } else {
            Eigen::SelfAdjointEigenSolver<Matrix> eig(b.dense, Eigen::EigenvaluesOnly);
            lo = std::min(lo, eig.eigenvalues().minCoeff());
        }
    }
    if (std::find(covered.begin(), covered.end(), false) != covered.end()) lo = std::min(lo, 0.0);
    return n_ == 0 ? 0.0 : lo;
}

BlockDiagonal BlockDiagonal::restrict_to(const std::vector<Index>& keep) const {
    std::vector<Index> pos(static_cast<std::size_t>(n_), -1);
    for (std::size_t i = 0; i < keep.size(); ++i) pos[static_cast<std::size_t>(keep[i])] = static_cast<Index>(i);
    BlockDiagonal out(static_cast<Index>(keep.size()));
    for (const auto& b : blocks_) {
        std::vector<Index> local;
        for (Index i = 0; i < b.size(); ++i) {
            if (pos[static_cast<std::size_t>(b.start + i)] >= 0) local.push_back(i);
        }
        if (local.empty()) continue;
        const Index start = pos[static_cast<std::size_t>(b.start + local.front())];
        const Index k = static_cast<Index>(local.size());
        if (b.is_diagonal()) {
            Vector d(k);
            for (Index i = 0; i < k; ++i) d(i) = b.diag(local[static_cast<std::size_t>(i)]);
            out.add_diagonal(start, std::move(d));
        } else {
            Matrix d(k, k);
            for (Index i = 0; i < k; ++i) {
                for (Index j = 0; j < k; ++j) {
                    d(i, j) = b.dense(local[static_cast<std::size_t>(i)], local[static_cast<std::size_t>(j)]);
                }
            }
            out.add_dense(start, std::move(d));
        }
    }
    return out;
}

bool QpProblem::has_finite_bounds() const {
    for (Index i = 0; i < n(); ++i) {
        if (std::isfinite(lower(i)) || std::isfinite(upper(i))) return true;
    }
    return false;
}

double QpProblem::objective(const Vector& x) const { return 0.5 * x.dot(cost.multiply(x)) + g.dot(x); }

void QpProblem::validate() const {
    const Index nv = n();
    if (cost.size() != nv || a_eq.cols() != nv || b_eq.size() != a_eq.rows() || lower.size() != nv ||
        upper.size() != nv) {
        fail(ErrorCode::DimensionMismatch, "qp: inconsistent dimensions");
    }
    if ((lower.array() > upper.array()).any()) fail(ErrorCode::ConfigInvalid, "qp: lower bound above upper bound");
    std::vector<int> seen(static_cast<std::size_t>(nv), 0);
    double scale = 1.0;
    for (const auto& b : cost.blocks()) {
        for (Index i = 0; i < b.size(); ++i) {
            if (seen[static_cast<std::size_t>(b.start + i)]++) fail(ErrorCode::ConfigInvalid, "qp: overlapping cost blocks");
        }
        if (!b.is_diagonal()) {
            if ((b.dense - b.dense.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + b.dense.cwiseAbs().maxCoeff())) {
                fail(ErrorCode::ConfigInvalid, "qp: cost block is not symmetric");
            }
            scale = std::max(scale, b.dense.cwiseAbs().maxCoeff());
        } else {
            scale = std::max(scale, b.diag.cwiseAbs().maxCoeff());
        }
    }
    const double shift = std::max(0.0, -cost.min_eigenvalue());
    if (shift > 1e-10 * scale) {
        fail(ErrorCode::ConfigInvalid, "qp: cost is not positive semidefinite (needs diagonal shift " +
                                           format_double(shift) + ")");
    }
}

namespace {

nlohmann::json vec_to_json(const Vector& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Index i = 0; i < v.size(); ++i) {
        if (std::isfinite(v(i))) out.push_back(v(i));
        else out.push_back(v(i) > 0 ? "inf" : "-inf");
    }
    return out;
}

Vector vec_from_json(const nlohmann::json& j) {
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& e = j[i];
        if (e.is_string()) v(static_cast<Index>(i)) = e.get<std::string>() == "inf" ? kInf : -kInf;
        else v(static_cast<Index>(i)) = e.get<double>();
    }
    return v;
}

}  // namespace

nlohmann::json QpProblem::to_json() const {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : cost.blocks()) {
        if (b.is_diagonal()) blocks.push_back({{"start", b.start}, {"diag", vec_to_json(b.diag)}});
        else blocks.push_back({{"start", b.start}, {"dense", matrix_to_json(b.dense)}});
    }
    return {{"n", n()},
            {"cost_blocks", std::move(blocks)},
            {"g", vec_to_json(g)},
            {"a_eq", matrix_to_json(a_eq)},
            {"b_eq", vec_to_json(b_eq)},
            {"lower", vec_to_json(lower)},
            {"upper", vec_to_json(upper)}};
}

QpProblem QpProblem::from_json(const nlohmann::json& j) {
    QpProblem qp;
    const auto n = j.at("n").get<Index>();
    qp.cost = BlockDiagonal(n);
    for (const auto& b : j.at("cost_blocks")) {
        if (b.contains("diag")) qp.cost.add_diagonal(b.at("start").get<Index>(), vec_from_json(b.at("diag")));
        else qp.cost.add_dense(b.at("start").get<Index>(), matrix_from_json(b.at("dense")));
    }
    qp.g = vec_from_json(j.at("g"));
    qp.a_eq = matrix_from_json(j.at("a_eq"));
    qp.b_eq = vec_from_json(j.at("b_eq"));
    qp.lower = vec_from_json(j.at("lower"));
    qp.upper = vec_from_json(j.at("upper"));
    qp.validate();
    return qp;
}

std::string to_string(QpStatus status) {
    switch (status) {
        case QpStatus::solved: return "solved";
        case QpStatus::max_iter: return "max_iter";
        case QpStatus::infeasible_suspected: return "infeasible_suspected";
    }
    return "unknown";
}

nlohmann::json QpSolution::to_json() const {
    return {{"status", to_string(status)},   {"iterations", iterations},         {"polished", polished},
            {"regularized", regularized},    {"objective", objective},           {"primal_residual", primal_residual},
            {"dual_residual", dual_residual}, {"x", vec_to_json(x)},             {"y_eq", vec_to_json(y_eq)},
            {"y_box", vec_to_json(y_box)}};
}

KktResiduals kkt_residuals(const QpProblem& qp, const Vector& x, const Vector& y_eq, const Vector& y_box) {
    KktResiduals r;
    double prim = qp.m() > 0 ? inf_norm(qp.a_eq * x - qp.b_eq) : 0.0;
    for (Index i = 0; i < qp.n(); ++i) {
        prim = std::max(prim, qp.lower(i) - x(i));
        prim = std::max(prim, x(i) - qp.upper(i));
    }
    r.primal = prim;
    Vector stat = qp.cost.multiply(x) + qp.g + y_box;
    if (qp.m() > 0) stat += qp.a_eq.transpose() * y_eq;
    r.dual = inf_norm(stat);
    for (Index i = 0; i < qp.n(); ++i) {
        const double y = y_box(i);
        if (y > 0.0) {
            if (!std::isfinite(qp.upper(i))) r.sign_consistent = false;
            else r.complementarity = std::max(r.complementarity, y * std::abs(qp.upper(i) - x(i)));
        } else if (y < 0.0) {
            if (!std::isfinite(qp.lower(i))) r.sign_consistent = false;
            else r.complementarity = std::max(r.complementarity, -y * std::abs(x(i) - qp.lower(i)));
        }
    }
    return r;
}

QpSolution kkt_solve(const Matrix& h, const Vector& g, const Matrix& a_eq, const Vector& b_eq) {
    const Index n = h.rows(), m = a_eq.rows();
    if (h.cols() != n || g.size() != n || a_eq.cols() != n || b_eq.size() != m) {
        fail(ErrorCode::DimensionMismatch, "kkt_solve: inconsistent dimensions");
    }
    auto attempt = [&](double reg, Vector& sol) -> bool {
        const Index dim = n + m;
        // Column-major full matrix; dsysv reads the lower triangle.
        Matrix kkt = Matrix::Zero(dim, dim);
        kkt.topLeftCorner(n, n) = h;
        kkt.topLeftCorner(n, n).diagonal().array() += reg;
        kkt.bottomLeftCorner(m, n) = a_eq;
        kkt.topRightCorner(n, m) = a_eq.transpose();
        const Matrix kkt_copy = kkt;
        sol.resize(dim);
        sol << -g, b_eq;
        const Vector rhs = sol;
        std::vector<lapack_int> ipiv(static_cast<std::size_t>(dim));
        const lapack_int info = LAPACKE_dsysv(LAPACK_COL_MAJOR, 'L', static_cast<lapack_int>(dim), 1, kkt.data(),
                                              static_cast<lapack_int>(dim), ipiv.data(), sol.data(),
                                              static_cast<lapack_int>(dim));
        if (info != 0 || !sol.allFinite()) return false;
        const double res = inf_norm(kkt_copy * sol - rhs);
        return res <= 1e-8 * (1.0 + inf_norm(rhs)) * std::max<double>(1.0, static_cast<double>(dim));
    };
    QpSolution out;
    Vector sol;
    if (!attempt(0.0, sol)) {
        out.regularized = true;
        if (!attempt(1e-10, sol)) fail(ErrorCode::SingularKkt, "kkt_solve: KKT matrix is singular");
    }
    out.x = sol.head(n);
    out.y_eq = sol.tail(m);
    out.y_box = Vector::Zero(n);
    out.status = QpStatus::solved;
    out.objective = 0.5 * out.x.dot(h * out.x) + g.dot(out.x);
    out.primal_residual = m > 0 ? inf_norm(a_eq * out.x - b_eq) : 0.0;
    out.dual_residual = inf_norm(h * out.x + g + a_eq.transpose() * out.y_eq);
    return out;
}

namespace {

/**
 * Solves [H + diag(shift), A'; A, -delta I] [x; lam] = [r1; r2] through the
 * Schur complement A M^{-1} A' + delta I of the block-diagonal M.
 */
class SchurKkt {
   public:
    SchurKkt(const BlockDiagonal& h, const Vector& shift, const Matrix& a, double delta) : a_(a), delta_(delta) {
        const Index n = h.size();
        block_of_.assign(static_cast<std::size_t>(n), -1);
        for (const auto& b : h.blocks()) {
            Factor f;
            f.start = b.start;
            f.size = b.size();
            if (b.is_diagonal()) {
                f.inv_diag = (b.diag + shift.segment(b.start, b.size())).cwiseInverse();
            } else {
                Matrix m = b.dense;
                m.diagonal() += shift.segment(b.start, b.size());
                f.llt.compute(m);
                if (f.llt.info() != Eigen::Success) {
                    fail(ErrorCode::SolverFailed, "qp: block factorization failed (cost not PSD?)");
                }
            }
            for (Index i = 0; i < f.size; ++i) block_of_[static_cast<std::size_t>(b.start + i)] = 1;
            factors_.push_back(std::move(f));
        }
        loose_inv_ = shift.cwiseInverse();
        if (a_.rows() > 0) {
            y_ = apply_inverse(Matrix(a_.transpose()));
            Matrix s = a_ * y_;
            s.diagonal().array() += delta_;
            schur_.compute(s);
            if (schur_.info() != Eigen::Success) fail(ErrorCode::SolverFailed, "qp: Schur complement is singular");
        }
    }

    Matrix apply_inverse(const Matrix& r) const {
        Matrix out(r.rows(), r.cols());
        for (std::size_t i = 0; i < block_of_.size(); ++i) {
            if (block_of_[i] < 0) out.row(static_cast<Index>(i)) = loose_inv_(static_cast<Index>(i)) * r.row(static_cast<Index>(i));
        }
        for (const auto& f : factors_) {
            if (f.inv_diag.size() > 0) {
                out.middleRows(f.start, f.size) = f.inv_diag.asDiagonal() * r.middleRows(f.start, f.size);
            } else {
                out.middleRows(f.start, f.size) = f.llt.solve(r.middleRows(f.start, f.size));
            }
        }
        return out;
    }

    void solve(const Vector& r1, const Vector& r2, Vector& x, Vector& lam) const {
        const Vector t = apply_inverse(r1);
        if (a_.rows() == 0) {
            x = t;
            lam.resize(0);
            return;
        }
        lam = schur_.solve(a_ * t - r2);
        x = t - y_ * lam;
    }

   private:
    struct Factor {
        Index start = 0;
        Index size = 0;
        Eigen::LLT<Matrix> llt;
        Vector inv_diag;
    };

    const Matrix& a_;
    double delta_;
    std::vector<Factor> factors_;
    std::vector<int> block_of_;
    Vector loose_inv_;
    Matrix y_;
    Eigen::LLT<Matrix> schur_;
};

struct PolishResult {
    bool ok = false;
    Vector x, y_eq, y_box;
    KktResiduals res;
};

/// Equality-constrained solve with the guessed active bounds fixed.
PolishResult polish(const QpProblem& qp, const std::vector<int>& active, const QpSettings& s) {
    const Index n = qp.n(), m = qp.m();
    PolishResult out;
    out.x = Vector::Zero(n);
    std::vector<Index> free_idx;
    for (Index i = 0; i < n; ++i) {
        const int a = active[static_cast<std::size_t>(i)];
        if (a < 0) out.x(i) = qp.lower(i);
        else if (a > 0) out.x(i) = qp.upper(i);
        else free_idx.push_back(i);
    }
    const Index nf = static_cast<Index>(free_idx.size());
    const BlockDiagonal hf = qp.cost.restrict_to(free_idx);
    Matrix af(m, nf);
    Vector gf(nf);
    for (Index j = 0; j < nf; ++j) {
        af.col(j) = qp.a_eq.col(free_idx[static_cast<std::size_t>(j)]);
        gf(j) = qp.g(free_idx[static_cast<std::size_t>(j)]);
    }
    // Contribution of fixed variables to the free gradient and the equality rhs.
    const Vector hx_fixed = qp.cost.multiply(out.x);
    for (Index j = 0; j < nf; ++j) gf(j) += hx_fixed(free_idx[static_cast<std::size_t>(j)]);
    const Vector rhs_eq = m > 0 ? Vector(qp.b_eq - qp.a_eq * out.x) : Vector(0);

    const double delta = 1e-9;
    const SchurKkt reg(hf, Vector::Constant(nf, delta), af, delta);
    Vector xf, lam;
    reg.solve(-gf, rhs_eq, xf, lam);
    // Iterative refinement against the unregularized KKT system.
    double last = kInf;
    for (int it = 0; it < 30; ++it) {
        Vector r1 = -gf - hf.multiply(xf);
        if (m > 0) r1 -= af.transpose() * lam;
        const Vector r2 = m > 0 ? Vector(rhs_eq - af * xf) : Vector(0);
        const double err = std::max(inf_norm(r1), inf_norm(r2));
        if (err < 1e-15 || err > 0.5 * last) break;
        last = err;
        Vector dx, dl;
        reg.solve(r1, r2, dx, dl);
        xf += dx;
        if (m > 0) lam += dl;
    }
    for (Index j = 0; j < nf; ++j) out.x(free_idx[static_cast<std::size_t>(j)]) = xf(j);
    out.y_eq = m > 0 ? lam : Vector(0);
    Vector stat = qp.cost.multiply(out.x) + qp.g;
    if (m > 0) stat += qp.a_eq.transpose() * out.y_eq;
    out.y_box = Vector::Zero(n);
    bool signs_ok = true;
    for (Index i = 0; i < n; ++i) {
        const int a = active[static_cast<std::size_t>(i)];
        if (a == 0) continue;
        out.y_box(i) = -stat(i);
        if (a < 0 && out.y_box(i) > s.tol_dual && qp.lower(i) != qp.upper(i)) signs_ok = false;
        if (a > 0 && out.y_box(i) < -s.tol_dual && qp.lower(i) != qp.upper(i)) signs_ok = false;
    }
    out.res = kkt_residuals(qp, out.x, out.y_eq, out.y_box);
    out.ok = signs_ok && out.x.allFinite() && out.res.primal <= s.tol_primal && out.res.dual <= s.tol_dual;
    return out;
}

}  // namespace

QpSolution solve_qp(const QpProblem& qp, const QpSettings& s, const std::optional<Vector>& warm_start) {
    qp.validate();
    const Index n = qp.n(), m = qp.m();

    std::vector<Index> boxed;
    for (Index i = 0; i < n; ++i) {
        if (std::isfinite(qp.lower(i)) || std::isfinite(qp.upper(i))) boxed.push_back(i);
    }
    const Index nb = static_cast<Index>(boxed.size());
    Vector box_lo(nb), box_hi(nb);
    for (Index k = 0; k < nb; ++k) {
        box_lo(k) = qp.lower(boxed[static_cast<std::size_t>(k)]);
        box_hi(k) = qp.upper(boxed[static_cast<std::size_t>(k)]);
    }

    Vector x = warm_start && warm_start->size() == n ? *warm_start : Vector::Zero(n);
    Vector z_box(nb);
    for (Index k = 0; k < nb; ++k) z_box(k) = std::clamp(x(boxed[static_cast<std::size_t>(k)]), box_lo(k), box_hi(k));
    Vector y_eq = Vector::Zero(m);
    Vector y_box = Vector::Zero(nb);

    QpSolution best;
    double best_score = kInf;
    auto full_box = [&](const Vector& yb) {
        Vector out = Vector::Zero(n);
        for (Index k = 0; k < nb; ++k) out(boxed[static_cast<std::size_t>(k)]) = yb(k);
        return out;
    };
    auto finish = [&](QpSolution sol, QpStatus status, int iters) {
        sol.status = status;
        sol.iterations = iters;
        sol.objective = qp.objective(sol.x);
        return sol;
    };

    double rho = s.rho;
    auto build_system = [&](double r) {
        Vector shift = Vector::Constant(n, s.sigma);
        for (Index k = 0; k < nb; ++k) shift(boxed[static_cast<std::size_t>(k)]) += r;
        return SchurKkt(qp.cost, shift, qp.a_eq, 1.0 / (1e3 * r));
    };
    auto system = std::make_unique<SchurKkt>(build_system(rho));

    std::vector<int> last_polish_set;
    bool polish_tried = false;
    Vector y_prev_eq = y_eq, y_prev_box = y_box;

    for (int iter = 0; iter <= s.max_iter; ++iter) {
        if (iter % s.check_every == 0 || iter == s.max_iter) {
            const Vector yb_full = full_box(y_box);
            const KktResiduals res = kkt_residuals(qp, x, y_eq, yb_full);
            QpSolution cur;
            cur.x = x;
            cur.y_eq = y_eq;
            cur.y_box = yb_full;
            cur.primal_residual = res.primal;
            cur.dual_residual = res.dual;
            const double score = std::max(res.primal / s.tol_primal, res.dual / s.tol_dual);
            if (score < best_score) {
                best_score = score;
                best = cur;
            }
            if (res.primal <= s.tol_primal && res.dual <= s.tol_dual) return finish(cur, QpStatus::solved, iter);

            if (s.polish) {
                std::vector<int> active(static_cast<std::size_t>(n), 0);
                for (Index k = 0; k < nb; ++k) {
                    const Index i = boxed[static_cast<std::size_t>(k)];
                    if (box_lo(k) == box_hi(k)) active[static_cast<std::size_t>(i)] = -1;
                    else if (z_box(k) - box_lo(k) < -y_box(k)) active[static_cast<std::size_t>(i)] = -1;
                    else if (box_hi(k) - z_box(k) < y_box(k)) active[static_cast<std::size_t>(i)] = 1;
                }
                if (!polish_tried || active != last_polish_set) {
                    polish_tried = true;
                    last_polish_set = active;
                    const PolishResult pr = polish(qp, active, s);
                    if (pr.ok) {
                        QpSolution sol;
                        sol.x = pr.x;
                        sol.y_eq = pr.y_eq;
                        sol.y_box = pr.y_box;
                        sol.primal_residual = pr.res.primal;
                        sol.dual_residual = pr.res.dual;
                        sol.polished = true;
                        return finish(sol, QpStatus::solved, iter);
                    }
                }
            }

            // Primal infeasibility certificate on the latest dual increment.
            if (iter > 0) {
                const Vector dy_eq = y_eq - y_prev_eq;
                const Vector dy_box = y_box - y_prev_box;
                const double dy_norm = std::max(inf_norm(dy_eq), inf_norm(dy_box));
                if (dy_norm > 1e-12) {
                    Vector at_dy = full_box(dy_box);
                    if (m > 0) at_dy += qp.a_eq.transpose() * dy_eq;
                    double support = m > 0 ? qp.b_eq.dot(dy_eq) : 0.0;
                    bool bounded = true;
                    for (Index k = 0; k < nb; ++k) {
                        if (dy_box(k) > 0.0) {
                            if (std::isfinite(box_hi(k))) support += box_hi(k) * dy_box(k);
                            else bounded = false;
                        } else if (dy_box(k) < 0.0) {
                            if (std::isfinite(box_lo(k))) support += box_lo(k) * dy_box(k);
                            else bounded = false;
                        }
                    }
                    if (bounded && inf_norm(at_dy) <= s.infeasibility_tol * dy_norm &&
                        support <= -s.infeasibility_tol * dy_norm) {
                        return finish(best, QpStatus::infeasible_suspected, iter);
                    }
                }
            }

            if (s.adaptive_rho && iter > 0) {
                Vector cx_minus_z(m + nb), cx(m + nb), zfull(m + nb);
                if (m > 0) {
                    const Vector ax = qp.a_eq * x;
                    cx.head(m) = ax;
                    zfull.head(m) = qp.b_eq;
                }
                for (Index k = 0; k < nb; ++k) {
                    cx(m + k) = x(boxed[static_cast<std::size_t>(k)]);
                    zfull(m + k) = z_box(k);
                }
                cx_minus_z = cx - zfull;
                Vector aty = full_box(y_box);
                if (m > 0) aty += qp.a_eq.transpose() * y_eq;
                const Vector hx = qp.cost.multiply(x);
                const double prim_scale = std::max({inf_norm(cx), inf_norm(zfull), 1e-12});
                const double dual_scale = std::max({inf_norm(hx), inf_norm(aty), inf_norm(qp.g), 1e-12});
                const double r_prim = inf_norm(cx_minus_z) / prim_scale;
                const double r_dual = inf_norm(hx + qp.g + aty) / dual_scale;
                if (r_dual > 0.0 && r_prim > 0.0) {
                    const double proposal = std::clamp(rho * std::sqrt(r_prim / r_dual), 1e-6, 1e6);
                    if (proposal > 5.0 * rho || proposal < 0.2 * rho) {
                        rho = proposal;
                        system = std::make_unique<SchurKkt>(build_system(rho));
                    }
                }
            }
            if (iter == s.max_iter) break;
        }

        y_prev_eq = y_eq;
        y_prev_box = y_box;

        // x-update: (H + sigma I + rho E'E + rho_eq A'A) xt = sigma x - g + A'(rho_eq b - y_eq) + E'(rho z - y_box)
        const double rho_eq = 1e3 * rho;
        Vector rhs = s.sigma * x - qp.g;
        if (m > 0) rhs += qp.a_eq.transpose() * (rho_eq * qp.b_eq - y_eq);
        for (Index k = 0; k < nb; ++k) rhs(boxed[static_cast<std::size_t>(k)]) += rho * z_box(k) - y_box(k);
        Vector xt, nu;
        system->solve(rhs, Vector::Zero(m), xt, nu);
        {
            // One refinement step on the regularized normal system.
            Vector shift_x = s.sigma * xt;
            for (Index k = 0; k < nb; ++k) shift_x(boxed[static_cast<std::size_t>(k)]) += rho * xt(boxed[static_cast<std::size_t>(k)]);
            Vector lhs = qp.cost.multiply(xt) + shift_x;
            if (m > 0) lhs += rho_eq * (qp.a_eq.transpose() * (qp.a_eq * xt));
            Vector dx, dnu;
            system->solve(rhs - lhs, Vector::Zero(m), dx, dnu);
            xt += dx;
        }

        const Vector x_relaxed = s.relaxation * xt + (1.0 - s.relaxation) * x;
        if (m > 0) {
            const Vector ax_relaxed = s.relaxation * (qp.a_eq * xt) + (1.0 - s.relaxation) * qp.b_eq;
            y_eq += rho_eq * (ax_relaxed - qp.b_eq);
        }
        for (Index k = 0; k < nb; ++k) {
            const Index i = boxed[static_cast<std::size_t>(k)];
            const double zr = s.relaxation * xt(i) + (1.0 - s.relaxation) * z_box(k);
            const double znew = std::clamp(zr + y_box(k) / rho, box_lo(k), box_hi(k));
            y_box(k) += rho * (zr - znew);
            z_box(k) = znew;
        }
        x = x_relaxed;
    }
    return finish(best, QpStatus::max_iter, s.max_iter);
}

}  // namespace kmhe
