#include "kmhe/mhe.hpp"

#include "kmhe/errors.hpp"
#include "kmhe/netgrad.hpp"

#include <cmath>
#include <limits>
#include <ostream>

namespace kmhe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const nlohmann::json& j) {
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& e = j[i];
        if (e.is_string()) {
            const auto s = e.get<std::string>();
            if (s == "inf") v(static_cast<Index>(i)) = kInf;
            else if (s == "-inf") v(static_cast<Index>(i)) = -kInf;
            else fail(ErrorCode::ConfigInvalid, "expected a number or \"inf\"/\"-inf\", got \"" + s + "\"");
        } else {
            v(static_cast<Index>(i)) = e.get<double>();
        }
    }
    return v;
}

nlohmann::json bound_to_json(const Vector& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Index i = 0; i < v.size(); ++i) {
        if (std::isfinite(v(i))) out.push_back(v(i));
        else out.push_back(v(i) > 0 ? "inf" : "-inf");
    }
    return out;
}

Matrix weight_from_json(const nlohmann::json& j) {
    if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
    if (j.is_array()) {
        const auto r = static_cast<Index>(j.size());
        const auto c = r > 0 ? static_cast<Index>(j[0].size()) : 0;
        Matrix m(r, c);
        for (Index i = 0; i < r; ++i) {
            if (static_cast<Index>(j[static_cast<std::size_t>(i)].size()) != c) {
                fail(ErrorCode::ConfigInvalid, "weight matrix rows differ in length");
            }
            for (Index k = 0; k < c; ++k) m(i, k) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
        }
        return m;
    }
    fail(ErrorCode::ConfigInvalid, "weight must be a number or a dense array");
}

nlohmann::json weight_to_json(const Matrix& m) {
    if (m.size() == 1) return m(0, 0);
    nlohmann::json rows = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        rows.push_back(std::move(row));
    }
    return rows;
}

Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

}  // namespace

HankelStack::HankelStack(Matrix u, Matrix v, Matrix y, Matrix z, Index horizon)
    : u_(std::move(u)), v_(std::move(v)), y_(std::move(y)), z_(std::move(z)), horizon_(horizon) {
    const Index t = u_.cols();
    if (horizon_ < 1) fail(ErrorCode::ConfigInvalid, "hankel stack: horizon must be at least 1");
    if (v_.cols() != t || y_.cols() != t + 1 || z_.cols() != t + 1) {
        fail(ErrorCode::DimensionMismatch, "hankel stack: need T inputs and T+1 outputs/states");
    }
    if (t < horizon_ + 1) {
        fail(ErrorCode::TrajectoryTooShort, "hankel stack: offline length " + std::to_string(t) +
                                                " is too short for horizon " + std::to_string(horizon_));
    }
    for (Index k = 0; k <= horizon_; ++k) {
        const Index ncols = t - k + 1;
        Blocks b{hankel_cols(u_, k, ncols), hankel_cols(v_, k, ncols), hankel_cols(y_, k + 1, ncols),
                 hankel_cols(z_, k + 1, ncols)};
        blocks_.push_back(std::move(b));
    }
}

nlohmann::json HankelStack::to_json() const {
    return {{"horizon", horizon_},
            {"T", length()},
            {"u", matrix_to_json(u_)},
            {"v", matrix_to_json(v_)},
            {"y", matrix_to_json(y_)},
            {"z", matrix_to_json(z_)}};
}

HankelStack HankelStack::from_json(const nlohmann::json& j) {
    return HankelStack(matrix_from_json(j.at("u")), matrix_from_json(j.at("v")), matrix_from_json(j.at("y")),
                       matrix_from_json(j.at("z")), j.at("horizon").get<Index>());
}

HankelStack build_hankel_stack(const Trajectory& offline, const LiftingMap& lifting, Index horizon) {
    if (!offline.has_u() || !offline.has_x() || !offline.has_y()) {
        fail(ErrorCode::DimensionMismatch, "build_hankel_stack: offline data needs inputs, states and outputs");
    }
    if (offline.n_x() != lifting.n_x() || offline.n_u() != lifting.n_u()) {
        fail(ErrorCode::DimensionMismatch, "build_hankel_stack: offline data and lifting dimensions differ");
    }
    const Index t = std::min(offline.u.cols(), offline.x.cols() - 1);
    if (t < 1 || horizon > t) {
        fail(ErrorCode::TrajectoryTooShort, "build_hankel_stack: horizon " + std::to_string(horizon) +
                                                " exceeds offline length " + std::to_string(t));
    }
    Matrix u = offline.u.leftCols(t);
    Matrix z = lifting.lift_batch(offline.x.leftCols(t + 1));
    const Matrix p = lifting.schedule_batch(z.leftCols(t), u);
    Matrix v = kron_columns(p, u);
    return HankelStack(std::move(u), std::move(v), offline.y.leftCols(t + 1), std::move(z), horizon);
}

Matrix expand_weight(const Matrix& w, Index n, const char* name) {
    if (w.size() == 1) return w(0, 0) * Matrix::Identity(n, n);
    if (w.rows() != n || w.cols() != n) {
        fail(ErrorCode::ConfigInvalid, std::string("weight ") + name + " must be " + std::to_string(n) + "x" +
                                           std::to_string(n) + " or a scalar");
    }
    return w;
}

void MheConfig::validate(Index n_x, Index n_z, Index n_y, bool need_prior) const {
    if (horizon < 1) fail(ErrorCode::ConfigInvalid, "mhe: horizon must be at least 1");
    if (!(lambda_z > 0.0) || !(lambda_alpha > 0.0)) fail(ErrorCode::ConfigInvalid, "mhe: lambda_z and lambda_alpha must be positive");
    if (eps_x < 0.0 || eps_y < 0.0 || delta_z < 0.0 || delta_y < 0.0) {
        fail(ErrorCode::ConfigInvalid, "mhe: residual bounds must be nonnegative");
    }
    const std::pair<const Matrix*, std::pair<Index, const char*>> weights[] = {
        {&P, {n_z, "P"}}, {&Q, {n_z, "Q"}}, {&R, {n_y, "R"}}};
    for (const auto& [w, info] : weights) {
        const Matrix full = expand_weight(*w, info.first, info.second);
        if ((full - full.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + full.cwiseAbs().maxCoeff())) {
            fail(ErrorCode::ConfigInvalid, std::string("mhe: weight ") + info.second + " is not symmetric");
        }
        Eigen::LLT<Matrix> llt(full);
        if (llt.info() != Eigen::Success) {
            fail(ErrorCode::ConfigInvalid, std::string("mhe: weight ") + info.second + " is not positive definite");
        }
    }
    if (x_lower.size() != x_upper.size() || (x_lower.size() != 0 && x_lower.size() != n_x)) {
        fail(ErrorCode::ConfigInvalid, "mhe: state box must have n_x entries on both sides");
    }
    if (x_lower.size() > 0 && (x_lower.array() > x_upper.array()).any()) {
        fail(ErrorCode::ConfigInvalid, "mhe: state box lower bound exceeds upper bound");
    }
    if (need_prior && x_prior.size() != n_x) fail(ErrorCode::ConfigInvalid, "mhe: prior x_prior must have n_x entries");
}

nlohmann::json MheConfig::to_json() const {
    nlohmann::json j = {{"horizon", horizon},
                        {"P", weight_to_json(P)},
                        {"Q", weight_to_json(Q)},
                        {"R", weight_to_json(R)},
                        {"lambda_z", lambda_z},
                        {"lambda_alpha", lambda_alpha},
                        {"eps_x", eps_x},
                        {"eps_y", eps_y},
                        {"delta_z", delta_z},
                        {"delta_y", delta_y},
                        {"x_prior", vector_to_json(x_prior)},
                        {"qp",
                         {{"tol_primal", qp.tol_primal},
                          {"tol_dual", qp.tol_dual},
                          {"max_iter", qp.max_iter},
                          {"rho", qp.rho},
                          {"sigma", qp.sigma},
                          {"relaxation", qp.relaxation},
                          {"adaptive_rho", qp.adaptive_rho},
                          {"polish", qp.polish}}}};
    if (x_lower.size() > 0) {
        j["x_lower"] = bound_to_json(x_lower);
        j["x_upper"] = bound_to_json(x_upper);
    }
    return j;
}

MheConfig MheConfig::from_json(const nlohmann::json& j) {
    MheConfig c;
    try {
        c.horizon = j.value("horizon", c.horizon);
        if (j.contains("P")) c.P = weight_from_json(j["P"]);
        if (j.contains("Q")) c.Q = weight_from_json(j["Q"]);
        if (j.contains("R")) c.R = weight_from_json(j["R"]);
        c.lambda_z = j.value("lambda_z", c.lambda_z);
        c.lambda_alpha = j.value("lambda_alpha", c.lambda_alpha);
        c.eps_x = j.value("eps_x", c.eps_x);
        c.eps_y = j.value("eps_y", c.eps_y);
        c.delta_z = j.value("delta_z", c.delta_z);
        c.delta_y = j.value("delta_y", c.delta_y);
        if (j.contains("x_lower")) c.x_lower = vector_from_json(j["x_lower"]);
        if (j.contains("x_upper")) c.x_upper = vector_from_json(j["x_upper"]);
        if (j.contains("x_prior")) c.x_prior = vector_from_json(j["x_prior"]);
        if (j.contains("qp")) {
            const auto& q = j["qp"];
            c.qp.tol_primal = q.value("tol_primal", c.qp.tol_primal);
            c.qp.tol_dual = q.value("tol_dual", c.qp.tol_dual);
            c.qp.max_iter = q.value("max_iter", c.qp.max_iter);
            c.qp.rho = q.value("rho", c.qp.rho);
            c.qp.sigma = q.value("sigma", c.qp.sigma);
            c.qp.relaxation = q.value("relaxation", c.qp.relaxation);
            c.qp.adaptive_rho = q.value("adaptive_rho", c.qp.adaptive_rho);
            c.qp.polish = q.value("polish", c.qp.polish);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ConfigInvalid, std::string("mhe config: ") + e.what());
    }
    return c;
}

WindowProblem assemble_qp(const HankelStack& stack, const Matrix& u_win, const Matrix& v_win, const Matrix& y_win,
                          const Vector& z_prior, const Matrix& d, const MheConfig& config) {
    const Index depth = u_win.cols();
    const Index n_z = stack.n_z(), n_y = stack.n_y(), n_u = stack.n_u(), n_v = stack.n_v();
    const Index n_x = d.rows();
    if (depth > stack.horizon() || v_win.cols() != depth || y_win.cols() != depth + 1 || u_win.rows() != n_u ||
        v_win.rows() != n_v || y_win.rows() != n_y || z_prior.size() != n_z || d.cols() != n_z) {
        fail(ErrorCode::DimensionMismatch, "assemble_qp: window does not match the stack");
    }
    config.validate(n_x, n_z, n_y, false);
    const bool boxed = config.x_lower.size() > 0 &&
                       (config.x_lower.array().isFinite().any() || config.x_upper.array().isFinite().any());

    QpLayout lay;
    lay.depth = depth;
    lay.n_z = n_z;
    lay.n_y = n_y;
    lay.n_x = n_x;
    lay.n_alpha = stack.columns(depth);
    const Index nzw = (depth + 1) * n_z, nyw = (depth + 1) * n_y;
    lay.z = 0;
    lay.pi_y = lay.z + nzw;
    lay.pi_z = lay.pi_y + nyw;
    lay.alpha = lay.pi_z + nzw;
    lay.size = lay.alpha + lay.n_alpha;
    if (boxed) {
        lay.x = lay.size;
        lay.size += (depth + 1) * n_x;
    }

    const Matrix p = expand_weight(config.P, n_z, "P");
    const Matrix q = expand_weight(config.Q, n_z, "Q");
    const Matrix r = expand_weight(config.R, n_y, "R");

    WindowProblem out;
    out.layout = lay;
    QpProblem& qp = out.qp;
    qp.cost = BlockDiagonal(lay.size);
    qp.g = Vector::Zero(lay.size);
    qp.cost.add_dense(lay.z, 2.0 * config.lambda_z * p);
    qp.g.segment(lay.z, n_z) = -2.0 * config.lambda_z * (p * z_prior);
    lay.cost_constant = config.lambda_z * z_prior.dot(p * z_prior);
    out.layout.cost_constant = lay.cost_constant;
    for (Index j = 0; j <= depth; ++j) {
        qp.cost.add_dense(lay.pi_y + j * n_y, 2.0 * r);
        qp.cost.add_dense(lay.pi_z + j * n_z, 2.0 * q);
    }
    qp.cost.add_diagonal(lay.alpha, Vector::Constant(lay.n_alpha, 2.0 * config.alpha_weight()));

    const Index rows_u = depth * n_u, rows_v = depth * n_v;
    const Index rows = rows_u + rows_v + nyw + nzw + (boxed ? (depth + 1) * n_x : 0);
    qp.a_eq = Matrix::Zero(rows, lay.size);
    qp.b_eq = Vector::Zero(rows);
    Index row = 0;
    qp.a_eq.block(row, lay.alpha, rows_u, lay.n_alpha) = stack.hu(depth);
    qp.b_eq.segment(row, rows_u) = flatten(u_win);
    row += rows_u;
    qp.a_eq.block(row, lay.alpha, rows_v, lay.n_alpha) = stack.hv(depth);
    qp.b_eq.segment(row, rows_v) = flatten(v_win);
    row += rows_v;
    qp.a_eq.block(row, lay.alpha, nyw, lay.n_alpha) = stack.hy(depth);
    qp.a_eq.block(row, lay.pi_y, nyw, nyw).setIdentity();
    qp.b_eq.segment(row, nyw) = flatten(y_win);
    row += nyw;
    qp.a_eq.block(row, lay.alpha, nzw, lay.n_alpha) = stack.hz(depth);
    qp.a_eq.block(row, lay.z, nzw, nzw) = -Matrix::Identity(nzw, nzw);
    qp.a_eq.block(row, lay.pi_z, nzw, nzw) = -Matrix::Identity(nzw, nzw);
    row += nzw;

    qp.lower = Vector::Constant(lay.size, -kInf);
    qp.upper = Vector::Constant(lay.size, kInf);
    if (boxed) {
        for (Index j = 0; j <= depth; ++j) {
            qp.a_eq.block(row + j * n_x, lay.z + j * n_z, n_x, n_z) = d;
            qp.a_eq.block(row + j * n_x, lay.x + j * n_x, n_x, n_x) = -Matrix::Identity(n_x, n_x);
            qp.lower.segment(lay.x + j * n_x, n_x) = config.x_lower;
            qp.upper.segment(lay.x + j * n_x, n_x) = config.x_upper;
        }
    }
    return out;
}

MheEstimator::MheEstimator(const HankelStack& stack, const LiftingMap& lifting, MheConfig config)
    : stack_(&stack), lifting_(&lifting), config_(std::move(config)) {
    if (lifting.n_z() != stack.n_z() || lifting.n_u() != stack.n_u() || lifting.n_p() * lifting.n_u() != stack.n_v()) {
        fail(ErrorCode::DimensionMismatch, "mhe: lifting and stack dimensions differ");
    }
    if (config_.horizon != stack.horizon()) {
        fail(ErrorCode::ConfigInvalid, "mhe: configured horizon " + std::to_string(config_.horizon) +
                                           " differs from the stack horizon " + std::to_string(stack.horizon()));
    }
    config_.validate(lifting.n_x(), lifting.n_z(), stack.n_y());
    state_.z_initial_prior = lifting.lift(config_.x_prior);
}

EstimateRecord MheEstimator::step(const std::optional<Vector>& u_prev, const Vector& y) {
    MheState& s = state_;
    const Index n = config_.horizon;
    if (y.size() != stack_->n_y()) fail(ErrorCode::DimensionMismatch, "mhe_step: output has the wrong size");
    s.last_p.reset();
    if (s.k > 0) {
        if (!u_prev) fail(ErrorCode::DimensionMismatch, "mhe_step: input u_{k-1} is required for k > 0");
        if (u_prev->size() != stack_->n_u()) fail(ErrorCode::DimensionMismatch, "mhe_step: input has the wrong size");
        const Vector p = lifting_->schedule(s.z_filtered.back(), *u_prev);
        s.u_buf.push_back(*u_prev);
        s.v_buf.push_back(kron_input(p, *u_prev));
        s.last_p = p;
        if (static_cast<Index>(s.u_buf.size()) > n) {
            s.u_buf.pop_front();
            s.v_buf.pop_front();
        }
    }
    s.y_buf.push_back(y);
    if (static_cast<Index>(s.y_buf.size()) > n + 1) s.y_buf.pop_front();

    const Index depth = std::min(s.k, n);
    Matrix u_win(stack_->n_u(), depth), v_win(stack_->n_v(), depth), y_win(stack_->n_y(), depth + 1);
    for (Index j = 0; j < depth; ++j) {
        u_win.col(j) = s.u_buf[static_cast<std::size_t>(j)];
        v_win.col(j) = s.v_buf[static_cast<std::size_t>(j)];
    }
    for (Index j = 0; j <= depth; ++j) y_win.col(j) = s.y_buf[static_cast<std::size_t>(j)];
    // Prior: psi(x_prior) for k < N, then z_hat_{k-N|k-N}.
    const Vector& prior = s.k < n ? s.z_initial_prior : s.z_filtered.front();

    const Matrix& d = lifting_->reconstruction();
    const WindowProblem wp = assemble_qp(*stack_, u_win, v_win, y_win, prior, d, config_);
    const QpLayout& lay = wp.layout;

    std::optional<Vector> warm;
    if (s.warm_start && s.warm_layout.size == lay.size && s.warm_layout.depth == lay.depth) {
        // Shift the sample blocks one step; alpha is reused as is.
        Vector w = *s.warm_start;
        auto shift = [&](Index start, Index width) {
            for (Index j = 0; j < depth; ++j) w.segment(start + j * width, width) = s.warm_start->segment(start + (j + 1) * width, width);
        };
        shift(lay.z, lay.n_z);
        shift(lay.pi_y, lay.n_y);
        shift(lay.pi_z, lay.n_z);
        if (lay.x >= 0) shift(lay.x, lay.n_x);
        warm = std::move(w);
    }
    const QpSolution sol = solve_qp(wp.qp, config_.qp, warm);

    EstimateRecord rec;
    rec.k = s.k;
    rec.depth = depth;
    rec.iterations = sol.iterations;
    rec.status = sol.status;
    if (sol.status == QpStatus::solved) {
        const Vector& x = sol.x;
        rec.z_hat = x.segment(lay.z + depth * lay.n_z, lay.n_z);
        const Vector pi_y = x.segment(lay.pi_y, (depth + 1) * lay.n_y);
        const Vector pi_z = x.segment(lay.pi_z, (depth + 1) * lay.n_z);
        const Vector alpha = x.segment(lay.alpha, lay.n_alpha);
        rec.slack_y_norm = pi_y.norm();
        rec.slack_z_norm = pi_z.norm();
        rec.alpha_norm = alpha.norm();
        // V* evaluated term by term so that it is nonnegative by construction.
        const Matrix p = expand_weight(config_.P, lay.n_z, "P");
        const Matrix q = expand_weight(config_.Q, lay.n_z, "Q");
        const Matrix r = expand_weight(config_.R, lay.n_y, "R");
        const Vector e0 = x.segment(lay.z, lay.n_z) - prior;
        double cost = config_.lambda_z * e0.dot(p * e0) + config_.alpha_weight() * alpha.squaredNorm();
        for (Index j = 0; j <= depth; ++j) {
            const auto py = pi_y.segment(j * lay.n_y, lay.n_y);
            const auto pz = pi_z.segment(j * lay.n_z, lay.n_z);
            cost += py.dot(r * py) + pz.dot(q * pz);
        }
        rec.cost = cost;
        s.warm_start = x;
        s.warm_layout = lay;
    } else {
        rec.degraded = true;
        rec.z_hat = s.z_filtered.empty() ? s.z_initial_prior : s.z_filtered.back();
        rec.cost = std::numeric_limits<double>::quiet_NaN();
        s.warm_start.reset();
    }
    rec.x_hat = d * rec.z_hat;
    s.z_filtered.push_back(rec.z_hat);
    if (static_cast<Index>(s.z_filtered.size()) > n) s.z_filtered.pop_front();
    ++s.k;
    return rec;
}

nlohmann::json EstimationMetrics::to_json() const {
    return {{"rmse", rmse},
            {"rmse_total", rmse_total},
            {"mean_iterations", mean_iterations},
            {"failures", failures},
            {"steps", steps}};
}

EstimationMetrics compute_metrics(const std::vector<EstimateRecord>& records, const Matrix& truth_x, Index from,
                                  Index to) {
    EstimationMetrics m;
    m.steps = static_cast<Index>(records.size());
    double iters = 0.0;
    for (const auto& r : records) {
        iters += r.iterations;
        if (r.degraded) ++m.failures;
    }
    m.mean_iterations = records.empty() ? 0.0 : iters / static_cast<double>(records.size());
    if (truth_x.rows() == 0 || records.empty()) {
        m.rmse.assign(static_cast<std::size_t>(truth_x.rows()), 0.0);
        return m;
    }
    const Index last = std::min<Index>(to < 0 ? m.steps : to, std::min(m.steps, truth_x.cols()));
    const Index first = std::max<Index>(0, from);
    const Index n_x = truth_x.rows();
    Vector sq = Vector::Zero(n_x);
    Index count = 0;
    for (Index k = first; k < last; ++k) {
        sq += (records[static_cast<std::size_t>(k)].x_hat - truth_x.col(k)).cwiseAbs2();
        ++count;
    }
    m.rmse.resize(static_cast<std::size_t>(n_x));
    for (Index i = 0; i < n_x; ++i) m.rmse[static_cast<std::size_t>(i)] = count > 0 ? std::sqrt(sq(i) / count) : 0.0;
    m.rmse_total = count > 0 ? std::sqrt(sq.sum() / static_cast<double>(count * n_x)) : 0.0;
    return m;
}

EstimationResult run_estimation(const Trajectory& online, const Matrix& truth_x, const HankelStack& stack,
                                const LiftingMap& lifting, const MheConfig& config, Index rmse_from, Index rmse_to) {
    EstimationResult out;
    const Index steps = online.y.cols();
    if (steps > 0 && online.u.cols() < steps - 1) {
        fail(ErrorCode::DimensionMismatch, "run_estimation: online data needs at least L-1 inputs for L outputs");
    }
    MheEstimator est(stack, lifting, config);
    for (Index k = 0; k < steps; ++k) {
        std::optional<Vector> u_prev;
        if (k > 0) u_prev = Vector(online.u.col(k - 1));
        EstimateRecord rec = est.step(u_prev, online.y.col(k));
        rec.t = static_cast<double>(k) * online.dt;
        if (k > 0 && est.state().last_p) out.records.back().p = *est.state().last_p;
        out.records.push_back(std::move(rec));
    }
    if (!out.records.empty() && online.u.cols() >= steps) {
        const Vector& z_last = out.records.back().z_hat;
        out.records.back().p = lifting.schedule(z_last, online.u.col(steps - 1));
    }
    out.metrics = compute_metrics(out.records, truth_x, rmse_from, rmse_to);
    return out;
}

void write_estimate_csv(std::ostream& os, const std::vector<EstimateRecord>& records, double dt,
                        const std::string& comment) {
    if (!comment.empty()) os << "# " << comment << '\n';
    const Index n_x = records.empty() ? 0 : records.front().x_hat.size();
    os << "k,t";
    for (Index i = 0; i < n_x; ++i) os << ",xhat" << (i + 1);
    os << ",z_norm,V,slack_y,slack_z,alpha_norm,iterations,status\n";
    for (const auto& r : records) {
        os << r.k << ',' << format_double(static_cast<double>(r.k) * dt);
        for (Index i = 0; i < n_x; ++i) os << ',' << format_double(r.x_hat(i));
        os << ',' << format_double(r.z_hat.norm()) << ',' << format_double(r.cost) << ','
           << format_double(r.slack_y_norm) << ',' << format_double(r.slack_z_norm) << ','
           << format_double(r.alpha_norm) << ',' << r.iterations << ','
           << (r.degraded ? "degraded_" + to_string(r.status) : to_string(r.status)) << '\n';
    }
}

}  // namespace kmhe
