#include "kmhe/lifting.hpp"

#include "kmhe/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <utility>

namespace kmhe {

namespace {

Vector vector_from_json(const nlohmann::json& j) {
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
    return v;
}

nlohmann::json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector positive_or_one(Vector v) {
    for (Index i = 0; i < v.size(); ++i) {
        if (!(v(i) > 1e-12) || !std::isfinite(v(i))) v(i) = 1.0;
    }
    return v;
}

Mlp linear_map(Matrix w) {
    Mlp m;
    m.widths = {w.cols(), w.rows()};
    m.biases.push_back(Matrix::Zero(w.rows(), 1));
    m.weights.push_back(std::move(w));
    return m;
}

}  // namespace

Normalization Normalization::identity(Index n_x, Index n_u) {
    Normalization n;
    n.x_center = Vector::Zero(n_x);
    n.x_spread = Vector::Ones(n_x);
    n.x_scale = Vector::Ones(n_x);
    n.u_scale = Vector::Ones(n_u);
    return n;
}

Normalization Normalization::fit(const std::vector<Trajectory>& data) {
    if (data.empty()) fail(ErrorCode::EmptySequence, "normalization: no training data");
    const Index n_x = data.front().n_x(), n_u = data.front().n_u();
    Vector sx = Vector::Zero(n_x), sxx = Vector::Zero(n_x), suu = Vector::Zero(n_u);
    double cx = 0.0, cu = 0.0;
    for (const auto& t : data) {
        if (t.n_x() != n_x || t.n_u() != n_u) fail(ErrorCode::DimensionMismatch, "normalization: inconsistent data");
        sx += t.x.rowwise().sum();
        sxx += t.x.array().square().matrix().rowwise().sum();
        suu += t.u.array().square().matrix().rowwise().sum();
        cx += static_cast<double>(t.x.cols());
        cu += static_cast<double>(t.u.cols());
    }
    Normalization n;
    n.x_center = sx / cx;
    const Vector mean_sq = sxx / cx;
    n.x_spread = positive_or_one((mean_sq - n.x_center.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt());
    n.x_scale = positive_or_one(mean_sq.cwiseSqrt());
    n.u_scale = cu > 0.0 ? positive_or_one((suu / cu).cwiseSqrt()) : Vector(Vector::Ones(n_u));
    return n;
}

Matrix Normalization::standardize_x(const Matrix& x) const {
    Matrix out = x.colwise() - x_center;
    return x_spread.cwiseInverse().asDiagonal() * out;
}

nlohmann::json Normalization::to_json() const {
    return {{"x_center", vector_to_json(x_center)},
            {"x_spread", vector_to_json(x_spread)},
            {"x_scale", vector_to_json(x_scale)},
            {"u_scale", vector_to_json(u_scale)}};
}

Normalization Normalization::from_json(const nlohmann::json& j) {
    Normalization n;
    n.x_center = vector_from_json(j.at("x_center"));
    n.x_spread = vector_from_json(j.at("x_spread"));
    n.x_scale = vector_from_json(j.at("x_scale"));
    n.u_scale = vector_from_json(j.at("u_scale"));
    return n;
}

LiftingModel::LiftingModel(Mlp psi_net, Mlp lambda_net, Matrix d, Normalization normalization, Index n)
    : psi(std::move(psi_net)), lambda(std::move(lambda_net)), d_norm(std::move(d)), norm(std::move(normalization)),
      horizon(n) {
    validate();
    refresh();
}

LiftingModel LiftingModel::identity_embedding(Index n_x, Index n_z, Index n_u, Index n_p, Index horizon) {
    if (n_z < n_x) fail(ErrorCode::ConfigInvalid, "identity embedding needs n_z >= n_x");
    Matrix embed = Matrix::Zero(n_z, n_x);
    embed.topRows(n_x).setIdentity();
    Matrix d = Matrix::Zero(n_x, n_z);
    d.leftCols(n_x).setIdentity();
    return LiftingModel(linear_map(std::move(embed)), linear_map(Matrix::Zero(n_p, n_z + n_u)), std::move(d),
                        Normalization::identity(n_x, n_u), horizon);
}

void LiftingModel::refresh() { d_phys_ = norm.x_scale.asDiagonal() * d_norm; }

void LiftingModel::validate() const {
    psi.validate();
    lambda.validate();
    const Index nx = d_norm.rows(), nz = d_norm.cols(), nu = norm.u_scale.size();
    if (psi.input_width() != nx || psi.output_width() != nz) {
        fail(ErrorCode::DimensionMismatch, "lifting model: psi does not map n_x to n_z");
    }
    if (lambda.input_width() != nz + nu) fail(ErrorCode::DimensionMismatch, "lifting model: lambda input is not n_z + n_u");
    if (nz < nx) fail(ErrorCode::ConfigInvalid, "lifting model: n_z must be at least n_x");
    if (norm.x_center.size() != nx || norm.x_spread.size() != nx || norm.x_scale.size() != nx) {
        fail(ErrorCode::DimensionMismatch, "lifting model: normalization size differs from n_x");
    }
    if (horizon < 0) fail(ErrorCode::ConfigInvalid, "lifting model: negative horizon");
}

Vector LiftingModel::lift(const Vector& x) const { return lift_batch(x); }

Matrix LiftingModel::lift_batch(const Matrix& x) const { return psi.forward_batch(norm.standardize_x(x)); }

Vector LiftingModel::schedule(const Vector& z, const Vector& u) const { return schedule_batch(z, u); }

Matrix LiftingModel::schedule_batch(const Matrix& z, const Matrix& u) const {
    if (z.cols() != u.cols()) fail(ErrorCode::DimensionMismatch, "schedule: z and u lengths differ");
    Matrix in(z.rows() + u.rows(), z.cols());
    in << z, norm.scale_u(u);
    return lambda.forward_batch(in);
}

nlohmann::json LiftingModel::to_json() const {
    return {{"kind", "learned"},
            {"n_x", n_x()},
            {"n_z", n_z()},
            {"n_u", n_u()},
            {"n_p", n_p()},
            {"horizon", horizon},
            {"psi", psi.to_json()},
            {"lambda", lambda.to_json()},
            {"D", matrix_to_json(d_norm)},
            {"normalization", norm.to_json()}};
}

LiftingModel LiftingModel::from_json(const nlohmann::json& j) {
    if (j.value("kind", std::string("learned")) != "learned") {
        fail(ErrorCode::ParseError, "lifting model: expected kind 'learned'");
    }
    return LiftingModel(Mlp::from_json(j.at("psi")), Mlp::from_json(j.at("lambda")), matrix_from_json(j.at("D")),
                        Normalization::from_json(j.at("normalization")), j.at("horizon").get<Index>());
}

Index window_count(const Trajectory& traj, Index horizon) {
    const Index states = traj.x.cols();
    const Index inputs = traj.u.cols();
    const Index by_states = states - horizon;
    const Index by_inputs = inputs - horizon + 1;
    return std::max<Index>(0, std::min(by_states, by_inputs));
}

void check_window_lengths(const std::vector<Trajectory>& data, Index horizon) {
    if (horizon < 0) fail(ErrorCode::ConfigInvalid, "horizon must be nonnegative");
    if (data.empty()) fail(ErrorCode::TrajectoryTooShort, "no trajectories supplied");
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (window_count(data[i], horizon) < 1) {
            fail(ErrorCode::TrajectoryTooShort, "trajectory " + std::to_string(i) + " has " +
                                                    std::to_string(data[i].x.cols()) + " states; a window needs " +
                                                    std::to_string(horizon + 1));
        }
    }
}

void fill_windows(TrainingBatch& batch, const std::vector<Trajectory>& data, const std::vector<std::size_t>& source,
                  const std::vector<Index>& start) {
    const Index n = batch.horizon;
    const Index b = static_cast<Index>(source.size());
    const Index n_x = data.front().n_x(), n_u = data.front().n_u();
    batch.windows = b;
    batch.source = source;
    batch.start = start;
    batch.win_u.resize(n_u, n * b);
    batch.win_x.resize(n_x, (n + 1) * b);
    for (Index w = 0; w < b; ++w) {
        const Trajectory& t = data[source[static_cast<std::size_t>(w)]];
        const Index s = start[static_cast<std::size_t>(w)];
        for (Index i = 0; i <= n; ++i) {
            batch.win_x.col(i * b + w) = t.x.col(s + i);
            if (i < n) batch.win_u.col(i * b + w) = t.u.col(s + i);
        }
    }
}

BatchSampler::BatchSampler(const std::vector<Trajectory>& data, Index horizon, Index windows_per_batch,
                           std::uint64_t seed)
    : data_(&data), horizon_(horizon), per_batch_(windows_per_batch), seed_(seed), rng_(seed) {
    if (windows_per_batch < 1) fail(ErrorCode::ConfigInvalid, "batch size must be positive");
    check_window_lengths(data, horizon);
    offsets_.push_back(0);
    for (const auto& t : data) offsets_.push_back(offsets_.back() + window_count(t, horizon));
    total_ = offsets_.back();
}

TrainingBatch BatchSampler::next() {
    std::uniform_int_distribution<Index> pick(0, total_ - 1);
    std::vector<std::size_t> source(static_cast<std::size_t>(per_batch_));
    std::vector<Index> start(static_cast<std::size_t>(per_batch_));
    for (Index w = 0; w < per_batch_; ++w) {
        const Index flat = pick(rng_);
        const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat);
        const auto traj = static_cast<std::size_t>(std::distance(offsets_.begin(), it) - 1);
        source[static_cast<std::size_t>(w)] = traj;
        start[static_cast<std::size_t>(w)] = flat - offsets_[traj];
    }
    TrainingBatch batch;
    batch.horizon = horizon_;
    batch.seed = seed_;
    fill_windows(batch, *data_, source, start);
    return batch;
}

namespace {

/// Tape graph of both losses. With `fixed` set, psi, lambda and D come from that map as constants.
struct LossGraph {
    ad::Tape tape;
    MlpVars psi_vars, lambda_vars;
    ad::Var d;
    ad::Var l1, l2;

    LossGraph(const LiftingModel* model, const LiftingMap* fixed, const TrainingBatch& batch, double mu,
              bool want_l2, L2Form form) {
        using namespace ad;
        const Normalization nm =
            model ? model->norm : Normalization::identity(fixed->n_x(), fixed->n_u());
        if (model) {
            psi_vars = bind(tape, model->psi);
            lambda_vars = bind(tape, model->lambda);
            d = tape.variable(model->d_norm);
        } else {
            d = tape.constant(fixed->reconstruction());
        }
        auto lift = [&](const Matrix& x) {
            if (model) return forward(model->psi, psi_vars, tape.constant(nm.standardize_x(x)));
            return tape.constant(fixed->lift_batch(x));
        };
        auto schedule = [&](const Var& z, const Matrix& u_n) {
            if (model) return forward(model->lambda, lambda_vars, vstack({z, tape.constant(u_n)}));
            return tape.constant(fixed->schedule_batch(z.value(), u_n));
        };

        const Index n = batch.horizon, b = batch.windows;
        if (b < 1) fail(ErrorCode::EmptySequence, "loss: batch has no windows");

        const Matrix xw_n = nm.scale_x(batch.win_x);
        const Var zw = lift(batch.win_x);
        const Var recon = sub(matmul(d, zw), tape.constant(xw_n));
        l1 = scale(sum(col_norms(recon)), 1.0 / static_cast<double>(b));
        if (!want_l2) return;

        const Index t_off = batch.offline_u.cols();
        if (batch.offline_x.cols() != t_off + 1) {
            fail(ErrorCode::DimensionMismatch, "loss: offline states must be one longer than inputs");
        }
        const Matrix uo_n = nm.scale_u(batch.offline_u);
        const Var zo = lift(batch.offline_x);
        const Var po = schedule(cols(zo, 0, t_off), uo_n);
        const Var uo_c = tape.constant(uo_n);
        const Var vo = kron_cols(po, uo_c);
        // Initial-condition block: full state window, or only the lifted first sample.
        const bool lifted = form == L2Form::lifted_initial;
        const Var hx = lifted ? cols(zo, 0, t_off - n + 1)
                              : hankel(tape.constant(nm.scale_x(batch.offline_x)), n + 1);
        const Var g = n > 0 ? vstack({hankel(uo_c, n), hankel(vo, n), hx}) : hx;

        const Matrix uw_n = nm.scale_u(batch.win_u);
        const Var uw_c = tape.constant(uw_n);
        const Var pw = schedule(cols(zw, 0, n * b), uw_n);
        const Var vw = kron_cols(pw, uw_c);
        const Var xw_c = tape.constant(xw_n);

        std::vector<Var> rhs_parts;
        std::vector<Var> x_parts;
        for (Index t = 0; t < n; ++t) rhs_parts.push_back(cols(uw_c, t * b, b));
        for (Index t = 0; t < n; ++t) rhs_parts.push_back(cols(vw, t * b, b));
        for (Index t = 0; t <= n; ++t) x_parts.push_back(cols(xw_c, t * b, b));
        if (lifted) {
            rhs_parts.push_back(cols(zw, 0, b));
        } else {
            rhs_parts.insert(rhs_parts.end(), x_parts.begin(), x_parts.end());
        }
        const Var rhs = vstack(std::span<const Var>(rhs_parts));
        const Var target = vstack(std::span<const Var>(x_parts));

        const Var alpha = ridge_solve(g, rhs, mu);
        const Var hzd = hankel(matmul(d, zo), n + 1);
        const Var pred_err = sub(matmul(hzd, alpha), target);
        l2 = scale(sum(col_norms(pred_err)), 1.0 / static_cast<double>(b));
    }
};

/// Builds the graph, reporting non-finite intermediates as a loss failure.
template <class... Args>
std::unique_ptr<LossGraph> make_graph(Args&&... args) {
    try {
        return std::make_unique<LossGraph>(std::forward<Args>(args)...);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFiniteInput || e.code() == ErrorCode::NonFiniteResult) {
            fail(ErrorCode::NonFiniteLoss, std::string("loss: ") + e.what());
        }
        throw;
    }
}

void require_finite_loss(double v, const char* which) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteLoss, std::string(which) + " is not finite");
}

}  // namespace

double loss_l1(const LiftingModel& model, const TrainingBatch& batch) {
    const auto graph = make_graph(&model, nullptr, batch, 1.0, false, L2Form::hankel_states);
    const double v = graph->l1.value()(0, 0);
    require_finite_loss(v, "L1");
    return v;
}

double loss_l2(const LiftingModel& model, const TrainingBatch& batch, double mu, L2Form form) {
    return evaluate_losses(model, batch, mu, form).l2;
}

LossValues evaluate_losses(const LiftingModel& model, const TrainingBatch& batch, double mu, L2Form form) {
    const auto graph = make_graph(&model, nullptr, batch, mu, true, form);
    LossValues out{graph->l1.value()(0, 0), graph->l2.value()(0, 0)};
    require_finite_loss(out.l1, "L1");
    require_finite_loss(out.l2, "L2");
    return out;
}

LossValues evaluate_losses(const LiftingMap& lifting, const TrainingBatch& batch, double mu, L2Form form) {
    const auto graph = make_graph(nullptr, &lifting, batch, mu, true, form);
    LossValues out{graph->l1.value()(0, 0), graph->l2.value()(0, 0)};
    require_finite_loss(out.l1, "L1");
    require_finite_loss(out.l2, "L2");
    return out;
}

LossGradient loss_gradient(const LiftingModel& model, const TrainingBatch& batch, double mu, double w1, double w2,
                           L2Form form) {
    const auto graph = make_graph(&model, nullptr, batch, mu, w2 != 0.0, form);
    LossGradient out;
    out.value.l1 = graph->l1.value()(0, 0);
    out.value.l2 = w2 != 0.0 ? graph->l2.value()(0, 0) : 0.0;
    require_finite_loss(out.value.l1, "L1");
    require_finite_loss(out.value.l2, "L2");
    const ad::Var total = w2 != 0.0 ? ad::add(ad::scale(graph->l1, w1), ad::scale(graph->l2, w2)) : ad::scale(graph->l1, w1);
    graph->tape.backward(total);
    auto grad_of = [&](ad::Var v) {
        const Matrix& g = graph->tape.grad(v);
        return g.size() == 0 ? Matrix(Matrix::Zero(v.rows(), v.cols())) : g;
    };
    for (std::size_t l = 0; l < model.psi.layers(); ++l) {
        out.grads.push_back(grad_of(graph->psi_vars.weights[l]));
        out.grads.push_back(grad_of(graph->psi_vars.biases[l]));
    }
    for (std::size_t l = 0; l < model.lambda.layers(); ++l) {
        out.grads.push_back(grad_of(graph->lambda_vars.weights[l]));
        out.grads.push_back(grad_of(graph->lambda_vars.biases[l]));
    }
    out.grads.push_back(grad_of(graph->d));
    return out;
}

std::vector<Matrix*> parameters(LiftingModel& model) {
    std::vector<Matrix*> out;
    for (std::size_t l = 0; l < model.psi.layers(); ++l) {
        out.push_back(&model.psi.weights[l]);
        out.push_back(&model.psi.biases[l]);
    }
    for (std::size_t l = 0; l < model.lambda.layers(); ++l) {
        out.push_back(&model.lambda.weights[l]);
        out.push_back(&model.lambda.biases[l]);
    }
    out.push_back(&model.d_norm);
    return out;
}

void TrainingConfig::validate() const {
    if (n_z < 1 || n_p < 1 || horizon < 1) fail(ErrorCode::ConfigInvalid, "training: n_z, n_p and horizon must be positive");
    if (epochs < 0 || batch_size < 1 || steps_per_epoch < 0) fail(ErrorCode::ConfigInvalid, "training: bad epoch settings");
    if (!(lr >= 0.0) || !(mu > 0.0)) fail(ErrorCode::ConfigInvalid, "training: lr must be >= 0 and mu > 0");
    if (lr_final < 0.0 || (lr_final > 0.0 && lr == 0.0)) fail(ErrorCode::ConfigInvalid, "training: bad lr_final");
    if (weight_l1 < 0.0 || weight_l2 < 0.0) fail(ErrorCode::ConfigInvalid, "training: loss weights must be nonnegative");
    if (offline_slice < horizon + 1) fail(ErrorCode::ConfigInvalid, "training: offline slice shorter than a window");
    if (val_windows < 1 || patience < 0) fail(ErrorCode::ConfigInvalid, "training: bad validation settings");
    for (Index w : psi_hidden) {
        if (w < 1) fail(ErrorCode::ConfigInvalid, "training: hidden widths must be positive");
    }
    for (Index w : lambda_hidden) {
        if (w < 1) fail(ErrorCode::ConfigInvalid, "training: hidden widths must be positive");
    }
}

nlohmann::json TrainingConfig::to_json() const {
    return {{"n_z", n_z},
            {"n_p", n_p},
            {"horizon", horizon},
            {"psi_hidden", psi_hidden},
            {"lambda_hidden", lambda_hidden},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"steps_per_epoch", steps_per_epoch},
            {"lr", lr},
            {"lr_final", lr_final},
            {"mu", mu},
            {"weight_l1", weight_l1},
            {"weight_l2", weight_l2},
            {"offline_slice", offline_slice},
            {"val_windows", val_windows},
            {"patience", patience},
            {"normalize", normalize},
            {"relu_on_input", relu_on_input},
            {"l2_form", l2_form == L2Form::lifted_initial ? "lifted_initial" : "hankel_states"},
            {"seed", seed}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
    TrainingConfig c;
    try {
        c.n_z = j.value("n_z", c.n_z);
        c.n_p = j.value("n_p", c.n_p);
        c.horizon = j.value("horizon", c.horizon);
        c.psi_hidden = j.value("psi_hidden", c.psi_hidden);
        c.lambda_hidden = j.value("lambda_hidden", c.lambda_hidden);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
        c.lr = j.value("lr", c.lr);
        c.lr_final = j.value("lr_final", c.lr_final);
        c.mu = j.value("mu", c.mu);
        c.weight_l1 = j.value("weight_l1", c.weight_l1);
        c.weight_l2 = j.value("weight_l2", c.weight_l2);
        c.offline_slice = j.value("offline_slice", c.offline_slice);
        c.val_windows = j.value("val_windows", c.val_windows);
        c.patience = j.value("patience", c.patience);
        c.normalize = j.value("normalize", c.normalize);
        c.relu_on_input = j.value("relu_on_input", c.relu_on_input);
        const std::string form = j.value("l2_form", std::string("hankel_states"));
        if (form == "hankel_states") {
            c.l2_form = L2Form::hankel_states;
        } else if (form == "lifted_initial") {
            c.l2_form = L2Form::lifted_initial;
        } else {
            fail(ErrorCode::ConfigInvalid, "training: unknown l2_form '" + form + "'");
        }
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ConfigInvalid, std::string("training config: ") + e.what());
    }
    c.validate();
    return c;
}

namespace {

void set_offline_slice(TrainingBatch& batch, const Trajectory& source, Index start, Index length) {
    batch.offline_u = source.u.middleCols(start, length);
    batch.offline_x = source.x.middleCols(start, length + 1);
}

TrainingBatch validation_batch(const TrainingConfig& cfg, const std::vector<Trajectory>& val_data,
                               const Trajectory& offline, Index slice) {
    BatchSampler sampler(val_data, cfg.horizon, cfg.val_windows, cfg.seed ^ 0x5eedULL);
    TrainingBatch batch = sampler.next();
    set_offline_slice(batch, offline, 0, slice);
    return batch;
}

void fit_reconstruction(LiftingModel& model, const TrainingBatch& batch) {
    const Matrix z = model.psi.forward_batch(model.norm.standardize_x(batch.win_x));
    const Matrix xn = model.norm.scale_x(batch.win_x);
    Matrix gram = z * z.transpose();
    gram.diagonal().array() += 1e-8 * std::max(1.0, gram.diagonal().maxCoeff());
    model.d_norm = gram.ldlt().solve(z * xn.transpose()).transpose();
}

}  // namespace

TrainingResult train(const TrainingConfig& cfg, const std::vector<Trajectory>& train_data,
                     const std::vector<Trajectory>& val_data) {
    cfg.validate();
    check_window_lengths(train_data, cfg.horizon);
    check_window_lengths(val_data, cfg.horizon);
    const Trajectory& offline = train_data.front();
    const Index n_x = offline.n_x(), n_u = offline.n_u();
    if (cfg.n_z < n_x) fail(ErrorCode::ConfigInvalid, "training: n_z must be at least n_x");
    const Index usable = std::min<Index>(offline.u.cols(), offline.x.cols() - 1);
    const Index slice = std::min(cfg.offline_slice, usable);
    if (slice - cfg.horizon + 1 < 1) fail(ErrorCode::TrajectoryTooShort, "training: offline trajectory too short");

    std::mt19937_64 rng(cfg.seed);
    std::vector<Index> psi_w{n_x};
    psi_w.insert(psi_w.end(), cfg.psi_hidden.begin(), cfg.psi_hidden.end());
    psi_w.push_back(cfg.n_z);
    std::vector<Index> lambda_w{cfg.n_z + n_u};
    lambda_w.insert(lambda_w.end(), cfg.lambda_hidden.begin(), cfg.lambda_hidden.end());
    lambda_w.push_back(cfg.n_p);
    Mlp psi(psi_w, rng, cfg.relu_on_input);
    Mlp lambda(lambda_w, rng, cfg.relu_on_input);
    Normalization norm = cfg.normalize ? Normalization::fit(train_data) : Normalization::identity(n_x, n_u);
    LiftingModel model(std::move(psi), std::move(lambda), Matrix::Zero(n_x, cfg.n_z), std::move(norm), cfg.horizon);

    BatchSampler sampler(train_data, cfg.horizon, cfg.batch_size, cfg.seed + 1);
    std::mt19937_64 slice_rng(cfg.seed + 2);
    std::uniform_int_distribution<Index> slice_start(0, usable - slice);
    const TrainingBatch val_batch = validation_batch(cfg, val_data, offline, slice);
    const Index steps =
        cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : std::max<Index>(1, sampler.total_windows() / cfg.batch_size);

    TrainingResult result;
    AdamState adam;
    adam.lr = cfg.lr;
    std::vector<Matrix*> params = parameters(model);
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    bool d_initialized = false;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const Index off_start = slice_start(slice_rng);
        if (cfg.lr_final > 0.0 && cfg.epochs > 1) {
            const double frac = static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs - 1);
            adam.lr = cfg.lr * std::pow(cfg.lr_final / cfg.lr, frac);
        }
        HistoryRow row;
        row.epoch = epoch;
        for (Index s = 0; s < steps; ++s) {
            TrainingBatch batch = sampler.next();
            set_offline_slice(batch, offline, off_start, slice);
            if (!d_initialized) {
                fit_reconstruction(model, batch);
                d_initialized = true;
            }
            LossGradient lg = loss_gradient(model, batch, cfg.mu, cfg.weight_l1, cfg.weight_l2, cfg.l2_form);
            for (const auto& g : lg.grads) {
                if (!g.allFinite()) fail(ErrorCode::DivergedLoss, "training: non-finite gradient at epoch " + std::to_string(epoch));
            }
            row.l1 += lg.value.l1 / static_cast<double>(steps);
            row.l2 += lg.value.l2 / static_cast<double>(steps);
            adam_step(params, lg.grads, adam);
        }
        model.refresh();
        LossValues val;
        try {
            val = evaluate_losses(model, val_batch, cfg.mu, cfg.l2_form);
        } catch (const Error& e) {
            fail(ErrorCode::DivergedLoss, std::string("training: validation loss diverged: ") + e.what());
        }
        row.val_l1 = val.l1;
        row.val_l2 = val.l2;
        result.history.push_back(row);
        const double total = cfg.weight_l1 * val.l1 + cfg.weight_l2 * val.l2;
        if (total < best) {
            best = total;
            result.model = model;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            break;
        }
    }
    if (result.history.empty()) {
        if (!d_initialized) {
            TrainingBatch batch = sampler.next();
            fit_reconstruction(model, batch);
        }
        model.refresh();
        const LossValues val = evaluate_losses(model, val_batch, cfg.mu, cfg.l2_form);
        best = cfg.weight_l1 * val.l1 + cfg.weight_l2 * val.l2;
        result.model = model;
    }
    result.model.refresh();
    result.best_val = best;
    return result;
}

void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& history, const std::string& comment) {
    if (!comment.empty()) os << "# " << comment << '\n';
    os << "epoch,L1,L2,val_L1,val_L2\n";
    for (const auto& r : history) {
        os << r.epoch << ',' << format_double(r.l1) << ',' << format_double(r.l2) << ',' << format_double(r.val_l1)
           << ',' << format_double(r.val_l2) << '\n';
    }
}

}  // namespace kmhe
