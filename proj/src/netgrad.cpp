#include "kmhe/netgrad.hpp"

#include "kmhe/errors.hpp"

#include <cmath>
#include <memory>

namespace kmhe::ad {

namespace {

void accumulate(Tape& tape, int id, const Matrix& g) {
    if (!tape.needs_grad(id)) return;
    Matrix& dst = tape.grad_mut(id);
    if (dst.size() == 0) {
        dst = g;
    } else {
        dst += g;
    }
}

Tape& same_tape(std::span<const Var> vars) {
    if (vars.empty()) fail(ErrorCode::EmptySequence, "netgrad: no operands");
    Tape* t = nullptr;
    for (const Var& v : vars) {
        if (v.tape() == nullptr) fail(ErrorCode::UnsupportedPrimitive, "netgrad: unbound variable");
        if (t && v.tape() != t) fail(ErrorCode::UnsupportedPrimitive, "netgrad: operands on different tapes");
        t = v.tape();
    }
    return *t;
}

Tape& same_tape(std::initializer_list<Var> vars) { return same_tape(std::span<const Var>(vars.begin(), vars.size())); }

void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
    if (!ok) {
        fail(ErrorCode::DimensionMismatch, std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                                               std::to_string(a.cols()) + " and " + std::to_string(b.rows()) +
                                               "x" + std::to_string(b.cols()));
    }
}

}  // namespace

const Matrix& Var::value() const {
    if (!tape_) fail(ErrorCode::UnsupportedPrimitive, "netgrad: unbound variable");
    return tape_->value(*this);
}

std::size_t Tape::check(Var v) const {
    if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
        fail(ErrorCode::UnsupportedPrimitive, "netgrad: variable does not belong to this tape");
    }
    return static_cast<std::size_t>(v.id_);
}

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, true});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[check(in)].needs_grad;
    nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr, needs});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(Var out) {
    const std::size_t root = check(out);
    if (nodes_[root].value.rows() != 1 || nodes_[root].value.cols() != 1) {
        fail(ErrorCode::UnsupportedPrimitive, "netgrad: backward requires a scalar output");
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[root].grad = Matrix::Ones(1, 1);
    for (std::size_t i = root + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.size() == 0) continue;
        n.backward(*this, static_cast<int>(i));
    }
}

Var matmul(Var a, Var b) {
    Tape& t = same_tape({a, b});
    require_shape(a.cols() == b.rows(), "matmul", a.value(), b.value());
    const int ia = a.id(), ib = b.id();
    return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad_mut(self);
        if (tp.needs_grad(ia)) accumulate(tp, ia, g * tp.value_of(ib).transpose());
        if (tp.needs_grad(ib)) accumulate(tp, ib, tp.value_of(ia).transpose() * g);
    });
}

Var add(Var a, Var b) {
    Tape& t = same_tape({a, b});
    require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(), b.value());
    const int ia = a.id(), ib = b.id();
    return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
        const Matrix g = tp.grad_mut(self);
        accumulate(tp, ia, g);
        accumulate(tp, ib, g);
    });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape({a, b});
    require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a.value(), b.value());
    const int ia = a.id(), ib = b.id();
    return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
        const Matrix g = tp.grad_mut(self);
        accumulate(tp, ia, g);
        accumulate(tp, ib, -g);
    });
}

Var scale(Var a, double c) {
    Tape& t = same_tape({a});
    const int ia = a.id();
    return t.record(c * a.value(), {a}, [ia, c](Tape& tp, int self) { accumulate(tp, ia, c * tp.grad_mut(self)); });
}

Var affine(Var w, Var x, Var b) {
    Tape& t = same_tape({w, x, b});
    require_shape(w.cols() == x.rows(), "affine", w.value(), x.value());
    require_shape(b.rows() == w.rows() && b.cols() == 1, "affine bias", w.value(), b.value());
    Matrix out = w.value() * x.value();
    out.colwise() += b.value().col(0);
    const int iw = w.id(), ix = x.id(), ib = b.id();
    return t.record(std::move(out), {w, x, b}, [iw, ix, ib](Tape& tp, int self) {
        const Matrix g = tp.grad_mut(self);
        if (tp.needs_grad(iw)) accumulate(tp, iw, g * tp.value_of(ix).transpose());
        if (tp.needs_grad(ix)) accumulate(tp, ix, tp.value_of(iw).transpose() * g);
        if (tp.needs_grad(ib)) accumulate(tp, ib, g.rowwise().sum());
    });
}

Var relu(Var a) {
    Tape& t = same_tape({a});
    const int ia = a.id();
    return t.record(a.value().cwiseMax(0.0), {a}, [ia](Tape& tp, int self) {
        const Matrix& in = tp.value_of(ia);
        accumulate(tp, ia, (in.array() > 0.0).select(tp.grad_mut(self), 0.0));
    });
}

Var kron_cols(Var p, Var u) {
    Tape& t = same_tape({p, u});
    require_shape(p.cols() == u.cols(), "kron_cols", p.value(), u.value());
    const int ip = p.id(), iu = u.id();
    return t.record(kmhe::kron_columns(p.value(), u.value()), {p, u}, [ip, iu](Tape& tp, int self) {
        const Matrix g = tp.grad_mut(self);
        const Matrix& pv = tp.value_of(ip);
        const Matrix& uv = tp.value_of(iu);
        const Index np = pv.rows(), nu = uv.rows();
        Matrix gp = Matrix::Zero(np, pv.cols());
        Matrix gu = Matrix::Zero(nu, uv.cols());
        for (Index k = 0; k < pv.cols(); ++k) {
            for (Index i = 0; i < np; ++i) {
                const auto gblock = g.col(k).segment(i * nu, nu);
                gp(i, k) = gblock.dot(uv.col(k));
                gu.col(k) += pv(i, k) * gblock;
            }
        }
        accumulate(tp, ip, gp);
        accumulate(tp, iu, gu);
    });
}

Var hankel(Var seq, Index depth) {
    Tape& t = same_tape({seq});
    const int is = seq.id();
    return t.record(kmhe::hankel(seq.value(), depth), {seq}, [is, depth](Tape& tp, int self) {
        const Matrix g = tp.grad_mut(self);
        const Matrix& sv = tp.value_of(is);
        const Index m = sv.rows();
        Matrix gs = Matrix::Zero(m, sv.cols());
        for (Index j = 0; j < g.cols(); ++j) {
            for (Index i = 0; i < depth; ++i) gs.col(j + i) += g.block(i * m, j, m, 1);
        }
        accumulate(tp, is, gs);
    });
}

Var vstack(std::span<const Var> parts) {
    Tape& t = same_tape(parts);
    const Index ncols = parts.begin()->cols();
    Index nrows = 0;
    std::vector<int> ids;
    std::vector<Index> offsets;
    for (const Var& p : parts) {
        require_shape(p.cols() == ncols, "vstack", parts.begin()->value(), p.value());
        ids.push_back(p.id());
        offsets.push_back(nrows);
        nrows += p.rows();
    }
    Matrix out(nrows, ncols);
    {
        std::size_t i = 0;
        for (const Var& p : parts) out.middleRows(offsets[i++], p.rows()) = p.value();
    }
    // The recorded input only decides needs_grad; the closure routes to every part.
    Var probe = *parts.begin();
    for (const Var& p : parts) {
        if (t.needs_grad(p.id())) probe = p;
    }
    return t.record(std::move(out), {probe}, [ids, offsets](Tape& tp, int self) {
        const Matrix g = tp.grad_mut(self);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!tp.needs_grad(ids[i])) continue;
            accumulate(tp, ids[i], g.middleRows(offsets[i], tp.value_of(ids[i]).rows()));
        }
    });
}

Var vstack(std::initializer_list<Var> parts) { return vstack(std::span<const Var>(parts.begin(), parts.size())); }

Var cols(Var a, Index first, Index count) {
    Tape& t = same_tape({a});
    if (first < 0 || count < 0 || first + count > a.cols()) {
        fail(ErrorCode::IndexOutOfRange, "cols: slice outside matrix");
    }
    const int ia = a.id();
    return t.record(a.value().middleCols(first, count), {a}, [ia, first, count](Tape& tp, int self) {
        const Matrix& av = tp.value_of(ia);
        Matrix g = Matrix::Zero(av.rows(), av.cols());
        g.middleCols(first, count) = tp.grad_mut(self);
        accumulate(tp, ia, g);
    });
}

Var reshape(Var a, Index rows, Index ncols) {
    Tape& t = same_tape({a});
    if (rows * ncols != a.value().size()) fail(ErrorCode::ShapeMismatch, "reshape: size mismatch");
    const int ia = a.id();
    Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, ncols);
    return t.record(std::move(out), {a}, [ia](Tape& tp, int self) {
        const Matrix& av = tp.value_of(ia);
        const Matrix& g = tp.grad_mut(self);
        accumulate(tp, ia, Eigen::Map<const Matrix>(g.data(), av.rows(), av.cols()));
    });
}

namespace {

struct RidgeFactors {
    Matrix u;  // r x k
    Vector s;  // k
    Matrix v;  // c x k
};

RidgeFactors ridge_factors(const Eigen::Ref<const Matrix>& h) {
    RidgeFactors f;
    if (std::min(h.rows(), h.cols()) <= 64) {
        Eigen::JacobiSVD<Matrix> svd(h, Eigen::ComputeThinU | Eigen::ComputeThinV);
        f.u = svd.matrixU();
        f.s = svd.singularValues();
        f.v = svd.matrixV();
    } else {
        Eigen::BDCSVD<Matrix> svd(h, Eigen::ComputeThinU | Eigen::ComputeThinV);
        f.u = svd.matrixU();
        f.s = svd.singularValues();
        f.v = svd.matrixV();
    }
    return f;
}

Matrix ridge_apply(const RidgeFactors& f, const Eigen::Ref<const Matrix>& rhs, double mu) {
    const Vector gain = f.s.array() / (f.s.array().square() + mu);
    return f.v * (gain.asDiagonal() * (f.u.transpose() * rhs));
}

}  // namespace

Matrix ridge_lstsq(const Eigen::Ref<const Matrix>& h, const Eigen::Ref<const Matrix>& rhs, double mu) {
    if (!(mu > 0.0)) fail(ErrorCode::NonFiniteInput, "ridge_lstsq: ridge must be positive");
    if (!h.allFinite() || !rhs.allFinite()) fail(ErrorCode::NonFiniteInput, "ridge_lstsq: non-finite input");
    if (h.rows() != rhs.rows()) {
        fail(ErrorCode::DimensionMismatch, "ridge_lstsq: " + std::to_string(h.rows()) + " rows vs rhs " +
                                               std::to_string(rhs.rows()));
    }
    return ridge_apply(ridge_factors(h), rhs, mu);
}

Var ridge_solve(Var h, Var rhs, double mu) {
    Tape& t = same_tape({h, rhs});
    if (!(mu > 0.0)) fail(ErrorCode::NonFiniteInput, "ridge_solve: ridge must be positive");
    if (!h.value().allFinite() || !rhs.value().allFinite()) {
        fail(ErrorCode::NonFiniteInput, "ridge_solve: non-finite input");
    }
    require_shape(h.rows() == rhs.rows(), "ridge_solve", h.value(), rhs.value());
    auto f = std::make_shared<RidgeFactors>(ridge_factors(h.value()));
    Matrix alpha = ridge_apply(*f, rhs.value(), mu);
    const int ih = h.id(), ir = rhs.id();
    return t.record(std::move(alpha), {h, rhs}, [f, ih, ir, mu](Tape& tp, int self) {
        // With M = H^T H + mu I and W = M^{-1} Gbar:
        //   dR = H W,  dH = E W^T - H W alpha^T,  E = R - H alpha.
        // Both products are expanded in the SVD basis so that 1/mu never appears.
        const Matrix g = tp.grad_mut(self);
        const Matrix& alpha = tp.value_of(self);
        const Matrix& rhs_v = tp.value_of(ir);
        const Vector den = f->s.array().square() + mu;
        const Vector inv = den.cwiseInverse();
        const Vector gain = f->s.cwiseProduct(inv);
        const Vector damp = mu * inv;

        const Matrix gv = f->v.transpose() * g;          // k x B
        const Matrix g_perp = g - f->v * gv;              // c x B
        const Matrix ru = f->u.transpose() * rhs_v;       // k x B
        const Matrix r_perp = rhs_v - f->u * ru;          // r x B

        const Matrix hw = f->u * (gain.asDiagonal() * gv);  // r x B
        if (tp.needs_grad(ir)) accumulate(tp, ir, hw);
        if (tp.needs_grad(ih)) {
            Matrix ew = f->u * (damp.asDiagonal() * ru) * (inv.asDiagonal() * gv).transpose() * f->v.transpose();
            ew += f->u * (inv.asDiagonal() * ru) * g_perp.transpose();
            ew += r_perp * (inv.asDiagonal() * gv).transpose() * f->v.transpose();
            accumulate(tp, ih, ew - hw * alpha.transpose());
        }
    });
}

Var col_norms(Var a) {
    Tape& t = same_tape({a});
    const int ia = a.id();
    Matrix out = a.value().colwise().norm();
    return t.record(std::move(out), {a}, [ia](Tape& tp, int self) {
        const Matrix& av = tp.value_of(ia);
        const Matrix& norms = tp.value_of(self);
        const Matrix& g = tp.grad_mut(self);
        Matrix ga = Matrix::Zero(av.rows(), av.cols());
        for (Index j = 0; j < av.cols(); ++j) {
            if (norms(0, j) > 0.0) ga.col(j) = (g(0, j) / norms(0, j)) * av.col(j);
        }
        accumulate(tp, ia, ga);
    });
}

Var sum(Var a) {
    Tape& t = same_tape({a});
    const int ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return t.record(std::move(out), {a}, [ia](Tape& tp, int self) {
        const Matrix& av = tp.value_of(ia);
        accumulate(tp, ia, Matrix::Constant(av.rows(), av.cols(), tp.grad_mut(self)(0, 0)));
    });
}

Var squared_norm(Var a) {
    Tape& t = same_tape({a});
    const int ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = a.value().squaredNorm();
    return t.record(std::move(out), {a}, [ia](Tape& tp, int self) {
        accumulate(tp, ia, 2.0 * tp.grad_mut(self)(0, 0) * tp.value_of(ia));
    });
}

}  // namespace kmhe::ad

namespace kmhe {

Mlp::Mlp(std::vector<Index> w, std::mt19937_64& rng, bool relu_input) : widths(std::move(w)), relu_on_input(relu_input) {
    if (widths.size() < 2) fail(ErrorCode::ConfigInvalid, "mlp: need at least input and output widths");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const Index fan_in = widths[l], fan_out = widths[l + 1];
        if (fan_in < 1 || fan_out < 1) fail(ErrorCode::ConfigInvalid, "mlp: widths must be positive");
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        Matrix wl(fan_out, fan_in);
        for (Index j = 0; j < fan_in; ++j) {
            for (Index i = 0; i < fan_out; ++i) wl(i, j) = dist(rng);
        }
        weights.push_back(std::move(wl));
        biases.push_back(Matrix::Zero(fan_out, 1));
    }
}

void Mlp::validate() const {
    if (widths.size() < 2 || weights.size() != widths.size() - 1 || biases.size() != weights.size()) {
        fail(ErrorCode::DimensionMismatch, "mlp: inconsistent layer count");
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].rows() != widths[l + 1] || weights[l].cols() != widths[l] || biases[l].rows() != widths[l + 1] ||
            biases[l].cols() != 1) {
            fail(ErrorCode::DimensionMismatch, "mlp: layer " + std::to_string(l) + " has incompatible shape");
        }
    }
}

Matrix Mlp::forward_batch(const Eigen::Ref<const Matrix>& x) const {
    if (x.rows() != input_width()) {
        fail(ErrorCode::DimensionMismatch, "mlp_forward: input has " + std::to_string(x.rows()) + " rows, expected " +
                                               std::to_string(input_width()));
    }
    Matrix a = relu_on_input ? Matrix(x.cwiseMax(0.0)) : Matrix(x);
    for (std::size_t l = 0; l < weights.size(); ++l) {
        Matrix next = weights[l] * a;
        next.colwise() += biases[l].col(0);
        if (l + 1 < weights.size()) next = next.cwiseMax(0.0);
        a = std::move(next);
    }
    return a;
}

Vector Mlp::forward(const Eigen::Ref<const Vector>& x) const { return forward_batch(x); }

MlpVars bind(ad::Tape& tape, const Mlp& net) {
    MlpVars vars;
    for (std::size_t l = 0; l < net.layers(); ++l) {
        vars.weights.push_back(tape.variable(net.weights[l]));
        vars.biases.push_back(tape.variable(net.biases[l]));
    }
    return vars;
}

ad::Var forward(const Mlp& net, const MlpVars& vars, ad::Var x) {
    if (x.rows() != net.input_width()) {
        fail(ErrorCode::DimensionMismatch, "mlp_forward: input has " + std::to_string(x.rows()) + " rows, expected " +
                                               std::to_string(net.input_width()));
    }
    ad::Var a = net.relu_on_input ? ad::relu(x) : x;
    for (std::size_t l = 0; l < net.layers(); ++l) {
        a = ad::affine(vars.weights[l], a, vars.biases[l]);
        if (l + 1 < net.layers()) a = ad::relu(a);
    }
    return a;
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state) {
    if (params.size() != grads.size()) fail(ErrorCode::ShapeMismatch, "adam: parameter/gradient count mismatch");
    if (state.m.empty()) {
        for (Matrix* p : params) {
            state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
            state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
    }
    if (state.m.size() != params.size()) fail(ErrorCode::ShapeMismatch, "adam: state has wrong parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& g = grads[i];
        if (g.rows() != params[i]->rows() || g.cols() != params[i]->cols() || state.m[i].rows() != g.rows() ||
            state.m[i].cols() != g.cols()) {
            fail(ErrorCode::ShapeMismatch, "adam: shape mismatch for parameter " + std::to_string(i));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
        const auto mhat = state.m[i].array() / c1;
        const auto vhat = state.v[i].array() / c2;
        params[i]->array() -= state.lr * mhat / (vhat.sqrt() + state.eps);
    }
}

nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
    const auto r = j.at("rows").get<Index>();
    const auto c = j.at("cols").get<Index>();
    const auto& data = j.at("data");
    if (static_cast<Index>(data.size()) != r) fail(ErrorCode::ParseError, "matrix json: row count mismatch");
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i) {
        const auto& row = data.at(static_cast<std::size_t>(i));
        if (static_cast<Index>(row.size()) != c) fail(ErrorCode::ParseError, "matrix json: column count mismatch");
        for (Index k = 0; k < c; ++k) m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
    }
    return m;
}

nlohmann::json Mlp::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < weights.size(); ++l) {
        layers.push_back({{"weight", matrix_to_json(weights[l])}, {"bias", matrix_to_json(biases[l])}});
    }
    return {{"widths", widths}, {"relu_on_input", relu_on_input}, {"layers", std::move(layers)}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
    Mlp net;
    net.widths = j.at("widths").get<std::vector<Index>>();
    net.relu_on_input = j.value("relu_on_input", false);
    for (const auto& layer : j.at("layers")) {
        net.weights.push_back(matrix_from_json(layer.at("weight")));
        net.biases.push_back(matrix_from_json(layer.at("bias")));
    }
    net.validate();
    return net;
}

}  // namespace kmhe
