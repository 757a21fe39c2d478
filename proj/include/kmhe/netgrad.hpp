#pragma once

#include "kmhe/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace kmhe::ad {

class Tape;

/// Handle to a matrix-valued node recorded on a Tape.
class Var {
   public:
    Var() = default;

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

   private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

/**
 * Reverse-mode differentiation tape over dense matrices.
 *
 * Nodes are appended in evaluation order, so a reverse sweep over the node
 * list is a valid topological order. Constants carry no gradient.
 */
class Tape {
   public:
    using Backward = std::function<void(Tape&, int self)>;

    Var constant(Matrix value);
    Var variable(Matrix value);

    /// Records a node computed from `inputs`; `backward` accumulates into input grads.
    Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);

    /// Seeds d(out)/d(out) = 1 and sweeps. `out` must be 1x1.
    void backward(Var out);

    const Matrix& value(Var v) const { return nodes_[check(v)].value; }
    const Matrix& grad(Var v) const { return nodes_[check(v)].grad; }
    Matrix& grad_mut(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    const Matrix& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    std::size_t size() const { return nodes_.size(); }

   private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        bool needs_grad = false;
    };

    std::size_t check(Var v) const;

    std::vector<Node> nodes_;
};

// Primitives. All operands must live on the same tape.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double c);
/// W*X + b*1^T for a column bias b.
Var affine(Var w, Var x, Var b);
Var relu(Var a);
/// Column-wise Kronecker product: column k is p_k ⊗ u_k.
Var kron_cols(Var p, Var u);
/// Block Hankel matrix of a column-sample sequence.
Var hankel(Var seq, Index depth);
Var vstack(std::initializer_list<Var> parts);
Var vstack(std::span<const Var> parts);
/// Column slice [first, first+count).
Var cols(Var a, Index first, Index count);
/// Column-major reshape (time-major stacking of consecutive samples).
Var reshape(Var a, Index rows, Index cols);
/// argmin_A ||H A - R||_F^2 + mu ||A||_F^2, column by column.
Var ridge_solve(Var h, Var rhs, double mu);
/// 1 x cols row of Euclidean column norms (zero subgradient at the origin).
Var col_norms(Var a);
/// Sum of all entries as a 1x1 node.
Var sum(Var a);
/// Squared Frobenius norm as a 1x1 node.
Var squared_norm(Var a);

/// Closed-form ridge least squares shared by the tape node and plain callers.
Matrix ridge_lstsq(const Eigen::Ref<const Matrix>& h, const Eigen::Ref<const Matrix>& rhs, double mu);

}  // namespace kmhe::ad

namespace kmhe {

/// Fully connected ReLU network. Affine layers; ReLU after every non-output
/// layer and, when `relu_on_input` is set, also on the raw input.
struct Mlp {
    std::vector<Index> widths;
    std::vector<Matrix> weights;
    std::vector<Matrix> biases;  // column matrices
    bool relu_on_input = false;

    Mlp() = default;
    /// Glorot-uniform weights, zero biases.
    Mlp(std::vector<Index> widths, std::mt19937_64& rng, bool relu_on_input = false);

    Index input_width() const { return widths.front(); }
    Index output_width() const { return widths.back(); }
    std::size_t layers() const { return weights.size(); }

    Vector forward(const Eigen::Ref<const Vector>& x) const;
    /// Batched forward over columns.
    Matrix forward_batch(const Eigen::Ref<const Matrix>& x) const;

    void validate() const;

    nlohmann::json to_json() const;
    static Mlp from_json(const nlohmann::json& j);
};

/// Tape handles for the parameters of one Mlp.
struct MlpVars {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
};

MlpVars bind(ad::Tape& tape, const Mlp& net);
ad::Var forward(const Mlp& net, const MlpVars& vars, ad::Var x);

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

/// One Adam update with bias correction. Moments are lazily shaped on the first call.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace kmhe
