#pragma once

#include "kmhe/trajectory.hpp"

namespace kmhe {

/**
 * A lifting z = psi(x), a scheduling map p = lambda(z, u) and a linear
 * reconstruction x = D z. Implemented by the learned networks, the exact
 * benchmark surrogate and the identity lifting of the linear baseline.
 */
class LiftingMap {
   public:
    virtual ~LiftingMap() = default;

    virtual Index n_x() const = 0;
    virtual Index n_z() const = 0;
    virtual Index n_u() const = 0;
    virtual Index n_p() const = 0;

    virtual Vector lift(const Vector& x) const = 0;
    virtual Vector schedule(const Vector& z, const Vector& u) const = 0;
    virtual const Matrix& reconstruction() const = 0;

    /// Column-wise lift; override when a batched evaluation is cheaper.
    virtual Matrix lift_batch(const Matrix& x) const {
        Matrix z(n_z(), x.cols());
        for (Index k = 0; k < x.cols(); ++k) z.col(k) = lift(x.col(k));
        return z;
    }
    virtual Matrix schedule_batch(const Matrix& z, const Matrix& u) const {
        Matrix p(n_p(), z.cols());
        for (Index k = 0; k < z.cols(); ++k) p.col(k) = schedule(z.col(k), u.col(k));
        return p;
    }
};

/// z = x, D = I, no scheduling parameter (the linear data-enabled baseline).
class IdentityLifting final : public LiftingMap {
   public:
    IdentityLifting(Index n_x, Index n_u) : n_x_(n_x), n_u_(n_u), d_(Matrix::Identity(n_x, n_x)) {}

    Index n_x() const override { return n_x_; }
    Index n_z() const override { return n_x_; }
    Index n_u() const override { return n_u_; }
    Index n_p() const override { return 0; }

    Vector lift(const Vector& x) const override { return x; }
    Vector schedule(const Vector&, const Vector&) const override { return Vector(0); }
    const Matrix& reconstruction() const override { return d_; }
    Matrix lift_batch(const Matrix& x) const override { return x; }

   private:
    Index n_x_;
    Index n_u_;
    Matrix d_;
};

}  // namespace kmhe
