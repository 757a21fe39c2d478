#include "kmhe/errors.hpp"
#include "kmhe/trajectory.hpp"
#include "support.hpp"

#include <sstream>

using namespace kmhe;

namespace {

Matrix row(std::initializer_list<double> values) {
    Matrix m(1, static_cast<Index>(values.size()));
    Index i = 0;
    for (double v : values) m(0, i++) = v;
    return m;
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::ParseError;
}

// Straight-line Hankel and SVD rank, independent of the library routines.
Index oracle_rank(const Matrix& seq, Index depth) {
    const Index m = seq.rows(), cols = seq.cols() - depth + 1;
    Matrix h(depth * m, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index d = 0; d < depth; ++d) {
            for (Index c = 0; c < m; ++c) h(d * m + c, j) = seq(c, j + d);
        }
    }
    const Vector s = Eigen::BDCSVD<Matrix>(h).singularValues();
    Index r = 0;
    for (Index i = 0; i < s.size(); ++i) r += s(i) > 1e-10 * s(0) ? 1 : 0;
    return r;
}

}  // namespace

TEST_CASE("hankel of a scalar sequence") {
    Matrix expected(2, 3);
    expected << 1, 2, 3, 2, 3, 4;
    CHECK(hankel(row({1, 2, 3, 4}), 2) == expected);
}

TEST_CASE("hankel of vector samples with depth one") {
    Matrix seq(2, 3);
    seq << 1, 3, 5, 2, 4, 6;
    CHECK(hankel(seq, 1) == seq);
}

TEST_CASE("hankel at the length boundary has one column") {
    Matrix expected(3, 1);
    expected << 1, 2, 3;
    CHECK(hankel(row({1, 2, 3}), 3) == expected);
}

TEST_CASE("hankel errors") {
    CHECK(code_of([] { hankel(row({1, 2}), 3); }) == ErrorCode::DepthExceedsLength);
    CHECK(code_of([] { hankel(Matrix(1, 0), 1); }) == ErrorCode::EmptySequence);
}

TEST_CASE("hankel_cols restricts to leading columns") {
    const Matrix seq = row({1, 2, 3, 4, 5, 6});
    CHECK(hankel_cols(seq, 2, 3) == hankel(seq, 2).leftCols(3));
    CHECK(hankel_cols(seq, 0, 4).rows() == 0);
    CHECK(hankel_cols(seq, 0, 4).cols() == 4);
}

TEST_CASE("kron_input ordering") {
    Vector p(1), u(2);
    p << 2;
    u << 1, 3;
    CHECK(kron_input(p, u) == Vector((Vector(2) << 2, 6).finished()));
    Vector p2(2), u2(2);
    p2 << 2, 3;
    u2 << 1, -1;
    CHECK(kron_input(p2, u2) == Vector((Vector(4) << 2, -2, 3, -3).finished()));
    CHECK(kron_input(Vector::Zero(2), Vector((Vector(2) << 5, 7).finished())) == Vector::Zero(4));
}

TEST_CASE("kron_input is bilinear in p") {
    std::mt19937_64 rng(3);
    const Vector p = test::random_matrix(3, 1, rng);
    const Vector u = test::random_matrix(2, 1, rng);
    CHECK((kron_input(2.5 * p, u) - 2.5 * kron_input(p, u)).norm() < 1e-14);
    const Matrix ps = test::random_matrix(3, 5, rng), us = test::random_matrix(2, 5, rng);
    const Matrix v = kron_columns(ps, us);
    for (Index k = 0; k < 5; ++k) CHECK(v.col(k) == kron_input(ps.col(k), us.col(k)));
}

TEST_CASE("persistency of excitation") {
    CHECK_FALSE(is_persistently_exciting(row({1, 1, 1, 1, 1}), 2).exciting);
    CHECK(is_persistently_exciting(row({1, 1, 1, 1, 1}), 2).rank == 1);
    CHECK_FALSE(is_persistently_exciting(Matrix::Zero(1, 20), 3).exciting);

    std::mt19937_64 rng(17);
    const Matrix seq = test::random_matrix(1, 50, rng, 0.0, 1.0);
    const auto report = is_persistently_exciting(seq, 4);
    CHECK(report.rank == oracle_rank(seq, 4));
    CHECK(report.exciting);
    CHECK(report.required == 4);
}

TEST_CASE("PE is monotone in the order and rank is bounded") {
    std::mt19937_64 rng(5);
    const Matrix seq = test::random_matrix(2, 30, rng);
    for (Index n = 1; n <= 10; ++n) {
        const auto r = is_persistently_exciting(seq, n);
        CHECK(r.rank <= std::min<Index>(2 * n, 30 - n + 1));
        if (r.exciting && n > 1) CHECK(is_persistently_exciting(seq, n - 1).exciting);
    }
}

TEST_CASE("window extraction") {
    Trajectory t;
    t.x = row({1, 2, 3});
    CHECK(window(t, Channel::x, 0, 1) == Vector((Vector(2) << 1, 2).finished()));
    CHECK(window(t, Channel::x, 2, 2) == Vector::Constant(1, 3.0));
    t.x = row({1, 2, 3, 4});
    CHECK(window(t, Channel::x, 1, 3) == Vector((Vector(3) << 2, 3, 4).finished()));
    CHECK(code_of([&] { window(t, Channel::x, 2, 4); }) == ErrorCode::IndexOutOfRange);
    CHECK(code_of([&] { window(t, Channel::x, 3, 2); }) == ErrorCode::IndexOutOfRange);
}

TEST_CASE("hankel columns equal stacked windows") {
    std::mt19937_64 rng(9);
    const Matrix seq = test::random_matrix(3, 12, rng);
    const Matrix h = hankel(seq, 4);
    for (Index j = 0; j < h.cols(); ++j) CHECK(h.col(j) == stack_window(seq, j, j + 3));
}

TEST_CASE("trajectory validation") {
    Trajectory t;
    t.u = Matrix::Zero(1, 4);
    t.x = Matrix::Zero(2, 5);
    t.y = Matrix::Zero(1, 5);
    CHECK_NOTHROW(t.validate());
    t.y = Matrix::Zero(1, 4);
    CHECK(code_of([&] { t.validate(); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("trajectory CSV round trip is bit exact") {
    std::mt19937_64 rng(21);
    Trajectory t;
    t.dt = 0.1;
    t.u = test::random_matrix(2, 6, rng, -1e3, 1e3);
    t.x = test::random_matrix(3, 7, rng, -1e-7, 1e-7);
    t.y = test::random_matrix(1, 7, rng);
    t.default_labels();
    std::stringstream ss;
    write_trajectory_csv(ss, t, "hello");
    std::string header;
    std::getline(ss, header);
    CHECK(header == "# hello");
    std::getline(ss, header);
    CHECK(header == "t,u1,u2,x1,x2,x3,y1");
    ss.seekg(0);
    std::string comment;
    const Trajectory back = read_trajectory_csv(ss, &comment);
    CHECK(comment == "hello");
    CHECK(back.u == t.u);
    CHECK(back.x == t.x);
    CHECK(back.y == t.y);
    CHECK(back.dt == doctest::Approx(0.1));
}

TEST_CASE("CSV parse errors") {
    std::stringstream bad("t,x1\n0,abc\n");
    CHECK(code_of([&] { read_trajectory_csv(bad); }) == ErrorCode::ParseError);
    CHECK(code_of([] { read_trajectory_csv(std::string("/nonexistent/file.csv")); }) == ErrorCode::MissingArtifact);
}
