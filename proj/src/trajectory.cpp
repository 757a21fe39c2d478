#include "kmhe/trajectory.hpp"

#include "kmhe/errors.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace kmhe {

Index Trajectory::length() const { return std::max({u.cols(), x.cols(), y.cols()}); }

void Trajectory::validate() const {
    const Index states = std::max(x.cols(), y.cols());
    if (has_x() && has_y() && x.cols() != y.cols()) {
        fail(ErrorCode::DimensionMismatch, "trajectory: state and output lengths differ (" +
                                               std::to_string(x.cols()) + " vs " + std::to_string(y.cols()) + ")");
    }
    if (has_u() && (has_x() || has_y())) {
        if (u.cols() != states && u.cols() + 1 != states) {
            fail(ErrorCode::DimensionMismatch, "trajectory: input length " + std::to_string(u.cols()) +
                                                   " incompatible with " + std::to_string(states) + " states");
        }
    }
    if (!(dt > 0.0) || !std::isfinite(dt)) fail(ErrorCode::DimensionMismatch, "trajectory: dt must be positive");
}

void Trajectory::default_labels() {
    auto fill = [](std::vector<std::string>& labels, Index n, const char* prefix) {
        if (static_cast<Index>(labels.size()) == n) return;
        labels.clear();
        for (Index i = 0; i < n; ++i) labels.push_back(prefix + std::to_string(i + 1));
    };
    fill(u_labels, n_u(), "u");
    fill(x_labels, n_x(), "x");
    fill(y_labels, n_y(), "y");
}

Matrix hankel(const Eigen::Ref<const Matrix>& seq, Index depth) {
    const Index m = seq.rows();
    const Index len = seq.cols();
    if (len == 0) fail(ErrorCode::EmptySequence, "hankel: empty sequence");
    if (depth < 1 || depth > len) {
        fail(ErrorCode::DepthExceedsLength,
             "hankel: depth " + std::to_string(depth) + " exceeds length " + std::to_string(len));
    }
    const Index cols = len - depth + 1;
    Matrix h(depth * m, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < depth; ++i) h.block(i * m, j, m, 1) = seq.col(j + i);
    }
    return h;
}

Matrix hankel_cols(const Eigen::Ref<const Matrix>& seq, Index depth, Index ncols) {
    if (depth == 0) return Matrix(0, ncols);
    const Index needed = ncols + depth - 1;
    if (ncols < 1 || needed > seq.cols()) {
        fail(ErrorCode::DepthExceedsLength, "hankel: " + std::to_string(ncols) + " columns of depth " +
                                                std::to_string(depth) + " need " + std::to_string(needed) +
                                                " samples, have " + std::to_string(seq.cols()));
    }
    return hankel(seq.leftCols(needed), depth);
}

Vector stack_window(const Eigen::Ref<const Matrix>& seq, Index from, Index to) {
    if (from < 0 || to < from || to >= seq.cols()) {
        fail(ErrorCode::IndexOutOfRange, "window [" + std::to_string(from) + "," + std::to_string(to) +
                                             "] outside sequence of length " + std::to_string(seq.cols()));
    }
    const Index m = seq.rows();
    Vector out((to - from + 1) * m);
    for (Index k = from; k <= to; ++k) out.segment((k - from) * m, m) = seq.col(k);
    return out;
}

Vector window(const Trajectory& traj, Channel channel, Index from, Index to) {
    switch (channel) {
        case Channel::u: return stack_window(traj.u, from, to);
        case Channel::x: return stack_window(traj.x, from, to);
        case Channel::y: return stack_window(traj.y, from, to);
    }
    fail(ErrorCode::IndexOutOfRange, "window: unknown channel");
}

Vector kron_input(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& u) {
    Vector v(p.size() * u.size());
    for (Index i = 0; i < p.size(); ++i) v.segment(i * u.size(), u.size()) = p(i) * u;
    return v;
}

Matrix kron_columns(const Eigen::Ref<const Matrix>& p, const Eigen::Ref<const Matrix>& u) {
    if (p.cols() != u.cols()) {
        fail(ErrorCode::DimensionMismatch, "kron_columns: " + std::to_string(p.cols()) + " vs " +
                                               std::to_string(u.cols()) + " samples");
    }
    Matrix v(p.rows() * u.rows(), p.cols());
    for (Index k = 0; k < p.cols(); ++k) {
        for (Index i = 0; i < p.rows(); ++i) v.block(i * u.rows(), k, u.rows(), 1) = p(i, k) * u.col(k);
    }
    return v;
}

Index numerical_rank(const Eigen::Ref<const Matrix>& m, double rel_tol) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(m);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) return 0;
    Index rank = 0;
    for (Index i = 0; i < s.size(); ++i) {
        if (s(i) > rel_tol * s(0)) ++rank;
    }
    return rank;
}

ExcitationReport is_persistently_exciting(const Eigen::Ref<const Matrix>& seq, Index order, double rank_tol) {
    ExcitationReport report;
    report.required = order * seq.rows();
    report.rank = numerical_rank(hankel(seq, order), rank_tol);
    report.exciting = report.rank == report.required;
    return report;
}

std::string format_double(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const std::string& comment) {
    traj.validate();
    if (!comment.empty()) os << "# " << comment << '\n';
    os << 't';
    for (Index i = 0; i < traj.n_u(); ++i) os << ",u" << i + 1;
    for (Index i = 0; i < traj.n_x(); ++i) os << ",x" << i + 1;
    for (Index i = 0; i < traj.n_y(); ++i) os << ",y" << i + 1;
    os << '\n';
    const Index len = traj.length();
    for (Index k = 0; k < len; ++k) {
        os << format_double(static_cast<double>(k) * traj.dt);
        for (Index i = 0; i < traj.n_u(); ++i) {
            os << ',';
            if (k < traj.u.cols()) os << format_double(traj.u(i, k));
        }
        for (Index i = 0; i < traj.n_x(); ++i) os << ',' << format_double(traj.x(i, k));
        for (Index i = 0; i < traj.n_y(); ++i) os << ',' << format_double(traj.y(i, k));
        os << '\n';
    }
}

void write_trajectory_csv(const std::string& path, const Trajectory& traj, const std::string& comment) {
    std::ofstream os(path);
    if (!os) fail(ErrorCode::MissingArtifact, "cannot open " + path + " for writing");
    write_trajectory_csv(os, traj, comment);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_cell(const std::string& cell, Index row) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0') {
        fail(ErrorCode::ParseError, "trajectory csv: bad number '" + cell + "' in row " + std::to_string(row));
    }
    return v;
}

}  // namespace

Trajectory read_trajectory_csv(std::istream& is, std::string* comment) {
    std::string line;
    std::vector<std::string> header;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (comment) *comment = line.size() > 2 ? line.substr(2) : std::string{};
            continue;
        }
        header = split_csv_line(line);
        break;
    }
    if (header.empty() || header[0] != "t") fail(ErrorCode::ParseError, "trajectory csv: missing `t` header");

    Index nu = 0, nx = 0, ny = 0;
    for (std::size_t i = 1; i < header.size(); ++i) {
        const char c = header[i].empty() ? '?' : header[i][0];
        if (c == 'u' && nx == 0 && ny == 0) ++nu;
        else if (c == 'x' && ny == 0) ++nx;
        else if (c == 'y') ++ny;
        else fail(ErrorCode::ParseError, "trajectory csv: unexpected column '" + header[i] + "'");
    }

    std::vector<double> times;
    std::vector<std::vector<double>> urows, xrows, yrows;
    Index row = 0;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            fail(ErrorCode::ParseError, "trajectory csv: row " + std::to_string(row) + " has " +
                                            std::to_string(cells.size()) + " cells, expected " +
                                            std::to_string(header.size()));
        }
        times.push_back(parse_cell(cells[0], row));
        std::vector<double> uv;
        bool u_missing = false;
        for (Index i = 0; i < nu; ++i) {
            const auto& c = cells[1 + i];
            if (c.empty()) u_missing = true;
            else uv.push_back(parse_cell(c, row));
        }
        if (!u_missing && nu > 0) urows.push_back(std::move(uv));
        std::vector<double> xv, yv;
        for (Index i = 0; i < nx; ++i) xv.push_back(parse_cell(cells[1 + nu + i], row));
        for (Index i = 0; i < ny; ++i) yv.push_back(parse_cell(cells[1 + nu + nx + i], row));
        if (nx > 0) xrows.push_back(std::move(xv));
        if (ny > 0) yrows.push_back(std::move(yv));
        ++row;
    }

    auto to_matrix = [](const std::vector<std::vector<double>>& rows, Index n) {
        Matrix m(n, static_cast<Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            for (Index i = 0; i < n; ++i) m(i, static_cast<Index>(k)) = rows[k][static_cast<std::size_t>(i)];
        }
        return m;
    };
    Trajectory traj;
    traj.u = to_matrix(urows, nu);
    traj.x = to_matrix(xrows, nx);
    traj.y = to_matrix(yrows, ny);
    if (times.size() >= 2) traj.dt = times[1] - times[0];
    traj.default_labels();
    traj.validate();
    return traj;
}

Trajectory read_trajectory_csv(const std::string& path, std::string* comment) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::MissingArtifact, "cannot open " + path);
    return read_trajectory_csv(is, comment);
}

}  // namespace kmhe
