#include "kmhe/plants.hpp"

#include "kmhe/errors.hpp"
#include "kmhe/netgrad.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace kmhe {

Vector poly2_step(const Poly2Params& p, const Vector& x, const Vector& u) {
    Vector next(2);
    next(0) = p.a * x(0) + p.b * u(0);
    next(1) = p.c * x(1) + p.d * x(0) * x(0);
    return next;
}

Vector rk4_step(const PlantSpec::Map& f, const Vector& x, const Vector& u, double h) {
    const Vector k1 = f(x, u);
    const Vector k2 = f(x + 0.5 * h * k1, u);
    const Vector k3 = f(x + 0.5 * h * k2, u);
    const Vector k4 = f(x + h * k3, u);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Vector PlantSpec::advance(const Vector& x, const Vector& u) const {
    if (discrete) return discrete(x, u);
    Vector state = x;
    const double h = dt / substeps;
    for (int i = 0; i < substeps; ++i) state = rk4_step(ode, state, u, h);
    return state;
}

void PlantSpec::validate() const {
    auto bad = [&](const std::string& what) { fail(ErrorCode::ConfigInvalid, "plant " + name + ": " + what); };
    if (!discrete && !ode) bad("no dynamics");
    if (C.rows() != n_y || C.cols() != n_x) bad("output matrix has wrong shape");
    if (x0.size() != n_x || x_lower.size() != n_x || x_upper.size() != n_x) bad("state vectors have wrong size");
    if (u_min.size() != n_u || u_max.size() != n_u) bad("input bounds have wrong size");
    if ((u_min.array() > u_max.array()).any()) bad("u_min > u_max");
    if ((x0.array() < x_lower.array()).any() || (x0.array() > x_upper.array()).any()) bad("x0 outside state box");
    if (substeps < 1 || !(dt > 0.0)) bad("invalid sampling");
}

namespace {

nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

nlohmann::json PlantSpec::manifest() const {
    return {{"name", name},          {"description", description}, {"n_x", n_x},
            {"n_u", n_u},            {"n_y", n_y},                 {"dt", dt},
            {"continuous", continuous()}, {"substeps", substeps},  {"C", matrix_to_json(C)},
            {"x0", vec_json(x0)},    {"x_lower", vec_json(x_lower)}, {"x_upper", vec_json(x_upper)},
            {"u_min", vec_json(u_min)}, {"u_max", vec_json(u_max)}, {"x_labels", x_labels},
            {"u_labels", u_labels},  {"y_labels", y_labels}};
}

PlantSpec make_poly2(const Poly2Params& params) {
    PlantSpec p;
    p.name = "poly2";
    p.description = "x1+ = a x1 + b u, x2+ = c x2 + d x1^2, y = x1 (exact Koopman lifting (x1, x2, x1^2))";
    p.n_x = 2;
    p.n_u = 1;
    p.n_y = 1;
    p.dt = 1.0;
    p.discrete = [params](const Vector& x, const Vector& u) { return poly2_step(params, x, u); };
    p.C = Matrix::Zero(1, 2);
    p.C(0, 0) = 1.0;
    const double inf = std::numeric_limits<double>::infinity();
    p.x_lower = Vector::Constant(2, -inf);
    p.x_upper = Vector::Constant(2, inf);
    p.x0 = Vector::Ones(2);
    p.u_min = Vector::Constant(1, -1.0);
    p.u_max = Vector::Constant(1, 1.0);
    p.x_labels = {"x1", "x2"};
    p.u_labels = {"u"};
    p.y_labels = {"x1"};
    return p;
}

PlantSpec make_cstr2() {
    // Exothermic first-order A -> B reaction, time in minutes.
    constexpr double q = 100.0, vol = 100.0, caf = 1.0, tf = 350.0;
    constexpr double k0 = 7.2e10, e_over_r = 8750.0, dh = -5.0e4, rho = 1000.0, cp = 0.239, ua = 5.0e4;
    PlantSpec p;
    p.name = "cstr2";
    p.description = "CSTR with Arrhenius kinetics: states (C_A [mol/L], T [K]), input coolant T_c [K], y = T";
    p.n_x = 2;
    p.n_u = 1;
    p.n_y = 1;
    p.dt = 0.1;
    p.substeps = 20;
    p.ode = [](const Vector& x, const Vector& u) {
        const double ca = x(0), temp = x(1), tc = u(0);
        const double rate = k0 * std::exp(-e_over_r / temp) * ca;
        Vector dx(2);
        dx(0) = q / vol * (caf - ca) - rate;
        dx(1) = q / vol * (tf - temp) + (-dh) / (rho * cp) * rate + ua / (vol * rho * cp) * (tc - temp);
        return dx;
    };
    p.C = Matrix::Zero(1, 2);
    p.C(0, 1) = 1.0;
    p.x_lower = Vector(2);
    p.x_lower << 0.0, 250.0;
    p.x_upper = Vector(2);
    p.x_upper << 1.0, 500.0;
    p.x0 = Vector(2);
    p.x0 << 0.5, 350.0;
    p.u_min = Vector::Constant(1, 295.0);
    p.u_max = Vector::Constant(1, 302.0);
    p.x_labels = {"C_A", "T"};
    p.u_labels = {"T_c"};
    p.y_labels = {"T"};
    return p;
}

PlantSpec make_bioreactor3() {
    // Monod chemostat, time in hours.
    constexpr double mu_max = 0.4, ks = 0.5, yxs = 0.5, ypx = 0.3;
    PlantSpec p;
    p.name = "bioreactor3";
    p.description =
        "Monod chemostat: states (X biomass, S substrate, P product) [g/L], inputs (D dilution [1/h], "
        "S_f feed [g/L]), y = (X, P)";
    p.n_x = 3;
    p.n_u = 2;
    p.n_y = 2;
    p.dt = 0.5;
    p.substeps = 20;
    p.ode = [](const Vector& x, const Vector& u) {
        const double bio = x(0), sub = x(1), prod = x(2), dil = u(0), feed = u(1);
        const double growth = mu_max * sub / (ks + sub);
        Vector dx(3);
        dx(0) = (growth - dil) * bio;
        dx(1) = dil * (feed - sub) - growth * bio / yxs;
        dx(2) = ypx * growth * bio - dil * prod;
        return dx;
    };
    p.C = Matrix::Zero(2, 3);
    p.C(0, 0) = 1.0;
    p.C(1, 2) = 1.0;
    p.x_lower = Vector::Zero(3);
    p.x_upper = Vector::Constant(3, 50.0);
    // Steady state at D = 0.15, S_f = 10.
    const double s_ss = ks * 0.15 / (mu_max - 0.15);
    const double x_ss = yxs * (10.0 - s_ss);
    p.x0 = Vector(3);
    p.x0 << x_ss, s_ss, ypx * x_ss;
    p.u_min = Vector(2);
    p.u_min << 0.05, 5.0;
    p.u_max = Vector(2);
    p.u_max << 0.25, 15.0;
    p.x_labels = {"X", "S", "P"};
    p.u_labels = {"D", "S_f"};
    p.y_labels = {"X", "P"};
    return p;
}

std::vector<PlantSpec> builtin_plants() { return {make_poly2(), make_cstr2(), make_bioreactor3()}; }

PlantSpec find_plant(const std::string& name, const nlohmann::json& params) {
    if (name == "poly2") {
        Poly2Params p;
        p.a = params.value("a", p.a);
        p.b = params.value("b", p.b);
        p.c = params.value("c", p.c);
        p.d = params.value("d", p.d);
        return make_poly2(p);
    }
    if (name == "cstr2") return make_cstr2();
    if (name == "bioreactor3") return make_bioreactor3();
    fail(ErrorCode::ConfigInvalid, "unknown plant '" + name + "'");
}

nlohmann::json plant_manifest() {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : builtin_plants()) out.push_back(p.manifest());
    return out;
}

Matrix excitation_signal(const Vector& u_min, const Vector& u_max, Index hold, Index length, std::uint64_t seed,
                         const Vector& input_noise_std) {
    const Index nu = u_min.size();
    if (hold < 1) fail(ErrorCode::ConfigInvalid, "excitation: hold must be >= 1");
    if (length < 0) fail(ErrorCode::ConfigInvalid, "excitation: negative length");
    if (u_max.size() != nu || input_noise_std.size() != nu) fail(ErrorCode::ConfigInvalid, "excitation: size mismatch");
    if ((u_min.array() > u_max.array()).any()) fail(ErrorCode::ConfigInvalid, "excitation: u_min > u_max");
    if ((input_noise_std.array() < 0.0).any()) fail(ErrorCode::ConfigInvalid, "excitation: negative noise std");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix u(nu, length);
    Vector level(nu);
    for (Index k = 0; k < length; ++k) {
        if (k % hold == 0) {
            for (Index i = 0; i < nu; ++i) level(i) = u_min(i) + (u_max(i) - u_min(i)) * unit(rng);
        }
        u.col(k) = level;
    }
    for (Index k = 0; k < length; ++k) {
        for (Index i = 0; i < nu; ++i) {
            if (input_noise_std(i) > 0.0) u(i, k) += input_noise_std(i) * normal(rng);
            u(i, k) = std::clamp(u(i, k), u_min(i), u_max(i));
        }
    }
    return u;
}

Matrix noise_stream(const Vector& std_dev, Index len, std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix noise(std_dev.size(), len);
    for (Index k = 0; k < len; ++k) {
        for (Index i = 0; i < std_dev.size(); ++i) noise(i, k) = std_dev(i) * normal(rng);
    }
    return noise;
}

void SimulationResult::require_finite() const {
    if (diverged) fail(ErrorCode::NonFiniteState, diagnostic);
}

SimulationResult simulate(const PlantSpec& plant, const Vector& x0, const Matrix& u_seq,
                          const Vector& state_noise_std, const Vector& output_noise_std, std::uint64_t seed) {
    if (x0.size() != plant.n_x || !x0.allFinite()) fail(ErrorCode::DimensionMismatch, "simulate: bad initial state");
    if (u_seq.rows() != plant.n_u) fail(ErrorCode::DimensionMismatch, "simulate: input rows != n_u");
    if (state_noise_std.size() != plant.n_x || output_noise_std.size() != plant.n_y) {
        fail(ErrorCode::DimensionMismatch, "simulate: noise std size mismatch");
    }
    SimulationResult res;
    const Index steps = u_seq.cols();
    Matrix u = u_seq;
    for (Index k = 0; k < steps; ++k) {
        for (Index i = 0; i < plant.n_u; ++i) {
            const double clamped = std::clamp(u(i, k), plant.u_min(i), plant.u_max(i));
            if (clamped != u(i, k)) ++res.clamped_inputs;
            u(i, k) = clamped;
        }
    }
    Matrix x(plant.n_x, steps + 1);
    x.col(0) = x0;
    Index produced = steps + 1;
    for (Index k = 0; k < steps; ++k) {
        Vector next = plant.advance(x.col(k), u.col(k));
        if (!next.allFinite()) {
            res.diverged = true;
            res.diagnostic = "simulate(" + plant.name + "): non-finite state at step " + std::to_string(k + 1);
            produced = k + 1;
            break;
        }
        x.col(k + 1) = next;
    }
    x.conservativeResize(Eigen::NoChange, produced);
    u.conservativeResize(Eigen::NoChange, produced - 1);
    const Matrix y = plant.C * x;

    res.state_noise = noise_stream(state_noise_std, produced, seed, 0);
    res.output_noise = noise_stream(output_noise_std, produced, seed, 1);

    res.clean.dt = plant.dt;
    res.clean.u = u;
    res.clean.x = x;
    res.clean.y = y;
    res.clean.u_labels = plant.u_labels;
    res.clean.x_labels = plant.x_labels;
    res.clean.y_labels = plant.y_labels;
    res.noisy = res.clean;
    res.noisy.x = x + res.state_noise;
    res.noisy.y = y + res.output_noise;
    return res;
}

}  // namespace kmhe
