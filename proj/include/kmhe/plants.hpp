#pragma once

#include "kmhe/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace kmhe {

/// Parameters of the polynomial cascade with an exact three-dimensional Koopman lifting.
struct Poly2Params {
    double a = 0.9;
    double b = 0.5;
    double c = 0.8;
    double d = 0.4;
};

/// x1+ = a x1 + b u, x2+ = c x2 + d x1^2.
Vector poly2_step(const Poly2Params& p, const Vector& x, const Vector& u);

/**
 * Benchmark plant: either a discrete map or an ODE integrated with fixed-step
 * RK4 (`substeps` steps per sampling period).
 */
struct PlantSpec {
    using Map = std::function<Vector(const Vector& x, const Vector& u)>;

    std::string name;
    std::string description;
    Index n_x = 0;
    Index n_u = 0;
    Index n_y = 0;
    double dt = 1.0;
    Map discrete;  // set for discrete-time plants
    Map ode;       // set for continuous-time plants
    int substeps = 1;
    Matrix C;
    Vector x_lower;
    Vector x_upper;
    Vector x0;
    Vector u_min;
    Vector u_max;
    std::vector<std::string> x_labels;
    std::vector<std::string> u_labels;
    std::vector<std::string> y_labels;

    /// One sampling period.
    Vector advance(const Vector& x, const Vector& u) const;
    Vector output(const Vector& x) const { return C * x; }
    bool continuous() const { return static_cast<bool>(ode); }
    void validate() const;
    nlohmann::json manifest() const;
};

/// Classical fourth-order Runge-Kutta step of length h.
Vector rk4_step(const PlantSpec::Map& f, const Vector& x, const Vector& u, double h);

PlantSpec make_poly2(const Poly2Params& params = {});
PlantSpec make_cstr2();
PlantSpec make_bioreactor3();

/// The catalogue: poly2, cstr2, bioreactor3.
std::vector<PlantSpec> builtin_plants();
PlantSpec find_plant(const std::string& name, const nlohmann::json& params = nlohmann::json::object());
nlohmann::json plant_manifest();

/**
 * Piecewise-constant uniform excitation held for `hold` samples, with
 * additive Gaussian noise, clamped to [u_min, u_max]. Returns n_u x length.
 */
Matrix excitation_signal(const Vector& u_min, const Vector& u_max, Index hold, Index length, std::uint64_t seed,
                         const Vector& input_noise_std);

struct SimulationResult {
    Trajectory clean;  // u, x, y noise-free
    Trajectory noisy;  // same u, measured x and y
    Matrix state_noise;
    Matrix output_noise;
    Index clamped_inputs = 0;
    bool diverged = false;
    std::string diagnostic;

    /// Throws NonFiniteState when the rollout diverged.
    void require_finite() const;
};

/**
 * Rolls out x_{k+1} = f(x_k, u_k) for every input column and records
 * y_k = C x_k. Noise is Gaussian, seeded, and added separately to states and outputs.
 */
SimulationResult simulate(const PlantSpec& plant, const Vector& x0, const Matrix& u_seq,
                          const Vector& state_noise_std, const Vector& output_noise_std, std::uint64_t seed);

/// Gaussian noise stream used by simulate (n rows x len cols) for `stream` 0 (state) or 1 (output).
Matrix noise_stream(const Vector& std_dev, Index len, std::uint64_t seed, std::uint64_t stream);

}  // namespace kmhe
