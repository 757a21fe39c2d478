#pragma once

#include "kmhe/lifting.hpp"
#include "kmhe/mhe.hpp"
#include "kmhe/plants.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace kmhe {

struct DataConfig {
    Index train_count = 4;
    Index val_count = 2;
    Index train_length = 500;
    Index offline_length = 3000;
    Index online_length = 400;
    Index hold = 40;
    double input_noise = 0.01;    // relative to |u_max| per channel
    double state_noise = 1e-4;    // relative to |x0| per channel
    double output_noise = 1e-4;   // relative to |y0| per channel
    double online_output_noise = -1.0;  // < 0: same as output_noise
};

struct Seeds {
    std::uint64_t data = 1;
    std::uint64_t train = 1;
};

enum class LiftingKind { learned, exact, identity };

/// Parsed experiment configuration plus the raw JSON it came from.
struct ExperimentConfig {
    nlohmann::json raw;
    PlantSpec plant;
    nlohmann::json plant_params;
    DataConfig data;
    Seeds seeds;
    LiftingKind lifting = LiftingKind::learned;
    int restarts = 1;  // training seeds tried: train, train+1, ...
    TrainingConfig training;
    MheConfig mhe;
    bool baseline_mode = false;
    Index rmse_from = 0;
    std::string output_dir = "out";

    /// Absolute noise levels derived from the relative settings.
    Vector state_noise_std() const;
    Vector output_noise_std() const;
    Vector online_output_noise_std() const;

    /// Stage hashes: data <- plant/data/seeds; model <- data + lifting; stack <- model + horizon.
    std::string data_hash() const;
    std::string model_hash() const;
    std::string stack_hash() const;
};

/// Builds a configuration from JSON (missing keys take defaults). Throws ConfigInvalid.
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Applies one "dotted.key=value" override; the value is parsed as JSON when possible.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads the file (empty path: defaults), applies overrides, seed and output directory.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                             const std::optional<std::uint64_t>& seed, const std::optional<std::string>& out_dir);

std::string hash_text(const std::string& text);

/// Lifting restored from a model artifact.
std::unique_ptr<LiftingMap> lifting_from_json(const nlohmann::json& model);

struct SimulateOutput {
    std::vector<Trajectory> train, val;
    Trajectory offline;
    Trajectory online;        // u and noisy y
    Trajectory online_truth;  // noise-free u, x, y
};

struct TrainOutput {
    nlohmann::json model;
    std::vector<HistoryRow> history;
    double best_val = 0.0;
    std::uint64_t best_seed = 0;
};

struct EstimateOutput {
    EstimationResult result;
};

struct CompareOutput {
    EstimationResult proposed;
    EstimationResult baseline;
    nlohmann::json report;
};

SimulateOutput cmd_simulate(const ExperimentConfig& cfg);
TrainOutput cmd_train(const ExperimentConfig& cfg);
HankelStack cmd_build_stack(const ExperimentConfig& cfg);
EstimateOutput cmd_estimate(const ExperimentConfig& cfg);
CompareOutput cmd_compare(const ExperimentConfig& cfg);

}  // namespace kmhe
