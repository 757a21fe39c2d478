#include "kmhe/pipeline.hpp"

#include "kmhe/errors.hpp"
#include "kmhe/surrogate.hpp"
#include "kmhe/svg.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <set>
#include <sstream>

namespace kmhe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream ids for seed derivation; each dataset gets its own input and noise streams.
enum Stream : std::uint64_t {
    kTrainInput = 1,
    kTrainNoise,
    kValInput,
    kValNoise,
    kOfflineInput,
    kOfflineNoise,
    kOnlineInput,
    kOnlineNoise,
};

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
    return splitmix(splitmix(base ^ (stream << 48)) + index);
}

const std::set<std::string>& top_level_keys() {
    static const std::set<std::string> keys{"plant", "data", "seeds", "horizon", "lifting", "mhe", "output_dir"};
    return keys;
}

json data_to_json(const DataConfig& d) {
    return {{"train_count", d.train_count},       {"val_count", d.val_count},
            {"train_length", d.train_length},     {"offline_length", d.offline_length},
            {"online_length", d.online_length},   {"hold", d.hold},
            {"input_noise", d.input_noise},       {"state_noise", d.state_noise},
            {"output_noise", d.output_noise},     {"online_output_noise", d.online_output_noise}};
}

DataConfig data_from_json(const json& j) {
    DataConfig d;
    d.train_count = j.value("train_count", d.train_count);
    d.val_count = j.value("val_count", d.val_count);
    d.train_length = j.value("train_length", d.train_length);
    d.offline_length = j.value("offline_length", d.offline_length);
    d.online_length = j.value("online_length", d.online_length);
    d.hold = j.value("hold", d.hold);
    d.input_noise = j.value("input_noise", d.input_noise);
    d.state_noise = j.value("state_noise", d.state_noise);
    d.output_noise = j.value("output_noise", d.output_noise);
    d.online_output_noise = j.value("online_output_noise", d.online_output_noise);
    return d;
}

std::string kind_name(LiftingKind k) {
    switch (k) {
        case LiftingKind::learned: return "learned";
        case LiftingKind::exact: return "exact";
        case LiftingKind::identity: return "identity";
    }
    return "learned";
}

Vector relative_std(const Vector& reference, double rel) {
    Vector s = reference.cwiseAbs();
    for (Index i = 0; i < s.size(); ++i) {
        if (s(i) == 0.0) s(i) = 1.0;
    }
    return rel * s;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorCode::MissingArtifact, "cannot write " + path.string());
    os << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::MissingArtifact, "missing artifact " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
}

std::string hash_comment(const std::string& hash) { return "config_hash=" + hash; }

Trajectory read_dataset(const fs::path& path, const std::string& expected_hash) {
    if (!fs::exists(path)) fail(ErrorCode::MissingArtifact, "missing artifact " + path.string());
    std::string comment;
    Trajectory t = read_trajectory_csv(path.string(), &comment);
    if (comment.find(hash_comment(expected_hash)) == std::string::npos) {
        fail(ErrorCode::ConfigInvalid, path.string() + " was generated with a different data configuration");
    }
    return t;
}

void write_dataset(const fs::path& path, const Trajectory& traj, const std::string& hash) {
    fs::create_directories(path.parent_path());
    write_trajectory_csv(path.string(), traj, hash_comment(hash));
}

fs::path data_dir(const ExperimentConfig& c) { return fs::path(c.output_dir) / "data"; }
fs::path model_path(const ExperimentConfig& c) { return fs::path(c.output_dir) / "model" / "model.json"; }
fs::path stack_path(const ExperimentConfig& c) { return fs::path(c.output_dir) / "stack" / "stack.json"; }

json load_model(const ExperimentConfig& cfg) {
    json model = read_json(model_path(cfg));
    if (model.value("config_hash", std::string{}) != cfg.model_hash()) {
        fail(ErrorCode::ConfigInvalid, "model artifact does not match the configuration (rerun train)");
    }
    return model;
}

std::vector<Trajectory> read_sets(const ExperimentConfig& cfg, const std::string& prefix, Index count) {
    std::vector<Trajectory> out;
    for (Index i = 0; i < count; ++i) {
        out.push_back(read_dataset(data_dir(cfg) / (prefix + "_" + std::to_string(i) + ".csv"), cfg.data_hash()));
    }
    return out;
}

std::string estimate_csv(const EstimationResult& r, double dt, const std::string& hash) {
    std::ostringstream os;
    write_estimate_csv(os, r.records, dt, hash_comment(hash));
    return os.str();
}

std::vector<double> row_values(const Matrix& m, Index row, Index n) {
    std::vector<double> v;
    for (Index k = 0; k < n && k < m.cols(); ++k) v.push_back(m(row, k));
    return v;
}

std::vector<double> estimate_values(const EstimationResult& r, Index row) {
    std::vector<double> v;
    for (const auto& rec : r.records) v.push_back(rec.x_hat(row));
    return v;
}

std::vector<double> time_axis(const EstimationResult& r) {
    std::vector<double> t;
    for (const auto& rec : r.records) t.push_back(rec.t);
    return t;
}

std::string channel_label(const PlantSpec& plant, Index i) {
    if (static_cast<std::size_t>(i) < plant.x_labels.size()) return plant.x_labels[static_cast<std::size_t>(i)];
    return "x" + std::to_string(i + 1);
}

json metrics_json(const EstimationResult& r, const std::string& mode, const std::string& hash) {
    json j = r.metrics.to_json();
    j["mode"] = mode;
    j["config_hash"] = hash;
    return j;
}

}  // namespace

std::string hash_text(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Vector ExperimentConfig::state_noise_std() const { return relative_std(plant.x0, data.state_noise); }

Vector ExperimentConfig::output_noise_std() const { return relative_std(plant.output(plant.x0), data.output_noise); }

Vector ExperimentConfig::online_output_noise_std() const {
    const double rel = data.online_output_noise < 0.0 ? data.output_noise : data.online_output_noise;
    return relative_std(plant.output(plant.x0), rel);
}

std::string ExperimentConfig::data_hash() const {
    json j{{"plant", plant.name}, {"params", plant_params}, {"data", data_to_json(data)}, {"seed", seeds.data}};
    return hash_text(j.dump());
}

std::string ExperimentConfig::model_hash() const {
    json j{{"data", data_hash()}, {"kind", kind_name(lifting)}};
    if (lifting == LiftingKind::learned) {
        j["training"] = training.to_json();
        j["restarts"] = restarts;
        j["seed"] = seeds.train;
    }
    return hash_text(j.dump());
}

std::string ExperimentConfig::stack_hash() const {
    json j{{"model", model_hash()}, {"horizon", mhe.horizon}};
    return hash_text(j.dump());
}

ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorCode::ConfigInvalid, "config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!top_level_keys().count(key)) fail(ErrorCode::ConfigInvalid, "unknown config key '" + key + "'");
    }
    ExperimentConfig c;
    c.raw = j;
    try {
        const json plant = j.value("plant", json::object());
        const std::string name = plant.is_string() ? plant.get<std::string>() : plant.value("name", std::string("poly2"));
        c.plant_params = plant.is_object() ? plant.value("params", json::object()) : json::object();
        c.plant = find_plant(name, c.plant_params);
        c.data = data_from_json(j.value("data", json::object()));
        const json seeds = j.value("seeds", json::object());
        c.seeds.data = seeds.value("data", c.seeds.data);
        c.seeds.train = seeds.value("train", c.seeds.train);
        const Index horizon = j.value("horizon", Index{4});

        const json lift = j.value("lifting", json::object());
        const std::string kind = lift.value("kind", std::string("learned"));
        if (kind == "learned") {
            c.lifting = LiftingKind::learned;
        } else if (kind == "exact") {
            c.lifting = LiftingKind::exact;
        } else if (kind == "identity") {
            c.lifting = LiftingKind::identity;
        } else {
            fail(ErrorCode::ConfigInvalid, "lifting.kind must be learned, exact or identity");
        }
        c.restarts = lift.value("restarts", 1);
        json training = lift.value("training", json::object());
        if (training.contains("horizon") && training["horizon"].get<Index>() != horizon) {
            fail(ErrorCode::ConfigInvalid, "lifting.training.horizon differs from horizon");
        }
        training["horizon"] = horizon;
        training["seed"] = c.seeds.train;
        c.training = TrainingConfig::from_json(training);

        json mhe = j.value("mhe", json::object());
        if (mhe.contains("horizon") && mhe["horizon"].get<Index>() != horizon) {
            fail(ErrorCode::ConfigInvalid, "mhe.horizon differs from horizon");
        }
        c.baseline_mode = mhe.value("baseline_mode", false);
        c.data = data_from_json(j.value("data", json::object()));
        c.rmse_from = mhe.value("rmse_from", std::min<Index>(100, c.data.online_length / 2));
        mhe["horizon"] = horizon;
        c.mhe = MheConfig::from_json(mhe);
        if (!mhe.contains("x_prior")) c.mhe.x_prior = 1.05 * c.plant.x0;
        if (!mhe.contains("eps_x")) c.mhe.eps_x = 3.0 * c.state_noise_std().maxCoeff();
        if (!mhe.contains("eps_y")) c.mhe.eps_y = 3.0 * c.online_output_noise_std().maxCoeff();
        c.output_dir = j.value("output_dir", std::string("out"));
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigInvalid, std::string("config: ") + e.what());
    }

    const Index n = c.mhe.horizon;
    const auto& d = c.data;
    if (n < 0) fail(ErrorCode::ConfigInvalid, "horizon must be >= 0");
    if (d.train_length < n + 1 || d.offline_length < n + 1 || d.online_length < n + 1) {
        fail(ErrorCode::ConfigInvalid, "data lengths must be at least horizon + 1");
    }
    if (d.train_count < 1 || d.val_count < 1) fail(ErrorCode::ConfigInvalid, "need at least one train and val set");
    if (d.hold < 1) fail(ErrorCode::ConfigInvalid, "data.hold must be >= 1");
    if (d.input_noise < 0 || d.state_noise < 0 || d.output_noise < 0) {
        fail(ErrorCode::ConfigInvalid, "noise levels must be non-negative");
    }
    if (c.restarts < 1) fail(ErrorCode::ConfigInvalid, "lifting.restarts must be >= 1");
    if (c.lifting == LiftingKind::exact && c.plant.name != "poly2") {
        fail(ErrorCode::ConfigInvalid, "exact lifting exists only for poly2");
    }
    if (c.rmse_from < 0 || c.rmse_from >= d.online_length + 1) fail(ErrorCode::ConfigInvalid, "mhe.rmse_from out of range");
    if (c.output_dir.empty()) fail(ErrorCode::ConfigInvalid, "output_dir is empty");
    c.mhe.validate(c.plant.n_x, c.plant.n_x, c.plant.n_y, true);
    return c;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorCode::ConfigInvalid, "override must be key=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &j;
    std::size_t pos = 0;
    while (true) {
        const auto dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (part.empty()) fail(ErrorCode::ConfigInvalid, "bad override key: " + key);
        if (!node->is_object()) *node = json::object();
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        pos = dot + 1;
    }
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                             const std::optional<std::uint64_t>& seed, const std::optional<std::string>& out_dir) {
    json j = json::object();
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) fail(ErrorCode::ConfigInvalid, "cannot read config " + path);
        j = json::parse(is, nullptr, false);
        if (j.is_discarded()) fail(ErrorCode::ConfigInvalid, "config is not valid JSON: " + path);
    }
    for (const auto& o : overrides) apply_override(j, o);
    if (seed) {
        j["seeds"]["data"] = *seed;
        j["seeds"]["train"] = *seed;
    }
    if (out_dir) j["output_dir"] = *out_dir;
    return config_from_json(j);
}

std::unique_ptr<LiftingMap> lifting_from_json(const json& model) {
    try {
        const std::string kind = model.at("kind").get<std::string>();
        const json& l = model.at("lifting");
        if (kind == "learned") return std::make_unique<LiftingModel>(LiftingModel::from_json(l));
        if (kind == "identity") {
            return std::make_unique<IdentityLifting>(l.at("n_x").get<Index>(), l.at("n_u").get<Index>());
        }
        if (kind == "exact") {
            const json& p = l.at("parameters");
            Poly2Params params{p.at("a").get<double>(), p.at("b").get<double>(), p.at("c").get<double>(),
                               p.at("d").get<double>()};
            return std::make_unique<ExactLpvSurrogate>(params);
        }
        fail(ErrorCode::ParseError, "unknown model kind '" + kind + "'");
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("model artifact: ") + e.what());
    }
}

SimulateOutput cmd_simulate(const ExperimentConfig& cfg) {
    const PlantSpec& plant = cfg.plant;
    const auto& d = cfg.data;
    Vector u_noise(plant.n_u);
    for (Index i = 0; i < plant.n_u; ++i) {
        u_noise(i) = d.input_noise * std::abs(plant.u_max(i));
    }
    const Vector sx = cfg.state_noise_std();
    const Vector sy = cfg.output_noise_std();

    auto run = [&](Index length, Stream input, Stream noise, std::uint64_t index, const Vector& state_std,
                   const Vector& output_std) {
        const Matrix u = excitation_signal(plant.u_min, plant.u_max, d.hold, length,
                                           derive_seed(cfg.seeds.data, input, index), u_noise);
        SimulationResult r = simulate(plant, plant.x0, u, state_std, output_std, derive_seed(cfg.seeds.data, noise, index));
        r.require_finite();
        return r;
    };

    SimulateOutput out;
    const std::string hash = cfg.data_hash();
    const fs::path dir = data_dir(cfg);
    for (Index i = 0; i < d.train_count; ++i) {
        out.train.push_back(run(d.train_length, kTrainInput, kTrainNoise, static_cast<std::uint64_t>(i), sx, sy).noisy);
        write_dataset(dir / ("train_" + std::to_string(i) + ".csv"), out.train.back(), hash);
    }
    for (Index i = 0; i < d.val_count; ++i) {
        out.val.push_back(run(d.train_length, kValInput, kValNoise, static_cast<std::uint64_t>(i), sx, sy).noisy);
        write_dataset(dir / ("val_" + std::to_string(i) + ".csv"), out.val.back(), hash);
    }
    out.offline = run(d.offline_length, kOfflineInput, kOfflineNoise, 0, sx, sy).noisy;
    write_dataset(dir / "offline.csv", out.offline, hash);

    SimulationResult online = run(d.online_length, kOnlineInput, kOnlineNoise, 0, Vector::Zero(plant.n_x),
                                  cfg.online_output_noise_std());
    out.online_truth = online.clean;
    out.online = online.noisy;
    out.online.x.resize(0, 0);
    out.online.x_labels.clear();
    write_dataset(dir / "online.csv", out.online, hash);
    write_dataset(dir / "online_truth.csv", out.online_truth, hash);
    write_json(dir / "plants.json", plant_manifest());
    return out;
}

TrainOutput cmd_train(const ExperimentConfig& cfg) {
    TrainOutput out;
    json model{{"config_hash", cfg.model_hash()}, {"kind", kind_name(cfg.lifting)}, {"plant", cfg.plant.name}};
    const fs::path dir = model_path(cfg).parent_path();
    if (cfg.lifting == LiftingKind::learned) {
        const auto train_sets = read_sets(cfg, "train", cfg.data.train_count);
        const auto val_sets = read_sets(cfg, "val", cfg.data.val_count);
        std::optional<TrainingResult> best;
        for (int r = 0; r < cfg.restarts; ++r) {
            TrainingConfig tc = cfg.training;
            tc.seed = cfg.seeds.train + static_cast<std::uint64_t>(r);
            TrainingResult res = train(tc, train_sets, val_sets);
            if (!best || res.best_val < best->best_val) {
                best = std::move(res);
                out.best_seed = tc.seed;
            }
        }
        out.history = best->history;
        out.best_val = best->best_val;
        model["lifting"] = best->model.to_json();
        model["best_val"] = best->best_val;
        model["best_epoch"] = best->best_epoch;
        model["best_seed"] = out.best_seed;
        model["training"] = cfg.training.to_json();
        std::ostringstream hist;
        write_history_csv(hist, out.history, hash_comment(cfg.model_hash()) + " seed=" + std::to_string(out.best_seed));
        write_text(dir / "history.csv", hist.str());
    } else if (cfg.lifting == LiftingKind::exact) {
        Poly2Params p;
        p.a = cfg.plant_params.value("a", p.a);
        p.b = cfg.plant_params.value("b", p.b);
        p.c = cfg.plant_params.value("c", p.c);
        p.d = cfg.plant_params.value("d", p.d);
        model["lifting"] = make_exact_benchmark(p).surrogate.to_json();
    } else {
        model["lifting"] = {{"kind", "identity"}, {"n_x", cfg.plant.n_x}, {"n_u", cfg.plant.n_u}};
    }
    write_json(model_path(cfg), model);
    out.model = model;
    return out;
}

HankelStack cmd_build_stack(const ExperimentConfig& cfg) {
    const json model = load_model(cfg);
    const auto lifting = lifting_from_json(model);
    const Trajectory offline = read_dataset(data_dir(cfg) / "offline.csv", cfg.data_hash());
    HankelStack stack = build_hankel_stack(offline, *lifting, cfg.mhe.horizon);
    write_json(stack_path(cfg), {{"config_hash", cfg.stack_hash()}, {"stack", stack.to_json()}});
    return stack;
}

namespace {

void write_plots(const ExperimentConfig& cfg, const fs::path& dir, const Matrix& truth_x,
                 const std::vector<std::pair<std::string, const EstimationResult*>>& runs) {
    static const char* colors[] = {"#d62728", "#2ca02c", "#9467bd"};
    const auto& first = *runs.front().second;
    const std::vector<double> t = time_axis(first);
    for (Index i = 0; i < cfg.plant.n_x; ++i) {
        std::vector<PlotSeries> series;
        series.push_back({"true", row_values(truth_x, i, static_cast<Index>(t.size())), "#1f77b4", false});
        for (std::size_t r = 0; r < runs.size(); ++r) {
            series.push_back({runs[r].first, estimate_values(*runs[r].second, i), colors[r % 3], true});
        }
        const std::string label = channel_label(cfg.plant, i);
        write_text(dir / (label + ".svg"), overlay_svg(cfg.plant.name + ": " + label, t, series, "t", label));
    }
}

}  // namespace

EstimateOutput cmd_estimate(const ExperimentConfig& cfg) {
    const Trajectory online = read_dataset(data_dir(cfg) / "online.csv", cfg.data_hash());
    const Trajectory truth = read_dataset(data_dir(cfg) / "online_truth.csv", cfg.data_hash());
    std::unique_ptr<LiftingMap> lifting;
    HankelStack stack;
    std::string mode;
    if (cfg.baseline_mode) {
        mode = "baseline";
        lifting = std::make_unique<IdentityLifting>(cfg.plant.n_x, cfg.plant.n_u);
        const Trajectory offline = read_dataset(data_dir(cfg) / "offline.csv", cfg.data_hash());
        stack = build_hankel_stack(offline, *lifting, cfg.mhe.horizon);
    } else {
        mode = kind_name(cfg.lifting);
        lifting = lifting_from_json(load_model(cfg));
        const json sj = read_json(stack_path(cfg));
        if (sj.value("config_hash", std::string{}) != cfg.stack_hash()) {
            fail(ErrorCode::ConfigInvalid, "stack artifact does not match the configuration (rerun build-stack)");
        }
        try {
            stack = HankelStack::from_json(sj.at("stack"));
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, std::string("stack artifact: ") + e.what());
        }
        if (stack.n_z() != lifting->n_z()) fail(ErrorCode::ConfigInvalid, "stack and model disagree on n_z");
    }

    EstimateOutput out;
    out.result = run_estimation(online, truth.x, stack, *lifting, cfg.mhe, cfg.rmse_from);
    const std::string hash = cfg.baseline_mode ? cfg.data_hash() : cfg.stack_hash();
    const fs::path dir = fs::path(cfg.output_dir) / "estimate" / mode;
    write_text(dir / "estimates.csv", estimate_csv(out.result, online.dt, hash));
    json metrics = metrics_json(out.result, mode, hash);
    metrics["mhe"] = cfg.mhe.to_json();
    write_json(dir / "metrics.json", metrics);
    write_plots(cfg, dir, truth.x, {{mode, &out.result}});
    return out;
}

CompareOutput cmd_compare(const ExperimentConfig& cfg) {
    const json model = load_model(cfg);
    const auto proposed_lifting = lifting_from_json(model);
    const IdentityLifting baseline_lifting(cfg.plant.n_x, cfg.plant.n_u);
    const Trajectory offline = read_dataset(data_dir(cfg) / "offline.csv", cfg.data_hash());
    const Trajectory online = read_dataset(data_dir(cfg) / "online.csv", cfg.data_hash());
    const Trajectory truth = read_dataset(data_dir(cfg) / "online_truth.csv", cfg.data_hash());

    auto run = [&](const LiftingMap& lifting) {
        const HankelStack stack = build_hankel_stack(offline, lifting, cfg.mhe.horizon);
        return run_estimation(online, truth.x, stack, lifting, cfg.mhe, cfg.rmse_from);
    };
    auto proposed_future = std::async(std::launch::async, run, std::cref(*proposed_lifting));
    auto baseline_future = std::async(std::launch::async, run, std::cref(static_cast<const LiftingMap&>(baseline_lifting)));

    CompareOutput out;
    out.proposed = proposed_future.get();
    out.baseline = baseline_future.get();

    const std::string hash = cfg.model_hash();
    const fs::path dir = fs::path(cfg.output_dir) / "compare";
    write_text(dir / "proposed_estimates.csv", estimate_csv(out.proposed, online.dt, hash));
    write_text(dir / "baseline_estimates.csv", estimate_csv(out.baseline, online.dt, hash));

    json channels = json::array();
    std::ostringstream md;
    md << "| channel | proposed RMSE | baseline RMSE |\n|---|---|---|\n";
    for (Index i = 0; i < cfg.plant.n_x; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        channels.push_back({{"channel", channel_label(cfg.plant, i)},
                            {"proposed", out.proposed.metrics.rmse[ii]},
                            {"baseline", out.baseline.metrics.rmse[ii]}});
        md << "| " << channel_label(cfg.plant, i) << " | " << format_double(out.proposed.metrics.rmse[ii]) << " | "
           << format_double(out.baseline.metrics.rmse[ii]) << " |\n";
    }
    md << "| aggregate | " << format_double(out.proposed.metrics.rmse_total) << " | "
       << format_double(out.baseline.metrics.rmse_total) << " |\n";

    out.report = {{"config_hash", hash},
                  {"plant", cfg.plant.name},
                  {"lifting", kind_name(cfg.lifting)},
                  {"channels", channels},
                  {"proposed", metrics_json(out.proposed, kind_name(cfg.lifting), hash)},
                  {"baseline", metrics_json(out.baseline, "baseline", hash)},
                  {"proposed_not_worse", out.proposed.metrics.rmse_total <= out.baseline.metrics.rmse_total}};
    write_json(dir / "report.json", out.report);
    write_text(dir / "report.md", md.str());
    write_plots(cfg, dir, truth.x, {{"proposed", &out.proposed}, {"baseline", &out.baseline}});
    return out;
}

}  // namespace kmhe
