#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kalm/errors.hpp"

namespace kalm {

// Every tunable default in one place, addressable by dotted key.
// Files are plain text: one `key = value` per line, `#` starts a comment.
struct Config {
    // features
    int features_d_vis = 64;
    double features_fpfh_radius = 0.05;
    double features_normal_radius = 0.05;
    double features_lambda_vis = 0.75;
    double features_lambda_geo = 0.25;
    std::string features_provider = "procedural";  // procedural | file
    std::string features_file_dir;
    uint64_t features_procedural_seed = 7;

    // keypoints
    double keypoints_tau_sim = 0.6;
    double keypoints_consensus_radius = 0.03;
    int keypoints_neighbor_count = 8;
    double keypoints_neighbor_radius = 0.02;
    int keypoints_candidate_count = 32;
    double keypoints_gamma = 0.5;
    double keypoints_delta = 0.3;
    int keypoints_max_rounds = 5;
    double keypoints_mask_discount = 0.5;
    uint64_t keypoints_seed = 11;

    // proposals
    int proposals_grid_rows = 8;
    int proposals_grid_cols = 8;
    int proposals_query_density = 3;
    double proposals_nms_iou = 0.9;
    double proposals_nms_confidence_floor = 0.7;
    int proposals_video_frames = 3;

    // backend (remote completion endpoint)
    std::string backend_url;
    std::string backend_model;
    std::string backend_token_env = "KALM_BACKEND_TOKEN";
    int backend_retries = 3;

    // diffusion
    int diffusion_timesteps = 100;
    int diffusion_horizon = 48;
    int diffusion_hidden_width = 128;
    double diffusion_scale_floor = 1e-6;
    int diffusion_cond_vis_dims = 0;  // visual prefix kept in the condition, 0 = all

    // training
    int train_steps = 2000;
    int train_batch_size = 8;
    double train_learning_rate = 1e-3;
    double train_ema_decay = 0.0;  // 0 disables weight averaging
    uint64_t train_seed = 5;

    // runtime
    int runtime_cloud_stride = 2;
    double runtime_phase_threshold = 0.10;

    // planner
    double rrt_step = 0.05;
    int rrt_max_iterations = 20000;
    int rrt_smoothing_iterations = 200;
    uint64_t rrt_seed = 17;

    // inference
    int infer_n_samples = 8;
    uint64_t infer_seed = 23;
    std::string infer_start_pose = "-0.30,-0.30,0.35,1,0,0,0,1,0,0";

    // synthetic task family
    int synthetic_image_width = 160;
    int synthetic_image_height = 120;
    double synthetic_yaw_range = 3.141592653589793;
    double synthetic_xy_range = 0.16;
    double synthetic_surface_spacing = 0.010;

    // eval-synthetic harness
    int eval_tasks = 20;
    int eval_demos = 10;
    int eval_holdout = 5;
    double eval_detect_tolerance = 0.02;
    int eval_train_steps = 8000;
    int eval_hidden_width = 32;
    int eval_batch_size = 6;
    double eval_learning_rate = 3e-4;
    int eval_horizon = 16;
    int eval_timesteps = 50;
    int eval_cloud_stride = 1;
    double eval_neighbor_radius = 0.012;
    int eval_d_vis = 256;
    double eval_lambda_geo = 0.02;

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    std::vector<std::string> keys() const;

    void load_file(const std::string& path);
    std::string dump() const;
};

namespace detail {

struct ConfigField {
    enum class Type { Int, U64, Double, String } type;
    void* ptr;
};

inline std::map<std::string, ConfigField> config_fields(Config& c) {
    using T = ConfigField::Type;
    return {
        {"features.d_vis", {T::Int, &c.features_d_vis}},
        {"features.fpfh_radius", {T::Double, &c.features_fpfh_radius}},
        {"features.normal_radius", {T::Double, &c.features_normal_radius}},
        {"features.lambda_vis", {T::Double, &c.features_lambda_vis}},
        {"features.lambda_geo", {T::Double, &c.features_lambda_geo}},
        {"features.provider", {T::String, &c.features_provider}},
        {"features.file_dir", {T::String, &c.features_file_dir}},
        {"features.procedural_seed", {T::U64, &c.features_procedural_seed}},
        {"keypoints.tau_sim", {T::Double, &c.keypoints_tau_sim}},
        {"keypoints.consensus_radius", {T::Double, &c.keypoints_consensus_radius}},
        {"keypoints.neighbor_count", {T::Int, &c.keypoints_neighbor_count}},
        {"keypoints.neighbor_radius", {T::Double, &c.keypoints_neighbor_radius}},
        {"keypoints.candidate_count", {T::Int, &c.keypoints_candidate_count}},
        {"keypoints.gamma", {T::Double, &c.keypoints_gamma}},
        {"keypoints.delta", {T::Double, &c.keypoints_delta}},
        {"keypoints.max_rounds", {T::Int, &c.keypoints_max_rounds}},
        {"keypoints.mask_discount", {T::Double, &c.keypoints_mask_discount}},
        {"keypoints.seed", {T::U64, &c.keypoints_seed}},
        {"proposals.grid_rows", {T::Int, &c.proposals_grid_rows}},
        {"proposals.grid_cols", {T::Int, &c.proposals_grid_cols}},
        {"proposals.query_density", {T::Int, &c.proposals_query_density}},
        {"proposals.nms_iou", {T::Double, &c.proposals_nms_iou}},
        {"proposals.nms_confidence_floor", {T::Double, &c.proposals_nms_confidence_floor}},
        {"proposals.video_frames", {T::Int, &c.proposals_video_frames}},
        {"backend.url", {T::String, &c.backend_url}},
        {"backend.model", {T::String, &c.backend_model}},
        {"backend.token_env", {T::String, &c.backend_token_env}},
        {"backend.retries", {T::Int, &c.backend_retries}},
        {"diffusion.timesteps", {T::Int, &c.diffusion_timesteps}},
        {"diffusion.horizon", {T::Int, &c.diffusion_horizon}},
        {"diffusion.hidden_width", {T::Int, &c.diffusion_hidden_width}},
        {"diffusion.scale_floor", {T::Double, &c.diffusion_scale_floor}},
        {"diffusion.cond_vis_dims", {T::Int, &c.diffusion_cond_vis_dims}},
        {"train.steps", {T::Int, &c.train_steps}},
        {"train.batch_size", {T::Int, &c.train_batch_size}},
        {"train.learning_rate", {T::Double, &c.train_learning_rate}},
        {"train.ema_decay", {T::Double, &c.train_ema_decay}},
        {"train.seed", {T::U64, &c.train_seed}},
        {"runtime.cloud_stride", {T::Int, &c.runtime_cloud_stride}},
        {"runtime.phase_threshold", {T::Double, &c.runtime_phase_threshold}},
        {"rrt.step", {T::Double, &c.rrt_step}},
        {"rrt.max_iterations", {T::Int, &c.rrt_max_iterations}},
        {"rrt.smoothing_iterations", {T::Int, &c.rrt_smoothing_iterations}},
        {"rrt.seed", {T::U64, &c.rrt_seed}},
        {"infer.n_samples", {T::Int, &c.infer_n_samples}},
        {"infer.seed", {T::U64, &c.infer_seed}},
        {"infer.start_pose", {T::String, &c.infer_start_pose}},
        {"synthetic.image_width", {T::Int, &c.synthetic_image_width}},
        {"synthetic.image_height", {T::Int, &c.synthetic_image_height}},
        {"synthetic.yaw_range", {T::Double, &c.synthetic_yaw_range}},
        {"synthetic.xy_range", {T::Double, &c.synthetic_xy_range}},
        {"synthetic.surface_spacing", {T::Double, &c.synthetic_surface_spacing}},
        {"eval.tasks", {T::Int, &c.eval_tasks}},
        {"eval.demos", {T::Int, &c.eval_demos}},
        {"eval.holdout", {T::Int, &c.eval_holdout}},
        {"eval.detect_tolerance", {T::Double, &c.eval_detect_tolerance}},
        {"eval.train_steps", {T::Int, &c.eval_train_steps}},
        {"eval.hidden_width", {T::Int, &c.eval_hidden_width}},
        {"eval.batch_size", {T::Int, &c.eval_batch_size}},
        {"eval.learning_rate", {T::Double, &c.eval_learning_rate}},
        {"eval.horizon", {T::Int, &c.eval_horizon}},
        {"eval.timesteps", {T::Int, &c.eval_timesteps}},
        {"eval.cloud_stride", {T::Int, &c.eval_cloud_stride}},
        {"eval.neighbor_radius", {T::Double, &c.eval_neighbor_radius}},
        {"eval.d_vis", {T::Int, &c.eval_d_vis}},
        {"eval.lambda_geo", {T::Double, &c.eval_lambda_geo}},
    };
}

}  // namespace detail

inline void Config::set(const std::string& key, const std::string& value) {
    auto fields = detail::config_fields(*this);
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown config key: " + key);
    try {
        switch (it->second.type) {
            case detail::ConfigField::Type::Int:
                *static_cast<int*>(it->second.ptr) = std::stoi(value);
                break;
            case detail::ConfigField::Type::U64:
                *static_cast<uint64_t*>(it->second.ptr) = std::stoull(value);
                break;
            case detail::ConfigField::Type::Double:
                *static_cast<double*>(it->second.ptr) = std::stod(value);
                break;
            case detail::ConfigField::Type::String:
                *static_cast<std::string*>(it->second.ptr) = value;
                break;
        }
    } catch (const std::invalid_argument&) {
        throw ConfigError("bad value for " + key + ": '" + value + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("value out of range for " + key + ": '" + value + "'");
    }
}

inline std::string Config::get(const std::string& key) const {
    auto fields = detail::config_fields(const_cast<Config&>(*this));
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown config key: " + key);
    std::ostringstream out;
    switch (it->second.type) {
        case detail::ConfigField::Type::Int:
            out << *static_cast<int*>(it->second.ptr);
            break;
        case detail::ConfigField::Type::U64:
            out << *static_cast<uint64_t*>(it->second.ptr);
            break;
        case detail::ConfigField::Type::Double: {
            out.precision(17);
            out << *static_cast<double*>(it->second.ptr);
            break;
        }
        case detail::ConfigField::Type::String:
            out << *static_cast<std::string*>(it->second.ptr);
            break;
    }
    return out.str();
}

inline std::vector<std::string> Config::keys() const {
    auto fields = detail::config_fields(const_cast<Config&>(*this));
    std::vector<std::string> out;
    out.reserve(fields.size());
    for (const auto& [k, f] : fields) out.push_back(k);
    return out;
}

inline void Config::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto strip = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        std::string trimmed = strip(line);
        if (trimmed.empty()) continue;
        auto eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        set(strip(trimmed.substr(0, eq)), strip(trimmed.substr(eq + 1)));
    }
}

inline std::string Config::dump() const {
    std::ostringstream out;
    for (const auto& k : keys()) out << k << " = " << get(k) << "\n";
    return out.str();
}

}  // namespace kalm
