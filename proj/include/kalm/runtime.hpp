#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kalm/config.hpp"
#include "kalm/diffusion.hpp"
#include "kalm/errors.hpp"
#include "kalm/features.hpp"
#include "kalm/geometry.hpp"
#include "kalm/keypoints.hpp"
#include "kalm/planning.hpp"

namespace kalm {

// ---- demonstrations and skill bundles ----

struct Demonstration {
    RGBDImage observation;
    Eigen::VectorXd times;   // strictly increasing
    Eigen::MatrixXd poses;   // n x 10: x y z r1..r6 grip
};

inline void validate_demo(const Demonstration& demo) {
    if (demo.poses.rows() < 2) throw Error("demonstration needs at least two poses");
    if (demo.poses.cols() != kPoseDim)
        throw ShapeMismatchError("demonstration poses must have 10 entries");
    if (demo.times.size() != demo.poses.rows())
        throw ShapeMismatchError("timestamps do not match pose count");
    for (int i = 1; i < demo.times.size(); ++i)
        if (!(demo.times(i) > demo.times(i - 1)))
            throw Error("timestamps must be strictly increasing");
}

struct SkillBundle {
    std::string description;
    std::vector<RGBDImage> video;     // seeding video of the task
    std::vector<Demonstration> demos;
};

inline void validate_bundle(const SkillBundle& bundle) {
    if (bundle.description.empty()) throw Error("bundle has no task description");
    if (bundle.video.empty()) throw Error("bundle has no video frames");
    if (bundle.demos.empty()) throw Error("bundle has no demonstrations");
    for (const auto& d : bundle.demos) validate_demo(d);
}

// ---- trajectory CSV ----

inline constexpr const char* kTrajCsvHeader = "t,x,y,z,r1,r2,r3,r4,r5,r6,grip";

namespace detail {

inline std::string csv_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace detail

inline void write_traj_csv(const std::string& path, const Eigen::VectorXd& times,
                           const Eigen::MatrixXd& poses) {
    if (poses.cols() != kPoseDim) throw ShapeMismatchError("pose rows must have 10 entries");
    if (times.size() != poses.rows()) throw ShapeMismatchError("timestamps do not match poses");
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open for write: " + path);
    out << kTrajCsvHeader << "\n";
    for (int i = 0; i < poses.rows(); ++i) {
        out << detail::csv_number(times(i));
        for (int j = 0; j < kPoseDim; ++j) out << "," << detail::csv_number(poses(i, j));
        out << "\n";
    }
}

inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> read_traj_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty trajectory file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kTrajCsvHeader)
        throw FormatError(path + ": expected header '" + std::string(kTrajCsvHeader) + "', got '" +
                          line + "'");
    std::vector<std::array<double, 11>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<double, 11> row{};
        size_t at = 0;
        for (int j = 0; j < 11; ++j) {
            size_t comma = line.find(',', at);
            std::string cell = line.substr(at, comma == std::string::npos ? comma : comma - at);
            try {
                row[size_t(j)] = std::stod(cell);
            } catch (const std::exception&) {
                throw FormatError(path + ":" + std::to_string(lineno) + ": bad number '" + cell +
                                  "'");
            }
            if (j < 10) {
                if (comma == std::string::npos)
                    throw FormatError(path + ":" + std::to_string(lineno) +
                                      ": expected 11 columns");
                at = comma + 1;
            } else if (comma != std::string::npos) {
                throw FormatError(path + ":" + std::to_string(lineno) + ": trailing columns");
            }
        }
        rows.push_back(row);
    }
    Eigen::VectorXd times(int(rows.size()));
    Eigen::MatrixXd poses(int(rows.size()), kPoseDim);
    for (int i = 0; i < int(rows.size()); ++i) {
        times(i) = rows[size_t(i)][0];
        for (int j = 0; j < kPoseDim; ++j) poses(i, j) = rows[size_t(i)][size_t(j) + 1];
    }
    return {std::move(times), std::move(poses)};
}

// ---- bundle directory layout ----
//
//   <dir>/description.txt
//   <dir>/video/frame_0000.ppm + .kdep + .cam
//   <dir>/demos/demo_00/obs.ppm + obs.kdep + obs.cam + traj.csv
//   <dir>/features/frame_0000.kfea, demo_00.kfea   (optional sidecars)

namespace detail {

inline std::string frame_stem(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%04d", i);
    return buf;
}

inline std::string demo_stem(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "demo_%02d", i);
    return buf;
}

}  // namespace detail

inline void save_bundle(const SkillBundle& bundle, const std::string& dir) {
    validate_bundle(bundle);
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "video");
    {
        std::ofstream out(fs::path(dir) / "description.txt", std::ios::binary);
        if (!out) throw FormatError("cannot open for write: " + dir + "/description.txt");
        out << bundle.description;
    }
    for (int i = 0; i < int(bundle.video.size()); ++i) {
        fs::path stem = fs::path(dir) / "video" / detail::frame_stem(i);
        save_rgbd(bundle.video[size_t(i)], stem.string() + ".ppm", stem.string() + ".kdep",
                  stem.string() + ".cam");
    }
    for (int i = 0; i < int(bundle.demos.size()); ++i) {
        fs::path ddir = fs::path(dir) / "demos" / detail::demo_stem(i);
        fs::create_directories(ddir);
        const Demonstration& d = bundle.demos[size_t(i)];
        save_rgbd(d.observation, (ddir / "obs.ppm").string(), (ddir / "obs.kdep").string(),
                  (ddir / "obs.cam").string());
        write_traj_csv((ddir / "traj.csv").string(), d.times, d.poses);
    }
}

inline SkillBundle load_bundle(const std::string& dir) {
    namespace fs = std::filesystem;
    SkillBundle bundle;
    {
        std::ifstream in(fs::path(dir) / "description.txt", std::ios::binary);
        if (!in) throw FormatError("missing " + dir + "/description.txt");
        std::ostringstream ss;
        ss << in.rdbuf();
        bundle.description = ss.str();
    }
    for (int i = 0;; ++i) {
        fs::path stem = fs::path(dir) / "video" / detail::frame_stem(i);
        if (!fs::exists(stem.string() + ".ppm")) break;
        bundle.video.push_back(load_rgbd(stem.string() + ".ppm", stem.string() + ".kdep",
                                         stem.string() + ".cam"));
    }
    for (int i = 0;; ++i) {
        fs::path ddir = fs::path(dir) / "demos" / detail::demo_stem(i);
        if (!fs::exists(ddir / "traj.csv")) break;
        Demonstration d;
        d.observation = load_rgbd((ddir / "obs.ppm").string(), (ddir / "obs.kdep").string(),
                                  (ddir / "obs.cam").string());
        std::tie(d.times, d.poses) = read_traj_csv((ddir / "traj.csv").string());
        bundle.demos.push_back(std::move(d));
    }
    validate_bundle(bundle);
    return bundle;
}

// ---- featurization ----

inline std::unique_ptr<VisualProvider> make_visual_provider(const Config& cfg,
                                                            const std::string& kfea_path = "") {
    if (cfg.features_provider == "procedural")
        return std::make_unique<ProceduralVisualProvider>(
            cfg.features_d_vis, cfg.features_procedural_seed, cfg.features_normal_radius);
    if (cfg.features_provider == "file") {
        if (kfea_path.empty())
            throw ConfigError("features.provider = file needs a per-scene feature file");
        return std::make_unique<FileVisualProvider>(kfea_path);
    }
    if (cfg.features_provider == "absent") return std::make_unique<AbsentVisualProvider>();
    throw ConfigError("unknown features.provider: " + cfg.features_provider);
}

inline FeaturedScene featurize_scene(const RGBDImage& image, const Config& cfg,
                                     const std::string& kfea_path = "") {
    PointCloud cloud = cloud_from_rgbd(image, cfg.runtime_cloud_stride);
    if (cloud.size() == 0) throw EmptySceneError("image deprojects to an empty cloud");
    auto provider = make_visual_provider(cfg, kfea_path);
    FeatureField field = compute_feature_field(image, cloud, *provider, cfg.features_fpfh_radius,
                                               cfg.features_normal_radius);
    return make_featured_scene(image, std::move(cloud), std::move(field));
}

struct FeaturedBundle {
    FeaturedScene seed;                     // first video frame
    std::vector<FeaturedScene> demo_scenes;  // one per demonstration
};

// Feature sidecar resolution: with the file provider, per-scene .kfea files are
// taken from features.file_dir if set, else from <bundle_dir>/features.
inline FeaturedBundle featurize_bundle(const SkillBundle& bundle, const Config& cfg,
                                       const std::string& bundle_dir = "") {
    validate_bundle(bundle);
    namespace fs = std::filesystem;
    auto sidecar = [&](const std::string& stem) -> std::string {
        if (cfg.features_provider != "file") return "";
        fs::path base = cfg.features_file_dir.empty() ? fs::path(bundle_dir) / "features"
                                                      : fs::path(cfg.features_file_dir);
        return (base / (stem + ".kfea")).string();
    };
    FeaturedBundle out;
    out.seed = featurize_scene(bundle.video.front(), cfg, sidecar(detail::frame_stem(0)));
    for (int i = 0; i < int(bundle.demos.size()); ++i)
        out.demo_scenes.push_back(
            featurize_scene(bundle.demos[size_t(i)].observation, cfg, sidecar(detail::demo_stem(i))));
    return out;
}

// ---- phase segmentation ----

struct PhaseSplit {
    int split_index = 0;   // first row within threshold of a keypoint; row count if none
    bool warning = false;  // no pose qualified, execution falls back to the whole trajectory
    Eigen::MatrixXd approach;   // rows before the split
    Eigen::VectorXd approach_times;
    Eigen::MatrixXd execution;  // rows from the split on
    Eigen::VectorXd execution_times;
};

// Split a demonstration where the end effector first comes within `threshold`
// of the nearest keypoint. The two pieces always partition the input rows.
inline PhaseSplit segment_phases(const Eigen::MatrixXd& poses, const Eigen::VectorXd& times,
                                 const std::vector<Eigen::Vector3d>& keypoints,
                                 double threshold = 0.10) {
    if (poses.cols() != kPoseDim) throw ShapeMismatchError("pose rows must have 10 entries");
    if (times.size() != poses.rows()) throw ShapeMismatchError("timestamps do not match poses");
    if (keypoints.empty()) throw Error("phase segmentation needs at least one keypoint");
    const int n = int(poses.rows());
    int split = n;
    for (int i = 0; i < n && split == n; ++i) {
        Eigen::Vector3d p = poses.row(i).head<3>();
        for (const auto& k : keypoints)
            if ((p - k).norm() <= threshold) {
                split = i;
                break;
            }
    }
    PhaseSplit out;
    if (split == n) {
        out.warning = true;
        split = 0;  // nothing qualified: treat everything as execution
    }
    out.split_index = out.warning ? n : split;
    out.approach = poses.topRows(split);
    out.approach_times = times.head(split);
    out.execution = poses.bottomRows(n - split);
    out.execution_times = times.tail(n - split);
    return out;
}

// ---- training-set assembly ----

struct AssemblyReport {
    std::vector<int> skipped_demos;
    std::vector<std::string> notes;
};

namespace detail {

inline int nearest_cloud_index(const PointCloud& cloud, const Eigen::Vector3d& p) {
    int best = 0;
    double best_d = (cloud.points[0] - p).squaredNorm();
    for (int i = 1; i < int(cloud.size()); ++i) {
        double d = (cloud.points[i] - p).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

}  // namespace detail

// One training pair per demonstration: condition from the skill's matched
// keypoints in that demo, trajectory from the execution phase resampled to the
// configured horizon and shifted into the object frame. Demos where nothing
// matched (or the execution phase is a single pose) are skipped with a note.
inline std::vector<TrainingPair> build_training_set(const DistilledSkill& skill,
                                                    const SkillBundle& bundle,
                                                    const std::vector<FeaturedScene>& demo_scenes,
                                                    const Config& cfg,
                                                    AssemblyReport* report = nullptr) {
    if (skill.keypoints.empty()) throw Error("skill has no keypoints");
    if (demo_scenes.size() != bundle.demos.size())
        throw IndexMismatchError("featured scenes do not match demos");
    AssemblyReport local;
    AssemblyReport& rep = report ? *report : local;
    std::vector<TrainingPair> out;
    for (int di = 0; di < int(bundle.demos.size()); ++di) {
        const FeaturedScene& scene = demo_scenes[size_t(di)];
        auto demo_matches = skill.matches.find(di);
        std::vector<KeypointObservation> obs;
        std::vector<Eigen::Vector3d> detected;
        for (const auto& k : skill.keypoints) {
            KeypointObservation o;
            o.id = k.id;
            if (demo_matches != skill.matches.end()) {
                auto hit = demo_matches->second.find(k.id);
                if (hit != demo_matches->second.end()) {
                    o.position = hit->second;
                    int idx = detail::nearest_cloud_index(scene.cloud, hit->second);
                    o.visual = condition_visual_slice(scene.features.visual.row(idx),
                                                      cfg.diffusion_cond_vis_dims);
                    o.geometric = scene.features.geometric.row(idx);
                    detected.push_back(hit->second);
                }
            }
            obs.push_back(std::move(o));
        }
        if (detected.empty()) {
            rep.skipped_demos.push_back(di);
            rep.notes.push_back("demo " + std::to_string(di) + ": no matched keypoints");
            continue;
        }
        auto [cond, centroid] = condition_from_observations(obs);

        const Demonstration& demo = bundle.demos[size_t(di)];
        PhaseSplit phases =
            segment_phases(demo.poses, demo.times, detected, cfg.runtime_phase_threshold);
        if (phases.execution.rows() < 2) {
            rep.skipped_demos.push_back(di);
            rep.notes.push_back("demo " + std::to_string(di) + ": execution phase too short");
            continue;
        }
        TrajectorySample exec;
        exec.poses = phases.execution;
        exec.frame = TrajectorySample::Frame::World;
        TrajectorySample fixed = resample_trajectory(exec, cfg.diffusion_horizon);
        out.emplace_back(std::move(cond), to_object_frame(fixed, detected));
    }
    if (out.empty()) throw Error("no usable demonstrations to train on");
    return out;
}

// ---- inference ----

inline Eigen::VectorXd parse_start_pose(const std::string& csv) {
    Eigen::VectorXd pose(kPoseDim);
    size_t at = 0;
    for (int j = 0; j < kPoseDim; ++j) {
        size_t comma = csv.find(',', at);
        std::string cell = csv.substr(at, comma == std::string::npos ? comma : comma - at);
        try {
            pose(j) = std::stod(cell);
        } catch (const std::exception&) {
            throw ConfigError("bad start pose entry: '" + cell + "'");
        }
        if (j < kPoseDim - 1) {
            if (comma == std::string::npos)
                throw ConfigError("start pose needs 10 comma-separated values");
            at = comma + 1;
        } else if (comma != std::string::npos) {
            throw ConfigError("start pose has trailing values");
        }
    }
    return pose;
}

struct InferencePlan {
    Eigen::MatrixXd approach;    // m x 10 world poses along the planned path
    TrajectorySample execution;  // world frame
    int chosen_index = -1;       // which sampled trajectory was kept
    std::vector<bool> feasibility;  // verdict per tried sample, in sampling order
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    std::vector<DetectionResult> detections;  // one per skill keypoint
};

struct InferOutcome {
    bool success = false;
    std::string failure_reason;  // "Exhausted" when no sample admits a feasible approach
    InferencePlan plan;
    int samples_drawn = 0;
};

namespace detail {

// Orientation and gripper are blended linearly by arc length along the planned
// positions; the final row copies the execution start exactly.
inline Eigen::MatrixXd approach_poses(const std::vector<Eigen::Vector3d>& path,
                                      const Eigen::VectorXd& start_pose,
                                      const Eigen::VectorXd& exec_start) {
    const int m = int(path.size());
    Eigen::MatrixXd out(m, kPoseDim);
    std::vector<double> s(size_t(m), 0.0);
    for (int i = 1; i < m; ++i)
        s[size_t(i)] = s[size_t(i) - 1] + (path[size_t(i)] - path[size_t(i) - 1]).norm();
    double total = s[size_t(m) - 1];
    for (int i = 0; i < m; ++i) {
        out.row(i).head<3>() = path[size_t(i)];
        if (i == m - 1) {
            out.row(i).tail<7>() = exec_start.tail<7>();
            continue;
        }
        double u = total > 1e-12 ? s[size_t(i)] / total : double(i) / std::max(1, m - 1);
        Rot6D blended;
        for (int c = 0; c < 6; ++c)
            blended.v[size_t(c)] = (1.0 - u) * start_pose(3 + c) + u * exec_start(3 + c);
        Eigen::Matrix3d r = rot6d_decode(blended);
        out.row(i).segment<6>(3) =
            Eigen::Map<const Eigen::Matrix<double, 6, 1>>(rot6d_encode(r).v.data());
        out(i, 9) = (1.0 - u) * start_pose(9) + u * exec_start(9);
    }
    return out;
}

}  // namespace detail

// Keypoint detection, conditional trajectory sampling, then feasibility
// filtering: samples are tried in order and the first whose approach plans
// collision-free is returned. A sampled start inside an obstacle counts as an
// infeasible verdict; an infeasible robot start pose is an error.
inline InferOutcome infer(const DistilledSkill& skill, const FeaturedScene& scene,
                          const DenoiserParams& model, const SceneWorld& world,
                          const Eigen::VectorXd& start_pose, const Config& cfg,
                          const Eigen::VectorXd* mask_weights = nullptr) {
    if (skill.keypoints.empty()) throw Error("skill has no keypoints");
    if (start_pose.size() != kPoseDim)
        throw ShapeMismatchError("start pose must have 10 entries");

    DetectOptions opts = DetectOptions::from_config(cfg);
    InferOutcome outcome;
    InferencePlan& plan = outcome.plan;
    std::vector<KeypointObservation> obs;
    for (const auto& k : skill.keypoints) {
        DetectionResult det = detect(k, scene, mask_weights, opts);
        KeypointObservation o;
        o.id = k.id;
        if (det.matched) {
            o.position = det.position;
            int idx = det.index;
            o.visual = condition_visual_slice(scene.features.visual.row(idx),
                                              cfg.diffusion_cond_vis_dims);
            o.geometric = scene.features.geometric.row(idx);
        }
        plan.detections.push_back(std::move(det));
        obs.push_back(std::move(o));
    }
    auto [cond, centroid] = condition_from_observations(obs);
    plan.centroid = centroid;

    std::vector<TrajectorySample> samples =
        sample(model, cond, cfg.infer_n_samples, cfg.infer_seed);
    outcome.samples_drawn = int(samples.size());

    PlanConfig pc = PlanConfig::from_config(cfg);
    for (int i = 0; i < int(samples.size()); ++i) {
        TrajectorySample world_traj = samples[size_t(i)];
        world_traj.centroid = centroid;
        world_traj = to_world_frame(world_traj);
        Eigen::Vector3d goal = world_traj.poses.row(0).head<3>();
        std::optional<std::vector<Eigen::Vector3d>> path;
        try {
            path = birrt_plan(start_pose.head<3>(), goal, world, pc);
        } catch (const GoalInCollisionError&) {
            path = std::nullopt;
        }
        plan.feasibility.push_back(path.has_value());
        if (!path) continue;
        plan.chosen_index = i;
        plan.execution = std::move(world_traj);
        Eigen::VectorXd exec_start = plan.execution.poses.row(0);
        plan.approach = detail::approach_poses(*path, start_pose, exec_start);
        outcome.success = true;
        return outcome;
    }
    outcome.failure_reason = "Exhausted";
    return outcome;
}

// Approach rows then execution rows, timestamped by row index.
inline void write_plan_csv(const std::string& path, const InferencePlan& plan) {
    const int m = int(plan.approach.rows());
    const int h = int(plan.execution.poses.rows());
    Eigen::MatrixXd all(m + h, kPoseDim);
    all.topRows(m) = plan.approach;
    all.bottomRows(h) = plan.execution.poses;
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(m + h, 0.0, double(m + h - 1));
    write_traj_csv(path, t, all);
}

}  // namespace kalm
