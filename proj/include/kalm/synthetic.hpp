#pragma once

// Desk-scale synthetic task family: a table plane plus a boxy object with a
// protruding handle stick, rendered to RGBD by splatting densely sampled
// surface points through a randomized camera. Ground-truth keypoints and an
// execution arc ride rigidly with the object, so every quantity downstream of
// a pose is a deterministic function of the task seed.

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kalm/config.hpp"
#include "kalm/geometry.hpp"
#include "kalm/keypoints.hpp"
#include "kalm/planning.hpp"
#include "kalm/proposals.hpp"
#include "kalm/random.hpp"
#include "kalm/runtime.hpp"

namespace kalm {

namespace synth {

constexpr int kLabelNone = 0;
constexpr int kLabelTable = 1;
constexpr int kLabelBody = 2;
constexpr int kLabelHandle = 3;

// canonical object frame: body footprint centered at the origin on the table
inline Eigen::Vector3d body_lo() { return {-0.05, -0.04, 0.0}; }
inline Eigen::Vector3d body_hi() { return {0.05, 0.04, 0.08}; }
inline Eigen::Vector3d handle_lo() { return {0.05, -0.018, 0.040}; }
inline Eigen::Vector3d handle_hi() { return {0.15, 0.018, 0.070}; }
inline double table_half() { return 0.30; }

inline Eigen::Vector3d handle_tip() { return {0.15, 0.0, 0.055}; }

struct SurfaceSample {
    Eigen::Vector3d point;  // canonical frame for object parts, world frame for the table
    int label = kLabelNone;
    std::array<uint8_t, 3> color{0, 0, 0};
};

inline std::array<uint8_t, 3> part_color(int label, const Eigen::Vector3d& p) {
    auto clamp8 = [](double v) { return uint8_t(std::min(255.0, std::max(0.0, v))); };
    double r = 0, g = 0, b = 0;
    switch (label) {
        case kLabelTable:
            r = 118 + 14 * std::sin(37 * p.x() + 11 * p.y());
            g = 118 + 14 * std::sin(29 * p.y() + 5 * p.x());
            b = 124 + 10 * std::sin(53 * p.x() - 17 * p.y());
            break;
        // Parts wear linear position-to-color ramps: injective over each part
        // (no repeating texture to alias against) and steep enough that a
        // centimeter of displacement shifts the color noticeably. The red
        // channel ranges keep the two parts disjoint.
        case kLabelBody:
            r = 15 + 750 * (p.x() + 0.05);
            g = 25 + 2000 * (p.y() + 0.04);
            b = 120 + 1600 * p.z();
            break;
        case kLabelHandle:
            r = 130 + 1200 * (p.x() - 0.05);
            g = 15 + 1000 * (p.x() - 0.05) + 3500 * (p.y() + 0.018);
            b = 20 + 800 * (p.x() - 0.05) + 1800 * (p.y() + 0.018) + 2400 * (p.z() - 0.040);
            break;
        default:
            break;
    }
    return {clamp8(r), clamp8(g), clamp8(b)};
}

// The downward face never shows up from above-table viewpoints; sampling it
// only produces silhouette artifacts in the rendered clouds, so it is skipped.
inline void sample_box(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi, double spacing,
                       int label, std::vector<SurfaceSample>& out) {
    for (int axis = 0; axis < 3; ++axis) {
        int b = (axis + 1) % 3, c = (axis + 2) % 3;
        for (double plane : {lo(axis), hi(axis)}) {
            if (axis == 2 && plane == lo(2)) continue;
            for (double u = lo(b) + spacing / 2; u < hi(b); u += spacing) {
                for (double v = lo(c) + spacing / 2; v < hi(c); v += spacing) {
                    Eigen::Vector3d p;
                    p(axis) = plane;
                    p(b) = u;
                    p(c) = v;
                    out.push_back({p, label, part_color(label, p)});
                }
            }
        }
    }
}

inline std::vector<SurfaceSample> canonical_samples(double spacing) {
    std::vector<SurfaceSample> out;
    const double half = table_half();
    for (double x = -half + spacing / 2; x < half; x += spacing)
        for (double y = -half + spacing / 2; y < half; y += spacing) {
            Eigen::Vector3d p(x, y, 0.0);
            out.push_back({p, kLabelTable, part_color(kLabelTable, p)});
        }
    sample_box(body_lo(), body_hi(), spacing, kLabelBody, out);
    sample_box(handle_lo(), handle_hi(), spacing, kLabelHandle, out);
    return out;
}

inline Camera random_camera(RandomStream& rng, int width, int height) {
    double azimuth = rng.uniform(0.0, 2.0 * M_PI);
    double elevation = rng.uniform(0.85, 1.15);  // radians above the horizon
    double radius = rng.uniform(0.75, 0.95);
    Eigen::Vector3d target(rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04), 0.04);
    Eigen::Vector3d eye = target + radius * Eigen::Vector3d(std::cos(elevation) * std::cos(azimuth),
                                                            std::cos(elevation) * std::sin(azimuth),
                                                            std::sin(elevation));
    Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ()).normalized();
    Eigen::Vector3d down = forward.cross(right).normalized();
    Camera cam;
    cam.fx = cam.fy = 130.0 * width / 160.0;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.extrinsic.rotation.col(0) = right;
    cam.extrinsic.rotation.col(1) = down;
    cam.extrinsic.rotation.col(2) = forward;
    cam.extrinsic.translation = eye;
    return cam;
}

struct RenderedScene {
    RGBDImage image;
    std::vector<int> labels;  // per pixel
};

inline RenderedScene render_scene(const std::vector<SurfaceSample>& samples,
                                  const RigidTransform& pose, const Camera& cam, int width,
                                  int height) {
    RenderedScene out;
    out.image.width = width;
    out.image.height = height;
    out.image.camera = cam;
    out.image.color.assign(size_t(width) * height * 3, 28);
    out.image.depth.assign(size_t(width) * height, 0.0f);
    out.labels.assign(size_t(width) * height, kLabelNone);
    std::vector<float> zbuf(size_t(width) * height, std::numeric_limits<float>::infinity());
    for (const auto& s : samples) {
        Eigen::Vector3d w = s.label >= kLabelBody ? pose.apply(s.point) : s.point;
        auto proj = project(cam, w);
        if (!proj) continue;
        int u = int(std::lround((*proj)[0]));
        int v = int(std::lround((*proj)[1]));
        if (u < 0 || u >= width || v < 0 || v >= height) continue;
        size_t at = size_t(v) * width + u;
        if (float((*proj)[2]) >= zbuf[at]) continue;
        zbuf[at] = float((*proj)[2]);
        out.image.depth[at] = float((*proj)[2]);
        out.image.color[at * 3 + 0] = s.color[0];
        out.image.color[at * 3 + 1] = s.color[1];
        out.image.color[at * 3 + 2] = s.color[2];
        out.labels[at] = s.label;
    }
    return out;
}

// Quarter-circle arc in the object frame, from the handle tip outward and up.
// Rotation tilts back from a tool-down grasp as the arc progresses.
inline Eigen::MatrixXd canonical_arc(int rows = 24) {
    const double radius = 0.05;
    Eigen::Matrix3d grasp;
    grasp << 1, 0, 0, 0, -1, 0, 0, 0, -1;
    Eigen::MatrixXd arc(rows, kPoseDim);
    for (int j = 0; j < rows; ++j) {
        double theta = (M_PI / 2) * j / double(rows - 1);
        Eigen::Vector3d p = handle_tip() + radius * std::sin(theta) * Eigen::Vector3d::UnitX() +
                            radius * (1 - std::cos(theta)) * Eigen::Vector3d::UnitZ();
        Eigen::Matrix3d r =
            Eigen::AngleAxisd(0.55 * theta, Eigen::Vector3d::UnitY()).toRotationMatrix() * grasp;
        arc.row(j).head<3>() = p;
        arc.row(j).segment<6>(3) =
            Eigen::Map<const Eigen::Matrix<double, 6, 1>>(rot6d_encode(r).v.data());
        arc(j, 9) = 0.05 + 0.12 * theta / (M_PI / 2);
    }
    return arc;
}

// Fixed markers on the handle, object frame. These are the generator's ground
// truth; distilled keypoints are scene points and carry their own canonical
// positions through the seed pose.
inline std::vector<Eigen::Vector3d> handle_markers() {
    return {{0.14, 0.0, 0.070}, {0.10, 0.0, 0.070}, {0.08, -0.018, 0.055}, {0.08, 0.018, 0.055}};
}

inline RigidTransform random_object_pose(RandomStream& rng, const Config& cfg) {
    double x = rng.uniform(-cfg.synthetic_xy_range, cfg.synthetic_xy_range);
    double y = rng.uniform(-cfg.synthetic_xy_range, cfg.synthetic_xy_range);
    double yaw = rng.uniform(-cfg.synthetic_yaw_range / 2, cfg.synthetic_yaw_range / 2);
    RigidTransform t;
    t.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    t.translation = {x, y, 0.0};
    return t;
}

// World trajectory for one demonstration: a high approach that stays clear of
// the phase threshold, then the execution arc at the object's pose.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> demo_trajectory(const RigidTransform& pose,
                                                                   const Eigen::MatrixXd& arc) {
    const int approach_rows = 8;
    const int n = approach_rows + int(arc.rows());
    Eigen::MatrixXd poses(n, kPoseDim);

    Eigen::Vector3d exec_start = pose.apply(arc.row(0).head<3>());
    Eigen::Vector3d start(-0.26, -0.22, 0.34);
    Eigen::Vector3d hover = exec_start + Eigen::Vector3d(0, 0, 0.16);
    Eigen::Matrix3d grasp;
    grasp << 1, 0, 0, 0, -1, 0, 0, 0, -1;
    Rot6D start_rot = rot6d_encode(grasp);
    for (int i = 0; i < approach_rows; ++i) {
        double u = double(i) / (approach_rows - 1);
        poses.row(i).head<3>() = (1 - u) * start + u * hover;
        Rot6D blended;
        Rot6D target;
        for (int c = 0; c < 6; ++c) target.v[size_t(c)] = arc(0, 3 + c);
        Eigen::Matrix3d target_r = pose.rotation * rot6d_decode(target);
        Rot6D target_world = rot6d_encode(target_r);
        for (int c = 0; c < 6; ++c)
            blended.v[size_t(c)] = (1 - u) * start_rot.v[size_t(c)] + u * target_world.v[size_t(c)];
        poses.row(i).segment<6>(3) = Eigen::Map<const Eigen::Matrix<double, 6, 1>>(
            rot6d_encode(rot6d_decode(blended)).v.data());
        poses(i, 9) = 1.0 - 0.7 * u;
    }
    for (int j = 0; j < arc.rows(); ++j) {
        int i = approach_rows + j;
        poses.row(i).head<3>() = pose.apply(arc.row(j).head<3>());
        Rot6D obj;
        for (int c = 0; c < 6; ++c) obj.v[size_t(c)] = arc(j, 3 + c);
        Eigen::Matrix3d world_r = pose.rotation * rot6d_decode(obj);
        poses.row(i).segment<6>(3) =
            Eigen::Map<const Eigen::Matrix<double, 6, 1>>(rot6d_encode(world_r).v.data());
        poses(i, 9) = arc(j, 9);
    }
    Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(n, 0.0, 0.1 * (n - 1));
    return {std::move(times), std::move(poses)};
}

}  // namespace synth

struct PosedScene {
    RGBDImage image;
    std::vector<int> labels;
    RigidTransform pose;
};

struct SyntheticTask {
    SkillBundle bundle;
    std::vector<int> seed_labels;  // part labels of video frame 0
    RigidTransform seed_pose;
    std::vector<RigidTransform> demo_poses;
    std::vector<PosedScene> holdout;  // extra randomized poses/views, no demos
    SceneWorld world;
    Eigen::MatrixXd arc;                          // canonical execution trajectory
    std::vector<Eigen::Vector3d> gt_keypoints;    // object frame, on the handle
    std::string description;
};

inline SyntheticTask generate_synthetic_task(uint64_t seed, int demo_count, int holdout_count,
                                             const Config& cfg) {
    if (demo_count < 1) throw Error("synthetic task needs at least one demo");
    const int w = cfg.synthetic_image_width, h = cfg.synthetic_image_height;
    RandomStream root(seed);
    RandomStream pose_rng = root.derive(1);
    RandomStream cam_rng = root.derive(2);

    SyntheticTask task;
    task.description = "lift the boxy tool off the table by its bright handle stick";
    task.arc = synth::canonical_arc();
    task.gt_keypoints = synth::handle_markers();
    task.world.bounds = {{-0.45, -0.45, -0.03}, {0.45, 0.45, 0.55}};
    task.world.obstacles = {{{-0.32, -0.32, -0.025}, {0.32, 0.32, 0.0}}};

    std::vector<synth::SurfaceSample> samples = synth::canonical_samples(
        cfg.synthetic_surface_spacing);

    task.seed_pose = synth::random_object_pose(pose_rng, cfg);
    task.bundle.description = task.description;
    for (int f = 0; f < cfg.proposals_video_frames; ++f) {
        RandomStream crng = cam_rng.derive(uint64_t(f));
        Camera cam = synth::random_camera(crng, w, h);
        synth::RenderedScene scene = synth::render_scene(samples, task.seed_pose, cam, w, h);
        if (f == 0) task.seed_labels = scene.labels;
        task.bundle.video.push_back(std::move(scene.image));
    }

    for (int d = 0; d < demo_count; ++d) {
        RigidTransform pose = synth::random_object_pose(pose_rng, cfg);
        RandomStream crng = cam_rng.derive(100 + uint64_t(d));
        Camera cam = synth::random_camera(crng, w, h);
        synth::RenderedScene scene = synth::render_scene(samples, pose, cam, w, h);
        Demonstration demo;
        demo.observation = std::move(scene.image);
        std::tie(demo.times, demo.poses) = synth::demo_trajectory(pose, task.arc);
        task.bundle.demos.push_back(std::move(demo));
        task.demo_poses.push_back(pose);
    }

    for (int i = 0; i < holdout_count; ++i) {
        RigidTransform pose = synth::random_object_pose(pose_rng, cfg);
        RandomStream crng = cam_rng.derive(200 + uint64_t(i));
        Camera cam = synth::random_camera(crng, w, h);
        synth::RenderedScene scene = synth::render_scene(samples, pose, cam, w, h);
        task.holdout.push_back({std::move(scene.image), std::move(scene.labels), pose});
    }
    return task;
}

// Scenario for the scripted backend, derived from the rendered ground truth:
// cells covering the handle, and the surviving post-NMS mask with the best
// handle overlap (body, then table, as fallbacks). One identical entry per
// allowed round.
inline std::vector<ScenarioEntry> oracle_scenario(const SyntheticTask& task, const Config& cfg) {
    const RGBDImage& image = task.bundle.video.front();
    GridOverlay grid = overlay_grid(image, {cfg.proposals_grid_rows, cfg.proposals_grid_cols});

    std::vector<std::pair<int, std::string>> ranked;  // handle pixels per cell
    for (const auto& [label, rect] : grid.cells) {
        int count = 0;
        for (int v = rect.y0; v < rect.y0 + rect.h; ++v)
            for (int u = rect.x0; u < rect.x0 + rect.w; ++u)
                if (task.seed_labels[size_t(v) * image.width + u] == synth::kLabelHandle) ++count;
        if (count > 0) ranked.emplace_back(count, label);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<std::string> cells;
    for (const auto& [count, label] : ranked) {
        cells.push_back(label);
        if (cells.size() == 3) break;
    }
    if (cells.empty()) {
        // handle fully occluded: fall back to the body's best cell
        std::vector<std::pair<int, std::string>> body;
        for (const auto& [label, rect] : grid.cells) {
            int count = 0;
            for (int v = rect.y0; v < rect.y0 + rect.h; ++v)
                for (int u = rect.x0; u < rect.x0 + rect.w; ++u)
                    if (task.seed_labels[size_t(v) * image.width + u] == synth::kLabelBody)
                        ++count;
            if (count > 0) body.emplace_back(count, label);
        }
        std::stable_sort(body.begin(), body.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        if (body.empty()) throw Error("object invisible in the seed frame");
        cells.push_back(body.front().second);
    }

    // run the same mask pipeline distill will run and score the survivors
    auto queries = query_points_for_cells(cells, grid, cfg.proposals_query_density);
    LabelMaskGenerator generator(task.seed_labels, image.width, image.height);
    std::vector<MaskCandidate> masks = generator.generate(image, queries);
    masks = nms_masks(masks, cfg.proposals_nms_iou, cfg.proposals_nms_confidence_floor);
    int best = 0;
    long best_score = -1;
    for (int i = 0; i < int(masks.size()); ++i) {
        long handle = 0, body = 0;
        for (int v = 0; v < image.height; ++v)
            for (int u = 0; u < image.width; ++u) {
                if (!masks[size_t(i)].contains(u, v)) continue;
                int l = task.seed_labels[size_t(v) * image.width + u];
                handle += (l == synth::kLabelHandle);
                body += (l == synth::kLabelBody);
            }
        long score = handle * 1000000 + body;
        if (score > best_score) {
            best_score = score;
            best = i;
        }
    }

    ScenarioEntry entry;
    entry.cells = cells;
    entry.mask_index = best;
    entry.object_description = "boxy tool";
    entry.part_description = "bright handle stick";
    std::vector<ScenarioEntry> out;
    for (int r = 1; r <= cfg.keypoints_max_rounds; ++r) {
        entry.round = r;
        out.push_back(entry);
    }
    return out;
}

// ---- end-to-end synthetic evaluation ----

struct TaskEval {
    uint64_t seed = 0;
    bool distill_ok = false;
    int keypoints = 0;
    int holdout = 0;
    double detection_rate = 0.0;
    int feasible = 0;
    double endpoint_error_sum = 0.0;  // over feasible holdouts
    std::string note;
};

struct EvalReport {
    std::vector<TaskEval> tasks;
    double detection_rate = 0.0;        // mean of per-task rates, failed tasks count as 0
    double feasibility_rate = 0.0;      // feasible infers / all holdout attempts
    double mean_endpoint_error = 0.0;   // over feasible infers
    double workspace_scale = 0.0;
    std::string to_text() const;
};

inline EvalReport run_synthetic_eval(const Config& base, uint64_t seed, int n_tasks) {
    if (n_tasks < 1) throw Error("need at least one task");
    Config cfg = base;
    cfg.diffusion_horizon = base.eval_horizon;
    cfg.diffusion_timesteps = base.eval_timesteps;
    cfg.diffusion_hidden_width = base.eval_hidden_width;
    cfg.train_steps = base.eval_train_steps;
    cfg.train_batch_size = base.eval_batch_size;
    cfg.train_learning_rate = base.eval_learning_rate;
    cfg.runtime_cloud_stride = base.eval_cloud_stride;
    cfg.keypoints_neighbor_radius = base.eval_neighbor_radius;
    cfg.features_d_vis = base.eval_d_vis;
    cfg.features_lambda_geo = base.eval_lambda_geo;
    cfg.features_lambda_vis = 1.0 - base.eval_lambda_geo;

    DetectOptions opts = DetectOptions::from_config(cfg);
    Eigen::VectorXd start = parse_start_pose(cfg.infer_start_pose);
    RandomStream root(seed);

    EvalReport report;
    report.workspace_scale = 0.0;
    int total_feasible = 0, total_attempts = 0, total_endpoint_count = 0;
    double endpoint_sum = 0.0, detection_sum = 0.0;

    for (int t = 0; t < n_tasks; ++t) {
        TaskEval te;
        te.seed = root.derive(1000 + uint64_t(t)).seed();
        te.holdout = cfg.eval_holdout;
        SyntheticTask task = generate_synthetic_task(te.seed, cfg.eval_demos, cfg.eval_holdout, cfg);
        report.workspace_scale =
            (task.world.bounds.hi - task.world.bounds.lo).maxCoeff();
        total_attempts += te.holdout;

        try {
            FeaturedBundle featured = featurize_bundle(task.bundle, cfg);
            std::vector<ScenarioEntry> scenario = oracle_scenario(task, cfg);
            ScriptedBackend backend(scenario);
            LabelMaskGenerator generator(task.seed_labels, task.bundle.video[0].width,
                                         task.bundle.video[0].height);
            DistillInputs inputs;
            for (const auto& frame : task.bundle.video) inputs.video_frames.push_back(&frame);
            inputs.seed_scene = &featured.seed;
            for (const auto& scene : featured.demo_scenes) inputs.demo_scenes.push_back(&scene);
            inputs.description = task.description;
            ProposalBackends backends{&backend, &generator, &backend};
            DistillOutcome distilled = distill(inputs, backends, cfg);
            if (!distilled.success) {
                te.note = "distill failed: " + distilled.failure_reason;
                report.tasks.push_back(te);
                continue;
            }
            te.distill_ok = true;
            te.keypoints = int(distilled.skill.keypoints.size());

            std::vector<Eigen::Vector3d> canonical;
            RigidTransform seed_inv = task.seed_pose.inverse();
            for (const auto& k : distilled.skill.keypoints)
                canonical.push_back(seed_inv.apply(k.ref_position));

            std::vector<TrainingPair> dataset =
                build_training_set(distilled.skill, task.bundle, featured.demo_scenes, cfg);
            DenoiserParams model = train(dataset, cfg);

            int detect_hits = 0, detect_total = 0;
            Eigen::Vector3d arc_end = task.arc.bottomRows(1).row(0).head<3>();
            for (const auto& held : task.holdout) {
                FeaturedScene scene = featurize_scene(held.image, cfg);
                for (size_t ki = 0; ki < distilled.skill.keypoints.size(); ++ki) {
                    DetectionResult det =
                        detect(distilled.skill.keypoints[ki], scene, nullptr, opts);
                    Eigen::Vector3d expected = held.pose.apply(canonical[ki]);
                    ++detect_total;
                    if (det.matched &&
                        (det.position - expected).norm() <= cfg.eval_detect_tolerance)
                        ++detect_hits;
                }
                try {
                    InferOutcome out =
                        infer(distilled.skill, scene, model, task.world, start, cfg);
                    if (out.success) {
                        ++te.feasible;
                        Eigen::Vector3d got =
                            out.plan.execution.poses.bottomRows(1).row(0).head<3>();
                        te.endpoint_error_sum += (got - held.pose.apply(arc_end)).norm();
                    }
                } catch (const AllKeypointsNullError&) {
                }
            }
            te.detection_rate = detect_total ? double(detect_hits) / detect_total : 0.0;
        } catch (const Error& e) {
            te.note = std::string("task error: ") + e.what();
        }
        detection_sum += te.detection_rate;
        total_feasible += te.feasible;
        endpoint_sum += te.endpoint_error_sum;
        total_endpoint_count += te.feasible;
        report.tasks.push_back(te);
    }
    report.detection_rate = detection_sum / n_tasks;
    report.feasibility_rate = total_attempts ? double(total_feasible) / total_attempts : 0.0;
    report.mean_endpoint_error =
        total_endpoint_count ? endpoint_sum / total_endpoint_count : 0.0;
    return report;
}

inline std::string EvalReport::to_text() const {
    std::ostringstream out;
    out << "synthetic eval: " << tasks.size() << " tasks\n";
    for (size_t i = 0; i < tasks.size(); ++i) {
        const TaskEval& t = tasks[i];
        char line[256];
        std::snprintf(line, sizeof(line),
                      "task %02d seed=%llu keypoints=%d detection=%.3f feasible=%d/%d "
                      "endpoint=%.4f%s%s\n",
                      int(i), static_cast<unsigned long long>(t.seed), t.keypoints,
                      t.detection_rate, t.feasible, t.holdout,
                      t.feasible ? t.endpoint_error_sum / t.feasible : 0.0,
                      t.note.empty() ? "" : " note=", t.note.c_str());
        out << line;
    }
    char agg[256];
    std::snprintf(agg, sizeof(agg),
                  "aggregate detection_rate=%.4f feasibility_rate=%.4f "
                  "mean_endpoint_error=%.4f workspace_scale=%.2f\n",
                  detection_rate, feasibility_rate, mean_endpoint_error, workspace_scale);
    out << agg;
    return out.str();
}

}  // namespace kalm
