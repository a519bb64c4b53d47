#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kalm/runtime.hpp"
#include "kalm/synthetic.hpp"

using namespace kalm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("kalm_rt_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// every 1cm-interpolated point of the polyline, checked independently of the planner
bool path_clear(const std::vector<Eigen::Vector3d>& path, const SceneWorld& world) {
    for (size_t i = 1; i < path.size(); ++i) {
        double len = (path[i] - path[i - 1]).norm();
        int steps = std::max(1, int(std::ceil(len / 0.01)));
        for (int s = 0; s <= steps; ++s) {
            Eigen::Vector3d p = path[i - 1] + (path[i] - path[i - 1]) * (double(s) / steps);
            if (!world.in_bounds(p) || world.in_collision(p)) return false;
        }
    }
    return true;
}

SceneWorld cube_world() {
    SceneWorld w;
    w.bounds = {{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
    return w;
}

// wall at x in [-0.02, 0.02] with a rectangular hole around y in [0.10, 0.24],
// z in [-0.06, 0.08]
SceneWorld gap_world() {
    SceneWorld w = cube_world();
    w.obstacles = {
        {{-0.02, -0.5, -0.5}, {0.02, 0.10, 0.5}},
        {{-0.02, 0.24, -0.5}, {0.02, 0.5, 0.5}},
        {{-0.02, 0.10, -0.5}, {0.02, 0.24, -0.06}},
        {{-0.02, 0.10, 0.08}, {0.02, 0.24, 0.5}},
    };
    return w;
}

// hollow 0.02-thick shell around [0.1, 0.3]^3; (0.2, 0.2, 0.2) sits inside
SceneWorld sealed_world() {
    SceneWorld w = cube_world();
    w.obstacles = {
        {{0.1, 0.1, 0.1}, {0.3, 0.3, 0.12}}, {{0.1, 0.1, 0.28}, {0.3, 0.3, 0.3}},
        {{0.1, 0.1, 0.12}, {0.12, 0.3, 0.28}}, {{0.28, 0.1, 0.12}, {0.3, 0.3, 0.28}},
        {{0.12, 0.1, 0.12}, {0.28, 0.12, 0.28}}, {{0.12, 0.28, 0.12}, {0.28, 0.3, 0.28}},
    };
    return w;
}

}  // namespace

TEST_CASE("world files round trip and validate") {
    SceneWorld w;
    w.bounds = {{-0.45, -0.45, -0.03}, {0.45, 0.45, 0.55}};
    w.obstacles = {{{-0.32, -0.32, -0.025}, {0.32, 0.32, 0.0}},
                   {{0.1, 0.1, 0.1}, {0.2, 0.25, 0.3}}};
    fs::path dir = temp_dir("world");
    fs::path p = dir / "world.txt";
    save_world(w, p.string());
    SceneWorld back = load_world(p.string());
    REQUIRE(back.bounds.lo == w.bounds.lo);
    REQUIRE(back.bounds.hi == w.bounds.hi);
    REQUIRE(back.obstacles.size() == 2);
    REQUIRE(back.obstacles[1].hi == w.obstacles[1].hi);

    SECTION("comments and blank lines are ignored") {
        std::ofstream out(dir / "commented.txt");
        out << "# workspace\n\nbounds -1 -1 -1 1 1 1\nbox 0 0 0 0.5 0.5 0.5\n";
        out.close();
        SceneWorld c = load_world((dir / "commented.txt").string());
        REQUIRE(c.obstacles.size() == 1);
    }
    SECTION("parse errors") {
        std::ofstream(dir / "nobounds.txt") << "box 0 0 0 1 1 1\n";
        REQUIRE_THROWS_AS(load_world((dir / "nobounds.txt").string()), FormatError);
        std::ofstream(dir / "short.txt") << "bounds 0 0 0 1 1\n";
        REQUIRE_THROWS_AS(load_world((dir / "short.txt").string()), FormatError);
        std::ofstream(dir / "unknown.txt") << "bounds 0 0 0 1 1 1\nwall 0 0 0 1 1 1\n";
        REQUIRE_THROWS_AS(load_world((dir / "unknown.txt").string()), FormatError);
    }
    SECTION("validation rejects degenerate bounds and escaping boxes") {
        SceneWorld bad;
        bad.bounds = {{0, 0, 0}, {1, 1, 0}};
        REQUIRE_THROWS_AS(validate_world(bad), Error);
        bad.bounds = {{0, 0, 0}, {1, 1, 1}};
        bad.obstacles = {{{0.5, 0.5, 0.5}, {1.5, 0.6, 0.6}}};
        REQUIRE_THROWS_AS(validate_world(bad), Error);
    }
}

TEST_CASE("birrt finds straight paths in an empty world") {
    SceneWorld w = cube_world();
    Eigen::Vector3d start(-0.3, -0.2, 0.1), goal(0.25, 0.3, 0.4);
    PlanConfig pc;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        pc.seed = seed;
        auto path = birrt_plan(start, goal, w, pc);
        REQUIRE(path.has_value());
        REQUIRE(path->front() == start);
        REQUIRE(path->back() == goal);
        REQUIRE(path_length(*path) <= 1.05 * (goal - start).norm());
        REQUIRE(path_clear(*path, w));
    }
}

TEST_CASE("birrt threads a wall gap with collision-free output") {
    SceneWorld w = gap_world();
    Eigen::Vector3d start(-0.35, 0.0, 0.0), goal(0.35, 0.05, 0.0);
    PlanConfig pc;
    for (uint64_t seed : {11ull, 12ull, 13ull}) {
        pc.seed = seed;
        auto path = birrt_plan(start, goal, w, pc);
        REQUIRE(path.has_value());
        REQUIRE(path->front() == start);
        REQUIRE(path->back() == goal);
        REQUIRE(path_clear(*path, w));
    }
}

TEST_CASE("birrt reports no path out of a sealed shell") {
    SceneWorld w = sealed_world();
    PlanConfig pc;
    pc.max_iterations = 1500;
    for (uint64_t seed : {5ull, 6ull}) {
        pc.seed = seed;
        auto path = birrt_plan({-0.4, -0.4, -0.4}, {0.2, 0.2, 0.2}, w, pc);
        REQUIRE(!path.has_value());
    }
}

TEST_CASE("birrt rejects infeasible endpoints") {
    SceneWorld w = cube_world();
    w.obstacles = {{{0.0, 0.0, 0.0}, {0.2, 0.2, 0.2}}};
    REQUIRE_THROWS_AS(birrt_plan({0.1, 0.1, 0.1}, {0.4, 0.4, 0.4}, w, {}),
                      StartInCollisionError);
    REQUIRE_THROWS_AS(birrt_plan({0.4, 0.4, 0.4}, {0.1, 0.1, 0.1}, w, {}),
                      GoalInCollisionError);
    REQUIRE_THROWS_AS(birrt_plan({0.9, 0.0, 0.0}, {0.4, 0.4, 0.4}, w, {}),
                      StartInCollisionError);
}

TEST_CASE("trajectory csv keeps the pinned header and survives a write cycle") {
    fs::path dir = temp_dir("traj");
    Eigen::VectorXd times(3);
    times << 0.0, 0.125, 0.25;  // dyadic: exact at 9 significant digits
    Eigen::MatrixXd poses(3, kPoseDim);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < kPoseDim; ++j) poses(i, j) = (i * kPoseDim + j) / 256.0;
    fs::path p = dir / "traj.csv";
    write_traj_csv(p.string(), times, poses);

    std::ifstream in(p);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == std::string(kTrajCsvHeader));

    auto [rt, rp] = read_traj_csv(p.string());
    REQUIRE(rt == times);
    REQUIRE(rp == poses);

    SECTION("rejects foreign headers and ragged rows") {
        std::ofstream(dir / "bad1.csv") << "time,x,y,z,r1,r2,r3,r4,r5,r6,grip\n";
        REQUIRE_THROWS_AS(read_traj_csv((dir / "bad1.csv").string()), FormatError);
        std::ofstream(dir / "bad2.csv") << kTrajCsvHeader << "\n1,2,3\n";
        REQUIRE_THROWS_AS(read_traj_csv((dir / "bad2.csv").string()), FormatError);
        std::ofstream(dir / "bad3.csv") << kTrajCsvHeader << "\n0,1,2,3,4,5,6,7,8,9,10,11\n";
        REQUIRE_THROWS_AS(read_traj_csv((dir / "bad3.csv").string()), FormatError);
    }
}

TEST_CASE("skill bundles round trip through the directory layout") {
    Config cfg;
    cfg.synthetic_image_width = 96;
    cfg.synthetic_image_height = 72;
    cfg.synthetic_surface_spacing = 0.014;
    SyntheticTask task = generate_synthetic_task(42, 2, 0, cfg);

    fs::path dir = temp_dir("bundle");
    fs::path a = dir / "a";
    save_bundle(task.bundle, a.string());
    SkillBundle back = load_bundle(a.string());

    REQUIRE(back.description == task.bundle.description);
    REQUIRE(back.video.size() == task.bundle.video.size());
    REQUIRE(back.demos.size() == task.bundle.demos.size());
    REQUIRE(back.video[0].color == task.bundle.video[0].color);
    REQUIRE(back.video[0].depth == task.bundle.video[0].depth);
    REQUIRE(back.video[0].camera.extrinsic.translation ==
            task.bundle.video[0].camera.extrinsic.translation);

    // second write cycle is byte-identical file by file
    fs::path b = dir / "b";
    save_bundle(back, b.string());
    SkillBundle again = load_bundle(b.string());
    fs::path c = dir / "c";
    save_bundle(again, c.string());
    int compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(b)) {
        if (!entry.is_regular_file()) continue;
        fs::path rel = fs::relative(entry.path(), b);
        REQUIRE(file_bytes(entry.path()) == file_bytes(c / rel));
        ++compared;
    }
    REQUIRE(compared == 1 + 3 * 3 + 2 * 4);  // description + video files + demo files

    SECTION("missing description fails") {
        REQUIRE_THROWS_AS(load_bundle((dir / "nowhere").string()), FormatError);
    }
}

TEST_CASE("phase segmentation splits at the first pose near a keypoint") {
    const int n = 20;
    Eigen::MatrixXd poses = Eigen::MatrixXd::Zero(n, kPoseDim);
    for (int i = 0; i < n; ++i) {
        // rows 0..11 approach from 0.31 m down to 0.20 m, row 12 jumps inside
        double d = i < 12 ? 0.31 - 0.01 * i : 0.09 - 0.002 * (i - 12);
        poses(i, 0) = d;
        poses(i, 3) = 1;
        poses(i, 7) = 1;
    }
    Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(n, 0.0, 1.9);
    std::vector<Eigen::Vector3d> kps = {Eigen::Vector3d::Zero(), {1.0, 1.0, 1.0}};

    PhaseSplit split = segment_phases(poses, times, kps, 0.10);
    REQUIRE(split.split_index == 12);
    REQUIRE(!split.warning);
    REQUIRE(split.approach.rows() == 12);
    REQUIRE(split.execution.rows() == 8);

    SECTION("partition-complete and order-preserving") {
        Eigen::MatrixXd glued(n, kPoseDim);
        glued << split.approach, split.execution;
        REQUIRE(glued == poses);
        Eigen::VectorXd glued_t(n);
        glued_t << split.approach_times, split.execution_times;
        REQUIRE(glued_t == times);
    }
    SECTION("idempotent on its own execution piece") {
        PhaseSplit again =
            segment_phases(split.execution, split.execution_times, kps, 0.10);
        REQUIRE(again.split_index == 0);
        REQUIRE(again.approach.rows() == 0);
        REQUIRE(again.execution == split.execution);
    }
    SECTION("no qualifying pose leaves everything in execution with a warning") {
        PhaseSplit far = segment_phases(poses, times, {{5.0, 5.0, 5.0}}, 0.10);
        REQUIRE(far.warning);
        REQUIRE(far.approach.rows() == 0);
        REQUIRE(far.execution == poses);
        REQUIRE(far.split_index == n);
    }
    SECTION("validation") {
        REQUIRE_THROWS_AS(segment_phases(poses, times, {}, 0.10), Error);
        REQUIRE_THROWS_AS(segment_phases(poses, times.head(5), kps, 0.10),
                          ShapeMismatchError);
    }
}

TEST_CASE("synthetic tasks are bitwise deterministic in the seed") {
    Config cfg;
    cfg.synthetic_image_width = 96;
    cfg.synthetic_image_height = 72;
    cfg.synthetic_surface_spacing = 0.014;
    SyntheticTask a = generate_synthetic_task(42, 2, 1, cfg);
    SyntheticTask b = generate_synthetic_task(42, 2, 1, cfg);

    REQUIRE(a.bundle.video[0].color == b.bundle.video[0].color);
    REQUIRE(a.bundle.video[0].depth == b.bundle.video[0].depth);
    REQUIRE(a.seed_labels == b.seed_labels);
    for (size_t d = 0; d < a.bundle.demos.size(); ++d) {
        REQUIRE(a.bundle.demos[d].poses == b.bundle.demos[d].poses);
        REQUIRE(a.bundle.demos[d].times == b.bundle.demos[d].times);
        REQUIRE(a.bundle.demos[d].observation.color == b.bundle.demos[d].observation.color);
        REQUIRE(a.bundle.demos[d].observation.depth == b.bundle.demos[d].observation.depth);
    }
    REQUIRE(a.holdout[0].image.depth == b.holdout[0].image.depth);
    REQUIRE(a.holdout[0].pose.translation == b.holdout[0].pose.translation);

    SyntheticTask c = generate_synthetic_task(43, 2, 1, cfg);
    REQUIRE(a.bundle.video[0].depth != c.bundle.video[0].depth);
}

TEST_CASE("synthetic ground truth rides rigidly with the object pose") {
    Config cfg;
    cfg.synthetic_image_width = 96;
    cfg.synthetic_image_height = 72;
    cfg.synthetic_surface_spacing = 0.014;
    SyntheticTask task = generate_synthetic_task(9, 3, 0, cfg);
    const int approach_rows = int(task.bundle.demos[0].poses.rows()) - int(task.arc.rows());
    REQUIRE(approach_rows > 0);

    for (size_t d = 0; d < task.bundle.demos.size(); ++d) {
        const RigidTransform& pose = task.demo_poses[d];
        RigidTransform inv = pose.inverse();
        const Eigen::MatrixXd& poses = task.bundle.demos[d].poses;

        SECTION("execution rows reproduce the canonical arc (demo " + std::to_string(d) + ")") {
            for (int j = 0; j < task.arc.rows(); ++j) {
                Eigen::Vector3d world = poses.row(approach_rows + j).head<3>();
                REQUIRE((inv.apply(world) - task.arc.row(j).head<3>().transpose()).norm() <
                        1e-9);
                Rot6D wr, cr;
                for (int c = 0; c < 6; ++c) {
                    wr.v[size_t(c)] = poses(approach_rows + j, 3 + c);
                    cr.v[size_t(c)] = task.arc(j, 3 + c);
                }
                Eigen::Matrix3d expected = pose.rotation * rot6d_decode(cr);
                REQUIRE((rot6d_decode(wr) - expected).norm() < 1e-9);
                REQUIRE(poses(approach_rows + j, 9) == task.arc(j, 9));
            }
        }
        SECTION("markers map to the same object-frame points (demo " + std::to_string(d) + ")") {
            for (const auto& m : task.gt_keypoints) {
                Eigen::Vector3d world = pose.apply(m);
                REQUIRE((inv.apply(world) - m).norm() < 1e-12);
            }
        }
        SECTION("approach stays clear of the phase threshold (demo " + std::to_string(d) + ")") {
            for (int i = 0; i < approach_rows; ++i) {
                Eigen::Vector3d p = poses.row(i).head<3>();
                for (const auto& m : task.gt_keypoints)
                    REQUIRE((p - pose.apply(m)).norm() > 0.10 + 0.02);
            }
            // first execution row is inside the threshold, so the split lands there
            PhaseSplit split = segment_phases(poses, task.bundle.demos[d].times,
                                              {pose.apply(task.gt_keypoints[0])}, 0.10);
            REQUIRE(split.split_index == approach_rows);
        }
    }
}

namespace {

// Distill + training-set assembly over a small synthetic task; shared by two tests.
struct SmallTaskFixture {
    Config cfg;
    SyntheticTask task;
    FeaturedBundle featured;
    DistillOutcome distilled;

    SmallTaskFixture() {
        cfg.synthetic_image_width = 128;
        cfg.synthetic_image_height = 96;
        cfg.runtime_cloud_stride = 1;
        cfg.keypoints_neighbor_radius = 0.012;
        cfg.keypoints_candidate_count = 12;
        cfg.diffusion_horizon = 8;
        task = generate_synthetic_task(7, 3, 0, cfg);
        featured = featurize_bundle(task.bundle, cfg);
        std::vector<ScenarioEntry> scenario = oracle_scenario(task, cfg);
        REQUIRE(scenario.size() == size_t(cfg.keypoints_max_rounds));
        ScriptedBackend backend(scenario);
        LabelMaskGenerator generator(task.seed_labels, task.bundle.video[0].width,
                                     task.bundle.video[0].height);
        DistillInputs inputs;
        for (const auto& frame : task.bundle.video) inputs.video_frames.push_back(&frame);
        inputs.seed_scene = &featured.seed;
        for (const auto& scene : featured.demo_scenes) inputs.demo_scenes.push_back(&scene);
        inputs.description = task.description;
        ProposalBackends backends{&backend, &generator, &backend};
        distilled = distill(inputs, backends, cfg);
    }
};

SmallTaskFixture& small_task() {
    static SmallTaskFixture fixture;
    return fixture;
}

}  // namespace

TEST_CASE("distillation succeeds on a synthetic task with the oracle scenario") {
    SmallTaskFixture& f = small_task();
    REQUIRE(f.distilled.success);
    REQUIRE(!f.distilled.skill.keypoints.empty());

    // distilled keypoints sit on the object, not the table; their canonical
    // positions must land inside the object's bounding volume
    RigidTransform inv = f.task.seed_pose.inverse();
    for (const auto& k : f.distilled.skill.keypoints) {
        Eigen::Vector3d canonical = inv.apply(k.ref_position);
        bool on_body = (canonical.array() >= (synth::body_lo().array() - 0.02)).all() &&
                       (canonical.array() <= (synth::body_hi().array() + 0.02)).all();
        bool on_handle = (canonical.array() >= (synth::handle_lo().array() - 0.02)).all() &&
                         (canonical.array() <= (synth::handle_hi().array() + 0.02)).all();
        REQUIRE((on_body || on_handle));
    }
}

TEST_CASE("training pairs assemble from skill matches") {
    SmallTaskFixture& f = small_task();
    REQUIRE(f.distilled.success);
    AssemblyReport report;
    std::vector<TrainingPair> dataset = build_training_set(
        f.distilled.skill, f.task.bundle, f.featured.demo_scenes, f.cfg, &report);
    REQUIRE(dataset.size() + report.skipped_demos.size() == f.task.bundle.demos.size());
    REQUIRE(!dataset.empty());
    for (const auto& [cond, traj] : dataset) {
        REQUIRE(traj.frame == TrajectorySample::Frame::ObjectRelative);
        REQUIRE(traj.poses.rows() == f.cfg.diffusion_horizon);
        REQUIRE(cond.dim() == dataset[0].first.dim());
        REQUIRE(cond.records.size() == f.distilled.skill.keypoints.size());
    }

    SECTION("conditions are object-relative: detected records average to zero") {
        for (const auto& [cond, traj] : dataset) {
            Eigen::Vector3d sum = Eigen::Vector3d::Zero();
            int detected = 0;
            for (const auto& r : cond.records)
                if (!r.imputed) {
                    sum += r.position;
                    ++detected;
                }
            REQUIRE(detected > 0);
            REQUIRE((sum / detected).norm() < 1e-9);
        }
    }
}

namespace {

// Hand-built scene for inference: 26 points on a shifted lattice, identity
// feature rows so each keypoint matches exactly one point.
struct InferFixture {
    Config cfg;
    FeaturedScene scene;
    FeaturedScene orthogonal_scene;  // features disjoint from the skill's
    DistilledSkill skill;
    DenoiserParams model;
    ConditionSet cond;
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    Eigen::VectorXd start_pose;

    static FeaturedScene lattice_scene(int feature_offset) {
        const int n = 26, dim = 52;
        PointCloud cloud;
        for (int i = 0; i < n; ++i)
            cloud.points.push_back({0.28 + 0.02 * (i % 5), -0.04 + 0.02 * (i / 5), 0.12});
        FeatureField field;
        field.visual = Eigen::MatrixXd::Zero(n, dim);
        field.geometric = Eigen::MatrixXd::Zero(n, dim);
        for (int i = 0; i < n; ++i) {
            field.visual(i, feature_offset + i) = 1.0;
            field.geometric(i, feature_offset + i) = 1.0;
        }
        RGBDImage img;
        img.width = 2;
        img.height = 2;
        img.color.assign(12, 0);
        img.depth.assign(4, 1.0f);
        return make_featured_scene(img, std::move(cloud), std::move(field));
    }

    InferFixture() {
        cfg.infer_n_samples = 4;
        cfg.diffusion_horizon = 8;
        cfg.diffusion_timesteps = 50;
        cfg.diffusion_hidden_width = 32;
        cfg.train_steps = 6000;
        cfg.train_batch_size = 8;
        cfg.train_learning_rate = 2e-3;
        scene = lattice_scene(0);
        orthogonal_scene = lattice_scene(26);
        start_pose = parse_start_pose(cfg.infer_start_pose);

        for (int ki : {0, 7}) {
            Keypoint k;
            k.id = ki == 0 ? "kp_00" : "kp_01";
            k.ref_position = scene.cloud.points[size_t(ki)];
            k.ref_visual = scene.features.visual.row(ki);
            k.ref_geometric = scene.features.geometric.row(ki);
            skill.keypoints.push_back(std::move(k));
        }

        std::vector<KeypointObservation> obs;
        std::vector<Eigen::Vector3d> detected;
        for (const auto& k : skill.keypoints) {
            obs.push_back({k.id, k.ref_position, k.ref_visual, k.ref_geometric});
            detected.push_back(k.ref_position);
        }
        std::tie(cond, centroid) = condition_from_observations(obs);

        auto line = [&](const Eigen::Vector3d& from, const Eigen::Vector3d& to) {
            TrajectorySample t;
            t.poses = Eigen::MatrixXd::Zero(cfg.diffusion_horizon, kPoseDim);
            for (int i = 0; i < cfg.diffusion_horizon; ++i) {
                double u = double(i) / (cfg.diffusion_horizon - 1);
                t.poses.row(i).head<3>() = (1 - u) * from + u * to;
                t.poses(i, 3) = 1;
                t.poses(i, 7) = 1;
                t.poses(i, 9) = u;
            }
            t.frame = TrajectorySample::Frame::World;
            return to_object_frame(t, detected);
        };
        std::vector<TrainingPair> dataset;
        for (double sx : {0.20, 0.28, 0.36, 0.44})
            for (double sy : {-0.10, 0.06})
                dataset.emplace_back(cond, line({sx, sy, 0.30}, {0.30, 0.00, 0.12}));
        model = train(dataset, cfg);
    }
};

InferFixture& infer_fixture() {
    static InferFixture fixture;
    return fixture;
}

}  // namespace

TEST_CASE("infer returns the first feasible sample in an empty world") {
    InferFixture& f = infer_fixture();
    SceneWorld world;
    world.bounds = {{-0.5, -0.5, -0.05}, {0.7, 0.7, 0.6}};

    InferOutcome out = infer(f.skill, f.scene, f.model, world, f.start_pose, f.cfg);
    REQUIRE(out.success);
    REQUIRE(out.plan.chosen_index == 0);
    REQUIRE(out.plan.feasibility == std::vector<bool>{true});
    REQUIRE(out.samples_drawn == f.cfg.infer_n_samples);
    REQUIRE(out.plan.execution.frame == TrajectorySample::Frame::World);

    SECTION("the plan's trajectory is exactly the sampled one") {
        std::vector<TrajectorySample> samples =
            sample(f.model, f.cond, f.cfg.infer_n_samples, f.cfg.infer_seed);
        TrajectorySample expected = samples[0];
        expected.centroid = f.centroid;
        expected = to_world_frame(expected);
        REQUIRE(out.plan.execution.poses == expected.poses);
    }
    SECTION("approach endpoint meets the execution start") {
        Eigen::VectorXd last = out.plan.approach.bottomRows(1).transpose();
        Eigen::VectorXd exec0 = out.plan.execution.poses.row(0).transpose();
        REQUIRE((last - exec0).cwiseAbs().maxCoeff() < 1e-6);
        REQUIRE(out.plan.approach.row(0).head<3>().transpose() == f.start_pose.head<3>());
    }
    SECTION("approach path is collision-free at 1 cm") {
        std::vector<Eigen::Vector3d> pts;
        for (int i = 0; i < out.plan.approach.rows(); ++i)
            pts.push_back(out.plan.approach.row(i).head<3>());
        REQUIRE(path_clear(pts, world));
    }
    SECTION("plan csv writes approach plus execution") {
        fs::path dir = temp_dir("plan");
        write_plan_csv((dir / "plan.csv").string(), out.plan);
        auto [pt, pp] = read_traj_csv((dir / "plan.csv").string());
        REQUIRE(pp.rows() == out.plan.approach.rows() + out.plan.execution.poses.rows());
    }
}

TEST_CASE("infer skips a blocked first sample and reports both verdicts") {
    InferFixture& f = infer_fixture();
    std::vector<TrajectorySample> samples =
        sample(f.model, f.cond, f.cfg.infer_n_samples, f.cfg.infer_seed);
    Eigen::Vector3d s0 = samples[0].poses.row(0).head<3>() + f.centroid.transpose();
    Eigen::Vector3d s1 = samples[1].poses.row(0).head<3>() + f.centroid.transpose();
    REQUIRE((s0 - s1).cwiseAbs().maxCoeff() > 1e-3);  // construction sanity

    SceneWorld world;
    world.bounds = {{-0.5, -0.5, -0.05}, {0.7, 0.7, 0.6}};
    double half = std::min(0.45 * (s0 - s1).cwiseAbs().maxCoeff(), 0.02);
    Aabb box{(s0.array() - half).matrix(), (s0.array() + half).matrix()};
    REQUIRE(!box.contains(s1));
    REQUIRE(!box.contains(f.start_pose.head<3>()));
    world.obstacles = {box};

    InferOutcome out = infer(f.skill, f.scene, f.model, world, f.start_pose, f.cfg);
    REQUIRE(out.success);
    REQUIRE(out.plan.chosen_index == 1);  // the second sample
    REQUIRE(out.plan.feasibility == std::vector<bool>{false, true});
    TrajectorySample expected = samples[1];
    expected.centroid = f.centroid;
    expected = to_world_frame(expected);
    REQUIRE(out.plan.execution.poses == expected.poses);
}

TEST_CASE("infer fails honestly") {
    InferFixture& f = infer_fixture();
    SceneWorld world;
    world.bounds = {{-0.5, -0.5, -0.05}, {0.7, 0.7, 0.6}};

    SECTION("no keypoint detected anywhere") {
        REQUIRE_THROWS_AS(
            infer(f.skill, f.orthogonal_scene, f.model, world, f.start_pose, f.cfg),
            AllKeypointsNullError);
    }
    SECTION("every sampled start sealed off is Exhausted") {
        std::vector<TrajectorySample> samples =
            sample(f.model, f.cond, f.cfg.infer_n_samples, f.cfg.infer_seed);
        Eigen::Vector3d lo(1e9, 1e9, 1e9), hi(-1e9, -1e9, -1e9);
        for (const auto& s : samples) {
            Eigen::Vector3d p = s.poses.row(0).head<3>() + f.centroid.transpose();
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        Aabb box{(lo.array() - 0.01).matrix(), (hi.array() + 0.01).matrix()};
        REQUIRE(!box.contains(f.start_pose.head<3>()));
        SceneWorld sealed = world;
        sealed.obstacles = {box};
        InferOutcome out = infer(f.skill, f.scene, f.model, sealed, f.start_pose, f.cfg);
        REQUIRE(!out.success);
        REQUIRE(out.failure_reason == "Exhausted");
        REQUIRE(int(out.plan.feasibility.size()) == f.cfg.infer_n_samples);
        for (bool v : out.plan.feasibility) REQUIRE(!v);
        REQUIRE(out.plan.chosen_index == -1);
    }
}
