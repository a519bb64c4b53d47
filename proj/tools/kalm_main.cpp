#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "kalm/remote.hpp"  // must precede other includes in TUs that touch httplib
#include "kalm/runtime.hpp"
#include "kalm/synthetic.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using namespace kalm;

namespace {

struct GlobalOpts {
    std::string config_file;
    std::vector<std::string> overrides;  // key=value
};

Config make_config(const GlobalOpts& g) {
    Config cfg;
    if (!g.config_file.empty()) cfg.load_file(g.config_file);
    for (const auto& kv : g.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got: " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

// Demo-style scene directory (obs.*) or video-frame style (frame_0000.*).
RGBDImage load_scene_image(const std::string& dir, std::string* stem_out = nullptr) {
    for (const std::string& stem : {std::string("obs"), detail::frame_stem(0)}) {
        fs::path base = fs::path(dir) / stem;
        if (fs::exists(base.string() + ".ppm")) {
            if (stem_out) *stem_out = stem;
            return load_rgbd(base.string() + ".ppm", base.string() + ".kdep",
                             base.string() + ".cam");
        }
    }
    throw FormatError("no obs.ppm or frame_0000.ppm under " + dir);
}

int run_distill(const Config& cfg, const std::string& bundle_dir, const std::string& backend,
                const std::string& out_path, const std::string& scenario_path,
                const std::string& transcript_in, const std::string& masks_dir,
                const std::string& transcript_out) {
    SkillBundle bundle = load_bundle(bundle_dir);
    FeaturedBundle featured = featurize_bundle(bundle, cfg, bundle_dir);

    std::unique_ptr<ScriptedBackend> scripted;
    std::unique_ptr<ReplayBackend> replay;
    std::unique_ptr<RemoteBackend> remote;
    ProposalBackends backends;
    if (backend == "scripted") {
        if (scenario_path.empty()) throw ConfigError("--backend scripted needs --scenario");
        scripted = std::make_unique<ScriptedBackend>(load_scenario(scenario_path));
        backends.proposer = scripted.get();
        backends.selector = scripted.get();
    } else if (backend == "replay") {
        if (transcript_in.empty()) throw ConfigError("--backend replay needs --transcript");
        replay = std::make_unique<ReplayBackend>(BackendTranscript::load_jsonl(transcript_in));
        backends.proposer = replay.get();
        backends.selector = replay.get();
    } else if (backend == "remote") {
        if (cfg.backend_url.empty())
            throw ConfigError("--backend remote needs backend.url in the config");
        remote = std::make_unique<RemoteBackend>(RemoteConfig{
            cfg.backend_url, cfg.backend_model, cfg.backend_token_env, cfg.backend_retries});
        backends.proposer = remote.get();
        backends.selector = remote.get();
    } else {
        throw ConfigError("unknown backend: " + backend);
    }
    if (masks_dir.empty()) throw ConfigError("distillation needs --masks <dir>");
    FileMaskGenerator generator(masks_dir);
    backends.generator = &generator;

    DistillInputs inputs;
    for (const auto& frame : bundle.video) inputs.video_frames.push_back(&frame);
    inputs.seed_scene = &featured.seed;
    for (const auto& scene : featured.demo_scenes) inputs.demo_scenes.push_back(&scene);
    inputs.description = bundle.description;

    DistillOutcome outcome = distill(inputs, backends, cfg);
    if (!transcript_out.empty()) outcome.transcript.save_jsonl(transcript_out);
    if (!outcome.success) {
        std::fprintf(stderr, "distillation failed: %s (rounds used: %d)\n",
                     outcome.failure_reason.c_str(), outcome.rounds_used);
        return 1;
    }
    save_skill(outcome.skill, out_path);
    std::printf("distilled %zu keypoints in %d round(s) -> %s\n",
                outcome.skill.keypoints.size(), outcome.rounds_used, out_path.c_str());
    return 0;
}

int run_train(const Config& cfg, const std::string& skill_path, const std::string& demos_dir,
              const std::string& out_path) {
    DistilledSkill skill = load_skill(skill_path);
    SkillBundle bundle = load_bundle(demos_dir);
    FeaturedBundle featured = featurize_bundle(bundle, cfg, demos_dir);

    AssemblyReport report;
    std::vector<TrainingPair> dataset =
        build_training_set(skill, bundle, featured.demo_scenes, cfg, &report);
    for (const auto& note : report.notes) std::fprintf(stderr, "note: %s\n", note.c_str());
    if (dataset.empty()) {
        std::fprintf(stderr, "no usable demonstrations, nothing to train on\n");
        return 1;
    }

    TrainReport train_report;
    DenoiserParams model = train(dataset, cfg, &train_report);
    save_checkpoint(model, out_path);
    std::printf("trained on %zu demo(s), final loss %.6f -> %s\n", dataset.size(),
                train_report.losses.empty() ? 0.0 : train_report.losses.back(),
                out_path.c_str());
    return 0;
}

int run_infer(const Config& cfg, const std::string& scene_dir, const std::string& skill_path,
              const std::string& model_path, const std::string& world_path,
              const std::string& out_path) {
    if (!fs::exists(model_path)) throw ConfigError("model file not found: " + model_path);

    std::string stem;
    RGBDImage image = load_scene_image(scene_dir, &stem);
    std::string sidecar;
    if (cfg.features_provider == "file") {
        fs::path base = cfg.features_file_dir.empty() ? fs::path(scene_dir) / "features"
                                                      : fs::path(cfg.features_file_dir);
        sidecar = (base / (stem + ".kfea")).string();
    }
    FeaturedScene scene = featurize_scene(image, cfg, sidecar);
    DistilledSkill skill = load_skill(skill_path);
    DenoiserParams model = load_checkpoint(model_path);
    SceneWorld world = load_world(world_path);
    Eigen::VectorXd start = parse_start_pose(cfg.infer_start_pose);

    InferOutcome out = infer(skill, scene, model, world, start, cfg);
    int feasible = 0;
    for (bool v : out.plan.feasibility) feasible += v ? 1 : 0;
    if (!out.success) {
        std::fprintf(stderr, "inference failed: %s (%d sample(s) drawn, %zu tried)\n",
                     out.failure_reason.c_str(), out.samples_drawn,
                     out.plan.feasibility.size());
        return 1;
    }
    write_plan_csv(out_path, out.plan);
    std::printf("plan: sample %d of %d (%d/%zu feasible), %lld approach + %lld execution rows -> %s\n",
                out.plan.chosen_index, out.samples_drawn, feasible,
                out.plan.feasibility.size(),
                static_cast<long long>(out.plan.approach.rows()),
                static_cast<long long>(out.plan.execution.poses.rows()), out_path.c_str());
    return 0;
}

int run_eval(const Config& cfg, uint64_t seed, int n_tasks, const std::string& report_path) {
    EvalReport report = run_synthetic_eval(cfg, seed, n_tasks);
    std::string text = report.to_text();
    if (!report_path.empty()) {
        std::ofstream out(report_path);
        if (!out) throw FormatError("cannot open for write: " + report_path);
        out << text;
    }
    std::fputs(text.c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"keypoint skill distillation and trajectory diffusion toolkit"};
    app.require_subcommand(1);

    GlobalOpts global;
    app.add_option("--config", global.config_file, "config file (key = value lines)");
    app.add_option("--set", global.overrides, "override a config key (key=value, repeatable)");

    std::string bundle_dir, backend = "scripted", out_path, scenario_path, transcript_in,
                masks_dir, transcript_out;
    auto* distill_cmd =
        app.add_subcommand("distill", "distill keypoints from a skill bundle");
    distill_cmd->add_option("--skill", bundle_dir, "skill bundle directory")->required();
    distill_cmd->add_option("--backend", backend, "scripted | remote | replay");
    distill_cmd->add_option("--out", out_path, "output skill file (.kalm)")->required();
    distill_cmd->add_option("--scenario", scenario_path, "scenario file for the scripted backend");
    distill_cmd->add_option("--transcript", transcript_in, "transcript to replay (.jsonl)");
    distill_cmd->add_option("--masks", masks_dir, "directory of precomputed segmentation masks");
    distill_cmd->add_option("--transcript-out", transcript_out, "record the session transcript");

    std::string replay_bundle, replay_transcript, replay_out, replay_masks, replay_transcript_out;
    auto* replay_cmd =
        app.add_subcommand("replay", "re-run a distillation from a saved transcript");
    replay_cmd->add_option("--skill", replay_bundle, "skill bundle directory")->required();
    replay_cmd->add_option("--transcript", replay_transcript, "transcript to replay (.jsonl)")
        ->required();
    replay_cmd->add_option("--out", replay_out, "output skill file (.kalm)")->required();
    replay_cmd->add_option("--masks", replay_masks, "directory of precomputed segmentation masks");
    replay_cmd->add_option("--transcript-out", replay_transcript_out,
                           "record the session transcript");

    std::string train_skill, train_demos, train_out;
    auto* train_cmd = app.add_subcommand("train", "train the trajectory model on demonstrations");
    train_cmd->add_option("--skill", train_skill, "distilled skill file (.kalm)")->required();
    train_cmd->add_option("--demos", train_demos, "skill bundle directory with demonstrations")
        ->required();
    train_cmd->add_option("--out", train_out, "output checkpoint (.kdif)")->required();

    std::string infer_scene, infer_skill, infer_model, infer_world, infer_out;
    auto* infer_cmd = app.add_subcommand("infer", "plan a trajectory in a new scene");
    infer_cmd->add_option("--scene", infer_scene, "scene directory (obs.* or frame_0000.*)")
        ->required();
    infer_cmd->add_option("--skill", infer_skill, "distilled skill file (.kalm)")->required();
    infer_cmd->add_option("--model", infer_model, "trained checkpoint (.kdif)")->required();
    infer_cmd->add_option("--world", infer_world, "workspace geometry (world.txt)")->required();
    infer_cmd->add_option("--out", infer_out, "output plan (.csv)")->required();

    uint64_t eval_seed = 1;
    int eval_n_tasks = 20;
    std::string eval_report;
    auto* eval_cmd =
        app.add_subcommand("eval-synthetic", "closed-loop evaluation on generated tasks");
    eval_cmd->add_option("--seed", eval_seed, "master seed");
    eval_cmd->add_option("--n-tasks", eval_n_tasks, "number of generated tasks");
    eval_cmd->add_option("--report", eval_report, "write the full report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        Config cfg = make_config(global);
        if (distill_cmd->parsed())
            return run_distill(cfg, bundle_dir, backend, out_path, scenario_path, transcript_in,
                               masks_dir, transcript_out);
        if (replay_cmd->parsed())
            return run_distill(cfg, replay_bundle, "replay", replay_out, "", replay_transcript,
                               replay_masks, replay_transcript_out);
        if (train_cmd->parsed()) return run_train(cfg, train_skill, train_demos, train_out);
        if (infer_cmd->parsed())
            return run_infer(cfg, infer_scene, infer_skill, infer_model, infer_world, infer_out);
        if (eval_cmd->parsed()) return run_eval(cfg, eval_seed, eval_n_tasks, eval_report);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 2;
    } catch (const BackendError& e) {
        std::fprintf(stderr, "backend error: %s\n", e.what());
        return 3;
    } catch (const kalm::ParseError& e) {
        std::fprintf(stderr, "backend response error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
