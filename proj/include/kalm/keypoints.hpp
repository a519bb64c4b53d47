#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kalm/config.hpp"
#include "kalm/errors.hpp"
#include "kalm/features.hpp"
#include "kalm/geometry.hpp"
#include "kalm/proposals.hpp"
#include "kalm/random.hpp"

namespace kalm {

// A scene ready for matching: cloud, aligned features, and cached unit-normalized
// feature rows so scoring reduces to matrix-vector products.
struct FeaturedScene {
    RGBDImage image;
    PointCloud cloud;
    FeatureField features;
    Eigen::MatrixXd vis_unit;  // zero rows stay zero
    Eigen::MatrixXd geo_unit;
};

inline Eigen::MatrixXd row_normalized(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (int i = 0; i < out.rows(); ++i) {
        double n = out.row(i).norm();
        if (n > 0) out.row(i) /= n;
    }
    return out;
}

inline FeaturedScene make_featured_scene(RGBDImage image, PointCloud cloud, FeatureField features) {
    FeaturedScene scene;
    scene.image = std::move(image);
    scene.cloud = std::move(cloud);
    scene.features = std::move(features);
    scene.vis_unit = row_normalized(scene.features.visual);
    scene.geo_unit = row_normalized(scene.features.geometric);
    return scene;
}

struct NeighborRecord {
    Eigen::Vector3d offset;  // neighbor position minus keypoint position
    Eigen::VectorXd visual;
    Eigen::VectorXd geometric;
};

struct Keypoint {
    std::string id;
    Eigen::Vector3d ref_position = Eigen::Vector3d::Zero();
    Eigen::VectorXd ref_visual;
    Eigen::VectorXd ref_geometric;
    std::vector<NeighborRecord> neighbor_group;
};

struct DetectionResult {
    enum class NullReason { None, BelowThreshold, NoConsensus, EmptyScene };
    bool matched = false;
    NullReason reason = NullReason::None;
    int index = -1;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    double score = 0.0;
    double consensus_fraction = 0.0;
};

struct DetectOptions {
    SimilarityWeights weights{};
    double tau_sim = 0.6;
    double proximity = 0.03;  // consensus radius

    static DetectOptions from_config(const Config& cfg) {
        DetectOptions o;
        o.weights = {cfg.features_lambda_vis, cfg.features_lambda_geo};
        o.tau_sim = cfg.keypoints_tau_sim;
        o.proximity = cfg.keypoints_consensus_radius;
        return o;
    }
};

namespace detail {

// Scores for a batch of query rows against every scene point: N x m.
inline Eigen::MatrixXd batch_scores(const FeaturedScene& scene, const Eigen::MatrixXd& q_vis,
                                    const Eigen::MatrixXd& q_geo, const SimilarityWeights& w,
                                    const Eigen::VectorXd* point_weights) {
    Eigen::MatrixXd qv = row_normalized(q_vis);
    Eigen::MatrixXd qg = row_normalized(q_geo);
    for (int i = 0; i < qv.rows(); ++i)
        if (qv.row(i).norm() == 0 || qg.row(i).norm() == 0)
            throw ZeroVectorError("query feature row has zero norm");
    Eigen::MatrixXd s = w.lambda_vis * (scene.vis_unit * qv.transpose()) +
                        w.lambda_geo * (scene.geo_unit * qg.transpose());
    if (point_weights) s.array().colwise() *= point_weights->array();
    return s;
}

inline int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = i;
    return best;
}

}  // namespace detail

inline DetectionResult detect(const Keypoint& k, const FeaturedScene& scene,
                              const Eigen::VectorXd* mask_weights = nullptr,
                              const DetectOptions& opts = {}) {
    const int n = int(scene.cloud.size());
    if (n == 0) throw EmptySceneError("cannot detect in an empty scene");
    if (mask_weights) {
        if (mask_weights->size() != n)
            throw DimensionMismatchError("mask weights not aligned with scene points");
        for (int i = 0; i < n; ++i)
            if (!((*mask_weights)(i) > 0.0 && (*mask_weights)(i) <= 1.0))
                throw Error("mask weights must lie in (0, 1]");
    }

    const int m = 1 + int(k.neighbor_group.size());
    Eigen::MatrixXd q_vis(m, k.ref_visual.size());
    Eigen::MatrixXd q_geo(m, k.ref_geometric.size());
    q_vis.row(0) = k.ref_visual;
    q_geo.row(0) = k.ref_geometric;
    for (int j = 0; j < m - 1; ++j) {
        q_vis.row(j + 1) = k.neighbor_group[j].visual;
        q_geo.row(j + 1) = k.neighbor_group[j].geometric;
    }

    Eigen::MatrixXd scores = detail::batch_scores(scene, q_vis, q_geo, opts.weights, mask_weights);

    DetectionResult result;
    int best = detail::argmax_lowest(scores.col(0));
    result.index = best;
    result.score = scores(best, 0);
    result.position = scene.cloud.points[best];
    if (result.score < opts.tau_sim) {
        result.reason = DetectionResult::NullReason::BelowThreshold;
        return result;
    }

    int voters = 0, agree = 0;
    for (int j = 0; j < m - 1; ++j) {
        int nb = detail::argmax_lowest(scores.col(j + 1));
        if (scores(nb, j + 1) < opts.tau_sim) continue;  // failed match, not a voter
        ++voters;
        Eigen::Vector3d expected = result.position + k.neighbor_group[j].offset;
        if ((scene.cloud.points[nb] - expected).norm() <= opts.proximity) ++agree;
    }
    if (voters == 0) {
        // empty/failed voter pool: consensus check is vacuous
        result.matched = true;
        result.consensus_fraction = 1.0;
        return result;
    }
    double fraction = double(agree) / double(voters);
    if (fraction > 0.5) {
        result.matched = true;
        result.consensus_fraction = fraction;
    } else {
        result.reason = DetectionResult::NullReason::NoConsensus;
        result.consensus_fraction = fraction;
    }
    return result;
}

// Uniform sample without replacement of scene points inside the ball around p0.
// Points carrying zero feature rows cannot vote, so they are not sampled.
inline std::vector<NeighborRecord> sample_neighbor_group(const FeaturedScene& scene,
                                                         const Eigen::Vector3d& p0, int count,
                                                         double radius, uint64_t seed) {
    if (radius <= 0) throw Error("neighbor radius must be positive");
    std::vector<int> pool;
    for (int i = 0; i < int(scene.cloud.size()); ++i) {
        double d = (scene.cloud.points[i] - p0).norm();
        if (d == 0.0 || d > radius) continue;
        if (scene.vis_unit.row(i).norm() == 0 || scene.geo_unit.row(i).norm() == 0) continue;
        pool.push_back(i);
    }
    RandomStream rng(seed);
    for (size_t i = 0; i + 1 < pool.size(); ++i) {
        size_t j = i + size_t(rng.bounded(uint64_t(pool.size() - i)));
        std::swap(pool[i], pool[j]);
    }
    if (int(pool.size()) > count) pool.resize(count);

    std::vector<NeighborRecord> out;
    for (int idx : pool)
        out.push_back({scene.cloud.points[idx] - p0, scene.features.visual.row(idx),
                       scene.features.geometric.row(idx)});
    return out;
}

struct ConsistencyReport {
    struct PerCandidate {
        double match_fraction = 0.0;
        bool pass = false;
        std::vector<std::optional<Eigen::Vector3d>> matches;  // one slot per demo
    };
    std::vector<PerCandidate> candidates;
    double passing_fraction = 0.0;
};

inline ConsistencyReport verify_consistency(const std::vector<Keypoint>& candidates,
                                            const std::vector<const FeaturedScene*>& demos,
                                            double delta, const DetectOptions& opts = {}) {
    if (demos.empty()) throw Error("consistency check needs at least one demonstration");
    if (delta < 0.0 || delta >= 1.0) throw Error("delta must lie in [0, 1)");
    ConsistencyReport report;
    const double n = double(demos.size());
    int passing = 0;
    for (const Keypoint& k : candidates) {
        ConsistencyReport::PerCandidate pc;
        int matched = 0;
        for (const FeaturedScene* demo : demos) {
            DetectionResult r = detect(k, *demo, nullptr, opts);
            if (r.matched) {
                ++matched;
                pc.matches.emplace_back(r.position);
            } else {
                pc.matches.emplace_back(std::nullopt);
            }
        }
        pc.match_fraction = matched / n;
        // epsilon guards the 7/10 >= 0.7 boundary against representation error
        pc.pass = matched >= (1.0 - delta) * n - 1e-9;
        passing += pc.pass;
        report.candidates.push_back(std::move(pc));
    }
    report.passing_fraction =
        candidates.empty() ? 0.0 : double(passing) / double(candidates.size());
    return report;
}

struct DistilledSkill {
    std::vector<Keypoint> keypoints;
    std::map<int, std::map<std::string, Eigen::Vector3d>> matches;  // demo -> id -> position
    int proposal_rounds = 0;
    int chosen_mask = -1;
    std::string object_description;
    std::string part_description;
};

struct DistillInputs {
    std::vector<const RGBDImage*> video_frames;  // seeding video, first frame leads
    const FeaturedScene* seed_scene = nullptr;   // featured first frame
    std::vector<const FeaturedScene*> demo_scenes;
    std::string description;
};

struct ProposalBackends {
    RegionProposer* proposer = nullptr;
    MaskGenerator* generator = nullptr;
    MaskSelector* selector = nullptr;
};

struct DistillOutcome {
    bool success = false;
    std::string failure_reason;
    DistilledSkill skill;
    BackendTranscript transcript;
    int rounds_used = 0;
};

inline DistillOutcome distill(const DistillInputs& inputs, const ProposalBackends& backends,
                              const Config& cfg) {
    if (!inputs.seed_scene || inputs.video_frames.empty())
        throw Error("distillation needs a seeding video with a featured first frame");
    if (inputs.demo_scenes.empty()) throw Error("distillation needs at least one demonstration");
    if (inputs.description.empty()) throw Error("distillation needs a task description");

    const FeaturedScene& seed = *inputs.seed_scene;
    DetectOptions opts = DetectOptions::from_config(cfg);
    DistillOutcome outcome;
    GridOverlay grid = overlay_grid(seed.image, {cfg.proposals_grid_rows, cfg.proposals_grid_cols});

    for (int round = 1; round <= cfg.keypoints_max_rounds; ++round) {
        outcome.rounds_used = round;
        RegionProposal proposal = backends.proposer->propose(inputs.video_frames,
                                                             inputs.description, grid,
                                                             outcome.transcript);
        auto query_pixels = query_points_for_cells(proposal.cells, grid,
                                                   cfg.proposals_query_density);
        std::vector<MaskCandidate> masks = backends.generator->generate(seed.image, query_pixels);
        masks = nms_masks(masks, cfg.proposals_nms_iou, cfg.proposals_nms_confidence_floor);
        if (masks.empty()) continue;  // nothing survived, re-prompt
        int mask_idx = backends.selector->select(seed.image, masks, outcome.transcript);
        const MaskCandidate& mask = masks[mask_idx];

        // candidate pool: in-mask points with usable feature rows
        std::vector<int> pool;
        for (int i = 0; i < int(seed.cloud.size()); ++i) {
            int px = seed.cloud.pixel_indices.empty() ? -1 : seed.cloud.pixel_indices[i];
            if (px < 0) continue;
            if (!mask.contains(px % seed.image.width, px / seed.image.width)) continue;
            if (seed.vis_unit.row(i).norm() == 0 || seed.geo_unit.row(i).norm() == 0) continue;
            pool.push_back(i);
        }
        if (pool.empty()) continue;

        PointCloud pool_cloud;
        for (int i : pool) pool_cloud.points.push_back(seed.cloud.points[i]);
        int n_c = std::min(cfg.keypoints_candidate_count, int(pool.size()));
        std::vector<int> fps = farthest_point_sample(pool_cloud, n_c, 0);

        std::vector<Keypoint> candidates;
        RandomStream seed_rng(cfg.keypoints_seed);
        for (size_t ci = 0; ci < fps.size(); ++ci) {
            int scene_idx = pool[fps[ci]];
            Keypoint k;
            char buf[16];
            std::snprintf(buf, sizeof(buf), "kp_%02d", int(ci));
            k.id = buf;
            k.ref_position = seed.cloud.points[scene_idx];
            k.ref_visual = seed.features.visual.row(scene_idx);
            k.ref_geometric = seed.features.geometric.row(scene_idx);
            k.neighbor_group = sample_neighbor_group(seed, k.ref_position,
                                                     cfg.keypoints_neighbor_count,
                                                     cfg.keypoints_neighbor_radius,
                                                     seed_rng.derive(uint64_t(ci)).seed());
            candidates.push_back(std::move(k));
        }

        ConsistencyReport report =
            verify_consistency(candidates, inputs.demo_scenes, cfg.keypoints_delta, opts);
        if (report.passing_fraction < cfg.keypoints_gamma - 1e-9) continue;

        outcome.success = true;
        DistilledSkill& skill = outcome.skill;
        skill.proposal_rounds = round;
        skill.chosen_mask = mask_idx;
        skill.object_description = proposal.object_description;
        skill.part_description = proposal.part_description;
        for (size_t ci = 0; ci < candidates.size(); ++ci) {
            if (!report.candidates[ci].pass) continue;
            skill.keypoints.push_back(candidates[ci]);
            for (size_t di = 0; di < inputs.demo_scenes.size(); ++di)
                if (report.candidates[ci].matches[di])
                    skill.matches[int(di)][candidates[ci].id] =
                        *report.candidates[ci].matches[di];
        }
        return outcome;
    }
    outcome.failure_reason = "ExhaustedRounds";
    return outcome;
}

// ---- skill serialization ----

namespace detail {

inline nlohmann::json vec3_json(const Eigen::Vector3d& v) {
    return nlohmann::json::array({v.x(), v.y(), v.z()});
}

inline Eigen::Vector3d vec3_from(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json vecx_json(const Eigen::VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Eigen::VectorXd vecx_from(const nlohmann::json& j) {
    Eigen::VectorXd v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v(int(i)) = j[i].get<double>();
    return v;
}

}  // namespace detail

inline void save_skill(const DistilledSkill& skill, const std::string& path) {
    nlohmann::json kps = nlohmann::json::array();
    for (const auto& k : skill.keypoints) {
        nlohmann::json nbrs = nlohmann::json::array();
        for (const auto& n : k.neighbor_group)
            nbrs.push_back(nlohmann::json{{"offset", detail::vec3_json(n.offset)},
                                          {"visual", detail::vecx_json(n.visual)},
                                          {"geometric", detail::vecx_json(n.geometric)}});
        kps.push_back(nlohmann::json{{"id", k.id},
                                     {"position", detail::vec3_json(k.ref_position)},
                                     {"visual", detail::vecx_json(k.ref_visual)},
                                     {"geometric", detail::vecx_json(k.ref_geometric)},
                                     {"neighbors", nbrs}});
    }
    nlohmann::json matches = nlohmann::json::object();
    for (const auto& [demo, per_kp] : skill.matches) {
        nlohmann::json m = nlohmann::json::object();
        for (const auto& [id, pos] : per_kp) m[id] = detail::vec3_json(pos);
        matches[std::to_string(demo)] = m;
    }
    nlohmann::json doc{{"keypoints", kps},
                       {"matches", matches},
                       {"provenance",
                        {{"rounds", skill.proposal_rounds},
                         {"mask", skill.chosen_mask},
                         {"object", skill.object_description},
                         {"part", skill.part_description}}}};
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open for write: " + path);
    out << doc.dump(2) << "\n";
}

inline DistilledSkill load_skill(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open skill file: " + path);
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw FormatError("skill file is not valid structured text: " + path);
    DistilledSkill skill;
    for (const auto& jk : doc.value("keypoints", nlohmann::json::array())) {
        Keypoint k;
        k.id = jk.value("id", "");
        k.ref_position = detail::vec3_from(jk.at("position"));
        k.ref_visual = detail::vecx_from(jk.at("visual"));
        k.ref_geometric = detail::vecx_from(jk.at("geometric"));
        for (const auto& jn : jk.value("neighbors", nlohmann::json::array()))
            k.neighbor_group.push_back({detail::vec3_from(jn.at("offset")),
                                        detail::vecx_from(jn.at("visual")),
                                        detail::vecx_from(jn.at("geometric"))});
        skill.keypoints.push_back(std::move(k));
    }
    if (doc.contains("matches"))
        for (auto it = doc["matches"].begin(); it != doc["matches"].end(); ++it) {
            int demo = std::stoi(it.key());
            for (auto kt = it.value().begin(); kt != it.value().end(); ++kt)
                skill.matches[demo][kt.key()] = detail::vec3_from(kt.value());
        }
    if (doc.contains("provenance")) {
        const auto& p = doc["provenance"];
        skill.proposal_rounds = p.value("rounds", 0);
        skill.chosen_mask = p.value("mask", -1);
        skill.object_description = p.value("object", "");
        skill.part_description = p.value("part", "");
    }
    return skill;
}

}  // namespace kalm
