#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kalm/config.hpp"
#include "kalm/errors.hpp"
#include "kalm/random.hpp"

namespace kalm {

struct Aabb {
    Eigen::Vector3d lo = Eigen::Vector3d::Zero();
    Eigen::Vector3d hi = Eigen::Vector3d::Zero();

    bool contains(const Eigen::Vector3d& p) const {
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }
};

struct SceneWorld {
    Aabb bounds;
    std::vector<Aabb> obstacles;

    bool in_bounds(const Eigen::Vector3d& p) const { return bounds.contains(p); }

    bool in_collision(const Eigen::Vector3d& p) const {
        for (const auto& b : obstacles)
            if (b.contains(p)) return true;
        return false;
    }

    bool free_at(const Eigen::Vector3d& p) const { return in_bounds(p) && !in_collision(p); }

    // Every interpolated point at the given resolution must be free.
    bool segment_free(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                      double resolution = 0.01) const {
        double len = (b - a).norm();
        int steps = std::max(1, int(std::ceil(len / resolution)));
        for (int i = 0; i <= steps; ++i) {
            if (!free_at(a + (b - a) * (double(i) / steps))) return false;
        }
        return true;
    }
};

inline void validate_world(const SceneWorld& world) {
    if (!((world.bounds.hi.array() > world.bounds.lo.array()).all()))
        throw Error("workspace bounds are degenerate");
    for (const auto& b : world.obstacles) {
        if (!((b.hi.array() >= b.lo.array()).all())) throw Error("obstacle box is inverted");
        if (!world.bounds.contains(b.lo) || !world.bounds.contains(b.hi))
            throw Error("obstacle box leaves the workspace bounds");
    }
}

// Plain text: one `bounds` line and any number of `box` lines, six scalars each.
inline SceneWorld load_world(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open world file: " + path);
    SceneWorld world;
    bool have_bounds = false;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string trimmed = line.substr(line.find_first_not_of(" \t") == std::string::npos
                                              ? line.size()
                                              : line.find_first_not_of(" \t"));
        if (trimmed.empty() || trimmed[0] == '#') continue;
        std::istringstream ss(trimmed);
        std::string kind;
        ss >> kind;
        Aabb box;
        ss >> box.lo.x() >> box.lo.y() >> box.lo.z() >> box.hi.x() >> box.hi.y() >> box.hi.z();
        if (!ss)
            throw FormatError("world file line " + std::to_string(line_no) +
                              ": expected six scalars");
        if (kind == "bounds") {
            world.bounds = box;
            have_bounds = true;
        } else if (kind == "box") {
            world.obstacles.push_back(box);
        } else {
            throw FormatError("world file line " + std::to_string(line_no) + ": unknown entry '" +
                              kind + "'");
        }
    }
    if (!have_bounds) throw FormatError("world file has no bounds line: " + path);
    validate_world(world);
    return world;
}

inline void save_world(const SceneWorld& world, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open for write: " + path);
    out.precision(17);
    out << "bounds " << world.bounds.lo.x() << " " << world.bounds.lo.y() << " "
        << world.bounds.lo.z() << " " << world.bounds.hi.x() << " " << world.bounds.hi.y() << " "
        << world.bounds.hi.z() << "\n";
    for (const auto& b : world.obstacles)
        out << "box " << b.lo.x() << " " << b.lo.y() << " " << b.lo.z() << " " << b.hi.x() << " "
            << b.hi.y() << " " << b.hi.z() << "\n";
}

struct PlanConfig {
    double step = 0.05;
    int max_iterations = 20000;
    int smoothing_iterations = 200;
    double collision_resolution = 0.01;
    uint64_t seed = 17;

    static PlanConfig from_config(const Config& cfg) {
        PlanConfig p;
        p.step = cfg.rrt_step;
        p.max_iterations = cfg.rrt_max_iterations;
        p.smoothing_iterations = cfg.rrt_smoothing_iterations;
        p.seed = cfg.rrt_seed;
        return p;
    }
};

namespace detail {

struct RrtTree {
    std::vector<Eigen::Vector3d> points;
    std::vector<int> parents;

    int nearest(const Eigen::Vector3d& q) const {
        int best = 0;
        double best_d = (points[0] - q).squaredNorm();
        for (int i = 1; i < int(points.size()); ++i) {
            double d = (points[i] - q).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }

    int add(const Eigen::Vector3d& p, int parent) {
        points.push_back(p);
        parents.push_back(parent);
        return int(points.size()) - 1;
    }

    std::vector<Eigen::Vector3d> chain_from(int index) const {
        std::vector<Eigen::Vector3d> out;
        for (int i = index; i >= 0; i = parents[size_t(i)]) out.push_back(points[size_t(i)]);
        return out;  // node-to-root order
    }
};

enum class ExtendResult { Trapped, Advanced, Reached };

inline ExtendResult extend_tree(RrtTree& tree, const Eigen::Vector3d& target,
                                const SceneWorld& world, const PlanConfig& cfg, int& new_index) {
    int near = tree.nearest(target);
    Eigen::Vector3d from = tree.points[size_t(near)];
    Eigen::Vector3d delta = target - from;
    double dist = delta.norm();
    bool reaches = dist <= cfg.step;
    Eigen::Vector3d next = reaches ? target : Eigen::Vector3d(from + delta * (cfg.step / dist));
    if (!world.free_at(next) || !world.segment_free(from, next, cfg.collision_resolution))
        return ExtendResult::Trapped;
    new_index = tree.add(next, near);
    return reaches ? ExtendResult::Reached : ExtendResult::Advanced;
}

}  // namespace detail

// Bi-directional RRT over end-effector positions with shortcut smoothing.
// Returns the start-to-goal polyline, or nothing once the iteration budget is
// spent.
inline std::optional<std::vector<Eigen::Vector3d>> birrt_plan(const Eigen::Vector3d& start,
                                                              const Eigen::Vector3d& goal,
                                                              const SceneWorld& world,
                                                              const PlanConfig& cfg = {}) {
    validate_world(world);
    if (!world.free_at(start)) throw StartInCollisionError("start pose is not free");
    if (!world.free_at(goal)) throw GoalInCollisionError("goal pose is not free");

    detail::RrtTree from_start, from_goal;
    from_start.add(start, -1);
    from_goal.add(goal, -1);
    detail::RrtTree* grow = &from_start;
    detail::RrtTree* meet = &from_goal;

    RandomStream rng(cfg.seed);
    std::optional<std::vector<Eigen::Vector3d>> path;

    for (int it = 0; it < cfg.max_iterations && !path; ++it) {
        Eigen::Vector3d q = rng.in_box(world.bounds.lo, world.bounds.hi);
        int grown = -1;
        if (detail::extend_tree(*grow, q, world, cfg, grown) != detail::ExtendResult::Trapped) {
            // connect: march the other tree toward the fresh node until blocked
            const Eigen::Vector3d& target = grow->points[size_t(grown)];
            int reached = -1;
            detail::ExtendResult r;
            do {
                r = detail::extend_tree(*meet, target, world, cfg, reached);
            } while (r == detail::ExtendResult::Advanced);

            if (r == detail::ExtendResult::Reached) {
                std::vector<Eigen::Vector3d> a = grow->chain_from(grown);    // node..root
                std::vector<Eigen::Vector3d> b = meet->chain_from(reached);  // node..root
                std::vector<Eigen::Vector3d> joined;
                if (grow == &from_start) {
                    joined.assign(a.rbegin(), a.rend());
                    joined.insert(joined.end(), b.begin() + 1, b.end());
                } else {
                    joined.assign(b.rbegin(), b.rend());
                    joined.insert(joined.end(), a.begin() + 1, a.end());
                }
                path = std::move(joined);
            }
        }
        std::swap(grow, meet);
    }
    if (!path) return std::nullopt;

    // random shortcutting, then a greedy pruning pass so trivially straight
    // corridors end up straight
    std::vector<Eigen::Vector3d>& p = *path;
    for (int it = 0; it < cfg.smoothing_iterations && p.size() > 2; ++it) {
        int i = int(rng.bounded(uint64_t(p.size() - 1)));
        int j = int(rng.bounded(uint64_t(p.size())));
        if (j < i) std::swap(i, j);
        if (j - i < 2) continue;
        if (world.segment_free(p[size_t(i)], p[size_t(j)], cfg.collision_resolution))
            p.erase(p.begin() + i + 1, p.begin() + j);
    }
    std::vector<Eigen::Vector3d> pruned{p.front()};
    size_t at = 0;
    while (at + 1 < p.size()) {
        size_t next = at + 1;
        for (size_t far = p.size() - 1; far > next; --far)
            if (world.segment_free(p[at], p[far], cfg.collision_resolution)) {
                next = far;
                break;
            }
        pruned.push_back(p[next]);
        at = next;
    }
    return pruned;
}

inline double path_length(const std::vector<Eigen::Vector3d>& path) {
    double len = 0.0;
    for (size_t i = 1; i < path.size(); ++i) len += (path[i] - path[i - 1]).norm();
    return len;
}

}  // namespace kalm
