#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kalm/config.hpp"
#include "kalm/errors.hpp"
#include "kalm/geometry.hpp"
#include "kalm/net.hpp"
#include "kalm/random.hpp"

namespace kalm {

// ---- trajectories ----

// A pose row is [x y z | r0..r5 | grip]: position, six-number rotation, gripper.
constexpr int kPoseDim = 10;

struct TrajectorySample {
    enum class Frame { World, ObjectRelative };
    Eigen::MatrixXd poses;  // H x 10
    Frame frame = Frame::World;
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();  // meaningful when ObjectRelative
};

inline void validate_trajectory(const TrajectorySample& traj) {
    if (traj.poses.rows() < 2) throw Error("trajectory needs at least two poses");
    if (traj.poses.cols() != kPoseDim) throw ShapeMismatchError("pose rows must have 10 entries");
    if (!traj.poses.allFinite()) throw Error("trajectory contains non-finite values");
}

inline TrajectorySample to_object_frame(const TrajectorySample& traj,
                                        const std::vector<Eigen::Vector3d>& keypoints) {
    if (traj.frame != TrajectorySample::Frame::World)
        throw Error("trajectory is already object-relative");
    if (keypoints.empty()) throw Error("object frame needs at least one keypoint");
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& p : keypoints) centroid += p;
    centroid /= double(keypoints.size());
    TrajectorySample out = traj;
    out.poses.leftCols<3>().rowwise() -= centroid.transpose();
    out.frame = TrajectorySample::Frame::ObjectRelative;
    out.centroid = centroid;
    return out;
}

inline TrajectorySample to_world_frame(const TrajectorySample& traj) {
    if (traj.frame != TrajectorySample::Frame::ObjectRelative)
        throw Error("trajectory is already world-frame");
    TrajectorySample out = traj;
    out.poses.leftCols<3>().rowwise() += traj.centroid.transpose();
    out.frame = TrajectorySample::Frame::World;
    out.centroid.setZero();
    return out;
}

// Resample to a fixed horizon: positions and gripper linearly against arc
// length, rotations by interpolating the six-number form and re-orthonormalizing.
inline TrajectorySample resample_trajectory(const TrajectorySample& in, int horizon) {
    validate_trajectory(in);
    if (horizon < 2) throw Error("horizon must be at least 2");
    const int n = int(in.poses.rows());

    std::vector<double> s(n, 0.0);
    for (int i = 1; i < n; ++i)
        s[i] = s[i - 1] + (in.poses.row(i).head<3>() - in.poses.row(i - 1).head<3>()).norm();
    const double total = s[n - 1];
    const bool by_index = total <= 1e-12;  // stationary trajectory: fall back to index spacing

    TrajectorySample out = in;
    out.poses = Eigen::MatrixXd(horizon, kPoseDim);
    for (int j = 0; j < horizon; ++j) {
        double target = by_index ? double(n - 1) * j / double(horizon - 1)
                                 : total * j / double(horizon - 1);
        int seg = 0;
        if (by_index) {
            seg = std::min(int(target), n - 2);
        } else {
            while (seg < n - 2 && s[seg + 1] < target) ++seg;
        }
        double lo = by_index ? double(seg) : s[seg];
        double hi = by_index ? double(seg + 1) : s[seg + 1];
        double u = hi > lo ? std::clamp((target - lo) / (hi - lo), 0.0, 1.0) : 1.0;

        Eigen::VectorXd a = in.poses.row(seg), b = in.poses.row(seg + 1);
        Eigen::VectorXd pose(kPoseDim);
        pose.head<3>() = (1.0 - u) * a.head<3>() + u * b.head<3>();
        Rot6D blended;
        for (int c = 0; c < 6; ++c) blended.v[c] = (1.0 - u) * a(3 + c) + u * b(3 + c);
        pose.segment<6>(3) = Eigen::Map<const Eigen::Matrix<double, 6, 1>>(
            rot6d_encode(rot6d_decode(blended)).v.data());
        pose(9) = (1.0 - u) * a(9) + u * b(9);
        out.poses.row(j) = pose;
    }
    return out;
}

// ---- conditioning ----

struct ConditionRecord {
    std::string id;
    Eigen::Vector3d position;  // object-relative
    Eigen::VectorXd visual;
    Eigen::VectorXd geometric;
    bool imputed = false;
};

struct ConditionSet {
    std::vector<ConditionRecord> records;  // sorted by id

    int dim() const {
        if (records.empty()) return 0;
        return int(records.size()) * (3 + int(records[0].visual.size()) +
                                      int(records[0].geometric.size()));
    }

    Eigen::VectorXd flatten() const {
        Eigen::VectorXd out(dim());
        int at = 0;
        for (const auto& r : records) {
            out.segment<3>(at) = r.position;
            at += 3;
            out.segment(at, r.visual.size()) = r.visual;
            at += int(r.visual.size());
            out.segment(at, r.geometric.size()) = r.geometric;
            at += int(r.geometric.size());
        }
        return out;
    }
};

inline ConditionSet make_condition_set(std::vector<ConditionRecord> records) {
    if (records.empty()) throw Error("condition set needs at least one keypoint");
    std::sort(records.begin(), records.end(),
              [](const ConditionRecord& a, const ConditionRecord& b) { return a.id < b.id; });
    for (const auto& r : records)
        if (r.visual.size() != records[0].visual.size() ||
            r.geometric.size() != records[0].geometric.size())
            throw DimensionMismatchError("keypoint feature dimensions disagree");
    return ConditionSet{std::move(records)};
}

// A detection outcome for one keypoint: position absent when detection was Null.
struct KeypointObservation {
    std::string id;
    std::optional<Eigen::Vector3d> position;  // world frame
    Eigen::VectorXd visual;
    Eigen::VectorXd geometric;
};

// Condition descriptors may keep only a prefix of the visual feature vector:
// random feature coordinates are exchangeable, so a prefix is the same
// descriptor at lower resolution. Detection wants the full width for sharp
// matching; the condition can trade resolution for a smaller denoiser input.
// Zero (or an oversized count) keeps everything.
inline Eigen::VectorXd condition_visual_slice(const Eigen::VectorXd& full, int dims) {
    if (dims <= 0 || dims >= full.size()) return full;
    return full.head(dims);
}

// Builds the object-relative condition set. Undetected keypoints take the mean
// position (the centroid, so a zero offset) and mean features of detected ones.
inline std::pair<ConditionSet, Eigen::Vector3d> condition_from_observations(
    const std::vector<KeypointObservation>& observations) {
    std::vector<const KeypointObservation*> detected;
    for (const auto& o : observations)
        if (o.position) detected.push_back(&o);
    if (detected.empty()) throw AllKeypointsNullError("no keypoint detected in the scene");

    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    Eigen::VectorXd mean_vis = Eigen::VectorXd::Zero(detected[0]->visual.size());
    Eigen::VectorXd mean_geo = Eigen::VectorXd::Zero(detected[0]->geometric.size());
    for (const auto* o : detected) {
        if (o->visual.size() != mean_vis.size() || o->geometric.size() != mean_geo.size())
            throw DimensionMismatchError("keypoint feature dimensions disagree");
        centroid += *o->position;
        mean_vis += o->visual;
        mean_geo += o->geometric;
    }
    centroid /= double(detected.size());
    mean_vis /= double(detected.size());
    mean_geo /= double(detected.size());

    std::vector<ConditionRecord> records;
    for (const auto& o : observations) {
        ConditionRecord r;
        r.id = o.id;
        if (o.position) {
            r.position = *o.position - centroid;
            r.visual = o.visual;
            r.geometric = o.geometric;
        } else {
            r.position = Eigen::Vector3d::Zero();
            r.visual = mean_vis;
            r.geometric = mean_geo;
            r.imputed = true;
        }
        records.push_back(std::move(r));
    }
    return {make_condition_set(std::move(records)), centroid};
}

// ---- noise schedule ----

struct NoiseSchedule {
    int steps = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    static NoiseSchedule from_betas(std::vector<double> betas) {
        NoiseSchedule n;
        n.steps = int(betas.size());
        if (n.steps < 2) throw Error("schedule needs at least two steps");
        n.betas = std::move(betas);
        double bar = 1.0;
        for (double b : n.betas) {
            if (!(b > 0.0 && b < 1.0)) throw Error("betas must lie in (0, 1)");
            n.alphas.push_back(1.0 - b);
            bar *= 1.0 - b;
            n.alpha_bars.push_back(bar);
        }
        return n;
    }

    // Squared-cosine signal level, clipped so no single step destroys more
    // than 99.9% of the remaining signal.
    static NoiseSchedule cosine(int steps, double s = 0.008) {
        if (steps < 2) throw Error("schedule needs at least two steps");
        auto f = [s](double u) {
            double c = std::cos((u + s) / (1.0 + s) * M_PI / 2.0);
            return c * c;
        };
        const double f0 = f(0.0);
        std::vector<double> betas(steps);
        double prev = 1.0;
        for (int t = 0; t < steps; ++t) {
            double bar = f(double(t + 1) / steps) / f0;
            betas[t] = std::clamp(1.0 - bar / prev, 1e-8, 0.999);
            prev = bar;
        }
        return from_betas(std::move(betas));
    }
};

inline Eigen::MatrixXd forward_noise(const Eigen::MatrixXd& x0, int t,
                                     const NoiseSchedule& schedule,
                                     const Eigen::MatrixXd& noise) {
    if (t < 0 || t >= schedule.steps) throw Error("diffusion step out of range");
    if (noise.rows() != x0.rows() || noise.cols() != x0.cols())
        throw ShapeMismatchError("noise shape does not match the sample");
    double ab = schedule.alpha_bars[size_t(t)];
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

// ---- normalization ----

struct NormalizationStats {
    Eigen::VectorXd offset;
    Eigen::VectorXd scale;
};

namespace detail {

// Per-column mean/std over stacked rows, with a floor for flat dimensions.
inline NormalizationStats column_stats(const Eigen::MatrixXd& rows, double scale_floor,
                                       std::vector<int>* degenerate) {
    NormalizationStats st;
    st.offset = rows.colwise().mean();
    Eigen::ArrayXd var =
        (rows.rowwise() - st.offset.transpose()).array().square().colwise().mean().transpose();
    st.scale = var.sqrt().matrix();
    for (int j = 0; j < st.scale.size(); ++j)
        if (st.scale(j) < scale_floor) {
            if (degenerate) degenerate->push_back(j);
            st.scale(j) = scale_floor;
        }
    return st;
}

// Condition columns get one pooled scale per modality (position, visual,
// geometric) instead of per-column scales. Demo sets are small, so per-column
// stds on descriptor entries sit at noise level and normalizing by them blows
// sub-noise dimensions up to the same magnitude as the informative keypoint
// offsets; pooling keeps the relative structure of each modality intact.
inline NormalizationStats condition_stats(const ConditionSet& proto, const Eigen::MatrixXd& rows,
                                          double scale_floor) {
    NormalizationStats st;
    st.offset = rows.colwise().mean();
    Eigen::ArrayXd var =
        (rows.rowwise() - st.offset.transpose()).array().square().colwise().mean().transpose();
    st.scale = Eigen::VectorXd::Ones(rows.cols());
    const int d_vis = int(proto.records[0].visual.size());
    const int d_geo = int(proto.records[0].geometric.size());
    const int stride = 3 + d_vis + d_geo;
    double pos_var = 0, vis_var = 0, geo_var = 0;
    for (size_t r = 0; r < proto.records.size(); ++r) {
        int at = int(r) * stride;
        pos_var += var.segment(at, 3).sum();
        vis_var += var.segment(at + 3, d_vis).sum();
        geo_var += var.segment(at + 3 + d_vis, d_geo).sum();
    }
    const double n = double(proto.records.size());
    double s_pos = std::max(std::sqrt(pos_var / (3 * n)), scale_floor);
    double s_vis = d_vis ? std::max(std::sqrt(vis_var / (d_vis * n)), scale_floor) : 1.0;
    double s_geo = d_geo ? std::max(std::sqrt(geo_var / (d_geo * n)), scale_floor) : 1.0;
    for (size_t r = 0; r < proto.records.size(); ++r) {
        int at = int(r) * stride;
        st.scale.segment(at, 3).setConstant(s_pos);
        st.scale.segment(at + 3, d_vis).setConstant(s_vis);
        st.scale.segment(at + 3 + d_vis, d_geo).setConstant(s_geo);
    }
    return st;
}

}  // namespace detail

inline Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& rows, const NormalizationStats& st) {
    if (rows.cols() != st.offset.size())
        throw DimensionMismatchError("normalization stats do not match the data");
    return ((rows.rowwise() - st.offset.transpose()).array().rowwise() /
            st.scale.transpose().array())
        .matrix();
}

inline Eigen::MatrixXd denormalize_rows(const Eigen::MatrixXd& rows,
                                        const NormalizationStats& st) {
    if (rows.cols() != st.offset.size())
        throw DimensionMismatchError("normalization stats do not match the data");
    return ((rows.array().rowwise() * st.scale.transpose().array()).rowwise() +
            st.offset.transpose().array())
        .matrix();
}

// ---- denoiser network ----

struct DenoiserShape {
    int horizon = 48;
    int channels = kPoseDim;
    int hidden = 128;
    int time_dim = 32;
    int cond_dim = 0;
    int blocks = 3;
};

struct DenoiserParams {
    DenoiserShape shape;
    NoiseSchedule schedule;
    NormalizationStats traj_norm;  // per pose dimension
    NormalizationStats cond_norm;  // per flattened condition entry
    std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
};

// Temporal residual conv net over the horizon axis; timestep enters through a
// sinusoidal code, the condition through a two-layer perceptron, both summed
// into one context vector broadcast along time inside each block.
class Denoiser {
public:
    explicit Denoiser(const DenoiserShape& shape) : shape_(shape) {
        if (shape.cond_dim < 1) throw Error("denoiser needs a condition dimension");
        time_fc1_ = Dense(store_, "time.fc1", shape.time_dim, shape.hidden);
        time_fc2_ = Dense(store_, "time.fc2", shape.hidden, shape.hidden);
        cond_fc1_ = Dense(store_, "cond.fc1", shape.cond_dim, shape.hidden);
        cond_fc2_ = Dense(store_, "cond.fc2", shape.hidden, shape.hidden);
        in_conv_ = Conv1d(store_, "in", shape.channels, shape.hidden, 3);
        blocks_.resize(size_t(shape.blocks));
        for (int i = 0; i < shape.blocks; ++i) {
            std::string base = "block" + std::to_string(i);
            blocks_[size_t(i)].conv1 = Conv1d(store_, base + ".conv1", shape.hidden, shape.hidden, 3);
            blocks_[size_t(i)].ctx = Dense(store_, base + ".ctx", shape.hidden, shape.hidden);
            blocks_[size_t(i)].conv2 = Conv1d(store_, base + ".conv2", shape.hidden, shape.hidden, 3);
        }
        out_conv_ = Conv1d(store_, "out", shape.hidden, shape.channels, 1);
    }

    const DenoiserShape& shape() const { return shape_; }
    ParamStore& store() { return store_; }

    void init_weights(uint64_t seed) {
        RandomStream rng(seed);
        time_fc1_.init(rng);
        time_fc2_.init(rng);
        cond_fc1_.init(rng);
        cond_fc2_.init(rng);
        in_conv_.init(rng);
        for (auto& b : blocks_) {
            b.conv1.init(rng);
            b.ctx.init(rng);
            b.conv2.init(rng);
        }
        out_conv_.init(rng);
    }

    void load_values(const DenoiserParams& params) {
        auto mine = store_.tensors();
        if (params.tensors.size() != mine.size())
            throw ShapeMismatchError("checkpoint tensor count does not match the network");
        for (size_t i = 0; i < mine.size(); ++i) {
            const auto& [name, value] = params.tensors[i];
            if (name != mine[i]->name || value.rows() != mine[i]->value.rows() ||
                value.cols() != mine[i]->value.cols())
                throw ShapeMismatchError("checkpoint tensor " + name + " does not fit");
            mine[i]->value = value;
        }
    }

    void snapshot_into(DenoiserParams& params) const {
        params.shape = shape_;
        params.tensors.clear();
        for (const auto* t : store_.tensors()) params.tensors.emplace_back(t->name, t->value);
    }

    // Embeds conditions, one per column. The embedding depends only on the
    // condition, so training embeds every distinct condition in one matrix
    // pass per step and sampling embeds its single condition once; the weight
    // matrix is then streamed once instead of once per batch item.
    Eigen::MatrixXd cond_embed(const Eigen::MatrixXd& conds) {
        if (conds.rows() != shape_.cond_dim)
            throw DimensionMismatchError("condition dimension does not match the network");
        return cond_fc2_.forward(cond_act_.forward(cond_fc1_.forward(conds)));
    }

    // Backpropagates through the condition branch; columns of d_cemb pair
    // with the columns passed to the most recent cond_embed call. The raw
    // condition is an input, so its own gradient is never formed.
    void cond_embed_backward(const Eigen::MatrixXd& d_cemb) {
        cond_fc1_.backward_params(cond_act_.backward(cond_fc2_.backward(d_cemb)));
    }

    // x is channels x horizon in normalized units; returns predicted noise.
    Eigen::MatrixXd forward_with_cemb(const Eigen::MatrixXd& x, int t,
                                      const Eigen::VectorXd& cemb) {
        if (x.rows() != shape_.channels || x.cols() != shape_.horizon)
            throw ShapeMismatchError("denoiser input shape mismatch");

        Eigen::VectorXd temb = time_fc2_.forward(
            time_act_.forward(time_fc1_.forward(sinusoidal_embedding(t, shape_.time_dim))));
        Eigen::VectorXd ctx = temb + cemb;

        Eigen::MatrixXd h = in_conv_.forward(x);
        for (auto& b : blocks_) {
            Eigen::MatrixXd u = b.conv1.forward(h);
            u.colwise() += Eigen::VectorXd(b.ctx.forward(ctx));
            Eigen::MatrixXd v = b.conv2.forward(b.act1.forward(u));
            h += b.act2.forward(v);
        }
        return out_conv_.forward(h);
    }

    // Backpropagates everything but the condition branch for the most recent
    // forward_with_cemb call; returns the gradient with respect to cemb.
    Eigen::VectorXd backward_to_cemb(const Eigen::MatrixXd& d_eps) {
        Eigen::MatrixXd dh = out_conv_.backward(d_eps);
        Eigen::VectorXd d_ctx = Eigen::VectorXd::Zero(shape_.hidden);
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
            Eigen::MatrixXd dv = it->act2.backward(dh);
            Eigen::MatrixXd da = it->conv2.backward(dv);
            Eigen::MatrixXd du = it->act1.backward(da);
            d_ctx += Eigen::VectorXd(it->ctx.backward(du.rowwise().sum()));
            dh += it->conv1.backward(du);
        }
        in_conv_.backward(dh);

        Eigen::VectorXd dt = time_fc2_.backward(d_ctx);
        time_fc1_.backward_params(time_act_.backward(dt));
        return d_ctx;
    }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, int t, const Eigen::VectorXd& cond) {
        return forward_with_cemb(x, t, cond_embed(cond).col(0));
    }

    // Accumulates parameter gradients for the most recent forward call.
    void backward(const Eigen::MatrixXd& d_eps) { cond_embed_backward(backward_to_cemb(d_eps)); }

private:
    struct Block {
        Conv1d conv1;
        Dense ctx;
        SiLU act1;
        Conv1d conv2;
        SiLU act2;
    };

    DenoiserShape shape_;
    ParamStore store_;
    Dense time_fc1_, time_fc2_, cond_fc1_, cond_fc2_;
    SiLU time_act_, cond_act_;
    Conv1d in_conv_;
    std::vector<Block> blocks_;
    Conv1d out_conv_;
};

// ---- training ----

struct TrainReport {
    std::vector<double> losses;
    double initial_loss_avg = 0.0;
    double final_loss_avg = 0.0;
    std::vector<int> degenerate_traj_dims;
};

using TrainingPair = std::pair<ConditionSet, TrajectorySample>;

inline DenoiserParams train(const std::vector<TrainingPair>& dataset, const Config& cfg,
                            TrainReport* report = nullptr) {
    if (dataset.empty()) throw Error("training needs at least one pair");
    const int horizon = cfg.diffusion_horizon;
    for (const auto& [cond, traj] : dataset) {
        validate_trajectory(traj);
        if (traj.frame != TrajectorySample::Frame::ObjectRelative)
            throw Error("training trajectories must be object-relative");
        if (traj.poses.rows() != horizon)
            throw ShapeMismatchError("resample trajectories to the configured horizon first");
        if (cond.dim() != dataset[0].first.dim())
            throw DimensionMismatchError("condition dimensions disagree across the dataset");
    }

    const int n = int(dataset.size());
    Eigen::MatrixXd stacked_poses(n * horizon, kPoseDim);
    Eigen::MatrixXd stacked_conds(n, dataset[0].first.dim());
    for (int i = 0; i < n; ++i) {
        stacked_poses.middleRows(i * horizon, horizon) = dataset[size_t(i)].second.poses;
        stacked_conds.row(i) = dataset[size_t(i)].first.flatten();
    }

    TrainReport local;
    TrainReport& rep = report ? *report : local;
    DenoiserParams params;
    params.traj_norm =
        detail::column_stats(stacked_poses, cfg.diffusion_scale_floor, &rep.degenerate_traj_dims);
    params.cond_norm =
        detail::condition_stats(dataset[0].first, stacked_conds, cfg.diffusion_scale_floor);
    params.schedule = NoiseSchedule::cosine(cfg.diffusion_timesteps);

    DenoiserShape shape;
    shape.horizon = horizon;
    shape.channels = kPoseDim;
    shape.hidden = cfg.diffusion_hidden_width;
    shape.cond_dim = dataset[0].first.dim();
    Denoiser net(shape);

    RandomStream root(cfg.train_seed);
    net.init_weights(root.derive(1).seed());
    RandomStream pick_rng = root.derive(2);
    RandomStream noise_rng = root.derive(3);

    std::vector<Eigen::MatrixXd> x0;  // channels x horizon, normalized
    Eigen::MatrixXd cond_mat(stacked_conds.cols(), n);  // one distinct condition per column
    for (int i = 0; i < n; ++i) {
        x0.push_back(
            normalize_rows(dataset[size_t(i)].second.poses, params.traj_norm).transpose());
        cond_mat.col(i) = normalize_rows(stacked_conds.row(i), params.cond_norm).transpose();
    }

    const int batch = std::max(1, cfg.train_batch_size);
    const double numel = double(kPoseDim) * horizon;
    for (int step = 0; step < cfg.train_steps; ++step) {
        net.store().zero_grad();
        Eigen::MatrixXd cemb = net.cond_embed(cond_mat);
        Eigen::MatrixXd d_cemb = Eigen::MatrixXd::Zero(cemb.rows(), cemb.cols());
        double loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            int idx = int(pick_rng.bounded(uint64_t(n)));
            int t = int(pick_rng.bounded(uint64_t(params.schedule.steps)));
            Eigen::MatrixXd noise(kPoseDim, horizon);
            for (int r = 0; r < noise.rows(); ++r)
                for (int c = 0; c < noise.cols(); ++c) noise(r, c) = noise_rng.normal();
            Eigen::MatrixXd xt = forward_noise(x0[size_t(idx)], t, params.schedule, noise);
            Eigen::MatrixXd pred = net.forward_with_cemb(xt, t, cemb.col(idx));
            Eigen::MatrixXd diff = pred - noise;
            loss += diff.squaredNorm() / numel;
            d_cemb.col(idx) += net.backward_to_cemb(2.0 * diff / numel);
        }
        net.cond_embed_backward(d_cemb);
        net.store().scale_grad(1.0 / batch);
        double decay = 0.5 * (1.0 + std::cos(M_PI * double(step) / double(cfg.train_steps)));
        net.store().adam_step(cfg.train_learning_rate * decay, step);
        if (cfg.train_ema_decay > 0.0) net.store().ema_update(cfg.train_ema_decay);
        rep.losses.push_back(loss / batch);
    }
    if (cfg.train_ema_decay > 0.0) net.store().apply_ema();

    int head = std::min<int>(10, int(rep.losses.size()));
    int tail = std::max<int>(1, int(rep.losses.size()) / 10);
    if (head > 0) {
        rep.initial_loss_avg = 0.0;
        for (int i = 0; i < head; ++i) rep.initial_loss_avg += rep.losses[size_t(i)];
        rep.initial_loss_avg /= head;
        rep.final_loss_avg = 0.0;
        for (int i = 0; i < tail; ++i)
            rep.final_loss_avg += rep.losses[rep.losses.size() - 1 - size_t(i)];
        rep.final_loss_avg /= tail;
    }

    net.snapshot_into(params);
    return params;
}

// ---- sampling ----

// Bound on predicted clean samples, in normalized units (data sits within a
// few standard deviations of zero by construction).
constexpr double kSampleClip = 6.0;

inline std::vector<TrajectorySample> sample(const DenoiserParams& params,
                                            const ConditionSet& condition, int count,
                                            uint64_t seed) {
    if (condition.dim() != params.shape.cond_dim)
        throw DimensionMismatchError("condition does not match the trained network");
    if (count < 1) throw Error("sample count must be positive");

    Denoiser net(params.shape);
    net.load_values(params);
    Eigen::VectorXd cond =
        normalize_rows(condition.flatten().transpose(), params.cond_norm).transpose();
    Eigen::VectorXd cemb = net.cond_embed(cond).col(0);

    const NoiseSchedule& sched = params.schedule;
    const int h = params.shape.horizon;
    std::vector<TrajectorySample> out;
    RandomStream root(seed);
    for (int i = 0; i < count; ++i) {
        RandomStream rng = root.derive(uint64_t(i));
        Eigen::MatrixXd x(kPoseDim, h);
        for (int r = 0; r < x.rows(); ++r)
            for (int c = 0; c < x.cols(); ++c) x(r, c) = rng.normal();

        for (int t = sched.steps - 1; t >= 0; --t) {
            Eigen::MatrixXd eps = net.forward_with_cemb(x, t, cemb);
            double ab = sched.alpha_bars[size_t(t)];
            // Work through the predicted clean sample and clamp it: the raw
            // epsilon form divides prediction error by sqrt(alpha), which is
            // ruinous at the clipped last step where beta approaches 1.
            Eigen::MatrixXd x0 = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
            x0 = x0.cwiseMax(-kSampleClip).cwiseMin(kSampleClip);
            if (t > 0) {
                double a = sched.alphas[size_t(t)];
                double beta = sched.betas[size_t(t)];
                double ab_prev = sched.alpha_bars[size_t(t) - 1];
                double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
                double c1 = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
                double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
                Eigen::MatrixXd z(kPoseDim, h);
                for (int r = 0; r < z.rows(); ++r)
                    for (int c = 0; c < z.cols(); ++c) z(r, c) = rng.normal();
                x = c0 * x0 + c1 * x + sigma * z;
            } else {
                x = x0;
            }
        }

        TrajectorySample traj;
        traj.poses = denormalize_rows(x.transpose(), params.traj_norm);
        traj.frame = TrajectorySample::Frame::ObjectRelative;
        out.push_back(std::move(traj));
    }
    return out;
}

// ---- checkpoint format ----

namespace detail {

inline void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t take_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint truncated");
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

inline void put_f64(std::ostream& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline double take_f64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("checkpoint truncated");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= uint64_t(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void put_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline float take_f32(std::istream& in) {
    uint32_t bits = take_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void put_vecd(std::ostream& out, const Eigen::VectorXd& v) {
    for (int i = 0; i < v.size(); ++i) put_f64(out, v(i));
}

inline Eigen::VectorXd take_vecd(std::istream& in, int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = take_f64(in);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const DenoiserParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for write: " + path);
    out.write("KDIF", 4);
    detail::put_u32(out, 1);  // format version
    detail::put_u32(out, uint32_t(params.shape.horizon));
    detail::put_u32(out, uint32_t(params.shape.channels));
    detail::put_u32(out, uint32_t(params.shape.hidden));
    detail::put_u32(out, uint32_t(params.shape.time_dim));
    detail::put_u32(out, uint32_t(params.shape.cond_dim));
    detail::put_u32(out, uint32_t(params.shape.blocks));
    detail::put_u32(out, uint32_t(params.schedule.steps));
    detail::put_vecd(out, params.traj_norm.offset);
    detail::put_vecd(out, params.traj_norm.scale);
    detail::put_vecd(out, params.cond_norm.offset);
    detail::put_vecd(out, params.cond_norm.scale);
    for (double b : params.schedule.betas) detail::put_f64(out, b);
    detail::put_u32(out, uint32_t(params.tensors.size()));
    for (const auto& [name, value] : params.tensors) {
        detail::put_u32(out, uint32_t(name.size()));
        out.write(name.data(), std::streamsize(name.size()));
        detail::put_u32(out, uint32_t(value.rows()));
        detail::put_u32(out, uint32_t(value.cols()));
    }
    for (const auto& [name, value] : params.tensors)
        for (int r = 0; r < value.rows(); ++r)
            for (int c = 0; c < value.cols(); ++c) detail::put_f32(out, float(value(r, c)));
}

inline DenoiserParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "KDIF")
        throw FormatError("not a denoiser checkpoint: " + path);
    uint32_t version = detail::take_u32(in);
    if (version != 1) throw FormatError("unsupported checkpoint version");

    DenoiserParams params;
    params.shape.horizon = int(detail::take_u32(in));
    params.shape.channels = int(detail::take_u32(in));
    params.shape.hidden = int(detail::take_u32(in));
    params.shape.time_dim = int(detail::take_u32(in));
    params.shape.cond_dim = int(detail::take_u32(in));
    params.shape.blocks = int(detail::take_u32(in));
    int steps = int(detail::take_u32(in));
    params.traj_norm.offset = detail::take_vecd(in, params.shape.channels);
    params.traj_norm.scale = detail::take_vecd(in, params.shape.channels);
    params.cond_norm.offset = detail::take_vecd(in, params.shape.cond_dim);
    params.cond_norm.scale = detail::take_vecd(in, params.shape.cond_dim);
    std::vector<double> betas(size_t(steps), 0.0);
    for (auto& b : betas) b = detail::take_f64(in);
    params.schedule = NoiseSchedule::from_betas(std::move(betas));

    uint32_t count = detail::take_u32(in);
    std::vector<std::pair<std::string, std::pair<int, int>>> manifest;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t len = detail::take_u32(in);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw FormatError("checkpoint truncated");
        int rows = int(detail::take_u32(in));
        int cols = int(detail::take_u32(in));
        manifest.emplace_back(std::move(name), std::make_pair(rows, cols));
    }
    for (const auto& [name, dims] : manifest) {
        Eigen::MatrixXd value(dims.first, dims.second);
        for (int r = 0; r < dims.first; ++r)
            for (int c = 0; c < dims.second; ++c) value(r, c) = double(detail::take_f32(in));
        params.tensors.emplace_back(name, std::move(value));
    }
    return params;
}

}  // namespace kalm
