#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kalm/errors.hpp"
#include "kalm/geometry.hpp"
#include "kalm/random.hpp"

namespace kalm {

struct SimilarityWeights {
    double lambda_vis = 0.75;
    double lambda_geo = 0.25;
};

struct FeatureField {
    Eigen::MatrixXd visual;     // N x d_vis
    Eigen::MatrixXd geometric;  // N x 33
    std::vector<uint8_t> degenerate;
};

struct NormalField {
    std::vector<Eigen::Vector3d> normals;
    std::vector<uint8_t> degenerate;
};

// PCA normals over a radius neighborhood. Oriented toward `viewpoint` when given,
// otherwise to a fixed canonical sign (+z, then +y, then +x) so results are
// view-independent.
inline NormalField compute_normals(const PointCloud& cloud, double radius,
                                   const std::optional<Eigen::Vector3d>& viewpoint = {}) {
    const int n = int(cloud.size());
    NormalField out;
    out.normals.assign(n, Eigen::Vector3d::Zero());
    out.degenerate.assign(n, 0);
    NeighborGrid grid(cloud, radius);
    for (int i = 0; i < n; ++i) {
        auto nbrs = grid.within(cloud.points[i], radius);
        if (int(nbrs.size()) < 3) {
            out.degenerate[i] = 1;
            continue;
        }
        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        for (int j : nbrs) mean += cloud.points[j];
        mean /= double(nbrs.size());
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (int j : nbrs) {
            Eigen::Vector3d d = cloud.points[j] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        const auto& ev = eig.eigenvalues();  // ascending
        if (ev(1) <= 1e-9 * std::max(ev(2), 1e-300)) {
            out.degenerate[i] = 1;  // collinear neighborhood
            continue;
        }
        Eigen::Vector3d normal = eig.eigenvectors().col(0);
        if (viewpoint) {
            if (normal.dot(*viewpoint - cloud.points[i]) < 0) normal = -normal;
        } else {
            if (normal.z() < 0 || (normal.z() == 0 && normal.y() < 0) ||
                (normal.z() == 0 && normal.y() == 0 && normal.x() < 0))
                normal = -normal;
        }
        out.normals[i] = normal;
    }
    return out;
}

namespace detail {

// Darboux-frame angle triplet for a point pair; false when undefined.
inline bool pair_features(const Eigen::Vector3d& ps, const Eigen::Vector3d& ns,
                          const Eigen::Vector3d& pt, const Eigen::Vector3d& nt, double& alpha,
                          double& phi, double& theta) {
    Eigen::Vector3d d = pt - ps;
    double dist = d.norm();
    if (dist <= 0) return false;
    d /= dist;
    Eigen::Vector3d n1 = ns, n2 = nt;
    double c1 = n1.dot(d);
    double c2 = n2.dot(d);
    if (std::abs(c1) < std::abs(c2)) {
        // source is whichever normal makes the smaller angle with the line
        std::swap(n1, n2);
        d = -d;
        c1 = -c2;
    }
    Eigen::Vector3d v = d.cross(n1);
    double vn = v.norm();
    if (vn <= 1e-12) return false;
    v /= vn;
    Eigen::Vector3d w = n1.cross(v);
    alpha = v.dot(n2);
    phi = c1;
    theta = std::atan2(w.dot(n2), n1.dot(n2));
    return true;
}

inline int angle_bin(double x, double lo, double hi) {
    int b = int((x - lo) / (hi - lo) * 11.0);
    return std::min(10, std::max(0, b));
}

}  // namespace detail

struct FpfhResult {
    Eigen::MatrixXd rows;  // N x 33
    std::vector<uint8_t> degenerate;
};

inline FpfhResult compute_fpfh(const PointCloud& cloud, double radius,
                               const NormalField& normals) {
    const int n = int(cloud.size());
    constexpr double kPi = 3.14159265358979323846;
    FpfhResult out;
    out.rows = Eigen::MatrixXd::Zero(n, 33);
    out.degenerate = normals.degenerate;

    NeighborGrid grid(cloud, radius);
    std::vector<std::vector<int>> nbrs(n);
    Eigen::MatrixXd spfh = Eigen::MatrixXd::Zero(n, 33);
    for (int i = 0; i < n; ++i) {
        if (normals.degenerate[i]) continue;
        nbrs[i] = grid.within(cloud.points[i], radius, i);
        for (int j : nbrs[i]) {
            if (normals.degenerate[j]) continue;
            double a, f, t;
            if (!detail::pair_features(cloud.points[i], normals.normals[i], cloud.points[j],
                                       normals.normals[j], a, f, t))
                continue;
            spfh(i, detail::angle_bin(a, -1.0, 1.0)) += 1.0;
            spfh(i, 11 + detail::angle_bin(f, -1.0, 1.0)) += 1.0;
            spfh(i, 22 + detail::angle_bin(t, -kPi, kPi)) += 1.0;
        }
    }

    for (int i = 0; i < n; ++i) {
        if (normals.degenerate[i]) continue;
        Eigen::VectorXd row = spfh.row(i);
        Eigen::VectorXd agg = Eigen::VectorXd::Zero(33);
        int k = 0;
        for (int j : nbrs[i]) {
            if (normals.degenerate[j]) continue;
            double w = (cloud.points[i] - cloud.points[j]).norm();
            if (w <= 0) continue;
            agg += spfh.row(j).transpose() / w;
            ++k;
        }
        if (k > 0) row += agg / double(k);
        // percentage normalization per 11-bin block
        for (int b = 0; b < 3; ++b) {
            double s = row.segment(b * 11, 11).sum();
            if (s > 0) row.segment(b * 11, 11) *= 100.0 / s;
        }
        out.rows.row(i) = row;
    }
    return out;
}

inline FpfhResult compute_fpfh(const PointCloud& cloud, double radius) {
    return compute_fpfh(cloud, radius, compute_normals(cloud, radius));
}

inline double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw ZeroVectorError("cosine similarity of zero vector");
    return a.dot(b) / (na * nb);
}

inline double combined_similarity(const Eigen::VectorXd& q_vis, const Eigen::VectorXd& q_geo,
                                  const Eigen::VectorXd& r_vis, const Eigen::VectorXd& r_geo,
                                  const SimilarityWeights& w = {}) {
    return w.lambda_vis * cosine_similarity(q_vis, r_vis) +
           w.lambda_geo * cosine_similarity(q_geo, r_geo);
}

// ---- visual feature providers ----

class VisualProvider {
  public:
    virtual ~VisualProvider() = default;
    virtual Eigen::MatrixXd features_for_scene(const RGBDImage& image,
                                               const PointCloud& cloud) const = 0;
    virtual int dim() const = 0;
};

// Random Fourier projection of (position, canonical normal, color). Depends only on
// world-frame point attributes, so the same point seen from any view gets the same row.
// Channel scales keep color dominant and position nearly irrelevant, which is what lets
// matching survive object re-poses.
class ProceduralVisualProvider : public VisualProvider {
  public:
    ProceduralVisualProvider(int d_vis, uint64_t seed, double normal_radius)
        : d_(d_vis), normal_radius_(normal_radius) {
        RandomStream rng(seed);
        w_.resize(d_, 9);
        b_.resize(d_);
        for (int i = 0; i < d_; ++i) {
            for (int j = 0; j < 9; ++j) w_(i, j) = rng.normal();
            b_(i) = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        }
    }

    Eigen::MatrixXd features_for_scene(const RGBDImage&, const PointCloud& cloud) const override {
        NormalField normals = compute_normals(cloud, normal_radius_);
        const int n = int(cloud.size());
        Eigen::MatrixXd z(n, 9);
        for (int i = 0; i < n; ++i) {
            z.row(i).segment<3>(0) = kPosScale * cloud.points[i];
            z.row(i).segment<3>(3) = kNormalScale * normals.normals[i];
            Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
            if (i < int(cloud.colors.size()))
                rgb = Eigen::Vector3d(cloud.colors[i][0], cloud.colors[i][1], cloud.colors[i][2]) /
                      255.0;
            z.row(i).segment<3>(6) = kColorScale * rgb;
        }
        Eigen::MatrixXd phase = z * w_.transpose();
        phase.rowwise() += b_.transpose();
        return phase.array().cos().matrix();
    }

    int dim() const override { return d_; }

    static constexpr double kPosScale = 0.02;
    static constexpr double kNormalScale = 0.1;
    static constexpr double kColorScale = 2.5;

  private:
    int d_;
    double normal_radius_;
    Eigen::MatrixXd w_;
    Eigen::VectorXd b_;
};

inline void write_kfea(const std::string& path, const Eigen::MatrixXd& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for write: " + path);
    out.write("KFEA", 4);
    uint32_t n = uint32_t(rows.rows()), d = uint32_t(rows.cols());
    out.write(reinterpret_cast<const char*>(&n), 4);
    out.write(reinterpret_cast<const char*>(&d), 4);
    for (uint32_t i = 0; i < n; ++i)
        for (uint32_t j = 0; j < d; ++j) {
            float v = float(rows(i, j));
            out.write(reinterpret_cast<const char*>(&v), 4);
        }
}

inline Eigen::MatrixXd read_kfea(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFeatureFileError("cannot open feature file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::string(magic, 4) != "KFEA")
        throw FormatError("bad feature file magic in " + path);
    uint32_t n = 0, d = 0;
    in.read(reinterpret_cast<char*>(&n), 4);
    in.read(reinterpret_cast<char*>(&d), 4);
    if (!in) throw FormatError("truncated feature file header in " + path);
    Eigen::MatrixXd rows(n, d);
    std::vector<float> buf(size_t(n) * d);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
    if (size_t(in.gcount()) != buf.size() * 4)
        throw FormatError("truncated feature file payload in " + path);
    for (uint32_t i = 0; i < n; ++i)
        for (uint32_t j = 0; j < d; ++j) rows(i, j) = buf[size_t(i) * d + j];
    return rows;
}

class FileVisualProvider : public VisualProvider {
  public:
    explicit FileVisualProvider(std::string path) : path_(std::move(path)) {}

    Eigen::MatrixXd features_for_scene(const RGBDImage&, const PointCloud& cloud) const override {
        Eigen::MatrixXd rows = read_kfea(path_);
        if (size_t(rows.rows()) != cloud.size())
            throw IndexMismatchError("feature file " + path_ + " has " +
                                     std::to_string(rows.rows()) + " rows for a cloud of " +
                                     std::to_string(cloud.size()));
        return rows;
    }

    int dim() const override { return int(read_kfea(path_).cols()); }

  private:
    std::string path_;
};

class AbsentVisualProvider : public VisualProvider {
  public:
    Eigen::MatrixXd features_for_scene(const RGBDImage&, const PointCloud&) const override {
        throw MissingFeatureFileError("no visual features configured for this scene");
    }
    int dim() const override { return 0; }
};

inline FeatureField compute_feature_field(const RGBDImage& image, const PointCloud& cloud,
                                          const VisualProvider& provider, double fpfh_radius,
                                          double normal_radius) {
    FeatureField field;
    Eigen::Vector3d viewpoint = image.camera.extrinsic.translation;
    NormalField normals = compute_normals(cloud, normal_radius, viewpoint);
    FpfhResult fpfh = compute_fpfh(cloud, fpfh_radius, normals);
    field.visual = provider.features_for_scene(image, cloud);
    if (size_t(field.visual.rows()) != cloud.size())
        throw IndexMismatchError("visual rows do not match cloud size");
    field.geometric = std::move(fpfh.rows);
    field.degenerate = std::move(fpfh.degenerate);
    return field;
}

}  // namespace kalm
