#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kalm/errors.hpp"

namespace kalm {

struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

    RigidTransform compose(const RigidTransform& other) const {
        return {rotation * other.rotation, rotation * other.translation + translation};
    }

    RigidTransform inverse() const {
        Eigen::Matrix3d rt = rotation.transpose();
        return {rt, -(rt * translation)};
    }

    bool is_valid(double tol = 1e-9) const {
        Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
        return err.norm() <= tol && rotation.determinant() > 0.0;
    }

    static RigidTransform identity() { return {}; }
};

struct Rot6D {
    std::array<double, 6> v{1, 0, 0, 0, 1, 0};
};

// First two columns of R, flattened column-wise.
inline Rot6D rot6d_encode(const Eigen::Matrix3d& r) {
    return {{r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)}};
}

inline Eigen::Matrix3d rot6d_decode(const Rot6D& r) {
    Eigen::Vector3d a(r.v[0], r.v[1], r.v[2]);
    Eigen::Vector3d b(r.v[3], r.v[4], r.v[5]);
    if (a.norm() <= 1e-8 || b.norm() <= 1e-8)
        throw DegenerateRotationError("rot6d column near zero");
    Eigen::Vector3d c1 = a.normalized();
    Eigen::Vector3d u = b - c1.dot(b) * c1;
    if (u.norm() <= 1e-8)
        throw DegenerateRotationError("rot6d columns are parallel");
    Eigen::Vector3d c2 = u.normalized();
    Eigen::Matrix3d out;
    out.col(0) = c1;
    out.col(1) = c2;
    out.col(2) = c1.cross(c2);
    return out;
}

struct Camera {
    double fx = 1, fy = 1, cx = 0, cy = 0;
    RigidTransform extrinsic;  // camera-to-world
};

struct RGBDImage {
    int width = 0, height = 0;
    std::vector<uint8_t> color;  // 3 bytes per pixel, row-major
    std::vector<float> depth;    // meters; non-positive or non-finite = invalid
    Camera camera;

    bool in_bounds(int u, int v) const { return u >= 0 && u < width && v >= 0 && v < height; }
    float depth_at(int u, int v) const { return depth[size_t(v) * width + u]; }
    bool valid_at(int u, int v) const {
        float d = depth_at(u, v);
        return std::isfinite(d) && d > 0.0f;
    }
    const uint8_t* color_at(int u, int v) const { return &color[(size_t(v) * width + u) * 3]; }
};

struct PointCloud {
    std::vector<Eigen::Vector3d> points;  // world frame
    std::vector<std::array<uint8_t, 3>> colors;
    std::vector<int> pixel_indices;  // linear source-pixel index, -1 when synthetic

    size_t size() const { return points.size(); }
};

inline std::optional<Eigen::Vector3d> deproject(const RGBDImage& image, int u, int v) {
    if (!image.in_bounds(u, v))
        throw OutOfBoundsError("pixel (" + std::to_string(u) + "," + std::to_string(v) +
                               ") outside " + std::to_string(image.width) + "x" +
                               std::to_string(image.height));
    if (!image.valid_at(u, v)) return std::nullopt;
    double d = image.depth_at(u, v);
    Eigen::Vector3d cam_pt(d * (u - image.camera.cx) / image.camera.fx,
                           d * (v - image.camera.cy) / image.camera.fy, d);
    return image.camera.extrinsic.apply(cam_pt);
}

// World point back through the pinhole; nullopt when behind the camera.
inline std::optional<std::array<double, 3>> project(const Camera& cam, const Eigen::Vector3d& world) {
    Eigen::Vector3d p = cam.extrinsic.inverse().apply(world);
    if (p.z() <= 1e-9) return std::nullopt;
    return std::array<double, 3>{cam.fx * p.x() / p.z() + cam.cx,
                                 cam.fy * p.y() / p.z() + cam.cy, p.z()};
}

inline PointCloud cloud_from_rgbd(const RGBDImage& image, int stride = 1) {
    if (stride < 1) throw Error("stride must be >= 1");
    PointCloud cloud;
    for (int v = 0; v < image.height; v += stride) {
        for (int u = 0; u < image.width; u += stride) {
            if (!image.valid_at(u, v)) continue;
            auto p = deproject(image, u, v);
            cloud.points.push_back(*p);
            const uint8_t* c = image.color_at(u, v);
            cloud.colors.push_back({c[0], c[1], c[2]});
            cloud.pixel_indices.push_back(v * image.width + u);
        }
    }
    return cloud;
}

// Greedy max-min sampling; ties broken by lowest index.
inline std::vector<int> farthest_point_sample(const PointCloud& cloud, int count, int seed_index) {
    const int n = int(cloud.size());
    if (count > n)
        throw CountExceedsCloudError("requested " + std::to_string(count) + " of " +
                                     std::to_string(n) + " points");
    if (count <= 0) return {};
    if (seed_index < 0 || seed_index >= n) throw OutOfBoundsError("seed index out of range");

    std::vector<int> picked{seed_index};
    std::vector<double> min_d2(n);
    for (int i = 0; i < n; ++i)
        min_d2[i] = (cloud.points[i] - cloud.points[seed_index]).squaredNorm();

    while (int(picked.size()) < count) {
        int best = -1;
        double best_d2 = -1.0;
        for (int i = 0; i < n; ++i) {
            if (min_d2[i] > best_d2) {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        picked.push_back(best);
        for (int i = 0; i < n; ++i) {
            double d2 = (cloud.points[i] - cloud.points[best]).squaredNorm();
            if (d2 < min_d2[i]) min_d2[i] = d2;
        }
    }
    return picked;
}

// Uniform hash grid for fixed-radius neighbor queries.
class NeighborGrid {
  public:
    NeighborGrid(const PointCloud& cloud, double cell_size)
        : cloud_(cloud), cell_(cell_size > 0 ? cell_size : 1.0) {
        for (int i = 0; i < int(cloud.size()); ++i)
            cells_[key(cloud.points[i])].push_back(i);
    }

    // Indices within `radius` of `p`, ascending index order. Excludes `skip`.
    std::vector<int> within(const Eigen::Vector3d& p, double radius, int skip = -1) const {
        std::vector<int> out;
        const double r2 = radius * radius;
        const int span = int(std::ceil(radius / cell_));
        const auto base = coords(p);
        for (int dz = -span; dz <= span; ++dz)
            for (int dy = -span; dy <= span; ++dy)
                for (int dx = -span; dx <= span; ++dx) {
                    auto it = cells_.find(pack(base[0] + dx, base[1] + dy, base[2] + dz));
                    if (it == cells_.end()) continue;
                    for (int i : it->second) {
                        if (i == skip) continue;
                        if ((cloud_.points[i] - p).squaredNorm() <= r2) out.push_back(i);
                    }
                }
        std::sort(out.begin(), out.end());
        return out;
    }

  private:
    std::array<int64_t, 3> coords(const Eigen::Vector3d& p) const {
        return {int64_t(std::floor(p.x() / cell_)), int64_t(std::floor(p.y() / cell_)),
                int64_t(std::floor(p.z() / cell_))};
    }
    int64_t key(const Eigen::Vector3d& p) const {
        auto c = coords(p);
        return pack(c[0], c[1], c[2]);
    }
    static int64_t pack(int64_t x, int64_t y, int64_t z) {
        // 21 bits per axis, offset to keep values positive
        const int64_t off = int64_t(1) << 20;
        return ((x + off) << 42) | ((y + off) << 21) | (z + off);
    }

    const PointCloud& cloud_;
    double cell_;
    std::unordered_map<int64_t, std::vector<int>> cells_;
};

// ---- file formats ----

inline void write_kdep(const std::string& path, int width, int height,
                       const std::vector<float>& depth) {
    if (int(depth.size()) != width * height)
        throw FormatError("depth size does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for write: " + path);
    out.write("KDEP", 4);
    uint32_t w = uint32_t(width), h = uint32_t(height), reserved = 0;
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    out.write(reinterpret_cast<const char*>(&reserved), 4);
    out.write(reinterpret_cast<const char*>(depth.data()), std::streamsize(depth.size() * 4));
}

inline void read_kdep(const std::string& path, int& width, int& height,
                      std::vector<float>& depth) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::string(magic, 4) != "KDEP")
        throw FormatError("bad depth raster magic in " + path);
    uint32_t w = 0, h = 0, reserved = 0;
    in.read(reinterpret_cast<char*>(&w), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    in.read(reinterpret_cast<char*>(&reserved), 4);
    if (!in) throw FormatError("truncated depth raster header in " + path);
    width = int(w);
    height = int(h);
    depth.resize(size_t(w) * h);
    in.read(reinterpret_cast<char*>(depth.data()), std::streamsize(depth.size() * 4));
    if (size_t(in.gcount()) != depth.size() * 4)
        throw FormatError("truncated depth raster payload in " + path);
}

inline void write_ppm(const std::string& path, int width, int height,
                      const std::vector<uint8_t>& rgb) {
    if (int(rgb.size()) != width * height * 3)
        throw FormatError("rgb size does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for write: " + path);
    out << "P6\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), std::streamsize(rgb.size()));
}

inline void read_ppm(const std::string& path, int& width, int& height,
                     std::vector<uint8_t>& rgb) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    auto next_token = [&]() -> std::string {
        std::string tok;
        char c;
        while (in.get(c)) {
            if (c == '#') {
                while (in.get(c) && c != '\n') {
                }
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(c);
        }
        return tok;
    };
    if (next_token() != "P6") throw FormatError("not a P6 image: " + path);
    int maxval = 0;
    try {
        width = std::stoi(next_token());
        height = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw FormatError("bad P6 header in " + path);
    }
    if (maxval != 255) throw FormatError("only 8-bit P6 supported: " + path);
    rgb.resize(size_t(width) * height * 3);
    in.read(reinterpret_cast<char*>(rgb.data()), std::streamsize(rgb.size()));
    if (size_t(in.gcount()) != rgb.size()) throw FormatError("truncated P6 payload in " + path);
}

inline void write_camera(const std::string& path, const Camera& cam) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open for write: " + path);
    out.precision(17);
    out << "fx " << cam.fx << "\nfy " << cam.fy << "\ncx " << cam.cx << "\ncy " << cam.cy
        << "\nextrinsic";
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) out << " " << cam.extrinsic.rotation(r, c);
        out << " " << cam.extrinsic.translation(r);
    }
    out << "\n";
}

inline Camera read_camera(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open: " + path);
    Camera cam;
    std::string key;
    bool saw_extrinsic = false;
    while (in >> key) {
        if (key == "fx") in >> cam.fx;
        else if (key == "fy") in >> cam.fy;
        else if (key == "cx") in >> cam.cx;
        else if (key == "cy") in >> cam.cy;
        else if (key == "extrinsic") {
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) in >> cam.extrinsic.rotation(r, c);
                in >> cam.extrinsic.translation(r);
            }
            saw_extrinsic = true;
        } else {
            throw FormatError("unknown camera key '" + key + "' in " + path);
        }
        if (!in) throw FormatError("malformed camera file: " + path);
    }
    if (!saw_extrinsic) throw FormatError("camera file missing extrinsic: " + path);
    return cam;
}

inline RGBDImage load_rgbd(const std::string& color_path, const std::string& depth_path,
                           const std::string& camera_path) {
    RGBDImage img;
    int cw = 0, ch = 0;
    read_ppm(color_path, cw, ch, img.color);
    int dw = 0, dh = 0;
    read_kdep(depth_path, dw, dh, img.depth);
    if (cw != dw || ch != dh)
        throw FormatError("color " + std::to_string(cw) + "x" + std::to_string(ch) +
                          " and depth " + std::to_string(dw) + "x" + std::to_string(dh) +
                          " dimensions disagree");
    img.width = cw;
    img.height = ch;
    img.camera = read_camera(camera_path);
    return img;
}

inline void save_rgbd(const RGBDImage& img, const std::string& color_path,
                      const std::string& depth_path, const std::string& camera_path) {
    write_ppm(color_path, img.width, img.height, img.color);
    write_kdep(depth_path, img.width, img.height, img.depth);
    write_camera(camera_path, img.camera);
}

}  // namespace kalm
