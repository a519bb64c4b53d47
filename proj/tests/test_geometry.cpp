#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Geometry>
#include <cstdio>
#include <filesystem>

#include "kalm/geometry.hpp"
#include "kalm/random.hpp"

using namespace kalm;
namespace fs = std::filesystem;

namespace {

Eigen::Matrix3d random_rotation(RandomStream& rng) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    return q.toRotationMatrix();
}

fs::path temp_dir(const char* tag) {
    fs::path dir = fs::temp_directory_path() / (std::string("kalm_geom_") + tag);
    fs::create_directories(dir);
    return dir;
}

// Independent greedy reference: recompute min-distance over picked set each round.
std::vector<int> fps_reference(const PointCloud& cloud, int count, int seed_index) {
    std::vector<int> picked{seed_index};
    while (int(picked.size()) < count) {
        int best = -1;
        double best_d2 = -1.0;
        for (int i = 0; i < int(cloud.size()); ++i) {
            double d2 = std::numeric_limits<double>::infinity();
            for (int j : picked)
                d2 = std::min(d2, (cloud.points[i] - cloud.points[j]).squaredNorm());
            if (d2 > best_d2) {
                best_d2 = d2;
                best = i;
            }
        }
        picked.push_back(best);
    }
    return picked;
}

}  // namespace

TEST_CASE("rigid transform group behavior") {
    RandomStream rng(101);
    for (int k = 0; k < 50; ++k) {
        RigidTransform a{random_rotation(rng), rng.in_box({-1, -1, -1}, {1, 1, 1})};
        RigidTransform b{random_rotation(rng), rng.in_box({-1, -1, -1}, {1, 1, 1})};
        RigidTransform c{random_rotation(rng), rng.in_box({-1, -1, -1}, {1, 1, 1})};

        RigidTransform ab_c = a.compose(b).compose(c);
        RigidTransform a_bc = a.compose(b.compose(c));
        REQUIRE((ab_c.rotation - a_bc.rotation).norm() < 1e-12);
        REQUIRE((ab_c.translation - a_bc.translation).norm() < 1e-12);

        RigidTransform id = a.compose(a.inverse());
        REQUIRE((id.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12);
        REQUIRE(id.translation.norm() < 1e-12);
        REQUIRE(a.is_valid());
    }
}

TEST_CASE("rot6d identity case") {
    Rot6D r{{1, 0, 0, 0, 1, 0}};
    REQUIRE((rot6d_decode(r) - Eigen::Matrix3d::Identity()).norm() < 1e-15);
}

TEST_CASE("rot6d gram-schmidt on non-orthogonal input") {
    // Hand computation: a=(2,0,0) -> c1=(1,0,0); b=(1,1,0) minus projection -> (0,1,0).
    Rot6D r{{2, 0, 0, 1, 1, 0}};
    Eigen::Matrix3d m = rot6d_decode(r);
    REQUIRE((m.col(0) - Eigen::Vector3d(1, 0, 0)).norm() < 1e-15);
    REQUIRE((m.col(1) - Eigen::Vector3d(0, 1, 0)).norm() < 1e-15);
    REQUIRE((m.col(2) - Eigen::Vector3d(0, 0, 1)).norm() < 1e-15);
}

TEST_CASE("rot6d round-trip over random rotations") {
    RandomStream rng(7);
    for (int k = 0; k < 1000; ++k) {
        Eigen::Matrix3d r = random_rotation(rng);
        Eigen::Matrix3d back = rot6d_decode(rot6d_encode(r));
        REQUIRE((back - r).norm() < 1e-9);
        REQUIRE(back.determinant() == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("rot6d degenerate inputs throw") {
    REQUIRE_THROWS_AS(rot6d_decode(Rot6D{{0, 0, 0, 0, 1, 0}}), DegenerateRotationError);
    REQUIRE_THROWS_AS(rot6d_decode(Rot6D{{1, 0, 0, 1e-12, 0, 0}}), DegenerateRotationError);
    REQUIRE_THROWS_AS(rot6d_decode(Rot6D{{1, 0, 0, 2, 0, 0}}), DegenerateRotationError);
}

TEST_CASE("deproject pinhole basics") {
    RGBDImage img;
    img.width = 128;
    img.height = 48;
    img.camera = {50.0, 50.0, 32.0, 24.0, RigidTransform::identity()};
    img.color.assign(size_t(img.width) * img.height * 3, 128);
    img.depth.assign(size_t(img.width) * img.height, 0.0f);

    img.depth[24 * 128 + 32] = 1.0f;
    auto center = deproject(img, 32, 24);
    REQUIRE(center.has_value());
    REQUIRE((*center - Eigen::Vector3d(0, 0, 1)).norm() < 1e-12);

    // pixel (cx+fx, cy) at depth 2 -> (2, 0, 2)
    img.depth[24 * 128 + (32 + 50)] = 2.0f;
    auto off = deproject(img, 32 + 50, 24);
    REQUIRE(off.has_value());
    REQUIRE((*off - Eigen::Vector3d(2, 0, 2)).norm() < 1e-12);

    REQUIRE_FALSE(deproject(img, 0, 0).has_value());  // depth 0
    REQUIRE_THROWS_AS(deproject(img, 128, 0), OutOfBoundsError);
    REQUIRE_THROWS_AS(deproject(img, 0, -1), OutOfBoundsError);
}

TEST_CASE("deproject then project is identity on valid pixels") {
    RandomStream rng(33);
    RGBDImage img;
    img.width = 40;
    img.height = 30;
    Eigen::Matrix3d rot = random_rotation(rng);
    img.camera = {48.0, 52.0, 20.0, 15.0, RigidTransform{rot, {0.3, -0.2, 0.5}}};
    img.color.assign(size_t(img.width) * img.height * 3, 0);
    img.depth.resize(size_t(img.width) * img.height);
    for (auto& d : img.depth) d = float(rng.uniform(0.5, 3.0));

    for (int v = 0; v < img.height; v += 3) {
        for (int u = 0; u < img.width; u += 3) {
            auto world = deproject(img, u, v);
            REQUIRE(world.has_value());
            auto px = project(img.camera, *world);
            REQUIRE(px.has_value());
            REQUIRE(std::abs((*px)[0] - u) < 1e-6);
            REQUIRE(std::abs((*px)[1] - v) < 1e-6);
        }
    }
}

TEST_CASE("cloud_from_rgbd counting and stride") {
    RGBDImage img;
    img.width = 2;
    img.height = 2;
    img.camera = {10, 10, 1, 1, RigidTransform::identity()};
    img.color.assign(12, 200);
    img.depth.assign(4, 1.0f);

    PointCloud all = cloud_from_rgbd(img, 1);
    REQUIRE(all.size() == 4);
    REQUIRE(all.colors.size() == 4);
    REQUIRE(all.pixel_indices == std::vector<int>{0, 1, 2, 3});

    img.depth.assign(4, -1.0f);
    REQUIRE(cloud_from_rgbd(img, 1).size() == 0);

    img.depth = {1.0f, std::numeric_limits<float>::quiet_NaN(), 0.0f, 2.0f};
    PointCloud some = cloud_from_rgbd(img, 1);
    REQUIRE(some.size() == 2);
    REQUIRE(some.pixel_indices == std::vector<int>{0, 3});
}

TEST_CASE("cloud_from_rgbd on a synthetic plane is coplanar") {
    // Ray-cast a tilted plane n.x = off through the pinhole.
    RGBDImage img;
    img.width = 60;
    img.height = 40;
    img.camera = {55.0, 55.0, 30.0, 20.0, RigidTransform::identity()};
    img.color.assign(size_t(img.width) * img.height * 3, 90);
    img.depth.resize(size_t(img.width) * img.height);
    Eigen::Vector3d normal = Eigen::Vector3d(0.2, -0.1, 1.0).normalized();
    const double off = 1.4;
    for (int v = 0; v < img.height; ++v)
        for (int u = 0; u < img.width; ++u) {
            Eigen::Vector3d dir((u - img.camera.cx) / img.camera.fx,
                                (v - img.camera.cy) / img.camera.fy, 1.0);
            img.depth[size_t(v) * img.width + u] = float(off / normal.dot(dir));
        }

    PointCloud cloud = cloud_from_rgbd(img, 1);
    REQUIRE(cloud.size() == size_t(img.width) * img.height);

    // Plane-fit oracle: smallest principal direction, max residual.
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& p : cloud.points) centroid += p;
    centroid /= double(cloud.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : cloud.points) cov += (p - centroid) * (p - centroid).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    Eigen::Vector3d fit_n = eig.eigenvectors().col(0);
    double max_resid = 0.0;
    for (const auto& p : cloud.points)
        max_resid = std::max(max_resid, std::abs(fit_n.dot(p - centroid)));
    REQUIRE(max_resid < 1e-6);
}

TEST_CASE("fps single pick and bounds") {
    PointCloud cloud;
    cloud.points = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    REQUIRE(farthest_point_sample(cloud, 1, 2) == std::vector<int>{2});
    REQUIRE_THROWS_AS(farthest_point_sample(cloud, 4, 0), CountExceedsCloudError);
}

TEST_CASE("fps unit square picks opposite corners from center") {
    PointCloud cloud;
    cloud.points = {{0, 0, 0}, {1, 1, 0}, {1, 0, 0}, {0, 1, 0}, {0.5, 0.5, 0}};
    auto picked = farthest_point_sample(cloud, 3, 4);
    REQUIRE(picked == fps_reference(cloud, 3, 4));
    REQUIRE(picked[0] == 4);
    // Opposite corners: after the tie-break lands on (0,0), its diagonal partner follows.
    REQUIRE(picked[1] == 0);
    REQUIRE(picked[2] == 1);
}

TEST_CASE("fps matches brute-force greedy on random clouds") {
    RandomStream rng(55);
    for (int trial = 0; trial < 8; ++trial) {
        PointCloud cloud;
        int n = 40 + int(rng.bounded(460));
        for (int i = 0; i < n; ++i)
            cloud.points.push_back(rng.in_box({-1, -1, -1}, {1, 1, 1}));
        int count = 1 + int(rng.bounded(uint64_t(std::min(n, 60))));
        int seed = int(rng.bounded(uint64_t(n)));
        REQUIRE(farthest_point_sample(cloud, count, seed) == fps_reference(cloud, count, seed));
    }
}

TEST_CASE("fps max-min property holds at every step") {
    RandomStream rng(56);
    PointCloud cloud;
    for (int i = 0; i < 200; ++i) cloud.points.push_back(rng.in_box({0, 0, 0}, {1, 1, 1}));
    auto picked = farthest_point_sample(cloud, 25, 0);
    for (size_t step = 1; step < picked.size(); ++step) {
        auto min_d2_to_prefix = [&](int idx) {
            double best = std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < step; ++j)
                best = std::min(best, (cloud.points[idx] - cloud.points[picked[j]]).squaredNorm());
            return best;
        };
        double chosen = min_d2_to_prefix(picked[step]);
        for (int i = 0; i < int(cloud.size()); ++i)
            REQUIRE(chosen >= min_d2_to_prefix(i) - 1e-15);
    }
}

TEST_CASE("neighbor grid agrees with linear scan") {
    RandomStream rng(77);
    PointCloud cloud;
    for (int i = 0; i < 400; ++i) cloud.points.push_back(rng.in_box({-0.2, -0.2, 0}, {0.2, 0.2, 0.4}));
    NeighborGrid grid(cloud, 0.05);
    for (int q = 0; q < 30; ++q) {
        Eigen::Vector3d p = rng.in_box({-0.2, -0.2, 0}, {0.2, 0.2, 0.4});
        double radius = rng.uniform(0.01, 0.12);
        std::vector<int> expect;
        for (int i = 0; i < int(cloud.size()); ++i)
            if ((cloud.points[i] - p).squaredNorm() <= radius * radius) expect.push_back(i);
        REQUIRE(grid.within(p, radius) == expect);
    }
}

TEST_CASE("depth raster and ppm round-trip") {
    auto dir = temp_dir("io");
    RandomStream rng(88);

    std::vector<float> depth(6 * 4);
    for (auto& d : depth) d = float(rng.uniform(0.1, 5.0));
    write_kdep((dir / "d.kdep").string(), 6, 4, depth);
    int w = 0, h = 0;
    std::vector<float> back;
    read_kdep((dir / "d.kdep").string(), w, h, back);
    REQUIRE(w == 6);
    REQUIRE(h == 4);
    REQUIRE(back == depth);

    std::vector<uint8_t> rgb(6 * 4 * 3);
    for (auto& c : rgb) c = uint8_t(rng.bounded(256));
    write_ppm((dir / "c.ppm").string(), 6, 4, rgb);
    std::vector<uint8_t> rgb_back;
    read_ppm((dir / "c.ppm").string(), w, h, rgb_back);
    REQUIRE(w == 6);
    REQUIRE(h == 4);
    REQUIRE(rgb_back == rgb);

    SECTION("bad magic rejected") {
        std::ofstream bad((dir / "bad.kdep").string(), std::ios::binary);
        bad << "NOPExxxxxxxxxxxx";
        bad.close();
        int bw, bh;
        std::vector<float> bd;
        REQUIRE_THROWS_AS(read_kdep((dir / "bad.kdep").string(), bw, bh, bd), FormatError);
    }
    SECTION("truncated payload rejected") {
        std::ofstream trunc((dir / "t.kdep").string(), std::ios::binary);
        trunc.write("KDEP", 4);
        uint32_t tw = 8, th = 8, r0 = 0;
        trunc.write(reinterpret_cast<char*>(&tw), 4);
        trunc.write(reinterpret_cast<char*>(&th), 4);
        trunc.write(reinterpret_cast<char*>(&r0), 4);
        float one = 1.0f;
        trunc.write(reinterpret_cast<char*>(&one), 4);
        trunc.close();
        int bw, bh;
        std::vector<float> bd;
        REQUIRE_THROWS_AS(read_kdep((dir / "t.kdep").string(), bw, bh, bd), FormatError);
    }
}

TEST_CASE("camera file round-trip") {
    auto dir = temp_dir("cam");
    RandomStream rng(99);
    Camera cam{385.5, 384.25, 321.0, 239.5, RigidTransform{random_rotation(rng), {0.1, 0.2, 0.3}}};
    write_camera((dir / "a.cam").string(), cam);
    Camera back = read_camera((dir / "a.cam").string());
    REQUIRE(back.fx == cam.fx);
    REQUIRE(back.fy == cam.fy);
    REQUIRE(back.cx == cam.cx);
    REQUIRE(back.cy == cam.cy);
    REQUIRE((back.extrinsic.rotation - cam.extrinsic.rotation).norm() < 1e-15);
    REQUIRE((back.extrinsic.translation - cam.extrinsic.translation).norm() < 1e-15);

    std::ofstream bad((dir / "bad.cam").string());
    bad << "fx 1.0\nzoom 3\n";
    bad.close();
    REQUIRE_THROWS_AS(read_camera((dir / "bad.cam").string()), FormatError);
}

TEST_CASE("rgbd bundle save and load") {
    auto dir = temp_dir("bundle");
    RGBDImage img;
    img.width = 8;
    img.height = 5;
    img.camera = {100, 101, 4, 2.5, RigidTransform::identity()};
    img.color.resize(size_t(8) * 5 * 3);
    img.depth.resize(size_t(8) * 5);
    RandomStream rng(13);
    for (auto& c : img.color) c = uint8_t(rng.bounded(256));
    for (auto& d : img.depth) d = float(rng.uniform(0.2, 2.0));

    save_rgbd(img, (dir / "o.ppm").string(), (dir / "o.kdep").string(), (dir / "o.cam").string());
    RGBDImage back = load_rgbd((dir / "o.ppm").string(), (dir / "o.kdep").string(),
                               (dir / "o.cam").string());
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    REQUIRE(back.color == img.color);
    REQUIRE(back.depth == img.depth);
    REQUIRE(back.camera.fx == img.camera.fx);
}
