#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "test_support.hpp"
#include "voxtrack/grid.hpp"
#include "voxtrack/rng.hpp"

using namespace voxtrack;

namespace {

GridSpec basic_spec(int w, int h, int d, Vec3 center = {}, Vec3 extent = {8.0, 2.0, 8.0}) {
    GridSpec s;
    s.center = center;
    s.extent = extent;
    s.w = w;
    s.h = h;
    s.d = d;
    return s;
}

}  // namespace

TEST_CASE("world_to_mem maps the cube center to the grid center") {
    GridSpec s = basic_spec(32, 8, 32, {1.0, 2.0, 3.0});
    GridCoord c = world_to_mem(s, s.center);
    REQUIRE(c.x == Catch::Approx((s.w - 1) / 2.0));
    REQUIRE(c.y == Catch::Approx((s.h - 1) / 2.0));
    REQUIRE(c.z == Catch::Approx((s.d - 1) / 2.0));
}

TEST_CASE("world_to_mem and mem_to_world are inverses") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        GridSpec s = basic_spec(rng.uniform_int(2, 40), rng.uniform_int(2, 12), rng.uniform_int(2, 40),
                                testing::random_point(rng, 3.0),
                                {rng.uniform(1.0, 20.0), rng.uniform(1.0, 5.0), rng.uniform(1.0, 20.0)});
        s.reference_pose = testing::random_transform(rng, 2.0);
        for (int i = 0; i < 100; ++i) {
            Vec3 p = testing::random_point(rng, 10.0);
            Vec3 back = mem_to_world(s, world_to_mem(s, p));
            REQUIRE((back - p).norm() < 1e-9);
        }
    }
}

TEST_CASE("coordinates near the cube stay within half a voxel of the index range") {
    GridSpec s = basic_spec(2, 2, 2, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0});
    Rng rng(32);
    for (int i = 0; i < 200; ++i) {
        Vec3 p{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
        GridCoord c = world_to_mem(s, p);
        REQUIRE(c.x >= -0.5);
        REQUIRE(c.x <= 1.5);
        REQUIRE(c.y >= -0.5);
        REQUIRE(c.y <= 1.5);
        REQUIRE(c.z >= -0.5);
        REQUIRE(c.z <= 1.5);
    }
}

TEST_CASE("trilinear_sample: exact at integers, linear in between") {
    GridSpec s = basic_spec(6, 5, 4);
    VoxelGrid g(s, 2);
    Rng rng(33);
    for (auto& v : g.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    for (int x = 0; x < s.w; ++x)
        for (int y = 0; y < s.h; ++y)
            for (int z = 0; z < s.d; ++z) {
                auto val = trilinear_sample(g, {double(x), double(y), double(z)});
                REQUIRE(val[0] == Catch::Approx(g.at(x, y, z, 0)).margin(1e-12));
                REQUIRE(val[1] == Catch::Approx(g.at(x, y, z, 1)).margin(1e-12));
            }

    SECTION("midpoint of two voxels averages them") {
        VoxelGrid m(basic_spec(2, 1, 1), 1);
        m.at(0, 0, 0, 0) = 2.0f;
        m.at(1, 0, 0, 0) = 6.0f;
        auto val = trilinear_sample(m, {0.5, 0.0, 0.0});
        REQUIRE(val[0] == Catch::Approx(4.0));
    }

    SECTION("exact on a trilinear field") {
        VoxelGrid lin(basic_spec(9, 7, 8), 1);
        for (int x = 0; x < 9; ++x)
            for (int y = 0; y < 7; ++y)
                for (int z = 0; z < 8; ++z) lin.at(x, y, z, 0) = static_cast<float>(x + 2 * y + 3 * z);
        for (int i = 0; i < 500; ++i) {
            GridCoord c{rng.uniform(0.0, 8.0), rng.uniform(0.0, 6.0), rng.uniform(0.0, 7.0)};
            auto val = trilinear_sample(lin, c);
            REQUIRE(val[0] == Catch::Approx(c.x + 2 * c.y + 3 * c.z).margin(1e-6));
        }
    }

    SECTION("out-of-bounds coordinates are rejected") {
        REQUIRE_THROWS_AS(trilinear_sample(g, {-0.5, 0.0, 0.0}), OutOfBounds);
        REQUIRE_THROWS_AS(trilinear_sample(g, {0.0, 4.5, 0.0}), OutOfBounds);
    }
}

TEST_CASE("voxelize_rgbd: empty and single-pixel cases") {
    CameraIntrinsics k{40.0, 40.0, 32.0, 32.0, 64, 64};
    RigidTransform cam = RigidTransform::identity();

    SECTION("all-invalid depth gives an all-zero grid") {
        ImageRgb img(64, 64);
        DepthMap depth(64, 64);
        VoxelGrid g = voxelize_rgbd(img, depth, k, cam, basic_spec(8, 4, 8));
        REQUIRE(occupancy_summary(g).fraction == 0.0);
        for (float v : g.data) REQUIRE(v == 0.0f);
    }

    SECTION("one valid pixel occupies exactly the voxel at its unprojection") {
        ImageRgb img(64, 64);
        DepthMap depth(64, 64);
        const int pu = 32, pv = 32;
        depth.at(pu, pv) = 2.0f;
        img.at(pu, pv, 0) = 0.9f;
        img.at(pu, pv, 1) = 0.4f;
        img.at(pu, pv, 2) = 0.1f;
        Vec3 hit = unproject(k, pu + 0.5, pv + 0.5, 2.0);
        GridSpec s = basic_spec(8, 4, 8, hit, {4.0, 2.0, 4.0});
        VoxelGrid g = voxelize_rgbd(img, depth, k, cam, s);
        OccupancySummary occ = occupancy_summary(g);
        REQUIRE(occ.occupied_count == 1);
        GridCoord c = world_to_mem(s, hit);
        int ix = static_cast<int>(std::lround(c.x));
        int iy = static_cast<int>(std::lround(c.y));
        int iz = static_cast<int>(std::lround(c.z));
        REQUIRE(g.at(ix, iy, iz, 3) == 1.0f);
        REQUIRE(g.at(ix, iy, iz, 0) == Catch::Approx(0.9).margin(1e-6));
        REQUIRE(g.at(ix, iy, iz, 1) == Catch::Approx(0.4).margin(1e-6));
        REQUIRE(g.at(ix, iy, iz, 2) == Catch::Approx(0.1).margin(1e-6));
    }
}

TEST_CASE("fuse_grids: occupancy max, occupancy-weighted colors") {
    GridSpec s = basic_spec(2, 1, 1);
    VoxelGrid a(s, 4), b(s, 4);
    a.at(0, 0, 0, 0) = 1.0f;
    a.at(0, 0, 0, 3) = 1.0f;
    b.at(0, 0, 0, 0) = 0.0f;
    b.at(0, 0, 0, 3) = 1.0f;
    b.at(1, 0, 0, 1) = 0.5f;
    b.at(1, 0, 0, 3) = 1.0f;
    std::vector<VoxelGrid> grids = {a, b};
    VoxelGrid f = fuse_grids(grids);
    REQUIRE(f.at(0, 0, 0, 0) == Catch::Approx(0.5));
    REQUIRE(f.at(0, 0, 0, 3) == 1.0f);
    REQUIRE(f.at(1, 0, 0, 1) == Catch::Approx(0.5));
    REQUIRE(f.at(1, 0, 0, 3) == 1.0f);

    // order independence
    std::vector<VoxelGrid> swapped = {b, a};
    VoxelGrid f2 = fuse_grids(swapped);
    for (std::size_t i = 0; i < f.data.size(); ++i) REQUIRE(f.data[i] == f2.data[i]);
}

TEST_CASE("make_search_region: defaults and determinism") {
    GridSpec s = make_search_region({0.0, 0.0, 0.0}, 64, 16, 64);
    REQUIRE(s.extent.x == 16.0);
    REQUIRE(s.extent.y == 2.0);
    REQUIRE(s.extent.z == 16.0);
    REQUIRE(s.w == 64);
    REQUIRE(s.h == 16);
    REQUIRE(s.d == 64);

    GridSpec again = make_search_region({0.0, 0.0, 0.0}, 64, 16, 64);
    REQUIRE(s.same_geometry(again));

    GridSpec custom = make_search_region({1.0, 0.5, -2.0}, 16, 4, 16, SearchRegionConfig{{8.0, 2.0, 8.0}});
    REQUIRE(custom.center.x == 1.0);
    REQUIRE(custom.extent.x == 8.0);
}

TEST_CASE("vxg round-trips bit-exactly and rejects truncation") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "voxtrack_test_vxg";
    fs::create_directories(dir);
    std::string path = (dir / "grid.vxg").string();

    Rng rng(34);
    GridSpec s = basic_spec(5, 3, 4, {0.5, 1.0, -2.0});
    s.reference_pose = testing::random_transform(rng, 1.0);
    VoxelGrid g(s, 4);
    for (auto& v : g.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    save_vxg(path, g);
    VoxelGrid back = load_vxg(path);
    REQUIRE(back.channels == 4);
    REQUIRE(back.spec.same_geometry(s));
    REQUIRE(back.data == g.data);

    // truncated payload
    std::string trunc = (dir / "trunc.vxg").string();
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(trunc, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 17));
    }
    REQUIRE_THROWS_AS(load_vxg(trunc), IoError);
    fs::remove_all(dir);
}
