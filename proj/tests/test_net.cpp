#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "gradcheck_support.hpp"
#include "test_support.hpp"
#include "voxtrack/net.hpp"
#include "voxtrack/rng.hpp"

using namespace voxtrack;
using voxtrack::testing::check_gradient;
using voxtrack::testing::random_tensor;

namespace {

double dot_loss(const TensorND<double>& out, const TensorND<double>& proj) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * proj.data[i];
    return s;
}

EncoderSpec tiny_spec() {
    EncoderSpec s;
    s.input_channels = 3;
    s.encoder = {{4, 2, 6}, {4, 2, 8}};
    s.decoder = {{4, 2, 6, 0}, {4, 2, 5, -1}};
    s.final_kernel = 1;
    s.feature_channels = 4;
    return s;
}

}  // namespace

TEST_CASE("conv3d gradients match finite differences") {
    Rng rng(41);
    struct Case {
        int kernel, stride;
        std::vector<int> in_shape;
    };
    for (const Case& c : {Case{3, 1, {4, 3, 5, 3}}, Case{4, 2, {6, 4, 6, 2}}, Case{1, 1, {3, 3, 3, 4}}}) {
        TensorND<double> in = random_tensor(c.in_shape, rng);
        TensorND<double> w = random_tensor({c.kernel, c.kernel, c.kernel, c.in_shape[3], 5}, rng, 0.5);
        TensorND<double> b = random_tensor({5}, rng, 0.2);
        TensorND<double> out = conv3d_forward(in, w, b, c.stride, 1);
        TensorND<double> proj = random_tensor(out.shape, rng);

        auto loss = [&] { return dot_loss(conv3d_forward(in, w, b, c.stride, 1), proj); };

        TensorND<double> d_w = w.zeros_like(), d_b = b.zeros_like();
        conv3d_backward_params(in, proj, c.kernel, c.stride, d_w, d_b, 1);
        TensorND<double> d_in = conv3d_backward_input(proj, w, in.shape, c.stride, 1);

        REQUIRE(check_gradient(w, d_w, loss, rng, 25).max_rel_error < 1e-6);
        REQUIRE(check_gradient(b, d_b, loss, rng, 5).max_rel_error < 1e-6);
        REQUIRE(check_gradient(in, d_in, loss, rng, 25).max_rel_error < 1e-6);
    }
}

TEST_CASE("tconv3d gradients match finite differences") {
    Rng rng(42);
    TensorND<double> in = random_tensor({3, 2, 3, 4}, rng);
    TensorND<double> w = random_tensor({4, 4, 4, 4, 3}, rng, 0.5);
    TensorND<double> b = random_tensor({3}, rng, 0.2);
    TensorND<double> out = tconv3d_forward(in, w, b, 2, 1);
    REQUIRE(out.shape == std::vector<int>{6, 4, 6, 3});
    TensorND<double> proj = random_tensor(out.shape, rng);

    auto loss = [&] { return dot_loss(tconv3d_forward(in, w, b, 2, 1), proj); };

    TensorND<double> d_w = w.zeros_like(), d_b = b.zeros_like();
    tconv3d_backward_params(in, proj, 4, 2, d_w, d_b, 1);
    TensorND<double> d_in = tconv3d_backward_input(proj, w, in.shape, 2, 1);

    REQUIRE(check_gradient(w, d_w, loss, rng, 25).max_rel_error < 1e-6);
    REQUIRE(check_gradient(b, d_b, loss, rng, 5).max_rel_error < 1e-6);
    REQUIRE(check_gradient(in, d_in, loss, rng, 25).max_rel_error < 1e-6);
}

TEST_CASE("pointwise op gradients match finite differences") {
    Rng rng(43);

    SECTION("leaky relu") {
        TensorND<double> x = random_tensor({4, 4, 4, 3}, rng);
        TensorND<double> proj = random_tensor(x.shape, rng);
        auto loss = [&] { return dot_loss(leaky_relu_forward(x), proj); };
        TensorND<double> d_x = leaky_relu_backward(x, proj);
        REQUIRE(check_gradient(x, d_x, loss, rng, 30).max_rel_error < 1e-6);
    }

    SECTION("l2 normalize") {
        TensorND<double> x = random_tensor({3, 3, 3, 5}, rng);
        TensorND<double> proj = random_tensor(x.shape, rng);
        auto loss = [&] { return dot_loss(l2_normalize_forward(x), proj); };
        TensorND<double> d_x = l2_normalize_backward(x, proj);
        REQUIRE(check_gradient(x, d_x, loss, rng, 30).max_rel_error < 1e-4);
    }

    SECTION("normalization kills the radial gradient") {
        // d/dv ||normalize(v)||^2 = 0: backprop of 2*y through the normalizer.
        TensorND<double> x = random_tensor({1, 1, 1, 6}, rng);
        TensorND<double> y = l2_normalize_forward(x);
        TensorND<double> d_y = y;
        for (auto& v : d_y.data) v *= 2.0;
        TensorND<double> d_x = l2_normalize_backward(x, d_y);
        for (double v : d_x.data) REQUIRE(std::abs(v) < 1e-12);
    }

    SECTION("concat channels splits gradients structurally") {
        TensorND<double> a = random_tensor({2, 2, 2, 3}, rng);
        TensorND<double> b = random_tensor({2, 2, 2, 2}, rng);
        TensorND<double> cat = concat_channels(a, b);
        REQUIRE(cat.shape == std::vector<int>{2, 2, 2, 5});
        TensorND<double> da = a.zeros_like(), db = b.zeros_like();
        split_channels(cat, da, db);
        REQUIRE(da.data == a.data);
        REQUIRE(db.data == b.data);
    }
}

TEST_CASE("composite encoder gradients match finite differences") {
    Rng rng(44);
    EncoderSpec spec = tiny_spec();
    EncoderParamsT<double> params = init_encoder_params<double>(spec, 7);
    TensorND<double> input = random_tensor({8, 4, 8, 3}, rng, 0.8);
    TensorND<double> proj = random_tensor({8, 4, 8, 4}, rng);

    auto loss = [&] { return dot_loss(encoder_forward(params, input, 1).output, proj); };

    EncoderTape<double> tape = encoder_forward(params, input, 1);
    EncoderGrads<double> grads = encoder_backward(params, tape, proj, 1);

    SECTION("zero output gradient gives zero parameter gradients") {
        EncoderGrads<double> zg = encoder_backward(params, tape, proj.zeros_like(), 1);
        for (const TensorND<double>* t : zg.params.tensors())
            for (double v : t->data) REQUIRE(v == 0.0);
    }

    SECTION("parameter and input gradients") {
        std::vector<TensorND<double>*> p = params.tensors();
        std::vector<TensorND<double>*> g = grads.params.tensors();
        for (std::size_t i = 0; i < p.size(); ++i) {
            auto res = check_gradient(*p[i], *g[i], loss, rng, 6);
            INFO("parameter tensor " << i);
            REQUIRE(res.max_rel_error < 1e-4);
        }
        REQUIRE(check_gradient(input, grads.d_input, loss, rng, 20).max_rel_error < 1e-4);
    }
}

TEST_CASE("encoder output voxels are unit norm") {
    EncoderSpec spec = tiny_spec();
    EncoderParamsT<double> params = init_encoder_params<double>(spec, 3);
    Rng rng(45);
    TensorND<double> input = random_tensor({8, 4, 8, 3}, rng, 0.5);
    // zero a large block to emulate empty space
    for (int x = 0; x < 4; ++x)
        for (int y = 0; y < 4; ++y)
            for (int z = 0; z < 8; ++z)
                for (int c = 0; c < 3; ++c)
                    input.data[((static_cast<std::size_t>(x) * 4 + y) * 8 + z) * 3 + static_cast<std::size_t>(c)] = 0.0;

    TensorND<double> out = encoder_forward(params, input, 1).output;
    const std::size_t voxels = out.numel() / 4;
    for (std::size_t v = 0; v < voxels; ++v) {
        double n2 = 0.0;
        for (int c = 0; c < 4; ++c) {
            double t = out.data[v * 4 + static_cast<std::size_t>(c)];
            n2 += t * t;
        }
        REQUIRE(std::sqrt(n2) == Catch::Approx(1.0).margin(1e-5));
    }
}

TEST_CASE("all-zero parameters map any input to the zero feature vector") {
    EncoderSpec spec = tiny_spec();
    EncoderParamsT<double> params = zero_encoder_params<double>(spec);
    Rng rng(46);
    TensorND<double> input = random_tensor({8, 4, 8, 3}, rng);
    TensorND<double> out = encoder_forward(params, input, 1).output;
    for (double v : out.data) REQUIRE(v == 0.0);
}

TEST_CASE("encoder is equivariant to stride-aligned translations") {
    EncoderSpec spec;
    spec.input_channels = 2;
    spec.encoder = {{4, 2, 8}};
    spec.decoder = {{4, 2, 8, -1}};
    spec.final_kernel = 1;
    spec.feature_channels = 6;
    EncoderParamsT<double> params = init_encoder_params<double>(spec, 9);

    Rng rng(47);
    const int n = 16, c_in = 2;
    const int shift = spec.stride_product();
    TensorND<double> a({n, n, n, c_in});
    for (int x = 5; x < 11; ++x)
        for (int y = 5; y < 11; ++y)
            for (int z = 5; z < 11; ++z)
                for (int c = 0; c < c_in; ++c)
                    a.data[((static_cast<std::size_t>(x) * n + y) * n + z) * c_in + static_cast<std::size_t>(c)] =
                        rng.uniform(-1.0, 1.0);
    TensorND<double> b({n, n, n, c_in});
    for (int x = 0; x < n - shift; ++x)
        for (int y = 0; y < n; ++y)
            for (int z = 0; z < n; ++z)
                for (int c = 0; c < c_in; ++c)
                    b.data[((static_cast<std::size_t>(x + shift) * n + y) * n + z) * c_in + static_cast<std::size_t>(c)] =
                        a.data[((static_cast<std::size_t>(x) * n + y) * n + z) * c_in + static_cast<std::size_t>(c)];

    TensorND<double> fa = encoder_forward(params, a, 1).output;
    TensorND<double> fb = encoder_forward(params, b, 1).output;
    const int co = spec.feature_channels;
    const int margin = 6;  // receptive-field radius
    for (int x = margin; x < n - margin - shift; ++x)
        for (int y = margin; y < n - margin; ++y)
            for (int z = margin; z < n - margin; ++z)
                for (int c = 0; c < co; ++c) {
                    double va = fa.data[((static_cast<std::size_t>(x) * n + y) * n + z) * co + static_cast<std::size_t>(c)];
                    double vb = fb.data[((static_cast<std::size_t>(x + shift) * n + y) * n + z) * co + static_cast<std::size_t>(c)];
                    REQUIRE(va == Catch::Approx(vb).margin(1e-4));
                }
}

TEST_CASE("forward is deterministic across thread counts") {
    EncoderSpec spec = tiny_spec();
    EncoderParams params = init_encoder_params<float>(spec, 5);
    Rng rng(48);
    GridSpec gs;
    gs.extent = {8.0, 4.0, 8.0};
    gs.w = 8;
    gs.h = 4;
    gs.d = 8;
    VoxelGrid input(gs, 3);
    for (auto& v : input.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    VoxelGrid out1 = forward_encoder(params, input, 1);
    VoxelGrid out3 = forward_encoder(params, input, 3);
    VoxelGrid out1b = forward_encoder(params, input, 1);
    REQUIRE(out1.data == out3.data);
    REQUIRE(out1.data == out1b.data);
}

TEST_CASE("shape errors are reported") {
    EncoderSpec spec = tiny_spec();
    EncoderParams params = init_encoder_params<float>(spec, 1);
    GridSpec gs;
    gs.w = 6;
    gs.h = 4;
    gs.d = 8;  // 6 not divisible by stride product 4
    VoxelGrid bad(gs, 3);
    REQUIRE_THROWS_AS(forward_encoder(params, bad, 1), ShapeMismatch);

    GridSpec gs2;
    gs2.w = 8;
    gs2.h = 4;
    gs2.d = 8;
    VoxelGrid wrong_channels(gs2, 4);
    REQUIRE_THROWS_AS(forward_encoder(params, wrong_channels, 1), ShapeMismatch);

    EncoderSpec bad_spec = tiny_spec();
    bad_spec.decoder[0].skip_source = 1;  // wrong resolution
    REQUIRE_THROWS_AS(bad_spec.validate(), ShapeMismatch);
}

TEST_CASE("checkpoints round-trip and reject corruption") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "voxtrack_test_ckpt";
    fs::create_directories(dir);
    std::string path = (dir / "enc.ckpt").string();

    EncoderParams params = init_encoder_params<float>(tiny_spec(), 11);
    save_encoder_checkpoint(path, params, 1234);
    EncoderCheckpoint back = load_encoder_checkpoint(path);
    REQUIRE(back.step == 1234);
    REQUIRE(back.params.spec == params.spec);
    auto orig = params.tensors();
    auto loaded = back.params.tensors();
    for (std::size_t i = 0; i < orig.size(); ++i) REQUIRE(orig[i]->data == loaded[i]->data);

    std::string trunc = (dir / "trunc.ckpt").string();
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(trunc, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    REQUIRE_THROWS_AS(load_encoder_checkpoint(trunc), CorruptCheckpoint);

    std::string garbage = (dir / "garbage.ckpt").string();
    {
        std::ofstream out(garbage, std::ios::binary);
        out << "not json at all\n";
    }
    REQUIRE_THROWS_AS(load_encoder_checkpoint(garbage), CorruptCheckpoint);
    fs::remove_all(dir);
}
