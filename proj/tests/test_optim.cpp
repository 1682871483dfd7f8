#include <catch_amalgamated.hpp>

#include "voxtrack/net.hpp"
#include "voxtrack/optim.hpp"

using namespace voxtrack;

namespace {

EncoderSpec micro_spec() {
    EncoderSpec s;
    s.input_channels = 2;
    s.encoder = {{4, 2, 4}};
    s.decoder = {{4, 2, 4, -1}};
    s.final_kernel = 1;
    s.feature_channels = 3;
    return s;
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    EncoderParamsT<double> params = init_encoder_params<double>(micro_spec(), 3);
    EncoderParamsT<double> grads = zero_encoder_params<double>(micro_spec());
    EncoderParamsT<double> before = params;
    AdamState<double> state;
    adam_step(params, grads, state);
    REQUIRE(state.step == 1);
    auto p = params.tensors();
    auto b = before.tensors();
    for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(p[i]->data == b[i]->data);
}

TEST_CASE("adam: bias-corrected first step equals -lr") {
    TensorND<double> x({1});
    x.data[0] = 0.0;
    TensorND<double> g({1});
    g.data[0] = 1.0;
    AdamState<double> state;
    state.learning_rate = 0.1;
    std::vector<TensorND<double>*> params = {&x};
    std::vector<const TensorND<double>*> grads = {&g};
    adam_step(params, grads, state);
    REQUIRE(x.data[0] == Catch::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: converges on a 1-D quadratic") {
    TensorND<double> x({1});
    x.data[0] = 3.0;
    AdamState<double> state;
    state.learning_rate = 0.05;
    const double initial_loss = 0.5 * x.data[0] * x.data[0];
    for (int i = 0; i < 500; ++i) {
        TensorND<double> g({1});
        g.data[0] = x.data[0];
        std::vector<TensorND<double>*> params = {&x};
        std::vector<const TensorND<double>*> grads = {&g};
        adam_step(params, grads, state);
    }
    const double final_loss = 0.5 * x.data[0] * x.data[0];
    REQUIRE(final_loss < 0.01 * initial_loss);
    REQUIRE(state.step == 500);
}

TEST_CASE("momentum_update blends slow toward fast") {
    EncoderSpec spec = micro_spec();

    SECTION("mu = 0 copies fast") {
        EncoderParamsT<double> slow = init_encoder_params<double>(spec, 1);
        EncoderParamsT<double> fast = init_encoder_params<double>(spec, 2);
        momentum_update(slow, fast, 0.0);
        auto s = slow.tensors();
        auto f = fast.tensors();
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t e = 0; e < s[i]->data.size(); ++e)
                REQUIRE(s[i]->data[e] == Catch::Approx(f[i]->data[e]).margin(1e-15));
    }

    SECTION("mu near 1 leaves slow unchanged") {
        EncoderParamsT<double> slow = init_encoder_params<double>(spec, 1);
        EncoderParamsT<double> fast = init_encoder_params<double>(spec, 2);
        EncoderParamsT<double> before = slow;
        momentum_update(slow, fast, 1.0 - 1e-12);
        auto s = slow.tensors();
        auto b = before.tensors();
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t e = 0; e < s[i]->data.size(); ++e)
                REQUIRE(std::abs(s[i]->data[e] - b[i]->data[e]) < 1e-9);
    }

    SECTION("repeated updates follow the geometric series") {
        // slow = 0, fast = 1: after n updates slow = 1 - mu^n
        EncoderParamsT<double> slow = zero_encoder_params<double>(spec);
        EncoderParamsT<double> fast = zero_encoder_params<double>(spec);
        for (TensorND<double>* t : fast.tensors())
            for (auto& v : t->data) v = 1.0;
        for (int i = 0; i < 1000; ++i) momentum_update(slow, fast, 0.999);
        const double expected = 1.0 - std::pow(0.999, 1000);
        for (const TensorND<double>* t : slow.tensors())
            for (double v : t->data) REQUIRE(v == Catch::Approx(expected).margin(1e-9));
    }

    SECTION("mismatched specs are rejected") {
        EncoderParamsT<double> slow = init_encoder_params<double>(spec, 1);
        EncoderSpec other = spec;
        other.feature_channels = 5;
        EncoderParamsT<double> fast = init_encoder_params<double>(other, 2);
        REQUIRE_THROWS_AS(momentum_update(slow, fast, 0.9), SpecMismatch);
    }
}
