#include "oracles.hpp"

#include "ducseg/conv.hpp"
#include "ducseg/rng.hpp"
#include "ducseg/upsampling.hpp"

#include <doctest.h>

#include <algorithm>

using namespace ducseg;

namespace {

DeconvLayer random_deconv(const DeconvSpec& spec, Rng& rng)
{
    DeconvLayer l = make_deconv_layer(spec);
    l.weights = oracle::random_tensor(l.weights.shape(), rng);
    for (auto& b : l.bias) b = rng.uniform(-1, 1);
    return l;
}

}  // namespace

TEST_CASE("duc_rearrange on a 2x2 block")
{
    const DucSpec spec{2, 1, 1};
    const Tensor x({1, 4, 1, 1}, {10, 20, 30, 40});
    const Tensor y = duc_rearrange(x, spec);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.at(0, 0, 0, 0) == 10);
    CHECK(y.at(0, 0, 0, 1) == 20);
    CHECK(y.at(0, 0, 1, 0) == 30);
    CHECK(y.at(0, 0, 1, 1) == 40);
}

TEST_CASE("duc channel layout is class-major")
{
    const DucSpec spec{4, 3, 1};
    CHECK(spec.channels() == 48);
    CHECK(spec.channel(0, 0, 0) == 0);
    CHECK(spec.channel(0, 3, 3) == 15);
    CHECK(spec.channel(2, 1, 2) == 2 * 16 + 1 * 4 + 2);

    // value stored at chan(l, dy, dx) of feature pixel (i, j) lands at (i s + dy, j s + dx) of class l
    Tensor x({1, 48, 2, 3}, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
    const Tensor y = duc_rearrange(x, spec);
    for (std::size_t l = 0; l < 3; ++l)
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                for (std::size_t dy = 0; dy < 4; ++dy)
                    for (std::size_t dx = 0; dx < 4; ++dx)
                        CHECK(y.at(0, l, i * 4 + dy, j * 4 + dx) == x.at(0, spec.channel(l, dy, dx), i, j));
}

TEST_CASE("duc_rearrange is a bijection")
{
    Rng rng(21);
    for (const DucSpec spec : {DucSpec{2, 3, 1}, DucSpec{4, 2, 1}, DucSpec{8, 2, 2}, DucSpec{1, 5, 1}}) {
        const Tensor x = oracle::random_tensor({2, spec.channels(), 3, 2}, rng);
        const Tensor y = duc_rearrange(x, spec);
        CHECK(y.shape() == Shape{2, spec.classes, 3 * spec.scale(), 2 * spec.scale()});
        CHECK(duc_rearrange_inverse(y, spec) == x);
        auto a = std::vector<double>(x.data().begin(), x.data().end());
        auto b = std::vector<double>(y.data().begin(), y.data().end());
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
}

TEST_CASE("duc_forward output shapes")
{
    Rng rng(22);
    const DucSpec full{8, 19, 1};
    CHECK(full.channels() == 1216);
    const ConvLayer layer = make_conv_layer({3, 1, 1, 4, full.channels(), 1}, rng);
    const Tensor feats = oracle::random_tensor({1, 4, 3, 2}, rng);
    CHECK(duc_forward(feats, layer, full).shape() == Shape{1, 19, 24, 16});

    const DucSpec cell{8, 19, 2};
    CHECK(cell.channels() == 304);
    const ConvLayer small = make_conv_layer({3, 1, 1, 4, cell.channels(), 1}, rng);
    CHECK(duc_forward(feats, small, cell).shape() == Shape{1, 19, 12, 8});

    CHECK_THROWS_AS(duc_forward(feats, small, full), std::invalid_argument);
}

TEST_CASE("duc spec validation")
{
    CHECK_NOTHROW(validate(DucSpec{8, 19, 2}));
    CHECK_THROWS_AS(validate(DucSpec{0, 2, 1}), std::invalid_argument);
    CHECK_THROWS_AS(validate(DucSpec{4, 0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(validate(DucSpec{4, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(validate(DucSpec{3, 2, 2}), std::invalid_argument);
    CHECK_THROWS_AS(duc_rearrange(Tensor({1, 5, 2, 2}, 0.0), DucSpec{2, 1, 1}), std::invalid_argument);
}

TEST_CASE("duc_backward against finite differences")
{
    Rng rng(23);
    const DucSpec spec{2, 2, 1};
    ConvLayer layer = make_conv_layer({3, 1, 1, 2, spec.channels(), 1});
    layer.weights = oracle::random_tensor(layer.weights.shape(), rng);
    for (auto& b : layer.bias) b = rng.uniform(-1, 1);
    Tensor x = oracle::random_tensor({1, 2, 3, 3}, rng);
    const Tensor go = oracle::random_tensor({1, 2, 6, 6}, rng);
    const auto g = duc_backward(x, layer, spec, go);
    auto f = [&] { return oracle::dot(go, duc_forward(x, layer, spec)); };
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        worst = std::max(worst, oracle::relative_error(g.grad_x[i], oracle::central_difference(f, x[i])));
    for (std::size_t i = 0; i < layer.weights.size(); ++i)
        worst = std::max(worst, oracle::relative_error(g.grad_w[i], oracle::central_difference(f, layer.weights[i])));
    for (std::size_t i = 0; i < layer.bias.size(); ++i)
        worst = std::max(worst, oracle::relative_error(g.grad_b[i], oracle::central_difference(f, layer.bias[i])));
    CHECK(worst < 1e-4);
}

TEST_CASE("bilinear upsampling")
{
    SUBCASE("ramp row, factor 2")
    {
        const Tensor x({1, 1, 2, 2}, {0, 1, 0, 1});
        const Tensor y = bilinear_upsample(x, 2);
        REQUIRE(y.shape() == Shape{1, 1, 4, 4});
        for (std::size_t r = 0; r < 4; ++r) {
            CHECK(y.at(0, 0, r, 0) == doctest::Approx(0.0));
            CHECK(y.at(0, 0, r, 1) == doctest::Approx(0.25));
            CHECK(y.at(0, 0, r, 2) == doctest::Approx(0.75));
            CHECK(y.at(0, 0, r, 3) == doctest::Approx(1.0));
        }
    }
    SUBCASE("constants are preserved")
    {
        const Tensor y = bilinear_upsample(Tensor({1, 2, 3, 5}, 0.7), 4);
        CHECK(y.shape() == Shape{1, 2, 12, 20});
        for (double v : y.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-14));
    }
    SUBCASE("factor 1 is the identity")
    {
        Rng rng(24);
        const Tensor x = oracle::random_tensor({1, 1, 4, 3}, rng);
        CHECK(max_abs_diff(bilinear_upsample(x, 1), x) < 1e-15);
    }
    SUBCASE("backward is the adjoint")
    {
        Rng rng(25);
        for (std::size_t f : {2u, 3u, 4u}) {
            const Tensor x = oracle::random_tensor({2, 2, 3, 4}, rng);
            const Tensor g = oracle::random_tensor({2, 2, 3 * f, 4 * f}, rng);
            const double lhs = oracle::dot(bilinear_upsample(x, f), g);
            const double rhs = oracle::dot(x, bilinear_upsample_backward(g, x.shape(), f));
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
        }
    }
    SUBCASE("errors")
    {
        CHECK_THROWS_AS(bilinear_upsample(Tensor({1, 1, 2, 2}, 0.0), 0), std::invalid_argument);
        CHECK_THROWS_AS(bilinear_upsample_backward(Tensor({1, 1, 5, 4}, 0.0), {1, 1, 2, 2}, 2),
                        std::invalid_argument);
    }
}

TEST_CASE("transposed convolution shapes")
{
    Rng rng(26);
    const DeconvLayer l = make_deconv_layer({4, 2, 1, 3, 2}, rng);
    CHECK(deconv_output_extent(4, l.spec) == 8);
    CHECK(transposed_conv_forward(oracle::random_tensor({1, 3, 4, 4}, rng), l).shape() == Shape{1, 2, 8, 8});
    CHECK(deconv_output_extent(5, {2, 2, 0, 1, 1}) == 10);
    CHECK(deconv_output_extent(3, {16, 8, 4, 1, 1}) == 24);
    CHECK_THROWS_AS(transposed_conv_forward(Tensor({1, 2, 4, 4}, 0.0), l), std::invalid_argument);
    CHECK_THROWS_AS(validate(DeconvSpec{0, 2, 0, 1, 1}), std::invalid_argument);
}

TEST_CASE("transposed convolution is the adjoint of the strided convolution")
{
    Rng rng(27);
    for (const DeconvSpec spec : {DeconvSpec{4, 2, 1, 3, 2}, DeconvSpec{2, 2, 0, 2, 2}, DeconvSpec{8, 4, 2, 1, 3},
                                  DeconvSpec{3, 1, 1, 2, 2}}) {
        DeconvLayer d = random_deconv(spec, rng);
        std::fill(d.bias.begin(), d.bias.end(), 0.0);
        const Tensor x = oracle::random_tensor({1, spec.c_in, 3, 4}, rng);
        const Tensor y = transposed_conv_forward(x, d);

        ConvLayer c = make_conv_layer({spec.k, 1, spec.stride, spec.c_out, spec.c_in, spec.pad});
        c.weights = d.weights;  // (c_in, c_out, k, k) is the conv's (c_out, c_in, k, k)
        const Tensor back = conv2d_backward(Tensor(y.shape(), 0.0), c, x).grad_x;
        CHECK(back == y);

        const Tensor probe = oracle::random_tensor(y.shape(), rng);
        CHECK(oracle::dot(y, probe) == doctest::Approx(oracle::dot(x, conv2d_forward(probe, c))).epsilon(1e-12));
    }
}

TEST_CASE("transposed_conv_backward against finite differences")
{
    Rng rng(28);
    for (const DeconvSpec spec : {DeconvSpec{4, 2, 1, 2, 2}, DeconvSpec{3, 2, 0, 1, 2}}) {
        DeconvLayer l = random_deconv(spec, rng);
        Tensor x = oracle::random_tensor({1, spec.c_in, 3, 3}, rng);
        const Tensor go = oracle::random_tensor(transposed_conv_forward(x, l).shape(), rng);
        const auto g = transposed_conv_backward(x, l, go);
        auto f = [&] { return oracle::dot(go, transposed_conv_forward(x, l)); };
        double worst = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            worst = std::max(worst, oracle::relative_error(g.grad_x[i], oracle::central_difference(f, x[i])));
        for (std::size_t i = 0; i < l.weights.size(); ++i)
            worst = std::max(worst, oracle::relative_error(g.grad_w[i], oracle::central_difference(f, l.weights[i])));
        for (std::size_t i = 0; i < l.bias.size(); ++i)
            worst = std::max(worst, oracle::relative_error(g.grad_b[i], oracle::central_difference(f, l.bias[i])));
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("non-overlapping transposed conv equals a 1x1 DUC layer")
{
    Rng rng(29);
    for (std::size_t s : {2u, 4u}) {
        const DeconvLayer d = random_deconv({s, s, 0, 3, 4}, rng);
        const auto [conv, spec] = duc_from_transposed(d);
        CHECK(spec.channels() == s * s * 4);
        const Tensor x = oracle::random_tensor({1, 3, 3, 5}, rng);
        CHECK(max_abs_diff(duc_forward(x, conv, spec), transposed_conv_forward(x, d)) < 1e-12);
    }
    CHECK_THROWS_AS(duc_from_transposed(make_deconv_layer({4, 2, 1, 1, 1})), std::invalid_argument);
}
