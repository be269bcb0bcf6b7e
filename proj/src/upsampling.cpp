#include "ducseg/upsampling.hpp"

#include "ducseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ducseg {

void validate(const DucSpec& spec)
{
    if (spec.d < 1) throw std::invalid_argument("DucSpec: d must be >= 1");
    if (spec.classes < 1) throw std::invalid_argument("DucSpec: class count must be >= 1");
    if (spec.cell != 1 && spec.cell != 2) throw std::invalid_argument("DucSpec: cell must be 1 or 2");
    if (spec.d % spec.cell != 0) throw std::invalid_argument("DucSpec: d must be divisible by cell");
}

Tensor duc_rearrange(const Tensor& x, const DucSpec& spec)
{
    validate(spec);
    const auto& in = x.shape();
    if (in.c != spec.channels())
        throw std::invalid_argument("duc_rearrange: input has " + std::to_string(in.c) + " channels, expected " +
                                    std::to_string(spec.channels()));
    const std::size_t s = spec.scale();
    Tensor out({in.n, spec.classes, in.h * s, in.w * s}, 0.0);
    for (std::size_t n = 0; n < in.n; ++n)
        for (std::size_t l = 0; l < spec.classes; ++l)
            for (std::size_t dy = 0; dy < s; ++dy)
                for (std::size_t dx = 0; dx < s; ++dx) {
                    const std::size_t c = spec.channel(l, dy, dx);
                    for (std::size_t y = 0; y < in.h; ++y)
                        for (std::size_t xx = 0; xx < in.w; ++xx)
                            out.at(n, l, y * s + dy, xx * s + dx) = x.at(n, c, y, xx);
                }
    return out;
}

Tensor duc_rearrange_inverse(const Tensor& y, const DucSpec& spec)
{
    validate(spec);
    const auto& out = y.shape();
    const std::size_t s = spec.scale();
    if (out.c != spec.classes || out.h % s != 0 || out.w % s != 0)
        throw std::invalid_argument("duc_rearrange_inverse: shape " + to_string(out) + " incompatible with spec");
    const std::size_t h = out.h / s;
    const std::size_t w = out.w / s;
    Tensor x({out.n, spec.channels(), h, w}, 0.0);
    for (std::size_t n = 0; n < out.n; ++n)
        for (std::size_t l = 0; l < spec.classes; ++l)
            for (std::size_t dy = 0; dy < s; ++dy)
                for (std::size_t dx = 0; dx < s; ++dx) {
                    const std::size_t c = spec.channel(l, dy, dx);
                    for (std::size_t yy = 0; yy < h; ++yy)
                        for (std::size_t xx = 0; xx < w; ++xx)
                            x.at(n, c, yy, xx) = y.at(n, l, yy * s + dy, xx * s + dx);
                }
    return x;
}

namespace {

void check_duc_layer(const ConvLayer& layer, const DucSpec& spec)
{
    validate(spec);
    if (layer.spec.c_out != spec.channels())
        throw std::invalid_argument("DUC layer produces " + std::to_string(layer.spec.c_out) +
                                    " channels, spec needs (d/cell)^2 L = " + std::to_string(spec.channels()));
}

}  // namespace

Tensor duc_forward(const Tensor& features, const ConvLayer& layer, const DucSpec& spec)
{
    check_duc_layer(layer, spec);
    return duc_rearrange(conv2d_forward(features, layer), spec);
}

ConvGrads duc_backward(const Tensor& features, const ConvLayer& layer, const DucSpec& spec, const Tensor& grad_out)
{
    check_duc_layer(layer, spec);
    return conv2d_backward(features, layer, duc_rearrange_inverse(grad_out, spec));
}

namespace {

struct Tap {
    std::size_t i0, i1;
    double frac;  // weight of i1
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t factor)
{
    std::vector<Tap> taps(in * factor);
    const double f = static_cast<double>(factor);
    for (std::size_t o = 0; o < taps.size(); ++o) {
        const double src = std::max(0.0, (static_cast<double>(o) + 0.5) / f - 0.5);
        const auto i0 = std::min(static_cast<std::size_t>(src), in - 1);
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, i0 == i1 ? 0.0 : src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t factor)
{
    if (factor < 1) throw std::invalid_argument("bilinear_upsample: factor must be >= 1");
    const auto& s = x.shape();
    const auto ty = bilinear_taps(s.h, factor);
    const auto tx = bilinear_taps(s.w, factor);
    Tensor out({s.n, s.c, s.h * factor, s.w * factor}, 0.0);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t oy = 0; oy < ty.size(); ++oy) {
                const Tap a = ty[oy];
                for (std::size_t ox = 0; ox < tx.size(); ++ox) {
                    const Tap b = tx[ox];
                    const double top = (1.0 - b.frac) * x.at(n, c, a.i0, b.i0) + b.frac * x.at(n, c, a.i0, b.i1);
                    const double bot = (1.0 - b.frac) * x.at(n, c, a.i1, b.i0) + b.frac * x.at(n, c, a.i1, b.i1);
                    out.at(n, c, oy, ox) = (1.0 - a.frac) * top + a.frac * bot;
                }
            }
    return out;
}

Tensor bilinear_upsample_backward(const Tensor& grad_out, const Shape& in_shape, std::size_t factor)
{
    if (factor < 1) throw std::invalid_argument("bilinear_upsample_backward: factor must be >= 1");
    const Shape expect{in_shape.n, in_shape.c, in_shape.h * factor, in_shape.w * factor};
    if (grad_out.shape() != expect)
        throw std::invalid_argument("bilinear_upsample_backward: grad shape " + to_string(grad_out.shape()) +
                                    " expected " + to_string(expect));
    const auto ty = bilinear_taps(in_shape.h, factor);
    const auto tx = bilinear_taps(in_shape.w, factor);
    Tensor gx(in_shape, 0.0);
    for (std::size_t n = 0; n < in_shape.n; ++n)
        for (std::size_t c = 0; c < in_shape.c; ++c)
            for (std::size_t oy = 0; oy < ty.size(); ++oy) {
                const Tap a = ty[oy];
                for (std::size_t ox = 0; ox < tx.size(); ++ox) {
                    const Tap b = tx[ox];
                    const double g = grad_out.at(n, c, oy, ox);
                    gx.at(n, c, a.i0, b.i0) += g * (1.0 - a.frac) * (1.0 - b.frac);
                    gx.at(n, c, a.i0, b.i1) += g * (1.0 - a.frac) * b.frac;
                    gx.at(n, c, a.i1, b.i0) += g * a.frac * (1.0 - b.frac);
                    gx.at(n, c, a.i1, b.i1) += g * a.frac * b.frac;
                }
            }
    return gx;
}

void validate(const DeconvSpec& spec)
{
    if (spec.k < 1 || spec.stride < 1 || spec.c_in < 1 || spec.c_out < 1)
        throw std::invalid_argument("DeconvSpec: k, stride and channel counts must be >= 1");
}

void validate(const DeconvLayer& layer)
{
    validate(layer.spec);
    const Shape expect{layer.spec.c_in, layer.spec.c_out, layer.spec.k, layer.spec.k};
    if (layer.weights.shape() != expect)
        throw std::invalid_argument("DeconvLayer: weight shape " + to_string(layer.weights.shape()) +
                                    " expected " + to_string(expect));
    if (layer.bias.size() != layer.spec.c_out) throw std::invalid_argument("DeconvLayer: bias length mismatch");
}

DeconvLayer make_deconv_layer(const DeconvSpec& spec)
{
    validate(spec);
    return {spec, Tensor({spec.c_in, spec.c_out, spec.k, spec.k}, 0.0), std::vector<double>(spec.c_out, 0.0)};
}

DeconvLayer make_deconv_layer(const DeconvSpec& spec, Rng& rng)
{
    validate(spec);
    const std::size_t taps = std::max<std::size_t>(1, spec.c_in * spec.k * spec.k / (spec.stride * spec.stride));
    return {spec, he_init({spec.c_in, spec.c_out, spec.k, spec.k}, taps, rng), std::vector<double>(spec.c_out, 0.0)};
}

std::size_t deconv_output_extent(std::size_t in, const DeconvSpec& spec)
{
    validate(spec);
    const std::size_t full = (in - 1) * spec.stride + spec.k;
    if (in < 1 || full < 2 * spec.pad + 1) throw std::invalid_argument("transposed conv output size < 1");
    return full - 2 * spec.pad;
}

Tensor transposed_conv_forward(const Tensor& x, const DeconvLayer& layer)
{
    validate(layer);
    const auto& s = x.shape();
    const auto& sp = layer.spec;
    if (s.c != sp.c_in)
        throw std::invalid_argument("transposed conv: input has " + std::to_string(s.c) + " channels, layer expects " +
                                    std::to_string(sp.c_in));
    const std::size_t oh = deconv_output_extent(s.h, sp);
    const std::size_t ow = deconv_output_extent(s.w, sp);
    const long pad = static_cast<long>(sp.pad);
    Tensor out({s.n, sp.c_out, oh, ow}, 0.0);
    // Scatter each input pixel through the kernel; for a given output element
    // contributions arrive ordered by (input channel, y, x, ky, kx).
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < sp.c_in; ++i)
            for (std::size_t y = 0; y < s.h; ++y) {
                const long oy0 = static_cast<long>(y * sp.stride) - pad;
                for (std::size_t xx = 0; xx < s.w; ++xx) {
                    const long ox0 = static_cast<long>(xx * sp.stride) - pad;
                    const double v = x.at(n, i, y, xx);
                    for (std::size_t o = 0; o < sp.c_out; ++o)
                        for (std::size_t ky = 0; ky < sp.k; ++ky) {
                            const long oy = oy0 + static_cast<long>(ky);
                            if (oy < 0 || oy >= static_cast<long>(oh)) continue;
                            for (std::size_t kx = 0; kx < sp.k; ++kx) {
                                const long ox = ox0 + static_cast<long>(kx);
                                if (ox < 0 || ox >= static_cast<long>(ow)) continue;
                                out.at(n, o, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox)) +=
                                    v * layer.weights.at(i, o, ky, kx);
                            }
                        }
                }
            }
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t o = 0; o < sp.c_out; ++o)
            for (std::size_t p = 0; p < oh * ow; ++p) out[out.index(n, o, 0, 0) + p] += layer.bias[o];
    return out;
}

ConvGrads transposed_conv_backward(const Tensor& x, const DeconvLayer& layer, const Tensor& grad_out)
{
    validate(layer);
    const auto& s = x.shape();
    const auto& sp = layer.spec;
    if (s.c != sp.c_in) throw std::invalid_argument("transposed conv backward: channel mismatch");
    const std::size_t oh = deconv_output_extent(s.h, sp);
    const std::size_t ow = deconv_output_extent(s.w, sp);
    const Shape out_shape{s.n, sp.c_out, oh, ow};
    if (grad_out.shape() != out_shape)
        throw std::invalid_argument("transposed conv backward: grad_out shape " + to_string(grad_out.shape()) +
                                    " expected " + to_string(out_shape));
    const long pad = static_cast<long>(sp.pad);
    ConvGrads g{Tensor(s, 0.0), Tensor(layer.weights.shape(), 0.0), std::vector<double>(sp.c_out, 0.0)};
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t o = 0; o < sp.c_out; ++o)
            for (std::size_t p = 0; p < oh * ow; ++p) g.grad_b[o] += grad_out[grad_out.index(n, o, 0, 0) + p];
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < sp.c_in; ++i)
            for (std::size_t y = 0; y < s.h; ++y) {
                const long oy0 = static_cast<long>(y * sp.stride) - pad;
                for (std::size_t xx = 0; xx < s.w; ++xx) {
                    const long ox0 = static_cast<long>(xx * sp.stride) - pad;
                    const double v = x.at(n, i, y, xx);
                    double acc = 0.0;
                    for (std::size_t o = 0; o < sp.c_out; ++o)
                        for (std::size_t ky = 0; ky < sp.k; ++ky) {
                            const long oy = oy0 + static_cast<long>(ky);
                            if (oy < 0 || oy >= static_cast<long>(oh)) continue;
                            for (std::size_t kx = 0; kx < sp.k; ++kx) {
                                const long ox = ox0 + static_cast<long>(kx);
                                if (ox < 0 || ox >= static_cast<long>(ow)) continue;
                                const double go =
                                    grad_out.at(n, o, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox));
                                acc += go * layer.weights.at(i, o, ky, kx);
                                g.grad_w.at(i, o, ky, kx) += go * v;
                            }
                        }
                    g.grad_x.at(n, i, y, xx) = acc;
                }
            }
    return g;
}

std::pair<ConvLayer, DucSpec> duc_from_transposed(const DeconvLayer& layer)
{
    validate(layer);
    const auto& sp = layer.spec;
    if (sp.k != sp.stride || sp.pad != 0)
        throw std::invalid_argument("duc_from_transposed: needs a non-overlapping layer (k == stride, pad == 0)");
    const DucSpec duc{sp.stride, sp.c_out, 1};
    ConvLayer conv = make_conv_layer({1, 1, 1, sp.c_in, duc.channels(), 0});
    for (std::size_t o = 0; o < sp.c_out; ++o)
        for (std::size_t dy = 0; dy < sp.k; ++dy)
            for (std::size_t dx = 0; dx < sp.k; ++dx) {
                const std::size_t c = duc.channel(o, dy, dx);
                conv.bias[c] = layer.bias[o];
                for (std::size_t i = 0; i < sp.c_in; ++i) conv.weights.at(c, i, 0, 0) = layer.weights.at(i, o, dy, dx);
            }
    return {conv, duc};
}

}  // namespace ducseg
