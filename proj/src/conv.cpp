#include "ducseg/conv.hpp"

#include "ducseg/io.hpp"
#include "ducseg/rng.hpp"

#include <json.hpp>

#include <fstream>
#include <stdexcept>

namespace ducseg {

std::size_t dilated_kernel_size(std::size_t k, std::size_t r)
{
    if (k < 1 || r < 1) throw std::invalid_argument("dilated_kernel_size: k and r must be >= 1");
    return k + (k - 1) * (r - 1);
}

std::size_t same_padding(std::size_t k, std::size_t r)
{
    if (k % 2 == 0) throw std::invalid_argument("same_padding: kernel size must be odd");
    return r * (k - 1) / 2;
}

void validate(const ConvSpec& spec)
{
    if (spec.k < 1 || spec.r < 1 || spec.stride < 1 || spec.c_in < 1 || spec.c_out < 1)
        throw std::invalid_argument("ConvSpec: k, r, stride and channel counts must be >= 1");
}

std::size_t conv_output_extent(std::size_t in, const ConvSpec& spec)
{
    validate(spec);
    const std::size_t kd = dilated_kernel_size(spec.k, spec.r);
    const std::size_t padded = in + 2 * spec.pad;
    if (padded < kd)
        throw std::invalid_argument("convolution output size < 1: input " + std::to_string(in) +
                                    " with pad " + std::to_string(spec.pad) + " is smaller than k_d " +
                                    std::to_string(kd));
    return (padded - kd) / spec.stride + 1;
}

ConvLayer make_conv_layer(const ConvSpec& spec)
{
    validate(spec);
    return {spec, Tensor({spec.c_out, spec.c_in, spec.k, spec.k}, 0.0), std::vector<double>(spec.c_out, 0.0)};
}

ConvLayer make_conv_layer(const ConvSpec& spec, Rng& rng)
{
    validate(spec);
    return {spec, he_init({spec.c_out, spec.c_in, spec.k, spec.k}, spec.c_in * spec.k * spec.k, rng),
            std::vector<double>(spec.c_out, 0.0)};
}

void validate(const ConvLayer& layer)
{
    validate(layer.spec);
    const Shape expect{layer.spec.c_out, layer.spec.c_in, layer.spec.k, layer.spec.k};
    if (layer.weights.shape() != expect)
        throw std::invalid_argument("ConvLayer: weight shape " + to_string(layer.weights.shape()) +
                                    " inconsistent with spec " + to_string(expect));
    if (layer.bias.size() != layer.spec.c_out)
        throw std::invalid_argument("ConvLayer: bias length does not match c_out");
}

std::vector<double> conv1d_dilated(std::span<const double> f, std::span<const double> h, std::size_t r)
{
    if (r < 1) throw std::invalid_argument("conv1d_dilated: dilation must be >= 1");
    if (h.empty()) throw std::invalid_argument("conv1d_dilated: empty filter");
    const std::size_t span = r * h.size();
    if (f.size() < span + 1)
        throw std::invalid_argument("conv1d_dilated: sequence too short for filter length " +
                                    std::to_string(h.size()) + " at dilation " + std::to_string(r));
    std::vector<double> g(f.size() - span, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double acc = 0.0;
        for (std::size_t l = 1; l <= h.size(); ++l) acc += f[i + r * l] * h[l - 1];
        g[i] = acc;
    }
    return g;
}

namespace {

struct Geometry {
    std::size_t n, c_in, h, w, c_out, oh, ow;
};

Geometry check_input(const Tensor& x, const ConvLayer& layer)
{
    validate(layer);
    const auto& s = x.shape();
    if (s.c != layer.spec.c_in)
        throw std::invalid_argument("conv2d: input has " + std::to_string(s.c) + " channels, layer expects " +
                                    std::to_string(layer.spec.c_in));
    return {s.n, s.c, s.h, s.w, layer.spec.c_out, conv_output_extent(s.h, layer.spec),
            conv_output_extent(s.w, layer.spec)};
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const ConvLayer& layer)
{
    const Geometry g = check_input(x, layer);
    const auto& sp = layer.spec;
    const long pad = static_cast<long>(sp.pad);
    const long r = static_cast<long>(sp.r);
    const long h = static_cast<long>(g.h);
    const long w = static_cast<long>(g.w);
    const std::size_t kk = sp.k * sp.k;

    Tensor out({g.n, g.c_out, g.oh, g.ow}, 0.0);
    const double* xd = x.data().data();
    const double* wd = layer.weights.data().data();
    double* od = out.data().data();

    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t co = 0; co < g.c_out; ++co) {
            const double* wco = wd + co * g.c_in * kk;
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
                const long iy0 = static_cast<long>(oy * sp.stride) - pad;
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                    const long ix0 = static_cast<long>(ox * sp.stride) - pad;
                    double acc = 0.0;
                    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
                        const double* xp = xd + (n * g.c_in + ci) * g.h * g.w;
                        const double* wp = wco + ci * kk;
                        for (std::size_t ky = 0; ky < sp.k; ++ky) {
                            const long iy = iy0 + static_cast<long>(ky) * r;
                            if (iy < 0 || iy >= h) continue;
                            for (std::size_t kx = 0; kx < sp.k; ++kx) {
                                const long ix = ix0 + static_cast<long>(kx) * r;
                                if (ix < 0 || ix >= w) continue;
                                acc += xp[iy * w + ix] * wp[ky * sp.k + kx];
                            }
                        }
                    }
                    od[((n * g.c_out + co) * g.oh + oy) * g.ow + ox] = acc + layer.bias[co];
                }
            }
        }
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvLayer& layer, const Tensor& grad_out)
{
    const Geometry g = check_input(x, layer);
    const Shape out_shape{g.n, g.c_out, g.oh, g.ow};
    if (grad_out.shape() != out_shape)
        throw std::invalid_argument("conv2d_backward: grad_out shape " + to_string(grad_out.shape()) +
                                    " does not match forward output " + to_string(out_shape));
    const auto& sp = layer.spec;
    const long pad = static_cast<long>(sp.pad);
    const long r = static_cast<long>(sp.r);
    const long h = static_cast<long>(g.h);
    const long w = static_cast<long>(g.w);
    const std::size_t kk = sp.k * sp.k;

    ConvGrads grads{Tensor(x.shape(), 0.0), Tensor(layer.weights.shape(), 0.0),
                    std::vector<double>(g.c_out, 0.0)};
    const double* xd = x.data().data();
    const double* wd = layer.weights.data().data();
    const double* gd = grad_out.data().data();
    double* gxd = grads.grad_x.data().data();
    double* gwd = grads.grad_w.data().data();

    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t co = 0; co < g.c_out; ++co) {
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
                const long iy0 = static_cast<long>(oy * sp.stride) - pad;
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                    const long ix0 = static_cast<long>(ox * sp.stride) - pad;
                    const double go = gd[((n * g.c_out + co) * g.oh + oy) * g.ow + ox];
                    grads.grad_b[co] += go;
                    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
                        const std::size_t plane = (n * g.c_in + ci) * g.h * g.w;
                        const std::size_t wofs = (co * g.c_in + ci) * kk;
                        for (std::size_t ky = 0; ky < sp.k; ++ky) {
                            const long iy = iy0 + static_cast<long>(ky) * r;
                            if (iy < 0 || iy >= h) continue;
                            for (std::size_t kx = 0; kx < sp.k; ++kx) {
                                const long ix = ix0 + static_cast<long>(kx) * r;
                                if (ix < 0 || ix >= w) continue;
                                const std::size_t xi = plane + static_cast<std::size_t>(iy * w + ix);
                                const std::size_t wi = wofs + ky * sp.k + kx;
                                gxd[xi] += go * wd[wi];
                                gwd[wi] += go * xd[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    return grads;
}

ConvLayer expand_dilated_kernel(const ConvLayer& layer)
{
    validate(layer);
    const auto& sp = layer.spec;
    ConvSpec dense = sp;
    dense.k = dilated_kernel_size(sp.k, sp.r);
    dense.r = 1;
    ConvLayer out = make_conv_layer(dense);
    out.bias = layer.bias;
    for (std::size_t co = 0; co < sp.c_out; ++co)
        for (std::size_t ci = 0; ci < sp.c_in; ++ci)
            for (std::size_t ky = 0; ky < sp.k; ++ky)
                for (std::size_t kx = 0; kx < sp.k; ++kx)
                    out.weights.at(co, ci, ky * sp.r, kx * sp.r) = layer.weights.at(co, ci, ky, kx);
    return out;
}

void save_conv_layer(const std::filesystem::path& dir, const std::string& stem, const ConvLayer& layer)
{
    validate(layer);
    save_tensor(dir / (stem + ".weights.bin"), layer.weights);
    save_tensor(dir / (stem + ".bias.bin"), Tensor({1, layer.spec.c_out, 1, 1}, layer.bias));
    const auto& sp = layer.spec;
    nlohmann::ordered_json j;
    j["k"] = sp.k;
    j["r"] = sp.r;
    j["stride"] = sp.stride;
    j["c_in"] = sp.c_in;
    j["c_out"] = sp.c_out;
    j["pad"] = sp.pad;
    j["weights"] = stem + ".weights.bin";
    j["bias"] = stem + ".bias.bin";
    write_text_file(dir / (stem + ".json"), j.dump(2) + "\n");
}

ConvLayer load_conv_layer(const std::filesystem::path& dir, const std::string& stem)
{
    std::ifstream is(dir / (stem + ".json"));
    if (!is) throw std::runtime_error("cannot open " + (dir / (stem + ".json")).string());
    const auto j = nlohmann::json::parse(is);
    ConvSpec sp;
    sp.k = j.at("k").get<std::size_t>();
    sp.r = j.at("r").get<std::size_t>();
    sp.stride = j.at("stride").get<std::size_t>();
    sp.c_in = j.at("c_in").get<std::size_t>();
    sp.c_out = j.at("c_out").get<std::size_t>();
    sp.pad = j.at("pad").get<std::size_t>();
    ConvLayer layer{sp, load_tensor(dir / j.at("weights").get<std::string>()), {}};
    const Tensor bias = load_tensor(dir / j.at("bias").get<std::string>());
    layer.bias.assign(bias.data().begin(), bias.data().end());
    validate(layer);
    return layer;
}

}  // namespace ducseg
