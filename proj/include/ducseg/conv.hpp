#pragma once

#include "ducseg/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ducseg {

class Rng;

/// Geometry of one dilated 2-D convolution (square, odd kernel).
struct ConvSpec {
    std::size_t k = 3;       // kernel side
    std::size_t r = 1;       // dilation rate
    std::size_t stride = 1;
    std::size_t c_in = 1;
    std::size_t c_out = 1;
    std::size_t pad = 0;     // zero padding on every border

    bool operator==(const ConvSpec&) const = default;
};

/// Spatial extent of a k-tap kernel with taps r apart: k + (k - 1)(r - 1).
std::size_t dilated_kernel_size(std::size_t k, std::size_t r);

/// Padding that keeps the spatial size at stride 1: r (k - 1) / 2, k odd.
std::size_t same_padding(std::size_t k, std::size_t r);

/// floor((in + 2 pad - k_d) / stride) + 1; throws if that would be < 1.
std::size_t conv_output_extent(std::size_t in, const ConvSpec& spec);

void validate(const ConvSpec& spec);

struct ConvLayer {
    ConvSpec spec;
    Tensor weights;            // (c_out, c_in, k, k)
    std::vector<double> bias;  // c_out
};

/// Zero weights and zero bias.
ConvLayer make_conv_layer(const ConvSpec& spec);
/// He-initialised weights (fan_in = c_in k k), zero bias.
ConvLayer make_conv_layer(const ConvSpec& spec, Rng& rng);
void validate(const ConvLayer& layer);

/// One-dimensional dilated filtering in its literal summation form
///
///     g[i] = sum_{l=1..L} f[i + r l] h[l]
///
/// with h[l] stored at h[l - 1]. Valid positions only: i runs from 0 while
/// i + r L < len(f), so the result has len(f) - r L entries. Note the first
/// tap sits r samples past i, not at i.
std::vector<double> conv1d_dilated(std::span<const double> f, std::span<const double> h, std::size_t r);

/// Dilated cross-correlation (no kernel flip) of the zero-padded input, plus bias.
Tensor conv2d_forward(const Tensor& x, const ConvLayer& layer);

struct ConvGrads {
    Tensor grad_x;
    Tensor grad_w;
    std::vector<double> grad_b;
};

/// Exact partials of sum(grad_out * conv2d_forward(x, layer)).
ConvGrads conv2d_backward(const Tensor& x, const ConvLayer& layer, const Tensor& grad_out);

/// Equivalent r = 1 layer whose k_d x k_d kernel has zeros between the taps.
ConvLayer expand_dilated_kernel(const ConvLayer& layer);

// Weights go to <stem>.weights.bin, bias to <stem>.bias.bin as a
// (1, c_out, 1, 1) tensor, and the spec to <stem>.json.
void save_conv_layer(const std::filesystem::path& dir, const std::string& stem, const ConvLayer& layer);
ConvLayer load_conv_layer(const std::filesystem::path& dir, const std::string& stem);

}  // namespace ducseg
