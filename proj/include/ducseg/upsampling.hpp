#pragma once

#include "ducseg/conv.hpp"
#include "ducseg/tensor.hpp"

#include <cstddef>
#include <utility>
#include <vector>

namespace ducseg {

/// Dense upsampling geometry.
///
/// A prediction at feature resolution h x w carries, for every class, one
/// channel per offset (dy, dx) inside an s x s output block, s = d / cell.
/// Channel order is class-major: chan(l, dy, dx) = l s^2 + dy s + dx.
struct DucSpec {
    std::size_t d = 1;        // downsampling factor of the encoder
    std::size_t classes = 2;  // L
    std::size_t cell = 1;     // side of the label block one output pixel covers

    std::size_t scale() const { return d / cell; }
    std::size_t channels() const { return scale() * scale() * classes; }
    std::size_t channel(std::size_t l, std::size_t dy, std::size_t dx) const
    {
        const std::size_t s = scale();
        return l * s * s + dy * s + dx;
    }
};

void validate(const DucSpec& spec);

/// (n, s^2 L, h, w) -> (n, L, h s, w s); a pure permutation of elements.
Tensor duc_rearrange(const Tensor& x, const DucSpec& spec);
/// Inverse permutation; also the gradient routing of duc_rearrange.
Tensor duc_rearrange_inverse(const Tensor& y, const DucSpec& spec);

/// Convolution to s^2 L channels followed by duc_rearrange.
Tensor duc_forward(const Tensor& features, const ConvLayer& layer, const DucSpec& spec);
ConvGrads duc_backward(const Tensor& features, const ConvLayer& layer, const DucSpec& spec, const Tensor& grad_out);

/// Fixed bilinear interpolation by an integer factor, half-pixel centres
/// (align_corners = false), source coordinates clamped at the borders.
Tensor bilinear_upsample(const Tensor& x, std::size_t factor);
/// Adjoint of bilinear_upsample for an input of shape `in_shape`.
Tensor bilinear_upsample_backward(const Tensor& grad_out, const Shape& in_shape, std::size_t factor);

struct DeconvSpec {
    std::size_t k = 2;
    std::size_t stride = 2;  // upsampling factor
    std::size_t pad = 0;
    std::size_t c_in = 1;
    std::size_t c_out = 1;
};

/// Fractionally strided convolution. Weights are (c_in, c_out, k, k).
struct DeconvLayer {
    DeconvSpec spec;
    Tensor weights;
    std::vector<double> bias;  // c_out
};

void validate(const DeconvSpec& spec);
void validate(const DeconvLayer& layer);
DeconvLayer make_deconv_layer(const DeconvSpec& spec);
/// He-initialised with fan_in = c_in k k / stride^2, the taps one output pixel sees.
DeconvLayer make_deconv_layer(const DeconvSpec& spec, Rng& rng);

/// (in - 1) stride + k - 2 pad.
std::size_t deconv_output_extent(std::size_t in, const DeconvSpec& spec);

Tensor transposed_conv_forward(const Tensor& x, const DeconvLayer& layer);
/// grad_w has the (c_in, c_out, k, k) layout of the layer's weights.
ConvGrads transposed_conv_backward(const Tensor& x, const DeconvLayer& layer, const Tensor& grad_out);

/// For a non-overlapping transposed convolution (k == stride, pad == 0),
/// builds the 1x1 DUC convolution and spec that reproduce it exactly.
std::pair<ConvLayer, DucSpec> duc_from_transposed(const DeconvLayer& layer);

}  // namespace ducseg
