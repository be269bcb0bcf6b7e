#pragma once

#include "ducseg/conv.hpp"
#include "ducseg/data.hpp"
#include "ducseg/tensor.hpp"
#include "ducseg/upsampling.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ducseg {

class Rng;

enum class LossReduction { sum, mean };

struct LossResult {
    double loss = 0.0;
    Tensor grad;                // d loss / d logits
    std::size_t pixels = 0;     // non-ignored pixels that contributed
};

/// Pixelwise softmax cross-entropy of (1, L, H, W) logits, summed over all
/// non-ignored pixels (or averaged over them with LossReduction::mean).
LossResult softmax_ce_loss(const Tensor& logits, const LabelMap& labels,
                           LossReduction reduction = LossReduction::sum);

struct SgdConfig {
    double base_lr = 2.5e-4;
    double power = 0.9;
    std::size_t max_iter = 1000;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch = 1;
    std::uint64_t seed = 0;
    LossReduction reduction = LossReduction::sum;
};

void validate(const SgdConfig& cfg);

/// base_lr (1 - iter / max_iter)^power.
double poly_lr(std::size_t iter, const SgdConfig& cfg);

/// A trainable array and the gradient accumulated for it.
struct ParamRef {
    std::span<double> value;
    std::span<const double> grad;
};

struct SgdState {
    std::vector<std::vector<double>> velocity;
};

/// v <- momentum v - lr (g + weight_decay p);  p <- p + v, with lr = poly_lr(iter).
void sgd_step(std::span<const ParamRef> params, SgdState& state, const SgdConfig& cfg, std::size_t iter);

enum class DecoderKind { duc, bilinear, deconv, deconv2 };

std::string_view decoder_name(DecoderKind k);
std::optional<DecoderKind> parse_decoder(std::string_view name);

struct ToyNetConfig {
    std::size_t in_channels = 1;
    std::size_t classes = 3;
    std::size_t d = 4;                            // total stem downsampling, a power of two
    std::vector<std::size_t> rates{1, 2, 3};      // dilated 3x3 layers after the stem
    std::size_t width = 16;                       // channels of the dilated layers
    DecoderKind decoder = DecoderKind::duc;
    std::size_t cell = 1;                         // DUC only
};

void validate(const ToyNetConfig& cfg);

/// Small fully convolutional segmenter: strided 3x3 stem reaching stride d,
/// a stack of dilated 3x3 layers carrying the schedule under test (ReLU after
/// every encoder layer), and one of four decoders:
///
///   duc      3x3 conv to (d/cell)^2 L channels, then channel-to-space
///   bilinear 3x3 conv to L channels, fixed bilinear x d upsampling
///   deconv   one transposed conv, stride d, kernel 2d
///   deconv2  transposed conv x2 (ReLU), then x d/2
///
/// forward() caches activations for the following backward().
class ToyNet {
public:
    ToyNet(const ToyNetConfig& cfg, Rng& rng);
    ToyNet(const ToyNetConfig& cfg, std::vector<ConvLayer> encoder, std::optional<ConvLayer> head,
           std::vector<DeconvLayer> deconvs);

    const ToyNetConfig& config() const { return cfg_; }
    const std::vector<ConvLayer>& encoder() const { return encoder_; }
    const std::optional<ConvLayer>& head() const { return head_; }
    const std::vector<DeconvLayer>& deconvs() const { return deconvs_; }

    /// Side of the label block one output pixel represents (cell for DUC, else 1).
    std::size_t label_block() const;
    DucSpec duc_spec() const;

    /// (1, c_img, H, W) -> logits (1, L, H / label_block, W / label_block).
    Tensor forward(const Tensor& image);
    /// Accumulates parameter gradients for the last forward().
    void backward(const Tensor& grad_logits);
    void zero_grad();

    std::vector<ParamRef> parameters();
    std::size_t parameter_count();

    /// Full-resolution label prediction.
    LabelMap predict(const Tensor& image);

private:
    void init_grads();

    ToyNetConfig cfg_;
    std::vector<ConvLayer> encoder_;
    std::optional<ConvLayer> head_;
    std::vector<DeconvLayer> deconvs_;

    // cached activations: acts_[0] is the input, acts_[i + 1] the ReLU output of encoder_[i]
    std::vector<Tensor> acts_;
    Tensor head_out_;
    std::vector<Tensor> deconv_in_;

    std::vector<ConvGrads> enc_grads_;
    std::optional<ConvGrads> head_grads_;
    std::vector<ConvGrads> deconv_grads_;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t iter, double lr, double loss);
    std::size_t iteration;
    double lr;
};

struct TrainLog {
    std::vector<double> loss;
    std::vector<double> lr;
};

/// Minibatch SGD over `data`. Samples are visited in epochs, each shuffled
/// with Rng(cfg.seed). Labels are reduced by majority vote to the net's
/// label resolution. Deterministic for a fixed seed; throws TrainingDiverged
/// on a non-finite loss.
TrainLog train(ToyNet& net, std::span<const SegSample> data, const SgdConfig& cfg);

struct EvalResult {
    ConfusionMatrix confusion;
    std::vector<std::optional<double>> per_class;
    double mean = 0.0;
};

EvalResult evaluate(ToyNet& net, std::span<const SegSample> data);
/// Evaluation with the ground truth standing in for the predictions.
EvalResult evaluate_oracle(std::span<const SegSample> data, std::size_t classes);

void save_toynet(const std::filesystem::path& dir, const ToyNet& net);
ToyNet load_toynet(const std::filesystem::path& dir);

}  // namespace ducseg
