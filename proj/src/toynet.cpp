#include "ducseg/train.hpp"

#include "ducseg/rng.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>

namespace ducseg {

std::string_view decoder_name(DecoderKind k)
{
    switch (k) {
    case DecoderKind::duc: return "duc";
    case DecoderKind::bilinear: return "bilinear";
    case DecoderKind::deconv: return "deconv";
    case DecoderKind::deconv2: return "deconv2";
    }
    return "?";
}

std::optional<DecoderKind> parse_decoder(std::string_view name)
{
    for (auto k : {DecoderKind::duc, DecoderKind::bilinear, DecoderKind::deconv, DecoderKind::deconv2})
        if (decoder_name(k) == name) return k;
    return std::nullopt;
}

void validate(const ToyNetConfig& cfg)
{
    if (cfg.in_channels < 1 || cfg.classes < 2 || cfg.width < 2)
        throw std::invalid_argument("ToyNetConfig: need >= 1 input channel, >= 2 classes and width >= 2");
    if (cfg.d < 1 || !std::has_single_bit(cfg.d)) throw std::invalid_argument("ToyNetConfig: d must be a power of two");
    if (cfg.rates.empty()) throw std::invalid_argument("ToyNetConfig: empty dilation schedule");
    for (auto r : cfg.rates)
        if (r < 1) throw std::invalid_argument("ToyNetConfig: dilation rates must be >= 1");
    if (cfg.decoder == DecoderKind::duc)
        validate(DucSpec{cfg.d, cfg.classes, cfg.cell});
    else if (cfg.cell != 1)
        throw std::invalid_argument("ToyNetConfig: cell > 1 only applies to the DUC decoder");
    if (cfg.decoder == DecoderKind::deconv && cfg.d < 2)
        throw std::invalid_argument("ToyNetConfig: deconv decoder needs d >= 2");
    if (cfg.decoder == DecoderKind::deconv2 && cfg.d < 4)
        throw std::invalid_argument("ToyNetConfig: deconv2 decoder needs d >= 4");
}

namespace {

std::size_t stem_count(std::size_t d)
{
    return static_cast<std::size_t>(std::countr_zero(d));
}

Tensor relu(Tensor t)
{
    for (auto& v : t.data())
        if (v < 0.0) v = 0.0;
    return t;
}

void relu_backward(Tensor& grad, const Tensor& activated)
{
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(activated[i] > 0.0)) grad[i] = 0.0;
}

void accumulate(ConvGrads& into, const ConvGrads& g)
{
    for (std::size_t i = 0; i < into.grad_w.size(); ++i) into.grad_w[i] += g.grad_w[i];
    for (std::size_t i = 0; i < into.grad_b.size(); ++i) into.grad_b[i] += g.grad_b[i];
}

ConvGrads zero_grads(const Tensor& weights, std::size_t bias)
{
    return {Tensor(), Tensor(weights.shape(), 0.0), std::vector<double>(bias, 0.0)};
}

}  // namespace

ToyNet::ToyNet(const ToyNetConfig& cfg, Rng& rng) : cfg_(cfg)
{
    validate(cfg_);
    const std::size_t stems = stem_count(cfg_.d);
    std::size_t ch = cfg_.in_channels;
    for (std::size_t j = 0; j < stems; ++j) {
        const std::size_t out = std::max<std::size_t>(2, cfg_.width >> (stems - 1 - j));
        encoder_.push_back(make_conv_layer({3, 1, 2, ch, out, 1}, rng));
        ch = out;
    }
    for (auto r : cfg_.rates) {
        encoder_.push_back(make_conv_layer({3, r, 1, ch, cfg_.width, same_padding(3, r)}, rng));
        ch = cfg_.width;
    }
    const std::size_t L = cfg_.classes;
    switch (cfg_.decoder) {
    case DecoderKind::duc:
        head_ = make_conv_layer({3, 1, 1, ch, duc_spec().channels(), 1}, rng);
        break;
    case DecoderKind::bilinear:
        head_ = make_conv_layer({3, 1, 1, ch, L, 1}, rng);
        break;
    case DecoderKind::deconv:
        deconvs_.push_back(make_deconv_layer({2 * cfg_.d, cfg_.d, cfg_.d / 2, ch, L}, rng));
        break;
    case DecoderKind::deconv2: {
        const std::size_t mid = std::max<std::size_t>(2, ch / 2);
        const std::size_t s = cfg_.d / 2;
        deconvs_.push_back(make_deconv_layer({4, 2, 1, ch, mid}, rng));
        deconvs_.push_back(make_deconv_layer({2 * s, s, s / 2, mid, L}, rng));
        break;
    }
    }
    init_grads();
}

ToyNet::ToyNet(const ToyNetConfig& cfg, std::vector<ConvLayer> encoder, std::optional<ConvLayer> head,
               std::vector<DeconvLayer> deconvs)
    : cfg_(cfg), encoder_(std::move(encoder)), head_(std::move(head)), deconvs_(std::move(deconvs))
{
    validate(cfg_);
    if (encoder_.size() != stem_count(cfg_.d) + cfg_.rates.size())
        throw std::invalid_argument("ToyNet: encoder depth does not match config");
    const bool needs_head = cfg_.decoder == DecoderKind::duc || cfg_.decoder == DecoderKind::bilinear;
    if (needs_head != head_.has_value()) throw std::invalid_argument("ToyNet: head layer does not match decoder");
    const std::size_t n_deconv =
        cfg_.decoder == DecoderKind::deconv ? 1 : cfg_.decoder == DecoderKind::deconv2 ? 2 : 0;
    if (deconvs_.size() != n_deconv) throw std::invalid_argument("ToyNet: deconv layers do not match decoder");
    for (const auto& l : encoder_) validate(l);
    if (head_) validate(*head_);
    for (const auto& l : deconvs_) validate(l);
    init_grads();
}

void ToyNet::init_grads()
{
    enc_grads_.clear();
    for (const auto& l : encoder_) enc_grads_.push_back(zero_grads(l.weights, l.bias.size()));
    head_grads_.reset();
    if (head_) head_grads_ = zero_grads(head_->weights, head_->bias.size());
    deconv_grads_.clear();
    for (const auto& l : deconvs_) deconv_grads_.push_back(zero_grads(l.weights, l.bias.size()));
}

std::size_t ToyNet::label_block() const
{
    return cfg_.decoder == DecoderKind::duc ? cfg_.cell : 1;
}

DucSpec ToyNet::duc_spec() const
{
    return {cfg_.d, cfg_.classes, cfg_.cell};
}

Tensor ToyNet::forward(const Tensor& image)
{
    const auto& s = image.shape();
    if (s.n != 1 || s.c != cfg_.in_channels)
        throw std::invalid_argument("ToyNet::forward: expected (1, " + std::to_string(cfg_.in_channels) +
                                    ", H, W) input, got " + to_string(s));
    if (s.h % cfg_.d || s.w % cfg_.d)
        throw std::invalid_argument("ToyNet::forward: image size must be divisible by d");
    acts_.clear();
    acts_.push_back(image);
    for (const auto& layer : encoder_) acts_.push_back(relu(conv2d_forward(acts_.back(), layer)));
    const Tensor& feat = acts_.back();
    if (feat.shape().h * cfg_.d != s.h || feat.shape().w * cfg_.d != s.w)
        throw std::logic_error("ToyNet: encoder output is not input / d");

    deconv_in_.clear();
    switch (cfg_.decoder) {
    case DecoderKind::duc:
        head_out_ = conv2d_forward(feat, *head_);
        return duc_rearrange(head_out_, duc_spec());
    case DecoderKind::bilinear:
        head_out_ = conv2d_forward(feat, *head_);
        return bilinear_upsample(head_out_, cfg_.d);
    case DecoderKind::deconv:
        deconv_in_.push_back(feat);
        return transposed_conv_forward(feat, deconvs_[0]);
    case DecoderKind::deconv2:
        deconv_in_.push_back(feat);
        deconv_in_.push_back(relu(transposed_conv_forward(feat, deconvs_[0])));
        return transposed_conv_forward(deconv_in_[1], deconvs_[1]);
    }
    throw std::logic_error("unknown decoder");
}

void ToyNet::backward(const Tensor& grad_logits)
{
    if (acts_.empty()) throw std::logic_error("ToyNet::backward called before forward");
    const Tensor& feat = acts_.back();
    Tensor g;
    switch (cfg_.decoder) {
    case DecoderKind::duc: {
        auto cg = conv2d_backward(feat, *head_, duc_rearrange_inverse(grad_logits, duc_spec()));
        accumulate(*head_grads_, cg);
        g = std::move(cg.grad_x);
        break;
    }
    case DecoderKind::bilinear: {
        auto cg = conv2d_backward(feat, *head_, bilinear_upsample_backward(grad_logits, head_out_.shape(), cfg_.d));
        accumulate(*head_grads_, cg);
        g = std::move(cg.grad_x);
        break;
    }
    case DecoderKind::deconv:
    case DecoderKind::deconv2: {
        g = grad_logits;
        for (std::size_t i = deconvs_.size(); i-- > 0;) {
            if (i + 1 < deconvs_.size()) relu_backward(g, deconv_in_[i + 1]);
            auto dg = transposed_conv_backward(deconv_in_[i], deconvs_[i], g);
            accumulate(deconv_grads_[i], dg);
            g = std::move(dg.grad_x);
        }
        break;
    }
    }
    for (std::size_t i = encoder_.size(); i-- > 0;) {
        relu_backward(g, acts_[i + 1]);
        auto cg = conv2d_backward(acts_[i], encoder_[i], g);
        accumulate(enc_grads_[i], cg);
        g = std::move(cg.grad_x);
    }
}

void ToyNet::zero_grad()
{
    auto clear = [](ConvGrads& g) {
        g.grad_w.fill(0.0);
        std::fill(g.grad_b.begin(), g.grad_b.end(), 0.0);
    };
    for (auto& g : enc_grads_) clear(g);
    if (head_grads_) clear(*head_grads_);
    for (auto& g : deconv_grads_) clear(g);
}

std::vector<ParamRef> ToyNet::parameters()
{
    std::vector<ParamRef> ps;
    auto add = [&](Tensor& w, std::vector<double>& b, ConvGrads& g) {
        ps.push_back({w.data(), g.grad_w.data()});
        ps.push_back({std::span<double>(b), std::span<const double>(g.grad_b)});
    };
    for (std::size_t i = 0; i < encoder_.size(); ++i) add(encoder_[i].weights, encoder_[i].bias, enc_grads_[i]);
    if (head_) add(head_->weights, head_->bias, *head_grads_);
    for (std::size_t i = 0; i < deconvs_.size(); ++i) add(deconvs_[i].weights, deconvs_[i].bias, deconv_grads_[i]);
    return ps;
}

std::size_t ToyNet::parameter_count()
{
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.value.size();
    return n;
}

LabelMap ToyNet::predict(const Tensor& image)
{
    LabelMap pred = argmax_labels(forward(image));
    return label_block() > 1 ? upsample_labels_nearest(pred, label_block()) : pred;
}

}  // namespace ducseg
