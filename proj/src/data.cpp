#include "ducseg/data.hpp"

#include "ducseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace ducseg {

void validate_labels(const LabelMap& labels, std::size_t classes)
{
    if (labels.values.size() != labels.height * labels.width)
        throw std::invalid_argument("label map size does not match its dimensions");
    for (int v : labels.values)
        if (v != kIgnoreLabel && (v < 0 || static_cast<std::size_t>(v) >= classes))
            throw std::invalid_argument("label " + std::to_string(v) + " out of range for " +
                                        std::to_string(classes) + " classes");
}

namespace {

double base_intensity(int cls)
{
    if (cls == 0) return 0.0;
    if (cls == 1) return 1.0;
    return -1.0 - 0.5 * (cls - 2);
}

// Pixels a line of the given orientation covers. Orientation 0 horizontal,
// 1 vertical, 2 and 3 the two diagonals.
std::vector<std::size_t> line_pixels(const ThinStructuresConfig& cfg, Rng& rng)
{
    const long H = static_cast<long>(cfg.height);
    const long W = static_cast<long>(cfg.width);
    const long t = static_cast<long>(cfg.thickness);
    const int orient = static_cast<int>(rng.below(4));
    const long extent = (orient == 0) ? W : H;
    const long len = rng.range(std::max<long>(2, extent / 4), extent);
    std::vector<std::size_t> px;
    auto put = [&](long y, long x) {
        if (y >= 0 && y < H && x >= 0 && x < W) px.push_back(static_cast<std::size_t>(y * W + x));
    };
    if (orient == 0) {
        const long y0 = rng.range(0, H - t);
        const long x0 = rng.range(0, W - len);
        for (long y = y0; y < y0 + t; ++y)
            for (long x = x0; x < x0 + len; ++x) put(y, x);
    } else if (orient == 1) {
        const long x0 = rng.range(0, W - t);
        const long y0 = rng.range(0, H - len);
        for (long y = y0; y < y0 + len; ++y)
            for (long x = x0; x < x0 + t; ++x) put(y, x);
    } else {
        const long dir = orient == 2 ? 1 : -1;
        const long y0 = rng.range(0, H - 1);
        const long x0 = rng.range(0, W - 1);
        for (long i = 0; i < len; ++i)
            for (long j = 0; j < t; ++j) put(y0 + i, x0 + dir * i + j);
    }
    std::sort(px.begin(), px.end());
    px.erase(std::unique(px.begin(), px.end()), px.end());
    return px;
}

std::vector<std::size_t> blob_pixels(const ThinStructuresConfig& cfg, Rng& rng)
{
    const long H = static_cast<long>(cfg.height);
    const long W = static_cast<long>(cfg.width);
    const long bh = rng.range(std::max<long>(2, H / 5), std::max<long>(2, 2 * H / 5));
    const long bw = rng.range(std::max<long>(2, W / 5), std::max<long>(2, 2 * W / 5));
    const long y0 = rng.range(0, std::max<long>(0, H - bh));
    const long x0 = rng.range(0, std::max<long>(0, W - bw));
    std::vector<std::size_t> px;
    for (long y = y0; y < std::min(H, y0 + bh); ++y)
        for (long x = x0; x < std::min(W, x0 + bw); ++x) px.push_back(static_cast<std::size_t>(y * W + x));
    return px;
}

// Adds shapes of class `cls` while the class fraction stays below target;
// a shape is dropped if it would overshoot by more than half its area.
template <class Gen>
void place_until(LabelMap& labels, int cls_lo, int cls_hi, double target, Gen gen, Rng& rng)
{
    const double total = static_cast<double>(labels.values.size());
    auto owned = [&]() {
        std::size_t c = 0;
        for (int v : labels.values) c += (v >= cls_lo && v <= cls_hi);
        return static_cast<double>(c);
    };
    for (int attempt = 0; attempt < 200; ++attempt) {
        const double have = owned();
        const auto px = gen();
        const int cls = static_cast<int>(rng.range(cls_lo, cls_hi));
        double fresh = 0;
        for (auto p : px) fresh += (labels.values[p] < cls_lo || labels.values[p] > cls_hi);
        if (have + fresh / 2.0 > target * total) break;
        for (auto p : px) labels.values[p] = cls;
    }
}

}  // namespace

std::vector<SegSample> gen_thin_structures(std::size_t count, const ThinStructuresConfig& cfg, Rng& rng)
{
    if (cfg.classes < 3) throw std::invalid_argument("thin-structure scenes need at least 3 classes");
    if (cfg.thickness < 1 || cfg.thickness > std::min(cfg.height, cfg.width))
        throw std::invalid_argument("line thickness out of range");
    if (cfg.height < 4 || cfg.width < 4) throw std::invalid_argument("image too small");
    std::vector<SegSample> out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        LabelMap labels(cfg.height, cfg.width, 0);
        place_until(labels, 2, static_cast<int>(cfg.classes) - 1, cfg.blob_density,
                    [&] { return blob_pixels(cfg, rng); }, rng);
        place_until(labels, 1, 1, cfg.thin_density, [&] { return line_pixels(cfg, rng); }, rng);
        Tensor image({1, 1, cfg.height, cfg.width}, 0.0);
        for (std::size_t i = 0; i < labels.values.size(); ++i)
            image[i] = base_intensity(labels.values[i]) + cfg.noise * rng.normal();
        out.push_back({std::move(image), std::move(labels)});
    }
    return out;
}

std::vector<double> class_frequencies(std::span<const SegSample> samples, std::size_t classes)
{
    std::vector<double> freq(classes, 0.0);
    double total = 0;
    for (const auto& s : samples)
        for (int v : s.labels.values) {
            if (v == kIgnoreLabel) continue;
            freq.at(static_cast<std::size_t>(v)) += 1.0;
            total += 1.0;
        }
    if (total > 0)
        for (auto& f : freq) f /= total;
    return freq;
}

LabelMap downsample_labels_majority(const LabelMap& labels, std::size_t block)
{
    if (block < 1) throw std::invalid_argument("block size must be >= 1");
    if (labels.height % block || labels.width % block)
        throw std::invalid_argument("label map not divisible by block size");
    LabelMap out(labels.height / block, labels.width / block, kIgnoreLabel);
    std::vector<std::size_t> votes(256, 0);
    for (std::size_t by = 0; by < out.height; ++by)
        for (std::size_t bx = 0; bx < out.width; ++bx) {
            std::fill(votes.begin(), votes.end(), 0);
            for (std::size_t y = by * block; y < (by + 1) * block; ++y)
                for (std::size_t x = bx * block; x < (bx + 1) * block; ++x) {
                    const int v = labels.at(y, x);
                    if (v != kIgnoreLabel) ++votes.at(static_cast<std::size_t>(v));
                }
            std::size_t best = 0;
            for (std::size_t c = 1; c < votes.size(); ++c)
                if (votes[c] > votes[best]) best = c;
            if (votes[best] > 0) out.at(by, bx) = static_cast<int>(best);
        }
    return out;
}

LabelMap upsample_labels_nearest(const LabelMap& labels, std::size_t factor)
{
    if (factor < 1) throw std::invalid_argument("factor must be >= 1");
    LabelMap out(labels.height * factor, labels.width * factor);
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) out.at(y, x) = labels.at(y / factor, x / factor);
    return out;
}

LabelMap argmax_labels(const Tensor& logits)
{
    const auto& s = logits.shape();
    if (s.n != 1) throw std::invalid_argument("argmax_labels: expects a single image");
    LabelMap out(s.h, s.w);
    for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < s.c; ++c)
                if (logits.at(0, c, y, x) > logits.at(0, best, y, x)) best = c;
            out.at(y, x) = static_cast<int>(best);
        }
    return out;
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0)
{
    if (classes < 1) throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& labels)
{
    if (pred.height != labels.height || pred.width != labels.width)
        throw std::invalid_argument("prediction and label maps differ in shape");
    for (std::size_t i = 0; i < labels.values.size(); ++i) {
        const int l = labels.values[i];
        if (l == kIgnoreLabel) continue;
        const int p = pred.values[i];
        if (l < 0 || static_cast<std::size_t>(l) >= classes_ || p < 0 || static_cast<std::size_t>(p) >= classes_)
            throw std::invalid_argument("label or prediction out of range");
        ++counts_[static_cast<std::size_t>(l) * classes_ + static_cast<std::size_t>(p)];
    }
}

std::vector<std::optional<double>> ConfusionMatrix::per_class_iou() const
{
    std::vector<std::optional<double>> iou(classes_);
    for (std::size_t c = 0; c < classes_; ++c) {
        const std::uint64_t tp = count(c, c);
        std::uint64_t fp = 0, fn = 0;
        for (std::size_t o = 0; o < classes_; ++o) {
            if (o == c) continue;
            fp += count(o, c);
            fn += count(c, o);
        }
        const std::uint64_t denom = tp + fp + fn;
        if (denom > 0) iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
    }
    return iou;
}

double ConfusionMatrix::mean_iou() const
{
    double sum = 0;
    std::size_t present = 0;
    for (const auto& v : per_class_iou())
        if (v) {
            sum += *v;
            ++present;
        }
    return present ? sum / static_cast<double>(present) : 0.0;
}

IoUResult miou(const LabelMap& pred, const LabelMap& labels, std::size_t classes)
{
    ConfusionMatrix cm(classes);
    cm.add(pred, labels);
    return {cm.per_class_iou(), cm.mean_iou()};
}

GrayImage image_to_pgm(const Tensor& image, double lo, double hi)
{
    const auto& s = image.shape();
    GrayImage img{s.w, s.h, 255, std::vector<int>(s.h * s.w)};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const double t = (image[i] - lo) / (hi - lo);
        img.pixels[i] = static_cast<int>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
    }
    return img;
}

GrayImage labels_to_pgm(const LabelMap& labels)
{
    return {labels.width, labels.height, 255, labels.values};
}

LabelMap labels_from_pgm(const GrayImage& img)
{
    LabelMap out(img.height, img.width);
    out.values = img.pixels;
    return out;
}

void save_samples(const std::filesystem::path& dir, std::span<const SegSample> samples)
{
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%04zu", i);
        save_pgm(dir / (std::string(name) + "_image.pgm"), image_to_pgm(samples[i].image));
        save_pgm(dir / (std::string(name) + "_labels.pgm"), labels_to_pgm(samples[i].labels));
    }
}

}  // namespace ducseg
