#pragma once

#include "ducseg/io.hpp"
#include "ducseg/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace ducseg {

class Rng;

/// Label value skipped by the loss and by evaluation.
inline constexpr int kIgnoreLabel = 255;

struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<int> values;  // row-major

    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, int fill = 0) : height(h), width(w), values(h * w, fill) {}

    int& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
    int at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    bool operator==(const LabelMap&) const = default;
};

/// Throws if any value is neither in [0, classes) nor kIgnoreLabel.
void validate_labels(const LabelMap& labels, std::size_t classes);

struct SegSample {
    Tensor image;  // (1, c_img, H, W)
    LabelMap labels;
};

/// Synthetic scenes: background (class 0), thin straight lines and poles of
/// the given thickness (class 1) and large rectangular blobs (classes 2..L-1)
/// with class-dependent intensity plus Gaussian noise. Blobs are placed until
/// their pixel fraction reaches blob_density, then lines until the thin
/// fraction reaches thin_density.
struct ThinStructuresConfig {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t thickness = 1;
    std::size_t classes = 3;
    double thin_density = 0.08;
    double blob_density = 0.25;
    double noise = 0.35;
};

std::vector<SegSample> gen_thin_structures(std::size_t count, const ThinStructuresConfig& cfg, Rng& rng);

/// Fraction of non-ignored pixels carrying each class.
std::vector<double> class_frequencies(std::span<const SegSample> samples, std::size_t classes);

/// Each block x block tile becomes its most frequent non-ignored label (ties
/// go to the smaller label); an all-ignored tile stays ignored.
LabelMap downsample_labels_majority(const LabelMap& labels, std::size_t block);
LabelMap upsample_labels_nearest(const LabelMap& labels, std::size_t factor);

/// Per-pixel argmax over classes of a (1, L, H, W) tensor.
LabelMap argmax_labels(const Tensor& logits);

/// Accumulates (prediction, label) counts over any number of maps.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes);

    void add(const LabelMap& pred, const LabelMap& labels);
    std::uint64_t count(std::size_t label, std::size_t pred) const { return counts_[label * classes_ + pred]; }
    std::size_t classes() const { return classes_; }

    /// TP / (TP + FP + FN); empty when the class is absent from both.
    std::vector<std::optional<double>> per_class_iou() const;
    double mean_iou() const;

private:
    std::size_t classes_;
    std::vector<std::uint64_t> counts_;
};

struct IoUResult {
    std::vector<std::optional<double>> per_class;
    double mean = 0.0;
};

IoUResult miou(const LabelMap& pred, const LabelMap& labels, std::size_t classes);

/// Image intensities mapped linearly from [lo, hi] to 0..255 (clamped).
GrayImage image_to_pgm(const Tensor& image, double lo = -1.5, double hi = 2.0);
/// Label values written verbatim (maxval 255, ignore stays 255).
GrayImage labels_to_pgm(const LabelMap& labels);
LabelMap labels_from_pgm(const GrayImage& img);

void save_samples(const std::filesystem::path& dir, std::span<const SegSample> samples);

}  // namespace ducseg
