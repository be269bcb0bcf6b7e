#pragma once

#include "ducseg/io.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ducseg {

/// Dilation rates of a stack of K x K convolutions, listed bottom (input
/// side) to top.
struct DilationSchedule {
    std::vector<std::size_t> rates;
    std::size_t kernel = 3;

    std::size_t layers() const { return rates.size(); }
    bool operator==(const DilationSchedule&) const = default;
};

void validate(const DilationSchedule& s);

/// Result of the maximum-distance recurrence
///
///     M_n = r_n,  M_i = max(M_{i+1} - 2 r_i, M_{i+1} - 2 (M_{i+1} - r_i), r_i)
///
/// evaluated from the top layer down to i = 2.
struct MaxDistance {
    /// M_2 .. M_n in layer order. For a single layer this holds just M_1 = r_1.
    std::vector<long> values;
    /// M_2 <= K (for a single layer, r_1 <= K).
    bool valid = false;
    /// valid and r_1 == 1. The recurrence never looks at r_1, so only a dense
    /// bottom layer is guaranteed to close gaps of width M_2 <= K.
    bool hole_free_guaranteed = false;

    long m2() const { return values.front(); }
};

MaxDistance max_distance(const DilationSchedule& s);

/// Exact contribution counts of every bottom-layer pixel to the top-layer
/// centre pixel. counts[y][x] is the number of distinct tap paths; the grid
/// is centred, side 1 + sum (K - 1) r_i.
struct FootprintMap {
    std::size_t side = 0;
    std::vector<std::uint64_t> counts;  // row-major side x side

    std::uint64_t at(std::size_t y, std::size_t x) const { return counts[y * side + x]; }
    std::uint64_t total() const;
    std::uint64_t max_count() const;
    bool operator==(const FootprintMap&) const = default;
};

/// Iterated full 2-D convolution of the all-ones K x K kernels dilated by r_i.
FootprintMap footprint(const DilationSchedule& s);
/// The same along one axis; the 2-D map is its outer product with itself.
std::vector<std::uint64_t> footprint_1d(const DilationSchedule& s);

struct CoverageReport {
    std::size_t holes = 0;  // zero-count cells in the full RF square
    std::size_t area = 0;
    double coverage_fraction = 0.0;
    double gridding_fraction = 0.0;
};

CoverageReport coverage_report(const FootprintMap& fp);

struct RateGroup {
    std::size_t count;
    std::size_t rate;
};

/// Growth of the receptive field along one axis: sum over all convs of (K - 1) r.
std::size_t rf_increase(std::span<const RateGroup> groups, std::size_t kernel);
std::size_t rf_increase(const DilationSchedule& s);

/// Tiles `base` ("rising edge" of the sawtooth) up to `total_layers`. The
/// final partial group is truncated, or, when `tail_rate` is given, filled
/// with that constant rate instead.
DilationSchedule sawtooth_schedule(std::span<const std::size_t> base, std::size_t total_layers,
                                   std::size_t kernel = 3, std::optional<std::size_t> tail_rate = std::nullopt);

/// True when the greatest common divisor of all rates exceeds 1.
bool common_factor_check(std::span<const std::size_t> rates);

/// All n-layer schedules with every rate in 1..rf_target whose M_2 <= K,
/// whose footprint has no holes and whose rf_increase >= rf_target.
/// Sorted by rf_increase descending, then rates ascending.
std::vector<DilationSchedule> schedule_search(std::size_t layers, std::size_t kernel, std::size_t rf_target);

/// Dilated 3x3 configurations of the res4b (23 blocks) and res5b (3 blocks)
/// stages of ResNet-101 as groups, for the rf_increase accounting.
enum class ResnetVariant { no_dilation, dilation_conv, dilation_rf, dilation_bigger };
std::vector<RateGroup> resnet_variant_groups(ResnetVariant v);
std::optional<ResnetVariant> parse_resnet_variant(std::string_view name);
std::string_view variant_name(ResnetVariant v);
/// "RF increased" as published for the variant.
std::size_t published_rf_increase(ResnetVariant v);

/// Counts scaled linearly into 0..255, rounding up so only holes map to 0.
GrayImage footprint_to_pgm(const FootprintMap& fp);
std::string footprint_to_csv(const FootprintMap& fp);
/// {rates, K, M_values, valid, hole_free_guaranteed, rf_increase, holes, coverage_fraction}
nlohmann::ordered_json schedule_report(const DilationSchedule& s);

}  // namespace ducseg
