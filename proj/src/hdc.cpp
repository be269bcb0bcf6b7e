#include "ducseg/hdc.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ducseg {

void validate(const DilationSchedule& s)
{
    if (s.rates.empty()) throw std::invalid_argument("dilation schedule is empty");
    if (s.kernel < 1 || s.kernel % 2 == 0) throw std::invalid_argument("kernel size must be odd and >= 1");
    for (auto r : s.rates)
        if (r < 1) throw std::invalid_argument("dilation rates must be >= 1");
}

MaxDistance max_distance(const DilationSchedule& s)
{
    validate(s);
    const std::size_t n = s.rates.size();
    const long K = static_cast<long>(s.kernel);
    MaxDistance md;
    if (n == 1) {
        md.values = {static_cast<long>(s.rates[0])};
        md.valid = md.values[0] <= K;
        md.hole_free_guaranteed = s.rates[0] == 1;
        return md;
    }
    // values[j] holds M_{j+2}; fill from M_n downwards.
    md.values.assign(n - 1, 0);
    long m = static_cast<long>(s.rates[n - 1]);
    md.values[n - 2] = m;
    for (std::size_t i = n - 1; i >= 2; --i) {
        const long r = static_cast<long>(s.rates[i - 1]);  // r_i, 1-based i
        m = std::max({m - 2 * r, m - 2 * (m - r), r});
        md.values[i - 2] = m;
    }
    md.valid = md.m2() <= K;
    md.hole_free_guaranteed = md.valid && s.rates[0] == 1;
    return md;
}

std::uint64_t FootprintMap::total() const
{
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::uint64_t FootprintMap::max_count() const
{
    return counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
}

FootprintMap footprint(const DilationSchedule& s)
{
    validate(s);
    FootprintMap fp{1, {1}};
    for (const std::size_t r : s.rates) {
        const std::size_t span = (s.kernel - 1) * r;
        FootprintMap next{fp.side + span, {}};
        next.counts.assign(next.side * next.side, 0);
        for (std::size_t y = 0; y < fp.side; ++y)
            for (std::size_t x = 0; x < fp.side; ++x) {
                const std::uint64_t c = fp.at(y, x);
                if (c == 0) continue;
                for (std::size_t ky = 0; ky < s.kernel; ++ky)
                    for (std::size_t kx = 0; kx < s.kernel; ++kx)
                        next.counts[(y + ky * r) * next.side + x + kx * r] += c;
            }
        fp = std::move(next);
    }
    return fp;
}

std::vector<std::uint64_t> footprint_1d(const DilationSchedule& s)
{
    validate(s);
    std::vector<std::uint64_t> fp{1};
    for (const std::size_t r : s.rates) {
        std::vector<std::uint64_t> next(fp.size() + (s.kernel - 1) * r, 0);
        for (std::size_t x = 0; x < fp.size(); ++x)
            for (std::size_t k = 0; k < s.kernel; ++k) next[x + k * r] += fp[x];
        fp = std::move(next);
    }
    return fp;
}

CoverageReport coverage_report(const FootprintMap& fp)
{
    CoverageReport rep;
    rep.area = fp.side * fp.side;
    rep.holes = static_cast<std::size_t>(std::count(fp.counts.begin(), fp.counts.end(), std::uint64_t{0}));
    if (rep.area == 0) return rep;
    rep.gridding_fraction = static_cast<double>(rep.holes) / static_cast<double>(rep.area);
    rep.coverage_fraction = static_cast<double>(rep.area - rep.holes) / static_cast<double>(rep.area);
    return rep;
}

std::size_t rf_increase(std::span<const RateGroup> groups, std::size_t kernel)
{
    if (kernel % 2 == 0) throw std::invalid_argument("rf_increase: kernel size must be odd");
    std::size_t total = 0;
    for (const auto& g : groups) total += g.count * (kernel - 1) * g.rate;
    return total;
}

std::size_t rf_increase(const DilationSchedule& s)
{
    validate(s);
    std::vector<RateGroup> groups;
    for (auto r : s.rates) groups.push_back({1, r});
    return rf_increase(groups, s.kernel);
}

DilationSchedule sawtooth_schedule(std::span<const std::size_t> base, std::size_t total_layers, std::size_t kernel,
                                   std::optional<std::size_t> tail_rate)
{
    if (base.empty()) throw std::invalid_argument("sawtooth_schedule: empty base pattern");
    DilationSchedule s{{}, kernel};
    const std::size_t full = total_layers / base.size() * base.size();
    for (std::size_t i = 0; i < total_layers; ++i)
        s.rates.push_back(i >= full && tail_rate ? *tail_rate : base[i % base.size()]);
    validate(s);
    return s;
}

bool common_factor_check(std::span<const std::size_t> rates)
{
    if (rates.empty()) throw std::invalid_argument("common_factor_check: empty rate list");
    std::size_t g = 0;
    for (auto r : rates) g = std::gcd(g, r);
    return g > 1;
}

namespace {

bool advance(std::vector<std::size_t>& rates, std::size_t max_rate)
{
    for (std::size_t i = rates.size(); i-- > 0;) {
        if (rates[i] < max_rate) {
            ++rates[i];
            return true;
        }
        rates[i] = 1;
    }
    return false;
}

}  // namespace

std::vector<DilationSchedule> schedule_search(std::size_t layers, std::size_t kernel, std::size_t rf_target)
{
    if (layers < 2) throw std::invalid_argument("schedule_search: need at least 2 layers");
    if (kernel % 2 == 0) throw std::invalid_argument("schedule_search: kernel size must be odd");
    std::vector<DilationSchedule> found;
    if (rf_target < 1) rf_target = 1;
    DilationSchedule cand{std::vector<std::size_t>(layers, 1), kernel};
    do {
        if (rf_increase(cand) < rf_target) continue;
        if (!max_distance(cand).valid) continue;
        const auto fp = footprint_1d(cand);
        // The 2-D footprint is the outer product of this one, so it has a
        // hole exactly when the 1-D footprint does.
        if (std::find(fp.begin(), fp.end(), std::uint64_t{0}) != fp.end()) continue;
        found.push_back(cand);
    } while (advance(cand.rates, rf_target));

    std::stable_sort(found.begin(), found.end(), [](const DilationSchedule& a, const DilationSchedule& b) {
        const auto ra = rf_increase(a), rb = rf_increase(b);
        if (ra != rb) return ra > rb;
        return a.rates < b.rates;
    });
    return found;
}

std::vector<RateGroup> resnet_variant_groups(ResnetVariant v)
{
    constexpr std::size_t res4b_blocks = 23;
    auto as_groups = [](const DilationSchedule& s) {
        std::vector<RateGroup> g;
        for (auto r : s.rates) {
            if (!g.empty() && g.back().rate == r)
                ++g.back().count;
            else
                g.push_back({1, r});
        }
        return g;
    };
    auto concat = [&](const DilationSchedule& a, const DilationSchedule& b) {
        auto g = as_groups(a);
        for (auto x : as_groups(b)) g.push_back(x);
        return g;
    };
    switch (v) {
    case ResnetVariant::no_dilation:
        return {{res4b_blocks, 1}, {3, 1}};
    case ResnetVariant::dilation_conv: {
        const std::size_t base[] = {2, 1};
        return concat(sawtooth_schedule(base, res4b_blocks), sawtooth_schedule(base, 3));
    }
    case ResnetVariant::dilation_rf: {
        const std::size_t base[] = {1, 2, 3};
        const std::size_t top[] = {3, 4, 5};
        return concat(sawtooth_schedule(base, res4b_blocks, 3, 2), sawtooth_schedule(top, 3));
    }
    case ResnetVariant::dilation_bigger: {
        const std::size_t base[] = {1, 2, 5, 9};
        const std::size_t top[] = {5, 9, 17};
        return concat(sawtooth_schedule(base, res4b_blocks), sawtooth_schedule(top, 3));
    }
    }
    throw std::invalid_argument("unknown ResNet variant");
}

std::optional<ResnetVariant> parse_resnet_variant(std::string_view name)
{
    for (auto v : {ResnetVariant::no_dilation, ResnetVariant::dilation_conv, ResnetVariant::dilation_rf,
                   ResnetVariant::dilation_bigger})
        if (variant_name(v) == name) return v;
    return std::nullopt;
}

std::string_view variant_name(ResnetVariant v)
{
    switch (v) {
    case ResnetVariant::no_dilation: return "no-dilation";
    case ResnetVariant::dilation_conv: return "dilation-conv";
    case ResnetVariant::dilation_rf: return "dilation-rf";
    case ResnetVariant::dilation_bigger: return "dilation-bigger";
    }
    return "?";
}

std::size_t published_rf_increase(ResnetVariant v)
{
    switch (v) {
    case ResnetVariant::no_dilation: return 54;
    case ResnetVariant::dilation_conv: return 88;
    case ResnetVariant::dilation_rf: return 116;
    case ResnetVariant::dilation_bigger: return 256;
    }
    return 0;
}

GrayImage footprint_to_pgm(const FootprintMap& fp)
{
    GrayImage img{fp.side, fp.side, 255, std::vector<int>(fp.counts.size(), 0)};
    const std::uint64_t mx = fp.max_count();
    if (mx == 0) return img;
    for (std::size_t i = 0; i < fp.counts.size(); ++i)
        img.pixels[i] = static_cast<int>((255 * fp.counts[i] + mx - 1) / mx);
    return img;
}

std::string footprint_to_csv(const FootprintMap& fp)
{
    std::ostringstream os;
    for (std::size_t y = 0; y < fp.side; ++y) {
        for (std::size_t x = 0; x < fp.side; ++x) {
            if (x) os << ',';
            os << fp.at(y, x);
        }
        os << '\n';
    }
    return os.str();
}

nlohmann::ordered_json schedule_report(const DilationSchedule& s)
{
    const auto md = max_distance(s);
    const auto cov = coverage_report(footprint(s));
    nlohmann::ordered_json j;
    j["rates"] = s.rates;
    j["K"] = s.kernel;
    j["M_values"] = md.values;
    j["valid"] = md.valid;
    j["hole_free_guaranteed"] = md.hole_free_guaranteed;
    j["rf_increase"] = rf_increase(s);
    j["holes"] = cov.holes;
    j["coverage_fraction"] = cov.coverage_fraction;
    return j;
}

}  // namespace ducseg
