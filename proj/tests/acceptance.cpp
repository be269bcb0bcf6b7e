// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Every tolerance used below is pinned in this file.

#include "oracles.hpp"

#include "commands.hpp"
#include "ducseg/conv.hpp"
#include "ducseg/data.hpp"
#include "ducseg/hdc.hpp"
#include "ducseg/rng.hpp"
#include "ducseg/train.hpp"
#include "ducseg/upsampling.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace ducseg;
using nlohmann::json;

namespace {

constexpr double kCheckSeconds = 1.0;
constexpr double kSweepSeconds = 60.0;
constexpr double kGradTol = 1e-4;
constexpr double kNetGradTol = 1e-3;
constexpr double kFdStep = 1e-6;
constexpr std::size_t kGradInstances = 20;
constexpr std::size_t kNetGradParams = 50;
constexpr std::size_t kOrderSchedules = 200;
constexpr std::size_t kDucInstances = 20;
// Thin-class IoU margin of DUC over bilinear, frozen from the first run
// (observed 0.71167 - 0.16500 = 0.54668 at seed 0).
constexpr double kDucMarginFloor = 0.45;
constexpr double kComparisonSeconds = 300.0;

int failures = 0;

void report(int id, bool pass, const std::string& what)
{
    std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << what << std::endl;
    if (!pass) ++failures;
}

void info(const std::string& what) { std::cout << "    " << what << std::endl; }

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct CliResult {
    int code;
    std::string out;
};

CliResult cli(const std::vector<std::string>& args)
{
    std::ostringstream out, err;
    const int code = ducseg::cli::run(args, out, err);
    return {code, out.str() + err.str()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / "ducseg_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string fmt(double v)
{
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------

void worked_examples()
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto a = cli({"check", "--rates", "1,2,5", "--kernel", "3"});
    const auto b = cli({"check", "--rates", "1,2,9", "--kernel", "3"});
    const double secs = seconds_since(t0);
    const auto ja = json::parse(a.out), jb = json::parse(b.out);
    const bool ok = a.code == 0 && ja["M_values"][0] == 2 && ja["valid"] == true && b.code == 2 &&
                    jb["M_values"][0] == 5 && jb["valid"] == false && secs < kCheckSeconds;
    report(1, ok,
           "check [1,2,5] M2=" + ja["M_values"][0].dump() + " valid=" + ja["valid"].dump() + " exit " +
               std::to_string(a.code) + "; [1,2,9] M2=" + jb["M_values"][0].dump() + " valid=" + jb["valid"].dump() +
               " exit " + std::to_string(b.code) + "; " + fmt(secs) + " s");
}

void single_layer_gridding()
{
    const auto fp = footprint({{2}, 3});
    const auto cov = coverage_report(fp);
    const std::size_t nonzero = cov.area - cov.holes;
    report(2, fp.side == 5 && nonzero == 9 && cov.coverage_fraction == 0.36,
           "K=3 r=2 footprint: " + std::to_string(nonzero) + " of " + std::to_string(cov.area) + " cells, coverage " +
               fmt(cov.coverage_fraction));
}

void rf_table()
{
    const auto rf = rf_increase(resnet_variant_groups(ResnetVariant::dilation_rf), 3);
    report(3, rf == 116, "Dilation-RF rf_increase = " + std::to_string(rf) + " (published 116)");
    for (auto v : {ResnetVariant::no_dilation, ResnetVariant::dilation_conv, ResnetVariant::dilation_bigger}) {
        const auto ours = rf_increase(resnet_variant_groups(v), 3);
        const auto pub = published_rf_increase(v);
        info(std::string(variant_name(v)) + ": sum (K-1) r = " + std::to_string(ours) + ", published " +
             std::to_string(pub) + ", gap " + std::to_string(static_cast<long>(pub) - static_cast<long>(ours)) +
             " (counting convention not stated; reported only)");
    }
}

void soundness_sweep()
{
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t cases = 0, valid = 0, counter = 0, qualified = 0, qualified_counter = 0, hole_free_rejected = 0;
    std::string first;
    for (std::size_t K : {3u, 5u})
        for (std::size_t n : {2u, 3u, 4u}) {
            std::vector<std::size_t> rates(n, 1);
            while (true) {
                const DilationSchedule s{rates, K};
                const auto md = max_distance(s);
                const auto fp = footprint(s);
                const bool holes = std::find(fp.counts.begin(), fp.counts.end(), std::uint64_t{0}) != fp.counts.end();
                ++cases;
                if (md.valid) {
                    ++valid;
                    if (holes) {
                        ++counter;
                        if (first.empty()) {
                            std::ostringstream os;
                            os << "[";
                            for (std::size_t i = 0; i < n; ++i) os << (i ? "," : "") << rates[i];
                            os << "] K=" << K << " M2=" << md.m2() << " holes=" << coverage_report(fp).holes;
                            first = os.str();
                        }
                    }
                } else if (!holes) {
                    ++hole_free_rejected;
                }
                if (md.hole_free_guaranteed) {
                    ++qualified;
                    if (holes) ++qualified_counter;
                }
                std::size_t i = 0;
                while (i < n && ++rates[i] > 6) rates[i++] = 1;
                if (i == n) break;
            }
        }
    const double secs = seconds_since(t0);
    report(4, counter == 0 && secs < kSweepSeconds,
           std::to_string(cases) + " schedules, " + std::to_string(valid) + " with M2 <= K, " +
               std::to_string(counter) + " of those have footprint holes" +
               (first.empty() ? std::string() : " (first: " + first + ")") + "; " + fmt(secs) + " s");
    info("with the bottom rate also required to be 1: " + std::to_string(qualified) + " schedules, " +
         std::to_string(qualified_counter) + " with holes -> " + (qualified_counter == 0 ? "PASS" : "FAIL"));
    info("hole-free schedules rejected by M2 <= K: " + std::to_string(hole_free_rejected));
}

void order_and_mass()
{
    Rng rng(2024);
    std::size_t bad_order = 0, bad_mass = 0;
    for (std::size_t t = 0; t < kOrderSchedules; ++t) {
        const std::size_t K = rng.below(2) ? 3 : 5;
        std::vector<std::size_t> rates(static_cast<std::size_t>(rng.range(1, 5)));
        for (auto& r : rates) r = static_cast<std::size_t>(rng.range(1, 8));
        const auto fp = footprint({rates, K});
        auto perm = rates;
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        if (!(footprint({perm, K}) == fp)) ++bad_order;
        std::uint64_t mass = 1;
        for (std::size_t i = 0; i < 2 * rates.size(); ++i) mass *= K;
        if (fp.total() != mass) ++bad_mass;
    }
    report(5, bad_order == 0 && bad_mass == 0,
           std::to_string(kOrderSchedules) + " random schedules: " + std::to_string(bad_order) +
               " order mismatches, " + std::to_string(bad_mass) + " mass mismatches");
}

// One gradient tensor: the parameter slots and their analytic partials.
using Group = std::vector<std::pair<double*, double>>;

struct FdError {
    double normwise = 0.0;     // max over groups of |a - n|_2 / max(|a|_2, |n|_2)
    double elementwise = 0.0;  // max over components, floor 1e-6 (reported only)
};

FdError fd_errors(const std::function<double()>& f, const std::vector<Group>& groups)
{
    FdError e;
    for (const auto& g : groups) {
        double diff = 0.0, na = 0.0, nn = 0.0;
        for (const auto& [slot, analytic] : g) {
            const double numeric = oracle::central_difference(f, *slot, kFdStep);
            diff += (analytic - numeric) * (analytic - numeric);
            na += analytic * analytic;
            nn += numeric * numeric;
            e.elementwise = std::max(e.elementwise, oracle::relative_error(analytic, numeric));
        }
        const double denom = std::sqrt(std::max(na, nn));
        if (denom > 0.0) e.normwise = std::max(e.normwise, std::sqrt(diff) / denom);
    }
    return e;
}

void merge(FdError& into, const FdError& e)
{
    into.normwise = std::max(into.normwise, e.normwise);
    into.elementwise = std::max(into.elementwise, e.elementwise);
}

Group slots(Tensor& v, const Tensor& g)
{
    Group out;
    for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(&v[i], g[i]);
    return out;
}

Group slots(std::vector<double>& v, const std::vector<double>& g)
{
    Group out;
    for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(&v[i], g[i]);
    return out;
}

void gradient_suite()
{
    Rng rng(77);
    FdError conv_w, deconv_w, duc_w, ce_w;
    for (std::size_t t = 0; t < kGradInstances; ++t) {
        {
            const std::size_t k = rng.below(2) ? 3 : 1;
            const std::size_t r = static_cast<std::size_t>(rng.range(1, 3));
            ConvLayer l = make_conv_layer({k, r, static_cast<std::size_t>(rng.range(1, 2)),
                                           static_cast<std::size_t>(rng.range(1, 2)),
                                           static_cast<std::size_t>(rng.range(1, 2)), k == 3 ? r : 0});
            l.weights = oracle::random_tensor(l.weights.shape(), rng);
            for (auto& b : l.bias) b = rng.uniform(-1, 1);
            Tensor x = oracle::random_tensor({1, l.spec.c_in, 6, 6}, rng);
            const Tensor go = oracle::random_tensor(conv2d_forward(x, l).shape(), rng);
            const auto g = conv2d_backward(x, l, go);
            const std::vector<Group> groups{slots(x, g.grad_x), slots(l.weights, g.grad_w), slots(l.bias, g.grad_b)};
            merge(conv_w, fd_errors([&] { return oracle::dot(go, conv2d_forward(x, l)); }, groups));
        }
        {
            const std::size_t s = static_cast<std::size_t>(rng.range(1, 3));
            const std::size_t k = s + static_cast<std::size_t>(rng.range(0, 2));
            DeconvLayer l = make_deconv_layer({k, s, k > s ? static_cast<std::size_t>(rng.range(0, 1)) : 0,
                                               static_cast<std::size_t>(rng.range(1, 2)),
                                               static_cast<std::size_t>(rng.range(1, 2))});
            l.weights = oracle::random_tensor(l.weights.shape(), rng);
            for (auto& b : l.bias) b = rng.uniform(-1, 1);
            Tensor x = oracle::random_tensor({1, l.spec.c_in, 3, 3}, rng);
            const Tensor go = oracle::random_tensor(transposed_conv_forward(x, l).shape(), rng);
            const auto g = transposed_conv_backward(x, l, go);
            const std::vector<Group> groups{slots(x, g.grad_x), slots(l.weights, g.grad_w), slots(l.bias, g.grad_b)};
            merge(deconv_w, fd_errors([&] { return oracle::dot(go, transposed_conv_forward(x, l)); }, groups));
        }
        {
            const DucSpec spec{static_cast<std::size_t>(1) << rng.range(1, 2), static_cast<std::size_t>(rng.range(1, 3)),
                               rng.below(2) ? std::size_t{2} : std::size_t{1}};
            ConvLayer l = make_conv_layer({3, static_cast<std::size_t>(rng.range(1, 2)), 1, 2, spec.channels(), 0});
            l.spec.pad = l.spec.r;
            l.weights = oracle::random_tensor(l.weights.shape(), rng);
            for (auto& b : l.bias) b = rng.uniform(-1, 1);
            Tensor x = oracle::random_tensor({1, 2, 3, 3}, rng);
            const Tensor go = oracle::random_tensor(duc_forward(x, l, spec).shape(), rng);
            const auto g = duc_backward(x, l, spec, go);
            const std::vector<Group> groups{slots(x, g.grad_x), slots(l.weights, g.grad_w), slots(l.bias, g.grad_b)};
            merge(duc_w, fd_errors([&] { return oracle::dot(go, duc_forward(x, l, spec)); }, groups));
        }
        {
            const std::size_t L = static_cast<std::size_t>(rng.range(2, 5));
            Tensor logits = oracle::random_tensor({1, L, 3, 3}, rng, 3.0);
            LabelMap labels(3, 3);
            for (auto& v : labels.values) v = rng.below(6) == 0 ? kIgnoreLabel : static_cast<int>(rng.below(L));
            const auto red = rng.below(2) ? LossReduction::sum : LossReduction::mean;
            const auto res = softmax_ce_loss(logits, labels, red);
            merge(ce_w, fd_errors([&] { return softmax_ce_loss(logits, labels, red).loss; }, {slots(logits, res.grad)}));
        }
    }

    // full toy net: encoder + DUC decoder + loss on a 16x16 input
    ToyNetConfig cfg;
    cfg.width = 8;
    ToyNet net(cfg, rng);
    SegSample s{oracle::random_tensor({1, 1, 16, 16}, rng), LabelMap(16, 16)};
    for (auto& v : s.labels.values) v = static_cast<int>(rng.below(3));
    net.zero_grad();
    net.backward(softmax_ce_loss(net.forward(s.image), s.labels).grad);
    auto params = net.parameters();
    Group sampled;
    for (std::size_t t = 0; t < kNetGradParams; ++t) {
        const std::size_t p = rng.below(params.size());
        const std::size_t i = rng.below(params[p].value.size());
        sampled.emplace_back(&params[p].value[i], params[p].grad[i]);
    }
    const FdError net_w = fd_errors([&] { return softmax_ce_loss(net.forward(s.image), s.labels).loss; }, {sampled});

    const bool ok = conv_w.normwise < kGradTol && deconv_w.normwise < kGradTol && duc_w.normwise < kGradTol &&
                    ce_w.normwise < kGradTol && net_w.normwise < kNetGradTol;
    report(6, ok,
           "worst norm-wise relative error over " + std::to_string(kGradInstances) + " instances: conv2d " +
               fmt(conv_w.normwise) + ", transposed " + fmt(deconv_w.normwise) + ", DUC " + fmt(duc_w.normwise) +
               ", softmax-CE " + fmt(ce_w.normwise) + "; toy net " + fmt(net_w.normwise) + " on " +
               std::to_string(kNetGradParams) + " parameters");
    info("worst single component: conv2d " + fmt(conv_w.elementwise) + ", transposed " + fmt(deconv_w.elementwise) +
         ", DUC " + fmt(duc_w.elementwise) + ", softmax-CE " + fmt(ce_w.elementwise) + ", toy net " +
         fmt(net_w.elementwise) + " (components near the finite-difference noise floor dominate)");
}

void duc_expressiveness()
{
    Rng rng(91);
    std::size_t exact = 0;
    for (std::size_t t = 0; t < kDucInstances; ++t) {
        const std::size_t d = static_cast<std::size_t>(1) << rng.range(1, 3);
        DeconvLayer l = make_deconv_layer({d, d, 0, static_cast<std::size_t>(rng.range(1, 6)),
                                           static_cast<std::size_t>(rng.range(1, 5))});
        l.weights = oracle::random_tensor(l.weights.shape(), rng);
        for (auto& b : l.bias) b = rng.uniform(-1, 1);
        const Tensor x = oracle::random_tensor(
            {1, l.spec.c_in, static_cast<std::size_t>(rng.range(1, 6)), static_cast<std::size_t>(rng.range(1, 6))},
            rng);
        const auto [conv, spec] = duc_from_transposed(l);
        if (duc_forward(x, conv, spec) == transposed_conv_forward(x, l)) ++exact;
    }
    report(7, exact == kDucInstances,
           std::to_string(exact) + "/" + std::to_string(kDucInstances) +
               " random stride-d transposed convs reproduced bitwise by the DUC mapping");
}

std::optional<double> thin_iou(const fs::path& metrics)
{
    std::istringstream is(slurp(metrics));
    std::string line;
    while (std::getline(is, line))
        if (line.rfind("eval,1,", 0) == 0 && line.size() > 7) return std::stod(line.substr(7));
    return std::nullopt;
}

void decoder_comparison()
{
    const auto dir = scratch("decoders");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::pair<std::string, std::optional<double>>> iou;
    for (const std::string dec : {"duc", "bilinear", "deconv"}) {
        const auto r = cli({"train", "--decoder", dec, "--d", "4", "--thickness", "1", "--size", "32",
                            "--train-count", "200", "--eval-count", "50", "--schedule", "1,2,3", "--width", "16",
                            "--iters", "8000", "--lr", "0.2", "--reduction", "mean", "--seed", "0", "--out",
                            (dir / dec).string()});
        iou.emplace_back(dec, r.code == 0 ? thin_iou(dir / dec / "metrics.csv") : std::nullopt);
    }
    const double secs = seconds_since(t0);
    const auto duc = iou[0].second, bil = iou[1].second, dec = iou[2].second;
    const bool ok = duc && bil && *duc - *bil >= kDucMarginFloor && secs <= kComparisonSeconds;
    auto show = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("n/a"); };
    report(8, ok,
           "thin-class IoU DUC " + show(duc) + " vs bilinear " + show(bil) + " (margin " +
               (duc && bil ? fmt(*duc - *bil) : "n/a") + ", floor " + fmt(kDucMarginFloor) + "); " + fmt(secs) +
               " s for three runs");
    info("transposed-conv decoder thin-class IoU " + show(dec) + " (recorded, not asserted)");
}

// Every regular file under `root`, relative path -> bytes.
std::map<std::string, std::string> tree(const fs::path& root)
{
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    return files;
}

void determinism()
{
    auto pipeline = [](const fs::path& dir) {
        bool ok = true;
        auto to_file = [&](const std::vector<std::string>& args, const fs::path& p) {
            const auto r = cli(args);
            ok = ok && (r.code == 0 || r.code == 2);
            std::ofstream(p, std::ios::binary) << r.out;
        };
        to_file({"check", "--rates", "1,2,9"}, dir / "check.json");
        to_file({"search", "--layers", "3", "--rf-target", "12"}, dir / "search.json");
        to_file({"rf", "--table"}, dir / "rf.json");
        to_file({"duc-demo", "--seed", "4"}, dir / "duc_demo.json");
        for (const std::string f : {"pgm", "csv", "json"})
            to_file({"footprint", "--rates", "1,2,3", "--format", f, "--out", (dir / ("footprint." + f)).string()},
                    dir / ("footprint_" + f + ".json"));
        const auto train = cli({"train", "--decoder", "duc", "--size", "32", "--train-count", "20", "--eval-count",
                                "5", "--iters", "200", "--lr", "0.2", "--reduction", "mean", "--seed", "9",
                                "--dump-samples", "3", "--out", (dir / "run").string()});
        ok = ok && train.code == 0;
        std::ofstream(dir / "train_stdout.txt", std::ios::binary) << train.out;
        const auto eval = cli({"eval", "--run", (dir / "run").string()});
        ok = ok && eval.code == 0;
        std::ofstream(dir / "eval_stdout.txt", std::ios::binary) << eval.out;
        return ok;
    };
    const auto a = scratch("determinism_a"), b = scratch("determinism_b");
    const bool ran = pipeline(a) && pipeline(b);
    auto ta = tree(a), tb = tree(b);
    // the footprint summaries name their output path
    for (auto* t : {&ta, &tb})
        for (const std::string f : {"pgm", "csv", "json"}) t->erase("footprint_" + f + ".json");
    std::size_t differing = 0;
    for (const auto& [name, bytes] : ta)
        if (!tb.count(name) || tb[name] != bytes) ++differing;
    std::size_t kinds[3] = {0, 0, 0};
    for (const auto& [name, bytes] : ta) {
        if (name.ends_with(".csv")) ++kinds[0];
        if (name.ends_with(".json")) ++kinds[1];
        if (name.ends_with(".pgm")) ++kinds[2];
    }
    report(9, ran && ta.size() == tb.size() && differing == 0 && kinds[0] && kinds[1] && kinds[2],
           std::to_string(ta.size()) + " artifacts (" + std::to_string(kinds[0]) + " CSV, " +
               std::to_string(kinds[1]) + " JSON, " + std::to_string(kinds[2]) + " PGM) compared, " +
               std::to_string(differing) + " differ");
}

void rearrange_bijectivity()
{
    Rng rng(5);
    std::size_t checked = 0, exact = 0;
    for (std::size_t d : {1u, 2u, 4u, 8u, 16u})
        for (std::size_t cell : {1u, 2u})
            for (std::size_t L : {1u, 2u, 3u, 19u}) {
                if (d % cell != 0) continue;
                const DucSpec spec{d, L, cell};
                const Tensor x = oracle::random_tensor({2, spec.channels(), 3, 2}, rng);
                const Tensor y = duc_rearrange(x, spec);
                const Tensor z = oracle::random_tensor(y.shape(), rng);
                ++checked;
                if (duc_rearrange_inverse(y, spec) == x && duc_rearrange(duc_rearrange_inverse(z, spec), spec) == z)
                    ++exact;
            }
    report(10, checked == exact, std::to_string(exact) + "/" + std::to_string(checked) +
                                     " (d, cell, L) combinations round-trip bit-exactly in both directions");
}

}  // namespace

int main()
{
    worked_examples();
    single_layer_gridding();
    rf_table();
    soundness_sweep();
    order_and_mass();
    gradient_suite();
    duc_expressiveness();
    decoder_comparison();
    determinism();
    rearrange_bijectivity();
    std::cout << (failures ? std::to_string(failures) + " criterion(s) failed" : std::string("all criteria passed"))
              << std::endl;
    return failures ? 1 : 0;
}
