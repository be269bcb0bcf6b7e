#include "commands.hpp"

#include "ducseg/conv.hpp"
#include "ducseg/data.hpp"
#include "ducseg/hdc.hpp"
#include "ducseg/io.hpp"
#include "ducseg/rng.hpp"
#include "ducseg/train.hpp"
#include "ducseg/upsampling.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace ducseg::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string default_out_dir()
{
    const char* env = std::getenv("DUCSEG_OUT_DIR");
    return env && *env ? std::string(env) : std::string(".");
}

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void print_json(std::ostream& out, const ordered_json& j) { out << j.dump(2) << '\n'; }

// --- check ---------------------------------------------------------------

struct CheckArgs {
    std::vector<std::size_t> rates;
    std::size_t kernel = 3;
};

int cmd_check(const CheckArgs& a, std::ostream& out)
{
    const DilationSchedule s{a.rates, a.kernel};
    const auto md = max_distance(s);
    ordered_json j;
    j["rates"] = s.rates;
    j["K"] = s.kernel;
    j["M_values"] = md.values;
    j["valid"] = md.valid;
    j["hole_free_guaranteed"] = md.hole_free_guaranteed;
    j["rf_increase"] = rf_increase(s);
    j["gcd_flag"] = common_factor_check(s.rates);
    print_json(out, j);
    return md.valid ? kExitOk : kExitInvalid;
}

// --- footprint -----------------------------------------------------------

struct FootprintArgs {
    std::vector<std::size_t> rates;
    std::size_t kernel = 3;
    std::string out;
    std::string format = "pgm";
};

int cmd_footprint(const FootprintArgs& a, std::ostream& out)
{
    const DilationSchedule s{a.rates, a.kernel};
    const auto fp = footprint(s);
    const auto cov = coverage_report(fp);
    const fs::path path = a.out.empty() ? fs::path(default_out_dir()) / ("footprint." + a.format) : fs::path(a.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());

    if (a.format == "pgm") {
        save_pgm(path, footprint_to_pgm(fp));
    } else if (a.format == "csv") {
        write_text_file(path, footprint_to_csv(fp));
    } else {
        ordered_json j;
        j["rates"] = s.rates;
        j["K"] = s.kernel;
        j["side"] = fp.side;
        j["holes"] = cov.holes;
        j["coverage_fraction"] = cov.coverage_fraction;
        auto rows = ordered_json::array();
        for (std::size_t y = 0; y < fp.side; ++y)
            rows.push_back(std::vector<std::uint64_t>(fp.counts.begin() + static_cast<long>(y * fp.side),
                                                      fp.counts.begin() + static_cast<long>((y + 1) * fp.side)));
        j["counts"] = rows;
        write_text_file(path, j.dump(2) + "\n");
    }

    ordered_json summary;
    summary["side"] = fp.side;
    summary["area"] = cov.area;
    summary["holes"] = cov.holes;
    summary["coverage_fraction"] = cov.coverage_fraction;
    summary["total"] = fp.total();
    summary["out"] = path.generic_string();
    print_json(out, summary);
    return kExitOk;
}

// --- rf ------------------------------------------------------------------

struct RfArgs {
    std::vector<std::size_t> rates;
    std::size_t kernel = 3;
    std::string variant;
    bool table = false;
};

ordered_json variant_json(ResnetVariant v)
{
    const auto groups = resnet_variant_groups(v);
    ordered_json j;
    j["variant"] = std::string(variant_name(v));
    auto g = ordered_json::array();
    for (const auto& grp : groups) g.push_back({{"count", grp.count}, {"rate", grp.rate}});
    j["groups"] = g;
    const auto ours = rf_increase(groups, 3);
    const auto published = published_rf_increase(v);
    j["rf_increase"] = ours;
    j["published"] = published;
    j["gap"] = static_cast<long>(published) - static_cast<long>(ours);
    return j;
}

int cmd_rf(const RfArgs& a, std::ostream& out)
{
    const int modes = !a.rates.empty() + !a.variant.empty() + a.table;
    if (modes != 1) throw UsageError("rf: give exactly one of --rates, --variant or --table");
    if (a.table) {
        auto rows = ordered_json::array();
        for (auto v : {ResnetVariant::no_dilation, ResnetVariant::dilation_conv, ResnetVariant::dilation_rf,
                       ResnetVariant::dilation_bigger})
            rows.push_back(variant_json(v));
        print_json(out, rows);
    } else if (!a.variant.empty()) {
        const auto v = parse_resnet_variant(a.variant);
        if (!v) throw UsageError("rf: unknown variant '" + a.variant + "'");
        print_json(out, variant_json(*v));
    } else {
        const DilationSchedule s{a.rates, a.kernel};
        ordered_json j;
        j["rates"] = s.rates;
        j["K"] = s.kernel;
        j["rf_increase"] = rf_increase(s);
        print_json(out, j);
    }
    return kExitOk;
}

// --- search --------------------------------------------------------------

struct SearchArgs {
    std::size_t layers = 3;
    std::size_t kernel = 3;
    std::size_t rf_target = 12;
};

int cmd_search(const SearchArgs& a, std::ostream& out)
{
    auto list = ordered_json::array();
    for (const auto& s : schedule_search(a.layers, a.kernel, a.rf_target)) {
        ordered_json j;
        j["rates"] = s.rates;
        j["rf_increase"] = rf_increase(s);
        j["M_values"] = max_distance(s).values;
        list.push_back(j);
    }
    print_json(out, list);
    return kExitOk;
}

// --- duc-demo ------------------------------------------------------------

struct DucDemoArgs {
    std::size_t d = 4;
    std::size_t classes = 3;
    std::size_t channels = 4;
    std::size_t size = 5;
    std::uint64_t seed = 0;
};

int cmd_duc_demo(const DucDemoArgs& a, std::ostream& out)
{
    Rng rng(a.seed);
    DeconvLayer deconv = make_deconv_layer({a.d, a.d, 0, a.channels, a.classes}, rng);
    for (auto& b : deconv.bias) b = rng.uniform(-1, 1);
    Tensor x({1, a.channels, a.size, a.size}, 0.0);
    for (auto& v : x.data()) v = rng.uniform(-1, 1);

    const auto [conv, spec] = duc_from_transposed(deconv);
    const Tensor via_duc = duc_forward(x, conv, spec);
    const Tensor via_deconv = transposed_conv_forward(x, deconv);
    const Tensor packed = conv2d_forward(x, conv);

    ordered_json j;
    j["d"] = a.d;
    j["classes"] = a.classes;
    j["in_channels"] = a.channels;
    j["duc_channels"] = spec.channels();
    j["feature_shape"] = {a.size, a.size};
    j["output_shape"] = {via_duc.shape().h, via_duc.shape().w};
    j["max_abs_diff"] = max_abs_diff(via_duc, via_deconv);
    j["bitwise_equal"] = via_duc == via_deconv;
    j["rearrange_roundtrip"] = duc_rearrange_inverse(duc_rearrange(packed, spec), spec) == packed;
    print_json(out, j);
    return kExitOk;
}

// --- train / eval --------------------------------------------------------

struct RunConfig {
    ToyNetConfig net;
    SgdConfig sgd;
    ThinStructuresConfig data;
    std::size_t train_count = 200;
    std::size_t eval_count = 50;
    std::uint64_t seed = 0;
};

ordered_json to_json(const RunConfig& c)
{
    ordered_json j;
    j["seed"] = c.seed;
    j["decoder"] = std::string(decoder_name(c.net.decoder));
    j["schedule"] = c.net.rates;
    j["d"] = c.net.d;
    j["cell"] = c.net.cell;
    j["width"] = c.net.width;
    j["iters"] = c.sgd.max_iter;
    j["lr"] = c.sgd.base_lr;
    j["power"] = c.sgd.power;
    j["momentum"] = c.sgd.momentum;
    j["weight_decay"] = c.sgd.weight_decay;
    j["batch"] = c.sgd.batch;
    j["reduction"] = c.sgd.reduction == LossReduction::mean ? "mean" : "sum";
    j["train_count"] = c.train_count;
    j["eval_count"] = c.eval_count;
    j["size"] = c.data.height;
    j["thickness"] = c.data.thickness;
    j["classes"] = c.data.classes;
    j["thin_density"] = c.data.thin_density;
    j["blob_density"] = c.data.blob_density;
    j["noise"] = c.data.noise;
    return j;
}

RunConfig run_config_from_json(const nlohmann::json& j)
{
    RunConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto dec = parse_decoder(j.at("decoder").get<std::string>());
    if (!dec) throw std::runtime_error("config.json: unknown decoder");
    c.net.decoder = *dec;
    c.net.rates = j.at("schedule").get<std::vector<std::size_t>>();
    c.net.d = j.at("d").get<std::size_t>();
    c.net.cell = j.at("cell").get<std::size_t>();
    c.net.width = j.at("width").get<std::size_t>();
    c.sgd.max_iter = j.at("iters").get<std::size_t>();
    c.sgd.base_lr = j.at("lr").get<double>();
    c.sgd.power = j.at("power").get<double>();
    c.sgd.momentum = j.at("momentum").get<double>();
    c.sgd.weight_decay = j.at("weight_decay").get<double>();
    c.sgd.batch = j.at("batch").get<std::size_t>();
    c.sgd.reduction = j.at("reduction").get<std::string>() == "mean" ? LossReduction::mean : LossReduction::sum;
    c.train_count = j.at("train_count").get<std::size_t>();
    c.eval_count = j.at("eval_count").get<std::size_t>();
    c.data.height = c.data.width = j.at("size").get<std::size_t>();
    c.data.thickness = j.at("thickness").get<std::size_t>();
    c.data.classes = j.at("classes").get<std::size_t>();
    c.data.thin_density = j.at("thin_density").get<double>();
    c.data.blob_density = j.at("blob_density").get<double>();
    c.data.noise = j.at("noise").get<double>();
    c.net.classes = c.data.classes;
    return c;
}

// Training and evaluation scenes come from one stream seeded with the run
// seed; the net is initialised from seed + 1 and SGD shuffles with seed + 2.
std::pair<std::vector<SegSample>, std::vector<SegSample>> make_datasets(const RunConfig& c)
{
    Rng rng(c.seed);
    auto tr = gen_thin_structures(c.train_count, c.data, rng);
    auto ev = gen_thin_structures(c.eval_count, c.data, rng);
    return {std::move(tr), std::move(ev)};
}

std::string iou_cell(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::string metrics_csv(const std::vector<std::pair<std::string, EvalResult>>& results)
{
    std::string s = "split,class,iou\n";
    for (const auto& [split, r] : results) {
        for (std::size_t c = 0; c < r.per_class.size(); ++c)
            s += split + "," + std::to_string(c) + "," + iou_cell(r.per_class[c]) + "\n";
        s += split + ",mean," + format_number(r.mean) + "\n";
    }
    return s;
}

void print_eval(std::ostream& out, const std::string& split, const EvalResult& r)
{
    for (std::size_t c = 0; c < r.per_class.size(); ++c)
        out << split << " class " << c << " IoU " << (r.per_class[c] ? format_number(*r.per_class[c]) : "n/a")
            << '\n';
    out << split << " mIoU " << format_number(r.mean) << '\n';
}

struct TrainArgs {
    RunConfig run;
    std::string decoder = "duc";
    std::string reduction = "sum";
    std::size_t size = 32;
    std::string out;
    std::size_t dump_samples = 0;
};

int cmd_train(TrainArgs a, std::ostream& out)
{
    RunConfig& c = a.run;
    const auto dec = parse_decoder(a.decoder);
    if (!dec) throw UsageError("train: unknown decoder '" + a.decoder + "'");
    if (a.reduction != "sum" && a.reduction != "mean") throw UsageError("train: --reduction must be sum or mean");
    c.net.decoder = *dec;
    c.sgd.reduction = a.reduction == "mean" ? LossReduction::mean : LossReduction::sum;
    c.data.height = c.data.width = a.size;
    c.net.classes = c.data.classes;
    c.sgd.seed = c.seed + 2;
    validate(c.net);
    validate(c.sgd);

    const fs::path dir = a.out.empty() ? fs::path(default_out_dir()) / "run" : fs::path(a.out);
    fs::create_directories(dir);

    const auto [train_set, eval_set] = make_datasets(c);
    Rng init(c.seed + 1);
    ToyNet net(c.net, init);
    const TrainLog log = c.sgd.max_iter > 0 ? train(net, train_set, c.sgd) : TrainLog{};

    std::string loss = "iter,lr,loss\n";
    for (std::size_t i = 0; i < log.loss.size(); ++i)
        loss += std::to_string(i) + "," + format_number(log.lr[i]) + "," + format_number(log.loss[i]) + "\n";
    write_text_file(dir / "loss.csv", loss);

    const auto ev_train = evaluate(net, train_set);
    const auto ev_eval = evaluate(net, eval_set);
    write_text_file(dir / "metrics.csv", metrics_csv({{"train", ev_train}, {"eval", ev_eval}}));
    write_text_file(dir / "config.json", to_json(c).dump(2) + "\n");
    save_toynet(dir / "net", net);
    if (a.dump_samples > 0) {
        const std::size_t n = std::min(a.dump_samples, eval_set.size());
        save_samples(dir / "samples", std::span<const SegSample>(eval_set.data(), n));
        for (std::size_t i = 0; i < n; ++i) {
            char name[48];
            std::snprintf(name, sizeof name, "sample_%04zu_pred.pgm", i);
            save_pgm(dir / "samples" / name, labels_to_pgm(net.predict(eval_set[i].image)));
        }
    }

    out << "parameters " << net.parameter_count() << '\n';
    if (!log.loss.empty()) out << "final loss " << format_number(log.loss.back()) << '\n';
    print_eval(out, "eval", ev_eval);
    return kExitOk;
}

struct EvalArgs {
    std::string run;
    std::string split = "eval";
    bool oracle = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out)
{
    if (a.split != "train" && a.split != "eval") throw UsageError("eval: --split must be train or eval");
    const fs::path dir = a.run.empty() ? fs::path(default_out_dir()) / "run" : fs::path(a.run);
    std::ifstream is(dir / "config.json");
    if (!is) throw std::runtime_error("cannot open " + (dir / "config.json").string());
    const RunConfig c = run_config_from_json(nlohmann::json::parse(is));
    const auto [train_set, eval_set] = make_datasets(c);
    const auto& data = a.split == "train" ? train_set : eval_set;
    EvalResult r = [&] {
        if (a.oracle) return evaluate_oracle(data, c.data.classes);
        ToyNet net = load_toynet(dir / "net");
        return evaluate(net, data);
    }();
    print_eval(out, a.split, r);
    return kExitOk;
}

// --- parser --------------------------------------------------------------

void add_rates(CLI::App* sub, std::vector<std::size_t>& rates, bool required)
{
    auto* opt = sub->add_option("--rates", rates, "Comma-separated dilation rates, bottom layer first")
                    ->delimiter(',')
                    ->check(CLI::PositiveNumber);
    if (required) opt->required();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Dilated convolution schedule analysis, dense upsampling and toy segmentation training", "ducseg"};
    app.require_subcommand(1);

    CheckArgs check;
    auto* c_check = app.add_subcommand("check", "Evaluate the maximum-distance criterion of a schedule");
    add_rates(c_check, check.rates, true);
    c_check->add_option("--kernel", check.kernel, "Kernel side K")->capture_default_str();

    FootprintArgs fp;
    auto* c_fp = app.add_subcommand("footprint", "Render the exact receptive-field footprint of a schedule");
    add_rates(c_fp, fp.rates, true);
    c_fp->add_option("--kernel", fp.kernel, "Kernel side K")->capture_default_str();
    c_fp->add_option("--out", fp.out, "Output file (default $DUCSEG_OUT_DIR/footprint.<format>)");
    c_fp->add_option("--format", fp.format, "pgm, csv or json")
        ->check(CLI::IsMember({"pgm", "csv", "json"}))
        ->capture_default_str();

    RfArgs rf;
    auto* c_rf = app.add_subcommand("rf", "Receptive-field increase of a schedule or of a ResNet-101 variant");
    add_rates(c_rf, rf.rates, false);
    c_rf->add_option("--kernel", rf.kernel, "Kernel side K")->capture_default_str();
    c_rf->add_option("--variant", rf.variant, "no-dilation, dilation-conv, dilation-rf or dilation-bigger");
    c_rf->add_flag("--table", rf.table, "All four variants with the published values");

    SearchArgs search;
    auto* c_search = app.add_subcommand("search", "Enumerate gridding-free schedules reaching a target RF increase");
    c_search->add_option("--layers", search.layers, "Number of layers")->check(CLI::PositiveNumber)->capture_default_str();
    c_search->add_option("--kernel", search.kernel, "Kernel side K")->capture_default_str();
    c_search->add_option("--rf-target", search.rf_target, "Minimum rf_increase")->capture_default_str();

    DucDemoArgs demo;
    auto* c_demo = app.add_subcommand("duc-demo", "Compare a stride-d transposed conv with its DUC equivalent");
    c_demo->add_option("--d", demo.d, "Upsampling factor")->check(CLI::PositiveNumber)->capture_default_str();
    c_demo->add_option("--classes", demo.classes, "Output classes")->check(CLI::PositiveNumber)->capture_default_str();
    c_demo->add_option("--channels", demo.channels, "Feature channels")->check(CLI::PositiveNumber)->capture_default_str();
    c_demo->add_option("--size", demo.size, "Feature map side")->check(CLI::PositiveNumber)->capture_default_str();
    c_demo->add_option("--seed", demo.seed, "Random seed")->capture_default_str();

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train the toy segmenter on generated thin-structure scenes");
    c_train->add_option("--decoder", tr.decoder, "duc, bilinear, deconv or deconv2")->capture_default_str();
    c_train->add_option("--schedule", tr.run.net.rates, "Dilation rates of the encoder")
        ->delimiter(',')
        ->check(CLI::PositiveNumber);
    c_train->add_option("--d", tr.run.net.d, "Encoder downsampling factor")->capture_default_str();
    c_train->add_option("--cell", tr.run.net.cell, "DUC cell size (1 or 2)")->capture_default_str();
    c_train->add_option("--width", tr.run.net.width, "Encoder channels")->capture_default_str();
    c_train->add_option("--seed", tr.run.seed, "Seed for data, initialisation and shuffling")->capture_default_str();
    c_train->add_option("--iters", tr.run.sgd.max_iter, "SGD iterations")->capture_default_str();
    c_train->add_option("--lr", tr.run.sgd.base_lr, "Base learning rate")->capture_default_str();
    c_train->add_option("--momentum", tr.run.sgd.momentum, "Momentum")->capture_default_str();
    c_train->add_option("--weight-decay", tr.run.sgd.weight_decay, "Weight decay")->capture_default_str();
    c_train->add_option("--batch", tr.run.sgd.batch, "Images per iteration")->capture_default_str();
    c_train->add_option("--reduction", tr.reduction, "Loss reduction: sum or mean")->capture_default_str();
    c_train->add_option("--train-count", tr.run.train_count, "Training images")->capture_default_str();
    c_train->add_option("--eval-count", tr.run.eval_count, "Evaluation images")->capture_default_str();
    c_train->add_option("--size", tr.size, "Image side")->capture_default_str();
    c_train->add_option("--thickness", tr.run.data.thickness, "Thin structure thickness")->capture_default_str();
    c_train->add_option("--classes", tr.run.data.classes, "Classes (>= 3)")->capture_default_str();
    c_train->add_option("--noise", tr.run.data.noise, "Gaussian noise sigma")->capture_default_str();
    c_train->add_option("--out", tr.out, "Run directory (default $DUCSEG_OUT_DIR/run)");
    c_train->add_option("--dump-samples", tr.dump_samples, "Write this many evaluation scenes and predictions as PGM");

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a trained run directory");
    c_eval->add_option("--run", ev.run, "Run directory written by train (default $DUCSEG_OUT_DIR/run)");
    c_eval->add_option("--split", ev.split, "train or eval")->capture_default_str();
    c_eval->add_flag("--oracle", ev.oracle, "Score the labels against themselves");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (c_check->parsed()) return cmd_check(check, out);
        if (c_fp->parsed()) return cmd_footprint(fp, out);
        if (c_rf->parsed()) return cmd_rf(rf, out);
        if (c_search->parsed()) return cmd_search(search, out);
        if (c_demo->parsed()) return cmd_duc_demo(demo, out);
        if (c_train->parsed()) return cmd_train(tr, out);
        if (c_eval->parsed()) return cmd_eval(ev, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace ducseg::cli
