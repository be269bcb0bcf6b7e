#include "ducseg/train.hpp"

#include "ducseg/io.hpp"
#include "ducseg/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace ducseg {

TrainingDiverged::TrainingDiverged(std::size_t iter, double lr_, double loss)
    : std::runtime_error("training diverged at iteration " + std::to_string(iter) + ": loss " +
                         format_number(loss) + ", learning rate " + format_number(lr_)),
      iteration(iter), lr(lr_)
{
}

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng)
{
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::size_t counted_pixels(const LabelMap& labels)
{
    return static_cast<std::size_t>(
        std::count_if(labels.values.begin(), labels.values.end(), [](int v) { return v != kIgnoreLabel; }));
}

}  // namespace

TrainLog train(ToyNet& net, std::span<const SegSample> data, const SgdConfig& cfg)
{
    validate(cfg);
    if (data.empty()) throw std::invalid_argument("train: empty dataset");

    const std::size_t block = net.label_block();
    std::vector<LabelMap> targets;
    std::vector<std::size_t> pixels;
    for (const auto& s : data) {
        targets.push_back(block > 1 ? downsample_labels_majority(s.labels, block) : s.labels);
        pixels.push_back(counted_pixels(targets.back()));
    }

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    std::size_t pos = 0;

    const auto params = net.parameters();
    SgdState state;
    TrainLog log;
    std::vector<std::size_t> batch(cfg.batch);
    for (std::size_t iter = 0; iter < cfg.max_iter; ++iter) {
        std::size_t total_pixels = 0;
        for (auto& b : batch) {
            if (pos == order.size()) {
                shuffle(order, rng);
                pos = 0;
            }
            b = order[pos++];
            total_pixels += pixels[b];
        }
        const double lr = poly_lr(iter, cfg);
        net.zero_grad();
        double loss = 0.0;
        for (auto b : batch) {
            auto res = softmax_ce_loss(net.forward(data[b].image), targets[b], LossReduction::sum);
            if (cfg.reduction == LossReduction::mean && total_pixels > 0) {
                const double inv = 1.0 / static_cast<double>(total_pixels);
                res.loss *= inv;
                for (auto& g : res.grad.data()) g *= inv;
            }
            loss += res.loss;
            net.backward(res.grad);
        }
        if (!std::isfinite(loss)) throw TrainingDiverged(iter, lr, loss);
        log.loss.push_back(loss);
        log.lr.push_back(lr);
        sgd_step(params, state, cfg, iter);
    }
    return log;
}

EvalResult evaluate(ToyNet& net, std::span<const SegSample> data)
{
    ConfusionMatrix cm(net.config().classes);
    for (const auto& s : data) cm.add(net.predict(s.image), s.labels);
    return {cm, cm.per_class_iou(), cm.mean_iou()};
}

EvalResult evaluate_oracle(std::span<const SegSample> data, std::size_t classes)
{
    ConfusionMatrix cm(classes);
    for (const auto& s : data) {
        LabelMap pred = s.labels;
        // ignored pixels are skipped by the matrix; keep the prediction in range
        for (auto& v : pred.values)
            if (v == kIgnoreLabel) v = 0;
        cm.add(pred, s.labels);
    }
    return {cm, cm.per_class_iou(), cm.mean_iou()};
}

namespace {

void save_deconv(const std::filesystem::path& dir, const std::string& stem, const DeconvLayer& l,
                 nlohmann::ordered_json& j)
{
    save_tensor(dir / (stem + ".weights.bin"), l.weights);
    save_tensor(dir / (stem + ".bias.bin"), Tensor({1, l.spec.c_out, 1, 1}, l.bias));
    j = {{"name", stem},         {"k", l.spec.k},       {"stride", l.spec.stride},
         {"pad", l.spec.pad},    {"c_in", l.spec.c_in}, {"c_out", l.spec.c_out},
         {"weights", stem + ".weights.bin"}, {"bias", stem + ".bias.bin"}};
}

DeconvLayer load_deconv(const std::filesystem::path& dir, const nlohmann::json& j)
{
    DeconvSpec sp{j.at("k").get<std::size_t>(), j.at("stride").get<std::size_t>(), j.at("pad").get<std::size_t>(),
                  j.at("c_in").get<std::size_t>(), j.at("c_out").get<std::size_t>()};
    DeconvLayer l{sp, load_tensor(dir / j.at("weights").get<std::string>()), {}};
    const Tensor b = load_tensor(dir / j.at("bias").get<std::string>());
    l.bias.assign(b.data().begin(), b.data().end());
    validate(l);
    return l;
}

}  // namespace

void save_toynet(const std::filesystem::path& dir, const ToyNet& net)
{
    std::filesystem::create_directories(dir);
    const auto& cfg = net.config();
    nlohmann::ordered_json j;
    j["in_channels"] = cfg.in_channels;
    j["classes"] = cfg.classes;
    j["d"] = cfg.d;
    j["rates"] = cfg.rates;
    j["width"] = cfg.width;
    j["decoder"] = std::string(decoder_name(cfg.decoder));
    j["cell"] = cfg.cell;
    j["encoder"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < net.encoder().size(); ++i) {
        const std::string stem = "encoder_" + std::to_string(i);
        save_conv_layer(dir, stem, net.encoder()[i]);
        j["encoder"].push_back(stem);
    }
    j["head"] = nullptr;
    if (net.head()) {
        save_conv_layer(dir, "head", *net.head());
        j["head"] = "head";
    }
    j["deconv"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < net.deconvs().size(); ++i) {
        nlohmann::ordered_json dj;
        save_deconv(dir, "deconv_" + std::to_string(i), net.deconvs()[i], dj);
        j["deconv"].push_back(dj);
    }
    write_text_file(dir / "net.json", j.dump(2) + "\n");
}

ToyNet load_toynet(const std::filesystem::path& dir)
{
    std::ifstream is(dir / "net.json");
    if (!is) throw std::runtime_error("cannot open " + (dir / "net.json").string());
    const auto j = nlohmann::json::parse(is);
    ToyNetConfig cfg;
    cfg.in_channels = j.at("in_channels").get<std::size_t>();
    cfg.classes = j.at("classes").get<std::size_t>();
    cfg.d = j.at("d").get<std::size_t>();
    cfg.rates = j.at("rates").get<std::vector<std::size_t>>();
    cfg.width = j.at("width").get<std::size_t>();
    const auto dec = parse_decoder(j.at("decoder").get<std::string>());
    if (!dec) throw std::runtime_error("net.json: unknown decoder");
    cfg.decoder = *dec;
    cfg.cell = j.at("cell").get<std::size_t>();
    std::vector<ConvLayer> enc;
    for (const auto& stem : j.at("encoder")) enc.push_back(load_conv_layer(dir, stem.get<std::string>()));
    std::optional<ConvLayer> head;
    if (!j.at("head").is_null()) head = load_conv_layer(dir, j.at("head").get<std::string>());
    std::vector<DeconvLayer> deconvs;
    for (const auto& dj : j.at("deconv")) deconvs.push_back(load_deconv(dir, dj));
    return ToyNet(cfg, std::move(enc), std::move(head), std::move(deconvs));
}

}  // namespace ducseg
