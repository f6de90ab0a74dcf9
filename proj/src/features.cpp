#include "suesr/features.hpp"

#include <json.hpp>

#include "suesr/errors.hpp"
#include "suesr/rng.hpp"
#include "suesr/tensor_store.hpp"

namespace suesr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kDefaultRandomConvSeed = 1234;

std::uint64_t parse_seed(const std::string& text, const std::string& spec) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("loss.feature_backend", "invalid seed in '" + spec + "'");
    }
}

}  // namespace

ConvStackExtractor::ConvStackExtractor(std::string id, std::vector<ConvStackLayer> layers, ParameterSet params,
                                       Activation activation, std::vector<double> mean, std::vector<double> stddev)
    : id_(std::move(id)), specs_(std::move(layers)), activation_(activation), mean_(std::move(mean)),
      stddev_(std::move(stddev)) {
    if (specs_.empty()) throw BackendError(id_, "feature stack has no layers");
    if (mean_.size() != 3 || stddev_.size() != 3) throw BackendError(id_, "normalization needs 3 means and 3 stds");
    for (double s : stddev_) {
        if (!(s > 0.0)) throw BackendError(id_, "normalization std must be positive");
    }
    ParameterSet layout;
    int channels = 3;
    for (const auto& spec : specs_) {
        if (spec.geometry.in_channels != channels) {
            throw BackendError(id_, "layer '" + spec.name + "' expects " + std::to_string(spec.geometry.in_channels) +
                                        " channels but receives " + std::to_string(channels));
        }
        convs_.emplace_back(layout, spec.name, spec.geometry);
        channels = spec.geometry.out_channels;
    }
    if (!layout.same_layout(params)) throw BackendError(id_, "weights do not match the layer list");
    params_ = std::move(params);
}

Tensor ConvStackExtractor::normalize(const Tensor& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != 3) {
        throw ShapeError("feature extractor expects N x 3 x H x W, got " + shape_string(batch.shape()));
    }
    Tensor x = batch;
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    for (int n = 0; n < x.dim(0); ++n) {
        for (int c = 0; c < 3; ++c) {
            double* p = x.data() + (static_cast<std::size_t>(n) * 3 + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mean_[c]) / stddev_[c];
        }
    }
    return x;
}

Tensor ConvStackExtractor::extract(const Tensor& batch) const {
    Tensor x = normalize(batch);
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = convs_[i].forward(params_, x);
        if (activation_ == Activation::Relu) {
            nn::relu_inplace(x);
        } else {
            nn::leaky_relu_inplace(x);
        }
        if (specs_[i].pool_after) x = nn::max_pool2x2(x);
    }
    return x;
}

Tensor ConvStackExtractor::extract_vjp(const Tensor& batch, const Tensor& grad_features) const {
    // Re-run the forward pass, keeping every layer input.
    std::vector<Tensor> inputs;
    std::vector<Tensor> activated;
    Tensor x = normalize(batch);
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        inputs.push_back(x);
        x = convs_[i].forward(params_, x);
        if (activation_ == Activation::Relu) {
            nn::relu_inplace(x);
        } else {
            nn::leaky_relu_inplace(x);
        }
        activated.push_back(x);
        if (specs_[i].pool_after) x = nn::max_pool2x2(x);
    }
    if (!grad_features.same_shape(x)) {
        throw ShapeError("feature gradient " + shape_string(grad_features.shape()) + " does not match features " +
                         shape_string(x.shape()));
    }
    Tensor g = grad_features;
    for (std::size_t i = convs_.size(); i-- > 0;) {
        if (specs_[i].pool_after) g = nn::max_pool2x2_backward(activated[i], g);
        if (activation_ == Activation::Relu) {
            nn::relu_backward_inplace(activated[i], g);
        } else {
            nn::leaky_relu_backward_inplace(activated[i], g);
        }
        g = convs_[i].backward(params_, inputs[i], g, nullptr);
    }
    const std::size_t plane = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
    for (int n = 0; n < g.dim(0); ++n) {
        for (int c = 0; c < 3; ++c) {
            double* p = g.data() + (static_cast<std::size_t>(n) * 3 + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] /= stddev_[c];
        }
    }
    return g;
}

std::unique_ptr<ConvStackExtractor> make_random_conv_extractor(std::uint64_t seed) {
    std::vector<ConvStackLayer> layers = {
        {"features.0", {3, 8, 3, 1, 1, 1}, false},
        {"features.1", {8, 16, 3, 2, 1, 1}, false},
    };
    ParameterSet params;
    std::vector<nn::Conv2d> convs;
    for (const auto& l : layers) convs.emplace_back(params, l.name, l.geometry);
    Rng rng(seed);
    for (const auto& conv : convs) conv.init_he_normal(params, rng, 1.0);
    params.round_to_float32();
    return std::make_unique<ConvStackExtractor>("random-conv:" + std::to_string(seed), std::move(layers),
                                                std::move(params), ConvStackExtractor::Activation::LeakyRelu,
                                                std::vector<double>{0.0, 0.0, 0.0}, std::vector<double>{1.0, 1.0, 1.0});
}

std::unique_ptr<ConvStackExtractor> load_conv_stack_extractor(const fs::path& dir) {
    const std::string id = "conv-stack:" + dir.string();
    if (!fs::is_directory(dir)) throw BackendError(id, "weights directory not found");
    json meta;
    try {
        meta = json::parse(read_file(dir / "meta.json"));
    } catch (const std::exception& e) {
        throw BackendError(id, std::string("cannot read meta.json: ") + e.what());
    }
    std::vector<ConvStackLayer> layers;
    ConvStackExtractor::Activation activation = ConvStackExtractor::Activation::Relu;
    std::vector<double> mean = {0.485, 0.456, 0.406};
    std::vector<double> stddev = {0.229, 0.224, 0.225};
    try {
        for (const auto& l : meta.at("layers")) {
            ConvStackLayer layer;
            layer.name = l.at("name").get<std::string>();
            layer.geometry.in_channels = l.at("in").get<int>();
            layer.geometry.out_channels = l.at("out").get<int>();
            layer.geometry.kernel = l.value("kernel", 3);
            layer.geometry.stride = l.value("stride", 1);
            layer.geometry.padding = l.value("padding", layer.geometry.kernel / 2);
            layer.geometry.dilation = l.value("dilation", 1);
            layer.pool_after = l.value("pool_after", false);
            layers.push_back(layer);
        }
        const std::string act = meta.value("activation", "relu");
        if (act == "leaky_relu") {
            activation = ConvStackExtractor::Activation::LeakyRelu;
        } else if (act != "relu") {
            throw BackendError(id, "unknown activation '" + act + "'");
        }
        if (meta.contains("mean")) mean = meta.at("mean").get<std::vector<double>>();
        if (meta.contains("std")) stddev = meta.at("std").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw BackendError(id, std::string("malformed meta.json: ") + e.what());
    }
    ParameterSet params;
    try {
        params = read_tensor_store(dir);
    } catch (const Error& e) {
        throw BackendError(id, e.what());
    }
    return std::make_unique<ConvStackExtractor>(id, std::move(layers), std::move(params), activation, std::move(mean),
                                                std::move(stddev));
}

void validate_feature_backend_spec(const std::string& spec) {
    if (spec == "random-conv") return;
    if (spec.rfind("random-conv:", 0) == 0) {
        parse_seed(spec.substr(12), spec);
        return;
    }
    if (spec.rfind("conv-stack:", 0) == 0 && spec.size() > 11) return;
    throw ConfigError("feature_backend", "unknown feature backend '" + spec + "'");
}

std::unique_ptr<FeatureExtractor> make_feature_extractor(const std::string& spec) {
    validate_feature_backend_spec(spec);
    if (spec == "random-conv") return make_random_conv_extractor(kDefaultRandomConvSeed);
    if (spec.rfind("random-conv:", 0) == 0) return make_random_conv_extractor(parse_seed(spec.substr(12), spec));
    return load_conv_stack_extractor(spec.substr(11));
}

}  // namespace suesr
