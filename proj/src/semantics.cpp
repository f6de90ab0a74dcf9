#include "suesr/semantics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "suesr/errors.hpp"
#include "suesr/tensor_store.hpp"

namespace suesr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kProbabilityTolerance = 1e-5;

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void require_image_batch(const Tensor& batch, const std::string& who) {
    if (batch.rank() != 4 || batch.dim(1) != 3) {
        throw ShapeError(who + " expects N x 3 x H x W, got " + shape_string(batch.shape()));
    }
}

}  // namespace

SegmentationMap make_segmentation_map(Tensor probs) {
    if (probs.rank() != 3) throw ShapeError("segmentation probabilities must be K x H x W");
    const int k = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
    if (k < 1) throw ShapeError("segmentation map needs at least one class");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    SegmentationMap map;
    map.labels.assign(plane, 0);
    for (std::size_t i = 0; i < plane; ++i) {
        double sum = 0.0;
        int best = 0;
        for (int c = 0; c < k; ++c) {
            const double p = probs[c * plane + i];
            if (!(p >= 0.0)) throw NumericError("negative or NaN class probability at pixel " + std::to_string(i));
            sum += p;
            if (p > probs[static_cast<std::size_t>(best) * plane + i]) best = c;
        }
        if (std::abs(sum - 1.0) > kProbabilityTolerance) {
            throw NumericError("class probabilities at pixel " + std::to_string(i) + " sum to " + std::to_string(sum));
        }
        map.labels[i] = best;
    }
    map.probs = std::move(probs);
    return map;
}

// ---------------------------------------------------------------------------
// Threshold stub

Tensor ThresholdSegmenter::probabilities(const Tensor& batch) const {
    require_image_batch(batch, "oracle-threshold segmenter");
    const int n = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor probs({n, 2, h, w});
    for (int b = 0; b < n; ++b) {
        const double* img = batch.data() + static_cast<std::size_t>(b) * 3 * plane;
        double* out = probs.data() + static_cast<std::size_t>(b) * 2 * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            const double mean = (img[i] + img[plane + i] + img[2 * plane + i]) / 3.0;
            const double logit = kSharpness * (mean - kThreshold);
            double p1 = sigmoid(logit);
            // The threshold itself belongs to class 1.
            if (logit == 0.0) p1 = std::nextafter(0.5, 1.0);
            out[plane + i] = p1;
            out[i] = logit == 0.0 ? 1.0 - p1 : sigmoid(-logit);
        }
    }
    return probs;
}

Tensor ThresholdSegmenter::probabilities_vjp(const Tensor& batch, const Tensor& grad_probs) const {
    require_image_batch(batch, "oracle-threshold segmenter");
    const int n = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
    if (grad_probs.shape() != std::vector<int>{n, 2, h, w}) throw ShapeError("probability gradient shape mismatch");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor grad(batch.shape());
    for (int b = 0; b < n; ++b) {
        const double* img = batch.data() + static_cast<std::size_t>(b) * 3 * plane;
        const double* g = grad_probs.data() + static_cast<std::size_t>(b) * 2 * plane;
        double* out = grad.data() + static_cast<std::size_t>(b) * 3 * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            const double mean = (img[i] + img[plane + i] + img[2 * plane + i]) / 3.0;
            const double p1 = sigmoid(kSharpness * (mean - kThreshold));
            const double d_logit = (g[plane + i] - g[i]) * p1 * (1.0 - p1);
            const double d_pixel = d_logit * kSharpness / 3.0;
            out[i] = d_pixel;
            out[plane + i] = d_pixel;
            out[2 * plane + i] = d_pixel;
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// DeepLabv3

struct DeepLabV3Segmenter::Tape {
    Tensor normalized;
    std::vector<Tensor> backbone_out;  // post-ReLU output of each backbone layer
    std::vector<Tensor> branch_out;    // post-ReLU ASPP branch outputs
    Tensor pooled;                     // N x C x 1 x 1 global average
    Tensor pool_out;                   // post-ReLU pooling-branch output, N x A x 1 x 1
    Tensor concat;
    Tensor projected;
    Tensor head_out;
    Tensor logits;
    Tensor probs;
};

namespace {

struct DeepLabModules {
    std::vector<nn::Conv2d> backbone;
    std::vector<nn::Conv2d> branches;
    nn::Conv2d pool;
    nn::Conv2d project;
    nn::Conv2d head;
    nn::Conv2d classifier;
};

DeepLabModules build_deeplab(const DeepLabV3Segmenter::Spec& spec, ParameterSet& params) {
    DeepLabModules m;
    int channels = 3;
    for (const auto& layer : spec.backbone) {
        if (layer.geometry.in_channels != channels) {
            throw ConfigError(layer.name, "backbone layer expects " + std::to_string(layer.geometry.in_channels) +
                                              " channels but receives " + std::to_string(channels));
        }
        m.backbone.emplace_back(params, layer.name, layer.geometry);
        channels = layer.geometry.out_channels;
    }
    const int a = spec.aspp_channels;
    m.branches.emplace_back(params, "aspp.b0", nn::ConvGeometry{channels, a, 1, 1, 0, 1});
    for (std::size_t r = 0; r < spec.aspp_rates.size(); ++r) {
        const int rate = spec.aspp_rates[r];
        m.branches.emplace_back(params, "aspp.b" + std::to_string(r + 1), nn::ConvGeometry{channels, a, 3, 1, rate, rate});
    }
    m.pool = nn::Conv2d(params, "aspp.pool", {channels, a, 1, 1, 0, 1});
    const int branches = static_cast<int>(m.branches.size()) + 1;
    m.project = nn::Conv2d(params, "aspp.project", {branches * a, a, 1, 1, 0, 1});
    m.head = nn::Conv2d(params, "head", {a, a, 3, 1, 1, 1});
    m.classifier = nn::Conv2d(params, "classifier", {a, spec.num_classes, 1, 1, 0, 1});
    return m;
}

Tensor broadcast_spatial(const Tensor& x, int h, int w) {
    Tensor out({x.dim(0), x.dim(1), h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < x.size(); ++i) std::fill_n(out.data() + i * plane, plane, x[i]);
    return out;
}

Tensor spatial_mean(const Tensor& x) {
    Tensor out({x.dim(0), x.dim(1), 1, 1});
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < plane; ++j) s += x[i * plane + j];
        out[i] = s / static_cast<double>(plane);
    }
    return out;
}

Tensor softmax_channels(const Tensor& logits) {
    Tensor probs(logits.shape());
    const int n = logits.dim(0), k = logits.dim(1);
    const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
    for (int b = 0; b < n; ++b) {
        const double* l = logits.data() + static_cast<std::size_t>(b) * k * plane;
        double* p = probs.data() + static_cast<std::size_t>(b) * k * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            double mx = l[i];
            for (int c = 1; c < k; ++c) mx = std::max(mx, l[c * plane + i]);
            double sum = 0.0;
            for (int c = 0; c < k; ++c) {
                p[c * plane + i] = std::exp(l[c * plane + i] - mx);
                sum += p[c * plane + i];
            }
            for (int c = 0; c < k; ++c) p[c * plane + i] /= sum;
        }
    }
    return probs;
}

}  // namespace

ParameterSet DeepLabV3Segmenter::layout(const Spec& spec) {
    ParameterSet params;
    build_deeplab(spec, params);
    return params;
}

DeepLabV3Segmenter::DeepLabV3Segmenter(std::string id, Spec spec, ParameterSet params)
    : id_(std::move(id)), spec_(std::move(spec)) {
    if (spec_.num_classes < 1) throw BackendError(id_, "num_classes must be positive");
    if (spec_.aspp_channels < 1) throw BackendError(id_, "aspp_channels must be positive");
    if (spec_.mean.size() != 3 || spec_.stddev.size() != 3) throw BackendError(id_, "mean/std need 3 entries");
    ParameterSet expected;
    DeepLabModules m;
    try {
        m = build_deeplab(spec_, expected);
    } catch (const ConfigError& e) {
        throw BackendError(id_, e.what());
    }
    if (!expected.same_layout(params)) throw BackendError(id_, "weights do not match the declared architecture");
    params_ = std::move(params);
    backbone_ = std::move(m.backbone);
    aspp_branches_ = std::move(m.branches);
    aspp_pool_ = m.pool;
    aspp_project_ = m.project;
    head_ = m.head;
    classifier_ = m.classifier;
}

std::unique_ptr<DeepLabV3Segmenter> DeepLabV3Segmenter::load(const fs::path& dir) {
    const std::string id = "deeplabv3:" + dir.string();
    if (!fs::is_directory(dir)) throw BackendError(id, "weights directory not found");
    Spec spec;
    try {
        const json meta = json::parse(read_file(dir / "meta.json"));
        spec.num_classes = meta.at("num_classes").get<int>();
        for (const auto& l : meta.at("backbone")) {
            DeepLabLayer layer;
            layer.name = l.at("name").get<std::string>();
            layer.geometry.in_channels = l.at("in").get<int>();
            layer.geometry.out_channels = l.at("out").get<int>();
            layer.geometry.kernel = l.value("kernel", 3);
            layer.geometry.stride = l.value("stride", 1);
            layer.geometry.dilation = l.value("dilation", 1);
            layer.geometry.padding = l.value("padding", layer.geometry.dilation * (layer.geometry.kernel / 2));
            spec.backbone.push_back(layer);
        }
        spec.aspp_channels = meta.value("aspp_channels", 256);
        if (meta.contains("aspp_rates")) spec.aspp_rates = meta.at("aspp_rates").get<std::vector<int>>();
        if (meta.contains("mean")) spec.mean = meta.at("mean").get<std::vector<double>>();
        if (meta.contains("std")) spec.stddev = meta.at("std").get<std::vector<double>>();
    } catch (const std::exception& e) {
        throw BackendError(id, std::string("cannot read meta.json: ") + e.what());
    }
    ParameterSet params;
    try {
        params = read_tensor_store(dir);
    } catch (const Error& e) {
        throw BackendError(id, e.what());
    }
    return std::make_unique<DeepLabV3Segmenter>(id, std::move(spec), std::move(params));
}

Tensor DeepLabV3Segmenter::run(const Tensor& batch, Tape* tape) const {
    require_image_batch(batch, "deeplabv3 segmenter");
    const int h = batch.dim(2), w = batch.dim(3);
    Tensor x = batch;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int b = 0; b < x.dim(0); ++b)
        for (int c = 0; c < 3; ++c) {
            double* p = x.data() + (static_cast<std::size_t>(b) * 3 + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - spec_.mean[c]) / spec_.stddev[c];
        }
    if (tape != nullptr) tape->normalized = x;
    for (const auto& conv : backbone_) {
        x = conv.forward(params_, x);
        nn::relu_inplace(x);
        if (tape != nullptr) tape->backbone_out.push_back(x);
    }
    const int fh = x.dim(2), fw = x.dim(3);
    Tensor concat;
    for (const auto& branch : aspp_branches_) {
        Tensor y = branch.forward(params_, x);
        nn::relu_inplace(y);
        concat = concat.empty() ? y : nn::concat_channels(concat, y);
        if (tape != nullptr) tape->branch_out.push_back(std::move(y));
    }
    Tensor pooled = spatial_mean(x);
    Tensor pool_out = aspp_pool_.forward(params_, pooled);
    nn::relu_inplace(pool_out);
    concat = nn::concat_channels(concat, broadcast_spatial(pool_out, fh, fw));
    Tensor projected = aspp_project_.forward(params_, concat);
    nn::relu_inplace(projected);
    Tensor head_out = head_.forward(params_, projected);
    nn::relu_inplace(head_out);
    Tensor logits = classifier_.forward(params_, head_out);
    Tensor probs = softmax_channels(nn::bilinear_resize(logits, h, w));
    if (tape != nullptr) {
        tape->pooled = std::move(pooled);
        tape->pool_out = std::move(pool_out);
        tape->concat = std::move(concat);
        tape->projected = std::move(projected);
        tape->head_out = std::move(head_out);
        tape->logits = std::move(logits);
        tape->probs = probs;
    }
    return probs;
}

Tensor DeepLabV3Segmenter::probabilities(const Tensor& batch) const { return run(batch, nullptr); }

Tensor DeepLabV3Segmenter::probabilities_vjp(const Tensor& batch, const Tensor& grad_probs) const {
    Tape tape;
    run(batch, &tape);
    if (!grad_probs.same_shape(tape.probs)) throw ShapeError("probability gradient shape mismatch");
    const int n = batch.dim(0), k = spec_.num_classes;
    const std::size_t plane = static_cast<std::size_t>(batch.dim(2)) * batch.dim(3);

    // softmax
    Tensor grad_up(tape.probs.shape());
    for (int b = 0; b < n; ++b) {
        const double* p = tape.probs.data() + static_cast<std::size_t>(b) * k * plane;
        const double* g = grad_probs.data() + static_cast<std::size_t>(b) * k * plane;
        double* out = grad_up.data() + static_cast<std::size_t>(b) * k * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            double dot = 0.0;
            for (int c = 0; c < k; ++c) dot += p[c * plane + i] * g[c * plane + i];
            for (int c = 0; c < k; ++c) out[c * plane + i] = p[c * plane + i] * (g[c * plane + i] - dot);
        }
    }
    Tensor g = nn::bilinear_resize_backward(grad_up, tape.logits.dim(2), tape.logits.dim(3));
    g = classifier_.backward(params_, tape.head_out, g, nullptr);
    nn::relu_backward_inplace(tape.head_out, g);
    g = head_.backward(params_, tape.projected, g, nullptr);
    nn::relu_backward_inplace(tape.projected, g);
    const Tensor grad_concat = aspp_project_.backward(params_, tape.concat, g, nullptr);

    const Tensor& features = tape.backbone_out.empty() ? tape.normalized : tape.backbone_out.back();
    Tensor grad_features(features.shape());
    const int a = spec_.aspp_channels;
    for (std::size_t i = 0; i < aspp_branches_.size(); ++i) {
        const int begin = static_cast<int>(i) * a;
        Tensor gb = nn::slice_channels(grad_concat, begin, begin + a);
        nn::relu_backward_inplace(tape.branch_out[i], gb);
        add_scaled(grad_features, aspp_branches_[i].backward(params_, features, gb, nullptr));
    }
    {
        const int begin = static_cast<int>(aspp_branches_.size()) * a;
        const Tensor gb = nn::slice_channels(grad_concat, begin, begin + a);
        Tensor gp = spatial_mean(gb);  // sum over broadcast positions / plane; rescaled below
        const double fplane = static_cast<double>(gb.dim(2)) * gb.dim(3);
        for (double& v : gp.values()) v *= fplane;
        nn::relu_backward_inplace(tape.pool_out, gp);
        Tensor g_pooled = aspp_pool_.backward(params_, tape.pooled, gp, nullptr);
        for (double& v : g_pooled.values()) v /= fplane;
        add_scaled(grad_features, broadcast_spatial(g_pooled, features.dim(2), features.dim(3)));
    }
    g = std::move(grad_features);
    for (std::size_t i = backbone_.size(); i-- > 0;) {
        nn::relu_backward_inplace(tape.backbone_out[i], g);
        const Tensor& input = i == 0 ? tape.normalized : tape.backbone_out[i - 1];
        g = backbone_[i].backward(params_, input, g, nullptr);
    }
    for (int b = 0; b < n; ++b)
        for (int c = 0; c < 3; ++c) {
            double* p = g.data() + (static_cast<std::size_t>(b) * 3 + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] /= spec_.stddev[c];
        }
    return g;
}

// ---------------------------------------------------------------------------

void validate_segmenter_spec(const std::string& spec) {
    if (spec == "oracle-threshold") return;
    if (spec.rfind("deeplabv3:", 0) == 0 && spec.size() > 10) return;
    throw ConfigError("loss.segmenter", "unknown segmenter backend '" + spec + "'");
}

std::unique_ptr<Segmenter> make_segmenter(const std::string& spec) {
    validate_segmenter_spec(spec);
    if (spec == "oracle-threshold") return std::make_unique<ThresholdSegmenter>();
    return DeepLabV3Segmenter::load(spec.substr(10));
}

SegmentationMap segment(const Segmenter& seg, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("segment expects a 3 x H x W image, got " + shape_string(image.shape()));
    }
    for (double v : image.values()) {
        if (!(v >= 0.0 && v <= 1.0)) throw InputError("segment expects pixel values in [0, 1]");
    }
    return make_segmentation_map(batch_item(seg.probabilities(as_batch(image)), 0));
}

double semantic_consistency_metric(const SegmentationMap& sr, const SegmentationMap& hr) {
    if (sr.height() != hr.height() || sr.width() != hr.width()) {
        throw ShapeError("segmentation maps differ in size: " + shape_string(sr.probs.shape()) + " vs " +
                         shape_string(hr.probs.shape()));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < sr.labels.size(); ++i) total += std::abs(sr.labels[i] - hr.labels[i]);
    return total / static_cast<double>(sr.labels.size());
}

double semantic_surrogate_loss(const Tensor& p_sr, const Tensor& p_hr, Tensor* grad_sr) {
    if (!p_sr.same_shape(p_hr)) {
        throw ShapeError("probability grids differ: " + shape_string(p_sr.shape()) + " vs " +
                         shape_string(p_hr.shape()));
    }
    std::size_t pixels = 0;
    if (p_sr.rank() == 3) {
        pixels = static_cast<std::size_t>(p_sr.dim(1)) * p_sr.dim(2);
    } else if (p_sr.rank() == 4) {
        pixels = static_cast<std::size_t>(p_sr.dim(0)) * p_sr.dim(2) * p_sr.dim(3);
    } else {
        throw ShapeError("probability grid must be K x H x W or N x K x H x W");
    }
    const double inv = 1.0 / static_cast<double>(pixels);
    if (grad_sr != nullptr) *grad_sr = Tensor(p_sr.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < p_sr.size(); ++i) {
        const double d = p_sr[i] - p_hr[i];
        total += std::abs(d);
        if (grad_sr != nullptr) (*grad_sr)[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    return total * inv;
}

}  // namespace suesr
