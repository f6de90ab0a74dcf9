#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "suesr/layers.hpp"
#include "suesr/parameters.hpp"
#include "suesr/tensor.hpp"

namespace suesr {

/// Per-pixel class probabilities (K x H x W) with their arg-max labels.
struct SegmentationMap {
    Tensor probs;
    std::vector<int> labels;  // H * W, row-major

    int classes() const { return probs.dim(0); }
    int height() const { return probs.dim(1); }
    int width() const { return probs.dim(2); }
    int label(int y, int x) const { return labels[static_cast<std::size_t>(y) * width() + x]; }
};

/// Validates a K x H x W probability grid (non-negative, sums to 1 within
/// 1e-5) and derives labels by arg-max with ties going to the lower index.
SegmentationMap make_segmentation_map(Tensor probs);

class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual std::string id() const = 0;
    virtual int num_classes() const = 0;
    /// N x 3 x H x W -> N x K x H x W, softmax-normalized per pixel.
    virtual Tensor probabilities(const Tensor& batch) const = 0;
    /// Vector-Jacobian product of probabilities() with respect to the input.
    virtual Tensor probabilities_vjp(const Tensor& batch, const Tensor& grad_probs) const = 0;
};

/// Two-class stub: class 1 where the channel-mean intensity is >= 0.5.
/// Probabilities are a logistic ramp of the mean intensity so the map is
/// differentiable.
class ThresholdSegmenter : public Segmenter {
public:
    static constexpr double kThreshold = 0.5;
    static constexpr double kSharpness = 10.0;

    std::string id() const override { return "oracle-threshold"; }
    int num_classes() const override { return 2; }
    Tensor probabilities(const Tensor& batch) const override;
    Tensor probabilities_vjp(const Tensor& batch, const Tensor& grad_probs) const override;
};

struct DeepLabLayer {
    std::string name;
    nn::ConvGeometry geometry;
};

/// DeepLabv3 inference graph: dilated conv backbone, ASPP (1x1 branch,
/// atrous 3x3 branches, image-pooling branch, 1x1 projection), 3x3 head,
/// 1x1 classifier, bilinear upsampling to input size, softmax. Batch-norm
/// layers are expected to be folded into the convolution weights.
class DeepLabV3Segmenter : public Segmenter {
public:
    struct Spec {
        int num_classes = 0;
        std::vector<DeepLabLayer> backbone;
        int aspp_channels = 256;
        std::vector<int> aspp_rates = {6, 12, 18};
        std::vector<double> mean = {0.485, 0.456, 0.406};
        std::vector<double> stddev = {0.229, 0.224, 0.225};
    };

    DeepLabV3Segmenter(std::string id, Spec spec, ParameterSet params);

    /// Loads `meta.json` + tensor store from a weights directory.
    static std::unique_ptr<DeepLabV3Segmenter> load(const std::filesystem::path& dir);
    /// Builds the parameter layout of a spec (names and shapes, zero values).
    static ParameterSet layout(const Spec& spec);

    std::string id() const override { return id_; }
    int num_classes() const override { return spec_.num_classes; }
    Tensor probabilities(const Tensor& batch) const override;
    Tensor probabilities_vjp(const Tensor& batch, const Tensor& grad_probs) const override;

private:
    struct Tape;
    Tensor run(const Tensor& batch, Tape* tape) const;

    std::string id_;
    Spec spec_;
    ParameterSet params_;
    std::vector<nn::Conv2d> backbone_;
    std::vector<nn::Conv2d> aspp_branches_;  // 1x1 followed by one atrous conv per rate
    nn::Conv2d aspp_pool_;
    nn::Conv2d aspp_project_;
    nn::Conv2d head_;
    nn::Conv2d classifier_;
};

/// Backend strings: "oracle-threshold" or "deeplabv3:<weights-dir>".
std::unique_ptr<Segmenter> make_segmenter(const std::string& spec);
void validate_segmenter_spec(const std::string& spec);

/// Segments one 3 x H x W image with values in [0, 1].
SegmentationMap segment(const Segmenter& seg, const Tensor& image);

/// Mean absolute difference of arg-max class indices over all pixels.
double semantic_consistency_metric(const SegmentationMap& sr, const SegmentationMap& hr);

/// Mean over pixels of the L1 distance between class-probability vectors.
/// Accepts K x H x W or N x K x H x W grids; writes d(loss)/d(p_sr) when
/// `grad_sr` is non-null.
double semantic_surrogate_loss(const Tensor& p_sr, const Tensor& p_hr, Tensor* grad_sr = nullptr);

}  // namespace suesr
