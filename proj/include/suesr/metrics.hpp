#pragma once

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "suesr/features.hpp"
#include "suesr/tensor.hpp"

namespace suesr {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE); +inf when the images are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, valid-region windows, averaged over channels.
double ssim(const Tensor& a, const Tensor& b);

/// LPIPS-style distance on one feature grid: features are unit-normalized
/// along channels at every location, and the squared difference is summed
/// over channels and averaged over locations.
double lpips_distance(const Tensor& a, const Tensor& b, const FeatureExtractor& fx);

/// Channel-wise global average of the extractor output, one vector per image.
std::vector<Eigen::VectorXd> pooled_features(std::span<const Tensor> images, const FeatureExtractor& fx);

struct GaussianFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

/// Sample mean and (n - 1)-normalized covariance.
GaussianFit gaussian_fit(std::span<const Eigen::VectorXd> features);

/// Frechet distance between two Gaussian fits, clamped at 0.
double fid(const GaussianFit& a, const GaussianFit& b);

struct MetricReport {
    std::string split;
    std::size_t n_images = 0;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double lpips = 0.0;
    std::optional<double> fid;  // needs >= 2 images per side
    std::map<std::string, std::string> backends;
    std::string config_hash;
};

struct PerImageMetrics {
    std::string name;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double lpips = 0.0;
};

struct EvaluationResult {
    MetricReport report;
    std::vector<PerImageMetrics> per_image;
};

/// Averages PSNR/SSIM/LPIPS over pairs in the given order and computes FID
/// over the pooled feature sets of the two sides.
EvaluationResult evaluate_split(std::span<const Tensor> outputs, std::span<const Tensor> references,
                                const FeatureExtractor& fx, const std::string& split,
                                std::span<const std::string> names = {});

/// `report.json` form; infinite PSNR is written as the string "inf".
std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(const std::string& text);
std::string per_image_csv(const std::vector<PerImageMetrics>& rows);

}  // namespace suesr
