#include "suesr/metrics.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "suesr/errors.hpp"

namespace suesr {

using nlohmann::json;

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;
constexpr double kLpipsEps = 1e-10;
constexpr double kFidRegularization = 1e-6;

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(who) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
}

std::vector<double> gaussian_window() {
    std::vector<double> w(kSsimWindow);
    double total = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        w[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * kSsimSigma * kSsimSigma));
        total += w[static_cast<std::size_t>(i)];
    }
    for (double& v : w) v /= total;
    return w;
}

/// Separable valid-mode filtering of one H x W plane.
std::vector<double> filter_valid(const double* plane, int h, int w, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int oh = h - n + 1, ow = w - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * plane[y * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

Tensor to_batch(const Tensor& t) { return t.rank() == 3 ? as_batch(t) : t; }

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (m + m.transpose()));
    if (solver.info() != Eigen::Success) throw NumericError("eigendecomposition did not converge");
    const Eigen::VectorXd roots = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return solver.eigenvectors() * roots.asDiagonal() * solver.eigenvectors().transpose();
}

/// Trace of (A B)^(1/2) for symmetric PSD A, B, via A^(1/2) B A^(1/2).
/// Returns nullopt when the product is numerically indefinite.
std::optional<double> trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const Eigen::MatrixXd root = symmetric_sqrt(a);
    const Eigen::MatrixXd product = root * b * root;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (product + product.transpose()), Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw NumericError("eigendecomposition did not converge");
    const Eigen::VectorXd& eig = solver.eigenvalues();
    const double scale = std::max(1.0, eig.cwiseAbs().maxCoeff());
    if (!eig.allFinite()) throw NumericError("matrix square root produced non-finite eigenvalues");
    if (eig.minCoeff() < -1e-8 * scale) return std::nullopt;
    return eig.cwiseMax(0.0).cwiseSqrt().sum();
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
    require_same_shape(a, b, "psnr");
    if (!(peak > 0.0)) throw InputError("psnr peak must be positive");
    if (a.empty()) throw ShapeError("psnr of empty images");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.size());
    if (mse == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "ssim");
    if (a.rank() != 3) throw ShapeError("ssim expects C x H x W images");
    const int channels = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (h < kSsimWindow || w < kSsimWindow) {
        throw SizeError("ssim needs images of at least " + std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow));
    }
    const auto k = gaussian_window();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> xx(plane), yy(plane), xy(plane);
    double total = 0.0;
    for (int c = 0; c < channels; ++c) {
        const double* x = a.data() + c * plane;
        const double* y = b.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mu_x = filter_valid(x, h, w, k);
        const auto mu_y = filter_valid(y, h, w, k);
        const auto e_xx = filter_valid(xx.data(), h, w, k);
        const auto e_yy = filter_valid(yy.data(), h, w, k);
        const auto e_xy = filter_valid(xy.data(), h, w, k);
        double acc = 0.0;
        for (std::size_t i = 0; i < mu_x.size(); ++i) {
            const double mx = mu_x[i], my = mu_y[i];
            const double sx = e_xx[i] - mx * mx;
            const double sy = e_yy[i] - my * my;
            const double sxy = e_xy[i] - mx * my;
            acc += ((2.0 * mx * my + kSsimC1) * (2.0 * sxy + kSsimC2)) /
                   ((mx * mx + my * my + kSsimC1) * (sx + sy + kSsimC2));
        }
        total += acc / static_cast<double>(mu_x.size());
    }
    return total / channels;
}

double lpips_distance(const Tensor& a, const Tensor& b, const FeatureExtractor& fx) {
    require_same_shape(a, b, "lpips");
    const Tensor fa = fx.extract(to_batch(a));
    const Tensor fb = fx.extract(to_batch(b));
    const int n = fa.dim(0), c = fa.dim(1);
    const std::size_t plane = static_cast<std::size_t>(fa.dim(2)) * fa.dim(3);
    double total = 0.0;
    for (int item = 0; item < n; ++item) {
        const double* pa = fa.data() + static_cast<std::size_t>(item) * c * plane;
        const double* pb = fb.data() + static_cast<std::size_t>(item) * c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            double na = 0.0, nb = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                na += pa[ch * plane + i] * pa[ch * plane + i];
                nb += pb[ch * plane + i] * pb[ch * plane + i];
            }
            na = std::sqrt(na) + kLpipsEps;
            nb = std::sqrt(nb) + kLpipsEps;
            double d = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double diff = pa[ch * plane + i] / na - pb[ch * plane + i] / nb;
                d += diff * diff;
            }
            total += d;
        }
    }
    return total / (static_cast<double>(plane) * n);
}

std::vector<Eigen::VectorXd> pooled_features(std::span<const Tensor> images, const FeatureExtractor& fx) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(images.size());
    for (const Tensor& img : images) {
        const Tensor f = fx.extract(to_batch(img));
        const int c = f.dim(1);
        const std::size_t plane = static_cast<std::size_t>(f.dim(2)) * f.dim(3);
        Eigen::VectorXd v(c);
        for (int ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += f[ch * plane + i];
            v[ch] = s / static_cast<double>(plane);
        }
        out.push_back(std::move(v));
    }
    return out;
}

GaussianFit gaussian_fit(std::span<const Eigen::VectorXd> features) {
    if (features.size() < 2) throw InputError("gaussian_fit needs at least 2 feature vectors");
    const Eigen::Index d = features.front().size();
    for (const auto& f : features) {
        if (f.size() != d) throw ShapeError("feature vectors differ in dimension");
    }
    GaussianFit fit;
    fit.mean = Eigen::VectorXd::Zero(d);
    for (const auto& f : features) fit.mean += f;
    fit.mean /= static_cast<double>(features.size());
    fit.covariance = Eigen::MatrixXd::Zero(d, d);
    for (const auto& f : features) {
        const Eigen::VectorXd centered = f - fit.mean;
        fit.covariance.noalias() += centered * centered.transpose();
    }
    fit.covariance /= static_cast<double>(features.size() - 1);
    fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose()).eval();
    return fit;
}

double fid(const GaussianFit& a, const GaussianFit& b) {
    if (a.mean.size() != b.mean.size() || a.covariance.rows() != b.covariance.rows()) {
        throw ShapeError("FID fits differ in dimension");
    }
    if (a.mean == b.mean && a.covariance == b.covariance) return 0.0;
    const double mean_term = (a.mean - b.mean).squaredNorm();
    const double traces = a.covariance.trace() + b.covariance.trace();
    std::optional<double> cross = trace_sqrt_product(a.covariance, b.covariance);
    double regularization = 0.0;
    if (!cross) {
        const Eigen::Index d = a.covariance.rows();
        const Eigen::MatrixXd eps = kFidRegularization * Eigen::MatrixXd::Identity(d, d);
        cross = trace_sqrt_product(a.covariance + eps, b.covariance + eps);
        if (!cross) throw NumericError("matrix square root did not converge even after regularization");
        regularization = 2.0 * kFidRegularization * static_cast<double>(d);
    }
    const double value = mean_term + traces + regularization - 2.0 * *cross;
    if (!std::isfinite(value)) throw NumericError("FID is not finite");
    return std::max(value, 0.0);
}

EvaluationResult evaluate_split(std::span<const Tensor> outputs, std::span<const Tensor> references,
                                const FeatureExtractor& fx, const std::string& split,
                                std::span<const std::string> names) {
    if (outputs.size() != references.size()) throw ShapeError("evaluate_split: output/reference counts differ");
    if (outputs.empty()) throw InputError("evaluate_split needs at least one pair");
    EvaluationResult result;
    MetricReport& r = result.report;
    r.split = split;
    r.n_images = outputs.size();
    r.backends["features"] = fx.id();
    double sum_psnr = 0.0, sum_ssim = 0.0, sum_lpips = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        PerImageMetrics row;
        row.name = i < names.size() ? names[i] : std::to_string(i);
        try {
            row.psnr_db = psnr(outputs[i], references[i]);
            row.ssim = ssim(outputs[i], references[i]);
            row.lpips = lpips_distance(outputs[i], references[i], fx);
        } catch (const Error& e) {
            throw InputError("image '" + row.name + "': " + e.what());
        }
        sum_psnr += row.psnr_db;
        sum_ssim += row.ssim;
        sum_lpips += row.lpips;
        result.per_image.push_back(row);
    }
    const double n = static_cast<double>(outputs.size());
    r.psnr_db = sum_psnr / n;
    r.ssim = sum_ssim / n;
    r.lpips = sum_lpips / n;
    if (outputs.size() >= 2) {
        const auto fo = pooled_features(outputs, fx);
        const auto fr = pooled_features(references, fx);
        r.fid = fid(gaussian_fit(fo), gaussian_fit(fr));
    }
    return result;
}

std::string report_to_json(const MetricReport& report) {
    json doc;
    doc["split"] = report.split;
    doc["n_images"] = report.n_images;
    if (std::isinf(report.psnr_db) && report.psnr_db > 0) {
        doc["psnr_db"] = "inf";
    } else {
        doc["psnr_db"] = report.psnr_db;
    }
    doc["ssim"] = report.ssim;
    doc["lpips"] = report.lpips;
    doc["fid"] = report.fid ? json(*report.fid) : json(nullptr);
    doc["backends"] = report.backends;
    doc["config_hash"] = report.config_hash;
    return doc.dump(2) + "\n";
}

MetricReport report_from_json(const std::string& text) {
    MetricReport r;
    try {
        const json doc = json::parse(text);
        r.split = doc.at("split").get<std::string>();
        r.n_images = doc.at("n_images").get<std::size_t>();
        const json& p = doc.at("psnr_db");
        if (p.is_string()) {
            if (p.get<std::string>() != "inf") throw InputError("psnr_db string must be \"inf\"");
            r.psnr_db = kInfinitePsnr;
        } else {
            r.psnr_db = p.get<double>();
        }
        r.ssim = doc.at("ssim").get<double>();
        r.lpips = doc.at("lpips").get<double>();
        if (!doc.at("fid").is_null()) r.fid = doc.at("fid").get<double>();
        r.backends = doc.at("backends").get<std::map<std::string, std::string>>();
        r.config_hash = doc.at("config_hash").get<std::string>();
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed report: ") + e.what());
    }
    return r;
}

std::string per_image_csv(const std::vector<PerImageMetrics>& rows) {
    std::ostringstream os;
    os << "image,psnr_db,ssim,lpips\n";
    for (const auto& r : rows) {
        os << r.name << ',' << (std::isinf(r.psnr_db) ? std::string("inf") : format_double(r.psnr_db)) << ','
           << format_double(r.ssim) << ',' << format_double(r.lpips) << '\n';
    }
    return os.str();
}

}  // namespace suesr
