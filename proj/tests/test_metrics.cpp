#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "suesr/errors.hpp"
#include "suesr/features.hpp"
#include "suesr/metrics.hpp"

using namespace suesr;

namespace {

GaussianFit fit_1d(double mean, double var) {
    GaussianFit f;
    f.mean = Eigen::VectorXd::Constant(1, mean);
    f.covariance = Eigen::MatrixXd::Constant(1, 1, var);
    return f;
}

/// LPIPS-style distance recomputed from its definition with plain loops.
double reference_lpips(const Tensor& fa, const Tensor& fb) {
    const int c = fa.dim(1), h = fa.dim(2), w = fa.dim(3);
    double total = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double na = 0, nb = 0;
            for (int k = 0; k < c; ++k) {
                na += fa.at(0, k, y, x) * fa.at(0, k, y, x);
                nb += fb.at(0, k, y, x) * fb.at(0, k, y, x);
            }
            na = std::sqrt(na) + 1e-10;
            nb = std::sqrt(nb) + 1e-10;
            for (int k = 0; k < c; ++k) {
                const double d = fa.at(0, k, y, x) / na - fb.at(0, k, y, x) / nb;
                total += d * d;
            }
        }
    return total / (h * w);
}

}  // namespace

TEST_CASE("psnr") {
    const Tensor a = oracle::random_tensor({3, 16, 16}, 1, 0.0, 0.8);
    CHECK(std::isinf(psnr(a, a)));
    Tensor b = a;
    for (double& v : b.values()) v += 0.1;
    CHECK(std::abs(psnr(a, b) - 20.0) < 1e-6);
    Tensor a2 = a, b2 = b;
    for (double& v : a2.values()) v += 0.05;
    for (double& v : b2.values()) v += 0.05;
    CHECK(psnr(a2, b2) == doctest::Approx(psnr(a, b)).epsilon(1e-9));
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK_THROWS_AS(psnr(a, Tensor({3, 16, 15})), ShapeError);
    CHECK_THROWS_AS(psnr(a, b, 0.0), InputError);
}

TEST_CASE("ssim") {
    const Tensor a = oracle::random_tensor({3, 24, 24}, 2);
    const Tensor b = oracle::random_tensor({3, 24, 24}, 3);
    CHECK(std::abs(ssim(a, a) - 1.0) <= 1e-9);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    const double v = ssim(a, b);
    CHECK((v >= -1.0 && v <= 1.0));
    const double c1 = 0.01 * 0.01;
    CHECK(std::abs(ssim(Tensor({3, 16, 16}, 0.0), Tensor({3, 16, 16}, 1.0)) - c1 / (1.0 + c1)) <= 1e-7);
    Tensor inv = a;
    for (double& x : inv.values()) x = 1.0 - x;
    const double anti = ssim(a, inv);
    CHECK((anti >= -1.0 && anti < 0.0));
    CHECK_THROWS_AS(ssim(Tensor({3, 10, 10}), Tensor({3, 10, 10})), SizeError);
}

TEST_CASE("lpips distance") {
    const auto fx = make_random_conv_extractor(1234);
    const Tensor a = oracle::random_tensor({3, 16, 16}, 4);
    const Tensor b = oracle::random_tensor({3, 16, 16}, 5);
    CHECK(lpips_distance(a, a, *fx) == 0.0);
    CHECK(lpips_distance(a, b, *fx) == doctest::Approx(lpips_distance(b, a, *fx)).epsilon(1e-12));
    const double want = reference_lpips(fx->extract(as_batch(a)), fx->extract(as_batch(b)));
    CHECK(lpips_distance(a, b, *fx) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("gaussian fit") {
    std::vector<Eigen::VectorXd> two = {Eigen::VectorXd::Constant(1, 0.0), Eigen::VectorXd::Constant(1, 2.0)};
    const auto f = gaussian_fit(two);
    CHECK(f.mean[0] == 1.0);
    CHECK(f.covariance(0, 0) == 2.0);
    std::vector<Eigen::VectorXd> same(4, Eigen::Vector3d(1, 2, 3));
    CHECK(gaussian_fit(same).covariance.isZero(0.0));
    Rng rng(5);
    std::vector<Eigen::VectorXd> rnd;
    for (int i = 0; i < 9; ++i) {
        Eigen::VectorXd v(4);
        for (int k = 0; k < 4; ++k) v[k] = rng.normal();
        rnd.push_back(v);
    }
    const auto fr = gaussian_fit(rnd);
    CHECK((fr.covariance - fr.covariance.transpose()).norm() == 0.0);
    std::vector<Eigen::VectorXd> one = {Eigen::VectorXd::Zero(2)};
    CHECK_THROWS_AS(gaussian_fit(one), InputError);
}

TEST_CASE("fid closed forms") {
    CHECK(fid(fit_1d(1.0, 4.0), fit_1d(1.0, 4.0)) == 0.0);
    for (auto [m1, v1, m2, v2] : {std::tuple{0.0, 1.0, 1.0, 4.0}, std::tuple{2.5, 0.25, -1.0, 9.0},
                                  std::tuple{0.3, 2.0, 0.3, 2.0000001}}) {
        const double want = (m1 - m2) * (m1 - m2) + (std::sqrt(v1) - std::sqrt(v2)) * (std::sqrt(v1) - std::sqrt(v2));
        CHECK(std::abs(fid(fit_1d(m1, v1), fit_1d(m2, v2)) - want) <= 1e-5);
    }

    GaussianFit a, b;
    a.mean = Eigen::Vector3d(1, 0, 2);
    b.mean = Eigen::Vector3d(0, 1, 2);
    a.covariance = Eigen::Vector3d(1.0, 4.0, 0.5).asDiagonal();
    b.covariance = Eigen::Vector3d(9.0, 1.0, 0.5).asDiagonal();
    const double want = 2.0 + std::pow(1 - 3, 2) + std::pow(2 - 1, 2) + 0.0;
    CHECK(std::abs(fid(a, b) - want) <= 1e-9);
    CHECK(fid(a, b) == doctest::Approx(fid(b, a)).epsilon(1e-12));

    Rng rng(3);
    std::vector<Eigen::VectorXd> xs, ys;
    for (int i = 0; i < 12; ++i) {
        Eigen::VectorXd x(5), y(5);
        for (int k = 0; k < 5; ++k) {
            x[k] = rng.normal();
            y[k] = 0.5 + 2.0 * rng.normal();
        }
        xs.push_back(x);
        ys.push_back(y);
    }
    const auto fx = gaussian_fit(xs), fy = gaussian_fit(ys);
    CHECK(fid(fx, fx) == 0.0);
    CHECK(fid(fx, fy) > 0.0);
    CHECK(fid(fx, fy) == doctest::Approx(fid(fy, fx)).epsilon(1e-8));

    // rank-deficient covariances (fewer samples than dimensions) stay finite
    std::vector<Eigen::VectorXd> few(xs.begin(), xs.begin() + 3);
    CHECK(std::isfinite(fid(gaussian_fit(few), fy)));
    CHECK_THROWS_AS(fid(fit_1d(0, 1), fx), ShapeError);
}

TEST_CASE("evaluate_split aggregates and serializes") {
    const auto fx = make_random_conv_extractor(1234);
    const Tensor hr = oracle::random_tensor({3, 16, 16}, 7);
    SUBCASE("single identical pair") {
        const std::vector<Tensor> outs = {hr}, refs = {hr};
        const auto r = evaluate_split(outs, refs, *fx, "test").report;
        CHECK(std::isinf(r.psnr_db));
        CHECK(r.ssim == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(r.lpips == 0.0);
        CHECK_FALSE(r.fid.has_value());
        CHECK(r.n_images == 1);
    }
    SUBCASE("arithmetic means") {
        Tensor a = hr, b = hr;
        for (double& v : a.values()) v += 0.1;  // 20 dB
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += (i % 2 ? 1 : -1) * std::sqrt(1e-3);  // 30 dB
        const std::vector<Tensor> outs = {a, b}, refs = {hr, hr};
        const auto res = evaluate_split(outs, refs, *fx, "val");
        CHECK(res.report.psnr_db == doctest::Approx(25.0).epsilon(1e-9));
        const double ssim_mean = (ssim(a, hr) + ssim(b, hr)) / 2;
        const double lpips_mean = (lpips_distance(a, hr, *fx) + lpips_distance(b, hr, *fx)) / 2;
        CHECK(res.report.ssim == doctest::Approx(ssim_mean).epsilon(1e-12));
        CHECK(res.report.lpips == doctest::Approx(lpips_mean).epsilon(1e-12));
        REQUIRE(res.report.fid.has_value());
        CHECK(*res.report.fid >= 0.0);
        CHECK(res.per_image.size() == 2);
    }
    SUBCASE("report JSON round trip") {
        MetricReport r;
        r.split = "test";
        r.n_images = 3;
        r.psnr_db = kInfinitePsnr;
        r.ssim = 0.123456789012345678;
        r.lpips = 1.0 / 3.0;
        r.fid = 2.0 / 7.0;
        r.backends = {{"features", "random-conv:1234"}, {"inference", "deterministic"}};
        r.config_hash = "0123456789abcdef";
        const std::string text = report_to_json(r);
        CHECK(text.find("\"inf\"") != std::string::npos);
        const MetricReport back = report_from_json(text);
        CHECK(std::isinf(back.psnr_db));
        CHECK(back.ssim == r.ssim);
        CHECK(back.lpips == r.lpips);
        CHECK(back.fid == r.fid);
        CHECK(back.backends == r.backends);
        CHECK(back.config_hash == r.config_hash);
        CHECK(report_to_json(back) == text);
        r.psnr_db = 31.25;
        r.fid.reset();
        CHECK(report_to_json(report_from_json(report_to_json(r))) == report_to_json(r));
    }
    const std::vector<Tensor> one = {hr}, none = {};
    CHECK_THROWS_AS(evaluate_split(one, none, *fx, "x"), ShapeError);
}
