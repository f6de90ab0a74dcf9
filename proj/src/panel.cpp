#include "suesr/panel.hpp"

#include <cmath>
#include <cstdio>

#include <opencv2/imgproc.hpp>

#include "suesr/errors.hpp"
#include "suesr/image_io.hpp"
#include "suesr/metrics.hpp"

namespace suesr {

namespace {

void blit(cv::Mat& canvas, const RgbImage& img, int x0, int y0) {
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const auto p = img.pixel(x, y);
            auto& dst = canvas.at<cv::Vec3b>(y0 + y, x0 + x);
            dst = cv::Vec3b(p[0], p[1], p[2]);
        }
}

RgbImage replicate(const RgbImage& img, int factor) {
    RgbImage out;
    out.width = img.width * factor;
    out.height = img.height * factor;
    out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const auto p = img.pixel(x / factor, y / factor);
            const std::size_t i = (static_cast<std::size_t>(y) * out.width + x) * 3;
            out.pixels[i] = p[0];
            out.pixels[i + 1] = p[1];
            out.pixels[i + 2] = p[2];
        }
    return out;
}

}  // namespace

std::string panel_caption(double psnr_db, double ssim_value) {
    char buf[96];
    if (std::isinf(psnr_db)) {
        std::snprintf(buf, sizeof buf, "PSNR inf dB  SSIM %.3f", ssim_value);
    } else {
        std::snprintf(buf, sizeof buf, "PSNR %.2f dB  SSIM %.3f", psnr_db, ssim_value);
    }
    return buf;
}

RgbImage emit_panel(const Tensor& lr, const Tensor& sr, const Tensor& hr, const std::optional<RgbImage>& heatmap) {
    if (lr.empty()) throw InputError("panel is missing the LR pane");
    if (sr.empty()) throw InputError("panel is missing the SR pane");
    if (hr.empty()) throw InputError("panel is missing the HR pane");
    if (!sr.same_shape(hr)) throw ShapeError("SR and HR panes differ in shape");
    const int h = sr.dim(1), w = sr.dim(2);
    if (lr.rank() != 3 || h % lr.dim(1) != 0 || h / lr.dim(1) * lr.dim(2) != w) {
        throw ShapeError("LR pane " + shape_string(lr.shape()) + " is not an integer downscale of " +
                         shape_string(sr.shape()));
    }
    if (heatmap && (heatmap->width != w || heatmap->height != h)) throw ShapeError("heatmap pane size mismatch");

    std::vector<RgbImage> panes;
    panes.push_back(replicate(to_rgb8(lr), h / lr.dim(1)));
    panes.push_back(to_rgb8(sr));
    panes.push_back(to_rgb8(hr));
    if (heatmap) panes.push_back(*heatmap);

    const int n = static_cast<int>(panes.size());
    const int width = n * w + (n + 1) * kPanelGutter;
    const int height = h + 2 * kPanelGutter + kPanelCaptionHeight;
    cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    for (int i = 0; i < n; ++i) blit(canvas, panes[static_cast<std::size_t>(i)], kPanelGutter + i * (w + kPanelGutter), kPanelGutter);

    const std::string caption = panel_caption(psnr(sr, hr), ssim(sr, hr));
    cv::putText(canvas, caption, cv::Point(kPanelGutter, h + kPanelGutter + kPanelCaptionHeight - 8),
                cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_8);

    RgbImage out;
    out.width = width;
    out.height = height;
    out.pixels.assign(canvas.data, canvas.data + canvas.total() * 3);
    return out;
}

}  // namespace suesr
