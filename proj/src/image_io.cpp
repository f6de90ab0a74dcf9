#include "suesr/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "suesr/errors.hpp"
#include "suesr/tensor_store.hpp"

namespace suesr {

namespace {

const std::vector<int> kPngParams = {cv::IMWRITE_PNG_COMPRESSION, 6};

std::string encode_mat(const cv::Mat& mat) {
    std::vector<unsigned char> buffer;
    if (!cv::imencode(".png", mat, buffer, kPngParams)) throw IoError("PNG encoding failed");
    return std::string(buffer.begin(), buffer.end());
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
    const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw IoError("cannot decode image '" + path.string() + "'");
    const int h = bgr.rows, w = bgr.cols;
    Tensor out({3, h, w});
    for (int y = 0; y < h; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = row[x][2 - c] / 255.0;
        }
    }
    return out;
}

RgbImage to_rgb8(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("expected 3 x H x W image, got " + shape_string(image.shape()));
    RgbImage out;
    out.height = image.dim(1);
    out.width = image.dim(2);
    out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
                out.pixels[(static_cast<std::size_t>(y) * out.width + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    return out;
}

Tensor from_rgb8(const RgbImage& image) {
    Tensor out({3, image.height, image.width});
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = image.pixels[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] / 255.0;
    return out;
}

std::string encode_png(const RgbImage& image) {
    cv::Mat bgr(image.height, image.width, CV_8UC3);
    for (int y = 0; y < image.height; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.width; ++x) {
            const std::size_t i = (static_cast<std::size_t>(y) * image.width + x) * 3;
            row[x] = cv::Vec3b(image.pixels[i + 2], image.pixels[i + 1], image.pixels[i]);
        }
    }
    return encode_mat(bgr);
}

std::string encode_png(const Tensor& image) { return encode_png(to_rgb8(image)); }

std::string encode_gray_png(const std::vector<std::uint8_t>& values, int width, int height) {
    if (values.size() != static_cast<std::size_t>(width) * height) throw ShapeError("gray image size mismatch");
    cv::Mat gray(height, width, CV_8UC1, const_cast<std::uint8_t*>(values.data()));
    return encode_mat(gray);
}

void write_png(const std::filesystem::path& path, const Tensor& image) { write_file_atomic(path, encode_png(image)); }

void write_png(const std::filesystem::path& path, const RgbImage& image) { write_file_atomic(path, encode_png(image)); }

}  // namespace suesr
