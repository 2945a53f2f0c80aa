#include "ssmi/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ssmi {

namespace {

void check_dims(int width, int height, int channels) {
    if (width < 1 || height < 1)
        throw DomainError("image dimensions must be at least 1x1, got " +
                          std::to_string(width) + "x" + std::to_string(height));
    if (channels != 1 && channels != 3)
        throw DomainError("channel count must be 1 or 3, got " +
                          std::to_string(channels));
}

} // namespace

double clamp01(double v) {
    return std::clamp(v, 0.0, 1.0);
}

Grid::Grid(int w, int h, int c, double fill)
    : width(w), height(h), channels(c) {
    if (w < 1 || h < 1 || c < 1)
        throw DomainError("grid dimensions must be positive");
    data.assign(static_cast<std::size_t>(w) * h * c, fill);
}

ImageBuffer::ImageBuffer(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
    check_dims(width, height, channels);
    data_.assign(static_cast<std::size_t>(width) * height * channels,
                 clamp01(fill));
}

ImageBuffer ImageBuffer::from_data(int width, int height, int channels,
                                   std::vector<double> values) {
    check_dims(width, height, channels);
    const std::size_t expected =
        static_cast<std::size_t>(width) * height * channels;
    if (values.size() != expected)
        throw DomainError("pixel data length " + std::to_string(values.size()) +
                          " does not match " + std::to_string(expected));
    for (double& v : values) v = clamp01(v);
    ImageBuffer img(width, height, channels);
    img.data_ = std::move(values);
    return img;
}

ImageBuffer ImageBuffer::from_grid(const Grid& g) {
    return from_data(g.width, g.height, g.channels, g.data);
}

void ImageBuffer::set(int x, int y, int ch, double v) {
    data_[index(x, y, ch)] = clamp01(v);
}

Grid ImageBuffer::to_grid() const {
    Grid g(width_, height_, channels_);
    g.data = data_;
    return g;
}

CornerQuad::CornerQuad(double a1_, double a2_, double b1_, double b2_,
                       double f11_, double f12_, double f21_, double f22_)
    : a1(a1_), a2(a2_), b1(b1_), b2(b2_),
      f11(f11_), f12(f12_), f21(f21_), f22(f22_) {
    if (!(a1 < a2) || !(b1 < b2))
        throw DomainError("degenerate quad: need a1 < a2 and b1 < b2");
}

Kernel::Kernel(int k, std::vector<double> t) : size(k), taps(std::move(t)) {
    if (k < 1) throw DomainError("kernel size must be positive");
    if (taps.size() != static_cast<std::size_t>(k) * k)
        throw DomainError("kernel tap count does not match size " +
                          std::to_string(k));
}

double bilinear_interpolate(const CornerQuad& q, double a, double b) {
    if (a < q.a1 || a > q.a2 || b < q.b1 || b > q.b2)
        throw DomainError("interpolation point outside quad");
    const double da = q.a2 - q.a1;
    const double fa_b1 = (q.a2 - a) / da * q.f11 + (a - q.a1) / da * q.f21;
    const double fa_b2 = (q.a2 - a) / da * q.f12 + (a - q.a1) / da * q.f22;
    const double db = q.b2 - q.b1;
    return (q.b2 - b) / db * fa_b1 + (b - q.b1) / db * fa_b2;
}

ImageBuffer upsample(const ImageBuffer& img, int factor) {
    if (factor < 1) throw DomainError("upsample factor must be >= 1");
    const int ow = img.width() * factor;
    const int oh = img.height() * factor;
    ImageBuffer out(ow, oh, img.channels());

    // align-corners source coordinate for one axis
    auto src_coord = [](int dst, int dst_dim, int src_dim) {
        if (dst_dim == 1 || src_dim == 1) return 0.0;
        return static_cast<double>(dst) * (src_dim - 1) / (dst_dim - 1);
    };

    for (int y = 0; y < oh; ++y) {
        const double sy = src_coord(y, oh, img.height());
        int y0 = static_cast<int>(std::floor(sy));
        y0 = std::min(y0, img.height() - 1);
        const int y1 = std::min(y0 + 1, img.height() - 1);
        const double fy = sy - y0;
        for (int x = 0; x < ow; ++x) {
            const double sx = src_coord(x, ow, img.width());
            int x0 = static_cast<int>(std::floor(sx));
            x0 = std::min(x0, img.width() - 1);
            const int x1 = std::min(x0 + 1, img.width() - 1);
            const double fx = sx - x0;
            for (int c = 0; c < img.channels(); ++c) {
                const double top = (1.0 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
                const double bot = (1.0 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
                out.set(x, y, c, (1.0 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

Grid conv2d(const Grid& input, const Kernel& kernel, int stride) {
    if (stride < 1) throw DomainError("stride must be positive");
    const int k = kernel.size;
    if (k > input.width || k > input.height)
        throw DomainError("kernel size " + std::to_string(k) +
                          " exceeds input " + std::to_string(input.width) + "x" +
                          std::to_string(input.height));
    const int ow = (input.width - k) / stride + 1;
    const int oh = (input.height - k) / stride + 1;
    Grid out(ow, oh, 1);
    for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
            double acc = 0.0;
            for (int di = 0; di < k; ++di)
                for (int dj = 0; dj < k; ++dj)
                    for (int c = 0; c < input.channels; ++c)
                        acc += input.at(stride * j + dj, stride * i + di, c) *
                               kernel.at(di, dj);
            out.at(j, i) = acc;
        }
    }
    return out;
}

Grid conv2d(const ImageBuffer& input, const Kernel& kernel, int stride) {
    return conv2d(input.to_grid(), kernel, stride);
}

} // namespace ssmi
