#ifndef SSMI_IMAGE_HPP
#define SSMI_IMAGE_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "ssmi/errors.hpp"

namespace ssmi {

// Unclamped real-valued grid, row-major with interleaved channels.
// Used for convolution outputs, gradients and momentum buffers.
struct Grid {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    Grid() = default;
    Grid(int w, int h, int c, double fill = 0.0);

    std::size_t index(int x, int y, int ch) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + ch;
    }
    double at(int x, int y, int ch = 0) const { return data[index(x, y, ch)]; }
    double& at(int x, int y, int ch = 0) { return data[index(x, y, ch)]; }

    bool same_shape(const Grid& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    bool operator==(const Grid&) const = default;
};

// Image with pixels kept in [0,1]; writes clamp. 1 or 3 channels,
// row-major rows of interleaved channel values.
class ImageBuffer {
public:
    ImageBuffer(int width, int height, int channels, double fill = 0.0);

    // Takes arbitrary reals and clamps them into range.
    static ImageBuffer from_data(int width, int height, int channels,
                                 std::vector<double> values);
    static ImageBuffer from_grid(const Grid& g);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t pixel_count() const {
        return static_cast<std::size_t>(width_) * height_;
    }
    std::size_t value_count() const { return data_.size(); }

    std::size_t index(int x, int y, int ch) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + ch;
    }
    double at(int x, int y, int ch = 0) const { return data_[index(x, y, ch)]; }
    void set(int x, int y, int ch, double v);

    std::span<const double> data() const { return data_; }
    Grid to_grid() const;

    bool same_shape(const ImageBuffer& o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }
    bool operator==(const ImageBuffer&) const = default;

private:
    int width_;
    int height_;
    int channels_;
    std::vector<double> data_;
};

// Corner-anchored rectangle with known function values at the four
// corners; f11=f(a1,b1), f12=f(a1,b2), f21=f(a2,b1), f22=f(a2,b2)
// where a is the horizontal and b the vertical coordinate.
struct CornerQuad {
    double a1, a2;
    double b1, b2;
    double f11, f12, f21, f22;

    CornerQuad(double a1, double a2, double b1, double b2,
               double f11, double f12, double f21, double f22);
};

// Square convolution kernel, taps indexed (row offset, col offset).
struct Kernel {
    int size = 1;
    std::vector<double> taps;

    Kernel() : taps(1, 0.0) {}
    Kernel(int k, std::vector<double> t);

    double at(int di, int dj) const {
        return taps[static_cast<std::size_t>(di) * size + dj];
    }
};

double clamp01(double v);

// Two-pass linear interpolation inside the quad: first along a at b1
// and b2, then along b. Exact at all four corners.
double bilinear_interpolate(const CornerQuad& q, double a, double b);

// Integer-factor bilinear upsampling with align-corners coordinate
// mapping src = dst*(srcDim-1)/(dstDim-1).
ImageBuffer upsample(const ImageBuffer& img, int factor);

// Valid-padding 2-D convolution; output dims floor((dim-k)/stride)+1.
// Multi-channel inputs convolve per channel with the same kernel and sum,
// so the output always has one channel. Output values are not clamped.
Grid conv2d(const Grid& input, const Kernel& kernel, int stride);
Grid conv2d(const ImageBuffer& input, const Kernel& kernel, int stride);

} // namespace ssmi

#endif
