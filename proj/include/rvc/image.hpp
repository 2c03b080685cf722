#pragma once

// 8-bit grayscale raster plus PGM/PNG dumps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "rvc/error.hpp"

namespace rvc {

class GrayImage {
public:
    GrayImage() = default;
    GrayImage(int width, int height, std::uint8_t fill = 0)
        : width_(width), height_(height), pixels_(checked_size(width, height), fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return pixels_.size(); }

    bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width_ && v < height_; }

    std::uint8_t at(int u, int v) const { return pixels_[index(u, v)]; }
    std::uint8_t& at(int u, int v) { return pixels_[index(u, v)]; }

    /// Clamped read, used by filters near the border.
    std::uint8_t clamped(int u, int v) const {
        return at(std::clamp(u, 0, width_ - 1), std::clamp(v, 0, height_ - 1));
    }

    std::span<const std::uint8_t> pixels() const { return pixels_; }
    std::span<std::uint8_t> pixels() { return pixels_; }

    bool operator==(const GrayImage&) const = default;

private:
    static std::size_t checked_size(int w, int h) {
        require(w > 0 && h > 0, ErrorCode::InvalidArgument, "image dimensions must be positive");
        return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    }
    std::size_t index(int u, int v) const {
        return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(u);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> pixels_;
};

inline std::uint8_t to_u8(double value) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 255.0)));
}

/// Median of all pixel values via histogram.
inline double median_intensity(const GrayImage& img) {
    std::array<std::size_t, 256> hist{};
    for (auto p : img.pixels()) ++hist[p];
    const std::size_t half = img.size() / 2;
    std::size_t acc = 0;
    for (int i = 0; i < 256; ++i) {
        acc += hist[static_cast<std::size_t>(i)];
        if (acc > half) return i;
    }
    return 255;
}

namespace detail {

inline void sort2(std::uint8_t& a, std::uint8_t& b) {
    const std::uint8_t lo = std::min(a, b);
    b = std::max(a, b);
    a = lo;
}

/// Median of nine by a fixed exchange network.
inline std::uint8_t median9(std::array<std::uint8_t, 9> p) {
    sort2(p[1], p[2]); sort2(p[4], p[5]); sort2(p[7], p[8]);
    sort2(p[0], p[1]); sort2(p[3], p[4]); sort2(p[6], p[7]);
    sort2(p[1], p[2]); sort2(p[4], p[5]); sort2(p[7], p[8]);
    sort2(p[0], p[3]); sort2(p[5], p[8]); sort2(p[4], p[7]);
    sort2(p[3], p[6]); sort2(p[1], p[4]); sort2(p[2], p[5]);
    sort2(p[4], p[7]); sort2(p[4], p[2]); sort2(p[6], p[4]);
    sort2(p[4], p[2]);
    return p[4];
}

}  // namespace detail

inline std::uint8_t median3x3(const GrayImage& img, int u, int v) {
    std::array<std::uint8_t, 9> w{};
    int k = 0;
    for (int dv = -1; dv <= 1; ++dv)
        for (int du = -1; du <= 1; ++du) w[static_cast<std::size_t>(k++)] = img.clamped(u + du, v + dv);
    return detail::median9(w);
}

/// Column triples are sorted once per row and shared by the three windows
/// that contain them; the median of nine is then
/// med3(max of lows, med of mids, min of highs).
inline GrayImage median_filter3x3(const GrayImage& img) {
    const int W = img.width();
    const int H = img.height();
    GrayImage out(W, H);
    std::vector<std::uint8_t> lo(static_cast<std::size_t>(W) + 2), mid(lo.size()), hi(lo.size());
    for (int v = 0; v < H; ++v) {
        for (int u = -1; u <= W; ++u) {
            std::uint8_t a = img.clamped(u, v - 1), b = img.clamped(u, v), c = img.clamped(u, v + 1);
            detail::sort2(a, b);
            detail::sort2(b, c);
            detail::sort2(a, b);
            const auto i = static_cast<std::size_t>(u + 1);
            lo[i] = a;
            mid[i] = b;
            hi[i] = c;
        }
        for (int u = 0; u < W; ++u) {
            const auto i = static_cast<std::size_t>(u);
            const std::uint8_t l = std::max({lo[i], lo[i + 1], lo[i + 2]});
            const std::uint8_t h = std::min({hi[i], hi[i + 1], hi[i + 2]});
            std::uint8_t m0 = mid[i], m1 = mid[i + 1], m2 = mid[i + 2];
            detail::sort2(m0, m1);
            detail::sort2(m1, m2);
            detail::sort2(m0, m1);
            std::uint8_t x = l, y = m1, z = h;
            detail::sort2(x, y);
            detail::sort2(y, z);
            detail::sort2(x, y);
            out.at(u, v) = y;
        }
    }
    return out;
}

inline void write_pgm(const GrayImage& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::InvalidArgument, "cannot open " + path);
    out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels().data()), static_cast<std::streamsize>(img.size()));
}

inline GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::InvalidArgument, "cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    require(magic == "P5" && maxval == 255, ErrorCode::InvalidArgument, path + " is not an 8-bit binary PGM");
    in.get();
    GrayImage img(w, h);
    in.read(reinterpret_cast<char*>(img.pixels().data()), static_cast<std::streamsize>(img.size()));
    require(static_cast<bool>(in), ErrorCode::InvalidArgument, path + " is truncated");
    return img;
}

inline void write_png(const GrayImage& img, const std::string& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    require(fp != nullptr, ErrorCode::InvalidArgument, "cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, ErrorCode::InvalidArgument, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (info == nullptr || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::InvalidArgument, "libpng failed writing " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int v = 0; v < img.height(); ++v) {
        auto row = const_cast<png_bytep>(img.pixels().data() + static_cast<std::size_t>(v) * img.width());
        png_write_row(png, row);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace rvc
