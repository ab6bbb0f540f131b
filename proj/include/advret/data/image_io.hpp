#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "advret/core/errors.hpp"
#include "advret/core/tensor.hpp"

namespace advret {

// 8-bit binary PPM (P6) in, [0,1] CHW float out, and back. PPM keeps the
// dataset format dependency-free and byte-deterministic.

template <class T>
Tensor<T> load_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P6") throw IoError("unsupported image format (expected P6 ppm): " + path.string());
    auto next_int = [&]() {
        // Skip whitespace and '#' comment lines.
        for (;;) {
            const int ch = in.peek();
            if (ch == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(ch)) {
                in.get();
            } else {
                break;
            }
        }
        long v = -1;
        in >> v;
        return v;
    };
    const long w = next_int(), h = next_int(), maxval = next_int();
    if (w <= 0 || h <= 0 || maxval != 255) throw IoError("malformed ppm header: " + path.string());
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw IoError("truncated image data: " + path.string());
    Tensor<T> img({3, static_cast<int>(h), static_cast<int>(w)});
    for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
            for (int ci = 0; ci < 3; ++ci)
                img[(static_cast<std::int64_t>(ci) * h + yy) * w + xx] =
                    static_cast<T>(raw[(static_cast<std::size_t>(yy) * w + xx) * 3 + ci] / 255.0);
    return img;
}

template <class T>
void save_ppm(const std::filesystem::path& path, const Tensor<T>& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("save_ppm: expected [3,h,w], got " + shape_str(img.dims()));
    const int h = img.dim(1), w = img.dim(2);
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image: " + path.string());
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
            for (int ci = 0; ci < 3; ++ci) {
                double v = static_cast<double>(img[(static_cast<std::int64_t>(ci) * h + yy) * w + xx]);
                v = std::clamp(v, 0.0, 1.0);
                raw[(static_cast<std::size_t>(yy) * w + xx) * 3 + ci] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("image write failed: " + path.string());
}

// Bilinear resample of a [3,h,w] image to a square side.
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& img, int side) {
    const int h = img.dim(1), w = img.dim(2);
    if (h == side && w == side) return img;
    Tensor<T> out({3, side, side});
    const double sy = static_cast<double>(h) / side, sx = static_cast<double>(w) / side;
    for (int yy = 0; yy < side; ++yy) {
        const double fy = std::min((yy + 0.5) * sy - 0.5, static_cast<double>(h - 1));
        const int y0 = std::max(0, static_cast<int>(std::floor(fy)));
        const int y1 = std::min(h - 1, y0 + 1);
        const double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int xx = 0; xx < side; ++xx) {
            const double fx = std::min((xx + 0.5) * sx - 0.5, static_cast<double>(w - 1));
            const int x0 = std::max(0, static_cast<int>(std::floor(fx)));
            const int x1 = std::min(w - 1, x0 + 1);
            const double wx = std::clamp(fx - x0, 0.0, 1.0);
            for (int ci = 0; ci < 3; ++ci) {
                auto px = [&](int y, int x) {
                    return static_cast<double>(img[(static_cast<std::int64_t>(ci) * h + y) * w + x]);
                };
                const double v = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) +
                                 wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
                out[(static_cast<std::int64_t>(ci) * side + yy) * side + xx] = static_cast<T>(v);
            }
        }
    }
    return out;
}

// Copies one [3,h,w] image into row n of a [N,3,h,w] batch.
template <class T>
void set_batch_image(Tensor<T>& batch, int n, const Tensor<T>& img) {
    std::copy_n(img.data(), img.size(), batch.data() + batch.offset4(n, 0, 0, 0));
}

template <class T>
Tensor<T> get_batch_image(const Tensor<T>& batch, int n) {
    Tensor<T> img({batch.c(), batch.h(), batch.w()});
    std::copy_n(batch.data() + batch.offset4(n, 0, 0, 0), img.size(), img.data());
    return img;
}

}  // namespace advret
