#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tabrec/tensor.hpp"

namespace tabrec {

// H x W x Ch float raster, values in [0,1], row-major with channels innermost.
struct RasterImage {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> px;

    RasterImage() = default;
    RasterImage(int h, int w, int ch, float fill = 0.0f)
        : height(h), width(w), channels(ch), px(static_cast<size_t>(h) * w * ch, fill) {}

    float& at(int y, int x, int c) { return px[(static_cast<size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const { return px[(static_cast<size_t>(y) * width + x) * channels + c]; }

    void fill(float r, float g, float b) {
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                at(y, x, 0) = r;
                if (channels > 1) at(y, x, 1) = g;
                if (channels > 2) at(y, x, 2) = b;
            }
    }
};

// Channels-first tensor view (Ch, H, W), the layout the conv stack expects.
inline Tensor image_to_tensor(const RasterImage& img) {
    Tensor t = Tensor::zeros({img.channels, img.height, img.width});
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                t.data()[(static_cast<int64_t>(c) * img.height + y) * img.width + x] = img.at(y, x, c);
    return t;
}

inline RasterImage tensor_to_image(const Tensor& t) {
    if (t.shape().size() != 3) throw std::invalid_argument("tensor_to_image: expected (Ch, H, W), got " + shape_str(t.shape()));
    RasterImage img(t.shape()[1], t.shape()[2], t.shape()[0]);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                img.at(y, x, c) = std::clamp(t.data()[(static_cast<int64_t>(c) * img.height + y) * img.width + x], 0.0f, 1.0f);
    return img;
}

// Binary PPM (P6), 8 bits per channel. Grayscale images are expanded to RGB
// on write and collapsed back on read when requested.
inline void write_ppm(const RasterImage& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = img.at(y, x, std::min(c, img.channels - 1));
                row[static_cast<size_t>(x) * 3 + c] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw std::runtime_error("write_ppm: write failed for " + path);
}

inline RasterImage read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw std::runtime_error("read_ppm: " + path + " is not a binary PPM");
    int w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (maxval != 255) throw std::runtime_error("read_ppm: only 8-bit PPM supported");
    is.get();  // single whitespace after header
    RasterImage img(h, w, 3);
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!is) throw std::runtime_error("read_ppm: truncated file " + path);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(row[static_cast<size_t>(x) * 3 + c]) / 255.0f;
    }
    return img;
}

// Bilinear sample at fractional source coordinates, clamped at borders.
inline float sample_bilinear(const RasterImage& img, float y, float x, int c) {
    const float yc = std::clamp(y, 0.0f, static_cast<float>(img.height - 1));
    const float xc = std::clamp(x, 0.0f, static_cast<float>(img.width - 1));
    const int y0 = static_cast<int>(yc), x0 = static_cast<int>(xc);
    const int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
    const float fy = yc - static_cast<float>(y0), fx = xc - static_cast<float>(x0);
    return img.at(y0, x0, c) * (1 - fy) * (1 - fx) + img.at(y0, x1, c) * (1 - fy) * fx +
           img.at(y1, x0, c) * fy * (1 - fx) + img.at(y1, x1, c) * fy * fx;
}

struct CropResult {
    RasterImage image;
    bool clamped = false;  // source box reached outside the image
    bool empty = false;    // nothing left after clamping; output is blank
};

inline RasterImage resize_bilinear(const RasterImage& img, int out_h, int out_w) {
    RasterImage out(out_h, out_w, img.channels);
    const float sy = static_cast<float>(img.height) / static_cast<float>(out_h);
    const float sx = static_cast<float>(img.width) / static_cast<float>(out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(y, x, c) = sample_bilinear(img, (static_cast<float>(y) + 0.5f) * sy - 0.5f,
                                                  (static_cast<float>(x) + 0.5f) * sx - 0.5f, c);
    return out;
}

// Axis-aligned crop, aspect-preserving rescale, centered on a white square
// with background padding. Both content training and inference cut cells
// through this one path so crops always look the same to the model.
inline CropResult letterbox_crop(const RasterImage& img, float x_min, float y_min, float x_max, float y_max,
                                 int target) {
    CropResult res;
    const int cx0 = std::clamp(static_cast<int>(std::floor(x_min)), 0, img.width);
    const int cy0 = std::clamp(static_cast<int>(std::floor(y_min)), 0, img.height);
    const int cx1 = std::clamp(static_cast<int>(std::ceil(x_max)), 0, img.width);
    const int cy1 = std::clamp(static_cast<int>(std::ceil(y_max)), 0, img.height);
    res.clamped = cx0 != static_cast<int>(std::floor(x_min)) || cy0 != static_cast<int>(std::floor(y_min)) ||
                  cx1 != static_cast<int>(std::ceil(x_max)) || cy1 != static_cast<int>(std::ceil(y_max));
    res.image = RasterImage(target, target, img.channels, 1.0f);
    if (cx1 <= cx0 || cy1 <= cy0) {
        res.empty = true;
        return res;
    }
    RasterImage cut(cy1 - cy0, cx1 - cx0, img.channels);
    for (int y = 0; y < cut.height; ++y)
        for (int x = 0; x < cut.width; ++x)
            for (int c = 0; c < img.channels; ++c) cut.at(y, x, c) = img.at(cy0 + y, cx0 + x, c);
    const float scale = std::min(static_cast<float>(target) / static_cast<float>(cut.width),
                                 static_cast<float>(target) / static_cast<float>(cut.height));
    const int rw = std::max(1, static_cast<int>(std::lround(static_cast<float>(cut.width) * scale)));
    const int rh = std::max(1, static_cast<int>(std::lround(static_cast<float>(cut.height) * scale)));
    RasterImage resized = resize_bilinear(cut, rh, rw);
    const int oy = (target - rh) / 2, ox = (target - rw) / 2;
    for (int y = 0; y < rh; ++y)
        for (int x = 0; x < rw; ++x)
            for (int c = 0; c < img.channels; ++c) res.image.at(oy + y, ox + x, c) = resized.at(y, x, c);
    return res;
}

}  // namespace tabrec
