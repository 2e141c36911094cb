#include "normalcast/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>

namespace ncast {

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
    if (img.rank() != 3) throw ShapeError("resize_bilinear: expects [H,W,C]");
    int H = img.dim(0), W = img.dim(1), C = img.dim(2);
    Tensor out({out_h, out_w, C});
    float sy = (float)H / out_h, sx = (float)W / out_w;
    for (int y = 0; y < out_h; ++y) {
        float fy = (y + 0.5f) * sy - 0.5f;
        int y0 = (int)std::floor(fy);
        float wy = fy - y0;
        int y0c = std::min(H - 1, std::max(0, y0));
        int y1c = std::min(H - 1, std::max(0, y0 + 1));
        for (int x = 0; x < out_w; ++x) {
            float fx = (x + 0.5f) * sx - 0.5f;
            int x0 = (int)std::floor(fx);
            float wx = fx - x0;
            int x0c = std::min(W - 1, std::max(0, x0));
            int x1c = std::min(W - 1, std::max(0, x0 + 1));
            for (int c = 0; c < C; ++c) {
                float v00 = img[((long long)y0c * W + x0c) * C + c];
                float v01 = img[((long long)y0c * W + x1c) * C + c];
                float v10 = img[((long long)y1c * W + x0c) * C + c];
                float v11 = img[((long long)y1c * W + x1c) * C + c];
                out[((long long)y * out_w + x) * C + c] =
                    (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    }
    return out;
}

Tensor resize_nearest(const Tensor& img, int out_h, int out_w) {
    if (img.rank() != 3) throw ShapeError("resize_nearest: expects [H,W,C]");
    int H = img.dim(0), W = img.dim(1), C = img.dim(2);
    Tensor out({out_h, out_w, C});
    for (int y = 0; y < out_h; ++y) {
        int sy = std::min(H - 1, (int)(((y + 0.5f) * H) / out_h));
        for (int x = 0; x < out_w; ++x) {
            int sx = std::min(W - 1, (int)(((x + 0.5f) * W) / out_w));
            for (int c = 0; c < C; ++c)
                out[((long long)y * out_w + x) * C + c] = img[((long long)sy * W + sx) * C + c];
        }
    }
    return out;
}

Mask resize_mask_nearest(const Mask& m, int out_h, int out_w) {
    int H = m.dim(0), W = m.dim(1);
    Mask out({out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        int sy = std::min(H - 1, (int)(((y + 0.5f) * H) / out_h));
        for (int x = 0; x < out_w; ++x) {
            int sx = std::min(W - 1, (int)(((x + 0.5f) * W) / out_w));
            out.set((long long)y * out_w + x, m.get((long long)sy * W + sx));
        }
    }
    return out;
}

void write_png_rgb8(const std::string& path, int h, int w, const std::vector<uint8_t>& rgb) {
    if ((long long)rgb.size() != (long long)h * w * 3) throw ShapeError("write_png_rgb8: payload size");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, (png_uint_32)w, (png_uint_32)h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows((size_t)h);
    for (int y = 0; y < h; ++y) rows[(size_t)y] = const_cast<png_bytep>(rgb.data() + (size_t)y * w * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

std::vector<uint8_t> normal_frame_to_rgb8(const Tensor& frame) {
    std::vector<uint8_t> out((size_t)frame.size());
    for (long long i = 0; i < frame.size(); ++i) {
        float v = (frame[i] + 1.0f) * 0.5f * 255.0f;
        out[(size_t)i] = (uint8_t)std::min(255.0f, std::max(0.0f, std::round(v)));
    }
    return out;
}

std::vector<uint8_t> rgb_frame_to_rgb8(const Tensor& frame) {
    std::vector<uint8_t> out((size_t)frame.size());
    for (long long i = 0; i < frame.size(); ++i) {
        float v = frame[i] * 255.0f;
        out[(size_t)i] = (uint8_t)std::min(255.0f, std::max(0.0f, std::round(v)));
    }
    return out;
}

}  // namespace ncast
