#include "pmdg/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

#include <jpeglib.h>
#include <png.h>

namespace pmdg {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool has_suffix(const std::string& s, const std::string& suffix) {
    if (s.size() < suffix.size()) return false;
    std::string tail = s.substr(s.size() - suffix.size());
    std::transform(tail.begin(), tail.end(), tail.begin(), [](unsigned char c) { return std::tolower(c); });
    return tail == suffix;
}

Tensor rgb_rows_to_tensor(const std::vector<unsigned char>& rgb, int h, int w) {
    Tensor img({3, h, w});
    const double inv = 1.0 / 255.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::size_t off = (static_cast<std::size_t>(y) * w + x) * 3;
            img.at(0, y, x) = rgb[off] * inv;
            img.at(1, y, x) = rgb[off + 1] * inv;
            img.at(2, y, x) = rgb[off + 2] * inv;
        }
    }
    return img;
}

Tensor read_png_file(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open image file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png init failed: " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png init failed: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("undecodable PNG file: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color_type = png_get_color_type(png, info);
    int bit_depth = png_get_bit_depth(png, info);

    // normalize everything to 8-bit RGB
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<unsigned char> rgb(static_cast<std::size_t>(h) * w * 3);
    std::vector<png_bytep> rows(h);
    std::size_t rowbytes = png_get_rowbytes(png, info);
    if (rowbytes != static_cast<std::size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unexpected PNG row layout: " + path);
    }
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = rgb.data() + static_cast<std::size_t>(y) * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return rgb_rows_to_tensor(rgb, static_cast<int>(h), static_cast<int>(w));
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

Tensor read_jpeg_file(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open image file: " + path);

    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("undecodable JPEG file: " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    int w = static_cast<int>(cinfo.output_width);
    int h = static_cast<int>(cinfo.output_height);
    std::vector<unsigned char> rgb(static_cast<std::size_t>(h) * w * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return rgb_rows_to_tensor(rgb, h, w);
}

}  // namespace

Tensor read_image(const std::string& path) {
    if (has_suffix(path, ".png")) return read_png_file(path);
    if (has_suffix(path, ".jpg") || has_suffix(path, ".jpeg")) return read_jpeg_file(path);
    throw std::runtime_error("unsupported image extension (expect .png/.jpg): " + path);
}

void write_png(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3) {
        throw std::invalid_argument("write_png: expects [3,h,w] tensor");
    }
    int h = image.dim(1), w = image.dim(2);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png init failed: " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png init failed: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    // rows are written one at a time from the same buffer
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = std::min(1.0, std::max(0.0, image.at(c, y, x)));
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    if (image.ndim() != 3) throw std::invalid_argument("resize_bilinear: expects [c,h,w]");
    int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h == out_h && w == out_w) return image;
    Tensor out({c, out_h, out_w});
    double sy = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
    double sx = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
    for (int ci = 0; ci < c; ++ci) {
        for (int y = 0; y < out_h; ++y) {
            double fy = y * sy;
            int y0 = static_cast<int>(fy);
            int y1 = std::min(y0 + 1, h - 1);
            double wy = fy - y0;
            for (int x = 0; x < out_w; ++x) {
                double fx = x * sx;
                int x0 = static_cast<int>(fx);
                int x1 = std::min(x0 + 1, w - 1);
                double wx = fx - x0;
                out.at(ci, y, x) = (1 - wy) * ((1 - wx) * image.at(ci, y0, x0) + wx * image.at(ci, y0, x1)) +
                                   wy * ((1 - wx) * image.at(ci, y1, x0) + wx * image.at(ci, y1, x1));
            }
        }
    }
    return out;
}

}  // namespace pmdg
