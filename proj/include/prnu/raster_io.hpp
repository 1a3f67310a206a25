#ifndef PRNU_RASTER_IO_HPP
#define PRNU_RASTER_IO_HPP

// Grayscale raster decoding (PNG, TIFF, PGM) into ImagePlane, and PNG/PGM
// writers for synthetic corpora. Everything lands on the [0, 255] scale.

#include <png.h>
#include <tiffio.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "prnu/core.hpp"

namespace prnu {

enum class RasterFormat { png, tiff, pgm, unknown };

namespace detail {

inline double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw Error(ErrorKind::io, "cannot open " + path.string());
    return f;
}

// Collapses interleaved samples (1..4 channels, alpha ignored) into luminance.
inline ImagePlane samples_to_plane(std::size_t width, std::size_t height, std::size_t channels,
                                   double full_scale, const std::vector<double>& samples) {
    ImagePlane plane(width, height);
    const double scale = 255.0 / full_scale;
    for (std::size_t i = 0; i < width * height; ++i) {
        const double* px = &samples[i * channels];
        double value = 0.0;
        if (channels >= 3) {
            value = luminance(px[0], px[1], px[2]);
        } else {
            value = px[0];
        }
        plane[i] = value * scale;
    }
    return plane;
}

inline ImagePlane read_png(const std::filesystem::path& path) {
    FilePtr file = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error(ErrorKind::format, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error(ErrorKind::format, "libpng init failed");
    }
    std::vector<double> samples;
    png_uint_32 width = 0, height = 0;
    int bit_depth = 0, channels = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::format, "corrupt PNG " + path.string());
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (bit_depth < 8) bit_depth = 8;
    if (bit_depth == 16) png_set_swap(png);  // host little-endian 16-bit samples
    png_read_update_info(png, info);
    channels = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> buffer(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 r = 0; r < height; ++r) rows[r] = buffer.data() + r * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const std::size_t n = static_cast<std::size_t>(width) * height * channels;
    samples.resize(n);
    if (bit_depth == 16) {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t v = 0;
            std::memcpy(&v, buffer.data() + 2 * i, 2);
            samples[i] = v;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) samples[i] = buffer[i];
    }
    return samples_to_plane(width, height, channels, bit_depth == 16 ? 65535.0 : 255.0, samples);
}

inline ImagePlane read_tiff(const std::filesystem::path& path) {
    TIFFSetWarningHandler(nullptr);
    std::unique_ptr<TIFF, void (*)(TIFF*)> tif(TIFFOpen(path.c_str(), "r"), TIFFClose);
    if (!tif) throw Error(ErrorKind::format, "cannot decode TIFF " + path.string());
    std::uint32_t width = 0, height = 0;
    std::uint16_t bits = 8, spp = 1, planar = PLANARCONFIG_CONTIG, format = SAMPLEFORMAT_UINT;
    TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &width);
    TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &height);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_BITSPERSAMPLE, &bits);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &spp);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_PLANARCONFIG, &planar);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLEFORMAT, &format);
    if ((bits != 8 && bits != 16) || format != SAMPLEFORMAT_UINT || planar != PLANARCONFIG_CONTIG ||
        spp < 1 || spp > 4) {
        throw Error(ErrorKind::format, "unsupported TIFF layout in " + path.string());
    }
    std::vector<unsigned char> line(TIFFScanlineSize(tif.get()));
    std::vector<double> samples(static_cast<std::size_t>(width) * height * spp);
    for (std::uint32_t r = 0; r < height; ++r) {
        if (TIFFReadScanline(tif.get(), line.data(), r) < 0) {
            throw Error(ErrorKind::format, "TIFF scanline read failed in " + path.string());
        }
        double* out = &samples[static_cast<std::size_t>(r) * width * spp];
        for (std::size_t i = 0; i < static_cast<std::size_t>(width) * spp; ++i) {
            if (bits == 16) {
                std::uint16_t v = 0;
                std::memcpy(&v, line.data() + 2 * i, 2);
                out[i] = v;
            } else {
                out[i] = line[i];
            }
        }
    }
    return samples_to_plane(width, height, spp, bits == 16 ? 65535.0 : 255.0, samples);
}

inline void skip_pnm_space(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string comment;
            std::getline(in, comment);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

inline ImagePlane read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P5" && magic != "P2") throw Error(ErrorKind::format, "not a PGM: " + path.string());
    std::size_t width = 0, height = 0;
    unsigned maxval = 0;
    skip_pnm_space(in);
    in >> width;
    skip_pnm_space(in);
    in >> height;
    skip_pnm_space(in);
    in >> maxval;
    if (!in || width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
        throw Error(ErrorKind::format, "bad PGM header in " + path.string());
    }
    std::vector<double> samples(width * height);
    if (magic == "P2") {
        for (auto& s : samples) {
            unsigned v = 0;
            if (!(in >> v)) throw Error(ErrorKind::format, "truncated PGM " + path.string());
            s = v;
        }
    } else {
        in.get();  // single whitespace after maxval
        const std::size_t bytes_per = maxval > 255 ? 2 : 1;
        std::vector<unsigned char> raw(samples.size() * bytes_per);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
            throw Error(ErrorKind::format, "truncated PGM " + path.string());
        }
        for (std::size_t i = 0; i < samples.size(); ++i) {
            samples[i] = bytes_per == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
        }
    }
    return samples_to_plane(width, height, 1, static_cast<double>(maxval), samples);
}

inline std::uint16_t to_u16(double v) {
    const double scaled = std::round(std::clamp(v, 0.0, 255.0) / 255.0 * 65535.0);
    return static_cast<std::uint16_t>(scaled);
}

inline std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 255.0)));
}

}  // namespace detail

inline RasterFormat sniff_format(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::array<unsigned char, 8> head{};
    in.read(reinterpret_cast<char*>(head.data()), head.size());
    const auto got = in.gcount();
    if (got >= 8 && png_sig_cmp(head.data(), 0, 8) == 0) return RasterFormat::png;
    if (got >= 4 && ((head[0] == 'I' && head[1] == 'I' && head[2] == 42 && head[3] == 0) ||
                     (head[0] == 'M' && head[1] == 'M' && head[2] == 0 && head[3] == 42))) {
        return RasterFormat::tiff;
    }
    if (got >= 2 && head[0] == 'P' && (head[1] == '5' || head[1] == '2')) return RasterFormat::pgm;
    return RasterFormat::unknown;
}

/// Decodes PNG, TIFF (8/16-bit) or PGM into a luminance plane on [0, 255].
inline ImagePlane load_grayscale(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) {
        throw Error(ErrorKind::io, "no such file: " + path.string());
    }
    switch (sniff_format(path)) {
        case RasterFormat::png: return detail::read_png(path);
        case RasterFormat::tiff: return detail::read_tiff(path);
        case RasterFormat::pgm: return detail::read_pgm(path);
        case RasterFormat::unknown: break;
    }
    throw Error(ErrorKind::format, "unsupported raster format: " + path.string());
}

/// Writes a grayscale PNG; values are clamped to [0, 255] and quantized to
/// 8 or 16 bits.
inline void save_png(const ImagePlane& plane, const std::filesystem::path& path, int bit_depth = 16) {
    if (bit_depth != 8 && bit_depth != 16) throw Error(ErrorKind::domain, "PNG bit depth must be 8 or 16");
    detail::FilePtr file = detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error(ErrorKind::io, "libpng init failed");
    }
    const std::size_t bpp = bit_depth / 8;
    std::vector<unsigned char> row(plane.width() * bpp);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::io, "PNG write failed: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(plane.width()), static_cast<png_uint_32>(plane.height()),
                 bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t r = 0; r < plane.height(); ++r) {
        for (std::size_t c = 0; c < plane.width(); ++c) {
            if (bit_depth == 16) {
                const std::uint16_t v = detail::to_u16(plane(r, c));
                row[2 * c] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
                row[2 * c + 1] = static_cast<unsigned char>(v & 0xff);
            } else {
                row[c] = detail::to_u8(plane(r, c));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Writes a binary PGM (P5) with maxval 255 or 65535.
inline void save_pgm(const ImagePlane& plane, const std::filesystem::path& path, int bit_depth = 8) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    const unsigned maxval = bit_depth == 16 ? 65535u : 255u;
    out << "P5\n" << plane.width() << ' ' << plane.height() << '\n' << maxval << '\n';
    for (double v : plane.data()) {
        if (bit_depth == 16) {
            const std::uint16_t q = detail::to_u16(v);
            out.put(static_cast<char>(q >> 8));
            out.put(static_cast<char>(q & 0xff));
        } else {
            out.put(static_cast<char>(detail::to_u8(v)));
        }
    }
    if (!out) throw Error(ErrorKind::io, "write failed: " + path.string());
}

}  // namespace prnu

#endif  // PRNU_RASTER_IO_HPP
