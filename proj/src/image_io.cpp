#include "ssmi/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace ssmi {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

// ---------------------------------------------------------------- PNM

struct PnmCursor {
    const std::vector<unsigned char>& bytes;
    std::size_t pos = 0;
    std::string name;

    bool eof() const { return pos >= bytes.size(); }
    unsigned char peek() const { return bytes[pos]; }

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(name + ": " + what, pos);
    }

    void skip_space_and_comments() {
        while (!eof()) {
            if (std::isspace(peek())) {
                ++pos;
            } else if (peek() == '#') {
                while (!eof() && peek() != '\n') ++pos;
            } else {
                break;
            }
        }
    }

    // next whitespace-delimited unsigned integer from the header
    int next_int(const char* what) {
        skip_space_and_comments();
        if (eof()) fail(std::string("truncated header, expected ") + what);
        if (!std::isdigit(peek()))
            fail(std::string("expected ") + what + ", got '" +
                 static_cast<char>(peek()) + "'");
        long v = 0;
        while (!eof() && std::isdigit(peek())) {
            v = v * 10 + (peek() - '0');
            if (v > 1 << 30) fail("integer overflow in header");
            ++pos;
        }
        return static_cast<int>(v);
    }
};

ImageBuffer load_pnm(const std::vector<unsigned char>& bytes,
                     const std::filesystem::path& path) {
    PnmCursor cur{bytes, 0, path.filename().string()};
    if (bytes.size() < 2) cur.fail("truncated header");
    const char kind = static_cast<char>(bytes[1]);
    const bool ascii = (kind == '2' || kind == '3');
    const int channels = (kind == '2' || kind == '5') ? 1 : 3;
    cur.pos = 2;

    const int width = cur.next_int("width");
    const int height = cur.next_int("height");
    const int maxval = cur.next_int("maxval");
    if (width < 1 || height < 1) cur.fail("non-positive image dimensions");
    if (maxval < 1 || maxval > 255)
        cur.fail("unsupported bit depth, maxval " + std::to_string(maxval));

    const std::size_t count =
        static_cast<std::size_t>(width) * height * channels;
    std::vector<double> values(count);

    if (ascii) {
        for (std::size_t i = 0; i < count; ++i) {
            const int v = cur.next_int("pixel value");
            if (v > maxval) cur.fail("pixel value exceeds maxval");
            values[i] = static_cast<double>(v) / maxval;
        }
    } else {
        // exactly one whitespace byte separates the header from raster data
        if (cur.eof() || !std::isspace(cur.peek())) cur.fail("missing raster separator");
        ++cur.pos;
        if (bytes.size() - cur.pos < count) {
            cur.pos = bytes.size();
            cur.fail("truncated raster data");
        }
        for (std::size_t i = 0; i < count; ++i)
            values[i] = static_cast<double>(bytes[cur.pos + i]) / maxval;
    }
    return ImageBuffer::from_data(width, height, channels, std::move(values));
}

void save_pnm(const ImageBuffer& img, const std::filesystem::path& path,
              bool color) {
    if (color && img.channels() != 3)
        throw DomainError("ppm output requires a 3-channel image");
    if (!color && img.channels() != 1)
        throw DomainError("pgm output requires a 1-channel image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out << (color ? "P6" : "P5") << "\n"
        << img.width() << " " << img.height() << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width()) *
                                   img.channels());
    for (int y = 0; y < img.height(); ++y) {
        std::size_t i = 0;
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                row[i++] = static_cast<unsigned char>(
                    std::lround(img.at(x, y, c) * 255.0));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw FormatError("write failed for " + path.string());
}

// ---------------------------------------------------------------- PNG

struct PngMemReader {
    const unsigned char* data = nullptr;
    std::size_t size = 0;
    std::size_t pos = 0;
    std::string message;
};

extern "C" {

void ssmi_png_read_cb(png_structp png, png_bytep out, png_size_t count) {
    auto* r = static_cast<PngMemReader*>(png_get_io_ptr(png));
    if (r->pos + count > r->size) {
        r->pos = r->size;
        png_error(png, "unexpected end of file");
    }
    std::memcpy(out, r->data + r->pos, count);
    r->pos += count;
}

void ssmi_png_error_cb(png_structp png, png_const_charp msg) {
    auto* r = static_cast<PngMemReader*>(png_get_error_ptr(png));
    if (r && r->message.empty()) r->message = msg;
    png_longjmp(png, 1);
}

void ssmi_png_warn_cb(png_structp, png_const_charp) {}

} // extern "C"

// Decodes 8-bit (as ImageBuffer values) or 16-bit (as raw counts) PNG.
// Returns interleaved values normalized to [0,1].
struct DecodedPng {
    int width = 0, height = 0, channels = 0, bit_depth = 0;
    std::vector<double> values;
};

DecodedPng decode_png(const std::vector<unsigned char>& bytes,
                      const std::filesystem::path& path, bool want16) {
    PngMemReader reader{bytes.data(), bytes.size(), 0, {}};
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &reader,
                                             ssmi_png_error_cb, ssmi_png_warn_cb);
    if (!png) throw FormatError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw FormatError("libpng init failed");
    }

    std::vector<png_byte> raster;
    std::vector<png_bytep> rows;
    DecodedPng out;

    if (setjmp(png_jmpbuf(png))) {
        const std::size_t at = reader.pos;
        const std::string msg = path.filename().string() + ": " +
                                (reader.message.empty() ? "corrupt PNG"
                                                        : reader.message);
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(msg, at);
    }

    png_set_read_fn(png, &reader, ssmi_png_read_cb);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);

    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB)
        png_error(png, "unsupported color type (need gray or RGB, no alpha)");
    if ((want16 && depth != 16) || (!want16 && depth != 8))
        png_error(png, "unsupported bit depth");
    if (png_get_interlace_type(png, info) != PNG_INTERLACE_NONE)
        png_error(png, "interlaced PNG not supported");

    png_read_update_info(png, info);

    const int channels = (color == PNG_COLOR_TYPE_GRAY) ? 1 : 3;
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    raster.assign(rowbytes * h, 0);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = raster.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    out.width = static_cast<int>(w);
    out.height = static_cast<int>(h);
    out.channels = channels;
    out.bit_depth = depth;
    out.values.resize(static_cast<std::size_t>(w) * h * channels);
    std::size_t i = 0;
    for (png_uint_32 y = 0; y < h; ++y) {
        const png_byte* row = raster.data() + y * rowbytes;
        if (depth == 8) {
            for (std::size_t k = 0; k < static_cast<std::size_t>(w) * channels; ++k)
                out.values[i++] = row[k] / 255.0;
        } else {
            for (std::size_t k = 0; k < static_cast<std::size_t>(w) * channels; ++k) {
                const unsigned v = (static_cast<unsigned>(row[2 * k]) << 8) |
                                   row[2 * k + 1];
                out.values[i++] = v / 65535.0;
            }
        }
    }
    return out;
}

void encode_png(const std::filesystem::path& path, int width, int height,
                int channels, int bit_depth,
                const std::vector<double>& values) {
    std::FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw FormatError("cannot open " + path.string() + " for writing");

    PngMemReader state; // reused for the error message only
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &state,
                                              ssmi_png_error_cb, ssmi_png_warn_cb);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw FormatError("libpng init failed");
    }

    const std::size_t bytes_per_value = bit_depth / 8;
    const std::size_t rowbytes =
        static_cast<std::size_t>(width) * channels * bytes_per_value;
    std::vector<png_byte> raster(rowbytes * height);
    const double scale = (bit_depth == 8) ? 255.0 : 65535.0;
    std::size_t i = 0;
    for (std::size_t k = 0; k < values.size(); ++k) {
        const auto v = static_cast<unsigned>(std::lround(clamp01(values[k]) * scale));
        if (bit_depth == 8) {
            raster[i++] = static_cast<png_byte>(v);
        } else {
            raster[i++] = static_cast<png_byte>(v >> 8);
            raster[i++] = static_cast<png_byte>(v & 0xff);
        }
    }
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = raster.data() + y * rowbytes;

    if (setjmp(png_jmpbuf(png))) {
        const std::string msg = state.message.empty() ? "PNG write failed"
                                                      : state.message;
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw FormatError(path.string() + ": " + msg);
    }

    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width),
                 static_cast<png_uint_32>(height), bit_depth,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fclose(fp) != 0)
        throw FormatError("write failed for " + path.string());
}

bool has_png_magic(const std::vector<unsigned char>& bytes) {
    static const unsigned char magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n',
                                           0x1a, '\n'};
    return bytes.size() >= 8 && std::memcmp(bytes.data(), magic, 8) == 0;
}

} // namespace

ImageBuffer load_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (has_png_magic(bytes)) {
        const auto png = decode_png(bytes, path, /*want16=*/false);
        return ImageBuffer::from_data(png.width, png.height, png.channels,
                                      png.values);
    }
    if (bytes.size() >= 2 && bytes[0] == 'P' &&
        (bytes[1] == '2' || bytes[1] == '3' || bytes[1] == '5' || bytes[1] == '6'))
        return load_pnm(bytes, path);
    throw FormatError(path.filename().string() +
                          ": unrecognized image format (need PNG or PPM/PGM)",
                      0);
}

void save_image(const ImageBuffer& img, const std::filesystem::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".png") {
        encode_png(path, img.width(), img.height(), img.channels(), 8,
                   {img.data().begin(), img.data().end()});
    } else if (ext == ".ppm") {
        save_pnm(img, path, /*color=*/true);
    } else if (ext == ".pgm") {
        save_pnm(img, path, /*color=*/false);
    } else {
        throw DomainError("unsupported output extension '" + ext +
                          "' (use .png, .ppm or .pgm)");
    }
}

void save_png16(const Grid& values, const std::filesystem::path& path) {
    if (values.channels != 1 && values.channels != 3)
        throw DomainError("16-bit PNG requires 1 or 3 channels");
    encode_png(path, values.width, values.height, values.channels, 16,
               values.data);
}

Grid load_png16(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (!has_png_magic(bytes))
        throw FormatError(path.filename().string() + ": not a PNG file", 0);
    const auto png = decode_png(bytes, path, /*want16=*/true);
    Grid g(png.width, png.height, png.channels);
    g.data = png.values;
    return g;
}

} // namespace ssmi
