#ifndef SSMI_IMAGE_IO_HPP
#define SSMI_IMAGE_IO_HPP

#include <filesystem>

#include "ssmi/image.hpp"

namespace ssmi {

// Reads PNG (8-bit gray/RGB, no alpha) or PPM/PGM (ASCII P2/P3 and
// binary P5/P6, maxval <= 255). The format is detected from the magic
// bytes, not the extension. Malformed input throws FormatError with the
// byte offset where parsing stopped.
ImageBuffer load_image(const std::filesystem::path& path);

// Writes by extension: .png, .ppm (3-channel, binary P6), .pgm
// (1-channel, binary P5). Pixels are quantized to 8 bits; repeated
// saves of the same buffer are byte-identical.
void save_image(const ImageBuffer& img, const std::filesystem::path& path);

// 16-bit grayscale/RGB PNG for high-precision dumps. Values are taken
// in [0,1] and scaled to the full 16-bit range.
void save_png16(const Grid& values, const std::filesystem::path& path);
Grid load_png16(const std::filesystem::path& path);

} // namespace ssmi

#endif
