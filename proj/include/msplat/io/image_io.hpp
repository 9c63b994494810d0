#pragma once

#include <string>

#include "msplat/image.hpp"

namespace msplat {

/// PFM, 32-bit float, little-endian on write (negative scale header).
/// 1 channel ("Pf") or 3 channels ("PF"); rows stored bottom-to-top.
/// Reads both endiannesses. Throws std::runtime_error on malformed files.
Image load_pfm(const std::string& path);
void save_pfm(const std::string& path, const Image& image);

/// PNG, 8- or 16-bit, gray/RGB/RGBA. Values map linearly to [0,1].
/// save_png clamps to [0,1] before quantizing. bit_depth must be 8 or 16.
Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& image, int bit_depth = 8);

/// Normal maps: 3-channel camera-frame unit vectors.
/// .pfm stores components verbatim; .png stores 16-bit with the linear
/// mapping [-1,1] -> [0,1] (n = 2v - 1 on load).
Image load_normal_map(const std::string& path);
void save_normal_map(const std::string& path, const Image& image);

}  // namespace msplat
