#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace relseg {

struct ImageU8 {
    std::size_t width = 0, height = 0, channels = 0;  // channels: 1 or 3
    std::vector<std::uint8_t> pixels;                 // row-major, interleaved
};

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

}  // namespace relseg
