#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace ducseg {

/// Shortest decimal string that parses back to exactly `v`.
std::string format_number(double v);

/// 8-bit grayscale image for ASCII PGM (P2) exchange.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    int maxval = 255;
    std::vector<int> pixels;  // row-major, height * width

    int at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
    bool operator==(const GrayImage&) const = default;
};

void write_pgm(std::ostream& os, const GrayImage& img);
GrayImage read_pgm(std::istream& is);
void save_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage load_pgm(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace ducseg
