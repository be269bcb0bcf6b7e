#include "ducseg/io.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace ducseg {

std::string format_number(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_pgm(std::ostream& os, const GrayImage& img)
{
    if (img.pixels.size() != img.width * img.height)
        throw std::invalid_argument("write_pgm: pixel count does not match dimensions");
    os << "P2\n" << img.width << ' ' << img.height << '\n' << img.maxval << '\n';
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            if (x) os << ' ';
            os << img.at(y, x);
        }
        os << '\n';
    }
}

namespace {

// Next whitespace-delimited token, skipping '#' comments.
std::string pgm_token(std::istream& is)
{
    std::string tok;
    char ch;
    while (is.get(ch)) {
        if (ch == '#') {
            std::string rest;
            std::getline(is, rest);
            if (!tok.empty()) break;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(ch);
    }
    if (tok.empty()) throw std::runtime_error("PGM: unexpected end of input");
    return tok;
}

long pgm_int(std::istream& is)
{
    const std::string tok = pgm_token(is);
    long v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        throw std::runtime_error("PGM: bad integer '" + tok + "'");
    return v;
}

}  // namespace

GrayImage read_pgm(std::istream& is)
{
    if (pgm_token(is) != "P2") throw std::runtime_error("PGM: only ASCII P2 is supported");
    GrayImage img;
    const long w = pgm_int(is);
    const long h = pgm_int(is);
    const long maxval = pgm_int(is);
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw std::runtime_error("PGM: bad header");
    img.width = static_cast<std::size_t>(w);
    img.height = static_cast<std::size_t>(h);
    img.maxval = static_cast<int>(maxval);
    img.pixels.resize(img.width * img.height);
    for (auto& p : img.pixels) {
        const long v = pgm_int(is);
        if (v < 0 || v > maxval) throw std::runtime_error("PGM: pixel out of range");
        p = static_cast<int>(v);
    }
    return img;
}

void save_pgm(const std::filesystem::path& path, const GrayImage& img)
{
    std::ostringstream os;
    write_pgm(os, img);
    write_text_file(path, os.str());
}

GrayImage load_pgm(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return read_pgm(is);
}

void write_text_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace ducseg
