#include "ducseg/tensor.hpp"

#include "ducseg/io.hpp"
#include "ducseg/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace ducseg {

std::string to_string(const Shape& s)
{
    return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
           std::to_string(s.w) + ")";
}

void validate_shape(const Shape& s)
{
    if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0)
        throw std::invalid_argument("invalid dimension in shape " + to_string(s));
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape)
{
    validate_shape(shape);
    data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data))
{
    validate_shape(shape);
    if (data_.size() != shape.numel())
        throw std::invalid_argument("data length " + std::to_string(data_.size()) +
                                    " does not match shape " + to_string(shape));
}

Tensor Tensor::reshape(Shape shape) const
{
    validate_shape(shape);
    if (shape.numel() != shape_.numel())
        throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return Tensor(shape, data_);
}

Tensor Tensor::flatten() const
{
    return reshape({1, 1, 1, shape_.numel()});
}

void Tensor::fill(double v)
{
    std::fill(data_.begin(), data_.end(), v);
}

Tensor new_tensor(Shape shape, double fill)
{
    return Tensor(shape, fill);
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                    " vs " + to_string(b.shape()));
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f)
{
    require_same_shape(a, b, op);
    Tensor out(a.shape(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
}

template <class F>
Tensor map(const Tensor& a, F f)
{
    Tensor out(a.shape(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return zip(a, b, "add", [](double x, double y) { return x + y; }); }
Tensor sub(const Tensor& a, const Tensor& b) { return zip(a, b, "sub", [](double x, double y) { return x - y; }); }
Tensor mul(const Tensor& a, const Tensor& b) { return zip(a, b, "mul", [](double x, double y) { return x * y; }); }
Tensor add(const Tensor& a, double b) { return map(a, [b](double x) { return x + b; }); }
Tensor mul(const Tensor& a, double b) { return map(a, [b](double x) { return x * b; }); }
Tensor scale(const Tensor& a, double s) { return mul(a, s); }

Tensor he_init(Shape shape, std::size_t fan_in, Rng& rng)
{
    if (fan_in == 0) throw std::invalid_argument("he_init: fan_in must be >= 1");
    Tensor t(shape, 0.0);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data()) v = stddev * rng.normal();
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

namespace {

static_assert(std::numeric_limits<double>::is_iec559);

void put_u32(std::ostream& os, std::uint32_t v)
{
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v)
{
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is)
{
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("tensor file: truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is)
{
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("tensor file: truncated data");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t)
{
    const auto& s = t.shape();
    for (auto d : {s.n, s.c, s.h, s.w}) {
        if (d > std::numeric_limits<std::uint32_t>::max())
            throw std::invalid_argument("write_tensor: dimension exceeds u32");
        put_u32(os, static_cast<std::uint32_t>(d));
    }
    for (double v : t.data()) put_f64(os, v);
}

Tensor read_tensor(std::istream& is)
{
    Shape s;
    s.n = get_u32(is);
    s.c = get_u32(is);
    s.h = get_u32(is);
    s.w = get_u32(is);
    validate_shape(s);
    std::vector<double> data(s.numel());
    for (auto& v : data) v = get_f64(is);
    return Tensor(s, std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return read_tensor(is);
}

void write_tensor_csv(std::ostream& os, const Tensor& t)
{
    const auto& s = t.shape();
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t i = 0; i < s.plane(); ++i) {
                if (i) os << ',';
                os << format_number(t[t.index(n, c, 0, 0) + i]);
            }
            os << '\n';
        }
    }
}

}  // namespace ducseg
