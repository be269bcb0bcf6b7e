#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ducseg {

class Rng;

/// Dimensions of a 4-axis tensor in (batch, channel, row, column) order.
struct Shape {
    std::size_t n = 1;
    std::size_t c = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    std::size_t numel() const { return n * c * h * w; }
    std::size_t plane() const { return h * w; }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Throws std::invalid_argument if any dimension is zero.
void validate_shape(const Shape& s);

/// Dense real tensor stored row-major in (n, c, h, w) order.
///
/// Every index formula in the library assumes this layout; there are no
/// strides or views. Values are 64-bit floats.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, double fill);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const
    {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x)
    {
        return data_[index(n, c, y, x)];
    }
    double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const
    {
        return data_[index(n, c, y, x)];
    }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Same data reinterpreted under a new shape with identical element count.
    Tensor reshape(Shape shape) const;
    /// Shape (1, 1, 1, numel).
    Tensor flatten() const;

    void fill(double v);

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_{};
    std::vector<double> data_;
};

Tensor new_tensor(Shape shape, double fill);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor scale(const Tensor& a, double s);

/// Zero-mean normal samples with variance 2 / fan_in.
Tensor he_init(Shape shape, std::size_t fan_in, Rng& rng);

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

// Binary format: four little-endian u32 dims (n, c, h, w) followed by
// n*c*h*w little-endian IEEE-754 doubles.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// One CSV row per (n, c) plane, values in row-major order.
void write_tensor_csv(std::ostream& os, const Tensor& t);

}  // namespace ducseg
