#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace relseg {

/// Dense row-major n-dimensional array of doubles. The universal value type
/// of the library; every operation that produces a Tensor checks the result
/// for NaN/Inf and throws instead of propagating silently.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor scalar(double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Indexing helpers for the ranks the library actually uses.
    double& at3(std::size_t c, std::size_t y, std::size_t x);
    double at3(std::size_t c, std::size_t y, std::size_t x) const;
    double& at4(std::size_t o, std::size_t c, std::size_t y, std::size_t x);
    double at4(std::size_t o, std::size_t c, std::size_t y, std::size_t x) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

enum class BinaryKind { Add, Sub, Mul };

/// Elementwise op with trailing-dimension broadcast of b onto a.
Tensor ew_binary(const Tensor& a, const Tensor& b, BinaryKind kind);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

/// num / (den + sign(den)*epsilon), sign(0) = +1. epsilon = 0 with a zero
/// denominator throws.
Tensor stabilized_div(const Tensor& num, const Tensor& den, double epsilon);

/// Sum over the given axes (removed from the shape). Accumulation order is
/// ascending flat index so residuals are bit-reproducible.
Tensor reduce_sum(const Tensor& a, const std::vector<std::size_t>& axes);
double sum_all(const Tensor& a);

/// Reverse both spatial axes of an (out_ch, in_ch, kh, kw) kernel.
Tensor flip_spatial(const Tensor& a);

/// 1 where x > 0, else 0. H(0) = 0 so that heaviside(z)*z = relu(z).
Tensor heaviside(const Tensor& a);
Tensor relu(const Tensor& a);

void check_finite(const Tensor& t, const char* context);

double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
/// max |a-b| / max(max|b|, floor); 0 for two empty/zero tensors.
double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-300);

/// Tensor binary format: "RNT1", u32 rank, rank x u64 dims, f64 payload,
/// all little-endian.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

/// Counter-based deterministic RNG (splitmix64 stream). Identical seed and
/// call sequence gives identical values on every platform.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64();
    double uniform();                        // [0, 1)
    double uniform(double lo, double hi);
    double normal();                         // standard normal
    std::size_t index(std::size_t n);        // [0, n)
    bool bernoulli(double p);

    std::uint64_t seed() const { return seed_; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.empty()) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::swap(v[i], v[index(i + 1)]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace relseg
