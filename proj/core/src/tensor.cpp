#include "relseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace relseg {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_)) {
        throw std::invalid_argument("Tensor: data length does not match shape");
    }
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

double& Tensor::at3(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
}
double Tensor::at3(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
}
double& Tensor::at4(std::size_t o, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((o * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}
double Tensor::at4(std::size_t o, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((o * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}

void check_finite(const Tensor& t, const char* context) {
    for (double v : t.raw()) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string("non-finite value in ") + context);
        }
    }
}

namespace {

// Maps a flat index of the result (shaped like a) to the flat index of b
// under the trailing-dimension broadcast rule.
struct BroadcastMap {
    std::vector<std::size_t> a_shape;
    std::vector<std::size_t> b_dims;     // aligned to a's trailing axes
    std::vector<std::size_t> b_strides;  // 0 where b's dim is 1

    BroadcastMap(const Tensor& a, const Tensor& b) : a_shape(a.shape()) {
        const auto& bs = b.shape();
        if (bs.size() > a_shape.size()) {
            throw std::invalid_argument("broadcast: b has higher rank than a");
        }
        std::size_t offset = a_shape.size() - bs.size();
        b_dims.assign(a_shape.size(), 1);
        for (std::size_t i = 0; i < bs.size(); ++i) b_dims[offset + i] = bs[i];
        for (std::size_t i = 0; i < a_shape.size(); ++i) {
            if (b_dims[i] != 1 && b_dims[i] != a_shape[i]) {
                throw std::invalid_argument("broadcast: incompatible shapes");
            }
        }
        b_strides.assign(a_shape.size(), 0);
        std::size_t stride = 1;
        for (std::size_t i = a_shape.size(); i-- > 0;) {
            if (b_dims[i] != 1) {
                b_strides[i] = stride;
                stride *= b_dims[i];
            }
        }
    }

    std::size_t map(std::size_t flat) const {
        std::size_t out = 0;
        for (std::size_t i = a_shape.size(); i-- > 0;) {
            std::size_t idx = flat % a_shape[i];
            flat /= a_shape[i];
            if (b_dims[i] != 1) out += idx * b_strides[i];
        }
        return out;
    }
};

}  // namespace

Tensor ew_binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
    Tensor out(a.shape());
    if (a.same_shape(b)) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            double x = a[i], y = b[i];
            out[i] = kind == BinaryKind::Add ? x + y
                   : kind == BinaryKind::Sub ? x - y
                                             : x * y;
        }
    } else {
        BroadcastMap bm(a, b);
        for (std::size_t i = 0; i < a.size(); ++i) {
            double x = a[i], y = b[bm.map(i)];
            out[i] = kind == BinaryKind::Add ? x + y
                   : kind == BinaryKind::Sub ? x - y
                                             : x * y;
        }
    }
    check_finite(out, "ew_binary");
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return ew_binary(a, b, BinaryKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return ew_binary(a, b, BinaryKind::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return ew_binary(a, b, BinaryKind::Mul); }

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    check_finite(out, "scale");
    return out;
}

Tensor stabilized_div(const Tensor& num, const Tensor& den, double epsilon) {
    if (!num.same_shape(den)) {
        throw std::invalid_argument("stabilized_div: shape mismatch");
    }
    if (epsilon < 0) throw std::invalid_argument("stabilized_div: negative epsilon");
    Tensor out(num.shape());
    for (std::size_t i = 0; i < num.size(); ++i) {
        double d = den[i];
        if (d == 0.0 && epsilon == 0.0) {
            throw std::runtime_error("stabilized_div: zero denominator with epsilon = 0");
        }
        double s = d < 0.0 ? -1.0 : 1.0;  // sign(0) = +1
        out[i] = num[i] / (d + s * epsilon);
    }
    check_finite(out, "stabilized_div");
    return out;
}

Tensor reduce_sum(const Tensor& a, const std::vector<std::size_t>& axes) {
    const auto& shape = a.shape();
    std::vector<bool> reduced(shape.size(), false);
    for (std::size_t ax : axes) {
        if (ax >= shape.size()) throw std::invalid_argument("reduce_sum: invalid axis");
        if (reduced[ax]) throw std::invalid_argument("reduce_sum: duplicate axis");
        reduced[ax] = true;
    }
    std::vector<std::size_t> out_shape;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (!reduced[i]) out_shape.push_back(shape[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out(out_shape);

    std::vector<std::size_t> out_strides(shape.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
        if (!reduced[i]) {
            out_strides[i] = stride;
            stride *= shape[i];
        }
    }
    // Ascending flat order keeps the accumulation deterministic.
    for (std::size_t flat = 0; flat < a.size(); ++flat) {
        std::size_t rem = flat, oi = 0;
        for (std::size_t i = shape.size(); i-- > 0;) {
            std::size_t idx = rem % shape[i];
            rem /= shape[i];
            oi += idx * out_strides[i];
        }
        out[oi] += a[flat];
    }
    check_finite(out, "reduce_sum");
    return out;
}

double sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.raw()) s += v;
    return s;
}

Tensor flip_spatial(const Tensor& a) {
    if (a.rank() != 4) throw std::invalid_argument("flip_spatial: rank must be 4");
    const std::size_t O = a.dim(0), C = a.dim(1), KH = a.dim(2), KW = a.dim(3);
    Tensor out(a.shape());
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < KH; ++i)
                for (std::size_t j = 0; j < KW; ++j)
                    out.at4(o, c, KH - 1 - i, KW - 1 - j) = a.at4(o, c, i, j);
    return out;
}

Tensor heaviside(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? 1.0 : 0.0;
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return out;
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.raw()) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double max_rel_diff(const Tensor& a, const Tensor& b, double floor) {
    double scale = std::max(max_abs(b), floor);
    return max_abs_diff(a, b) / scale;
}

namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = (unsigned char)((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw std::runtime_error("tensor read: truncated file");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= (T)buf[i] << (8 * i);
    return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("RNT1", 4);
    write_le<std::uint32_t>(os, (std::uint32_t)t.rank());
    for (std::size_t d : t.shape()) write_le<std::uint64_t>(os, (std::uint64_t)d);
    for (double v : t.raw()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        write_le<std::uint64_t>(os, bits);
    }
    if (!os) throw std::runtime_error("tensor write failed");
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RNT1", 4) != 0) {
        throw std::runtime_error("tensor read: bad magic");
    }
    std::uint32_t rank = read_le<std::uint32_t>(is);
    if (rank == 0 || rank > 8) throw std::runtime_error("tensor read: bad rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = (std::size_t)read_le<std::uint64_t>(is);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint64_t bits = read_le<std::uint64_t>(is);
        double v;
        std::memcpy(&v, &bits, 8);
        t[i] = v;
    }
    return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    write_tensor(os, t);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    return read_tensor(is);
}

std::uint64_t SeededRng::next_u64() {
    // splitmix64 over (seed, counter)
    std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (++counter_);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double SeededRng::uniform() {
    return (double)(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double SeededRng::normal() {
    // Box-Muller; u clamped away from 0.
    double u = uniform(), v = uniform();
    if (u < 1e-300) u = 1e-300;
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * 3.14159265358979323846 * v);
}

std::size_t SeededRng::index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("SeededRng::index: n = 0");
    return (std::size_t)(next_u64() % n);
}

bool SeededRng::bernoulli(double p) { return uniform() < p; }

}  // namespace relseg
