#pragma once

// Dense real arithmetic, activations, deterministic RNG and the binomial
// smoothing kernel. Everything here is 64-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cafusion {

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(std::size_t rows, std::size_t cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

class Vector {
public:
    Vector() = default;
    explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
    Vector(std::initializer_list<double> values) : data_(values) {}
    explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Vector&, const Vector&) = default;

private:
    std::vector<double> data_;
};

/// Row-major dense matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// splitmix64-seeded xoshiro256**. Draws are defined bit-for-bit here rather
// than through <random> distributions, whose output differs between
// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
        std::uint64_t s = seed;
        for (auto& word : state_) word = splitmix64(s);
    }

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), rejection-sampled so it is unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: empty range");
        const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    /// Standard normal via Box-Muller; uses two uniforms per draw.
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    /// Independent child stream, stable under reordering of other draws.
    static Rng derive(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
        std::uint64_t s = base ^ (0x9e3779b97f4a7c15ULL * (a + 1));
        std::uint64_t k = splitmix64(s) ^ (0xbf58476d1ce4e5b9ULL * (b + 1));
        return Rng(splitmix64(k));
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }
    static std::uint64_t splitmix64(std::uint64_t& s) noexcept {
        std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t state_[4]{};
};

inline double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double tanh_act(double x) noexcept { return std::tanh(x); }

/// Row (window-1) of Pascal's triangle scaled by 2^-(window-1).
inline Vector binomial_kernel(std::size_t window) {
    if (window == 0 || window % 2 == 0)
        throw std::invalid_argument("binomial_kernel: window must be odd and >= 1, got " +
                                    std::to_string(window));
    const std::size_t n = window - 1;
    Vector k(window);
    // Binomial coefficients built by repeated halving stay exact in binary
    // floating point up to n = 52.
    k[0] = 1.0;
    for (std::size_t row = 1; row <= n; ++row) {
        for (std::size_t j = row; j > 0; --j) k[j] = 0.5 * (k[j] + k[j - 1]);
        k[0] *= 0.5;
    }
    return k;
}

inline void check_same(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        std::ostringstream os;
        os << what << ": dimension mismatch (" << a << " vs " << b << ")";
        throw DimensionError(os.str());
    }
}

/// Dot product with four independent accumulators.
inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    const std::size_t n = a.size();
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

/// out += m * v
inline void matvec_acc(const Matrix& m, std::span<const double> v, std::span<double> out) {
    if (m.cols() != v.size() || m.rows() != out.size())
        throw DimensionError("matvec: matrix " + shape_str(m.rows(), m.cols()) + " vs vector " +
                             std::to_string(v.size()) + " -> " + std::to_string(out.size()));
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] += dot(m.row(r), v);
}

/// out += m^T * v
inline void matvec_t_acc(const Matrix& m, std::span<const double> v, std::span<double> out) {
    if (m.rows() != v.size() || m.cols() != out.size())
        throw DimensionError("matvec_t: matrix " + shape_str(m.rows(), m.cols()) +
                             " vs vector " + std::to_string(v.size()));
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double s = v[r];
        if (s == 0.0) continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) out[c] += s * row[c];
    }
}

/// m += a * b^T
inline void outer_acc(Matrix& m, std::span<const double> a, std::span<const double> b) {
    if (m.rows() != a.size() || m.cols() != b.size())
        throw DimensionError("outer: matrix " + shape_str(m.rows(), m.cols()) + " vs " +
                             shape_str(a.size(), b.size()));
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double s = a[r];
        if (s == 0.0) continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += s * b[c];
    }
}

inline Vector matvec(const Matrix& m, const Vector& v) {
    Vector out(m.rows());
    matvec_acc(m, v.data(), out.data());
    return out;
}

inline Vector add(const Vector& v, const Vector& w) {
    check_same(v.size(), w.size(), "add");
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] + w[i];
    return out;
}

inline Vector hadamard(const Vector& v, const Vector& w) {
    check_same(v.size(), w.size(), "hadamard");
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * w[i];
    return out;
}

/// Uniform in +-sqrt(6 / (rows + cols)).
inline Matrix xavier_init(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    if (rows + cols == 0) return m;
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (double& x : m.data()) x = rng.uniform(-bound, bound);
    return m;
}

inline Vector concat(std::initializer_list<std::span<const double>> parts) {
    std::size_t n = 0;
    for (auto p : parts) n += p.size();
    Vector out(n);
    std::size_t k = 0;
    for (auto p : parts)
        for (double x : p) out[k++] = x;
    return out;
}

inline bool all_finite(std::span<const double> xs) noexcept {
    for (double x : xs)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace cafusion
