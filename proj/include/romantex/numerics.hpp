#pragma once

// Dense-array substrate: Grid storage, matmul/softmax kernels, a counter-based
// RNG and image resampling. Everything above this header is built on it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace romantex {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Contiguous row-major array with an explicit shape.
template <typename T>
class BasicGrid {
public:
    using value_type = T;

    BasicGrid() = default;

    explicit BasicGrid(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

    BasicGrid(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_product(shape_) != data_.size()) {
            throw ShapeError("grid data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
        }
    }

    static BasicGrid identity(std::size_t n) {
        BasicGrid g({n, n});
        for (std::size_t i = 0; i < n; ++i) g(i, i) = T(1);
        return g;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.at(1); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    T& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    T* row(std::size_t r) { return data_.data() + r * shape_[1]; }
    const T* row(std::size_t r) const { return data_.data() + r * shape_[1]; }

    void reshape(Shape shape) {
        if (shape_product(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        shape_ = std::move(shape);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const BasicGrid& a, const BasicGrid& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Grid = BasicGrid<float>;

template <typename T>
const BasicGrid<T>& require_finite(const BasicGrid<T>& g, const char* what) {
    if (!g.all_finite()) throw NumericalError(std::string(what) + ": non-finite value in grid");
    return g;
}

template <typename T>
void require_same_shape(const BasicGrid<T>& a, const BasicGrid<T>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

// Raw row-major kernels. The inner loop always runs over a contiguous output
// row so that it vectorizes without reassociating reductions; results are
// therefore independent of vector width.
namespace kernels {

/// c[M×N] (+)= a[M×K] · b[K×N]
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

/// c[K×N] (+)= a[M×K]ᵀ · b[M×N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + k * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

/// c[M×N] (+)= a[M×K] · b[N×K]ᵀ, via an explicit transpose of b.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm(a, bt.data(), c, m, k, n, accumulate);
}

template <typename T>
void softmax_row(T* row, std::size_t n) {
    T mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

} // namespace kernels

template <typename T>
BasicGrid<T> matmul(const BasicGrid<T>& a, const BasicGrid<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
    }
    BasicGrid<T> c({a.rows(), b.cols()});
    kernels::gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), false);
    require_finite(c, "matmul");
    return c;
}

template <typename T>
BasicGrid<T> transpose(const BasicGrid<T>& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected a 2-D grid");
    BasicGrid<T> t({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// Row-wise softmax, stabilized by subtracting the row maximum.
template <typename T>
BasicGrid<T> softmax(const BasicGrid<T>& rows) {
    if (rows.rank() != 2) throw ShapeError("softmax: expected a 2-D grid");
    require_finite(rows, "softmax input");
    BasicGrid<T> out = rows;
    for (std::size_t i = 0; i < out.rows(); ++i) kernels::softmax_row(out.row(i), out.cols());
    return out;
}

template <typename T>
BasicGrid<T> add(const BasicGrid<T>& a, const BasicGrid<T>& b) {
    require_same_shape(a, b, "add");
    BasicGrid<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    require_finite(c, "add");
    return c;
}

template <typename T>
BasicGrid<T> subtract(const BasicGrid<T>& a, const BasicGrid<T>& b) {
    require_same_shape(a, b, "subtract");
    BasicGrid<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
    require_finite(c, "subtract");
    return c;
}

template <typename T>
BasicGrid<T> scale(const BasicGrid<T>& a, T s) {
    BasicGrid<T> c = a;
    for (auto& v : c.values()) v *= s;
    require_finite(c, "scale");
    return c;
}

/// y += alpha * x
template <typename T>
void axpy(T alpha, const BasicGrid<T>& x, BasicGrid<T>& y) {
    require_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

/// Sums accumulate in double, sequentially, so reductions are order-stable.
template <typename T>
double sum(const BasicGrid<T>& a) {
    double s = 0;
    for (T v : a.values()) s += v;
    return s;
}

template <typename T>
double mean(const BasicGrid<T>& a) {
    return a.empty() ? 0.0 : sum(a) / static_cast<double>(a.size());
}

template <typename T>
double dot(const BasicGrid<T>& a, const BasicGrid<T>& b) {
    require_same_shape(a, b, "dot");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

template <typename T>
double norm(const BasicGrid<T>& a) {
    return std::sqrt(dot(a, a));
}

template <typename To, typename From>
BasicGrid<To> grid_cast(const BasicGrid<From>& g) {
    std::vector<To> d(g.values().begin(), g.values().end());
    return BasicGrid<To>(g.shape(), std::move(d));
}

// ---------------------------------------------------------------------------
// Random numbers.
//
// Counter-based generator: draw n of a stream keyed by K is
// splitmix64_mix(K + (n+1)·0x9E3779B97F4A7C15), the SplitMix64 output
// function. A stream is fully described by (key, counter), so it can be
// checkpointed, skipped ahead, or split into independent named sub-streams.
// Uniforms use the top 53 bits; gaussians use Box–Muller on two uniforms
// and return both variates in order.

inline std::uint64_t splitmix64_mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    explicit Rng(std::uint64_t seed = 0) : key_(splitmix64_mix(seed ^ 0x5EED5EED5EED5EEDULL)) {}

    /// Independent child stream; the parent is not advanced.
    Rng split(std::uint64_t stream) const {
        Rng child;
        child.key_ = splitmix64_mix(key_ ^ splitmix64_mix(stream + 0xA5A5A5A5ULL));
        return child;
    }

    /// Child stream named by a string (e.g. "dataset", "train", "sample").
    Rng split(std::string_view name) const {
        std::uint64_t h = 1469598103934665603ULL;
        for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
        return split(h);
    }

    std::uint64_t next_u64() {
        ++counter_;
        return splitmix64_mix(key_ + counter_ * kGolden);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    /// Restores a stream position captured by key()/counter().
    static Rng from_state(std::uint64_t key, std::uint64_t counter) {
        Rng r;
        r.key_ = key;
        r.counter_ = counter;
        return r;
    }

    friend bool operator==(const Rng&, const Rng&) = default;

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0;
    bool has_spare_ = false;
};

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

template <typename T = float>
BasicGrid<T> gaussian(Rng& rng, Shape shape) {
    BasicGrid<T> g(std::move(shape));
    for (auto& v : g.values()) v = static_cast<T>(rng.gaussian());
    return g;
}

// ---------------------------------------------------------------------------
// Image resampling on H×W×C grids.

template <typename T>
BasicGrid<T> resize_nearest(const BasicGrid<T>& img, std::size_t out_h, std::size_t out_w) {
    if (img.rank() != 3) throw ShapeError("resize_nearest: expected H×W×C");
    const std::size_t h = img.extent(0), w = img.extent(1), c = img.extent(2);
    BasicGrid<T> out({out_h, out_w, c});
    for (std::size_t i = 0; i < out_h; ++i) {
        const std::size_t si = std::min(h - 1, (2 * i + 1) * h / (2 * out_h));
        for (std::size_t j = 0; j < out_w; ++j) {
            const std::size_t sj = std::min(w - 1, (2 * j + 1) * w / (2 * out_w));
            for (std::size_t k = 0; k < c; ++k) out(i, j, k) = img(si, sj, k);
        }
    }
    return out;
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
template <typename T>
BasicGrid<T> resize_bilinear(const BasicGrid<T>& img, std::size_t out_h, std::size_t out_w) {
    if (img.rank() != 3) throw ShapeError("resize_bilinear: expected H×W×C");
    const std::size_t h = img.extent(0), w = img.extent(1), c = img.extent(2);
    BasicGrid<T> out({out_h, out_w, c});
    const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
        const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(h - 1, y0 + 1);
        const double ty = fy - y0;
        for (std::size_t j = 0; j < out_w; ++j) {
            const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(w - 1, x0 + 1);
            const double tx = fx - x0;
            for (std::size_t k = 0; k < c; ++k) {
                const double top = img(y0, x0, k) * (1 - tx) + img(y0, x1, k) * tx;
                const double bot = img(y1, x0, k) * (1 - tx) + img(y1, x1, k) * tx;
                out(i, j, k) = static_cast<T>(top * (1 - ty) + bot * ty);
            }
        }
    }
    return out;
}

} // namespace romantex
