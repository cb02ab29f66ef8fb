#pragma once

#include "plc2/common.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace plc2 {

// Row-major dense tensor. T is float for the fast path and double for the
// reference path; the two share every kernel below so tests can diff them.
template <typename T>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), T(0));
    }
    TensorT(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        check(numel_of(shape) == static_cast<int64_t>(data.size()), ErrKind::Shape,
              "tensor data size does not match shape");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            check(d >= 0, ErrKind::Shape, "negative tensor dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const {
        check(i >= 0 && i < ndim(), ErrKind::Shape, "dimension index out of range");
        return shape[static_cast<size_t>(i)];
    }

    // 2-D accessors, used heavily by the kernels
    T& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
    T at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape);
        for (size_t i = 0; i < data.size(); i++) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor  = TensorT<float>;
using TensorD = TensorT<double>;

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); i++) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename T>
TensorT<T> zeros(std::vector<int64_t> shape) {
    return TensorT<T>(std::move(shape));
}

template <typename T>
TensorT<T> ones(std::vector<int64_t> shape) {
    TensorT<T> t(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), T(1));
    return t;
}

template <typename T>
TensorT<T> randn(Rng& rng, std::vector<int64_t> shape, double scale = 1.0) {
    TensorT<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.next_normal() * scale);
    return t;
}

// C[m,n] = A[m,k] * B[k,n]
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.ndim() == 2 && b.ndim() == 2, ErrKind::Shape, "matmul expects 2-D tensors");
    check(a.shape[1] == b.shape[0], ErrKind::Shape,
          "matmul inner dims differ: " + shape_str(a.shape) + " x " + shape_str(b.shape));
    int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    TensorT<T> c({m, n});
    for (int64_t i = 0; i < m; i++) {
        const T* arow = a.data.data() + i * k;
        T* crow = c.data.data() + i * n;
        for (int64_t p = 0; p < k; p++) {
            T av = arow[p];
            const T* brow = b.data.data() + p * n;
            for (int64_t j = 0; j < n; j++) crow[j] += av * brow[j];
        }
    }
    return c;
}

// y[seq,out] = x[seq,in] * W[out,in]^T (+ bias[out])
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias = nullptr) {
    check(x.ndim() == 2 && w.ndim() == 2, ErrKind::Shape, "linear expects 2-D tensors");
    check(x.shape[1] == w.shape[1], ErrKind::Shape,
          "linear: input width " + shape_str(x.shape) + " vs weight " + shape_str(w.shape));
    int64_t seq = x.shape[0], in = x.shape[1], out = w.shape[0];
    if (bias) {
        check(bias->ndim() == 1 && bias->shape[0] == out, ErrKind::Shape, "linear: bad bias shape");
    }
    TensorT<T> y({seq, out});
    for (int64_t t = 0; t < seq; t++) {
        const T* xi = x.data.data() + t * in;
        T* yo = y.data.data() + t * out;
        for (int64_t o = 0; o < out; o++) {
            const T* wr = w.data.data() + o * in;
            T acc = bias ? bias->data[static_cast<size_t>(o)] : T(0);
            for (int64_t i = 0; i < in; i++) acc += xi[i] * wr[i];
            yo[o] = acc;
        }
    }
    return y;
}

// y_i = x_i / sqrt(mean(x^2) + eps) * w_i, applied over the last dim
template <typename T>
TensorT<T> rmsnorm(const TensorT<T>& x, const TensorT<T>& w, double eps) {
    check(x.ndim() >= 1, ErrKind::Shape, "rmsnorm expects at least 1-D input");
    check(w.ndim() == 1, ErrKind::Shape, "rmsnorm weight must be 1-D");
    check(eps > 0, ErrKind::Config, "rmsnorm eps must be positive");
    int64_t d = x.shape.back();
    check(d == w.shape[0], ErrKind::Shape,
          "rmsnorm: last dim " + std::to_string(d) + " vs weight " + std::to_string(w.shape[0]));
    TensorT<T> y(x.shape);
    int64_t rows = d == 0 ? 0 : x.numel() / d;
    for (int64_t r = 0; r < rows; r++) {
        const T* xi = x.data.data() + r * d;
        T* yo = y.data.data() + r * d;
        double ms = 0.0;
        for (int64_t i = 0; i < d; i++) ms += double(xi[i]) * double(xi[i]);
        ms = ms / double(d) + eps;
        double inv = 1.0 / std::sqrt(ms);
        for (int64_t i = 0; i < d; i++) yo[i] = static_cast<T>(double(xi[i]) * inv * double(w.data[static_cast<size_t>(i)]));
    }
    return y;
}

template <typename T>
T silu(T x) {
    return static_cast<T>(double(x) / (1.0 + std::exp(-double(x))));
}

// ln(1 + e^x); for large x the exp would overflow, and x is already the
// answer to within machine precision
template <typename T>
T softplus(T x) {
    if (double(x) > 30.0) return x;
    return static_cast<T>(std::log1p(std::exp(double(x))));
}

template <typename T>
TensorT<T> silu(const TensorT<T>& x) {
    TensorT<T> y(x.shape);
    for (size_t i = 0; i < x.data.size(); i++) y.data[i] = silu(x.data[i]);
    return y;
}

template <typename T>
TensorT<T> softplus(const TensorT<T>& x) {
    TensorT<T> y(x.shape);
    for (size_t i = 0; i < x.data.size(); i++) y.data[i] = softplus(x.data[i]);
    return y;
}

// max-subtracted softmax over the last dim
template <typename T>
TensorT<T> softmax_lastdim(const TensorT<T>& x) {
    check(x.ndim() >= 1, ErrKind::Shape, "softmax expects at least 1-D input");
    int64_t d = x.shape.back();
    check(d > 0, ErrKind::Shape, "softmax over empty last dim");
    TensorT<T> y(x.shape);
    int64_t rows = x.numel() / d;
    for (int64_t r = 0; r < rows; r++) {
        const T* xi = x.data.data() + r * d;
        T* yo = y.data.data() + r * d;
        double mx = double(xi[0]);
        for (int64_t i = 1; i < d; i++) mx = std::max(mx, double(xi[i]));
        double sum = 0.0;
        for (int64_t i = 0; i < d; i++) {
            double e = std::exp(double(xi[i]) - mx);
            yo[i] = static_cast<T>(e);
            sum += e;
        }
        double inv = 1.0 / sum;
        for (int64_t i = 0; i < d; i++) yo[i] = static_cast<T>(double(yo[i]) * inv);
    }
    return y;
}

struct RopeParams {
    int head_dim = 0;
    double theta = 10000.0;
};

// Rotates adjacent (even, odd) pairs: pair i at absolute position p turns by
// p * theta^(-2i/head_dim). x is [seq, heads, head_dim]; the sequence starts
// at absolute position start_pos.
template <typename T>
TensorT<T> rope_apply(const TensorT<T>& x, int64_t start_pos, const RopeParams& rope) {
    check(rope.head_dim > 0 && rope.head_dim % 2 == 0, ErrKind::Config,
          "rope head_dim must be even and positive");
    check(rope.theta > 0, ErrKind::Config, "rope theta must be positive");
    check(start_pos >= 0, ErrKind::Input, "rope start_pos must be nonnegative");
    check(x.ndim() == 3 && x.shape[2] == rope.head_dim, ErrKind::Shape,
          "rope input must be [seq, heads, head_dim], got " + shape_str(x.shape));
    int64_t seq = x.shape[0], heads = x.shape[1], hd = x.shape[2];
    TensorT<T> y(x.shape);
    for (int64_t t = 0; t < seq; t++) {
        double p = double(start_pos + t);
        for (int64_t h = 0; h < heads; h++) {
            const T* xi = x.data.data() + (t * heads + h) * hd;
            T* yo = y.data.data() + (t * heads + h) * hd;
            for (int64_t i = 0; i < hd / 2; i++) {
                double freq = std::pow(rope.theta, -2.0 * double(i) / double(hd));
                double ang = p * freq;
                double c = std::cos(ang), s = std::sin(ang);
                double a = double(xi[2 * i]), b = double(xi[2 * i + 1]);
                yo[2 * i]     = static_cast<T>(a * c - b * s);
                yo[2 * i + 1] = static_cast<T>(a * s + b * c);
            }
        }
    }
    return y;
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.same_shape(b), ErrKind::Shape, "max_abs_diff shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); i++)
        m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
    return m;
}

}  // namespace plc2
