#pragma once

#include <cstddef>
#include <vector>

#include "kvlock/errors.hpp"

namespace kvlock {

// Dense latent tensor with fixed axis convention (C, T, h, w), row-major.
// Stored in double; file formats quantize to f32 at the boundary.
struct Latent {
    int c = 0, t = 0, h = 0, w = 0;
    std::vector<double> v;

    Latent() = default;
    Latent(int c_, int t_, int h_, int w_, double fill = 0.0)
        : c(c_), t(t_), h(h_), w(w_),
          v(static_cast<std::size_t>(c_) * t_ * h_ * w_, fill) {}

    std::size_t size() const { return v.size(); }

    std::size_t index(int ci, int ti, int yi, int xi) const {
        return ((static_cast<std::size_t>(ci) * t + ti) * h + yi) * w + xi;
    }
    double& at(int ci, int ti, int yi, int xi) { return v[index(ci, ti, yi, xi)]; }
    double at(int ci, int ti, int yi, int xi) const { return v[index(ci, ti, yi, xi)]; }

    bool same_shape(const Latent& o) const {
        return c == o.c && t == o.t && h == o.h && w == o.w;
    }
};

void require_same_shape(const Latent& a, const Latent& b, const char* what);
bool all_finite(const Latent& x);

// Token-major matrix (rows = tokens), double storage.
struct Matrix {
    int rows = 0, cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0)
        : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

    const double* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }
    double* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
};

// a (m×k) · b (k×n), accumulated in double.
Matrix matmul(const Matrix& a, const Matrix& b);

// Row-local layer norm without learnable parameters, epsilon 1e-5.
Matrix layer_norm(const Matrix& x);

} // namespace kvlock
