#include "kvlock/tensor.hpp"

#include <cmath>
#include <string>

namespace kvlock {

void require_same_shape(const Latent& a, const Latent& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ConfigError(std::string(what) + ": shape mismatch (" + std::to_string(a.c) + "," +
                          std::to_string(a.t) + "," + std::to_string(a.h) + "," +
                          std::to_string(a.w) + ") vs (" + std::to_string(b.c) + "," +
                          std::to_string(b.t) + "," + std::to_string(b.h) + "," +
                          std::to_string(b.w) + ")");
    }
}

bool all_finite(const Latent& x) {
    for (double d : x.v) {
        if (!std::isfinite(d)) return false;
    }
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ConfigError("matmul: inner dimensions " + std::to_string(a.cols) + " vs " +
                          std::to_string(b.rows));
    }
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* orow = out.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            if (aik == 0.0) continue;
            const double* br = b.row(k);
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * br[j];
        }
    }
    return out;
}

Matrix layer_norm(const Matrix& x) {
    Matrix out(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        const double* r = x.row(i);
        double mean = 0.0;
        for (int j = 0; j < x.cols; ++j) mean += r[j];
        mean /= x.cols;
        double var = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            const double d = r[j] - mean;
            var += d * d;
        }
        var /= x.cols;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        double* o = out.row(i);
        for (int j = 0; j < x.cols; ++j) o[j] = (r[j] - mean) * inv;
    }
    return out;
}

} // namespace kvlock
