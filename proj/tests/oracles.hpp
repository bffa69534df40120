// Independent reference implementations used only by tests: naive loops in
// double precision and central finite differences, never the library's
// compute paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "lr/tensor.hpp"

namespace oracle {

using lr::Real;

inline std::vector<double> to_d(std::span<const Real> v) {
    return std::vector<double>(v.begin(), v.end());
}

// Plain triple loop.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                acc += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
            }
            out[static_cast<size_t>(i) * n + j] = acc;
        }
    }
    return out;
}

// Direct six-loop cross-correlation with zero padding.
inline std::vector<double> conv2d(const std::vector<double>& x, const std::vector<double>& k,
                                  int n, int c, int h, int w, int f, int stride, int pad) {
    const int oh = (h + 2 * pad - 3) / stride + 1;
    const int ow = (w + 2 * pad - 3) / stride + 1;
    std::vector<double> out(static_cast<size_t>(n) * f * oh * ow, 0.0);
    for (int ni = 0; ni < n; ++ni) {
        for (int fi = 0; fi < f; ++fi) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int ci = 0; ci < c; ++ci) {
                        for (int ky = 0; ky < 3; ++ky) {
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += x[((static_cast<size_t>(ni) * c + ci) * h + iy) * w + ix] *
                                       k[((static_cast<size_t>(fi) * c + ci) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                    out[((static_cast<size_t>(ni) * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    return out;
}

inline std::vector<double> relu(std::vector<double> v) {
    for (double& x : v) x = std::max(0.0, x);
    return v;
}

inline std::vector<double> add_row_bias(std::vector<double> x, const std::vector<double>& b,
                                        int n, int d) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) x[static_cast<size_t>(i) * d + j] += b[static_cast<size_t>(j)];
    }
    return x;
}

inline std::vector<double> add_channel_bias(std::vector<double> x, const std::vector<double>& b,
                                            int n, int c, int hw) {
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            for (int p = 0; p < hw; ++p) {
                x[(static_cast<size_t>(i) * c + ch) * hw + p] += b[static_cast<size_t>(ch)];
            }
        }
    }
    return x;
}

inline double softmax_cross_entropy(const std::vector<double>& logits,
                                    const std::vector<int>& labels, int n, int c) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<size_t>(i) * c;
        double m = row[0];
        for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(row[j] - m);
        acc += std::log(z) - (row[labels[static_cast<size_t>(i)]] - m);
    }
    return acc / n;
}

// Central finite differences of a scalar function of one tensor's entries.
// Perturbations land on the 32-bit values; the evaluation itself should run
// through a double-precision oracle forward for a clean noise floor.
inline std::vector<double> central_diff(std::span<Real> values,
                                        const std::function<double()>& eval, double step = 1e-3) {
    std::vector<double> grad(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        const Real saved = values[i];
        const Real up_v = static_cast<Real>(saved + step);
        const Real down_v = static_cast<Real>(saved - step);
        values[i] = up_v;
        const double up = eval();
        values[i] = down_v;
        const double down = eval();
        values[i] = saved;
        // divide by the delta actually realized on the 32-bit value
        grad[i] = (up - down) / (static_cast<double>(up_v) - static_cast<double>(down_v));
    }
    return grad;
}

// Fraction of coordinates where the analytic gradient agrees with the
// reference within a relative tolerance. The denominator is floored at the
// gradient's own magnitude scale so near-zero coordinates compare against
// the 32-bit noise floor rather than against themselves.
inline double grad_agreement(std::span<const Real> analytic, const std::vector<double>& reference,
                             double rel_tol = 1e-4) {
    double scale = 0.0;
    for (double r : reference) scale = std::max(scale, std::fabs(r));
    for (Real a : analytic) scale = std::max(scale, std::fabs(static_cast<double>(a)));
    if (scale == 0.0) scale = 1.0;
    size_t ok = 0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double a = static_cast<double>(analytic[i]);
        const double r = reference[i];
        const double denom = std::max({std::fabs(a), std::fabs(r), scale});
        if (std::fabs(a - r) <= rel_tol * denom) ++ok;
    }
    return analytic.empty() ? 1.0 : static_cast<double>(ok) / static_cast<double>(analytic.size());
}

// O(n^2) pairwise AUC with half credit for ties.
inline double pairwise_auc(const std::vector<double>& clean, const std::vector<double>& adv) {
    double acc = 0.0;
    for (double a : adv) {
        for (double c : clean) {
            if (a > c) {
                acc += 1.0;
            } else if (a == c) {
                acc += 0.5;
            }
        }
    }
    return acc / (static_cast<double>(clean.size()) * static_cast<double>(adv.size()));
}

}  // namespace oracle
