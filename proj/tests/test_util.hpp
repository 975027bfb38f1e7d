#pragma once

// Shared test helpers: independent brute-force oracles (explicit loops, no
// shared code with the library's penalty/graph implementations) and a central
// finite-difference gradient checker.

#include <cmath>
#include <functional>
#include <vector>

#include "pmdg/rng.hpp"
#include "pmdg/tensor.hpp"

namespace oracle {

// mean CE via direct per-row softmax loops
inline double soft_cross_entropy(const pmdg::Tensor& logits, const pmdg::Tensor& targets) {
    int n = logits.dim(0), c = logits.dim(1);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(logits.at(i, j) - mx);
        double lse = mx + std::log(z);
        for (int j = 0; j < c; ++j) total -= targets.at(i, j) * (logits.at(i, j) - lse);
    }
    return total / n;
}

inline double coral(const pmdg::Tensor& a, const pmdg::Tensor& b) {
    int n = a.dim(0), m = b.dim(0), d = a.dim(1);
    std::vector<double> mu_a(d, 0.0), mu_b(d, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) mu_a[j] += a.at(i, j) / n;
    }
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < d; ++j) mu_b[j] += b.at(i, j) / m;
    }
    std::vector<std::vector<double>> ca(d, std::vector<double>(d, 0.0)), cb = ca;
    for (int p = 0; p < d; ++p) {
        for (int q = 0; q < d; ++q) {
            for (int i = 0; i < n; ++i) ca[p][q] += (a.at(i, p) - mu_a[p]) * (a.at(i, q) - mu_a[q]);
            for (int i = 0; i < m; ++i) cb[p][q] += (b.at(i, p) - mu_b[p]) * (b.at(i, q) - mu_b[q]);
            ca[p][q] /= (n - 1);
            cb[p][q] /= (m - 1);
        }
    }
    double mean_term = 0.0, cov_term = 0.0;
    for (int j = 0; j < d; ++j) mean_term += (mu_a[j] - mu_b[j]) * (mu_a[j] - mu_b[j]);
    for (int p = 0; p < d; ++p) {
        for (int q = 0; q < d; ++q) cov_term += (ca[p][q] - cb[p][q]) * (ca[p][q] - cb[p][q]);
    }
    return mean_term / d + cov_term / (d * d);
}

inline double mmd(const pmdg::Tensor& a, const pmdg::Tensor& b, const std::vector<double>& gammas) {
    int n = a.dim(0), m = b.dim(0), d = a.dim(1);
    auto kernel = [&](const pmdg::Tensor& x, int i, const pmdg::Tensor& y, int j) {
        double d2 = 0.0;
        for (int k = 0; k < d; ++k) {
            double diff = x.at(i, k) - y.at(j, k);
            d2 += diff * diff;
        }
        double s = 0.0;
        for (double g : gammas) s += std::exp(-g * d2);
        return s;
    };
    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) kxx += kernel(a, i, a, j);
    }
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) kyy += kernel(b, i, b, j);
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) kxy += kernel(a, i, b, j);
    }
    return kxx / (static_cast<double>(n) * n) + kyy / (static_cast<double>(m) * m) -
           2.0 * kxy / (static_cast<double>(n) * m);
}

// d/dw of mean CE(w*z, t) at w=1 by central finite differences, then squared
// (plain) or split-half product.
inline double irm(const pmdg::Tensor& logits, const pmdg::Tensor& targets, bool split_half) {
    int n = logits.dim(0), c = logits.dim(1);
    auto risk_at_w = [&](double w, int parity) {
        pmdg::Tensor scaled = logits;
        for (std::int64_t i = 0; i < scaled.size(); ++i) scaled[i] *= w;
        double total = 0.0;
        int count = 0;
        for (int i = 0; i < n; ++i) {
            if (parity >= 0 && i % 2 != parity) continue;
            double mx = scaled.at(i, 0);
            for (int j = 1; j < c; ++j) mx = std::max(mx, scaled.at(i, j));
            double z = 0.0;
            for (int j = 0; j < c; ++j) z += std::exp(scaled.at(i, j) - mx);
            double lse = mx + std::log(z);
            for (int j = 0; j < c; ++j) total -= targets.at(i, j) * (scaled.at(i, j) - lse);
            ++count;
        }
        return total / count;
    };
    const double h = 1e-6;
    if (!split_half) {
        double g = (risk_at_w(1.0 + h, -1) - risk_at_w(1.0 - h, -1)) / (2.0 * h);
        return g * g;
    }
    double g1 = (risk_at_w(1.0 + h, 0) - risk_at_w(1.0 - h, 0)) / (2.0 * h);
    double g2 = (risk_at_w(1.0 + h, 1) - risk_at_w(1.0 - h, 1)) / (2.0 * h);
    return g1 * g2;
}

inline double vrex(const std::vector<double>& risks) {
    double mean = 0.0;
    for (double r : risks) mean += r;
    mean /= static_cast<double>(risks.size());
    double var = 0.0;
    for (double r : risks) var += (r - mean) * (r - mean);
    return var / static_cast<double>(risks.size());
}

inline double sd(const pmdg::Tensor& logits) {
    double s = 0.0;
    for (std::int64_t i = 0; i < logits.size(); ++i) s += logits[i] * logits[i];
    return s / static_cast<double>(logits.size());
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace oracle

namespace testutil {

inline pmdg::Tensor random_tensor(std::vector<int> shape, pmdg::RngStream& rng, double lo = -1.0,
                                  double hi = 1.0) {
    pmdg::Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline double rel_err(double got, double want) {
    double denom = std::max(std::abs(want), 1e-12);
    return std::abs(got - want) / denom;
}

// Central finite differences against an analytic gradient over a flat
// parameter view. loss() must be a pure function of the parameters.
struct GradCheckResult {
    double max_rel_err = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

inline GradCheckResult finite_difference_check(const std::function<double()>& loss,
                                               const std::vector<double*>& params,
                                               const std::vector<double>& analytic_grads,
                                               double h = 1e-5) {
    GradCheckResult res;
    for (std::size_t i = 0; i < params.size(); ++i) {
        double saved = *params[i];
        double step = h * std::max(1.0, std::abs(saved));
        *params[i] = saved + step;
        double up = loss();
        *params[i] = saved - step;
        double down = loss();
        *params[i] = saved;
        double numeric = (up - down) / (2.0 * step);
        double denom = std::max({std::abs(numeric), std::abs(analytic_grads[i]), 1e-6});
        double err = std::abs(numeric - analytic_grads[i]) / denom;
        if (err > res.max_rel_err) {
            res.max_rel_err = err;
            res.worst_analytic = analytic_grads[i];
            res.worst_numeric = numeric;
        }
    }
    return res;
}

}  // namespace testutil
