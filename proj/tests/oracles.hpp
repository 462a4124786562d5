#pragma once

// Test-only oracles, independent of the library's implementation paths:
// brute-force pair counting for AUC, dense least squares via normal
// equations, Jacobi eigenvalues, and a fine-step Euler ODE reference.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace oracle {

// O(n^2) one-vs-rest AUC: concordant pairs count 1, ties count 1/2.
inline double pairwise_auc(const std::vector<double>& score, const std::vector<char>& positive) {
    double num = 0.0;
    long long n_pos = 0, n_neg = 0;
    for (size_t i = 0; i < score.size(); ++i) {
        if (!positive[i]) continue;
        ++n_pos;
        for (size_t j = 0; j < score.size(); ++j) {
            if (positive[j]) continue;
            if (score[i] > score[j]) num += 1.0;
            else if (score[i] == score[j]) num += 0.5;
        }
    }
    n_neg = static_cast<long long>(score.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("pairwise_auc: degenerate");
    return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double pairwise_mauc(const std::vector<std::vector<double>>& scores,
                            const std::vector<int>& labels, int classes) {
    double acc = 0.0;
    int used = 0;
    for (int c = 0; c < classes; ++c) {
        std::vector<double> s;
        std::vector<char> pos;
        bool present = false;
        for (size_t i = 0; i < labels.size(); ++i) {
            s.push_back(scores[i][static_cast<size_t>(c)]);
            pos.push_back(labels[i] == c);
            present = present || labels[i] == c;
        }
        if (!present) continue;
        acc += pairwise_auc(s, pos);
        ++used;
    }
    return acc / used;
}

// Solve A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> solve_dense(std::vector<double> a, std::vector<double> b) {
    int n = static_cast<int>(b.size());
    for (int c = 0; c < n; ++c) {
        int piv = c;
        for (int r = c + 1; r < n; ++r)
            if (std::fabs(a[static_cast<size_t>(r) * n + c]) >
                std::fabs(a[static_cast<size_t>(piv) * n + c]))
                piv = r;
        if (piv != c) {
            for (int k = 0; k < n; ++k)
                std::swap(a[static_cast<size_t>(c) * n + k], a[static_cast<size_t>(piv) * n + k]);
            std::swap(b[static_cast<size_t>(c)], b[static_cast<size_t>(piv)]);
        }
        double d = a[static_cast<size_t>(c) * n + c];
        for (int r = c + 1; r < n; ++r) {
            double f = a[static_cast<size_t>(r) * n + c] / d;
            for (int k = c; k < n; ++k)
                a[static_cast<size_t>(r) * n + k] -= f * a[static_cast<size_t>(c) * n + k];
            b[static_cast<size_t>(r)] -= f * b[static_cast<size_t>(c)];
        }
    }
    std::vector<double> x(static_cast<size_t>(n), 0.0);
    for (int r = n - 1; r >= 0; --r) {
        double acc = b[static_cast<size_t>(r)];
        for (int k = r + 1; k < n; ++k) acc -= a[static_cast<size_t>(r) * n + k] * x[static_cast<size_t>(k)];
        x[static_cast<size_t>(r)] = acc / a[static_cast<size_t>(r) * n + r];
    }
    return x;
}

// Residual sum of squares of the least-squares fit of y on the columns of X
// (n rows, k columns, column-major), without intercept.
inline double least_squares_sse(const std::vector<double>& xcols, int n, int k,
                                const std::vector<double>& y) {
    if (k == 0) {
        double s = 0.0;
        for (double v : y) s += v * v;
        return s;
    }
    std::vector<double> ata(static_cast<size_t>(k) * k, 0.0), atb(static_cast<size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int r = 0; r < n; ++r)
                acc += xcols[static_cast<size_t>(i) * n + r] * xcols[static_cast<size_t>(j) * n + r];
            ata[static_cast<size_t>(i) * k + j] = acc + (i == j ? 1e-12 : 0.0);
        }
        double acc = 0.0;
        for (int r = 0; r < n; ++r) acc += xcols[static_cast<size_t>(i) * n + r] * y[static_cast<size_t>(r)];
        atb[static_cast<size_t>(i)] = acc;
    }
    std::vector<double> beta = solve_dense(ata, atb);
    double sse = 0.0;
    for (int r = 0; r < n; ++r) {
        double fit = 0.0;
        for (int i = 0; i < k; ++i) fit += xcols[static_cast<size_t>(i) * n + r] * beta[static_cast<size_t>(i)];
        sse += (y[static_cast<size_t>(r)] - fit) * (y[static_cast<size_t>(r)] - fit);
    }
    return sse;
}

// Jacobi eigenvalues of a symmetric matrix (row-major n x n).
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a, int n) {
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += a[static_cast<size_t>(i) * n + j] * a[static_cast<size_t>(i) * n + j];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                double apq = a[static_cast<size_t>(p) * n + q];
                if (std::fabs(apq) < 1e-18) continue;
                double app = a[static_cast<size_t>(p) * n + p], aqq = a[static_cast<size_t>(q) * n + q];
                double phi = 0.5 * std::atan2(2.0 * apq, aqq - app);
                double c = std::cos(phi), s = std::sin(phi);
                for (int k = 0; k < n; ++k) {
                    double akp = a[static_cast<size_t>(k) * n + p], akq = a[static_cast<size_t>(k) * n + q];
                    a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
                    a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = a[static_cast<size_t>(p) * n + k], aqk = a[static_cast<size_t>(q) * n + k];
                    a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
                    a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> ev(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ev[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * n + i];
    return ev;
}

// Scalar fine-step Euler reference for ODE solver checks.
template <class F>
double euler_reference(double y0, double t0, double t1, long long steps, F&& f) {
    double y = y0, h = (t1 - t0) / static_cast<double>(steps);
    for (long long i = 0; i < steps; ++i) y += h * f(t0 + static_cast<double>(i) * h, y);
    return y;
}

} // namespace oracle
