#pragma once

// Shared test helpers: random inputs, central differences and brute-force
// reference implementations written as plain loops, independent of the
// library's vectorized code paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cpga/memory.hpp"
#include "cpga/nn.hpp"
#include "cpga/tensor.hpp"

namespace cpga::test {

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n01(0.0, scale);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
    return m;
}

inline Mat random_unit_rows(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    Mat m = random_mat(rows, cols, rng);
    for (Eigen::Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).norm();
    return m;
}

inline Mat random_simplex_rows(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).sum();
    return m;
}

inline Labels random_labels(std::size_t n, int k, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, k - 1);
    Labels y(n);
    for (auto& v : y) v = pick(rng);
    return y;
}

// |a - b| / (|a| + |b|), with 0 when both vanish.
inline double relative_error(const Vec& analytic, const Vec& numeric) {
    const double denom = analytic.norm() + numeric.norm();
    return denom < 1e-300 ? 0.0 : (analytic - numeric).norm() / denom;
}

// Central differences of f at x with step h.
inline Vec numeric_gradient(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-4) {
    Vec g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = x(i);
        x(i) = orig + h;
        const double fp = f(x);
        x(i) = orig - h;
        const double fm = f(x);
        x(i) = orig;
        g(i) = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline Vec as_vec(const Mat& m) {
    Vec v(m.size());
    Eigen::Index t = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) v(t++) = m(i, j);
    }
    return v;
}

inline Mat as_mat(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    Eigen::Index t = 0;
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v(t++);
    }
    return m;
}

// Relative error of an analytic parameter gradient against central differences.
inline double param_gradient_error(ParamSet params, const std::function<double(const ParamSet&)>& loss,
                                   const Grads& analytic, double h = 1e-4) {
    const Vec x0 = flatten(params);
    auto f = [&](const Vec& x) {
        unflatten(x, params);
        return loss(params);
    };
    const Vec numeric = numeric_gradient(f, x0, h);
    unflatten(x0, params);
    return relative_error(flatten(analytic), numeric);
}

// ------------------------------------------------------------ oracles

inline double dot_loop(const Mat& a, Eigen::Index i, const Mat& b, Eigen::Index j) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) s += a(i, c) * b(j, c);
    return s;
}

inline double cosine_loop(const Mat& a, Eigen::Index i, const Mat& b, Eigen::Index j) {
    return dot_loop(a, i, b, j) / (std::sqrt(dot_loop(a, i, a, i)) * std::sqrt(dot_loop(b, j, b, j)));
}

// InfoNCE with every exponential materialized.
inline double oracle_infonce(const Mat& p, const Labels& labels, const std::vector<int>& positive,
                             const std::vector<std::vector<int>>& negatives, double tau) {
    double total = 0.0;
    for (std::size_t a = 0; a < labels.size(); ++a) {
        const auto ia = static_cast<Eigen::Index>(a);
        const double pos = std::exp(cosine_loop(p, ia, p, positive[a]) / tau);
        double denom = pos;
        for (int j : negatives[a]) denom += std::exp(cosine_loop(p, ia, p, j) / tau);
        total += -std::log(pos / denom);
    }
    return total / static_cast<double>(labels.size());
}

inline double oracle_weighted_contrastive(const Mat& u, const Mat& v, const Labels& y, const std::vector<double>& w,
                                          double tau) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        double denom = 0.0;
        for (Eigen::Index k = 0; k < v.rows(); ++k) denom += std::exp(dot_loop(u, i, v, k) / tau);
        const double pos = std::exp(dot_loop(u, i, v, y[static_cast<std::size_t>(i)]) / tau);
        total += -w[static_cast<std::size_t>(i)] * std::log(pos / denom);
    }
    return total / static_cast<double>(u.rows());
}

inline double oracle_neighborhood_clustering(const Mat& s) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            if (s(i, j) > 0.0) total -= s(i, j) * std::log(s(i, j));
        }
    }
    return total / static_cast<double>(s.rows());
}

inline Mat oracle_nonparametric(const Mat& u, const Mat& v, double tau) {
    Mat o(u.rows(), v.rows());
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        double denom = 0.0;
        for (Eigen::Index k = 0; k < v.rows(); ++k) denom += std::exp(dot_loop(u, i, v, k) / tau);
        for (Eigen::Index k = 0; k < v.rows(); ++k) o(i, k) = std::exp(dot_loop(u, i, v, k) / tau) / denom;
    }
    return o;
}

// Distribution over j != anchor, in bank order.
inline std::vector<double> oracle_neighbors(const Mat& bank, Eigen::Index anchor, double tau) {
    std::vector<double> e;
    double denom = 0.0;
    for (Eigen::Index j = 0; j < bank.rows(); ++j) {
        if (j == anchor) continue;
        e.push_back(std::exp(cosine_loop(bank, anchor, bank, j) / tau));
        denom += e.back();
    }
    for (auto& x : e) x /= denom;
    return e;
}

// Exhaustive cosine argmax, first maximum wins.
inline Labels oracle_assign(const Mat& q, const Mat& c) {
    Labels y(static_cast<std::size_t>(q.rows()));
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        int best = 0;
        double best_cos = -2.0;
        for (Eigen::Index k = 0; k < c.rows(); ++k) {
            const double v = cosine_loop(q, i, c, k);
            if (v > best_cos) {
                best_cos = v;
                best = static_cast<int>(k);
            }
        }
        y[static_cast<std::size_t>(i)] = best;
    }
    return y;
}

inline Mat oracle_refresh(const Mat& q, const Labels& y, const Mat& previous) {
    Mat c = previous;
    for (Eigen::Index k = 0; k < previous.rows(); ++k) {
        std::vector<double> sum(static_cast<std::size_t>(q.cols()), 0.0);
        int count = 0;
        for (Eigen::Index i = 0; i < q.rows(); ++i) {
            if (y[static_cast<std::size_t>(i)] != k) continue;
            ++count;
            for (Eigen::Index j = 0; j < q.cols(); ++j) sum[static_cast<std::size_t>(j)] += q(i, j);
        }
        if (count == 0) continue;
        for (Eigen::Index j = 0; j < q.cols(); ++j) c(k, j) = sum[static_cast<std::size_t>(j)] / count;
    }
    return c;
}

// h(t) = beta^t h(0) + (1 - beta) sum_s beta^(t-1-s) o(s).
inline RowVec oracle_bank_row(const RowVec& h0, const std::vector<RowVec>& history, double beta) {
    const auto t = static_cast<int>(history.size());
    RowVec h = std::pow(beta, t) * h0;
    for (int s = 0; s < t; ++s) h += (1.0 - beta) * std::pow(beta, t - 1 - s) * history[static_cast<std::size_t>(s)];
    return h;
}

}  // namespace cpga::test
