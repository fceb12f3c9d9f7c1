#pragma once

// Independent reference implementations used by the tests. They share no code
// with the library beyond the Eigen matrix type.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Two-pass covariance with explicit loops, 1/(M-1) normalization.
inline Matrix loop_covariance(const Matrix& x) {
    const auto m = x.rows();
    const auto n = x.cols();
    std::vector<double> mean(n, 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index t = 0; t < m; ++t) mean[j] += x(t, j);
        mean[j] /= static_cast<double>(m);
    }
    Matrix s(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
            double acc = 0.0;
            for (Eigen::Index t = 0; t < m; ++t) acc += (x(t, a) - mean[a]) * (x(t, b) - mean[b]);
            s(a, b) = acc / static_cast<double>(m - 1);
        }
    }
    return s;
}

// log det via Cholesky; NaN when not positive definite.
inline double logdet_pd(const Matrix& q) {
    Eigen::LLT<Matrix> llt(q);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
    const Matrix l = llt.matrixL();
    double s = 0.0;
    for (Eigen::Index i = 0; i < q.rows(); ++i) s += 2.0 * std::log(l(i, i));
    return s;
}

inline double glasso_objective(const Matrix& s, const Matrix& q, double lambda, bool penalize_diagonal = true) {
    const double ld = logdet_pd(q);
    if (std::isnan(ld)) return std::numeric_limits<double>::infinity();
    double trace = 0.0;
    double l1 = 0.0;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        for (Eigen::Index j = 0; j < q.cols(); ++j) {
            trace += s(i, j) * q(j, i);
            if (i != j || penalize_diagonal) l1 += std::abs(q(i, j));
        }
    }
    return trace - ld + lambda * l1;
}

// Minimizes the graphical-lasso objective by cyclic coordinate descent over
// the free entries (i <= j). Each one-dimensional subproblem is convex: a grid
// scan brackets the minimizer, then bisection on the analytic one-sided
// derivatives locates it, including when it sits on the L1 kink at zero.
inline Matrix glasso_grid_bisection(const Matrix& s, double lambda, bool penalize_diagonal = true,
                                    int max_sweeps = 5000) {
    const auto n = s.rows();
    Matrix q = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) q(i, i) = 1.0 / (s(i, i) + lambda);

    auto with = [&](Eigen::Index i, Eigen::Index j, double t) {
        Matrix c = q;
        c(i, j) = t;
        c(j, i) = t;
        return c;
    };
    // One-sided derivatives of t -> objective(Q with q_ij = q_ji = t).
    auto derivatives = [&](Eigen::Index i, Eigen::Index j, double t, double& left, double& right) {
        const Matrix c = with(i, j, t);
        if (std::isnan(logdet_pd(c))) {
            left = right = std::numeric_limits<double>::quiet_NaN();
            return;
        }
        const Matrix w = c.inverse();
        const double mult = (i == j) ? 1.0 : 2.0;
        const double smooth = mult * (s(i, j) - w(i, j));
        const double lam = (i == j && !penalize_diagonal) ? 0.0 : mult * lambda;
        if (t > 0.0) {
            left = right = smooth + lam;
        } else if (t < 0.0) {
            left = right = smooth - lam;
        } else {
            left = smooth - lam;
            right = smooth + lam;
        }
    };
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double moved = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = i; j < n; ++j) {
                const double cur = q(i, j);
                const double width = std::max(1.0, 2.0 * std::abs(cur));
                // Grid bracket: feasible points around the current value.
                const int g = 40;
                double best_t = cur;
                double best_v = glasso_objective(s, q, lambda, penalize_diagonal);
                for (int k = 0; k <= g; ++k) {
                    const double t = cur - width + 2.0 * width * k / g;
                    const double v = glasso_objective(s, with(i, j, t), lambda, penalize_diagonal);
                    if (v < best_v) {
                        best_v = v;
                        best_t = t;
                    }
                }
                double lo = best_t - 2.0 * width / g;
                double hi = best_t + 2.0 * width / g;
                while (!std::isfinite(glasso_objective(s, with(i, j, lo), lambda, penalize_diagonal))) lo = 0.5 * (lo + best_t);
                while (!std::isfinite(glasso_objective(s, with(i, j, hi), lambda, penalize_diagonal))) hi = 0.5 * (hi + best_t);
                double t = best_t;
                for (int it = 0; it < 200; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    if (mid <= lo || mid >= hi) break;
                    double left = 0.0, right = 0.0;
                    derivatives(i, j, mid, left, right);
                    if (right < 0.0) {
                        lo = mid;
                    } else if (left > 0.0) {
                        hi = mid;
                    } else {
                        lo = hi = mid;
                        break;
                    }
                    t = mid;
                }
                t = 0.5 * (lo + hi);
                if (i != j) {
                    double left = 0.0, right = 0.0;
                    derivatives(i, j, 0.0, left, right);
                    if (left <= 0.0 && right >= 0.0) t = 0.0;
                }
                moved = std::max(moved, std::abs(t - cur));
                q(i, j) = t;
                q(j, i) = t;
            }
        }
        if (moved < 1e-13) break;
    }
    return q;
}

// Largest violation of the graphical-lasso optimality conditions.
inline double glasso_kkt_violation(const Matrix& s, const Matrix& q, double lambda, bool penalize_diagonal = true) {
    const Matrix w = q.inverse();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        for (Eigen::Index j = 0; j < q.cols(); ++j) {
            const double g = s(i, j) - w(i, j);
            const double lam = (i == j && !penalize_diagonal) ? 0.0 : lambda;
            double v;
            if (q(i, j) == 0.0) {
                v = std::max(0.0, std::abs(g) - lam);
            } else {
                v = std::abs(g + lam * (q(i, j) > 0.0 ? 1.0 : -1.0));
            }
            worst = std::max(worst, v);
        }
    }
    return worst;
}

inline Matrix random_spd(std::mt19937_64& rng, int n, double jitter = 0.3) {
    std::normal_distribution<double> nd;
    Matrix a(n, n + 2);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n + 2; ++j) a(i, j) = nd(rng);
    }
    Matrix s = a * a.transpose() / static_cast<double>(n + 2);
    s.diagonal().array() += jitter;
    return s;
}

// Central difference of f with respect to the variable x.
inline double central_difference(const std::function<double()>& f, double& x, double h) {
    const double saved = x;
    x = saved + h;
    const double up = f();
    x = saved - h;
    const double down = f();
    x = saved;
    return (up - down) / (2.0 * h);
}

// Relative error with an absolute fallback near zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
    const double diff = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < floor) return diff < floor ? 0.0 : diff / floor;
    return diff / scale;
}

}  // namespace oracle
