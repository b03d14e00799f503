#pragma once

// Weighted logistic regression with homogeneous linear constraints on the
// coefficients (G theta >= 0, E theta = 0). Problems here have at most three
// coefficients and a handful of constraints, so the solver enumerates active
// sets: for each subset it minimises the objective on the subspace where those
// constraints hold with equality (damped Newton with backtracking), and keeps
// the best feasible candidate. For a convex objective that candidate is the
// constrained optimum.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "topncal/common.hpp"

namespace topncal {

struct LogisticProblem {
    std::size_t dim = 0;
    std::vector<double> features;  // n x dim, row-major
    std::vector<double> labels;
    std::vector<double> weights;
    std::vector<std::vector<double>> inequalities;  // rows g with g . theta >= 0
    std::vector<std::vector<double>> equalities;    // rows e with e . theta == 0

    std::size_t size() const noexcept { return labels.size(); }
};

struct SolverOptions {
    double gradient_tolerance = 1e-8;  // on the weight-normalised objective
    int max_iterations = 200;
};

struct LogisticFit {
    std::vector<double> theta;
    double objective = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

struct ObjectiveValue {
    double value = 0.0;
    std::vector<double> gradient;
};

// Weighted mean negative log-likelihood (1/W) sum_k w_k [softplus(z_k) - y_k z_k],
// z_k = x_k . theta, and its gradient.
inline ObjectiveValue logistic_objective(const LogisticProblem& p, std::span<const double> theta) {
    ObjectiveValue out;
    out.gradient.assign(p.dim, 0.0);
    double total_w = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double* x = &p.features[k * p.dim];
        double z = 0.0;
        for (std::size_t j = 0; j < p.dim; ++j) z += x[j] * theta[j];
        const double w = p.weights[k];
        out.value += w * (softplus(z) - p.labels[k] * z);
        const double r = w * (sigmoid(z) - p.labels[k]);
        for (std::size_t j = 0; j < p.dim; ++j) out.gradient[j] += r * x[j];
        total_w += w;
    }
    out.value /= total_w;
    for (auto& g : out.gradient) g /= total_w;
    return out;
}

namespace detail {

using Matrix = std::vector<std::vector<double>>;

// Orthonormal basis (columns returned as rows) of {theta : A theta = 0}.
inline Matrix null_space_basis(const Matrix& rows, std::size_t dim) {
    // Orthonormalise the constraint rows, then complete with unit vectors.
    Matrix range;
    for (const auto& r : rows) {
        std::vector<double> v = r;
        for (const auto& q : range) {
            double d = 0.0;
            for (std::size_t j = 0; j < dim; ++j) d += v[j] * q[j];
            for (std::size_t j = 0; j < dim; ++j) v[j] -= d * q[j];
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n > 1e-12) {
            for (auto& x : v) x /= n;
            range.push_back(std::move(v));
        }
    }
    Matrix basis;
    for (std::size_t e = 0; e < dim && range.size() + basis.size() < dim; ++e) {
        std::vector<double> v(dim, 0.0);
        v[e] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto* set : {&range, &basis}) {
                for (const auto& q : *set) {
                    double d = 0.0;
                    for (std::size_t j = 0; j < dim; ++j) d += v[j] * q[j];
                    for (std::size_t j = 0; j < dim; ++j) v[j] -= d * q[j];
                }
            }
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n > 1e-8) {
            for (auto& x : v) x /= n;
            basis.push_back(std::move(v));
        }
    }
    return basis;
}

// Solves (H + mu I) x = b by Cholesky; false when not positive definite.
inline bool cholesky_solve(Matrix h, std::vector<double> b, double mu, std::vector<double>& x) {
    const std::size_t n = b.size();
    for (std::size_t i = 0; i < n; ++i) h[i][i] += mu;
    for (std::size_t j = 0; j < n; ++j) {
        double d = h[j][j];
        for (std::size_t k = 0; k < j; ++k) d -= h[j][k] * h[j][k];
        if (!(d > 0.0)) return false;
        h[j][j] = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = h[i][j];
            for (std::size_t k = 0; k < j; ++k) s -= h[i][k] * h[j][k];
            h[i][j] = s / h[j][j];
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= h[i][k] * b[k];
        b[i] = s / h[i][i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= h[k][ii] * b[k];
        b[ii] = s / h[ii][ii];
    }
    x = std::move(b);
    return true;
}

// Minimises the objective over theta = Z^T eta.
inline LogisticFit minimize_on_subspace(const LogisticProblem& p, const Matrix& basis, const SolverOptions& opt) {
    const std::size_t m = basis.size();
    const std::size_t d = p.dim;
    auto to_theta = [&](const std::vector<double>& eta) {
        std::vector<double> theta(d, 0.0);
        for (std::size_t a = 0; a < m; ++a)
            for (std::size_t j = 0; j < d; ++j) theta[j] += eta[a] * basis[a][j];
        return theta;
    };

    LogisticFit fit;
    std::vector<double> eta(m, 0.0);
    std::vector<double> theta = to_theta(eta);
    if (m == 0) {
        fit.theta = theta;
        fit.objective = logistic_objective(p, theta).value;
        fit.converged = true;
        return fit;
    }

    // Feature rows projected onto the subspace.
    std::vector<double> proj(p.size() * m);
    double total_w = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        for (std::size_t a = 0; a < m; ++a) {
            double v = 0.0;
            for (std::size_t j = 0; j < d; ++j) v += p.features[k * d + j] * basis[a][j];
            proj[k * m + a] = v;
        }
        total_w += p.weights[k];
    }

    auto evaluate = [&](const std::vector<double>& e, std::vector<double>* grad, Matrix* hess) {
        double value = 0.0;
        if (grad) grad->assign(m, 0.0);
        if (hess) hess->assign(m, std::vector<double>(m, 0.0));
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double* x = &proj[k * m];
            double z = 0.0;
            for (std::size_t a = 0; a < m; ++a) z += x[a] * e[a];
            const double w = p.weights[k];
            value += w * (softplus(z) - p.labels[k] * z);
            if (grad) {
                const double sg = sigmoid(z);
                const double r = w * (sg - p.labels[k]);
                for (std::size_t a = 0; a < m; ++a) (*grad)[a] += r * x[a];
                if (hess) {
                    const double c = w * sg * (1.0 - sg);
                    for (std::size_t a = 0; a < m; ++a)
                        for (std::size_t b = 0; b <= a; ++b) (*hess)[a][b] += c * x[a] * x[b];
                }
            }
        }
        value /= total_w;
        if (grad) for (auto& g : *grad) g /= total_w;
        if (hess) {
            for (std::size_t a = 0; a < m; ++a)
                for (std::size_t b = 0; b <= a; ++b) {
                    (*hess)[a][b] /= total_w;
                    (*hess)[b][a] = (*hess)[a][b];
                }
        }
        return value;
    };

    std::vector<double> grad;
    Matrix hess;
    double value = evaluate(eta, &grad, &hess);
    bool newton_ok = true;
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        double gnorm = 0.0;
        for (double g : grad) gnorm = std::max(gnorm, std::abs(g));
        if (gnorm <= opt.gradient_tolerance) {
            fit.converged = true;
            break;
        }
        std::vector<double> step;
        std::vector<double> neg_grad(m);
        for (std::size_t a = 0; a < m; ++a) neg_grad[a] = -grad[a];
        if (newton_ok) {
            // Levenberg damping only when the Hessian is not numerically positive definite.
            double mu = 0.0;
            bool solved = false;
            for (int tries = 0; tries < 30 && !solved; ++tries) {
                solved = cholesky_solve(hess, neg_grad, mu, step);
                mu = mu == 0.0 ? 1e-12 : mu * 10.0;
            }
            if (!solved) newton_ok = false;
        }
        if (!newton_ok) step = neg_grad;

        double slope = 0.0;
        for (std::size_t a = 0; a < m; ++a) slope += grad[a] * step[a];
        if (!(slope < 0.0)) {
            if (newton_ok) {
                newton_ok = false;  // fall back to gradient descent
                continue;
            }
            break;
        }
        double t = 1.0;
        std::vector<double> trial(m);
        double trial_value = value;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t a = 0; a < m; ++a) trial[a] = eta[a] + t * step[a];
            trial_value = evaluate(trial, nullptr, nullptr);
            if (std::isfinite(trial_value) && trial_value <= value + 1e-4 * t * slope) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            if (newton_ok) {
                newton_ok = false;
                continue;
            }
            // No further decrease is representable; treat as converged when the
            // gradient is already tiny relative to the objective scale.
            fit.converged = gnorm <= 1e3 * opt.gradient_tolerance;
            break;
        }
        eta = trial;
        value = evaluate(eta, &grad, &hess);
    }
    fit.iterations = it;
    fit.theta = to_theta(eta);
    fit.objective = value;
    return fit;
}

}  // namespace detail

inline LogisticFit fit_constrained_logistic(const LogisticProblem& p, const SolverOptions& opt = {}) {
    if (p.size() == 0) throw FitError("logistic fit: no samples");
    const std::size_t n_ineq = p.inequalities.size();
    if (n_ineq > 16) throw FitError("logistic fit: too many inequality constraints");

    LogisticFit best;
    for (std::size_t mask = 0; mask < (std::size_t{1} << n_ineq); ++mask) {
        detail::Matrix active = p.equalities;
        for (std::size_t c = 0; c < n_ineq; ++c)
            if (mask & (std::size_t{1} << c)) active.push_back(p.inequalities[c]);
        const auto basis = detail::null_space_basis(active, p.dim);
        LogisticFit cand = detail::minimize_on_subspace(p, basis, opt);
        bool feasible = std::all_of(cand.theta.begin(), cand.theta.end(), [](double v) { return std::isfinite(v); });
        for (const auto& g : p.inequalities) {
            double v = 0.0, scale = 0.0;
            for (std::size_t j = 0; j < p.dim; ++j) {
                v += g[j] * cand.theta[j];
                scale += std::abs(g[j] * cand.theta[j]);
            }
            if (v < -1e-10 * std::max(1.0, scale)) feasible = false;
        }
        if (feasible && cand.objective < best.objective) best = std::move(cand);
    }
    if (best.theta.empty()) throw FitError("logistic fit: no feasible solution found");
    return best;
}

}  // namespace topncal
