#include <cmath>
#include <deque>

#include <Eigen/Dense>

#include "halprobe/error.hpp"
#include "halprobe/probes.hpp"

namespace halprobe {

namespace {

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double logistic_objective(const Eigen::MatrixXd& X, std::span<const int> y, double l2_lambda,
                          const Eigen::VectorXd& params, Eigen::VectorXd* gradient) {
  const Eigen::Index d = X.cols();
  const double n = static_cast<double>(X.rows());
  const auto w = params.head(d);
  const double b = params(d);
  const Eigen::VectorXd z = (X * w).array() + b;

  double loss = 0.0;
  Eigen::VectorXd residual(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double yi = y[static_cast<std::size_t>(i)];
    loss += softplus(z(i)) - yi * z(i);
    residual(i) = sigmoid(z(i)) - yi;
  }
  loss = loss / n + 0.5 * l2_lambda / n * w.squaredNorm();
  if (gradient) {
    gradient->resize(d + 1);
    gradient->head(d) = (X.transpose() * residual) / n + (l2_lambda / n) * w;
    (*gradient)(d) = residual.sum() / n;
  }
  return loss;
}

LinearProbe fit_logistic(const Eigen::MatrixXd& X, std::span<const int> y, const LogisticOptions& options) {
  if (static_cast<std::size_t>(X.rows()) != y.size())
    throw Error(ErrorCode::DIMENSION_MISMATCH, "feature rows and labels differ in length");
  if (X.rows() < 2) throw Error(ErrorCode::INVALID_ARGUMENT, "logistic regression needs at least 2 samples");
  if (!X.allFinite()) throw Error(ErrorCode::INVALID_ARGUMENT, "features must be finite");
  require_both_classes(y);
  if (options.l2_lambda < 0.0) throw Error(ErrorCode::INVALID_ARGUMENT, "l2_lambda must be non-negative");

  LinearProbe probe;
  probe.l2_lambda = options.l2_lambda;
  probe.standardizer = fit_standardizer(X);
  const Eigen::MatrixXd Xs = probe.standardizer.apply(X);
  const Eigen::Index dim = Xs.cols() + 1;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd g;
  double f = logistic_objective(Xs, y, options.l2_lambda, x, &g);
  SolverReport& rep = probe.report;
  rep.initial_loss = f;

  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;  // (s, y) pairs
  Eigen::VectorXd g_new;
  for (rep.iterations = 0; rep.iterations < options.max_iter; ++rep.iterations) {
    if (g.lpNorm<Eigen::Infinity>() <= options.tol) {
      rep.converged = true;
      break;
    }
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(memory.size());
    for (std::size_t k = memory.size(); k-- > 0;) {
      const auto& [s, yk] = memory[k];
      alpha[k] = s.dot(q) / yk.dot(s);
      q -= alpha[k] * yk;
    }
    if (!memory.empty()) {
      const auto& [s, yk] = memory.back();
      q *= s.dot(yk) / yk.squaredNorm();
    } else {
      q /= std::max(1.0, g.norm());
    }
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const auto& [s, yk] = memory[k];
      const double beta = yk.dot(q) / yk.dot(s);
      q += (alpha[k] - beta) * s;
    }
    Eigen::VectorXd direction = -q;
    double slope = g.dot(direction);
    if (!(slope < 0.0)) {
      memory.clear();
      direction = -g / std::max(1.0, g.norm());
      slope = g.dot(direction);
    }

    // Backtracking Armijo line search.
    double step = 1.0;
    double f_new = 0.0;
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      x_new = x + step * direction;
      f_new = logistic_objective(Xs, y, options.l2_lambda, x_new, &g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd yk = g_new - g;
    if (s.dot(yk) > 1e-12 * s.norm() * yk.norm()) {
      memory.emplace_back(std::move(s), std::move(yk));
      if (static_cast<int>(memory.size()) > options.history) memory.pop_front();
    }
    x = std::move(x_new);
    g = g_new;
    f = f_new;
  }
  if (!rep.converged && g.lpNorm<Eigen::Infinity>() <= options.tol) rep.converged = true;
  rep.grad_max_norm = g.lpNorm<Eigen::Infinity>();
  rep.final_loss = f;
  probe.weights = x.head(dim - 1);
  probe.bias = x(dim - 1);
  return probe;
}

Eigen::VectorXd predict_linear(const LinearProbe& probe, const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd Xs = probe.standardizer.apply(X);
  const Eigen::VectorXd z = (Xs * probe.weights).array() + probe.bias;
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

}  // namespace halprobe
