#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "halprobe/error.hpp"
#include "halprobe/probes.hpp"
#include "halprobe/rng.hpp"

namespace halprobe {

namespace {

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Pre-activations Z[l] and activations A[l] (A[0] = X), rows are samples.
struct Trace {
  std::vector<Eigen::MatrixXd> Z;
  std::vector<Eigen::MatrixXd> A;
};

Trace forward(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& X) {
  Trace t;
  t.A.push_back(X);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = t.A.back() * layers[l].W.transpose();
    z.rowwise() += layers[l].b.transpose();
    t.Z.push_back(z);
    if (l + 1 < layers.size()) t.A.push_back(z.cwiseMax(0.0));
  }
  return t;
}

}  // namespace

std::vector<DenseLayer> init_mlp(int input_dim, const std::vector<int>& hidden, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "mlp-init"));
  std::vector<DenseLayer> layers;
  int fan_in = input_dim;
  std::vector<int> widths = hidden;
  widths.push_back(1);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const int fan_out = widths[l];
    if (fan_out < 1) throw Error(ErrorCode::INVALID_ARGUMENT, "hidden layer widths must be positive");
    const bool output = l + 1 == widths.size();
    const double limit = output ? std::sqrt(6.0 / (fan_in + fan_out)) : std::sqrt(6.0 / fan_in);
    DenseLayer layer{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)};
    for (Eigen::Index i = 0; i < layer.W.size(); ++i) layer.W.data()[i] = rng.uniform(-limit, limit);
    layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return layers;
}

Eigen::VectorXd mlp_forward(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& X) {
  const Trace t = forward(layers, X);
  return t.Z.back().col(0).unaryExpr([](double z) { return sigmoid(z); });
}

double mlp_loss(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& X, std::span<const int> y,
                std::vector<DenseLayer>* gradient) {
  const Trace t = forward(layers, X);
  const double n = static_cast<double>(X.rows());
  const Eigen::VectorXd z = t.Z.back().col(0);
  double loss = 0.0;
  Eigen::MatrixXd delta(X.rows(), 1);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double yi = y[static_cast<std::size_t>(i)];
    loss += softplus(z(i)) - yi * z(i);
    delta(i, 0) = (sigmoid(z(i)) - yi) / n;
  }
  loss /= n;
  if (!gradient) return loss;

  gradient->resize(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    (*gradient)[l].W = delta.transpose() * t.A[l];
    (*gradient)[l].b = delta.colwise().sum().transpose();
    if (l == 0) break;
    Eigen::MatrixXd upstream = delta * layers[l].W;
    delta = upstream.cwiseProduct((t.Z[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return loss;
}

MLPProbe fit_mlp(const Eigen::MatrixXd& X, std::span<const int> y, const MlpOptions& options) {
  if (static_cast<std::size_t>(X.rows()) != y.size())
    throw Error(ErrorCode::DIMENSION_MISMATCH, "feature rows and labels differ in length");
  if (!X.allFinite()) throw Error(ErrorCode::INVALID_ARGUMENT, "features must be finite");
  if (options.epochs < 0 || options.batch_size < 1 || !(options.lr > 0.0))
    throw Error(ErrorCode::INVALID_ARGUMENT, "epochs >= 0, batch_size >= 1 and lr > 0 are required");
  require_both_classes(y);

  MLPProbe probe;
  probe.options = options;
  probe.standardizer = fit_standardizer(X);
  const Eigen::MatrixXd Xs = probe.standardizer.apply(X);
  if (Xs.cols() == 0) throw Error(ErrorCode::INVALID_ARGUMENT, "every feature is constant on the training rows");
  probe.layers = init_mlp(static_cast<int>(Xs.cols()), options.hidden, options.seed);

  // Adam state.
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<DenseLayer> m, v;
  for (const auto& layer : probe.layers) {
    m.push_back({Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()), Eigen::VectorXd::Zero(layer.b.size())});
    v.push_back(m.back());
  }
  Rng rng(derive_seed(options.seed, "mlp-batches"));
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<DenseLayer> grad;
  long step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      Eigen::MatrixXd xb(static_cast<Eigen::Index>(stop - start), Xs.cols());
      std::vector<int> yb(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        xb.row(static_cast<Eigen::Index>(k - start)) = Xs.row(static_cast<Eigen::Index>(order[k]));
        yb[k - start] = y[order[k]];
      }
      const double loss = mlp_loss(probe.layers, xb, yb, &grad);
      if (!std::isfinite(loss))
        throw Error(ErrorCode::TRAINING_DIVERGED, "non-finite loss at epoch " + std::to_string(epoch));
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t l = 0; l < probe.layers.size(); ++l) {
        m[l].W = beta1 * m[l].W + (1.0 - beta1) * grad[l].W;
        v[l].W = beta2 * v[l].W + (1.0 - beta2) * grad[l].W.cwiseAbs2();
        m[l].b = beta1 * m[l].b + (1.0 - beta1) * grad[l].b;
        v[l].b = beta2 * v[l].b + (1.0 - beta2) * grad[l].b.cwiseAbs2();
        probe.layers[l].W.array() -= options.lr * (m[l].W.array() / c1) / ((v[l].W.array() / c2).sqrt() + eps);
        probe.layers[l].b.array() -= options.lr * (m[l].b.array() / c1) / ((v[l].b.array() / c2).sqrt() + eps);
      }
    }
  }
  probe.final_loss = mlp_loss(probe.layers, Xs, y, nullptr);
  if (!std::isfinite(probe.final_loss)) throw Error(ErrorCode::TRAINING_DIVERGED, "non-finite final training loss");
  return probe;
}

Eigen::VectorXd predict_mlp(const MLPProbe& probe, const Eigen::MatrixXd& X) {
  return mlp_forward(probe.layers, probe.standardizer.apply(X));
}

}  // namespace halprobe
