#include <algorithm>
#include <cmath>
#include <numeric>

#include "halprobe/error.hpp"
#include "halprobe/probes.hpp"

namespace halprobe {

int naive_predict(TaskType task) { return task == TaskType::D2T ? 1 : 0; }

void require_both_classes(std::span<const int> y, const char* what) {
  bool has0 = false, has1 = false;
  for (int v : y) {
    if (v == 1) has1 = true;
    else if (v == 0) has0 = true;
    else throw Error(ErrorCode::INVALID_ARGUMENT, std::string(what) + " must be 0 or 1");
  }
  if (!has0 || !has1)
    throw Error(ErrorCode::DEGENERATE_LABELS, std::string(what) + " contain a single class; both are required");
}

Standardizer fit_standardizer(const Eigen::MatrixXd& X) {
  Standardizer s;
  s.input_dim = static_cast<int>(X.cols());
  const double n = static_cast<double>(X.rows());
  std::vector<double> means, scales;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double mean = X.col(j).sum() / n;
    const double var = (X.col(j).array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * (1.0 + std::abs(mean)))) continue;
    s.retained.push_back(static_cast<int>(j));
    means.push_back(mean);
    scales.push_back(sd);
  }
  s.mean = Eigen::Map<Eigen::VectorXd>(means.data(), static_cast<Eigen::Index>(means.size()));
  s.scale = Eigen::Map<Eigen::VectorXd>(scales.data(), static_cast<Eigen::Index>(scales.size()));
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& X) const {
  if (X.cols() != input_dim)
    throw Error(ErrorCode::DIMENSION_MISMATCH, "expected " + std::to_string(input_dim) + " features, got " +
                                                   std::to_string(X.cols()));
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(retained.size()));
  for (std::size_t k = 0; k < retained.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    out.col(kk) = (X.col(retained[k]).array() - mean(kk)) / scale(kk);
  }
  return out;
}

std::vector<int> Standardizer::dropped() const {
  std::vector<int> out;
  std::size_t k = 0;
  for (int j = 0; j < input_dim; ++j) {
    if (k < retained.size() && retained[k] == j) ++k;
    else out.push_back(j);
  }
  return out;
}

MinMaxStats minmax_fit(const Eigen::MatrixXd& X_train) {
  if (X_train.rows() == 0) throw Error(ErrorCode::INVALID_ARGUMENT, "minmax_fit needs at least one row");
  if (!X_train.allFinite()) throw Error(ErrorCode::INVALID_ARGUMENT, "minmax_fit needs finite inputs");
  return {X_train.colwise().minCoeff().transpose(), X_train.colwise().maxCoeff().transpose()};
}

Eigen::MatrixXd minmax_apply(const MinMaxStats& stats, const Eigen::MatrixXd& X) {
  if (X.cols() != stats.min.size())
    throw Error(ErrorCode::DIMENSION_MISMATCH, "expected " + std::to_string(stats.min.size()) + " features, got " +
                                                   std::to_string(X.cols()));
  Eigen::MatrixXd out(X.rows(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double lo = stats.min(j);
    const double range = stats.max(j) - lo;
    if (!(range > 0.0)) {
      out.col(j).setZero();
      continue;
    }
    out.col(j) = ((X.col(j).array() - lo) / range).cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

FeatureMask contrastive_select(const Eigen::MatrixXd& X_train, std::span<const int> y_train, int k) {
  if (k < 1) throw Error(ErrorCode::INVALID_ARGUMENT, "k must be at least 1");
  if (static_cast<std::size_t>(X_train.rows()) != y_train.size())
    throw Error(ErrorCode::DIMENSION_MISMATCH, "feature rows and labels differ in length");
  require_both_classes(y_train);

  const Eigen::Index d = X_train.cols();
  Eigen::VectorXd sum_h = Eigen::VectorXd::Zero(d), sum_c = Eigen::VectorXd::Zero(d);
  double n_h = 0.0, n_c = 0.0;
  for (Eigen::Index i = 0; i < X_train.rows(); ++i) {
    if (y_train[static_cast<std::size_t>(i)] == 1) {
      sum_h += X_train.row(i).transpose();
      n_h += 1.0;
    } else {
      sum_c += X_train.row(i).transpose();
      n_c += 1.0;
    }
  }
  FeatureMask mask;
  mask.input_dim = static_cast<int>(d);
  mask.contrast = sum_h / n_h - sum_c / n_c;

  std::vector<int> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(mask.contrast(a)) > std::abs(mask.contrast(b));
  });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(k)));
  mask.ranking = order;
  std::sort(order.begin(), order.end());
  mask.indices = std::move(order);
  return mask;
}

Eigen::MatrixXd FeatureMask::apply(const Eigen::MatrixXd& X) const {
  if (X.cols() != input_dim)
    throw Error(ErrorCode::DIMENSION_MISMATCH, "expected " + std::to_string(input_dim) + " features, got " +
                                                   std::to_string(X.cols()));
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = X.col(indices[k]);
  return out;
}

}  // namespace halprobe
