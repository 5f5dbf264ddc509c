#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "halprobe/error.hpp"
#include "halprobe/metrics.hpp"
#include "halprobe/probes.hpp"
#include "halprobe/rng.hpp"

using namespace halprobe;

namespace {

double train_auc(const Eigen::VectorXd& scores, const std::vector<int>& y) {
  return auc({std::vector<double>(scores.data(), scores.data() + scores.size()), y});
}

Eigen::MatrixXd random_matrix(int n, int d, Rng& rng) {
  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = rng.normal();
  return X;
}

}  // namespace

TEST_CASE("naive heuristic predicts D2T only") {
  CHECK(naive_predict(TaskType::D2T) == 1);
  CHECK(naive_predict(TaskType::QA) == 0);
  CHECK(naive_predict(TaskType::SUMMARY) == 0);
  CHECK(naive_predict(TaskType::OTHER) == 0);
}

TEST_CASE("require_both_classes") {
  const std::vector<int> one{1, 1};
  try {
    require_both_classes(one);
    FAIL("expected DEGENERATE_LABELS");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DEGENERATE_LABELS);
  }
}

TEST_CASE("standardizer drops constant columns") {
  Eigen::MatrixXd X(3, 3);
  X << 1, 5, 2, 2, 5, 4, 3, 5, 6;
  const Standardizer s = fit_standardizer(X);
  CHECK(s.retained == std::vector<int>{0, 2});
  CHECK(s.dropped() == std::vector<int>{1});
  const Eigen::MatrixXd Z = s.apply(X);
  CHECK(Z.cols() == 2);
  CHECK(Z.col(0).mean() == doctest::Approx(0.0));
}

TEST_CASE("minmax scaling conventions") {
  Eigen::MatrixXd X(3, 2);
  X << 2, 7, 4, 7, 6, 7;
  const MinMaxStats st = minmax_fit(X);
  const Eigen::MatrixXd Z = minmax_apply(st, X);
  CHECK(Z(0, 0) == 0.0);
  CHECK(Z(1, 0) == 0.5);
  CHECK(Z(2, 0) == 1.0);
  for (int i = 0; i < 3; ++i) CHECK(Z(i, 1) == 0.0);
  Eigen::MatrixXd below(1, 2);
  below << -10, 100;
  const Eigen::MatrixXd B = minmax_apply(st, below);
  CHECK(B(0, 0) == 0.0);
  CHECK(B(0, 1) == 0.0);
}

TEST_CASE("contrastive selection") {
  Eigen::MatrixXd X(4, 3);
  X << 0, 1, 5, 0, 2, 5, 0, 1, 9, 0, 2, 9;
  const std::vector<int> y{0, 0, 1, 1};
  const FeatureMask one = contrastive_select(X, y, 1);
  CHECK(one.ranking == std::vector<int>{2});
  const FeatureMask all = contrastive_select(X, y, 10);
  CHECK(all.indices == std::vector<int>{0, 1, 2});
  CHECK_THROWS_AS(contrastive_select(X, y, 0), Error);

  Rng rng(12);
  const Eigen::MatrixXd R = random_matrix(40, 10, rng);
  std::vector<int> labels(40);
  for (int i = 0; i < 40; ++i) labels[i] = i % 3 == 0;
  std::vector<std::pair<double, int>> brute;
  for (int j = 0; j < 10; ++j) {
    double h = 0, c = 0, nh = 0, nc = 0;
    for (int i = 0; i < 40; ++i) {
      if (labels[i]) {
        h += R(i, j);
        nh += 1;
      } else {
        c += R(i, j);
        nc += 1;
      }
    }
    brute.push_back({-std::abs(h / nh - c / nc), j});
  }
  std::sort(brute.begin(), brute.end());
  const FeatureMask m = contrastive_select(R, labels, 4);
  for (int r = 0; r < 4; ++r) CHECK(m.ranking[r] == brute[r].second);
  std::vector<int> top{brute[0].second, brute[1].second, brute[2].second, brute[3].second};
  std::sort(top.begin(), top.end());
  CHECK(m.indices == top);
  CHECK(m.apply(R).cols() == 4);
}

TEST_CASE("logistic: separable points and training AUC") {
  Eigen::MatrixXd X(2, 1);
  X << -1, 1;
  const std::vector<int> y{0, 1};
  LogisticOptions opt;
  opt.l2_lambda = 1e-3;
  const LinearProbe p = fit_logistic(X, y, opt);
  CHECK(train_auc(predict_linear(p, X), y) == 1.0);
  CHECK(p.report.converged);
}

TEST_CASE("logistic: class-symmetric data gives zero weights") {
  Eigen::MatrixXd X(4, 1);
  X << 1, -1, 1, -1;
  const std::vector<int> y{1, 1, 0, 0};
  const LinearProbe p = fit_logistic(X, y);
  CHECK(std::abs(p.weights(0)) <= 1e-6);
  CHECK(std::abs(p.bias) <= 1e-6);
}

TEST_CASE("logistic: gradient at the solution matches finite differences") {
  Rng rng(4);
  const Eigen::MatrixXd X = random_matrix(30, 3, rng);
  std::vector<int> y(30);
  for (int i = 0; i < 30; ++i) y[i] = X(i, 0) + 0.5 * rng.normal() > 0;
  LogisticOptions opt;
  opt.l2_lambda = 0.5;
  const LinearProbe p = fit_logistic(X, y, opt);
  const Eigen::MatrixXd Z = p.standardizer.apply(X);
  Eigen::VectorXd params(p.weights.size() + 1);
  params << p.weights, p.bias;
  Eigen::VectorXd g;
  logistic_objective(Z, y, opt.l2_lambda, params, &g);
  CHECK(g.cwiseAbs().maxCoeff() <= opt.tol * 10);
  params(0) += 0.3;
  logistic_objective(Z, y, opt.l2_lambda, params, &g);
  const double h = 1e-5;
  for (Eigen::Index j = 0; j < params.size(); ++j) {
    Eigen::VectorXd up = params, down = params;
    up(j) += h;
    down(j) -= h;
    const double fd = (logistic_objective(Z, y, opt.l2_lambda, up, nullptr) -
                       logistic_objective(Z, y, opt.l2_lambda, down, nullptr)) / (2 * h);
    CHECK(std::abs(fd - g(j)) <= 1e-4 * std::max(1.0, std::abs(g(j))));
  }
}

TEST_CASE("logistic: random seed does not change the convex solution") {
  Rng rng(6);
  const Eigen::MatrixXd X = random_matrix(25, 2, rng);
  std::vector<int> y(25);
  for (int i = 0; i < 25; ++i) y[i] = i % 2;
  LogisticOptions a, b;
  b.seed = 99;
  const LinearProbe pa = fit_logistic(X, y, a), pb = fit_logistic(X, y, b);
  CHECK((pa.weights - pb.weights).norm() <= 1e-6);
}

TEST_CASE("forest: unlimited depth shatters distinct rows") {
  Rng rng(2);
  const Eigen::MatrixXd X = random_matrix(40, 3, rng);
  std::vector<int> y(40);
  for (int i = 0; i < 40; ++i) y[i] = static_cast<int>(rng.index(2));
  ForestOptions opt;
  opt.n_trees = 1;
  opt.bootstrap = false;
  opt.max_features = 3;
  const ForestProbe f = fit_forest(X, y, opt);
  const Eigen::VectorXd p = predict_forest(f, X);
  for (int i = 0; i < 40; ++i) CHECK((p(i) >= 0.5) == (y[i] == 1));
}

TEST_CASE("forest: depth zero predicts the class prior") {
  Eigen::MatrixXd X(5, 1);
  X << 1, 2, 3, 4, 5;
  const std::vector<int> y{1, 0, 0, 1, 1};
  ForestOptions opt;
  opt.n_trees = 1;
  opt.max_depth = 0;
  opt.bootstrap = false;
  opt.class_weighting = ClassWeighting::NONE;
  const Eigen::VectorXd p = predict_forest(fit_forest(X, y, opt), X);
  for (int i = 0; i < 5; ++i) CHECK(p(i) == doctest::Approx(0.6));
}

TEST_CASE("forest: prediction equals hand-traced votes") {
  ForestProbe f;
  f.input_dim = 2;
  DecisionTree t1;
  t1.nodes = {{0, 0.5, 1, 2, 0.0}, {-1, 0, -1, -1, 0.2}, {-1, 0, -1, -1, 0.9}};
  DecisionTree t2;
  t2.nodes = {{1, 1.0, 1, 4, 0.0}, {0, -1.0, 2, 3, 0.0}, {-1, 0, -1, -1, 0.0}, {-1, 0, -1, -1, 0.5},
              {-1, 0, -1, -1, 1.0}};
  f.trees = {t1, t2};
  Eigen::MatrixXd X(5, 2);
  X << 0.0, 0.0,   //
      1.0, 2.0,    //
      -2.0, 0.5,   //
      0.5, 1.0,    //
      0.6, 1.01;
  // t1: x0 <= .5 -> .2 else .9;  t2: x1 <= 1 -> (x0 <= -1 -> 0 else .5) else 1
  const double expect[5] = {(0.2 + 0.5) / 2, (0.9 + 1.0) / 2, (0.2 + 0.0) / 2, (0.2 + 0.5) / 2, (0.9 + 1.0) / 2};
  const Eigen::VectorXd p = predict_forest(f, X);
  for (int i = 0; i < 5; ++i) CHECK(p(i) == doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("forest: same seed, same forest") {
  Rng rng(5);
  const Eigen::MatrixXd X = random_matrix(60, 4, rng);
  std::vector<int> y(60);
  for (int i = 0; i < 60; ++i) y[i] = X(i, 1) > 0;
  ForestOptions opt;
  opt.n_trees = 10;
  opt.seed = 3;
  const Eigen::VectorXd a = predict_forest(fit_forest(X, y, opt), X);
  const Eigen::VectorXd b = predict_forest(fit_forest(X, y, opt), X);
  CHECK(a == b);
}

TEST_CASE("mlp: separable pair and zero-epoch determinism") {
  Eigen::MatrixXd X(2, 2);
  X << -1, 0.5, 1, -0.5;
  const std::vector<int> y{0, 1};
  MlpOptions opt;
  opt.hidden = {8, 4};
  opt.epochs = 50;
  opt.lr = 1e-2;
  CHECK(train_auc(predict_mlp(fit_mlp(X, y, opt), X), y) == 1.0);

  opt.epochs = 0;
  opt.seed = 77;
  const MLPProbe p = fit_mlp(X, y, opt);
  const auto init = init_mlp(2, opt.hidden, 77);
  CHECK(predict_mlp(p, X) == mlp_forward(init, p.standardizer.apply(X)));
}

TEST_CASE("mlp: backprop on a 2x3x1 net matches finite differences") {
  Rng rng(10);
  const Eigen::MatrixXd X = random_matrix(4, 2, rng);
  const std::vector<int> y{0, 1, 1, 0};
  auto layers = init_mlp(2, {3}, 1);
  for (auto& l : layers)
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) = 0.3 * rng.normal();
  std::vector<DenseLayer> grad;
  mlp_loss(layers, X, y, &grad);
  const double h = 1e-5;
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (Eigen::Index i = 0; i < layers[l].W.size(); ++i) {
      double& w = layers[l].W.data()[i];
      const double keep = w;
      w = keep + h;
      const double up = mlp_loss(layers, X, y, nullptr);
      w = keep - h;
      const double down = mlp_loss(layers, X, y, nullptr);
      w = keep;
      const double fd = (up - down) / (2 * h), an = grad[l].W.data()[i];
      num += (fd - an) * (fd - an);
      den += an * an;
    }
  }
  CHECK(std::sqrt(num / den) <= 1e-4);
}

TEST_CASE("mlp: invalid options") {
  Eigen::MatrixXd X(2, 1);
  X << 0, 1;
  const std::vector<int> y{0, 1};
  MlpOptions opt;
  opt.batch_size = 0;
  CHECK_THROWS_AS(fit_mlp(X, y, opt), Error);
  CHECK_THROWS_AS(init_mlp(2, {0}, 1), Error);
}
