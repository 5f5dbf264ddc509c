#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "halprobe/corpus.hpp"

namespace halprobe {

// ---------------------------------------------------------------------------
// Naive task heuristic

/// 1 iff the task is D2T; no other field is consulted.
int naive_predict(TaskType task);
inline int naive_predict(const Sample& sample) { return naive_predict(sample.task); }

/// Throws DEGENERATE_LABELS unless both classes occur; `what` names the target.
void require_both_classes(std::span<const int> y, const char* what = "labels");

// ---------------------------------------------------------------------------
// Feature preprocessing

/// Per-feature z-scoring. Zero-variance columns are dropped and recorded.
struct Standardizer {
  std::vector<int> retained;  // input column indices kept, ascending
  Eigen::VectorXd mean;       // per retained column
  Eigen::VectorXd scale;      // per retained column, > 0
  int input_dim = 0;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
  std::vector<int> dropped() const;
};

Standardizer fit_standardizer(const Eigen::MatrixXd& X);

struct MinMaxStats {
  Eigen::VectorXd min;
  Eigen::VectorXd max;
};

MinMaxStats minmax_fit(const Eigen::MatrixXd& X_train);
/// (x - min) / (max - min), clipped to [0, 1]; constant features map to 0.
Eigen::MatrixXd minmax_apply(const MinMaxStats& stats, const Eigen::MatrixXd& X);

/// Column subset chosen by contrastive ranking.
struct FeatureMask {
  std::vector<int> indices;  // selected columns, ascending (application order)
  std::vector<int> ranking;  // selected columns, by decreasing |class-mean difference|
  Eigen::VectorXd contrast;  // mean(hallucinated) - mean(faithful), all d columns
  int input_dim = 0;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
};

/// Class-mean difference on training rows; keeps the min(k, d) largest
/// magnitudes, ties broken toward the lower index.
FeatureMask contrastive_select(const Eigen::MatrixXd& X_train, std::span<const int> y_train, int k);

// ---------------------------------------------------------------------------
// Logistic regression

struct LogisticOptions {
  double l2_lambda = 1.0;
  double tol = 1e-6;
  int max_iter = 1000;
  std::uint64_t seed = 0;
  int history = 10;  // L-BFGS memory
};

struct SolverReport {
  int iterations = 0;
  bool converged = false;
  double grad_max_norm = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct LinearProbe {
  Eigen::VectorXd weights;  // over standardizer.retained
  double bias = 0.0;
  Standardizer standardizer;
  double l2_lambda = 1.0;
  SolverReport report;
};

/// Objective on already-standardized features:
///   (1/n) sum_i [log(1 + e^{z_i}) - y_i z_i] + (lambda / 2n) ||w||^2,  z = Xw + b.
/// `params` packs [w; b]; the gradient is written in the same layout.
double logistic_objective(const Eigen::MatrixXd& X, std::span<const int> y, double l2_lambda,
                          const Eigen::VectorXd& params, Eigen::VectorXd* gradient);

/// L-BFGS on the convex penalized objective; stops at gradient max-norm <= tol.
LinearProbe fit_logistic(const Eigen::MatrixXd& X, std::span<const int> y, const LogisticOptions& options = {});

/// sigmoid(w . standardize(x) + b) per row.
Eigen::VectorXd predict_linear(const LinearProbe& probe, const Eigen::MatrixXd& X);

// ---------------------------------------------------------------------------
// Random forest

enum class ClassWeighting { NONE, BALANCED };

struct ForestOptions {
  int n_trees = 200;
  std::optional<int> max_depth;     // unlimited when absent
  std::optional<int> max_features;  // sqrt(d) when absent
  ClassWeighting class_weighting = ClassWeighting::BALANCED;
  bool bootstrap = true;
  int min_samples_split = 2;
  std::uint64_t seed = 0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;     // x[feature] <= threshold
  int right = -1;
  double positive_fraction = 0.0;  // leaf class-frequency estimate for label 1
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

struct ForestProbe {
  std::vector<DecisionTree> trees;
  ForestOptions options;
  int input_dim = 0;
};

ForestProbe fit_forest(const Eigen::MatrixXd& X, std::span<const int> y, const ForestOptions& options = {});
/// Mean leaf positive-frequency over trees.
Eigen::VectorXd predict_forest(const ForestProbe& forest, const Eigen::MatrixXd& X);

// ---------------------------------------------------------------------------
// Feedforward probe

struct MlpOptions {
  std::vector<int> hidden = {256, 128, 64};
  int epochs = 30;
  double lr = 1e-3;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

struct DenseLayer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;
};

struct MLPProbe {
  Standardizer standardizer;
  std::vector<DenseLayer> layers;  // ReLU between layers, sigmoid on the single output
  MlpOptions options;
  double final_loss = 0.0;
};

/// Seeded initialization only (He-uniform hidden layers, Glorot-uniform output).
std::vector<DenseLayer> init_mlp(int input_dim, const std::vector<int>& hidden, std::uint64_t seed);

/// Mean binary cross-entropy over the rows of X (already standardized) and its
/// backprop gradient, layer by layer in the same shapes as `layers`.
double mlp_loss(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& X, std::span<const int> y,
                std::vector<DenseLayer>* gradient);

Eigen::VectorXd mlp_forward(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& X);

/// Mini-batch Adam on cross-entropy. Throws TRAINING_DIVERGED on a non-finite loss.
MLPProbe fit_mlp(const Eigen::MatrixXd& X, std::span<const int> y, const MlpOptions& options = {});
Eigen::VectorXd predict_mlp(const MLPProbe& probe, const Eigen::MatrixXd& X);

}  // namespace halprobe
