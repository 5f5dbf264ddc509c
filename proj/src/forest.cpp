#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "halprobe/error.hpp"
#include "halprobe/parallel.hpp"
#include "halprobe/probes.hpp"
#include "halprobe/rng.hpp"

namespace halprobe {

double DecisionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const auto& n = nodes[static_cast<std::size_t>(node)];
    node = x(n.feature) <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(node)].positive_fraction;
}

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = -std::numeric_limits<double>::infinity();  // sum over children of (w0^2 + w1^2) / w
};

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& X, std::span<const int> y, std::vector<double> weight, const ForestOptions& options,
              int mtry, Rng rng)
      : X_(X), y_(y), weight_(std::move(weight)), options_(options), mtry_(mtry), rng_(rng) {}

  DecisionTree build() {
    std::vector<int> members;
    for (std::size_t i = 0; i < weight_.size(); ++i)
      if (weight_[i] > 0.0) members.push_back(static_cast<int>(i));
    DecisionTree tree;
    tree.nodes.emplace_back();
    struct Pending {
      int node;
      std::size_t begin, end;
      int depth;
    };
    members_ = std::move(members);
    std::vector<Pending> stack{{0, 0, members_.size(), 0}};
    while (!stack.empty()) {
      const Pending p = stack.back();
      stack.pop_back();
      double w0 = 0.0, w1 = 0.0;
      for (std::size_t i = p.begin; i < p.end; ++i) {
        const auto idx = static_cast<std::size_t>(members_[i]);
        (y_[idx] == 1 ? w1 : w0) += weight_[idx];
      }
      tree.nodes[static_cast<std::size_t>(p.node)].positive_fraction = w1 / (w0 + w1);

      const bool pure = w0 == 0.0 || w1 == 0.0;
      const bool depth_reached = options_.max_depth && p.depth >= *options_.max_depth;
      const bool too_small = p.end - p.begin < static_cast<std::size_t>(std::max(2, options_.min_samples_split));
      if (pure || depth_reached || too_small) continue;

      const Split split = best_split(p.begin, p.end);
      if (split.feature < 0) continue;  // every row in the node is identical

      auto mid = std::partition(members_.begin() + static_cast<std::ptrdiff_t>(p.begin),
                                members_.begin() + static_cast<std::ptrdiff_t>(p.end),
                                [&](int idx) { return X_(idx, split.feature) <= split.threshold; });
      const auto cut = static_cast<std::size_t>(mid - members_.begin());
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& node = tree.nodes[static_cast<std::size_t>(p.node)];
      node.feature = split.feature;
      node.threshold = split.threshold;
      node.left = left;
      node.right = left + 1;
      stack.push_back({left + 1, cut, p.end, p.depth + 1});
      stack.push_back({left, p.begin, cut, p.depth + 1});
    }
    return tree;
  }

 private:
  // Draws features without replacement until mtry non-constant ones were
  // evaluated (or the pool runs out), keeping the best weighted-Gini split.
  Split best_split(std::size_t begin, std::size_t end) {
    const int d = static_cast<int>(X_.cols());
    std::vector<int> pool(static_cast<std::size_t>(d));
    std::iota(pool.begin(), pool.end(), 0);
    Split best;
    int evaluated = 0;
    std::vector<std::pair<double, int>> column;
    column.reserve(end - begin);
    for (int drawn = 0; drawn < d && evaluated < mtry_; ++drawn) {
      const auto pick = static_cast<std::size_t>(drawn) + static_cast<std::size_t>(rng_.index(static_cast<std::uint64_t>(d - drawn)));
      std::swap(pool[static_cast<std::size_t>(drawn)], pool[pick]);
      const int f = pool[static_cast<std::size_t>(drawn)];

      column.clear();
      for (std::size_t i = begin; i < end; ++i) column.emplace_back(X_(members_[i], f), members_[i]);
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      ++evaluated;

      double tot0 = 0.0, tot1 = 0.0;
      for (const auto& [v, idx] : column) (y_[static_cast<std::size_t>(idx)] == 1 ? tot1 : tot0) += weight_[static_cast<std::size_t>(idx)];
      double l0 = 0.0, l1 = 0.0;
      for (std::size_t k = 0; k + 1 < column.size(); ++k) {
        const auto idx = static_cast<std::size_t>(column[k].second);
        (y_[idx] == 1 ? l1 : l0) += weight_[idx];
        if (column[k].first == column[k + 1].first) continue;
        const double r0 = tot0 - l0, r1 = tot1 - l1;
        const double wl = l0 + l1, wr = r0 + r1;
        const double score = (l0 * l0 + l1 * l1) / wl + (r0 * r0 + r1 * r1) / wr;
        if (score > best.score) {
          best.score = score;
          best.feature = f;
          const double lo = column[k].first, hi = column[k + 1].first;
          double thr = lo + (hi - lo) / 2.0;
          if (thr >= hi) thr = lo;
          best.threshold = thr;
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& X_;
  std::span<const int> y_;
  std::vector<double> weight_;
  const ForestOptions& options_;
  int mtry_;
  Rng rng_;
  std::vector<int> members_;
};

}  // namespace

ForestProbe fit_forest(const Eigen::MatrixXd& X, std::span<const int> y, const ForestOptions& options) {
  if (static_cast<std::size_t>(X.rows()) != y.size())
    throw Error(ErrorCode::DIMENSION_MISMATCH, "feature rows and labels differ in length");
  if (X.cols() == 0) throw Error(ErrorCode::INVALID_ARGUMENT, "forest needs at least one feature");
  if (!X.allFinite()) throw Error(ErrorCode::INVALID_ARGUMENT, "features must be finite");
  if (options.n_trees < 1) throw Error(ErrorCode::INVALID_ARGUMENT, "n_trees must be at least 1");
  require_both_classes(y);

  const int d = static_cast<int>(X.cols());
  const int mtry = std::clamp(options.max_features.value_or(static_cast<int>(std::sqrt(static_cast<double>(d)))), 1, d);
  const double n = static_cast<double>(y.size());
  const double n1 = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const double class_weight[2] = {
      options.class_weighting == ClassWeighting::BALANCED ? n / (2.0 * (n - n1)) : 1.0,
      options.class_weighting == ClassWeighting::BALANCED ? n / (2.0 * n1) : 1.0,
  };

  ForestProbe forest;
  forest.options = options;
  forest.input_dim = d;
  forest.trees.resize(static_cast<std::size_t>(options.n_trees));
  parallel_for(forest.trees.size(), default_jobs(), [&](std::size_t t) {
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(t)));
    std::vector<double> weight(y.size(), 0.0);
    if (options.bootstrap) {
      for (std::size_t k = 0; k < y.size(); ++k) weight[static_cast<std::size_t>(rng.index(y.size()))] += 1.0;
    } else {
      std::fill(weight.begin(), weight.end(), 1.0);
    }
    for (std::size_t i = 0; i < y.size(); ++i) weight[i] *= class_weight[y[i]];
    forest.trees[t] = TreeBuilder(X, y, std::move(weight), options, mtry, rng).build();
  });
  return forest;
}

Eigen::VectorXd predict_forest(const ForestProbe& forest, const Eigen::MatrixXd& X) {
  if (X.cols() != forest.input_dim)
    throw Error(ErrorCode::DIMENSION_MISMATCH, "expected " + std::to_string(forest.input_dim) + " features, got " +
                                                   std::to_string(X.cols()));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double acc = 0.0;
    for (const auto& tree : forest.trees) acc += tree.predict(X.row(i));
    out(i) = acc / static_cast<double>(forest.trees.size());
  }
  return out;
}

}  // namespace halprobe
