#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "halprobe/dump.hpp"

namespace halprobe {

/// Jensen-Shannon divergence in nats: 0.5 KL(p||m) + 0.5 KL(q||m), m = (p+q)/2.
/// Throws INVALID_DISTRIBUTION unless both inputs are equal-length simplex points.
double jsd(std::span<const double> p, std::span<const double> q);

enum class RedeepVariant { TOKEN, CHUNK };
std::string_view to_string(RedeepVariant variant);
RedeepVariant parse_redeep_variant(std::string_view text);

struct RedeepHyper {
  int top_heads = 8;
  int top_layers = 4;
  double lambda = 1.0;
  RedeepVariant variant = RedeepVariant::TOKEN;
  int chunk_size = 16;
  double threshold = 0.15;

  void check() const;  // throws INVALID_ARGUMENT on out-of-range fields
  friend bool operator==(const RedeepHyper&, const RedeepHyper&) = default;
};

/// Per-sample panels. Per-token series are optional and required only by CHUNK.
struct RedeepFeatures {
  Eigen::MatrixXd ecs;  // n x heads, values in [0, 1]
  Eigen::MatrixXd pks;  // n x layers, values in [0, ln 2]
  std::vector<Eigen::MatrixXd> token_ecs;  // per sample: tokens x heads
  std::vector<Eigen::MatrixXd> token_pks;  // per sample: tokens x layers

  std::size_t size() const { return static_cast<std::size_t>(ecs.rows()); }
  bool has_per_token() const { return !token_ecs.empty(); }
};

/// Gathers the given dump rows. Throws MISSING_FEATURES when ecs/pks are absent.
RedeepFeatures redeep_features(const ActivationDump& dump, std::span<const std::size_t> rows);

/// Reconstruction of the ReDeEP combination rule:
///   score = mean(pks over top-ranked layers) - lambda * mean(ecs over top-ranked heads)
/// per sample (TOKEN) or per chunk of tokens with the sample taking its max chunk (CHUNK).
std::vector<double> redeep_score(const RedeepFeatures& features, const RedeepHyper& hyper,
                                 std::span<const int> head_rank, std::span<const int> layer_rank);

/// Heads by ascending correlation of ecs with the labels (most negative first);
/// layers by descending correlation of pks. Stable, ties by lower index.
std::vector<int> rank_heads(const RedeepFeatures& features, std::span<const int> labels_dev);
std::vector<int> rank_layers(const RedeepFeatures& features, std::span<const int> labels_dev);

struct GridPoint {
  RedeepHyper hyper;
  double dev_auc = 0.0;
};

struct RedeepTuning {
  RedeepHyper best;  // threshold set by F1 on the dev scores
  std::vector<int> head_rank;
  std::vector<int> layer_rank;
  std::vector<GridPoint> grid;  // every evaluated point, in grid order
  std::size_t skipped_chunk_points = 0;  // CHUNK points dropped for lack of per-token data
};

/// Picks the grid point with the highest dev AUC (first in grid order on ties).
RedeepTuning tune_redeep(const RedeepFeatures& features, std::span<const int> labels_dev,
                         const std::vector<RedeepHyper>& grid);

/// top_heads {4,8,16,32} x top_layers {2,4,8} x lambda {0,.25,.5,1,2,4} x
/// {TOKEN, CHUNK(8), CHUNK(16), CHUNK(32)}.
std::vector<RedeepHyper> default_redeep_grid();

}  // namespace halprobe
