#include "halprobe/redeep.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "halprobe/error.hpp"
#include "halprobe/metrics.hpp"
#include "halprobe/parallel.hpp"
#include "halprobe/probes.hpp"

namespace halprobe {

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.empty() || p.size() != q.size())
    throw Error(ErrorCode::INVALID_DISTRIBUTION, "distributions must be non-empty and of equal length");
  auto check = [](std::span<const double> v, const char* name) {
    double sum = 0.0;
    for (double x : v) {
      if (!std::isfinite(x) || x < 0.0)
        throw Error(ErrorCode::INVALID_DISTRIBUTION, std::string(name) + " has a negative or non-finite entry");
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-8)
      throw Error(ErrorCode::INVALID_DISTRIBUTION, std::string(name) + " sums to " + std::to_string(sum) + ", not 1");
  };
  check(p, "p");
  check(q, "q");

  auto kl_term = [](double a, double m) { return a > 0.0 ? a * std::log(a / m) : 0.0; };
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    total += 0.5 * (kl_term(p[i], m) + kl_term(q[i], m));
  }
  return std::clamp(total, 0.0, std::numbers::ln2);
}

std::string_view to_string(RedeepVariant variant) { return variant == RedeepVariant::TOKEN ? "token" : "chunk"; }

RedeepVariant parse_redeep_variant(std::string_view text) {
  if (text == "token" || text == "TOKEN") return RedeepVariant::TOKEN;
  if (text == "chunk" || text == "CHUNK") return RedeepVariant::CHUNK;
  throw Error(ErrorCode::INVALID_ARGUMENT, "unknown ReDeEP variant '" + std::string(text) + "'; accepted: token, chunk");
}

void RedeepHyper::check() const {
  if (top_heads < 1 || top_layers < 1 || chunk_size < 1 || !(lambda >= 0.0))
    throw Error(ErrorCode::INVALID_ARGUMENT, "ReDeEP hyperparameters need top_heads, top_layers, chunk_size >= 1 and lambda >= 0");
}

RedeepFeatures redeep_features(const ActivationDump& dump, std::span<const std::size_t> rows) {
  if (!dump.ecs || !dump.pks) throw Error(ErrorCode::MISSING_FEATURES, "dump has no ecs/pks panels");
  RedeepFeatures f;
  f.ecs.resize(static_cast<Eigen::Index>(rows.size()), dump.ecs->cols());
  f.pks.resize(static_cast<Eigen::Index>(rows.size()), dump.pks->cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    f.ecs.row(static_cast<Eigen::Index>(i)) = dump.ecs->row(r).cast<double>();
    f.pks.row(static_cast<Eigen::Index>(i)) = dump.pks->row(r).cast<double>();
  }
  if (dump.per_token) {
    const auto& pt = *dump.per_token;
    for (std::size_t r : rows) {
      const auto begin = static_cast<Eigen::Index>(pt.offsets[r]);
      const auto len = static_cast<Eigen::Index>(pt.offsets[r + 1] - pt.offsets[r]);
      f.token_ecs.push_back(pt.ecs.middleRows(begin, len).cast<double>());
      f.token_pks.push_back(pt.pks.middleRows(begin, len).cast<double>());
    }
  }
  return f;
}

namespace {

void check_rank(std::span<const int> rank, Eigen::Index width, const char* what) {
  std::vector<char> seen(static_cast<std::size_t>(width), 0);
  bool ok = static_cast<Eigen::Index>(rank.size()) == width;
  for (int r : rank) {
    if (!ok) break;
    if (r < 0 || r >= width || seen[static_cast<std::size_t>(r)]) ok = false;
    else seen[static_cast<std::size_t>(r)] = 1;
  }
  if (!ok) throw Error(ErrorCode::INVALID_ARGUMENT, std::string(what) + " ranking must be a permutation of all columns");
}

double combine(const Eigen::Ref<const Eigen::RowVectorXd>& ecs_mean, const Eigen::Ref<const Eigen::RowVectorXd>& pks_mean,
               std::span<const int> heads, std::span<const int> layers, double lambda) {
  double p = 0.0, e = 0.0;
  for (int l : layers) p += pks_mean(l);
  for (int h : heads) e += ecs_mean(h);
  return p / static_cast<double>(layers.size()) - lambda * e / static_cast<double>(heads.size());
}

std::vector<int> rank_by_correlation(const Eigen::MatrixXd& panel, std::span<const int> labels, bool ascending) {
  if (static_cast<std::size_t>(panel.rows()) != labels.size())
    throw Error(ErrorCode::DIMENSION_MISMATCH, "panel rows and labels differ in length");
  require_both_classes(labels, "dev labels");
  const double n = static_cast<double>(labels.size());
  Eigen::VectorXd y(panel.rows());
  for (Eigen::Index i = 0; i < panel.rows(); ++i) y(i) = labels[static_cast<std::size_t>(i)];
  const Eigen::VectorXd yc = y.array() - y.mean();
  std::vector<double> corr(static_cast<std::size_t>(panel.cols()), 0.0);
  for (Eigen::Index j = 0; j < panel.cols(); ++j) {
    const Eigen::VectorXd xc = panel.col(j).array() - panel.col(j).sum() / n;
    const double den = std::sqrt(xc.squaredNorm() * yc.squaredNorm());
    corr[static_cast<std::size_t>(j)] = den > 0.0 ? xc.dot(yc) / den : 0.0;
  }
  std::vector<int> order(corr.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return ascending ? corr[static_cast<std::size_t>(a)] < corr[static_cast<std::size_t>(b)]
                     : corr[static_cast<std::size_t>(a)] > corr[static_cast<std::size_t>(b)];
  });
  return order;
}

}  // namespace

std::vector<double> redeep_score(const RedeepFeatures& features, const RedeepHyper& hyper,
                                 std::span<const int> head_rank, std::span<const int> layer_rank) {
  hyper.check();
  check_rank(head_rank, features.ecs.cols(), "head");
  check_rank(layer_rank, features.pks.cols(), "layer");
  if (features.pks.rows() != features.ecs.rows())
    throw Error(ErrorCode::DIMENSION_MISMATCH, "ecs and pks panels differ in row count");
  const auto heads = head_rank.first(std::min<std::size_t>(head_rank.size(), static_cast<std::size_t>(hyper.top_heads)));
  const auto layers = layer_rank.first(std::min<std::size_t>(layer_rank.size(), static_cast<std::size_t>(hyper.top_layers)));

  const std::size_t n = features.size();
  std::vector<double> out(n);
  if (hyper.variant == RedeepVariant::TOKEN) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      out[i] = combine(features.ecs.row(r), features.pks.row(r), heads, layers, hyper.lambda);
    }
    return out;
  }

  if (!features.has_per_token() || features.token_ecs.size() != n || features.token_pks.size() != n)
    throw Error(ErrorCode::MISSING_PER_TOKEN, "CHUNK variant needs per-token ecs/pks series for every sample");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& te = features.token_ecs[i];
    const auto& tp = features.token_pks[i];
    if (te.rows() != tp.rows()) throw Error(ErrorCode::DIMENSION_MISMATCH, "per-token series lengths differ");
    if (te.rows() == 0) {
      const auto r = static_cast<Eigen::Index>(i);
      out[i] = combine(features.ecs.row(r), features.pks.row(r), heads, layers, hyper.lambda);
      continue;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index start = 0; start < te.rows(); start += hyper.chunk_size) {
      const Eigen::Index len = std::min<Eigen::Index>(hyper.chunk_size, te.rows() - start);
      const Eigen::RowVectorXd ecs_mean = te.middleRows(start, len).colwise().mean();
      const Eigen::RowVectorXd pks_mean = tp.middleRows(start, len).colwise().mean();
      best = std::max(best, combine(ecs_mean, pks_mean, heads, layers, hyper.lambda));
    }
    out[i] = best;
  }
  return out;
}

std::vector<int> rank_heads(const RedeepFeatures& features, std::span<const int> labels_dev) {
  return rank_by_correlation(features.ecs, labels_dev, true);
}

std::vector<int> rank_layers(const RedeepFeatures& features, std::span<const int> labels_dev) {
  return rank_by_correlation(features.pks, labels_dev, false);
}

RedeepTuning tune_redeep(const RedeepFeatures& features, std::span<const int> labels_dev,
                         const std::vector<RedeepHyper>& grid) {
  if (grid.empty()) throw Error(ErrorCode::INVALID_ARGUMENT, "ReDeEP tuning grid is empty");
  RedeepTuning tuning;
  tuning.head_rank = rank_heads(features, labels_dev);
  tuning.layer_rank = rank_layers(features, labels_dev);

  std::vector<RedeepHyper> points;
  for (const auto& h : grid) {
    if (h.variant == RedeepVariant::CHUNK && !features.has_per_token()) {
      ++tuning.skipped_chunk_points;
      continue;
    }
    points.push_back(h);
  }
  if (points.empty())
    throw Error(ErrorCode::MISSING_PER_TOKEN, "every grid point needs per-token data, which the features lack");

  const ScoredLabels proto{{}, std::vector<int>(labels_dev.begin(), labels_dev.end())};
  tuning.grid.resize(points.size());
  parallel_for(points.size(), default_jobs(), [&](std::size_t k) {
    ScoredLabels data = proto;
    data.scores = redeep_score(features, points[k], tuning.head_rank, tuning.layer_rank);
    tuning.grid[k] = {points[k], auc(data)};
  });

  std::size_t best = 0;
  for (std::size_t k = 1; k < tuning.grid.size(); ++k)
    if (tuning.grid[k].dev_auc > tuning.grid[best].dev_auc) best = k;
  tuning.best = tuning.grid[best].hyper;
  ScoredLabels dev = proto;
  dev.scores = redeep_score(features, tuning.best, tuning.head_rank, tuning.layer_rank);
  tuning.best.threshold = select_threshold(dev, ThresholdObjective::f1());
  tuning.grid[best].hyper.threshold = tuning.best.threshold;
  return tuning;
}

std::vector<RedeepHyper> default_redeep_grid() {
  std::vector<RedeepHyper> grid;
  for (int heads : {4, 8, 16, 32})
    for (int layers : {2, 4, 8})
      for (double lambda : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0}) {
        grid.push_back({heads, layers, lambda, RedeepVariant::TOKEN, 16, 0.15});
        for (int chunk : {8, 16, 32}) grid.push_back({heads, layers, lambda, RedeepVariant::CHUNK, chunk, 0.15});
      }
  return grid;
}

}  // namespace halprobe
