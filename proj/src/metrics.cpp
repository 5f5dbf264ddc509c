#include "halprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "halprobe/error.hpp"

namespace halprobe {

std::string_view to_string(Averaging averaging) {
  return averaging == Averaging::POSITIVE_CLASS ? "positive_class" : "macro";
}

std::size_t ScoredLabels::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

void ScoredLabels::check() const {
  if (scores.size() != labels.size())
    throw Error(ErrorCode::INVALID_ARGUMENT, "scores and labels differ in length (" + std::to_string(scores.size()) +
                                                 " vs " + std::to_string(labels.size()) + ")");
  if (scores.empty()) throw Error(ErrorCode::INVALID_ARGUMENT, "no scored samples");
  for (int y : labels)
    if (y != 0 && y != 1) throw Error(ErrorCode::INVALID_ARGUMENT, "labels must be 0 or 1");
  for (double s : scores)
    if (!std::isfinite(s)) throw Error(ErrorCode::INVALID_ARGUMENT, "scores must be finite");
}

double auc(const ScoredLabels& data) {
  data.check();
  const std::size_t n_pos = data.positives();
  const std::size_t n_neg = data.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorCode::UNDEFINED_METRIC, "AUC needs both classes present");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data.scores[a] < data.scores[b]; });

  // Walk tie groups in ascending order; each positive beats every negative
  // below its group and ties with the negatives inside it.
  double wins = 0.0;
  double neg_below = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double pos_g = 0.0, neg_g = 0.0;
    while (j < order.size() && data.scores[order[j]] == data.scores[order[i]]) {
      (data.labels[order[j]] == 1 ? pos_g : neg_g) += 1.0;
      ++j;
    }
    wins += pos_g * (neg_below + 0.5 * neg_g);
    neg_below += neg_g;
    i = j;
  }
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double pcc(const ScoredLabels& data) {
  data.check();
  const double n = static_cast<double>(data.size());
  double mean_s = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    mean_s += data.scores[i];
    mean_y += data.labels[i];
  }
  mean_s /= n;
  mean_y /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double ds = data.scores[i] - mean_s;
    const double dy = data.labels[i] - mean_y;
    sxy += ds * dy;
    sxx += ds * ds;
    syy += dy * dy;
  }
  if (sxx <= 0.0) throw Error(ErrorCode::UNDEFINED_METRIC, "PCC undefined: scores have zero variance");
  if (syy <= 0.0) throw Error(ErrorCode::UNDEFINED_METRIC, "PCC undefined: labels contain a single class");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Confusion confusion(const ScoredLabels& data, double threshold) {
  data.check();
  Confusion c;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool pred = data.scores[i] >= threshold;
    if (data.labels[i] == 1) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

namespace {

struct Ratio {
  double value;
  bool degenerate;
};

Ratio ratio(std::size_t num, std::size_t den) {
  if (den == 0) return {0.0, true};
  return {static_cast<double>(num) / static_cast<double>(den), false};
}

Prf1 class_prf1(std::size_t tp, std::size_t fp, std::size_t fn) {
  const auto p = ratio(tp, tp + fp);
  const auto r = ratio(tp, tp + fn);
  Prf1 out{p.value, r.value, 0.0, p.degenerate || r.degenerate};
  if (out.precision + out.recall > 0.0) out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  else out.degenerate = true;
  return out;
}

}  // namespace

Prf1 prf1(const Confusion& c, Averaging averaging) {
  const Prf1 pos = class_prf1(c.tp, c.fp, c.fn);
  if (averaging == Averaging::POSITIVE_CLASS) return pos;
  const Prf1 neg = class_prf1(c.tn, c.fn, c.fp);
  return {(pos.precision + neg.precision) / 2.0, (pos.recall + neg.recall) / 2.0, (pos.f1 + neg.f1) / 2.0,
          pos.degenerate || neg.degenerate};
}

Prf1 prf1(const ScoredLabels& data, double threshold, Averaging averaging) {
  return prf1(confusion(data, threshold), averaging);
}

double select_threshold(const ScoredLabels& data, ThresholdObjective objective) {
  if (objective.kind == ThresholdObjective::Kind::FIXED) return objective.value;
  data.check();

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data.scores[a] < data.scores[b]; });

  const auto n_pos = static_cast<double>(data.positives());
  // Start with every sample predicted positive.
  double tp = n_pos;
  double fp = static_cast<double>(data.size()) - n_pos;
  auto f1_of = [&](double tp_, double fp_) {
    const double fn_ = n_pos - tp_;
    const double den = 2.0 * tp_ + fp_ + fn_;
    return den > 0.0 ? 2.0 * tp_ / den : 0.0;
  };

  double best_threshold = data.scores[order.front()];
  double best_f1 = f1_of(tp, fp);
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    const double value = data.scores[order[i]];
    while (j < order.size() && data.scores[order[j]] == value) {
      (data.labels[order[j]] == 1 ? tp : fp) -= 1.0;
      ++j;
    }
    if (j == order.size()) break;
    const double next = data.scores[order[j]];
    double cut = value + (next - value) / 2.0;
    if (cut <= value) cut = std::nextafter(value, std::numeric_limits<double>::infinity());
    const double f1 = f1_of(tp, fp);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_threshold = cut;
    }
    i = j;
  }
  return best_threshold;
}

MetricBlock metric_block(const ScoredLabels& data, double threshold, Averaging averaging) {
  data.check();
  MetricBlock block;
  block.threshold = threshold;
  block.averaging = averaging;
  block.n = data.size();
  block.n_positive = data.positives();
  try {
    block.auc = auc(data);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UNDEFINED_METRIC) throw;
    block.warnings.emplace_back("auc undefined: single-class cell");
  }
  try {
    block.pcc = pcc(data);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UNDEFINED_METRIC) throw;
    block.warnings.emplace_back(block.n_positive == 0 || block.n_positive == block.n ? "pcc undefined: single-class cell"
                                                                                      : "pcc undefined: constant scores");
  }
  const Prf1 p = prf1(data, threshold, averaging);
  block.precision = p.precision;
  block.recall = p.recall;
  block.f1 = p.f1;
  if (p.degenerate) block.warnings.emplace_back("zero-denominator precision/recall cell set to 0");
  return block;
}

}  // namespace halprobe
