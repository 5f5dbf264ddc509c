#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace halprobe {

/// Scores paired with binary labels; higher score = more hallucinatory.
struct ScoredLabels {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t size() const { return scores.size(); }
  std::size_t positives() const;
  std::size_t negatives() const { return size() - positives(); }
  /// Throws INVALID_ARGUMENT for mismatched lengths, empty input or labels outside {0,1}.
  void check() const;
};

enum class Averaging { POSITIVE_CLASS, MACRO };
std::string_view to_string(Averaging averaging);

/// Mann-Whitney AUC with half credit for ties. Throws UNDEFINED_METRIC when a class is absent.
double auc(const ScoredLabels& data);

/// Pearson correlation of scores with labels. Throws UNDEFINED_METRIC on zero variance.
double pcc(const ScoredLabels& data);

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Prediction rule: score >= threshold is positive.
Confusion confusion(const ScoredLabels& data, double threshold);

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // some ratio had a zero denominator and was set to 0
};

Prf1 prf1(const ScoredLabels& data, double threshold, Averaging averaging = Averaging::POSITIVE_CLASS);
Prf1 prf1(const Confusion& c, Averaging averaging = Averaging::POSITIVE_CLASS);

struct ThresholdObjective {
  enum class Kind { F1, FIXED } kind = Kind::F1;
  double value = 0.0;

  static ThresholdObjective f1() { return {}; }
  static ThresholdObjective fixed(double v) { return {Kind::FIXED, v}; }
};

/// F1: the candidate cut maximizing positive-class F1, lowest threshold on ties.
/// Candidates are the midpoints between consecutive distinct scores plus the
/// minimum score itself (the predict-all-positive cut).
double select_threshold(const ScoredLabels& data, ThresholdObjective objective);

struct MetricBlock {
  std::optional<double> auc;  // absent when undefined for this cell
  std::optional<double> pcc;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double threshold = 0.0;
  Averaging averaging = Averaging::POSITIVE_CLASS;
  std::size_t n = 0;
  std::size_t n_positive = 0;
  std::vector<std::string> warnings;
};

/// All reported metrics at a frozen threshold. Undefined AUC/PCC become warnings.
MetricBlock metric_block(const ScoredLabels& data, double threshold, Averaging averaging = Averaging::POSITIVE_CLASS);

}  // namespace halprobe
