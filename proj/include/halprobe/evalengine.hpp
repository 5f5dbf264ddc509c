#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "halprobe/corpus.hpp"
#include "halprobe/detector.hpp"
#include "halprobe/dump.hpp"
#include "halprobe/metrics.hpp"

namespace halprobe {

enum class ProtocolKind { IN_DIST, CROSS_TASK, CROSS_DATASET, HYPER_TRANSFER, AUDIT };
std::string_view to_string(ProtocolKind kind);  // indist | cross-task | cross-dataset | hyper-transfer | audit
ProtocolKind parse_protocol_kind(std::string_view text);

struct Dataset {
  Corpus corpus;
  std::shared_ptr<const ActivationDump> dump;  // null for label-only corpora
};

/// Corpora addressed by the names used in ProtocolSpec.
using DatasetRegistry = std::map<std::string, Dataset>;

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::IN_DIST;
  std::string train_corpus;
  std::string eval_corpus;
  std::optional<std::vector<TaskType>> train_task_filter;
  std::optional<std::vector<TaskType>> eval_task_filter;
  DetectorConfig detector;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  double split_fraction = 0.7;  // train share when train and eval name the same corpus
  Stratify stratify = Stratify::TASK_AND_LABEL;

  /// Throws INVALID_ARGUMENT on violated protocol invariants.
  void check() const;
};

nlohmann::json to_json(const ProtocolSpec& spec);
ProtocolSpec protocol_spec_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Label access instrumentation

enum class Phase { TRAIN, TUNE, SCORE };
std::string_view to_string(Phase phase);

/// Owns a corpus whose labels are hidden (set to -1) in the view handed to
/// detectors. Real labels are only reachable through read(), which counts
/// every access by phase.
class GuardedCorpus {
 public:
  explicit GuardedCorpus(Corpus corpus);

  const Corpus& masked() const { return masked_; }
  std::vector<int> read(std::span<const std::size_t> indices, Phase phase);
  std::size_t reads(Phase phase) const;

  /// Throws LEAKAGE if any label was read outside the SCORE phase.
  void require_score_only(std::string_view side) const;

 private:
  Corpus masked_;
  std::vector<int> labels_;
  std::map<Phase, std::size_t> reads_;
};

struct LabelAudit {
  std::map<Phase, std::size_t> train_reads;
  std::map<Phase, std::size_t> eval_reads;

  std::size_t eval_reads_before_scoring() const;
};

// ---------------------------------------------------------------------------
// Reports

struct Cell {
  MetricBlock positive_class;
  MetricBlock macro;
};

struct SeedRun {
  std::uint64_t seed = 0;
  Cell overall;
  std::map<TaskType, Cell> per_task;
  Cell naive_overall;
  std::map<TaskType, Cell> naive_per_task;
  double threshold = 0.0;
  double naive_threshold = 0.0;
  nlohmann::json provenance = nlohmann::json::object();
  LabelAudit label_audit;
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample std across seeds, 0 for a single seed
  std::size_t count = 0;
};

struct CellStats {
  std::optional<Stat> auc;
  std::optional<Stat> pcc;
  Stat precision, recall, f1;
  Stat macro_precision, macro_recall, macro_f1;
};

struct EvalReport {
  ProtocolKind kind = ProtocolKind::IN_DIST;
  std::string train_corpus;
  std::string eval_corpus;
  std::optional<std::vector<TaskType>> train_task_filter;
  std::optional<std::vector<TaskType>> eval_task_filter;
  DetectorKind detector = DetectorKind::NAIVE;
  std::string detector_label;
  std::string threshold_policy;
  double split_fraction = 0.7;
  Stratify stratify = Stratify::TASK_AND_LABEL;
  std::vector<SeedRun> runs;
  CellStats overall;
  std::map<TaskType, CellStats> per_task;
  CellStats naive_baseline;
  std::map<TaskType, CellStats> naive_per_task;
  std::vector<std::string> warnings;
  LabelAudit label_audit;  // summed over seeds
};

/// Trains/tunes on the train side only, freezes the threshold, scores the eval side.
EvalReport run_protocol(const ProtocolSpec& spec, const DatasetRegistry& datasets);

/// Independent protocol jobs on up to `jobs` threads; results keep input order.
std::vector<EvalReport> run_protocols(const std::vector<ProtocolSpec>& specs, const DatasetRegistry& datasets,
                                      std::size_t jobs);

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);
/// Every *.json report in a directory, sorted by file name.
std::vector<EvalReport> read_reports(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Verdicts and audits

enum class NaiveVerdict { BEATS_NAIVE, WITHIN_NOISE, BELOW_NAIVE };
std::string_view to_string(NaiveVerdict verdict);

NaiveVerdict compare_auc(double detector_auc, double naive_auc, double margin = 0.01);
/// Mean overall AUC against the naive baseline block. Undefined AUCs compare as 0.5.
NaiveVerdict compare_with_naive(const EvalReport& report, double margin = 0.01);

enum class AuditFlag {
  PASS,
  BEATS_NAIVE,
  WITHIN_NOISE,
  BELOW_NAIVE,
  BEATS_LINEAR,
  MATCHES_LINEAR,
  BELOW_LINEAR,
  REFERENCE,
  FAILS_OOD,
  SPURIOUS_RISK_HIGH,
  SPURIOUS_RISK_LOW,
  INCOMPLETE,
  NOT_EVALUATED,
};
std::string_view to_string(AuditFlag flag);

struct AuditThresholds {
  double margin = 0.01;
  double ood_floor = 0.55;       // worst cross AUC at or below this fails guideline III
  double spurious_auc = 0.9;     // task-probe AUC at or above this is high risk
};

struct DetectorAudit {
  std::string detector;
  std::optional<double> in_dist_auc;
  std::optional<double> naive_auc;
  AuditFlag guideline_i = AuditFlag::INCOMPLETE;
  std::optional<double> linear_auc;
  AuditFlag guideline_ii = AuditFlag::INCOMPLETE;
  std::optional<double> worst_cross_auc;
  AuditFlag guideline_iii = AuditFlag::INCOMPLETE;
  AuditFlag guideline_iv = AuditFlag::NOT_EVALUATED;
  AuditFlag guideline_v = AuditFlag::NOT_EVALUATED;
  bool complete() const;
};

struct AuditSummary {
  std::vector<DetectorAudit> detectors;
  std::optional<double> task_probe_auc;
  AuditFlag task_probe = AuditFlag::INCOMPLETE;
};

/// AUDIT-kind reports in `reports` supply the task-probe AUC unless one is passed.
AuditSummary guideline_audit(const std::vector<EvalReport>& reports, std::optional<double> task_probe_auc = std::nullopt,
                             const AuditThresholds& thresholds = {});
nlohmann::json to_json(const AuditSummary& summary);

// ---------------------------------------------------------------------------
// Tables

enum class TableFormat { TEXT, CSV };
TableFormat parse_table_format(std::string_view text);

/// One row per (report, task) plus an Overall row and the naive baseline,
/// columns AUC, PCC, Precision, Recall, F1 as mean±std.
std::string render_per_task_table(const std::vector<EvalReport>& reports, TableFormat format);

/// Cross-task grid from single-task CROSS_TASK reports: rows detector × eval
/// task, column groups per training task (AUC, Precision, Recall, F1).
std::string render_cross_task_table(const std::vector<EvalReport>& reports, TableFormat format);

}  // namespace halprobe
