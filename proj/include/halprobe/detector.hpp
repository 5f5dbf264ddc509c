#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "halprobe/corpus.hpp"
#include "halprobe/dump.hpp"
#include "halprobe/metrics.hpp"
#include "halprobe/probes.hpp"
#include "halprobe/redeep.hpp"

#ifndef HALPROBE_VERSION
#define HALPROBE_VERSION "0.1.0"
#endif

namespace halprobe {

enum class DetectorKind { NAIVE, LOGISTIC, FOREST, MLP, SAE, REDEEP };
enum class SaeRepresentation { DIRECT, CONTRASTIVE };
enum class Downstream { LOGISTIC, FOREST, MLP };

std::string_view to_string(DetectorKind kind);
std::string_view to_string(SaeRepresentation rep);
std::string_view to_string(Downstream downstream);
DetectorKind parse_detector_kind(std::string_view text);
SaeRepresentation parse_sae_representation(std::string_view text);
Downstream parse_downstream(std::string_view text);

/// The naive scorer is a hard 0/1 classifier; its decision cut is fixed.
inline constexpr double kNaiveThreshold = 0.5;

struct SaeProbeConfig {
  int layer = 0;
  SaeView extraction = SaeView::LAST_TOKEN;
  SaeRepresentation representation = SaeRepresentation::DIRECT;
  int k = 4096;
  Downstream downstream = Downstream::LOGISTIC;
};

struct DetectorConfig {
  DetectorKind kind = DetectorKind::NAIVE;
  int layer = 0;  // residual probes
  Hook hook = Hook::RESID_PRE;
  LogisticOptions logistic;
  ForestOptions forest;
  MlpOptions mlp;
  SaeProbeConfig sae;
  std::vector<RedeepHyper> redeep_grid = default_redeep_grid();
  bool include_empty_responses = false;

  bool needs_dump() const { return kind != DetectorKind::NAIVE; }
  /// Copies `seed` into every seeded component.
  void set_seed(std::uint64_t seed);
  /// Short row label for reports, e.g. "logistic@L15/resid_pre".
  std::string label() const;
};

nlohmann::json to_json(const DetectorConfig& config);
DetectorConfig detector_config_from_json(const nlohmann::json& j);

struct Provenance {
  std::string training_corpus;
  std::optional<std::uint64_t> split_seed;
  std::optional<int> layer;
  std::optional<std::string> hook;  // or the SAE view for SAE probes
  nlohmann::json hyperparameters = nlohmann::json::object();
  nlohmann::json training_info = nlohmann::json::object();
  std::string version = HALPROBE_VERSION;
};

struct SaeModel {
  MinMaxStats minmax;
  std::optional<FeatureMask> mask;  // CONTRASTIVE only
  std::variant<LinearProbe, ForestProbe, MLPProbe> downstream;
};

struct RedeepModel {
  RedeepHyper hyper;
  std::vector<int> head_rank;
  std::vector<int> layer_rank;
  std::vector<GridPoint> grid;
};

struct DetectorModel {
  DetectorConfig config;
  Provenance provenance;
  std::variant<std::monostate, LinearProbe, ForestProbe, MLPProbe, SaeModel, RedeepModel> model;
  double threshold = 0.5;  // frozen decision threshold, selected on training scores

  DetectorKind kind() const { return config.kind; }
};

/// The samples a detector sees, with their dump rows resolved by id.
struct DetectorInput {
  const Corpus* corpus = nullptr;
  std::vector<std::size_t> samples;  // indices into corpus->samples
  const ActivationDump* dump = nullptr;

  const Sample& sample(std::size_t i) const { return corpus->samples[samples[i]]; }
  std::size_t size() const { return samples.size(); }
  /// Dump rows of the selected samples; throws MISSING_FEATURES for an id absent from the dump.
  std::vector<std::size_t> rows() const;
};

/// All non-empty-response samples of a corpus (every sample when include_empty is set).
DetectorInput select_input(const Corpus& corpus, const ActivationDump* dump, bool include_empty);

/// `labels` are aligned with train.samples; the input's own Sample labels are never read.
DetectorModel fit_detector(const DetectorConfig& config, const DetectorInput& train, std::span<const int> labels);

/// Higher = more hallucinatory. Never reads labels.
std::vector<double> score_detector(const DetectorModel& model, const DetectorInput& input);

/// SAE path: view -> minmax(train) -> optional contrastive mask -> downstream classifier.
DetectorModel build_sae_probe(const SaeProbeConfig& config, const ActivationDump& dump, const Corpus& corpus_train,
                              std::uint64_t seed = 0);

/// Logistic probe predicting [task = D2T] from last-token activations of (layer, hook),
/// fit on a task-stratified 70% split and scored on the rest.
MetricBlock audit_task_probe(const ActivationDump& dump, const Corpus& corpus, int layer, Hook hook,
                             std::uint64_t seed = 0, Averaging averaging = Averaging::POSITIVE_CLASS);

nlohmann::json to_json(const DetectorModel& model);
DetectorModel detector_model_from_json(const nlohmann::json& j);
void save_detector(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_detector(const std::filesystem::path& path);

nlohmann::json to_json(const MetricBlock& block);
MetricBlock metric_block_from_json(const nlohmann::json& j);

}  // namespace halprobe
