#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "halprobe/corpus.hpp"
#include "halprobe/dump.hpp"

namespace halprobe {

struct SynthTask {
  std::string name;  // task label as written in the corpus (QA, D2T, SUMMARY, OTHER)
  std::size_t n = 0;
  double rate = 0.0;   // hallucination rate
  double delta = 0.0;  // within-task signal magnitude along the signal direction
};

enum class LabelMode {
  BERNOULLI,  // each label ~ Bernoulli(rate)
  EXACT,      // exactly round(n * rate) positives per task, seeded placement
};

/// Rules for the ecs/pks panels:
///   pks = clip(pks_base + pks_shift * y + noise, 0, ln 2) on informative layers
///   ecs = clip(ecs_base - ecs_shift * y + noise, 0, 1) on informative heads
/// non-informative columns drop the label term.
struct RedeepPanelRule {
  int n_heads = 16;
  int n_layers = 8;
  std::vector<int> informative_heads = {0, 1, 2, 3};
  std::vector<int> informative_layers = {0, 1};
  double pks_base = 0.2;
  double pks_shift = 0.1;
  double ecs_base = 0.5;
  double ecs_shift = 0.1;
  double noise = 0.05;
  int min_tokens = 8;
  int max_tokens = 32;
  bool per_token = true;
};

struct SyntheticSpec {
  std::string name = "synthetic";
  std::vector<SynthTask> tasks;
  int d = 64;
  double sigma = 1.0;
  double tau = 0.0;  // spurious magnitude along the per-task direction
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> basis_seed;  // defaults to seed
  int signal_slot = 0;  // which signal direction this corpus plants
  int n_signal_slots = 2;
  std::vector<int> layers = {0};
  std::vector<Hook> hooks = {Hook::RESID_PRE, Hook::RESID_MID};
  std::optional<int> sae_dim;
  std::optional<RedeepPanelRule> redeep_panels;
  LabelMode label_mode = LabelMode::BERNOULLI;

  /// Three tasks with the LLaMA-2 7B RAGTruth hallucination rates.
  static SyntheticSpec ragtruth_like(std::size_t n_per_task, double delta, double tau, std::uint64_t seed);
};

/// The orthonormal directions: column t < n_tasks is task t's spurious
/// direction, column n_tasks + s is signal slot s. Each direction lives on its
/// own block of coordinates, so the columns also have disjoint supports.
Eigen::MatrixXd synth_basis(const SyntheticSpec& spec);

/// x = tau * e_task + y * delta_task * v + sigma * g per (layer, hook) panel,
/// with an independent noise draw for every panel.
std::pair<Corpus, ActivationDump> generate(const SyntheticSpec& spec);

struct BayesAuc {
  std::map<std::string, double> optimal_per_task;  // Phi(delta / (sigma sqrt 2))
  std::optional<double> optimal_overall;           // projection scorer pooled over tasks
  std::optional<double> naive_overall;             // 1-iff-D2T scorer, pooled
  std::map<std::string, std::size_t> positives;    // round(n * rate) per task
};

/// Closed forms over the deterministically labeled population
/// (round(n_t * rate_t) positives per task).
BayesAuc bayes_auc(const SyntheticSpec& spec);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec read_synthetic_spec(const std::filesystem::path& path);

}  // namespace halprobe
