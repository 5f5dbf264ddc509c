#include <doctest.h>

#include <cmath>

#include "halprobe/corpus.hpp"
#include "halprobe/detector.hpp"
#include "halprobe/error.hpp"
#include "halprobe/evalengine.hpp"
#include "halprobe/metrics.hpp"
#include "halprobe/probes.hpp"
#include "halprobe/synth.hpp"
#include "test_util.hpp"

using namespace halprobe;

namespace {

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double probe_auc(const SyntheticSpec& spec, std::uint64_t seed) {
  auto [corpus, dump] = generate(spec);
  DatasetRegistry reg;
  reg["s"] = Dataset{std::move(corpus), std::make_shared<const ActivationDump>(std::move(dump))};
  ProtocolSpec p;
  p.train_corpus = p.eval_corpus = "s";
  p.detector.kind = DetectorKind::LOGISTIC;
  p.seeds = {seed};
  return run_protocol(p, reg).overall.auc->mean;
}

}  // namespace

TEST_CASE("basis columns are orthonormal with disjoint supports") {
  SyntheticSpec spec = SyntheticSpec::ragtruth_like(10, 1.0, 1.0, 0);
  spec.d = 20;
  const Eigen::MatrixXd B = synth_basis(spec);
  CHECK(B.cols() == 5);
  const Eigen::MatrixXd G = B.transpose() * B;
  CHECK((G - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() <= 1e-12);
  for (Eigen::Index a = 0; a < B.cols(); ++a)
    for (Eigen::Index b = a + 1; b < B.cols(); ++b) CHECK((B.col(a).cwiseProduct(B.col(b))).cwiseAbs().maxCoeff() == 0.0);

  spec.d = 4;
  try {
    synth_basis(spec);
    FAIL("expected DIMENSION_TOO_SMALL");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DIMENSION_TOO_SMALL);
  }
}

TEST_CASE("generate: corpus and dump agree and are seeded") {
  SyntheticSpec spec = SyntheticSpec::ragtruth_like(50, 1.0, 2.0, 3);
  spec.sae_dim = 12;
  spec.redeep_panels = RedeepPanelRule{};
  const auto [corpus, dump] = generate(spec);
  CHECK(corpus.size() == 150);
  CHECK(dump.manifest.rows() == 150);
  CHECK(validate_dump(dump).empty());
  for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(dump.row_of(corpus.samples[i].id) == i);
  CHECK(dump.sae.at(0).last_token.cols() == 12);
  REQUIRE(dump.per_token.has_value());
  CHECK(dump.ecs->cols() == 16);

  const auto [c2, d2] = generate(spec);
  CHECK(d2.residual.at({0, Hook::RESID_PRE}) == dump.residual.at({0, Hook::RESID_PRE}));
  for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(c2.samples[i].label == corpus.samples[i].label);
  CHECK(dump.residual.at({0, Hook::RESID_PRE}) != dump.residual.at({0, Hook::RESID_MID}));
}

TEST_CASE("exact label mode plants round(n * rate) positives") {
  SyntheticSpec spec = SyntheticSpec::ragtruth_like(1000, 0.0, 0.0, 1);
  spec.label_mode = LabelMode::EXACT;
  const auto [corpus, dump] = generate(spec);
  const BayesAuc b = bayes_auc(spec);
  std::map<std::string, std::size_t> pos;
  for (const auto& s : corpus.samples) pos[std::string(to_string(s.task))] += s.label;
  CHECK(pos == b.positives);
  CHECK(b.positives.at("D2T") == 860);
}

TEST_CASE("bayes closed forms") {
  SyntheticSpec spec = SyntheticSpec::ragtruth_like(100, 0.0, 0.0, 0);
  CHECK(bayes_auc(spec).optimal_per_task.at("QA") == 0.5);
  spec.tasks = {{"QA", 100, 0.3, std::sqrt(2.0)}};
  const BayesAuc single = bayes_auc(spec);
  CHECK(single.optimal_per_task.at("QA") == doctest::Approx(phi(1.0)).epsilon(1e-14));
  CHECK(single.naive_overall.value() == 0.5);

  SyntheticSpec three = SyntheticSpec::ragtruth_like(1000, 0.0, 0.0, 0);
  three.label_mode = LabelMode::EXACT;
  const auto [corpus, dump] = generate(three);
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& x : corpus.samples) {
    s.push_back(x.task == TaskType::D2T);
    y.push_back(x.label);
  }
  CHECK(std::abs(bayes_auc(three).naive_overall.value() - testutil::pairwise_auc(s, y)) <= 1e-12);
}

TEST_CASE("no signal, no spurious direction: probe is at chance") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SyntheticSpec spec = SyntheticSpec::ragtruth_like(3000, 0.0, 0.0, 40 + seed);
    spec.d = 10;
    spec.hooks = {Hook::RESID_PRE};
    CHECK(std::abs(probe_auc(spec, seed) - 0.5) <= 0.03);
  }
}

TEST_CASE("trained probe approaches the Bayes AUC within a task") {
  SyntheticSpec spec;
  spec.tasks = {{"QA", 2000, 0.5, std::sqrt(2.0)}};
  spec.d = 10;
  spec.seed = 8;
  spec.n_signal_slots = 1;
  spec.hooks = {Hook::RESID_PRE};
  const double bayes = bayes_auc(spec).optimal_per_task.at("QA");
  CHECK(std::abs(probe_auc(spec, 0) - bayes) <= 0.04);
}

TEST_CASE("spec json round trip and validation") {
  SyntheticSpec spec = SyntheticSpec::ragtruth_like(20, 0.5, 1.5, 9);
  spec.sae_dim = 8;
  spec.basis_seed = 4;
  spec.redeep_panels = RedeepPanelRule{};
  spec.label_mode = LabelMode::EXACT;
  const SyntheticSpec back = synthetic_spec_from_json(to_json(spec));
  CHECK(to_json(back) == to_json(spec));

  SyntheticSpec bad = spec;
  bad.tasks[0].rate = 1.5;
  CHECK_THROWS_AS(generate(bad), Error);
  bad = spec;
  bad.tasks[0].name = "POETRY";
  CHECK_THROWS_AS(generate(bad), Error);
}
