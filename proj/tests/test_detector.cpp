#include <doctest.h>

#include "halprobe/detector.hpp"
#include "halprobe/error.hpp"
#include "halprobe/metrics.hpp"
#include "halprobe/rng.hpp"
#include "halprobe/synth.hpp"
#include "test_util.hpp"

using namespace halprobe;

namespace {

struct Fixture {
  Corpus corpus;
  ActivationDump dump;
};

Fixture synthetic(std::uint64_t seed, std::size_t n = 80) {
  SyntheticSpec spec = SyntheticSpec::ragtruth_like(n, 2.0, 1.0, seed);
  spec.d = 15;
  spec.sae_dim = 20;
  spec.layers = {0, 3};
  spec.redeep_panels = RedeepPanelRule{};
  auto [c, d] = generate(spec);
  return {std::move(c), std::move(d)};
}

std::vector<int> labels_of(const DetectorInput& in) {
  std::vector<int> y;
  for (std::size_t i = 0; i < in.size(); ++i) y.push_back(in.sample(i).label);
  return y;
}

DetectorConfig small_config(DetectorKind kind) {
  DetectorConfig c;
  c.kind = kind;
  c.forest.n_trees = 15;
  c.mlp.hidden = {16, 8};
  c.mlp.epochs = 5;
  c.redeep_grid = {RedeepHyper{}, RedeepHyper{4, 2, 0.5}};
  c.sae.k = 6;
  c.sae.representation = SaeRepresentation::CONTRASTIVE;
  return c;
}

// Residual panel whose first coordinate is [task == D2T]; the rest is noise.
Fixture planted(std::uint64_t seed, bool informative) {
  Rng rng(seed);
  Fixture f;
  for (int i = 0; i < 300; ++i) {
    Sample s;
    s.id = "p" + std::to_string(i);
    s.task = kAllTasks[i % 3];
    s.response = "x";
    s.label = static_cast<int>(rng.index(2));
    f.corpus.samples.push_back(s);
    f.dump.manifest.sample_index.push_back({s.id, static_cast<std::size_t>(i)});
  }
  MatrixF X(300, 6);
  for (int i = 0; i < 300; ++i) {
    for (int j = 0; j < 6; ++j) X(i, j) = static_cast<float>(rng.normal());
    if (informative) X(i, 0) = f.corpus.samples[i].task == TaskType::D2T ? 1.0f : 0.0f;
  }
  f.dump.residual[{4, Hook::RESID_MID}] = X;
  sync_manifest(f.dump);
  return f;
}

}  // namespace

TEST_CASE("labels and names") {
  DetectorConfig c;
  c.kind = DetectorKind::LOGISTIC;
  c.layer = 15;
  CHECK(c.label() == "logistic@L15/resid_pre");
  CHECK(parse_detector_kind("redeep") == DetectorKind::REDEEP);
  CHECK_THROWS_AS(parse_detector_kind("svm"), Error);
  const DetectorConfig back = detector_config_from_json(to_json(c));
  CHECK(back.label() == c.label());
}

TEST_CASE("select_input skips empty responses unless asked") {
  Fixture f = synthetic(1, 10);
  f.corpus.samples[3].response.clear();
  CHECK(select_input(f.corpus, &f.dump, false).size() == f.corpus.size() - 1);
  CHECK(select_input(f.corpus, &f.dump, true).size() == f.corpus.size());
  ActivationDump partial = f.dump;
  partial.manifest.sample_index.pop_back();
  const DetectorInput in = select_input(f.corpus, &partial, true);
  try {
    in.rows();
    FAIL("expected MISSING_FEATURES");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MISSING_FEATURES);
  }
}

TEST_CASE("every detector survives a save/load round trip") {
  testutil::TempDir dir("detector");
  const Fixture f = synthetic(2);
  const DetectorInput in = select_input(f.corpus, &f.dump, false);
  const std::vector<int> y = labels_of(in);
  for (DetectorKind kind : {DetectorKind::NAIVE, DetectorKind::LOGISTIC, DetectorKind::FOREST, DetectorKind::MLP,
                            DetectorKind::SAE, DetectorKind::REDEEP}) {
    CAPTURE(to_string(kind));
    const DetectorModel m = fit_detector(small_config(kind), in, y);
    const auto path = dir / (std::string(to_string(kind)) + ".json");
    save_detector(m, path);
    const DetectorModel back = load_detector(path);
    CHECK(back.threshold == m.threshold);
    CHECK(back.kind() == kind);
    CHECK(score_detector(back, in) == score_detector(m, in));
  }
}

TEST_CASE("naive detector scores the task heuristic with a fixed cut") {
  const Fixture f = synthetic(3, 20);
  const DetectorInput in = select_input(f.corpus, nullptr, true);
  const DetectorModel m = fit_detector(small_config(DetectorKind::NAIVE), in, labels_of(in));
  CHECK(m.threshold == kNaiveThreshold);
  const auto s = score_detector(m, in);
  for (std::size_t i = 0; i < in.size(); ++i) CHECK(s[i] == naive_predict(in.sample(i)));
}

TEST_CASE("provenance records layer, hook and version") {
  const Fixture f = synthetic(4, 30);
  const DetectorInput in = select_input(f.corpus, &f.dump, false);
  DetectorConfig c = small_config(DetectorKind::LOGISTIC);
  c.layer = 3;
  c.hook = Hook::RESID_MID;
  const DetectorModel m = fit_detector(c, in, labels_of(in));
  CHECK(m.provenance.layer == 3);
  CHECK(m.provenance.hook == "resid_mid");
  CHECK(m.provenance.version == HALPROBE_VERSION);
  CHECK(m.provenance.training_info.contains("iterations"));

  c.layer = 9;
  CHECK_THROWS_AS(fit_detector(c, in, labels_of(in)), Error);
}

TEST_CASE("sae probe: separable features and identical views") {
  Fixture f = synthetic(5, 60);
  SaePanels& p = f.dump.sae.at(0);
  for (Eigen::Index i = 0; i < p.last_token.rows(); ++i)
    p.last_token(i, 0) = static_cast<float>(f.corpus.samples[static_cast<std::size_t>(i)].label);
  p.max_act = p.last_token;
  SaeProbeConfig direct;
  const DetectorModel last = build_sae_probe(direct, f.dump, f.corpus, 1);
  const DetectorInput in = select_input(f.corpus, &f.dump, false);
  CHECK(auc({score_detector(last, in), labels_of(in)}) == 1.0);

  SaeProbeConfig max_view = direct;
  max_view.extraction = SaeView::MAX_ACT;
  const DetectorModel mx = build_sae_probe(max_view, f.dump, f.corpus, 1);
  CHECK(score_detector(mx, in) == score_detector(last, in));
}

TEST_CASE("sae probe: contrastive with k = d equals direct") {
  const Fixture f = synthetic(6, 60);
  const DetectorInput in = select_input(f.corpus, &f.dump, false);
  SaeProbeConfig direct;
  direct.downstream = Downstream::FOREST;
  SaeProbeConfig full = direct;
  full.representation = SaeRepresentation::CONTRASTIVE;
  full.k = 20;
  CHECK(score_detector(build_sae_probe(direct, f.dump, f.corpus, 2), in) ==
        score_detector(build_sae_probe(full, f.dump, f.corpus, 2), in));
}

TEST_CASE("task-type audit: planted feature and null activations") {
  const Fixture hit = planted(1, true);
  const MetricBlock b = audit_task_probe(hit.dump, hit.corpus, 4, Hook::RESID_MID, 0);
  REQUIRE(b.auc.has_value());
  CHECK(*b.auc == 1.0);

  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Fixture null = planted(100 + seed, false);
    const MetricBlock m = audit_task_probe(null.dump, null.corpus, 4, Hook::RESID_MID, seed);
    mean += m.auc.value_or(0.5) / 5.0;
  }
  CHECK(std::abs(mean - 0.5) <= 0.05);
}

TEST_CASE("fit rejects single-class labels and length mismatches") {
  const Fixture f = synthetic(7, 10);
  const DetectorInput in = select_input(f.corpus, &f.dump, false);
  const std::vector<int> ones(in.size(), 1);
  try {
    fit_detector(small_config(DetectorKind::LOGISTIC), in, ones);
    FAIL("expected DEGENERATE_LABELS");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DEGENERATE_LABELS);
  }
  const std::vector<int> short_labels{0, 1};
  CHECK_THROWS_AS(fit_detector(small_config(DetectorKind::LOGISTIC), in, short_labels), Error);
}
