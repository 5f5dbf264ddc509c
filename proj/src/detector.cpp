#include "halprobe/detector.hpp"

#include <algorithm>
#include <cmath>

#include "halprobe/error.hpp"
#include "io_util.hpp"

namespace halprobe {

using nlohmann::json;

std::string_view to_string(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::NAIVE: return "naive";
    case DetectorKind::LOGISTIC: return "logistic";
    case DetectorKind::FOREST: return "forest";
    case DetectorKind::MLP: return "mlp";
    case DetectorKind::SAE: return "sae";
    case DetectorKind::REDEEP: return "redeep";
  }
  return "?";
}

std::string_view to_string(SaeRepresentation rep) { return rep == SaeRepresentation::DIRECT ? "direct" : "contrastive"; }

std::string_view to_string(Downstream downstream) {
  switch (downstream) {
    case Downstream::LOGISTIC: return "logistic";
    case Downstream::FOREST: return "forest";
    case Downstream::MLP: return "mlp";
  }
  return "?";
}

DetectorKind parse_detector_kind(std::string_view text) {
  for (auto k : {DetectorKind::NAIVE, DetectorKind::LOGISTIC, DetectorKind::FOREST, DetectorKind::MLP, DetectorKind::SAE,
                 DetectorKind::REDEEP})
    if (text == to_string(k)) return k;
  throw Error(ErrorCode::INVALID_ARGUMENT,
              "unknown detector '" + std::string(text) + "'; accepted: naive, logistic, forest, mlp, sae, redeep");
}

SaeRepresentation parse_sae_representation(std::string_view text) {
  if (text == "direct") return SaeRepresentation::DIRECT;
  if (text == "contrastive") return SaeRepresentation::CONTRASTIVE;
  throw Error(ErrorCode::INVALID_ARGUMENT, "unknown SAE representation '" + std::string(text) + "'; accepted: direct, contrastive");
}

Downstream parse_downstream(std::string_view text) {
  for (auto d : {Downstream::LOGISTIC, Downstream::FOREST, Downstream::MLP})
    if (text == to_string(d)) return d;
  throw Error(ErrorCode::INVALID_ARGUMENT, "unknown downstream classifier '" + std::string(text) + "'; accepted: logistic, forest, mlp");
}

void DetectorConfig::set_seed(std::uint64_t seed) {
  logistic.seed = seed;
  forest.seed = seed;
  mlp.seed = seed;
}

std::string DetectorConfig::label() const {
  std::string out(to_string(kind));
  switch (kind) {
    case DetectorKind::LOGISTIC:
    case DetectorKind::FOREST:
    case DetectorKind::MLP:
      out += "@L" + std::to_string(layer) + "/" + std::string(to_string(hook));
      break;
    case DetectorKind::SAE:
      out += "@L" + std::to_string(sae.layer) + "/" + std::string(to_string(sae.extraction)) + "/" +
             std::string(to_string(sae.representation)) + "/" + std::string(to_string(sae.downstream));
      break;
    default:
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON helpers

namespace {

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Eigen::MatrixXd mat_from(const json& j) {
  Eigen::MatrixXd m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != m.rows()) throw Error(ErrorCode::PARSE_ERROR, "matrix row count mismatch");
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Eigen::VectorXd row = vec_from(data[static_cast<std::size_t>(r)]);
    if (row.size() != m.cols()) throw Error(ErrorCode::PARSE_ERROR, "matrix column count mismatch");
    m.row(r) = row.transpose();
  }
  return m;
}

json to_j(const Standardizer& s) {
  return {{"retained", s.retained}, {"mean", vec_json(s.mean)}, {"scale", vec_json(s.scale)}, {"input_dim", s.input_dim}};
}

Standardizer standardizer_from(const json& j) {
  Standardizer s;
  s.retained = j.at("retained").get<std::vector<int>>();
  s.mean = vec_from(j.at("mean"));
  s.scale = vec_from(j.at("scale"));
  s.input_dim = j.at("input_dim").get<int>();
  return s;
}

json to_j(const LogisticOptions& o) {
  return {{"l2_lambda", o.l2_lambda}, {"tol", o.tol}, {"max_iter", o.max_iter}, {"seed", o.seed}, {"history", o.history}};
}

LogisticOptions logistic_options_from(const json& j) {
  LogisticOptions o;
  o.l2_lambda = j.value("l2_lambda", o.l2_lambda);
  o.tol = j.value("tol", o.tol);
  o.max_iter = j.value("max_iter", o.max_iter);
  o.seed = j.value("seed", o.seed);
  o.history = j.value("history", o.history);
  return o;
}

json to_j(const ForestOptions& o) {
  return {{"n_trees", o.n_trees},
          {"max_depth", o.max_depth ? json(*o.max_depth) : json(nullptr)},
          {"max_features", o.max_features ? json(*o.max_features) : json(nullptr)},
          {"class_weighting", o.class_weighting == ClassWeighting::BALANCED ? "balanced" : "none"},
          {"bootstrap", o.bootstrap},
          {"min_samples_split", o.min_samples_split},
          {"seed", o.seed}};
}

ForestOptions forest_options_from(const json& j) {
  ForestOptions o;
  o.n_trees = j.value("n_trees", o.n_trees);
  if (auto it = j.find("max_depth"); it != j.end() && !it->is_null()) o.max_depth = it->get<int>();
  if (auto it = j.find("max_features"); it != j.end() && !it->is_null()) o.max_features = it->get<int>();
  const std::string cw = j.value("class_weighting", std::string("balanced"));
  if (cw == "balanced") o.class_weighting = ClassWeighting::BALANCED;
  else if (cw == "none") o.class_weighting = ClassWeighting::NONE;
  else throw Error(ErrorCode::INVALID_ARGUMENT, "class_weighting must be balanced or none");
  o.bootstrap = j.value("bootstrap", o.bootstrap);
  o.min_samples_split = j.value("min_samples_split", o.min_samples_split);
  o.seed = j.value("seed", o.seed);
  return o;
}

json to_j(const MlpOptions& o) {
  return {{"hidden", o.hidden}, {"epochs", o.epochs}, {"lr", o.lr}, {"batch_size", o.batch_size}, {"seed", o.seed}};
}

MlpOptions mlp_options_from(const json& j) {
  MlpOptions o;
  if (j.contains("hidden")) o.hidden = j.at("hidden").get<std::vector<int>>();
  o.epochs = j.value("epochs", o.epochs);
  o.lr = j.value("lr", o.lr);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.seed = j.value("seed", o.seed);
  return o;
}

json to_j(const RedeepHyper& h) {
  return {{"top_heads", h.top_heads}, {"top_layers", h.top_layers}, {"lambda", h.lambda},
          {"variant", to_string(h.variant)}, {"chunk_size", h.chunk_size}, {"threshold", h.threshold}};
}

RedeepHyper redeep_hyper_from(const json& j) {
  RedeepHyper h;
  h.top_heads = j.value("top_heads", h.top_heads);
  h.top_layers = j.value("top_layers", h.top_layers);
  h.lambda = j.value("lambda", h.lambda);
  h.variant = parse_redeep_variant(j.value("variant", std::string("token")));
  h.chunk_size = j.value("chunk_size", h.chunk_size);
  h.threshold = j.value("threshold", h.threshold);
  h.check();
  return h;
}

json to_j(const LinearProbe& p) {
  return {{"weights", vec_json(p.weights)},
          {"bias", p.bias},
          {"standardizer", to_j(p.standardizer)},
          {"l2_lambda", p.l2_lambda},
          {"report",
           {{"iterations", p.report.iterations},
            {"converged", p.report.converged},
            {"grad_max_norm", p.report.grad_max_norm},
            {"initial_loss", p.report.initial_loss},
            {"final_loss", p.report.final_loss}}}};
}

LinearProbe linear_from(const json& j) {
  LinearProbe p;
  p.weights = vec_from(j.at("weights"));
  p.bias = j.at("bias").get<double>();
  p.standardizer = standardizer_from(j.at("standardizer"));
  p.l2_lambda = j.at("l2_lambda").get<double>();
  const auto& r = j.at("report");
  p.report = {r.at("iterations").get<int>(), r.at("converged").get<bool>(), r.at("grad_max_norm").get<double>(),
              r.at("initial_loss").get<double>(), r.at("final_loss").get<double>()};
  return p;
}

json to_j(const ForestProbe& f) {
  json trees = json::array();
  for (const auto& tree : f.trees) {
    json nodes = json::array();
    for (const auto& n : tree.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.positive_fraction});
    trees.push_back(nodes);
  }
  return {{"options", to_j(f.options)}, {"input_dim", f.input_dim}, {"trees", trees}};
}

ForestProbe forest_from(const json& j) {
  ForestProbe f;
  f.options = forest_options_from(j.at("options"));
  f.input_dim = j.at("input_dim").get<int>();
  for (const auto& t : j.at("trees")) {
    DecisionTree tree;
    for (const auto& n : t)
      tree.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                            n.at(4).get<double>()});
    f.trees.push_back(std::move(tree));
  }
  return f;
}

json to_j(const MLPProbe& p) {
  json layers = json::array();
  for (const auto& l : p.layers) layers.push_back({{"W", mat_json(l.W)}, {"b", vec_json(l.b)}});
  return {{"standardizer", to_j(p.standardizer)}, {"layers", layers}, {"options", to_j(p.options)}, {"final_loss", p.final_loss}};
}

MLPProbe mlp_from(const json& j) {
  MLPProbe p;
  p.standardizer = standardizer_from(j.at("standardizer"));
  for (const auto& l : j.at("layers")) p.layers.push_back({mat_from(l.at("W")), vec_from(l.at("b"))});
  p.options = mlp_options_from(j.at("options"));
  p.final_loss = j.at("final_loss").get<double>();
  return p;
}

json to_j(const SaeModel& m) {
  json j{{"minmax", {{"min", vec_json(m.minmax.min)}, {"max", vec_json(m.minmax.max)}}}};
  if (m.mask) {
    j["mask"] = {{"indices", m.mask->indices},
                 {"ranking", m.mask->ranking},
                 {"contrast", vec_json(m.mask->contrast)},
                 {"input_dim", m.mask->input_dim}};
  } else {
    j["mask"] = nullptr;
  }
  std::visit(
      [&](const auto& probe) {
        using T = std::decay_t<decltype(probe)>;
        if constexpr (std::is_same_v<T, LinearProbe>) j["downstream"] = {{"kind", "logistic"}, {"probe", to_j(probe)}};
        else if constexpr (std::is_same_v<T, ForestProbe>) j["downstream"] = {{"kind", "forest"}, {"probe", to_j(probe)}};
        else j["downstream"] = {{"kind", "mlp"}, {"probe", to_j(probe)}};
      },
      m.downstream);
  return j;
}

SaeModel sae_from(const json& j) {
  SaeModel m;
  m.minmax.min = vec_from(j.at("minmax").at("min"));
  m.minmax.max = vec_from(j.at("minmax").at("max"));
  if (const auto& mask = j.at("mask"); !mask.is_null()) {
    FeatureMask fm;
    fm.indices = mask.at("indices").get<std::vector<int>>();
    fm.ranking = mask.at("ranking").get<std::vector<int>>();
    fm.contrast = vec_from(mask.at("contrast"));
    fm.input_dim = mask.at("input_dim").get<int>();
    m.mask = std::move(fm);
  }
  const auto& ds = j.at("downstream");
  switch (parse_downstream(ds.at("kind").get<std::string>())) {
    case Downstream::LOGISTIC: m.downstream = linear_from(ds.at("probe")); break;
    case Downstream::FOREST: m.downstream = forest_from(ds.at("probe")); break;
    case Downstream::MLP: m.downstream = mlp_from(ds.at("probe")); break;
  }
  return m;
}

Eigen::MatrixXd gather(const MatrixF& panel, std::span<const std::size_t> rows) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), panel.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    X.row(static_cast<Eigen::Index>(i)) = panel.row(static_cast<Eigen::Index>(rows[i])).cast<double>();
  return X;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

const ActivationDump& require_dump(const DetectorInput& input, DetectorKind kind) {
  if (!input.dump)
    throw Error(ErrorCode::MISSING_FEATURES, "detector " + std::string(to_string(kind)) + " needs an activation dump");
  return *input.dump;
}

Eigen::MatrixXd sae_features(const SaeModel& m, const Eigen::MatrixXd& raw) {
  Eigen::MatrixXd X = minmax_apply(m.minmax, raw);
  if (m.mask) X = m.mask->apply(X);
  return X;
}

std::vector<double> predict_downstream(const std::variant<LinearProbe, ForestProbe, MLPProbe>& probe,
                                       const Eigen::MatrixXd& X) {
  return std::visit(
      [&](const auto& p) -> std::vector<double> {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LinearProbe>) return to_std(predict_linear(p, X));
        else if constexpr (std::is_same_v<T, ForestProbe>) return to_std(predict_forest(p, X));
        else return to_std(predict_mlp(p, X));
      },
      probe);
}

}  // namespace

json to_json(const DetectorConfig& c) {
  json j{{"kind", to_string(c.kind)},
         {"layer", c.layer},
         {"hook", to_string(c.hook)},
         {"logistic", to_j(c.logistic)},
         {"forest", to_j(c.forest)},
         {"mlp", to_j(c.mlp)},
         {"sae",
          {{"layer", c.sae.layer},
           {"extraction", to_string(c.sae.extraction)},
           {"representation", to_string(c.sae.representation)},
           {"k", c.sae.k},
           {"downstream", to_string(c.sae.downstream)}}},
         {"include_empty_responses", c.include_empty_responses}};
  json grid = json::array();
  for (const auto& h : c.redeep_grid) grid.push_back(to_j(h));
  j["redeep_grid"] = grid;
  return j;
}

DetectorConfig detector_config_from_json(const json& j) {
  try {
    DetectorConfig c;
    c.kind = parse_detector_kind(j.value("kind", std::string("naive")));
    c.layer = j.value("layer", c.layer);
    c.hook = parse_hook(j.value("hook", std::string("resid_pre")));
    if (j.contains("logistic")) c.logistic = logistic_options_from(j.at("logistic"));
    if (j.contains("forest")) c.forest = forest_options_from(j.at("forest"));
    if (j.contains("mlp")) c.mlp = mlp_options_from(j.at("mlp"));
    if (j.contains("sae")) {
      const auto& s = j.at("sae");
      c.sae.layer = s.value("layer", c.sae.layer);
      c.sae.extraction = parse_sae_view(s.value("extraction", std::string("last_token")));
      c.sae.representation = parse_sae_representation(s.value("representation", std::string("direct")));
      c.sae.k = s.value("k", c.sae.k);
      c.sae.downstream = parse_downstream(s.value("downstream", std::string("logistic")));
    }
    if (j.contains("redeep_grid")) {
      c.redeep_grid.clear();
      for (const auto& h : j.at("redeep_grid")) c.redeep_grid.push_back(redeep_hyper_from(h));
    }
    c.include_empty_responses = j.value("include_empty_responses", c.include_empty_responses);
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::PARSE_ERROR, std::string("detector config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Inputs

std::vector<std::size_t> DetectorInput::rows() const {
  if (!dump) throw Error(ErrorCode::MISSING_FEATURES, "no activation dump attached");
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto row = dump->row_of(sample(i).id);
    if (!row) throw Error(ErrorCode::MISSING_FEATURES, "sample '" + sample(i).id + "' is not in the activation dump");
    out.push_back(*row);
  }
  return out;
}

DetectorInput select_input(const Corpus& corpus, const ActivationDump* dump, bool include_empty) {
  DetectorInput in{&corpus, {}, dump};
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (include_empty || !corpus.samples[i].empty_response()) in.samples.push_back(i);
  return in;
}

// ---------------------------------------------------------------------------
// Fitting and scoring

DetectorModel fit_detector(const DetectorConfig& config, const DetectorInput& train, std::span<const int> labels) {
  if (!train.corpus) throw Error(ErrorCode::INVALID_ARGUMENT, "training input has no corpus");
  if (labels.size() != train.size())
    throw Error(ErrorCode::DIMENSION_MISMATCH, "training labels and samples differ in length");
  if (train.size() == 0) throw Error(ErrorCode::INVALID_ARGUMENT, "no training samples");
  require_both_classes(labels, "training labels");

  DetectorModel m;
  m.config = config;
  m.provenance.training_corpus = train.corpus->name;
  m.provenance.hyperparameters = to_json(config);
  m.provenance.training_info = {{"n_train", train.size()},
                                {"n_positive", static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1))}};

  switch (config.kind) {
    case DetectorKind::NAIVE:
      m.threshold = kNaiveThreshold;
      return m;
    case DetectorKind::LOGISTIC:
    case DetectorKind::FOREST:
    case DetectorKind::MLP: {
      const auto& dump = require_dump(train, config.kind);
      const Eigen::MatrixXd X = gather(dump.residual_panel(config.layer, config.hook), train.rows());
      m.provenance.layer = config.layer;
      m.provenance.hook = std::string(to_string(config.hook));
      if (config.kind == DetectorKind::LOGISTIC) {
        auto probe = fit_logistic(X, labels, config.logistic);
        m.provenance.training_info["iterations"] = probe.report.iterations;
        m.provenance.training_info["converged"] = probe.report.converged;
        m.provenance.training_info["final_loss"] = probe.report.final_loss;
        m.provenance.training_info["dropped_features"] = probe.standardizer.dropped();
        m.model = std::move(probe);
      } else if (config.kind == DetectorKind::FOREST) {
        m.model = fit_forest(X, labels, config.forest);
      } else {
        auto probe = fit_mlp(X, labels, config.mlp);
        m.provenance.training_info["final_loss"] = probe.final_loss;
        m.model = std::move(probe);
      }
      break;
    }
    case DetectorKind::SAE: {
      const auto& dump = require_dump(train, config.kind);
      if (config.sae.k < 1) throw Error(ErrorCode::INVALID_ARGUMENT, "SAE k must be >= 1");
      const Eigen::MatrixXd raw = gather(dump.sae_panel(config.sae.layer, config.sae.extraction), train.rows());
      SaeModel sae;
      sae.minmax = minmax_fit(raw);
      Eigen::MatrixXd X = minmax_apply(sae.minmax, raw);
      if (config.sae.representation == SaeRepresentation::CONTRASTIVE) {
        sae.mask = contrastive_select(X, labels, config.sae.k);
        X = sae.mask->apply(X);
        m.provenance.training_info["selected_features"] = sae.mask->indices.size();
      }
      switch (config.sae.downstream) {
        case Downstream::LOGISTIC: sae.downstream = fit_logistic(X, labels, config.logistic); break;
        case Downstream::FOREST: sae.downstream = fit_forest(X, labels, config.forest); break;
        case Downstream::MLP: sae.downstream = fit_mlp(X, labels, config.mlp); break;
      }
      m.provenance.layer = config.sae.layer;
      m.provenance.hook = std::string(to_string(config.sae.extraction));
      m.model = std::move(sae);
      break;
    }
    case DetectorKind::REDEEP: {
      const auto& dump = require_dump(train, config.kind);
      const auto features = redeep_features(dump, train.rows());
      auto tuning = tune_redeep(features, labels, config.redeep_grid);
      m.provenance.training_info["tuning_corpus"] = train.corpus->name;
      m.provenance.training_info["best_dev_auc"] =
          std::max_element(tuning.grid.begin(), tuning.grid.end(),
                           [](const GridPoint& a, const GridPoint& b) { return a.dev_auc < b.dev_auc; })
              ->dev_auc;
      m.provenance.training_info["skipped_chunk_points"] = tuning.skipped_chunk_points;
      m.provenance.training_info["reconstruction"] = "mean pks over top layers - lambda * mean ecs over top heads";
      m.threshold = tuning.best.threshold;
      m.model = RedeepModel{tuning.best, std::move(tuning.head_rank), std::move(tuning.layer_rank), std::move(tuning.grid)};
      return m;
    }
  }

  const auto scores = score_detector(m, train);
  m.threshold = select_threshold({scores, std::vector<int>(labels.begin(), labels.end())}, ThresholdObjective::f1());
  return m;
}

std::vector<double> score_detector(const DetectorModel& m, const DetectorInput& input) {
  if (!input.corpus) throw Error(ErrorCode::INVALID_ARGUMENT, "scoring input has no corpus");
  const auto& c = m.config;
  switch (c.kind) {
    case DetectorKind::NAIVE: {
      std::vector<double> out(input.size());
      for (std::size_t i = 0; i < input.size(); ++i) out[i] = naive_predict(input.sample(i));
      return out;
    }
    case DetectorKind::LOGISTIC:
    case DetectorKind::FOREST:
    case DetectorKind::MLP: {
      const auto& dump = require_dump(input, c.kind);
      const Eigen::MatrixXd X = gather(dump.residual_panel(c.layer, c.hook), input.rows());
      if (const auto* p = std::get_if<LinearProbe>(&m.model)) return to_std(predict_linear(*p, X));
      if (const auto* p = std::get_if<ForestProbe>(&m.model)) return to_std(predict_forest(*p, X));
      if (const auto* p = std::get_if<MLPProbe>(&m.model)) return to_std(predict_mlp(*p, X));
      break;
    }
    case DetectorKind::SAE: {
      const auto& dump = require_dump(input, c.kind);
      const auto* sae = std::get_if<SaeModel>(&m.model);
      if (!sae) break;
      const Eigen::MatrixXd raw = gather(dump.sae_panel(c.sae.layer, c.sae.extraction), input.rows());
      return predict_downstream(sae->downstream, sae_features(*sae, raw));
    }
    case DetectorKind::REDEEP: {
      const auto& dump = require_dump(input, c.kind);
      const auto* r = std::get_if<RedeepModel>(&m.model);
      if (!r) break;
      return redeep_score(redeep_features(dump, input.rows()), r->hyper, r->head_rank, r->layer_rank);
    }
  }
  throw Error(ErrorCode::INVALID_ARGUMENT, "detector model payload does not match its kind");
}

DetectorModel build_sae_probe(const SaeProbeConfig& config, const ActivationDump& dump, const Corpus& corpus_train,
                              std::uint64_t seed) {
  DetectorConfig dc;
  dc.kind = DetectorKind::SAE;
  dc.sae = config;
  dc.set_seed(seed);
  const DetectorInput in = select_input(corpus_train, &dump, false);
  std::vector<int> labels;
  for (std::size_t i = 0; i < in.size(); ++i) labels.push_back(in.sample(i).label);
  return fit_detector(dc, in, labels);
}

MetricBlock audit_task_probe(const ActivationDump& dump, const Corpus& corpus, int layer, Hook hook, std::uint64_t seed,
                             Averaging averaging) {
  if (corpus.tasks_present().size() < 2)
    throw Error(ErrorCode::DEGENERATE_LABELS, "task audit needs at least two task types in corpus '" + corpus.name + "'");
  std::vector<int> all_targets;
  for (const auto& s : corpus.samples) all_targets.push_back(s.task == TaskType::D2T ? 1 : 0);
  require_both_classes(all_targets, "task-type target (D2T vs other)");

  const auto [train, test] = split(corpus, 0.7, Stratify::TASK, seed);
  const MatrixF& panel = dump.residual_panel(layer, hook);
  auto features = [&](const Corpus& part, std::vector<int>& target) {
    const DetectorInput in = select_input(part, &dump, false);
    target.clear();
    for (std::size_t i = 0; i < in.size(); ++i) target.push_back(in.sample(i).task == TaskType::D2T ? 1 : 0);
    return gather(panel, in.rows());
  };
  std::vector<int> y_train, y_test;
  const Eigen::MatrixXd X_train = features(train, y_train);
  const Eigen::MatrixXd X_test = features(test, y_test);
  LogisticOptions options;
  options.seed = seed;
  const auto probe = fit_logistic(X_train, y_train, options);
  const auto train_scores = to_std(predict_linear(probe, X_train));
  const double threshold = select_threshold({train_scores, y_train}, ThresholdObjective::f1());
  return metric_block({to_std(predict_linear(probe, X_test)), y_test}, threshold, averaging);
}

// ---------------------------------------------------------------------------
// Serialization

json to_json(const MetricBlock& b) {
  return {{"auc", b.auc ? json(*b.auc) : json(nullptr)},
          {"pcc", b.pcc ? json(*b.pcc) : json(nullptr)},
          {"precision", b.precision},
          {"recall", b.recall},
          {"f1", b.f1},
          {"threshold", b.threshold},
          {"averaging", to_string(b.averaging)},
          {"n", b.n},
          {"n_positive", b.n_positive},
          {"warnings", b.warnings}};
}

MetricBlock metric_block_from_json(const json& j) {
  MetricBlock b;
  if (!j.at("auc").is_null()) b.auc = j.at("auc").get<double>();
  if (!j.at("pcc").is_null()) b.pcc = j.at("pcc").get<double>();
  b.precision = j.at("precision").get<double>();
  b.recall = j.at("recall").get<double>();
  b.f1 = j.at("f1").get<double>();
  b.threshold = j.at("threshold").get<double>();
  b.averaging = j.at("averaging").get<std::string>() == "macro" ? Averaging::MACRO : Averaging::POSITIVE_CLASS;
  b.n = j.at("n").get<std::size_t>();
  b.n_positive = j.at("n_positive").get<std::size_t>();
  b.warnings = j.at("warnings").get<std::vector<std::string>>();
  return b;
}

json to_json(const DetectorModel& m) {
  json prov{{"training_corpus", m.provenance.training_corpus},
            {"split_seed", m.provenance.split_seed ? json(*m.provenance.split_seed) : json(nullptr)},
            {"layer", m.provenance.layer ? json(*m.provenance.layer) : json(nullptr)},
            {"hook", m.provenance.hook ? json(*m.provenance.hook) : json(nullptr)},
            {"hyperparameters", m.provenance.hyperparameters},
            {"training_info", m.provenance.training_info},
            {"version", m.provenance.version}};
  json payload = std::visit(
      [](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::monostate>) return nullptr;
        else if constexpr (std::is_same_v<T, RedeepModel>) {
          json grid = json::array();
          for (const auto& g : p.grid) grid.push_back({{"hyper", to_j(g.hyper)}, {"dev_auc", g.dev_auc}});
          return {{"hyper", to_j(p.hyper)}, {"head_rank", p.head_rank}, {"layer_rank", p.layer_rank}, {"grid", grid}};
        } else return to_j(p);
      },
      m.model);
  return {{"format", "halprobe-detector"},
          {"format_version", 1},
          {"kind", to_string(m.config.kind)},
          {"config", to_json(m.config)},
          {"provenance", prov},
          {"threshold", m.threshold},
          {"model", payload}};
}

DetectorModel detector_model_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "halprobe-detector")
      throw Error(ErrorCode::PARSE_ERROR, "not a serialized detector");
    DetectorModel m;
    m.config = detector_config_from_json(j.at("config"));
    m.threshold = j.at("threshold").get<double>();
    const auto& p = j.at("provenance");
    m.provenance.training_corpus = p.at("training_corpus").get<std::string>();
    if (!p.at("split_seed").is_null()) m.provenance.split_seed = p.at("split_seed").get<std::uint64_t>();
    if (!p.at("layer").is_null()) m.provenance.layer = p.at("layer").get<int>();
    if (!p.at("hook").is_null()) m.provenance.hook = p.at("hook").get<std::string>();
    m.provenance.hyperparameters = p.at("hyperparameters");
    m.provenance.training_info = p.at("training_info");
    m.provenance.version = p.at("version").get<std::string>();
    const auto& payload = j.at("model");
    switch (m.config.kind) {
      case DetectorKind::NAIVE: break;
      case DetectorKind::LOGISTIC: m.model = linear_from(payload); break;
      case DetectorKind::FOREST: m.model = forest_from(payload); break;
      case DetectorKind::MLP: m.model = mlp_from(payload); break;
      case DetectorKind::SAE: m.model = sae_from(payload); break;
      case DetectorKind::REDEEP: {
        RedeepModel r;
        r.hyper = redeep_hyper_from(payload.at("hyper"));
        r.head_rank = payload.at("head_rank").get<std::vector<int>>();
        r.layer_rank = payload.at("layer_rank").get<std::vector<int>>();
        for (const auto& g : payload.at("grid")) r.grid.push_back({redeep_hyper_from(g.at("hyper")), g.at("dev_auc").get<double>()});
        m.model = std::move(r);
        break;
      }
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::PARSE_ERROR, std::string("detector model: ") + e.what());
  }
}

void save_detector(const DetectorModel& model, const std::filesystem::path& path) {
  detail::atomic_write(path, to_json(model).dump(1) + "\n");
}

DetectorModel load_detector(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::PARSE_ERROR, path.string() + ": " + e.what());
  }
  return detector_model_from_json(j);
}

}  // namespace halprobe
