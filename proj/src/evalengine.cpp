#include "halprobe/evalengine.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "halprobe/error.hpp"
#include "halprobe/parallel.hpp"
#include "io_util.hpp"

namespace halprobe {

using nlohmann::json;

std::string_view to_string(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::IN_DIST: return "indist";
    case ProtocolKind::CROSS_TASK: return "cross-task";
    case ProtocolKind::CROSS_DATASET: return "cross-dataset";
    case ProtocolKind::HYPER_TRANSFER: return "hyper-transfer";
    case ProtocolKind::AUDIT: return "audit";
  }
  return "?";
}

ProtocolKind parse_protocol_kind(std::string_view text) {
  for (auto k : {ProtocolKind::IN_DIST, ProtocolKind::CROSS_TASK, ProtocolKind::CROSS_DATASET, ProtocolKind::HYPER_TRANSFER,
                 ProtocolKind::AUDIT})
    if (text == to_string(k)) return k;
  throw Error(ErrorCode::INVALID_ARGUMENT, "unknown protocol '" + std::string(text) +
                                               "'; accepted: indist, cross-task, cross-dataset, hyper-transfer, audit");
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::TRAIN: return "train";
    case Phase::TUNE: return "tune";
    case Phase::SCORE: return "score";
  }
  return "?";
}

namespace {

std::set<TaskType> as_set(const std::vector<TaskType>& tasks) { return {tasks.begin(), tasks.end()}; }

json tasks_json(const std::optional<std::vector<TaskType>>& tasks) {
  if (!tasks) return nullptr;
  json out = json::array();
  for (auto t : *tasks) out.push_back(to_string(t));
  return out;
}

std::optional<std::vector<TaskType>> tasks_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  std::vector<TaskType> out;
  for (const auto& t : j) out.push_back(parse_task(t.get<std::string>()));
  return out;
}

}  // namespace

void ProtocolSpec::check() const {
  if (train_corpus.empty() || eval_corpus.empty()) throw Error(ErrorCode::INVALID_ARGUMENT, "protocol needs train and eval corpora");
  if (seeds.empty()) throw Error(ErrorCode::INVALID_ARGUMENT, "protocol needs at least one seed");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw Error(ErrorCode::INVALID_ARGUMENT, "split_fraction must lie in (0, 1)");
  if (kind == ProtocolKind::CROSS_DATASET && train_corpus == eval_corpus)
    throw Error(ErrorCode::INVALID_ARGUMENT, "cross-dataset protocol needs distinct train and eval corpora");
  if (kind == ProtocolKind::HYPER_TRANSFER && detector.kind != DetectorKind::REDEEP)
    throw Error(ErrorCode::INVALID_ARGUMENT, "hyper-transfer protocol applies to the redeep detector");
  if (kind == ProtocolKind::CROSS_TASK) {
    if (!train_task_filter || !eval_task_filter)
      throw Error(ErrorCode::INVALID_ARGUMENT, "cross-task protocol needs train and eval task filters");
    const auto a = as_set(*train_task_filter), b = as_set(*eval_task_filter);
    if (a != b) {
      for (auto t : a)
        if (b.count(t))
          throw Error(ErrorCode::INVALID_ARGUMENT, "cross-task filters must be disjoint or identical; both contain " +
                                                       std::string(to_string(t)));
    }
  }
  for (const auto* f : {&train_task_filter, &eval_task_filter})
    if (*f && (*f)->empty()) throw Error(ErrorCode::INVALID_ARGUMENT, "task filter must not be empty");
}

json to_json(const ProtocolSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"train_corpus", s.train_corpus},
          {"eval_corpus", s.eval_corpus},
          {"train_task_filter", tasks_json(s.train_task_filter)},
          {"eval_task_filter", tasks_json(s.eval_task_filter)},
          {"detector", to_json(s.detector)},
          {"seeds", s.seeds},
          {"split_fraction", s.split_fraction},
          {"stratify", to_string(s.stratify)}};
}

ProtocolSpec protocol_spec_from_json(const json& j) {
  try {
    ProtocolSpec s;
    s.kind = parse_protocol_kind(j.value("kind", std::string("indist")));
    s.train_corpus = j.at("train_corpus").get<std::string>();
    s.eval_corpus = j.value("eval_corpus", s.train_corpus);
    if (j.contains("train_task_filter")) s.train_task_filter = tasks_from(j.at("train_task_filter"));
    if (j.contains("eval_task_filter")) s.eval_task_filter = tasks_from(j.at("eval_task_filter"));
    if (j.contains("detector")) s.detector = detector_config_from_json(j.at("detector"));
    if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    s.split_fraction = j.value("split_fraction", s.split_fraction);
    if (j.contains("stratify")) s.stratify = parse_stratify(j.at("stratify").get<std::string>());
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::PARSE_ERROR, std::string("protocol spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// GuardedCorpus

GuardedCorpus::GuardedCorpus(Corpus corpus) : masked_(std::move(corpus)) {
  labels_.reserve(masked_.size());
  for (auto& s : masked_.samples) {
    labels_.push_back(s.label);
    s.label = -1;
  }
}

std::vector<int> GuardedCorpus::read(std::span<const std::size_t> indices, Phase phase) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= labels_.size()) throw Error(ErrorCode::INVALID_ARGUMENT, "label index out of range");
    out.push_back(labels_[i]);
  }
  reads_[phase] += indices.size();
  return out;
}

std::size_t GuardedCorpus::reads(Phase phase) const {
  const auto it = reads_.find(phase);
  return it == reads_.end() ? 0 : it->second;
}

void GuardedCorpus::require_score_only(std::string_view side) const {
  const std::size_t early = reads(Phase::TRAIN) + reads(Phase::TUNE);
  if (early > 0)
    throw Error(ErrorCode::LEAKAGE, std::string(side) + " labels of '" + masked_.name + "' were read " + std::to_string(early) +
                                        " times before scoring");
}

std::size_t LabelAudit::eval_reads_before_scoring() const {
  std::size_t n = 0;
  for (auto p : {Phase::TRAIN, Phase::TUNE})
    if (auto it = eval_reads.find(p); it != eval_reads.end()) n += it->second;
  return n;
}

// ---------------------------------------------------------------------------
// Protocol execution

namespace {

Corpus filter_tasks(const Corpus& corpus, const std::optional<std::vector<TaskType>>& tasks) {
  if (!tasks) return corpus;
  const auto keep = as_set(*tasks);
  Corpus out;
  out.name = corpus.name;
  out.split_tag = corpus.split_tag;
  for (const auto& s : corpus.samples)
    if (keep.count(s.task)) out.samples.push_back(s);
  return out;
}

void require_tasks(const Corpus& corpus, const std::optional<std::vector<TaskType>>& tasks, std::string_view side) {
  if (!tasks) return;
  const auto counts = corpus.task_counts();
  for (auto t : *tasks)
    if (!counts.count(t) || counts.at(t) == 0)
      throw Error(ErrorCode::MISSING_TASK, std::string(side) + " corpus '" + corpus.name + "' has no " +
                                               std::string(to_string(t)) + " samples");
}

const Dataset& lookup(const DatasetRegistry& datasets, const std::string& name) {
  const auto it = datasets.find(name);
  if (it == datasets.end()) throw Error(ErrorCode::INVALID_ARGUMENT, "unknown corpus '" + name + "'");
  return it->second;
}

Cell make_cell(const ScoredLabels& data, double threshold) {
  return {metric_block(data, threshold, Averaging::POSITIVE_CLASS), metric_block(data, threshold, Averaging::MACRO)};
}

void fill_cells(const std::vector<double>& scores, const std::vector<int>& labels, const DetectorInput& input,
                double threshold, Cell& overall, std::map<TaskType, Cell>& per_task) {
  overall = make_cell({scores, labels}, threshold);
  std::map<TaskType, ScoredLabels> by_task;
  for (std::size_t i = 0; i < input.size(); ++i) {
    auto& cell = by_task[input.sample(i).task];
    cell.scores.push_back(scores[i]);
    cell.labels.push_back(labels[i]);
  }
  for (const auto& [task, data] : by_task) per_task[task] = make_cell(data, threshold);
}

Stat stat_of(const std::vector<double>& values) {
  Stat s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

CellStats summarize(const std::vector<const Cell*>& cells) {
  std::vector<double> auc, pcc, p, r, f, mp, mr, mf;
  for (const auto* c : cells) {
    if (c->positive_class.auc) auc.push_back(*c->positive_class.auc);
    if (c->positive_class.pcc) pcc.push_back(*c->positive_class.pcc);
    p.push_back(c->positive_class.precision);
    r.push_back(c->positive_class.recall);
    f.push_back(c->positive_class.f1);
    mp.push_back(c->macro.precision);
    mr.push_back(c->macro.recall);
    mf.push_back(c->macro.f1);
  }
  CellStats s;
  if (!auc.empty()) s.auc = stat_of(auc);
  if (!pcc.empty()) s.pcc = stat_of(pcc);
  s.precision = stat_of(p);
  s.recall = stat_of(r);
  s.f1 = stat_of(f);
  s.macro_precision = stat_of(mp);
  s.macro_recall = stat_of(mr);
  s.macro_f1 = stat_of(mf);
  return s;
}

std::vector<double> naive_scores(const DetectorInput& input) {
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = naive_predict(input.sample(i));
  return out;
}

SeedRun run_audit_seed(const ProtocolSpec& spec, const Dataset& data, std::uint64_t seed) {
  if (!data.dump) throw Error(ErrorCode::MISSING_FEATURES, "task audit needs an activation dump");
  const Corpus corpus = filter_tasks(data.corpus, spec.train_task_filter);
  const int layer = spec.detector.kind == DetectorKind::SAE ? spec.detector.sae.layer : spec.detector.layer;
  const Hook hook = spec.detector.hook;
  SeedRun run;
  run.seed = seed;
  run.overall = {audit_task_probe(*data.dump, corpus, layer, hook, seed, Averaging::POSITIVE_CLASS),
                 audit_task_probe(*data.dump, corpus, layer, hook, seed, Averaging::MACRO)};
  run.threshold = run.overall.positive_class.threshold;

  // Same split as the probe; the naive scorer predicts D2T perfectly by construction.
  const auto [train, test] = split(corpus, 0.7, Stratify::TASK, seed);
  auto targets = [](const DetectorInput& in) {
    std::vector<int> y;
    for (std::size_t i = 0; i < in.size(); ++i) y.push_back(in.sample(i).task == TaskType::D2T ? 1 : 0);
    return y;
  };
  const DetectorInput test_in = select_input(test, data.dump.get(), false);
  run.naive_threshold = kNaiveThreshold;
  fill_cells(naive_scores(test_in), targets(test_in), test_in, run.naive_threshold, run.naive_overall, run.naive_per_task);
  run.provenance = {{"training_corpus", corpus.name},
                    {"split_seed", seed},
                    {"layer", layer},
                    {"hook", to_string(hook)},
                    {"target", "task == D2T"}};
  return run;
}

SeedRun run_seed(const ProtocolSpec& spec, const Dataset& train_ds, const Dataset& eval_ds, std::uint64_t seed) {
  // Train side is always the train split of the train corpus and the eval side
  // the test split of the eval corpus, so every protocol scores the same rows
  // of a given eval corpus under a given seed.
  Corpus train_part = split(train_ds.corpus, spec.split_fraction, spec.stratify, seed).first;
  Corpus eval_part = split(eval_ds.corpus, spec.split_fraction, spec.stratify, seed).second;
  GuardedCorpus train_guard(filter_tasks(train_part, spec.train_task_filter));
  GuardedCorpus eval_guard(filter_tasks(eval_part, spec.eval_task_filter));

  DetectorConfig config = spec.detector;
  config.set_seed(seed);
  const bool include_empty = config.include_empty_responses || !config.needs_dump();
  const DetectorInput train_in = select_input(train_guard.masked(), train_ds.dump.get(), include_empty);
  const DetectorInput eval_in = select_input(eval_guard.masked(), eval_ds.dump.get(), include_empty);
  if (train_in.size() == 0 || eval_in.size() == 0)
    throw Error(ErrorCode::INVALID_ARGUMENT, "protocol has an empty train or eval side after filtering");

  SeedRun run;
  run.seed = seed;

  const std::vector<int> train_labels = train_guard.read(train_in.samples, Phase::TRAIN);
  DetectorModel model = fit_detector(config, train_in, train_labels);
  model.provenance.split_seed = seed;
  run.threshold = model.threshold;
  run.naive_threshold = kNaiveThreshold;

  const auto scores = score_detector(model, eval_in);
  const auto baseline = naive_scores(eval_in);
  eval_guard.require_score_only("eval");
  const std::vector<int> eval_labels = eval_guard.read(eval_in.samples, Phase::SCORE);

  fill_cells(scores, eval_labels, eval_in, run.threshold, run.overall, run.per_task);
  fill_cells(baseline, eval_labels, eval_in, run.naive_threshold, run.naive_overall, run.naive_per_task);

  json prov = to_json(model)["provenance"];
  if (const auto* r = std::get_if<RedeepModel>(&model.model)) {
    prov["tuned_hyperparameters"] = to_json(model)["model"]["hyper"];
    prov["head_rank"] = r->head_rank;
    prov["layer_rank"] = r->layer_rank;
  }
  run.provenance = prov;
  for (auto p : {Phase::TRAIN, Phase::TUNE, Phase::SCORE}) {
    run.label_audit.train_reads[p] = train_guard.reads(p);
    run.label_audit.eval_reads[p] = eval_guard.reads(p);
  }
  return run;
}

void collect_warnings(EvalReport& report) {
  std::set<std::string> seen;
  auto add = [&](const std::string& where, const MetricBlock& b) {
    for (const auto& w : b.warnings) {
      std::string msg = where + ": " + w;
      if (seen.insert(msg).second) report.warnings.push_back(std::move(msg));
    }
  };
  for (const auto& run : report.runs) {
    const std::string s = "seed " + std::to_string(run.seed);
    add(s + " overall", run.overall.positive_class);
    for (const auto& [t, c] : run.per_task) add(s + " " + std::string(to_string(t)), c.positive_class);
    add(s + " naive overall", run.naive_overall.positive_class);
  }
}

}  // namespace

EvalReport run_protocol(const ProtocolSpec& spec, const DatasetRegistry& datasets) {
  spec.check();
  const Dataset& train_ds = lookup(datasets, spec.train_corpus);
  const Dataset& eval_ds = lookup(datasets, spec.eval_corpus);
  require_tasks(train_ds.corpus, spec.train_task_filter, "train");
  if (spec.kind != ProtocolKind::AUDIT) require_tasks(eval_ds.corpus, spec.eval_task_filter, "eval");

  EvalReport report;
  report.kind = spec.kind;
  report.train_corpus = spec.train_corpus;
  report.eval_corpus = spec.kind == ProtocolKind::AUDIT ? spec.train_corpus : spec.eval_corpus;
  report.train_task_filter = spec.train_task_filter;
  report.eval_task_filter = spec.kind == ProtocolKind::AUDIT ? spec.train_task_filter : spec.eval_task_filter;
  report.detector = spec.kind == ProtocolKind::AUDIT ? DetectorKind::LOGISTIC : spec.detector.kind;
  report.detector_label = spec.kind == ProtocolKind::AUDIT
                              ? "task-probe@L" + std::to_string(spec.detector.layer) + "/" + std::string(to_string(spec.detector.hook))
                              : spec.detector.label();
  report.threshold_policy = spec.kind == ProtocolKind::AUDIT
                                ? "train-split F1 on the D2T target, shared across tasks"
                                : "train-side F1, frozen before scoring, shared across tasks";
  report.split_fraction = spec.split_fraction;
  report.stratify = spec.stratify;

  for (auto seed : spec.seeds)
    report.runs.push_back(spec.kind == ProtocolKind::AUDIT ? run_audit_seed(spec, train_ds, seed)
                                                           : run_seed(spec, train_ds, eval_ds, seed));

  std::vector<const Cell*> overall, naive;
  std::map<TaskType, std::vector<const Cell*>> per_task, naive_per_task;
  for (const auto& run : report.runs) {
    overall.push_back(&run.overall);
    naive.push_back(&run.naive_overall);
    for (const auto& [t, c] : run.per_task) per_task[t].push_back(&c);
    for (const auto& [t, c] : run.naive_per_task) naive_per_task[t].push_back(&c);
    for (const auto& [p, n] : run.label_audit.train_reads) report.label_audit.train_reads[p] += n;
    for (const auto& [p, n] : run.label_audit.eval_reads) report.label_audit.eval_reads[p] += n;
  }
  report.overall = summarize(overall);
  report.naive_baseline = summarize(naive);
  for (const auto& [t, cells] : per_task) report.per_task[t] = summarize(cells);
  for (const auto& [t, cells] : naive_per_task) report.naive_per_task[t] = summarize(cells);
  collect_warnings(report);
  if (report.detector == DetectorKind::REDEEP)
    report.warnings.insert(report.warnings.begin(),
                           "redeep: reconstructed scorer (mean pks over top layers - lambda * mean ecs over top heads), "
                           "not the original regression");
  if (report.label_audit.eval_reads_before_scoring() > 0)
    throw Error(ErrorCode::LEAKAGE, "eval labels were read before scoring");
  return report;
}

std::vector<EvalReport> run_protocols(const std::vector<ProtocolSpec>& specs, const DatasetRegistry& datasets,
                                      std::size_t jobs) {
  std::vector<EvalReport> out(specs.size());
  parallel_for(specs.size(), jobs, [&](std::size_t i) { out[i] = run_protocol(specs[i], datasets); });
  return out;
}

// ---------------------------------------------------------------------------
// Report serialization

namespace {

json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}}; }

Stat stat_from(const json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("count").get<std::size_t>()}; }

json cell_stats_json(const CellStats& c) {
  return {{"auc", c.auc ? stat_json(*c.auc) : json(nullptr)},
          {"pcc", c.pcc ? stat_json(*c.pcc) : json(nullptr)},
          {"precision", stat_json(c.precision)},
          {"recall", stat_json(c.recall)},
          {"f1", stat_json(c.f1)},
          {"macro_precision", stat_json(c.macro_precision)},
          {"macro_recall", stat_json(c.macro_recall)},
          {"macro_f1", stat_json(c.macro_f1)}};
}

CellStats cell_stats_from(const json& j) {
  CellStats c;
  if (!j.at("auc").is_null()) c.auc = stat_from(j.at("auc"));
  if (!j.at("pcc").is_null()) c.pcc = stat_from(j.at("pcc"));
  c.precision = stat_from(j.at("precision"));
  c.recall = stat_from(j.at("recall"));
  c.f1 = stat_from(j.at("f1"));
  c.macro_precision = stat_from(j.at("macro_precision"));
  c.macro_recall = stat_from(j.at("macro_recall"));
  c.macro_f1 = stat_from(j.at("macro_f1"));
  return c;
}

json cell_json(const Cell& c) { return {{"positive_class", to_json(c.positive_class)}, {"macro", to_json(c.macro)}}; }

Cell cell_from(const json& j) { return {metric_block_from_json(j.at("positive_class")), metric_block_from_json(j.at("macro"))}; }

template <typename T, typename F>
json task_map_json(const std::map<TaskType, T>& m, F&& f) {
  json out = json::object();
  for (const auto& [t, v] : m) out[std::string(to_string(t))] = f(v);
  return out;
}

template <typename T, typename F>
std::map<TaskType, T> task_map_from(const json& j, F&& f) {
  std::map<TaskType, T> out;
  for (auto it = j.begin(); it != j.end(); ++it) out[parse_task(it.key())] = f(it.value());
  return out;
}

json phase_json(const std::map<Phase, std::size_t>& m) {
  json out = json::object();
  for (auto p : {Phase::TRAIN, Phase::TUNE, Phase::SCORE}) {
    const auto it = m.find(p);
    out[std::string(to_string(p))] = it == m.end() ? 0 : it->second;
  }
  return out;
}

std::map<Phase, std::size_t> phase_from(const json& j) {
  std::map<Phase, std::size_t> out;
  for (auto p : {Phase::TRAIN, Phase::TUNE, Phase::SCORE}) out[p] = j.value(std::string(to_string(p)), std::size_t{0});
  return out;
}

json audit_json(const LabelAudit& a) { return {{"train", phase_json(a.train_reads)}, {"eval", phase_json(a.eval_reads)}}; }

LabelAudit audit_from(const json& j) { return {phase_from(j.at("train")), phase_from(j.at("eval"))}; }

}  // namespace

json to_json(const EvalReport& r) {
  json runs = json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"seed", run.seed},
                    {"threshold", run.threshold},
                    {"naive_threshold", run.naive_threshold},
                    {"overall", cell_json(run.overall)},
                    {"per_task", task_map_json(run.per_task, cell_json)},
                    {"naive_overall", cell_json(run.naive_overall)},
                    {"naive_per_task", task_map_json(run.naive_per_task, cell_json)},
                    {"provenance", run.provenance},
                    {"label_access", audit_json(run.label_audit)}});
  }
  return {{"format", "halprobe-report"},
          {"format_version", 1},
          {"protocol", to_string(r.kind)},
          {"train_corpus", r.train_corpus},
          {"eval_corpus", r.eval_corpus},
          {"train_task_filter", tasks_json(r.train_task_filter)},
          {"eval_task_filter", tasks_json(r.eval_task_filter)},
          {"detector", to_string(r.detector)},
          {"detector_label", r.detector_label},
          {"threshold_policy", r.threshold_policy},
          {"split", {{"fraction", r.split_fraction}, {"stratify", to_string(r.stratify)}}},
          {"overall", cell_stats_json(r.overall)},
          {"per_task", task_map_json(r.per_task, cell_stats_json)},
          {"naive_baseline", cell_stats_json(r.naive_baseline)},
          {"naive_per_task", task_map_json(r.naive_per_task, cell_stats_json)},
          {"warnings", r.warnings},
          {"label_access", audit_json(r.label_audit)},
          {"runs", runs}};
}

EvalReport eval_report_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "halprobe-report") throw Error(ErrorCode::PARSE_ERROR, "not an evaluation report");
    EvalReport r;
    r.kind = parse_protocol_kind(j.at("protocol").get<std::string>());
    r.train_corpus = j.at("train_corpus").get<std::string>();
    r.eval_corpus = j.at("eval_corpus").get<std::string>();
    r.train_task_filter = tasks_from(j.at("train_task_filter"));
    r.eval_task_filter = tasks_from(j.at("eval_task_filter"));
    r.detector = parse_detector_kind(j.at("detector").get<std::string>());
    r.detector_label = j.at("detector_label").get<std::string>();
    r.threshold_policy = j.at("threshold_policy").get<std::string>();
    if (const auto it = j.find("split"); it != j.end()) {
      r.split_fraction = it->at("fraction").get<double>();
      r.stratify = parse_stratify(it->at("stratify").get<std::string>());
    }
    r.overall = cell_stats_from(j.at("overall"));
    r.per_task = task_map_from<CellStats>(j.at("per_task"), cell_stats_from);
    r.naive_baseline = cell_stats_from(j.at("naive_baseline"));
    r.naive_per_task = task_map_from<CellStats>(j.at("naive_per_task"), cell_stats_from);
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    r.label_audit = audit_from(j.at("label_access"));
    for (const auto& run : j.at("runs")) {
      SeedRun s;
      s.seed = run.at("seed").get<std::uint64_t>();
      s.threshold = run.at("threshold").get<double>();
      s.naive_threshold = run.at("naive_threshold").get<double>();
      s.overall = cell_from(run.at("overall"));
      s.per_task = task_map_from<Cell>(run.at("per_task"), cell_from);
      s.naive_overall = cell_from(run.at("naive_overall"));
      s.naive_per_task = task_map_from<Cell>(run.at("naive_per_task"), cell_from);
      s.provenance = run.at("provenance");
      s.label_audit = audit_from(run.at("label_access"));
      r.runs.push_back(std::move(s));
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::PARSE_ERROR, std::string("evaluation report: ") + e.what());
  }
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  detail::atomic_write(path, to_json(report).dump(1) + "\n");
}

EvalReport read_report(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::PARSE_ERROR, path.string() + ": " + e.what());
  }
  return eval_report_from_json(j);
}

std::vector<EvalReport> read_reports(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error(ErrorCode::IO_ERROR, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    const auto name = entry.path().filename().string();
    if (name == "provenance.json" || name.ends_with(".audit.json")) continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EvalReport> out;
  for (const auto& f : files) out.push_back(read_report(f));
  return out;
}

// ---------------------------------------------------------------------------
// Verdicts

std::string_view to_string(NaiveVerdict verdict) {
  switch (verdict) {
    case NaiveVerdict::BEATS_NAIVE: return "BEATS_NAIVE";
    case NaiveVerdict::WITHIN_NOISE: return "WITHIN_NOISE";
    case NaiveVerdict::BELOW_NAIVE: return "BELOW_NAIVE";
  }
  return "?";
}

NaiveVerdict compare_auc(double detector_auc, double naive_auc, double margin) {
  const double diff = detector_auc - naive_auc;
  if (diff > margin) return NaiveVerdict::BEATS_NAIVE;
  if (diff < -margin) return NaiveVerdict::BELOW_NAIVE;
  return NaiveVerdict::WITHIN_NOISE;
}

NaiveVerdict compare_with_naive(const EvalReport& report, double margin) {
  const double d = report.overall.auc ? report.overall.auc->mean : 0.5;
  const double n = report.naive_baseline.auc ? report.naive_baseline.auc->mean : 0.5;
  return compare_auc(d, n, margin);
}

std::string_view to_string(AuditFlag flag) {
  switch (flag) {
    case AuditFlag::PASS: return "PASS";
    case AuditFlag::BEATS_NAIVE: return "BEATS_NAIVE";
    case AuditFlag::WITHIN_NOISE: return "WITHIN_NOISE";
    case AuditFlag::BELOW_NAIVE: return "BELOW_NAIVE";
    case AuditFlag::BEATS_LINEAR: return "BEATS_LINEAR";
    case AuditFlag::MATCHES_LINEAR: return "MATCHES_LINEAR";
    case AuditFlag::BELOW_LINEAR: return "BELOW_LINEAR";
    case AuditFlag::REFERENCE: return "REFERENCE";
    case AuditFlag::FAILS_OOD: return "FAILS_OOD";
    case AuditFlag::SPURIOUS_RISK_HIGH: return "SPURIOUS_RISK_HIGH";
    case AuditFlag::SPURIOUS_RISK_LOW: return "SPURIOUS_RISK_LOW";
    case AuditFlag::INCOMPLETE: return "INCOMPLETE";
    case AuditFlag::NOT_EVALUATED: return "NOT_EVALUATED";
  }
  return "?";
}

bool DetectorAudit::complete() const {
  return guideline_i != AuditFlag::INCOMPLETE && guideline_ii != AuditFlag::INCOMPLETE &&
         guideline_iii != AuditFlag::INCOMPLETE;
}

namespace {

bool is_cross(const EvalReport& r) {
  switch (r.kind) {
    case ProtocolKind::CROSS_DATASET:
    case ProtocolKind::HYPER_TRANSFER:
      return true;
    case ProtocolKind::CROSS_TASK:
      return !(r.train_task_filter && r.eval_task_filter && as_set(*r.train_task_filter) == as_set(*r.eval_task_filter));
    default:
      return false;
  }
}

std::optional<double> mean_auc(const CellStats& c) {
  if (!c.auc) return std::nullopt;
  return c.auc->mean;
}

}  // namespace

AuditSummary guideline_audit(const std::vector<EvalReport>& reports, std::optional<double> task_probe_auc,
                             const AuditThresholds& th) {
  AuditSummary summary;
  if (!task_probe_auc) {
    for (const auto& r : reports)
      if (r.kind == ProtocolKind::AUDIT && r.overall.auc)
        task_probe_auc = std::max(task_probe_auc.value_or(0.0), r.overall.auc->mean);
  }
  summary.task_probe_auc = task_probe_auc;
  if (task_probe_auc)
    summary.task_probe = *task_probe_auc >= th.spurious_auc ? AuditFlag::SPURIOUS_RISK_HIGH : AuditFlag::SPURIOUS_RISK_LOW;

  // Linear reference: the best in-distribution logistic AUC per eval corpus.
  std::map<std::string, double> linear_ref;
  for (const auto& r : reports)
    if (r.kind == ProtocolKind::IN_DIST && r.detector == DetectorKind::LOGISTIC)
      if (auto a = mean_auc(r.overall)) {
        double& best = linear_ref.try_emplace(r.eval_corpus, 0.0).first->second;
        best = std::max(best, *a);
      }

  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalReport*>> by_detector;
  for (const auto& r : reports) {
    if (r.kind == ProtocolKind::AUDIT) continue;
    if (!by_detector.count(r.detector_label)) order.push_back(r.detector_label);
    by_detector[r.detector_label].push_back(&r);
  }

  for (const auto& label : order) {
    DetectorAudit a;
    a.detector = label;
    const EvalReport* in_dist = nullptr;
    for (const auto* r : by_detector[label])
      if (r->kind == ProtocolKind::IN_DIST) {
        in_dist = r;
        break;
      }
    if (in_dist && in_dist->overall.auc && in_dist->naive_baseline.auc) {
      a.in_dist_auc = in_dist->overall.auc->mean;
      a.naive_auc = in_dist->naive_baseline.auc->mean;
      switch (compare_auc(*a.in_dist_auc, *a.naive_auc, th.margin)) {
        case NaiveVerdict::BEATS_NAIVE: a.guideline_i = AuditFlag::BEATS_NAIVE; break;
        case NaiveVerdict::WITHIN_NOISE: a.guideline_i = AuditFlag::WITHIN_NOISE; break;
        case NaiveVerdict::BELOW_NAIVE: a.guideline_i = AuditFlag::BELOW_NAIVE; break;
      }
      if (in_dist->detector == DetectorKind::LOGISTIC) {
        a.guideline_ii = AuditFlag::REFERENCE;
        a.linear_auc = a.in_dist_auc;
      } else if (auto it = linear_ref.find(in_dist->eval_corpus); it != linear_ref.end()) {
        a.linear_auc = it->second;
        switch (compare_auc(*a.in_dist_auc, it->second, th.margin)) {
          case NaiveVerdict::BEATS_NAIVE: a.guideline_ii = AuditFlag::BEATS_LINEAR; break;
          case NaiveVerdict::WITHIN_NOISE: a.guideline_ii = AuditFlag::MATCHES_LINEAR; break;
          case NaiveVerdict::BELOW_NAIVE: a.guideline_ii = AuditFlag::BELOW_LINEAR; break;
        }
      }
    }
    for (const auto* r : by_detector[label]) {
      if (!is_cross(*r)) continue;
      if (auto auc = mean_auc(r->overall)) a.worst_cross_auc = std::min(a.worst_cross_auc.value_or(1.0), *auc);
    }
    if (a.worst_cross_auc) a.guideline_iii = *a.worst_cross_auc <= th.ood_floor ? AuditFlag::FAILS_OOD : AuditFlag::PASS;
    summary.detectors.push_back(std::move(a));
  }
  return summary;
}

json to_json(const AuditSummary& s) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json detectors = json::array();
  for (const auto& a : s.detectors) {
    detectors.push_back({{"detector", a.detector},
                         {"complete", a.complete()},
                         {"guideline_i", {{"verdict", to_string(a.guideline_i)}, {"auc", opt(a.in_dist_auc)}, {"naive_auc", opt(a.naive_auc)}}},
                         {"guideline_ii", {{"verdict", to_string(a.guideline_ii)}, {"linear_auc", opt(a.linear_auc)}}},
                         {"guideline_iii", {{"verdict", to_string(a.guideline_iii)}, {"worst_cross_auc", opt(a.worst_cross_auc)}}},
                         {"guideline_iv", to_string(a.guideline_iv)},
                         {"guideline_v", to_string(a.guideline_v)}});
  }
  return {{"format", "halprobe-audit"},
          {"detectors", detectors},
          {"task_probe", {{"verdict", to_string(s.task_probe)}, {"auc", opt(s.task_probe_auc)}}}};
}

}  // namespace halprobe
