#include "halprobe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "halprobe/error.hpp"
#include "halprobe/rng.hpp"
#include "io_util.hpp"

namespace halprobe {

using nlohmann::json;

SyntheticSpec SyntheticSpec::ragtruth_like(std::size_t n_per_task, double delta, double tau, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.tasks = {{"QA", n_per_task, 0.5157, delta}, {"D2T", n_per_task, 0.8596, delta}, {"SUMMARY", n_per_task, 0.4602, delta}};
  spec.tau = tau;
  spec.seed = seed;
  return spec;
}

namespace {

void check_spec(const SyntheticSpec& spec) {
  if (spec.tasks.empty()) throw Error(ErrorCode::INVALID_ARGUMENT, "synthetic spec needs at least one task");
  std::size_t total = 0;
  for (const auto& t : spec.tasks) {
    parse_task(t.name);
    if (!(t.rate >= 0.0 && t.rate <= 1.0))
      throw Error(ErrorCode::INVALID_ARGUMENT, "task " + t.name + ": rate must lie in [0, 1]");
    total += t.n;
  }
  if (total == 0) throw Error(ErrorCode::INVALID_ARGUMENT, "synthetic spec must request at least one sample");
  if (!(spec.sigma > 0.0)) throw Error(ErrorCode::INVALID_ARGUMENT, "sigma must be positive");
  if (spec.n_signal_slots < 1 || spec.signal_slot < 0 || spec.signal_slot >= spec.n_signal_slots)
    throw Error(ErrorCode::INVALID_ARGUMENT, "signal_slot must index one of n_signal_slots");
  if (spec.layers.empty() || spec.hooks.empty())
    throw Error(ErrorCode::INVALID_ARGUMENT, "synthetic spec needs at least one layer and one hook");
  if (spec.sae_dim && *spec.sae_dim < 1) throw Error(ErrorCode::INVALID_ARGUMENT, "sae_dim must be positive");
  if (const auto& r = spec.redeep_panels) {
    if (r->n_heads < 1 || r->n_layers < 1 || r->min_tokens < 1 || r->max_tokens < r->min_tokens)
      throw Error(ErrorCode::INVALID_ARGUMENT, "redeep_panels needs positive widths and 1 <= min_tokens <= max_tokens");
    for (int h : r->informative_heads)
      if (h < 0 || h >= r->n_heads) throw Error(ErrorCode::INVALID_ARGUMENT, "informative head out of range");
    for (int l : r->informative_layers)
      if (l < 0 || l >= r->n_layers) throw Error(ErrorCode::INVALID_ARGUMENT, "informative layer out of range");
  }
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

Eigen::MatrixXd synth_basis(const SyntheticSpec& spec) {
  const int columns = static_cast<int>(spec.tasks.size()) + spec.n_signal_slots;
  const int block = spec.d / columns;
  if (block < 1)
    throw Error(ErrorCode::DIMENSION_TOO_SMALL, "d = " + std::to_string(spec.d) + " cannot host " + std::to_string(columns) +
                                                    " orthogonal directions");
  Rng rng(derive_seed(spec.basis_seed.value_or(spec.seed), "basis"));
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(spec.d, columns);
  for (int c = 0; c < columns; ++c) {
    auto segment = basis.col(c).segment(c * block, block);
    for (int k = 0; k < block; ++k) segment(k) = rng.normal();
    segment.normalize();
  }
  return basis;
}

std::pair<Corpus, ActivationDump> generate(const SyntheticSpec& spec) {
  check_spec(spec);
  const Eigen::MatrixXd basis = synth_basis(spec);
  const Eigen::VectorXd signal = basis.col(static_cast<Eigen::Index>(spec.tasks.size()) + spec.signal_slot);

  Corpus corpus;
  corpus.name = spec.name;
  std::vector<std::size_t> task_of;  // index into spec.tasks per sample
  Rng label_rng(derive_seed(spec.seed, "labels"));
  for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
    const auto& task = spec.tasks[t];
    const TaskType type = parse_task(task.name);
    std::vector<int> labels(task.n, 0);
    if (spec.label_mode == LabelMode::EXACT) {
      const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(task.n) * task.rate));
      std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(std::min(k, task.n)), 1);
      label_rng.shuffle(std::span<int>(labels));
    } else {
      for (auto& y : labels) y = label_rng.bernoulli(task.rate) ? 1 : 0;
    }
    for (std::size_t i = 0; i < task.n; ++i) {
      Sample s;
      s.id = spec.name + "-" + std::string(to_string(type)) + "-" + std::to_string(i);
      s.task = type;
      s.source_dataset = spec.name;
      s.prompt = type == TaskType::D2T ? "Structured data: {\"record\": " + std::to_string(i) + "}" : "Context " + std::to_string(i);
      s.response = "synthetic response " + std::to_string(i);
      s.label = labels[i];
      s.generator_model = "synthetic";
      corpus.samples.push_back(std::move(s));
      task_of.push_back(t);
    }
  }

  const auto n = static_cast<Eigen::Index>(corpus.size());
  ActivationDump dump;
  dump.manifest.model_id = "synthetic:" + spec.name;
  for (std::size_t i = 0; i < corpus.size(); ++i) dump.manifest.sample_index.emplace_back(corpus.samples[i].id, i);

  for (int layer : spec.layers) {
    for (Hook hook : spec.hooks) {
      Rng rng(derive_seed(spec.seed, "panel-" + std::to_string(layer) + "-" + std::string(to_string(hook))));
      MatrixF panel(n, spec.d);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto t = task_of[static_cast<std::size_t>(i)];
        const int y = corpus.samples[static_cast<std::size_t>(i)].label;
        Eigen::VectorXd x = spec.tau * basis.col(static_cast<Eigen::Index>(t)) + (y * spec.tasks[t].delta) * signal;
        for (int k = 0; k < spec.d; ++k) x(k) += spec.sigma * rng.normal();
        panel.row(i) = x.transpose().cast<float>();
      }
      dump.residual.emplace(std::make_pair(layer, hook), std::move(panel));
    }
  }

  if (spec.sae_dim) {
    const int m = *spec.sae_dim;
    Rng enc_rng(derive_seed(spec.basis_seed.value_or(spec.seed), "sae-encoder"));
    Eigen::MatrixXd encoder(m, spec.d);
    for (Eigen::Index k = 0; k < encoder.size(); ++k) encoder.data()[k] = enc_rng.normal() / std::sqrt(static_cast<double>(spec.d));
    for (int layer : spec.layers) {
      const MatrixF& resid = dump.residual.at({layer, spec.hooks.front()});
      Rng rng(derive_seed(spec.seed, "sae-" + std::to_string(layer)));
      SaePanels panels{MatrixF(n, m), MatrixF(n, m)};
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd code = (encoder * resid.row(i).transpose().cast<double>()).array() - 0.1;
        for (int k = 0; k < m; ++k) {
          const double last = std::max(0.0, code(k));
          panels.last_token(i, k) = static_cast<float>(last);
          panels.max_act(i, k) = static_cast<float>(last + 0.25 * std::abs(rng.normal()));
        }
      }
      dump.sae.emplace(layer, std::move(panels));
    }
  }

  if (const auto& rule = spec.redeep_panels) {
    Rng rng(derive_seed(spec.seed, "redeep-panels"));
    std::vector<char> head_informative(static_cast<std::size_t>(rule->n_heads), 0);
    std::vector<char> layer_informative(static_cast<std::size_t>(rule->n_layers), 0);
    for (int h : rule->informative_heads) head_informative[static_cast<std::size_t>(h)] = 1;
    for (int l : rule->informative_layers) layer_informative[static_cast<std::size_t>(l)] = 1;

    MatrixF ecs(n, rule->n_heads), pks(n, rule->n_layers);
    std::vector<Eigen::MatrixXd> token_ecs, token_pks;
    std::vector<std::size_t> offsets{0};
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = corpus.samples[static_cast<std::size_t>(i)].label;
      Eigen::RowVectorXd ecs_center(rule->n_heads), pks_center(rule->n_layers);
      for (int h = 0; h < rule->n_heads; ++h)
        ecs_center(h) = rule->ecs_base - (head_informative[static_cast<std::size_t>(h)] ? rule->ecs_shift * y : 0.0) +
                        rule->noise * rng.normal();
      for (int l = 0; l < rule->n_layers; ++l)
        pks_center(l) = rule->pks_base + (layer_informative[static_cast<std::size_t>(l)] ? rule->pks_shift * y : 0.0) +
                        rule->noise * rng.normal();
      if (!rule->per_token) {
        ecs.row(i) = ecs_center.cwiseMax(0.0).cwiseMin(1.0).cast<float>();
        pks.row(i) = pks_center.cwiseMax(0.0).cwiseMin(std::numbers::ln2).cast<float>();
        continue;
      }
      const auto tokens = static_cast<Eigen::Index>(
          rule->min_tokens + static_cast<int>(rng.index(static_cast<std::uint64_t>(rule->max_tokens - rule->min_tokens + 1))));
      Eigen::MatrixXd te(tokens, rule->n_heads), tp(tokens, rule->n_layers);
      for (Eigen::Index k = 0; k < tokens; ++k) {
        for (int h = 0; h < rule->n_heads; ++h) te(k, h) = std::clamp(ecs_center(h) + rule->noise * rng.normal(), 0.0, 1.0);
        for (int l = 0; l < rule->n_layers; ++l)
          tp(k, l) = std::clamp(pks_center(l) + rule->noise * rng.normal(), 0.0, std::numbers::ln2);
      }
      // Store float-rounded tokens so the sample panel is the mean of what is written.
      te = te.cast<float>().cast<double>();
      tp = tp.cast<float>().cast<double>();
      ecs.row(i) = te.colwise().mean().cast<float>();
      pks.row(i) = tp.colwise().mean().cast<float>();
      token_ecs.push_back(std::move(te));
      token_pks.push_back(std::move(tp));
      offsets.push_back(offsets.back() + static_cast<std::size_t>(tokens));
    }
    dump.ecs = std::move(ecs);
    dump.pks = std::move(pks);
    if (rule->per_token) {
      PerTokenPanels pt;
      pt.offsets = offsets;
      pt.ecs.resize(static_cast<Eigen::Index>(offsets.back()), rule->n_heads);
      pt.pks.resize(static_cast<Eigen::Index>(offsets.back()), rule->n_layers);
      for (std::size_t i = 0; i < token_ecs.size(); ++i) {
        const auto start = static_cast<Eigen::Index>(offsets[i]);
        pt.ecs.middleRows(start, token_ecs[i].rows()) = token_ecs[i].cast<float>();
        pt.pks.middleRows(start, token_pks[i].rows()) = token_pks[i].cast<float>();
      }
      dump.per_token = std::move(pt);
    }
  }

  sync_manifest(dump);
  return {std::move(corpus), std::move(dump)};
}

BayesAuc bayes_auc(const SyntheticSpec& spec) {
  check_spec(spec);
  BayesAuc out;
  double pos_d2t = 0, neg_d2t = 0, pos_other = 0, neg_other = 0;
  std::vector<double> pos(spec.tasks.size()), neg(spec.tasks.size());
  for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
    const auto& task = spec.tasks[t];
    const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(task.n) * task.rate));
    out.positives[task.name] += k;
    pos[t] = static_cast<double>(k);
    neg[t] = static_cast<double>(task.n - k);
    out.optimal_per_task[task.name] = normal_cdf(task.delta / (spec.sigma * std::numbers::sqrt2));
    if (parse_task(task.name) == TaskType::D2T) {
      pos_d2t += pos[t];
      neg_d2t += neg[t];
    } else {
      pos_other += pos[t];
      neg_other += neg[t];
    }
  }
  const double P = pos_d2t + pos_other;
  const double N = neg_d2t + neg_other;
  if (P > 0 && N > 0) {
    // Naive scores: D2T positives beat non-D2T negatives, same-score pairs tie.
    out.naive_overall = (pos_d2t * neg_other + 0.5 * (pos_d2t * neg_d2t + pos_other * neg_other)) / (P * N);
    double acc = 0.0;
    for (std::size_t t = 0; t < spec.tasks.size(); ++t)
      acc += pos[t] * N * normal_cdf(spec.tasks[t].delta / (spec.sigma * std::numbers::sqrt2));
    out.optimal_overall = acc / (P * N);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spec files

json to_json(const SyntheticSpec& spec) {
  json j;
  j["name"] = spec.name;
  json tasks = json::array();
  for (const auto& t : spec.tasks) tasks.push_back({{"name", t.name}, {"n", t.n}, {"rate", t.rate}, {"delta", t.delta}});
  j["tasks"] = tasks;
  j["d"] = spec.d;
  j["sigma"] = spec.sigma;
  j["tau"] = spec.tau;
  j["seed"] = spec.seed;
  j["basis_seed"] = spec.basis_seed ? json(*spec.basis_seed) : json(nullptr);
  j["signal_slot"] = spec.signal_slot;
  j["n_signal_slots"] = spec.n_signal_slots;
  j["layers"] = spec.layers;
  json hooks = json::array();
  for (auto h : spec.hooks) hooks.push_back(to_string(h));
  j["hooks"] = hooks;
  j["sae_dim"] = spec.sae_dim ? json(*spec.sae_dim) : json(nullptr);
  j["label_mode"] = spec.label_mode == LabelMode::EXACT ? "exact" : "bernoulli";
  if (const auto& r = spec.redeep_panels) {
    j["redeep_panels"] = {{"n_heads", r->n_heads},
                          {"n_layers", r->n_layers},
                          {"informative_heads", r->informative_heads},
                          {"informative_layers", r->informative_layers},
                          {"pks_base", r->pks_base},
                          {"pks_shift", r->pks_shift},
                          {"ecs_base", r->ecs_base},
                          {"ecs_shift", r->ecs_shift},
                          {"noise", r->noise},
                          {"min_tokens", r->min_tokens},
                          {"max_tokens", r->max_tokens},
                          {"per_token", r->per_token}};
  } else {
    j["redeep_panels"] = nullptr;
  }
  return j;
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  try {
    SyntheticSpec spec;
    spec.name = j.value("name", spec.name);
    for (const auto& t : j.at("tasks"))
      spec.tasks.push_back({t.at("name").get<std::string>(), t.at("n").get<std::size_t>(), t.at("rate").get<double>(),
                            t.value("delta", 0.0)});
    spec.d = j.value("d", spec.d);
    spec.sigma = j.value("sigma", spec.sigma);
    spec.tau = j.value("tau", spec.tau);
    spec.seed = j.value("seed", spec.seed);
    if (auto it = j.find("basis_seed"); it != j.end() && !it->is_null()) spec.basis_seed = it->get<std::uint64_t>();
    spec.signal_slot = j.value("signal_slot", spec.signal_slot);
    spec.n_signal_slots = j.value("n_signal_slots", spec.n_signal_slots);
    if (j.contains("layers")) spec.layers = j.at("layers").get<std::vector<int>>();
    if (j.contains("hooks")) {
      spec.hooks.clear();
      for (const auto& h : j.at("hooks")) spec.hooks.push_back(parse_hook(h.get<std::string>()));
    }
    if (auto it = j.find("sae_dim"); it != j.end() && !it->is_null()) spec.sae_dim = it->get<int>();
    const std::string mode = j.value("label_mode", "bernoulli");
    if (mode == "exact") spec.label_mode = LabelMode::EXACT;
    else if (mode == "bernoulli") spec.label_mode = LabelMode::BERNOULLI;
    else throw Error(ErrorCode::INVALID_ARGUMENT, "label_mode must be bernoulli or exact");
    if (auto it = j.find("redeep_panels"); it != j.end() && !it->is_null()) {
      RedeepPanelRule r;
      const auto& p = *it;
      r.n_heads = p.value("n_heads", r.n_heads);
      r.n_layers = p.value("n_layers", r.n_layers);
      if (p.contains("informative_heads")) r.informative_heads = p.at("informative_heads").get<std::vector<int>>();
      if (p.contains("informative_layers")) r.informative_layers = p.at("informative_layers").get<std::vector<int>>();
      r.pks_base = p.value("pks_base", r.pks_base);
      r.pks_shift = p.value("pks_shift", r.pks_shift);
      r.ecs_base = p.value("ecs_base", r.ecs_base);
      r.ecs_shift = p.value("ecs_shift", r.ecs_shift);
      r.noise = p.value("noise", r.noise);
      r.min_tokens = p.value("min_tokens", r.min_tokens);
      r.max_tokens = p.value("max_tokens", r.max_tokens);
      r.per_token = p.value("per_token", r.per_token);
      spec.redeep_panels = r;
    }
    check_spec(spec);
    return spec;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::PARSE_ERROR, std::string("synthetic spec: ") + e.what());
  }
}

SyntheticSpec read_synthetic_spec(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::PARSE_ERROR, path.string() + ": " + e.what());
  }
  return synthetic_spec_from_json(j);
}

}  // namespace halprobe
