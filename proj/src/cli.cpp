#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "halprobe/corpus.hpp"
#include "halprobe/detector.hpp"
#include "halprobe/dump.hpp"
#include "halprobe/error.hpp"
#include "halprobe/evalengine.hpp"
#include "halprobe/parallel.hpp"
#include "halprobe/rng.hpp"
#include "halprobe/synth.hpp"
#include "io_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace halprobe {

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

enum class Level { ERROR, WARN, INFO, DEBUG };

struct Logger {
  Level level = Level::INFO;
  std::ostream* err = &std::cerr;

  void log(Level at, const std::string& msg) const {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (at <= level) *err << "[" << names[static_cast<int>(at)] << "] " << msg << "\n";
  }
};

Level parse_level(const std::string& s) {
  if (s == "error") return Level::ERROR;
  if (s == "warn") return Level::WARN;
  if (s == "debug") return Level::DEBUG;
  return Level::INFO;
}

struct DetectorFlags {
  std::vector<std::string> detectors{"naive"};
  int layer = 0;
  std::vector<std::string> hooks{"resid_pre"};
  std::string sae_view = "last";
  std::string sae_rep = "direct";
  int k = 4096;
  std::string sae_downstream = "logistic";
  double l2 = 1.0;
  int n_trees = 200;
  int max_depth = -1;
  int epochs = 30;
  double lr = 1e-3;
  int batch = 64;
  std::vector<int> hidden{256, 128, 64};
  std::string redeep_grid;

  DetectorConfig config(const std::string& kind, const std::string& hook) const {
    DetectorConfig c;
    c.kind = parse_detector_kind(kind);
    c.layer = layer;
    c.hook = parse_hook(hook);
    c.logistic.l2_lambda = l2;
    c.forest.n_trees = n_trees;
    if (max_depth >= 0) c.forest.max_depth = max_depth;
    c.mlp.epochs = epochs;
    c.mlp.lr = lr;
    c.mlp.batch_size = batch;
    c.mlp.hidden = hidden;
    c.sae.layer = layer;
    c.sae.extraction = parse_sae_view(sae_view);
    c.sae.representation = parse_sae_representation(sae_rep);
    c.sae.k = k;
    c.sae.downstream = parse_downstream(sae_downstream);
    if (!redeep_grid.empty()) {
      const json j = json::parse(detail::read_file(redeep_grid));
      DetectorConfig parsed = detector_config_from_json({{"kind", "redeep"}, {"redeep_grid", j}});
      c.redeep_grid = parsed.redeep_grid;
    }
    return c;
  }

  /// Residual probes run once per requested hook; other detectors ignore it.
  std::vector<std::pair<std::string, std::string>> product() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& det : detectors) {
      if (det == "logistic" || det == "forest" || det == "mlp")
        for (const auto& h : hooks) out.emplace_back(det, h);
      else
        out.emplace_back(det, hooks.front());
    }
    return out;
  }
};

void add_detector_flags(CLI::App* sub, DetectorFlags& f, bool many) {
  const auto kinds = CLI::IsMember({"naive", "logistic", "forest", "mlp", "sae", "redeep"});
  if (many) sub->add_option("--detector", f.detectors, "Detector(s): naive|logistic|forest|mlp|sae|redeep")->check(kinds);
  else sub->add_option("--detector", f.detectors, "Detector: naive|logistic|forest|mlp|sae|redeep")->check(kinds)->expected(1);
  sub->add_option("--layer", f.layer, "Layer of the residual (or SAE) panel");
  const auto hooks = CLI::IsMember({"resid_pre", "resid_mid"});
  if (many) sub->add_option("--hook", f.hooks, "Residual hook(s): resid_pre|resid_mid")->check(hooks);
  else sub->add_option("--hook", f.hooks, "Residual hook: resid_pre|resid_mid")->check(hooks)->expected(1);
  sub->add_option("--sae-view", f.sae_view, "SAE extraction: last|max")->check(CLI::IsMember({"last", "max", "last_token", "max_act"}));
  sub->add_option("--sae-rep", f.sae_rep, "SAE representation: direct|contrastive")->check(CLI::IsMember({"direct", "contrastive"}));
  sub->add_option("--k", f.k, "Contrastive top-k features")->check(CLI::PositiveNumber);
  sub->add_option("--sae-downstream", f.sae_downstream, "SAE downstream classifier: logistic|forest|mlp")
      ->check(CLI::IsMember({"logistic", "forest", "mlp"}));
  sub->add_option("--l2", f.l2, "Logistic L2 strength")->check(CLI::NonNegativeNumber);
  sub->add_option("--n-trees", f.n_trees, "Forest size")->check(CLI::PositiveNumber);
  sub->add_option("--max-depth", f.max_depth, "Forest depth limit (-1 = unlimited)");
  sub->add_option("--epochs", f.epochs, "MLP epochs")->check(CLI::NonNegativeNumber);
  sub->add_option("--lr", f.lr, "MLP learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--batch", f.batch, "MLP batch size")->check(CLI::PositiveNumber);
  sub->add_option("--hidden", f.hidden, "MLP hidden widths");
  sub->add_option("--redeep-grid", f.redeep_grid, "JSON file with a list of ReDeEP grid points");
}

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  std::string log_level = "info";
  std::size_t jobs = default_jobs();
};

void add_common(CLI::App* sub, Globals& g) {
  sub->add_option("--seed", g.seed, "Random seed");
  sub->add_option("--out", g.out, "Output path");
}

fs::path resolve_input(const std::string& path) {
  if (fs::exists(path)) return path;
  if (const char* cache = std::getenv("HALPROBE_CACHE")) {
    const fs::path cached = fs::path(cache) / path;
    if (fs::exists(cached)) return cached;
  }
  throw Error(ErrorCode::IO_ERROR, "no such file or directory: " + path);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_provenance(const fs::path& where, const std::string& command, const std::vector<std::string>& args,
                      const std::string& config_text, std::uint64_t seed) {
  std::string canonical;
  for (const auto& a : args) canonical += a + '\x1f';
  canonical += config_text;
  const json j{{"tool", "halprobe"},
               {"version", HALPROBE_VERSION},
               {"command", command},
               {"arguments", args},
               {"config_hash", "fnv1a64:" + hex64(fnv1a64(canonical))},
               {"seed", seed}};
  detail::atomic_write(where, j.dump(1) + "\n");
}

fs::path provenance_path_for(const fs::path& out, bool is_dir) {
  if (is_dir) return out / "provenance.json";
  return fs::path(out.string() + ".provenance.json");
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == '@' || c == '/' || c == ' ' || c == '+') c = '_';
  return s;
}

std::vector<TaskType> parse_tasks(const std::vector<std::string>& names) {
  std::vector<TaskType> out;
  for (const auto& n : names) out.push_back(parse_task(n));
  return out;
}

void require_out(const Globals& g, const char* command) {
  if (g.out.empty()) throw CLI::RequiredError("--out for " + std::string(command));
}

std::vector<std::string> option_names(const CLI::App* app) {
  std::vector<std::string> names;
  for (const auto* opt : app->get_options())
    for (const auto& l : opt->get_lnames()) names.push_back("--" + l);
  return names;
}

std::string suggestion(const CLI::App& app, const std::vector<std::string>& args) {
  const CLI::App* scope = &app;
  for (const auto& a : args)
    if (const auto* sub = [&]() -> const CLI::App* {
          for (const auto* s : app.get_subcommands({}))
            if (s->get_name() == a) return s;
          return nullptr;
        }()) {
      scope = sub;
      break;
    }
  std::vector<std::string> known = option_names(scope);
  for (const auto& n : option_names(&app)) known.push_back(n);
  for (const auto& a : args) {
    if (a.rfind("--", 0) != 0) continue;
    const std::string flag = a.substr(0, a.find('='));
    if (std::find(known.begin(), known.end(), flag) != known.end()) continue;
    std::string best;
    std::size_t best_d = std::string::npos;
    for (const auto& k : known) {
      const auto d = levenshtein(flag, k);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (!best.empty() && best_d <= std::max<std::size_t>(2, flag.size() / 3))
      return "unknown flag " + flag + "; did you mean " + best + "?";
  }
  return {};
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hallucination-detector evaluation harness", "halprobe"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(HALPROBE_VERSION));

  Globals g;
  Logger logger;
  logger.err = &err;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output path");
  app.add_option("--log-level", g.log_level, "error|warn|info|debug")->check(CLI::IsMember({"error", "warn", "info", "debug"}));
  app.add_option("--jobs", g.jobs, "Parallel jobs")->check(CLI::PositiveNumber);
  app.set_config("--config", "", "INI/TOML file with flag defaults");

  // convert
  auto* convert = app.add_subcommand("convert", "Convert a dataset into the normalized corpus format");
  std::string dataset = "ragtruth", in_path, source_path, model_filter, split_filter = "all";
  convert->add_option("--dataset", dataset, "ragtruth|generic")->check(CLI::IsMember({"ragtruth", "generic"}));
  convert->add_option("--in", in_path, "Input file, or a RAGTruth directory with response.jsonl and source_info.jsonl")->required();
  convert->add_option("--source", source_path, "RAGTruth source_info.jsonl when --in is a file");
  convert->add_option("--model-filter", model_filter, "Keep responses of this generator model only");
  convert->add_option("--split-filter", split_filter, "RAGTruth split: all|train|test")->check(CLI::IsMember({"all", "train", "test"}));
  add_common(convert, g);

  // split
  auto* split_cmd = app.add_subcommand("split", "Stratified train/test split of a corpus");
  std::string corpus_path;
  double fraction = 0.7;
  std::string stratify = "task_and_label";
  split_cmd->add_option("--corpus", corpus_path, "Corpus .jsonl")->required();
  split_cmd->add_option("--fraction", fraction, "Train share per stratum")->check(CLI::Range(0.0, 1.0));
  split_cmd->add_option("--stratify", stratify, "none|task|task_and_label")->check(CLI::IsMember({"none", "task", "task_and_label"}));
  add_common(split_cmd, g);

  // train
  auto* train = app.add_subcommand("train", "Fit a detector and save it with provenance");
  DetectorFlags train_flags;
  std::string dump_path;
  add_detector_flags(train, train_flags, false);
  train->add_option("--dump", dump_path, "Activation dump directory or manifest");
  train->add_option("--corpus", corpus_path, "Training corpus .jsonl")->required();
  add_common(train, g);

  // eval
  auto* eval = app.add_subcommand("eval", "Run evaluation protocols and write reports");
  DetectorFlags eval_flags;
  std::vector<std::string> protocols{"indist"};
  std::string train_corpus, train_dump, eval_corpus, eval_dump;
  std::vector<std::string> train_tasks, eval_tasks;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  double eval_fraction = 0.7;
  eval->add_option("--protocol", protocols, "indist|cross-task|cross-dataset|hyper-transfer|audit")
      ->check(CLI::IsMember({"indist", "cross-task", "cross-dataset", "hyper-transfer", "audit"}));
  add_detector_flags(eval, eval_flags, true);
  eval->add_option("--train-corpus", train_corpus, "Train-side corpus .jsonl")->required();
  eval->add_option("--train-dump", train_dump, "Train-side activation dump");
  eval->add_option("--train-tasks", train_tasks, "Train-side task filter");
  eval->add_option("--eval-corpus", eval_corpus, "Eval-side corpus .jsonl (defaults to the train corpus)");
  eval->add_option("--eval-dump", eval_dump, "Eval-side activation dump (defaults to the train dump)");
  eval->add_option("--eval-tasks", eval_tasks, "Eval-side task filter");
  eval->add_option("--seeds", seeds, "Seed replicates");
  eval->add_option("--fraction", eval_fraction, "Train share of each stratum")->check(CLI::Range(0.0, 1.0));
  add_common(eval, g);

  // audit
  auto* audit = app.add_subcommand("audit", "Task-type probe audit or guideline audit over reports");
  std::string target = "guidelines", reports_dir;
  int audit_layer = 0;
  std::string audit_hook = "resid_pre";
  audit->add_option("--target", target, "task-type|guidelines")->check(CLI::IsMember({"task-type", "guidelines"}));
  audit->add_option("--reports", reports_dir, "Directory of evaluation reports (guidelines)");
  audit->add_option("--dump", dump_path, "Activation dump (task-type)");
  audit->add_option("--corpus", corpus_path, "Corpus .jsonl (task-type)");
  audit->add_option("--layer", audit_layer, "Layer (task-type)");
  audit->add_option("--hook", audit_hook, "resid_pre|resid_mid (task-type)")->check(CLI::IsMember({"resid_pre", "resid_mid"}));
  add_common(audit, g);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus and activation dump");
  std::string spec_path;
  synth->add_option("--spec", spec_path, "Synthetic spec JSON")->required();
  add_common(synth, g);

  // report
  auto* report = app.add_subcommand("report", "Render report tables");
  std::string report_in, format = "text";
  report->add_option("--in", report_in, "Directory of evaluation reports")->required();
  report->add_option("--format", format, "text|csv")->check(CLI::IsMember({"text", "csv"}));
  add_common(report, g);

  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  for (auto& s : storage) argv.push_back(s.data());
  const std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    app.exit(e, out, err);
    if (const auto hint = suggestion(app, rest); !hint.empty()) err << hint << "\n";
    return 1;
  }
  logger.level = parse_level(g.log_level);

  std::string config_text;
  if (const auto* cfg = app.get_config_ptr(); cfg && cfg->count() > 0) config_text = detail::read_file(cfg->as<std::string>());
  const auto parsed_subs = app.get_subcommands();
  const bool seed_given = app.count("--seed") > 0 || std::any_of(parsed_subs.begin(), parsed_subs.end(),
                                                                     [](const CLI::App* s) { return s->count("--seed") > 0; });

  try {
    if (convert->parsed()) {
      require_out(g, "convert");
      Corpus corpus;
      if (dataset == "ragtruth") {
        fs::path responses = resolve_input(in_path), sources;
        if (fs::is_directory(responses)) {
          sources = responses / "source_info.jsonl";
          responses = responses / "response.jsonl";
        } else {
          if (source_path.empty()) throw CLI::RequiredError("--source (or --in as a directory)");
          sources = resolve_input(source_path);
        }
        corpus = convert_ragtruth(responses, sources, {model_filter, split_filter});
      } else {
        corpus = convert_generic_qa(resolve_input(in_path));
      }
      write_corpus(corpus, g.out);
      write_provenance(provenance_path_for(g.out, false), "convert", rest, config_text, g.seed);
      logger.log(Level::INFO, "wrote " + std::to_string(corpus.size()) + " samples to " + g.out);
      for (const auto& [task, n] : corpus.task_counts())
        out << to_string(task) << "\t" << n << "\t" << corpus.hallucination_rate(task) << "\n";
      return 0;
    }

    if (split_cmd->parsed()) {
      require_out(g, "split");
      const Corpus corpus = read_corpus(resolve_input(corpus_path));
      const auto [tr, te] = split(corpus, fraction, parse_stratify(stratify), g.seed);
      fs::create_directories(g.out);
      const std::string stem = fs::path(corpus_path).stem().string();
      write_corpus(tr, fs::path(g.out) / (stem + ".train.jsonl"));
      write_corpus(te, fs::path(g.out) / (stem + ".test.jsonl"));
      write_provenance(provenance_path_for(g.out, true), "split", rest, config_text, g.seed);
      out << "train\t" << tr.size() << "\ntest\t" << te.size() << "\n";
      return 0;
    }

    if (train->parsed()) {
      require_out(g, "train");
      DetectorConfig config = train_flags.config(train_flags.detectors.front(), train_flags.hooks.front());
      config.set_seed(g.seed);
      const Corpus corpus = read_corpus(resolve_input(corpus_path));
      std::optional<ActivationDump> dump;
      if (config.needs_dump()) {
        if (dump_path.empty()) throw CLI::RequiredError("--dump (detector " + std::string(to_string(config.kind)) + ")");
        dump = read_dump(resolve_input(dump_path));
      }
      const DetectorInput input = select_input(corpus, dump ? &*dump : nullptr,
                                               config.include_empty_responses || !config.needs_dump());
      std::vector<int> labels;
      for (std::size_t i = 0; i < input.size(); ++i) labels.push_back(input.sample(i).label);
      DetectorModel model = fit_detector(config, input, labels);
      fs::path target_path = g.out;
      if (fs::is_directory(target_path)) target_path /= "model.json";
      save_detector(model, target_path);
      write_provenance(provenance_path_for(target_path, false), "train", rest, config_text, g.seed);
      out << to_json(model)["provenance"].dump(1) << "\n";
      return 0;
    }

    if (eval->parsed()) {
      require_out(g, "eval");
      if (eval_corpus.empty()) eval_corpus = train_corpus;
      if (eval_dump.empty()) eval_dump = eval_corpus == train_corpus ? train_dump : std::string();
      bool need_dump = false;
      std::vector<ProtocolSpec> specs;
      for (const auto& proto : protocols) {
        for (const auto& [det, hook] : eval_flags.product()) {
          ProtocolSpec spec;
          spec.kind = parse_protocol_kind(proto);
          spec.train_corpus = train_corpus;
          spec.eval_corpus = eval_corpus;
          if (!train_tasks.empty()) spec.train_task_filter = parse_tasks(train_tasks);
          if (!eval_tasks.empty()) spec.eval_task_filter = parse_tasks(eval_tasks);
          spec.detector = eval_flags.config(det, hook);
          spec.seeds = seeds;
          spec.split_fraction = eval_fraction;
          need_dump = need_dump || spec.detector.needs_dump() || spec.kind == ProtocolKind::AUDIT;
          specs.push_back(std::move(spec));
        }
      }
      DatasetRegistry datasets;
      auto load = [&](const std::string& corpus_file, const std::string& dump_dir) {
        if (datasets.count(corpus_file)) return;
        Dataset ds;
        ds.corpus = read_corpus(resolve_input(corpus_file));
        if (need_dump) {
          if (dump_dir.empty()) throw CLI::RequiredError("a dump for corpus " + corpus_file);
          ds.dump = std::make_shared<const ActivationDump>(read_dump(resolve_input(dump_dir)));
        }
        datasets.emplace(corpus_file, std::move(ds));
      };
      load(train_corpus, train_dump);
      load(eval_corpus, eval_dump);

      const auto reports = run_protocols(specs, datasets, g.jobs);
      fs::create_directories(g.out);
      for (const auto& r : reports) {
        const std::string name = std::string(to_string(r.kind)) + "__" + sanitize(r.detector_label) + ".json";
        write_report(r, fs::path(g.out) / name);
        for (const auto& w : r.warnings) logger.log(Level::DEBUG, r.detector_label + ": " + w);
        logger.log(Level::INFO, r.detector_label + " " + std::string(to_string(r.kind)) + ": " +
                                    std::string(to_string(compare_with_naive(r))));
      }
      write_provenance(provenance_path_for(g.out, true), "eval", rest, config_text, g.seed);
      out << render_per_task_table(reports, TableFormat::TEXT);
      return 0;
    }

    if (audit->parsed()) {
      json result;
      if (target == "task-type") {
        if (dump_path.empty() || corpus_path.empty()) throw CLI::RequiredError("--dump and --corpus (task-type audit)");
        const Corpus corpus = read_corpus(resolve_input(corpus_path));
        const ActivationDump dump = read_dump(resolve_input(dump_path));
        result = to_json(audit_task_probe(dump, corpus, audit_layer, parse_hook(audit_hook), g.seed));
        result["target"] = "task == D2T";
        result["layer"] = audit_layer;
        result["hook"] = audit_hook;
      } else {
        if (reports_dir.empty()) throw CLI::RequiredError("--reports (guidelines audit)");
        result = to_json(guideline_audit(read_reports(resolve_input(reports_dir))));
      }
      out << result.dump(1) << "\n";
      if (!g.out.empty()) {
        detail::atomic_write(g.out, result.dump(1) + "\n");
        write_provenance(provenance_path_for(g.out, false), "audit", rest, config_text, g.seed);
      }
      return 0;
    }

    if (synth->parsed()) {
      require_out(g, "synth");
      SyntheticSpec spec = read_synthetic_spec(resolve_input(spec_path));
      if (seed_given) spec.seed = g.seed;
      const auto [corpus, dump] = generate(spec);
      const fs::path dir = g.out;
      fs::create_directories(dir);
      write_corpus(corpus, dir / "corpus.jsonl");
      write_dump(dump, dir / "dump");
      detail::atomic_write(dir / "spec.json", to_json(spec).dump(1) + "\n");
      const BayesAuc bayes = bayes_auc(spec);
      json b{{"optimal_per_task", bayes.optimal_per_task},
             {"optimal_overall", bayes.optimal_overall ? json(*bayes.optimal_overall) : json(nullptr)},
             {"naive_overall", bayes.naive_overall ? json(*bayes.naive_overall) : json(nullptr)},
             {"positives", bayes.positives}};
      detail::atomic_write(dir / "bayes_auc.json", b.dump(1) + "\n");
      write_provenance(provenance_path_for(dir, true), "synth", rest, config_text, spec.seed);
      out << "samples\t" << corpus.size() << "\n";
      return 0;
    }

    if (report->parsed()) {
      const auto reports = read_reports(resolve_input(report_in));
      const TableFormat fmt = parse_table_format(format);
      std::string text = render_per_task_table(reports, fmt);
      const bool any_cross = std::any_of(reports.begin(), reports.end(),
                                         [](const EvalReport& r) { return r.kind == ProtocolKind::CROSS_TASK; });
      if (any_cross) text += "\n" + render_cross_task_table(reports, fmt);
      out << text;
      if (!g.out.empty()) {
        detail::atomic_write(g.out, text);
        write_provenance(provenance_path_for(g.out, false), "report", rest, config_text, g.seed);
      }
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::INVALID_ARGUMENT ? 1 : 2;
  } catch (const json::exception& e) {
    err << "error: PARSE_ERROR: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int cli_dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace halprobe
