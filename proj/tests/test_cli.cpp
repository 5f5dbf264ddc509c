#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "halprobe/corpus.hpp"
#include "halprobe/evalengine.hpp"
#include "halprobe/synth.hpp"
#include "test_util.hpp"

using namespace halprobe;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "halprobe");
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

void write_spec(const std::filesystem::path& path, int layer = 0, double tau = 1.0) {
  SyntheticSpec spec = SyntheticSpec::ragtruth_like(60, 1.5, tau, 4);
  spec.d = 10;
  spec.layers = {layer};
  spec.hooks = {Hook::RESID_PRE};
  testutil::write_text(path, to_json(spec).dump());
}

}  // namespace

TEST_CASE("help lists every subcommand and the shared flags") {
  const Run top = cli({"--help"});
  CHECK(top.code == 0);
  for (const char* sub : {"convert", "split", "train", "eval", "audit", "synth", "report"})
    CHECK(top.out.find(sub) != std::string::npos);
  for (const char* sub : {"convert", "split", "train", "eval", "audit", "synth", "report"}) {
    const Run r = cli({sub, "--help"});
    CAPTURE(sub);
    CHECK(r.code == 0);
    CHECK(r.out.find("--seed") != std::string::npos);
    CHECK(r.out.find("--out") != std::string::npos);
  }
  CHECK(cli({"--version"}).out.find(HALPROBE_VERSION) != std::string::npos);
}

TEST_CASE("usage errors exit 1 with a suggestion") {
  const Run r = cli({"eval", "--protcol", "indist", "--train-corpus", "x"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--protocol") != std::string::npos);
  CHECK(cli({}).code == 1);
  CHECK(cli({"eval", "--detector", "svm", "--train-corpus", "x"}).code == 1);
  CHECK(levenshtein("--protcol", "--protocol") == 1);
  CHECK(levenshtein("", "abc") == 3);
}

TEST_CASE("synth then naive eval reproduces the pairwise oracle") {
  testutil::TempDir dir("cli-eval");
  write_spec(dir / "s.json");
  REQUIRE(cli({"synth", "--spec", (dir / "s.json").string(), "--out", (dir / "d").string()}).code == 0);
  CHECK(std::filesystem::exists(dir / "d" / "bayes_auc.json"));
  CHECK(std::filesystem::exists(dir / "d" / "provenance.json"));
  CHECK(validate_dump(dir / "d" / "dump").empty());

  const std::string corpus = (dir / "d" / "corpus.jsonl").string();
  const Run r = cli({"eval", "--protocol", "indist", "--detector", "naive", "--train-corpus", corpus, "--seeds", "7",
                     "--out", (dir / "r").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("Overall") != std::string::npos);
  const EvalReport rep = read_report(dir / "r" / "indist__naive.json");
  const auto [train, test] = split(read_corpus(corpus), 0.7, Stratify::TASK_AND_LABEL, 7);
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& x : test.samples) {
    s.push_back(naive_predict(x));
    y.push_back(x.label);
  }
  CHECK(rep.overall.auc->mean == testutil::pairwise_auc(s, y));

  const auto first = testutil::read_text(dir / "r" / "indist__naive.json");
  const auto prov = testutil::read_text(dir / "r" / "provenance.json");
  REQUIRE(cli({"eval", "--protocol", "indist", "--detector", "naive", "--train-corpus", corpus, "--seeds", "7", "--out",
               (dir / "r").string()})
              .code == 0);
  CHECK(testutil::read_text(dir / "r" / "indist__naive.json") == first);
  CHECK(testutil::read_text(dir / "r" / "provenance.json") == prov);
  CHECK(json::parse(prov).at("config_hash").get<std::string>().rfind("fnv1a64:", 0) == 0);

  const Run table = cli({"report", "--in", (dir / "r").string(), "--format", "csv"});
  CHECK(table.code == 0);
  CHECK(table.out.rfind("Detector,", 0) == 0);
}

TEST_CASE("train records the layer in provenance") {
  testutil::TempDir dir("cli-train");
  write_spec(dir / "s.json", 15);
  REQUIRE(cli({"synth", "--spec", (dir / "s.json").string(), "--out", (dir / "d").string()}).code == 0);
  const Run r = cli({"train", "--detector", "logistic", "--layer", "15", "--hook", "resid_pre", "--dump",
                     (dir / "d" / "dump").string(), "--corpus", (dir / "d" / "corpus.jsonl").string(), "--out",
                     (dir / "m.json").string()});
  REQUIRE(r.code == 0);
  const json model = json::parse(testutil::read_text(dir / "m.json"));
  CHECK(model.at("provenance").at("layer") == 15);
  CHECK(std::filesystem::exists(dir / "m.json.provenance.json"));
  CHECK(cli({"train", "--detector", "logistic", "--corpus", (dir / "d" / "corpus.jsonl").string(), "--out",
             (dir / "m2.json").string()})
            .code == 1);
}

TEST_CASE("eval against a corpus missing a task exits 2") {
  testutil::TempDir dir("cli-missing");
  write_spec(dir / "s.json");
  REQUIRE(cli({"synth", "--spec", (dir / "s.json").string(), "--out", (dir / "d").string()}).code == 0);
  const Run r = cli({"eval", "--detector", "naive", "--train-corpus", (dir / "d" / "corpus.jsonl").string(),
                     "--eval-tasks", "OTHER", "--out", (dir / "r").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("MISSING_TASK") != std::string::npos);
  CHECK(cli({"eval", "--train-corpus", (dir / "nope.jsonl").string(), "--out", (dir / "r").string()}).code == 2);
}

TEST_CASE("split, convert and audit subcommands") {
  testutil::TempDir dir("cli-misc");
  std::string text;
  for (int i = 0; i < 20; ++i)
    text += "{\"id\": \"g" + std::to_string(i) + "\", \"prompt\": \"p\", \"response\": \"r\", \"label\": " +
            std::to_string(i % 2) + "}\n";
  testutil::write_text(dir / "judged.jsonl", text);
  REQUIRE(cli({"convert", "--dataset", "generic", "--in", (dir / "judged.jsonl").string(), "--out",
               (dir / "c.jsonl").string()})
              .code == 0);
  CHECK(read_corpus(dir / "c.jsonl").size() == 20);
  REQUIRE(cli({"split", "--corpus", (dir / "c.jsonl").string(), "--fraction", "0.5", "--out", (dir / "s").string()})
              .code == 0);
  CHECK(read_corpus(dir / "s" / "c.train.jsonl").size() == 10);
  CHECK(read_corpus(dir / "s" / "c.test.jsonl").size() == 10);

  write_spec(dir / "spec.json", 0, 4.0);
  REQUIRE(cli({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "d").string()}).code == 0);
  const std::string corpus = (dir / "d" / "corpus.jsonl").string(), dump = (dir / "d" / "dump").string();
  const Run tt = cli({"audit", "--target", "task-type", "--dump", dump, "--corpus", corpus});
  REQUIRE(tt.code == 0);
  CHECK(json::parse(tt.out).at("auc").get<double>() > 0.9);

  REQUIRE(cli({"eval", "--protocol", "indist", "--protocol", "audit", "--detector", "logistic", "--train-corpus",
               corpus, "--train-dump", dump, "--out", (dir / "r").string()})
              .code == 0);
  const Run g = cli({"audit", "--target", "guidelines", "--reports", (dir / "r").string(), "--out",
                     (dir / "guidelines.json").string()});
  REQUIRE(g.code == 0);
  const json summary = json::parse(g.out);
  CHECK(summary.at("task_probe").at("verdict") == "SPURIOUS_RISK_HIGH");
  CHECK(read_reports(dir / "r").size() == 2);
}

TEST_CASE("eval sweeps every requested hook for residual probes") {
  testutil::TempDir dir("cli-hooks");
  SyntheticSpec spec = SyntheticSpec::ragtruth_like(40, 1.5, 1.0, 5);
  spec.d = 10;
  spec.hooks = {Hook::RESID_PRE, Hook::RESID_MID};
  testutil::write_text(dir / "s.json", to_json(spec).dump());
  REQUIRE(cli({"synth", "--spec", (dir / "s.json").string(), "--out", (dir / "d").string()}).code == 0);
  REQUIRE(cli({"eval", "--detector", "logistic", "--detector", "naive", "--hook", "resid_pre", "--hook", "resid_mid",
               "--train-corpus", (dir / "d" / "corpus.jsonl").string(), "--train-dump", (dir / "d" / "dump").string(),
               "--seeds", "0", "--out", (dir / "r").string()})
              .code == 0);
  CHECK(std::filesystem::exists(dir / "r" / "indist__logistic_L0_resid_pre.json"));
  CHECK(std::filesystem::exists(dir / "r" / "indist__logistic_L0_resid_mid.json"));
  CHECK(read_reports(dir / "r").size() == 3);
  CHECK(cli({"train", "--detector", "logistic", "--hook", "resid_pre", "--hook", "resid_mid", "--corpus", "x", "--out",
             (dir / "m.json").string()})
            .code == 1);
}
