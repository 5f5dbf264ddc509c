#include "halprobe/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "halprobe/error.hpp"
#include "halprobe/rng.hpp"
#include "io_util.hpp"

namespace halprobe {

using nlohmann::json;

std::string_view to_string(TaskType task) {
  switch (task) {
    case TaskType::QA: return "QA";
    case TaskType::D2T: return "D2T";
    case TaskType::SUMMARY: return "SUMMARY";
    case TaskType::OTHER: return "OTHER";
  }
  return "OTHER";
}

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::TRAIN: return "TRAIN";
    case SplitTag::TEST: return "TEST";
    case SplitTag::FULL: return "FULL";
  }
  return "FULL";
}

std::string_view to_string(Stratify stratify) {
  switch (stratify) {
    case Stratify::NONE: return "NONE";
    case Stratify::TASK: return "TASK";
    case Stratify::TASK_AND_LABEL: return "TASK_AND_LABEL";
  }
  return "NONE";
}

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

}  // namespace

TaskType parse_task(std::string_view text) {
  const std::string t = upper(text);
  if (t == "QA") return TaskType::QA;
  if (t == "D2T" || t == "DATA2TXT" || t == "DATA2TEXT") return TaskType::D2T;
  if (t == "SUMMARY" || t == "SUMM" || t == "SUMMARIZATION") return TaskType::SUMMARY;
  if (t == "OTHER") return TaskType::OTHER;
  throw Error(ErrorCode::UNKNOWN_TASK, "unknown task '" + std::string(text) +
                                           "'; accepted: QA, D2T (Data2txt), SUMMARY (Summary), OTHER");
}

SplitTag parse_split_tag(std::string_view text) {
  const std::string t = upper(text);
  if (t == "TRAIN") return SplitTag::TRAIN;
  if (t == "TEST") return SplitTag::TEST;
  if (t == "FULL") return SplitTag::FULL;
  throw Error(ErrorCode::INVALID_ARGUMENT, "unknown split tag '" + std::string(text) + "'; accepted: TRAIN, TEST, FULL");
}

Stratify parse_stratify(std::string_view text) {
  const std::string t = upper(text);
  if (t == "NONE") return Stratify::NONE;
  if (t == "TASK") return Stratify::TASK;
  if (t == "TASK_AND_LABEL" || t == "TASK-AND-LABEL") return Stratify::TASK_AND_LABEL;
  throw Error(ErrorCode::INVALID_ARGUMENT,
              "unknown stratification '" + std::string(text) + "'; accepted: none, task, task_and_label");
}

std::map<TaskType, std::size_t> Corpus::task_counts() const {
  std::map<TaskType, std::size_t> counts;
  for (const auto& s : samples) ++counts[s.task];
  return counts;
}

std::vector<TaskType> Corpus::tasks_present() const {
  std::vector<TaskType> out;
  for (const auto& [task, n] : task_counts()) out.push_back(task);
  return out;
}

double Corpus::hallucination_rate(TaskType task) const {
  std::size_t n = 0, pos = 0;
  for (const auto& s : samples) {
    if (s.task != task) continue;
    ++n;
    pos += static_cast<std::size_t>(s.label);
  }
  if (n == 0) throw Error(ErrorCode::MISSING_TASK, "corpus '" + name + "' has no " + std::string(to_string(task)) + " samples");
  return static_cast<double>(pos) / static_cast<double>(n);
}

double Corpus::hallucination_rate() const {
  if (samples.empty()) throw Error(ErrorCode::MISSING_TASK, "corpus '" + name + "' is empty");
  std::size_t pos = 0;
  for (const auto& s : samples) pos += static_cast<std::size_t>(s.label);
  return static_cast<double>(pos) / static_cast<double>(samples.size());
}

std::optional<std::size_t> Corpus::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].id == id) return i;
  return std::nullopt;
}

void Corpus::check() const {
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (!seen.insert(s.id).second) throw Error(ErrorCode::INVALID_ARGUMENT, "duplicate sample id '" + s.id + "'");
    if (s.label != 0 && s.label != 1)
      throw Error(ErrorCode::INVALID_ARGUMENT, "sample '" + s.id + "' has label outside {0,1}");
    if (!s.spans) continue;
    const auto len = static_cast<std::int64_t>(s.response.size());
    std::int64_t prev_end = -1;
    for (const auto& sp : *s.spans) {
      if (sp.start < 0 || sp.end > len || sp.start >= sp.end || sp.start <= prev_end)
        throw Error(ErrorCode::INVALID_ARGUMENT, "sample '" + s.id + "' has out-of-bounds or overlapping spans");
      prev_end = sp.end;
    }
  }
}

std::vector<Span> normalize_spans(std::vector<Span> spans, std::int64_t response_length) {
  for (auto& sp : spans) {
    sp.start = std::clamp<std::int64_t>(sp.start, 0, response_length);
    sp.end = std::clamp<std::int64_t>(sp.end, 0, response_length);
  }
  std::erase_if(spans, [](const Span& sp) { return sp.end <= sp.start; });
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
    return a.start != b.start ? a.start < b.start : a.end < b.end;
  });
  std::vector<Span> merged;
  for (const auto& sp : spans) {
    if (!merged.empty() && sp.start <= merged.back().end)
      merged.back().end = std::max(merged.back().end, sp.end);
    else
      merged.push_back(sp);
  }
  return merged;
}

// ---------------------------------------------------------------------------
// JSONL corpus files

namespace {

json sample_to_json(const Sample& s) {
  json j;
  j["id"] = s.id;
  j["task"] = to_string(s.task);
  j["source_dataset"] = s.source_dataset;
  j["prompt"] = s.prompt;
  j["response"] = s.response;
  j["label"] = s.label;
  if (s.spans) {
    json spans = json::array();
    for (const auto& sp : *s.spans) spans.push_back({sp.start, sp.end});
    j["spans"] = std::move(spans);
  }
  j["generator_model"] = s.generator_model;
  return j;
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.task = parse_task(j.at("task").get<std::string>());
  s.source_dataset = j.value("source_dataset", "");
  s.prompt = j.value("prompt", "");
  s.response = j.value("response", "");
  s.label = j.at("label").get<int>();
  if (auto it = j.find("spans"); it != j.end() && !it->is_null()) {
    std::vector<Span> spans;
    for (const auto& sp : *it) spans.push_back({sp.at(0).get<std::int64_t>(), sp.at(1).get<std::int64_t>()});
    s.spans = std::move(spans);
  }
  s.generator_model = j.value("generator_model", "");
  return s;
}

std::string id_string(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IO_ERROR, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::PARSE_ERROR, path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    if (!j.is_object())
      throw Error(ErrorCode::PARSE_ERROR, path.string() + ":" + std::to_string(line_no) + ": record is not an object");
    try {
      fn(j, line_no);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::PARSE_ERROR, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

Corpus read_corpus(const std::filesystem::path& path) {
  Corpus corpus;
  corpus.name = path.stem().string();
  if (corpus.name.ends_with(".train")) corpus.split_tag = SplitTag::TRAIN;
  else if (corpus.name.ends_with(".test")) corpus.split_tag = SplitTag::TEST;
  for_each_jsonl(path, [&](const json& j, std::size_t line_no) {
    try {
      corpus.samples.push_back(sample_from_json(j));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  corpus.check();
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::string out;
  for (const auto& s : corpus.samples) {
    out += sample_to_json(s).dump(-1, ' ', false, json::error_handler_t::replace);
    out += '\n';
  }
  detail::atomic_write(path, out);
}

// ---------------------------------------------------------------------------
// Converters

Corpus convert_ragtruth(const std::filesystem::path& response_file, const std::filesystem::path& source_prompt_file,
                        const RagtruthOptions& options) {
  struct Source {
    TaskType task;
    std::string prompt;
  };
  std::unordered_map<std::string, Source> sources;
  for_each_jsonl(source_prompt_file, [&](const json& j, std::size_t line_no) {
    if (!j.contains("source_id") || !j.contains("task_type"))
      throw Error(ErrorCode::PARSE_ERROR, source_prompt_file.string() + ":" + std::to_string(line_no) +
                                              ": record lacks source_id or task_type");
    TaskType task;
    try {
      task = parse_task(j.at("task_type").get<std::string>());
    } catch (const Error& e) {
      throw Error(e.code(), source_prompt_file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    sources[id_string(j.at("source_id"))] = Source{task, j.value("prompt", "")};
  });

  const std::string split_filter = lower(options.split_filter);
  if (split_filter != "all" && split_filter != "train" && split_filter != "test")
    throw Error(ErrorCode::INVALID_ARGUMENT, "split filter must be all, train or test");

  Corpus corpus;
  corpus.name = options.model_filter.empty() ? "ragtruth" : "ragtruth-" + options.model_filter;
  corpus.split_tag = split_filter == "train" ? SplitTag::TRAIN : split_filter == "test" ? SplitTag::TEST : SplitTag::FULL;
  const std::string model_filter = lower(options.model_filter);

  for_each_jsonl(response_file, [&](const json& j, std::size_t line_no) {
    const auto where = response_file.string() + ":" + std::to_string(line_no);
    for (const char* key : {"id", "source_id", "model", "response", "labels"})
      if (!j.contains(key)) throw Error(ErrorCode::PARSE_ERROR, where + ": record lacks '" + key + "'");
    const std::string model = j.at("model").get<std::string>();
    if (!model_filter.empty() && lower(model) != model_filter) return;
    if (split_filter != "all" && lower(j.value("split", "")) != split_filter) return;

    const auto src = sources.find(id_string(j.at("source_id")));
    if (src == sources.end())
      throw Error(ErrorCode::PARSE_ERROR, where + ": source_id " + id_string(j.at("source_id")) + " not in " +
                                              source_prompt_file.string());
    Sample s;
    s.id = id_string(j.at("id"));
    s.task = src->second.task;
    s.source_dataset = "ragtruth";
    s.prompt = src->second.prompt;
    s.response = j.at("response").get<std::string>();
    s.generator_model = model;
    std::vector<Span> spans;
    for (const auto& lab : j.at("labels")) spans.push_back({lab.at("start").get<std::int64_t>(), lab.at("end").get<std::int64_t>()});
    s.spans = normalize_spans(std::move(spans), static_cast<std::int64_t>(s.response.size()));
    s.label = s.spans->empty() ? 0 : 1;
    corpus.samples.push_back(std::move(s));
  });
  corpus.check();
  return corpus;
}

namespace {

int parse_judged_label(const json& v, const std::string& id) {
  if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
  if (v.is_number_integer()) {
    const auto x = v.get<long long>();
    if (x == 0 || x == 1) return static_cast<int>(x);
  }
  if (v.is_string()) {
    const std::string s = lower(v.get<std::string>());
    if (s == "hallucinated" || s == "hallucination" || s == "unfaithful" || s == "incorrect" || s == "1") return 1;
    if (s == "faithful" || s == "correct" || s == "not_hallucinated" || s == "0") return 0;
  }
  throw Error(ErrorCode::PARSE_ERROR, "record '" + id + "' has unrecognized label " + v.dump() +
                                          "; expected hallucinated/faithful, 0/1 or a boolean");
}

}  // namespace

Corpus convert_generic_qa(const std::filesystem::path& records) {
  Corpus corpus;
  corpus.name = records.stem().string();
  for_each_jsonl(records, [&](const json& j, std::size_t line_no) {
    Sample s;
    s.id = j.contains("id") ? id_string(j.at("id")) : corpus.name + "-" + std::to_string(line_no);
    if (!j.contains("label"))
      throw Error(ErrorCode::MISSING_FIELD, "record '" + s.id + "' (" + records.string() + ":" + std::to_string(line_no) +
                                                ") has no label field");
    s.label = parse_judged_label(j.at("label"), s.id);
    s.task = j.contains("task") ? parse_task(j.at("task").get<std::string>()) : TaskType::QA;
    if (s.task != TaskType::QA && s.task != TaskType::OTHER)
      throw Error(ErrorCode::UNKNOWN_TASK, "record '" + s.id + "': generic QA records must be QA or OTHER");
    s.source_dataset = j.value("source_dataset", corpus.name);
    if (j.contains("prompt")) {
      s.prompt = j.at("prompt").get<std::string>();
    } else if (j.contains("question")) {
      s.prompt = j.value("context", "");
      if (!s.prompt.empty()) s.prompt += "\n\n";
      s.prompt += j.at("question").get<std::string>();
    } else {
      throw Error(ErrorCode::MISSING_FIELD, "record '" + s.id + "' has no prompt");
    }
    if (j.contains("response")) s.response = j.at("response").get<std::string>();
    else if (j.contains("answer")) s.response = j.at("answer").get<std::string>();
    else throw Error(ErrorCode::MISSING_FIELD, "record '" + s.id + "' has no response");
    s.generator_model = j.value("generator_model", j.value("model", ""));
    corpus.samples.push_back(std::move(s));
  });
  corpus.check();
  return corpus;
}

// ---------------------------------------------------------------------------
// Splitting

std::pair<Corpus, Corpus> split(const Corpus& corpus, double fraction, Stratify stratify_by, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw Error(ErrorCode::INVALID_ARGUMENT, "split fraction must lie in (0, 1)");

  auto stratum_key = [&](const Sample& s) -> std::string {
    switch (stratify_by) {
      case Stratify::NONE: return "ALL";
      case Stratify::TASK: return std::string(to_string(s.task));
      case Stratify::TASK_AND_LABEL: return std::string(to_string(s.task)) + "/label=" + std::to_string(s.label);
    }
    return "ALL";
  };

  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) strata[stratum_key(corpus.samples[i])].push_back(i);

  std::vector<char> in_train(corpus.samples.size(), 0);
  for (auto& [key, members] : strata) {
    if (members.size() < 2)
      throw Error(ErrorCode::SMALL_STRATUM, "stratum '" + key + "' has " + std::to_string(members.size()) +
                                                " sample(s); at least 2 are required");
    // Membership must not depend on input order: sort by id before the seeded shuffle.
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return corpus.samples[a].id < corpus.samples[b].id; });
    Rng rng(derive_seed(seed, key));
    rng.shuffle(std::span<std::size_t>(members));
    auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    for (std::size_t i = 0; i < n_train; ++i) in_train[members[i]] = 1;
  }

  std::pair<Corpus, Corpus> out;
  out.first.name = corpus.name + ".train";
  out.first.split_tag = SplitTag::TRAIN;
  out.second.name = corpus.name + ".test";
  out.second.split_tag = SplitTag::TEST;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i)
    (in_train[i] ? out.first : out.second).samples.push_back(corpus.samples[i]);
  return out;
}

}  // namespace halprobe
