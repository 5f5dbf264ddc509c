#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace halprobe {

enum class TaskType { QA, D2T, SUMMARY, OTHER };
enum class SplitTag { TRAIN, TEST, FULL };
enum class Stratify { NONE, TASK, TASK_AND_LABEL };

std::string_view to_string(TaskType task);
std::string_view to_string(SplitTag tag);
std::string_view to_string(Stratify stratify);
TaskType parse_task(std::string_view text);
SplitTag parse_split_tag(std::string_view text);
Stratify parse_stratify(std::string_view text);

inline constexpr TaskType kAllTasks[] = {TaskType::QA, TaskType::D2T, TaskType::SUMMARY, TaskType::OTHER};

/// Character offsets into the response, half-open [start, end).
struct Span {
  std::int64_t start = 0;
  std::int64_t end = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

struct Sample {
  std::string id;
  TaskType task = TaskType::OTHER;
  std::string source_dataset;
  std::string prompt;
  std::string response;
  int label = 0;  // 1 = hallucinated
  std::optional<std::vector<Span>> spans;
  std::string generator_model;

  // Empty responses have no last-token activation; probes skip them.
  bool empty_response() const { return response.empty(); }
};

struct Corpus {
  std::string name;
  SplitTag split_tag = SplitTag::FULL;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::map<TaskType, std::size_t> task_counts() const;
  std::vector<TaskType> tasks_present() const;

  /// mean(label | task); throws MISSING_TASK when the task has no samples.
  double hallucination_rate(TaskType task) const;
  double hallucination_rate() const;

  std::optional<std::size_t> index_of(std::string_view id) const;

  /// Throws INVALID_ARGUMENT on duplicate ids, labels outside {0,1} or bad spans.
  void check() const;
};

/// Sort, clip to [0, response_length] and merge overlapping or abutting spans.
std::vector<Span> normalize_spans(std::vector<Span> spans, std::int64_t response_length);

// Normalized corpus format: UTF-8 JSON lines, one Sample per line.
Corpus read_corpus(const std::filesystem::path& path);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

struct RagtruthOptions {
  std::string model_filter;         // empty keeps every model
  std::string split_filter = "all"; // all | train | test
};

/// Converts the dataset's native response.jsonl + source_info.jsonl pair.
Corpus convert_ragtruth(const std::filesystem::path& response_file, const std::filesystem::path& source_prompt_file,
                        const RagtruthOptions& options);

/// Judged QA outputs: records with prompt, response and a binary label.
Corpus convert_generic_qa(const std::filesystem::path& records);

/// Returns (train, test); `fraction` is the train share of every stratum.
std::pair<Corpus, Corpus> split(const Corpus& corpus, double fraction, Stratify stratify_by, std::uint64_t seed);

}  // namespace halprobe
