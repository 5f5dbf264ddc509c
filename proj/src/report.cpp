#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "halprobe/error.hpp"
#include "halprobe/evalengine.hpp"

namespace halprobe {

TableFormat parse_table_format(std::string_view text) {
  if (text == "text") return TableFormat::TEXT;
  if (text == "csv") return TableFormat::CSV;
  throw Error(ErrorCode::INVALID_ARGUMENT, "unknown table format '" + std::string(text) + "'; accepted: text, csv");
}

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string text_stat(const Stat& s) { return s.count > 1 ? fixed4(s.mean) + "±" + fixed4(s.std) : fixed4(s.mean); }
std::string text_stat(const std::optional<Stat>& s) { return s ? text_stat(*s) : "n/a"; }

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

// Text cells are padded per column; CSV cells are emitted as-is.
class Table {
 public:
  explicit Table(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string render(TableFormat format) const {
    std::ostringstream out;
    if (format == TableFormat::CSV) {
      for (const auto& row : rows_) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << csv_escape(row[c]);
        out << "\n";
      }
      return out.str();
    }
    std::vector<std::size_t> width(rows_.front().size(), 0);
    for (const auto& row : rows_)
      for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], display_width(row[c]));
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      for (std::size_t c = 0; c < rows_[r].size(); ++c) {
        out << rows_[r][c];
        if (c + 1 < rows_[r].size()) out << std::string(width[c] - display_width(rows_[r][c]) + 2, ' ');
      }
      out << "\n";
      if (r == 0) {
        std::size_t total = 0;
        for (auto w : width) total += w + 2;
        out << std::string(total - 2, '-') << "\n";
      }
    }
    return out.str();
  }

 private:
  // Counts UTF-8 code points so the ± sign pads like one column.
  static std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s)
      if ((c & 0xC0) != 0x80) ++n;
    return n;
  }

  std::vector<std::vector<std::string>> rows_;
};

void push_stat(std::vector<std::string>& row, const std::optional<Stat>& s, TableFormat format) {
  if (format == TableFormat::TEXT) {
    row.push_back(text_stat(s));
  } else {
    row.push_back(s ? fixed4(s->mean) : "");
    row.push_back(s ? fixed4(s->std) : "");
  }
}

void push_header(std::vector<std::string>& header, const std::string& name, TableFormat format) {
  if (format == TableFormat::TEXT) {
    header.push_back(name);
  } else {
    header.push_back(name + "_mean");
    header.push_back(name + "_std");
  }
}

std::string filter_label(const std::optional<std::vector<TaskType>>& tasks) {
  if (!tasks) return "all";
  std::string out;
  for (auto t : *tasks) out += (out.empty() ? "" : "+") + std::string(to_string(t));
  return out;
}

}  // namespace

std::string render_per_task_table(const std::vector<EvalReport>& reports, TableFormat format) {
  std::vector<std::string> header{"Detector", "Protocol", "Train", "Eval", "Task"};
  for (const char* m : {"AUC", "PCC", "Precision", "Recall", "F1"}) push_header(header, m, format);
  Table table(header);
  auto add_rows = [&](const EvalReport& r, const std::string& detector, const CellStats& overall,
                      const std::map<TaskType, CellStats>& per_task) {
    auto row_for = [&](const std::string& task, const CellStats& c) {
      std::vector<std::string> row{detector, std::string(to_string(r.kind)), r.train_corpus, r.eval_corpus, task};
      push_stat(row, c.auc, format);
      push_stat(row, c.pcc, format);
      push_stat(row, c.precision, format);
      push_stat(row, c.recall, format);
      push_stat(row, c.f1, format);
      table.add(std::move(row));
    };
    for (const auto& [task, c] : per_task) row_for(std::string(to_string(task)), c);
    row_for("Overall", overall);
  };
  for (const auto& r : reports) {
    add_rows(r, r.detector_label, r.overall, r.per_task);
    add_rows(r, "naive (baseline)", r.naive_baseline, {});
  }
  return table.render(format);
}

std::string render_cross_task_table(const std::vector<EvalReport>& reports, TableFormat format) {
  // (detector, eval task) -> train task -> cell
  std::map<std::pair<std::string, std::string>, std::map<std::string, const CellStats*>> grid;
  std::vector<std::string> detectors;
  std::set<std::string> train_tasks;
  for (const auto& r : reports) {
    if (r.kind != ProtocolKind::CROSS_TASK) continue;
    const std::string train = filter_label(r.train_task_filter);
    const std::string eval = filter_label(r.eval_task_filter);
    if (std::find(detectors.begin(), detectors.end(), r.detector_label) == detectors.end()) detectors.push_back(r.detector_label);
    train_tasks.insert(train);
    grid[{r.detector_label, eval}][train] = &r.overall;
  }
  std::vector<std::string> header{"Method", "Eval task"};
  for (const auto& t : train_tasks)
    for (const char* m : {"AUC", "Precision", "Recall", "F1"}) push_header(header, "train " + t + " " + m, format);
  Table table(header);
  for (const auto& det : detectors) {
    for (const auto& [key, by_train] : grid) {
      if (key.first != det) continue;
      std::vector<std::string> row{det, key.second};
      for (const auto& t : train_tasks) {
        const auto it = by_train.find(t);
        const CellStats* c = it == by_train.end() ? nullptr : it->second;
        push_stat(row, c ? c->auc : std::nullopt, format);
        push_stat(row, c ? std::optional<Stat>(c->precision) : std::nullopt, format);
        push_stat(row, c ? std::optional<Stat>(c->recall) : std::nullopt, format);
        push_stat(row, c ? std::optional<Stat>(c->f1) : std::nullopt, format);
      }
      table.add(std::move(row));
    }
  }
  return table.render(format);
}

}  // namespace halprobe
