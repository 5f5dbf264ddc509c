#include "halprobe/dump.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "halprobe/error.hpp"
#include "io_util.hpp"

namespace halprobe {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kLn2 = std::numbers::ln2;
// float32 storage of ln 2 rounds up by ~2e-9.
constexpr double kRangeSlack = 1e-6;

}  // namespace

std::string_view to_string(Hook hook) { return hook == Hook::RESID_PRE ? "resid_pre" : "resid_mid"; }
std::string_view to_string(SaeView view) { return view == SaeView::LAST_TOKEN ? "last_token" : "max_act"; }

Hook parse_hook(std::string_view text) {
  if (text == "resid_pre" || text == "RESID_PRE") return Hook::RESID_PRE;
  if (text == "resid_mid" || text == "RESID_MID") return Hook::RESID_MID;
  throw Error(ErrorCode::INVALID_ARGUMENT, "unknown hook '" + std::string(text) + "'; accepted: resid_pre, resid_mid");
}

SaeView parse_sae_view(std::string_view text) {
  if (text == "last" || text == "last_token" || text == "LAST_TOKEN") return SaeView::LAST_TOKEN;
  if (text == "max" || text == "max_act" || text == "MAX_ACT") return SaeView::MAX_ACT;
  throw Error(ErrorCode::INVALID_ARGUMENT, "unknown SAE view '" + std::string(text) + "'; accepted: last, max");
}

std::string_view to_string(ViolationCode code) {
  switch (code) {
    case ViolationCode::BAD_MANIFEST: return "BAD_MANIFEST";
    case ViolationCode::UNSUPPORTED_DTYPE: return "UNSUPPORTED_DTYPE";
    case ViolationCode::INDEX_NOT_CONTIGUOUS: return "INDEX_NOT_CONTIGUOUS";
    case ViolationCode::DUPLICATE_SAMPLE_ID: return "DUPLICATE_SAMPLE_ID";
    case ViolationCode::MISSING_FILE: return "MISSING_FILE";
    case ViolationCode::TRUNCATED: return "TRUNCATED";
    case ViolationCode::ROW_COUNT: return "ROW_COUNT";
    case ViolationCode::NON_FINITE: return "NON_FINITE";
    case ViolationCode::RANGE_PKS: return "RANGE_PKS";
    case ViolationCode::RANGE_ECS: return "RANGE_ECS";
    case ViolationCode::PER_TOKEN_LENGTH: return "PER_TOKEN_LENGTH";
  }
  return "UNKNOWN";
}

std::string residual_file_name(int layer, Hook hook) {
  return "L" + std::to_string(layer) + "_" + std::string(to_string(hook)) + ".f32";
}

std::string sae_file_name(int layer, SaeView view) {
  return "sae_L" + std::to_string(layer) + "_" + std::string(to_string(view)) + ".f32";
}

std::optional<std::size_t> ActivationDump::row_of(std::string_view sample_id) const {
  for (const auto& [id, row] : manifest.sample_index)
    if (id == sample_id) return row;
  return std::nullopt;
}

const MatrixF& ActivationDump::residual_panel(int layer, Hook hook) const {
  auto it = residual.find({layer, hook});
  if (it == residual.end())
    throw Error(ErrorCode::MISSING_FEATURES,
                "dump has no residual panel for layer " + std::to_string(layer) + " hook " + std::string(to_string(hook)));
  return it->second;
}

const MatrixF& ActivationDump::sae_panel(int layer, SaeView view) const {
  auto it = sae.find(layer);
  if (it == sae.end())
    throw Error(ErrorCode::MISSING_FEATURES,
                "dump has no SAE panel for layer " + std::to_string(layer) + " view " + std::string(to_string(view)));
  return it->second.view(view);
}

void sync_manifest(ActivationDump& dump) {
  auto& m = dump.manifest;
  std::set<int> layers;
  std::set<Hook> hooks;
  for (const auto& [key, mat] : dump.residual) {
    layers.insert(key.first);
    hooks.insert(key.second);
    m.d_model = static_cast<int>(mat.cols());
  }
  m.layers.assign(layers.begin(), layers.end());
  m.hooks.assign(hooks.begin(), hooks.end());
  m.sae_dims.clear();
  for (const auto& [layer, panels] : dump.sae) m.sae_dims[layer] = static_cast<int>(panels.last_token.cols());
  m.n_heads = dump.ecs ? std::optional<int>(static_cast<int>(dump.ecs->cols())) : std::nullopt;
  m.n_layers = dump.pks ? std::optional<int>(static_cast<int>(dump.pks->cols())) : std::nullopt;
  m.per_token_available = dump.per_token.has_value();
  m.per_token_lengths.clear();
  if (dump.per_token) {
    const auto& off = dump.per_token->offsets;
    for (std::size_t r = 0; r + 1 < off.size(); ++r) m.per_token_lengths.push_back(off[r + 1] - off[r]);
  }
}

// ---------------------------------------------------------------------------
// Manifest JSON

namespace {

json manifest_to_json(const DumpManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["model_id"] = m.model_id;
  j["d_model"] = m.d_model;
  j["layers"] = m.layers;
  json hooks = json::array();
  for (auto h : m.hooks) hooks.push_back(to_string(h));
  j["hooks"] = hooks;
  json sae = json::object();
  for (const auto& [layer, dim] : m.sae_dims) sae[std::to_string(layer)] = dim;
  j["sae_dims"] = sae;
  j["dtype"] = m.dtype;
  json index = json::array();
  for (const auto& [id, row] : m.sample_index) index.push_back(json::array({id, row}));
  j["sample_index"] = index;
  j["per_token_available"] = m.per_token_available;
  j["n_heads"] = m.n_heads ? json(*m.n_heads) : json(nullptr);
  j["n_layers"] = m.n_layers ? json(*m.n_layers) : json(nullptr);
  j["per_token_lengths"] = m.per_token_lengths;
  return j;
}

DumpManifest manifest_from_json(const json& j) {
  DumpManifest m;
  m.format_version = j.at("format_version").get<int>();
  m.model_id = j.value("model_id", "");
  m.d_model = j.at("d_model").get<int>();
  m.layers = j.at("layers").get<std::vector<int>>();
  for (const auto& h : j.at("hooks")) m.hooks.push_back(parse_hook(h.get<std::string>()));
  if (auto it = j.find("sae_dims"); it != j.end() && !it->is_null())
    for (const auto& [k, v] : it->items()) m.sae_dims[std::stoi(k)] = v.get<int>();
  m.dtype = j.at("dtype").get<std::string>();
  for (const auto& e : j.at("sample_index")) m.sample_index.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::size_t>());
  m.per_token_available = j.value("per_token_available", false);
  if (auto it = j.find("n_heads"); it != j.end() && !it->is_null()) m.n_heads = it->get<int>();
  if (auto it = j.find("n_layers"); it != j.end() && !it->is_null()) m.n_layers = it->get<int>();
  if (auto it = j.find("per_token_lengths"); it != j.end() && !it->is_null())
    m.per_token_lengths = it->get<std::vector<std::size_t>>();
  return m;
}

// ---------------------------------------------------------------------------
// Raw panel IO

void write_panel(const fs::path& path, const MatrixF& mat) {
  std::string bytes(static_cast<std::size_t>(mat.size()) * sizeof(float), '\0');
  std::memcpy(bytes.data(), mat.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += 4) std::reverse(bytes.begin() + i, bytes.begin() + i + 4);
  }
  detail::atomic_write(path, bytes);
}

enum class RangeRule { NONE, PKS, ECS };

struct PanelSpec {
  std::string file;
  std::size_t rows;
  std::size_t cols;
  RangeRule range = RangeRule::NONE;
};

std::optional<MatrixF> load_panel(const fs::path& dir, const PanelSpec& spec, std::vector<Violation>& out) {
  const fs::path path = dir / spec.file;
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) {
    out.push_back({ViolationCode::MISSING_FILE, spec.file, "referenced panel file does not exist"});
    return std::nullopt;
  }
  const auto bytes = fs::file_size(path, ec);
  const std::size_t row_bytes = spec.cols * sizeof(float);
  if (row_bytes == 0 || bytes % row_bytes != 0) {
    out.push_back({ViolationCode::TRUNCATED, spec.file,
                   std::to_string(bytes) + " bytes is not a whole number of " + std::to_string(spec.cols) + "-wide rows"});
    return std::nullopt;
  }
  const std::size_t rows = bytes / row_bytes;
  if (rows != spec.rows) {
    out.push_back({ViolationCode::ROW_COUNT, spec.file,
                   "file holds " + std::to_string(rows) + " rows, manifest declares " + std::to_string(spec.rows)});
    return std::nullopt;
  }
  MatrixF mat(static_cast<Eigen::Index>(spec.rows), static_cast<Eigen::Index>(spec.cols));
  {
    std::ifstream in(path, std::ios::binary);
    in.read(reinterpret_cast<char*>(mat.data()), static_cast<std::streamsize>(bytes));
    if (!in) {
      out.push_back({ViolationCode::TRUNCATED, spec.file, "short read"});
      return std::nullopt;
    }
  }
  if constexpr (std::endian::native == std::endian::big) {
    auto* raw = reinterpret_cast<unsigned char*>(mat.data());
    for (std::size_t i = 0; i < bytes; i += 4) std::reverse(raw + i, raw + i + 4);
  }
  bool ok = true;
  for (Eigen::Index i = 0; i < mat.size() && ok; ++i) {
    const double v = mat.data()[i];
    if (!std::isfinite(v)) {
      out.push_back({ViolationCode::NON_FINITE, spec.file, "non-finite value at flat index " + std::to_string(i)});
      ok = false;
    } else if (spec.range == RangeRule::PKS && (v < -kRangeSlack || v > kLn2 + kRangeSlack)) {
      out.push_back({ViolationCode::RANGE_PKS, spec.file, "pks value " + std::to_string(v) + " outside [0, ln 2]"});
      ok = false;
    } else if (spec.range == RangeRule::ECS && (v < -kRangeSlack || v > 1.0 + kRangeSlack)) {
      out.push_back({ViolationCode::RANGE_ECS, spec.file, "ecs value " + std::to_string(v) + " outside [0, 1]"});
      ok = false;
    }
  }
  if (!ok) return std::nullopt;
  return mat;
}

void check_index(const DumpManifest& m, std::vector<Violation>& out) {
  const std::size_t n = m.sample_index.size();
  std::vector<char> seen_row(n, 0);
  std::set<std::string> seen_id;
  for (const auto& [id, row] : m.sample_index) {
    if (!seen_id.insert(id).second) out.push_back({ViolationCode::DUPLICATE_SAMPLE_ID, "manifest.json", "sample id '" + id + "' repeats"});
    if (row >= n || seen_row[row]) {
      out.push_back({ViolationCode::INDEX_NOT_CONTIGUOUS, "manifest.json",
                     "row indices must cover 0.." + std::to_string(n == 0 ? 0 : n - 1) + " exactly once"});
      return;
    }
    seen_row[row] = 1;
  }
}

// Loads every panel the manifest references, appending violations as found.
ActivationDump load_dump(const fs::path& dir, std::vector<Violation>& out) {
  ActivationDump dump;
  const fs::path manifest_path = dir / "manifest.json";
  try {
    dump.manifest = manifest_from_json(json::parse(detail::read_file(manifest_path)));
  } catch (const std::exception& e) {
    out.push_back({ViolationCode::BAD_MANIFEST, "manifest.json", e.what()});
    return dump;
  }
  const auto& m = dump.manifest;
  if (m.dtype != "f32le") {
    out.push_back({ViolationCode::UNSUPPORTED_DTYPE, "manifest.json", "dtype must be f32le, got " + m.dtype});
    return dump;
  }
  if (m.format_version != kDumpFormatVersion)
    out.push_back({ViolationCode::BAD_MANIFEST, "manifest.json", "unsupported format_version " + std::to_string(m.format_version)});
  check_index(m, out);
  const std::size_t n = m.rows();
  const auto d = static_cast<std::size_t>(std::max(m.d_model, 0));

  for (int layer : m.layers)
    for (Hook hook : m.hooks)
      if (auto mat = load_panel(dir, {residual_file_name(layer, hook), n, d}, out))
        dump.residual.emplace(std::make_pair(layer, hook), std::move(*mat));

  for (const auto& [layer, width] : m.sae_dims) {
    auto last = load_panel(dir, {sae_file_name(layer, SaeView::LAST_TOKEN), n, static_cast<std::size_t>(width)}, out);
    auto max = load_panel(dir, {sae_file_name(layer, SaeView::MAX_ACT), n, static_cast<std::size_t>(width)}, out);
    if (last && max) dump.sae.emplace(layer, SaePanels{std::move(*last), std::move(*max)});
  }
  if (m.n_heads) dump.ecs = load_panel(dir, {"ecs.f32", n, static_cast<std::size_t>(*m.n_heads), RangeRule::ECS}, out);
  if (m.n_layers) dump.pks = load_panel(dir, {"pks.f32", n, static_cast<std::size_t>(*m.n_layers), RangeRule::PKS}, out);

  if (m.per_token_available) {
    if (m.per_token_lengths.size() != n) {
      out.push_back({ViolationCode::PER_TOKEN_LENGTH, "manifest.json",
                     "per_token_lengths has " + std::to_string(m.per_token_lengths.size()) + " entries for " +
                         std::to_string(n) + " samples"});
    } else if (!m.n_heads || !m.n_layers) {
      out.push_back({ViolationCode::BAD_MANIFEST, "manifest.json", "per-token panels need n_heads and n_layers"});
    } else {
      PerTokenPanels pt;
      pt.offsets.assign(1, 0);
      for (auto len : m.per_token_lengths) pt.offsets.push_back(pt.offsets.back() + len);
      const std::size_t total = pt.offsets.back();
      auto ecs = load_panel(dir, {"per_token_ecs.f32", total, static_cast<std::size_t>(*m.n_heads), RangeRule::ECS}, out);
      auto pks = load_panel(dir, {"per_token_pks.f32", total, static_cast<std::size_t>(*m.n_layers), RangeRule::PKS}, out);
      if (ecs && pks) {
        pt.ecs = std::move(*ecs);
        pt.pks = std::move(*pks);
        dump.per_token = std::move(pt);
      }
    }
  }

  return dump;
}

void check_matrix(const MatrixF& mat, const std::string& name, std::size_t rows, std::optional<std::size_t> cols,
                  RangeRule range, std::vector<Violation>& out) {
  if (static_cast<std::size_t>(mat.rows()) != rows) {
    out.push_back({ViolationCode::ROW_COUNT, name,
                   "panel has " + std::to_string(mat.rows()) + " rows, expected " + std::to_string(rows)});
    return;
  }
  if (cols && static_cast<std::size_t>(mat.cols()) != *cols) {
    out.push_back({ViolationCode::TRUNCATED, name,
                   "panel has width " + std::to_string(mat.cols()) + ", expected " + std::to_string(*cols)});
    return;
  }
  for (Eigen::Index i = 0; i < mat.size(); ++i) {
    const double v = mat.data()[i];
    if (!std::isfinite(v)) {
      out.push_back({ViolationCode::NON_FINITE, name, "non-finite value"});
      return;
    }
    if (range == RangeRule::PKS && (v < -kRangeSlack || v > kLn2 + kRangeSlack)) {
      out.push_back({ViolationCode::RANGE_PKS, name, "pks outside [0, ln 2]"});
      return;
    }
    if (range == RangeRule::ECS && (v < -kRangeSlack || v > 1.0 + kRangeSlack)) {
      out.push_back({ViolationCode::RANGE_ECS, name, "ecs outside [0, 1]"});
      return;
    }
  }
}

}  // namespace

std::vector<Violation> validate_dump(const ActivationDump& dump) {
  std::vector<Violation> out;
  const auto& m = dump.manifest;
  check_index(m, out);
  const std::size_t n = m.rows();
  for (const auto& [key, mat] : dump.residual)
    check_matrix(mat, residual_file_name(key.first, key.second), n, static_cast<std::size_t>(m.d_model), RangeRule::NONE, out);
  for (const auto& [layer, panels] : dump.sae) {
    std::optional<std::size_t> width;
    if (auto it = m.sae_dims.find(layer); it != m.sae_dims.end()) width = static_cast<std::size_t>(it->second);
    check_matrix(panels.last_token, sae_file_name(layer, SaeView::LAST_TOKEN), n, width, RangeRule::NONE, out);
    check_matrix(panels.max_act, sae_file_name(layer, SaeView::MAX_ACT), n, width, RangeRule::NONE, out);
  }
  if (dump.ecs) check_matrix(*dump.ecs, "ecs.f32", n, std::nullopt, RangeRule::ECS, out);
  if (dump.pks) check_matrix(*dump.pks, "pks.f32", n, std::nullopt, RangeRule::PKS, out);
  if (dump.per_token) {
    const auto& pt = *dump.per_token;
    if (pt.offsets.size() != n + 1) {
      out.push_back({ViolationCode::PER_TOKEN_LENGTH, "per_token", "offsets must have one entry per sample plus one"});
    } else {
      check_matrix(pt.ecs, "per_token_ecs.f32", pt.offsets.back(), std::nullopt, RangeRule::ECS, out);
      check_matrix(pt.pks, "per_token_pks.f32", pt.offsets.back(), std::nullopt, RangeRule::PKS, out);
    }
  }
  return out;
}

fs::path write_dump(const ActivationDump& dump, const fs::path& dir) {
  if (auto problems = validate_dump(dump); !problems.empty())
    throw Error(ErrorCode::INVALID_DUMP, std::string(to_string(problems.front().code)) + " in " + problems.front().file + ": " +
                                             problems.front().detail);
  fs::create_directories(dir);
  for (const auto& [key, mat] : dump.residual) write_panel(dir / residual_file_name(key.first, key.second), mat);
  for (const auto& [layer, panels] : dump.sae) {
    write_panel(dir / sae_file_name(layer, SaeView::LAST_TOKEN), panels.last_token);
    write_panel(dir / sae_file_name(layer, SaeView::MAX_ACT), panels.max_act);
  }
  if (dump.ecs) write_panel(dir / "ecs.f32", *dump.ecs);
  if (dump.pks) write_panel(dir / "pks.f32", *dump.pks);
  if (dump.per_token) {
    write_panel(dir / "per_token_ecs.f32", dump.per_token->ecs);
    write_panel(dir / "per_token_pks.f32", dump.per_token->pks);
  }
  // Manifest last: its rename publishes the dump.
  const fs::path manifest_path = dir / "manifest.json";
  detail::atomic_write(manifest_path, manifest_to_json(dump.manifest).dump(2) + "\n");
  return manifest_path;
}

ActivationDump read_dump(const fs::path& manifest_path) {
  const fs::path dir = fs::is_directory(manifest_path) ? manifest_path : manifest_path.parent_path();
  std::vector<Violation> problems;
  ActivationDump dump = load_dump(dir, problems);
  if (!problems.empty()) {
    std::string msg = dir.string() + ": ";
    for (std::size_t i = 0; i < problems.size() && i < 5; ++i) {
      if (i) msg += "; ";
      msg += std::string(to_string(problems[i].code)) + " (" + problems[i].file + ") " + problems[i].detail;
    }
    throw Error(ErrorCode::INVALID_DUMP, msg);
  }
  return dump;
}

std::vector<Violation> validate_dump(const fs::path& dir) {
  std::vector<Violation> problems;
  load_dump(fs::is_directory(dir) ? dir : dir.parent_path(), problems);
  return problems;
}

}  // namespace halprobe
