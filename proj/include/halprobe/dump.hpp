#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace halprobe {

/// Row-major float32 matrix; the in-memory image of a `.f32` panel file.
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Hook { RESID_PRE, RESID_MID };
enum class SaeView { LAST_TOKEN, MAX_ACT };

std::string_view to_string(Hook hook);        // resid_pre | resid_mid
std::string_view to_string(SaeView view);     // last_token | max_act
Hook parse_hook(std::string_view text);
SaeView parse_sae_view(std::string_view text);

inline constexpr int kDumpFormatVersion = 1;

struct DumpManifest {
  int format_version = kDumpFormatVersion;
  std::string model_id;
  int d_model = 0;
  std::vector<int> layers;
  std::vector<Hook> hooks;
  std::map<int, int> sae_dims;  // layer -> SAE dictionary width
  std::string dtype = "f32le";
  std::vector<std::pair<std::string, std::size_t>> sample_index;  // (sample_id, row)
  bool per_token_available = false;
  std::optional<int> n_heads;   // total heads; width of the ecs panel
  std::optional<int> n_layers;  // width of the pks panel
  std::vector<std::size_t> per_token_lengths;  // tokens per sample, in row order

  std::size_t rows() const { return sample_index.size(); }
};

struct SaePanels {
  MatrixF last_token;
  MatrixF max_act;
  const MatrixF& view(SaeView v) const { return v == SaeView::LAST_TOKEN ? last_token : max_act; }
};

/// Concatenated per-token rows; sample r owns rows [offsets[r], offsets[r+1]).
struct PerTokenPanels {
  MatrixF ecs;  // total_tokens x n_heads
  MatrixF pks;  // total_tokens x n_layers
  std::vector<std::size_t> offsets;
};

struct ActivationDump {
  DumpManifest manifest;
  std::map<std::pair<int, Hook>, MatrixF> residual;
  std::map<int, SaePanels> sae;
  std::optional<MatrixF> ecs;
  std::optional<MatrixF> pks;
  std::optional<PerTokenPanels> per_token;

  std::optional<std::size_t> row_of(std::string_view sample_id) const;
  const MatrixF& residual_panel(int layer, Hook hook) const;  // throws MISSING_FEATURES
  const MatrixF& sae_panel(int layer, SaeView view) const;    // throws MISSING_FEATURES
};

std::string residual_file_name(int layer, Hook hook);
std::string sae_file_name(int layer, SaeView view);

enum class ViolationCode {
  BAD_MANIFEST,
  UNSUPPORTED_DTYPE,
  INDEX_NOT_CONTIGUOUS,
  DUPLICATE_SAMPLE_ID,
  MISSING_FILE,
  TRUNCATED,
  ROW_COUNT,
  NON_FINITE,
  RANGE_PKS,
  RANGE_ECS,
  PER_TOKEN_LENGTH,
};

std::string_view to_string(ViolationCode code);

struct Violation {
  ViolationCode code;
  std::string file;
  std::string detail;
};

/// Fills the manifest's derived fields (row count, panel widths) from the panels.
void sync_manifest(ActivationDump& dump);

std::filesystem::path write_dump(const ActivationDump& dump, const std::filesystem::path& dir);
ActivationDump read_dump(const std::filesystem::path& manifest_path);  // throws INVALID_DUMP on any violation
std::vector<Violation> validate_dump(const std::filesystem::path& dir);

/// Checks in-memory invariants only (shapes, finiteness, panel ranges).
std::vector<Violation> validate_dump(const ActivationDump& dump);

}  // namespace halprobe
