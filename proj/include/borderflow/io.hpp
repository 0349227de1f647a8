#pragma once

// File formats shared by the command-line tools.
//
// Score-map binary, all fields little-endian:
//   8 x int32   magic, version, N, C, H, W, scoring id, round(T * 1000)
//   N*C*H*W     float32 values, row-major [N,C,H,W]
// The same layout stores corpus images (C = 3, 8-bit levels as floats),
// label maps and outlier masks (C = 1); those use scoring id -1 and T = 0.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "borderflow/array.hpp"
#include "borderflow/joint.hpp"

namespace borderflow {

inline constexpr std::int32_t kScoreMapMagic = 0x50534642;  // "BFSP"
inline constexpr std::int32_t kScoreMapVersion = 1;
inline constexpr std::int32_t kNoScoring = -1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScoreMapHeader {
  std::int32_t n = 0;
  std::int32_t channels = 1;
  std::int32_t height = 0;
  std::int32_t width = 0;
  std::int32_t scoring_id = kNoScoring;
  std::int32_t temperature_milli = 0;
};

struct ScoreMapFile {
  ScoreMapHeader header;
  Array values;  // [N,C,H,W]
};

// Accepts [N,H,W] (C = 1) or [N,C,H,W]. Values must be finite and representable as float32.
void write_score_map(const std::filesystem::path& path, const Array& values, std::int32_t scoring_id = kNoScoring,
                     double temperature = 0.0);
ScoreMapFile read_score_map(const std::filesystem::path& path);

// One row per leading index, values flattened; rank 1 arrays give a single column.
void write_csv(const std::filesystem::path& path, const Array& values);
Array read_csv(const std::filesystem::path& path);

// Binary P6 pixmap of a [3,H,W] image with values in [0,1] mapped to round(255 v).
void write_ppm(const std::filesystem::path& path, const Array& image);
Array read_ppm(const std::filesystem::path& path);

// Append-only training log.
class TrainingLog {
 public:
  static constexpr const char* kHeader =
      "iteration,L_cls_or_L_seg,ce_term,kl_term,L_RNVP,lr_classifier,lr_flow,outlier_h,outlier_w";

  // Writes the header when the file is new or empty; `truncate_after` drops rows with
  // iteration >= that value so a resumed run continues cleanly.
  explicit TrainingLog(const std::filesystem::path& path, long truncate_after = -1);
  void append(const LogRow& row);

 private:
  std::ofstream out_;
};

std::string format_log_row(const LogRow& row);
std::vector<LogRow> read_training_log(const std::filesystem::path& path);

// Flat `key = value` text, `#` starts a comment. Later keys override earlier ones.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text, const std::string& origin = "<config>");
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace borderflow
