#include "borderflow/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace borderflow {
namespace {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::trunc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::out | mode);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError(where + ": not a number: '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void write_score_map(const std::filesystem::path& path, const Array& values, std::int32_t scoring_id,
                     double temperature) {
  Shape s = values.shape();
  if (s.size() == 3) s.insert(s.begin() + 1, 1);
  if (s.size() != 4) throw ShapeError("score map: expected [N,H,W] or [N,C,H,W], got " + shape_string(values.shape()));
  for (std::size_t d : s)
    if (d > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max()))
      throw ShapeError("score map: dimension too large");
  const std::int32_t header[8] = {kScoreMapMagic,
                                  kScoreMapVersion,
                                  static_cast<std::int32_t>(s[0]),
                                  static_cast<std::int32_t>(s[1]),
                                  static_cast<std::int32_t>(s[2]),
                                  static_cast<std::int32_t>(s[3]),
                                  scoring_id,
                                  static_cast<std::int32_t>(std::lround(temperature * 1000.0))};
  std::vector<float> data(values.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(values[i])) throw DomainError("score map: non-finite value at index " + std::to_string(i));
    data[i] = static_cast<float>(values[i]);
  }
  auto out = open_out(path);
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw FormatError("write failed: " + path.string());
}

ScoreMapFile read_score_map(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::int32_t h[8];
  if (!in.read(reinterpret_cast<char*>(h), sizeof h)) throw FormatError(path.string() + ": truncated header");
  if (h[0] != kScoreMapMagic) throw FormatError(path.string() + ": bad magic");
  if (h[1] != kScoreMapVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(h[1]));
  for (int i = 2; i < 6; ++i)
    if (h[i] < 0) throw FormatError(path.string() + ": negative dimension");
  ScoreMapFile f{{h[2], h[3], h[4], h[5], h[6], h[7]}, Array()};
  const Shape shape{static_cast<std::size_t>(h[2]), static_cast<std::size_t>(h[3]), static_cast<std::size_t>(h[4]),
                    static_cast<std::size_t>(h[5])};
  std::vector<float> data(shape_size(shape));
  if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float))))
    throw FormatError(path.string() + ": truncated payload");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  f.values = Array(shape, std::vector<double>(data.begin(), data.end()));
  return f;
}

void write_csv(const std::filesystem::path& path, const Array& values) {
  if (values.rank() == 0) throw ShapeError("csv: scalar array");
  const std::size_t rows = values.dim(0), cols = rows ? values.size() / rows : 0;
  std::string text;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) text += ',';
      text += format_double(values[r * cols + c]);
    }
    text += '\n';
  }
  write_text(path, text);
}

Array read_csv(const std::filesystem::path& path) {
  std::istringstream is(read_text(path));
  std::vector<double> v;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (rows == 0) cols = fields.size();
    if (fields.size() != cols) throw FormatError(path.string() + ": ragged row " + std::to_string(rows + 1));
    for (const auto& f : fields) v.push_back(parse_double(f, path.string()));
    ++rows;
  }
  return Array({rows, cols}, std::move(v));
}

void write_ppm(const std::filesystem::path& path, const Array& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("ppm: expected [3,H,W], got " + shape_string(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = image[(c * h + y) * w + x];
        if (!std::isfinite(v)) throw DomainError("ppm: non-finite pixel");
        bytes += static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
      }
  write_text(path, bytes);
}

Array read_ppm(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || !in) throw FormatError(path.string() + ": not an 8-bit P6 pixmap");
  in.get();
  std::vector<unsigned char> raw(3 * w * h);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw FormatError(path.string() + ": truncated pixmap");
  Array img({3, h, w});
  for (std::size_t i = 0; i < w * h; ++i)
    for (std::size_t c = 0; c < 3; ++c) img[c * w * h + i] = raw[3 * i + c] / 255.0;
  return img;
}

std::string format_log_row(const LogRow& r) {
  return std::to_string(r.iteration) + ',' + format_double(r.loss) + ',' + format_double(r.ce) + ',' +
         format_double(r.kl_term) + ',' + format_double(r.nll) + ',' + format_double(r.lr_classifier) + ',' +
         format_double(r.lr_flow) + ',' + std::to_string(r.outlier_h) + ',' + std::to_string(r.outlier_w);
}

TrainingLog::TrainingLog(const std::filesystem::path& path, long truncate_after) {
  std::string kept;
  if (std::filesystem::exists(path)) {
    std::istringstream is(read_text(path));
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
      if (first) {
        if (line != kHeader) throw FormatError(path.string() + ": not a training log");
        first = false;
        continue;
      }
      const long it = std::stol(line.substr(0, line.find(',')));
      if (truncate_after >= 0 && it >= truncate_after) break;
      kept += line + '\n';
    }
  }
  out_ = open_out(path);
  out_ << kHeader << '\n' << kept;
  out_.flush();
}

void TrainingLog::append(const LogRow& row) {
  out_ << format_log_row(row) << '\n';
  out_.flush();
  if (!out_) throw FormatError("training log write failed");
}

std::vector<LogRow> read_training_log(const std::filesystem::path& path) {
  std::istringstream is(read_text(path));
  std::string line;
  std::getline(is, line);
  if (line != TrainingLog::kHeader) throw FormatError(path.string() + ": not a training log");
  std::vector<LogRow> rows;
  while (std::getline(is, line)) {
    const auto f = split(line, ',');
    if (f.size() != 9) throw FormatError(path.string() + ": malformed log row");
    LogRow r;
    r.iteration = std::stol(f[0]);
    r.loss = parse_double(f[1], path.string());
    r.ce = parse_double(f[2], path.string());
    r.kl_term = parse_double(f[3], path.string());
    r.nll = parse_double(f[4], path.string());
    r.lr_classifier = parse_double(f[5], path.string());
    r.lr_flow = parse_double(f[6], path.string());
    r.outlier_h = std::stoul(f[7]);
    r.outlier_w = std::stoul(f[8]);
    rows.push_back(r);
  }
  return rows;
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw FormatError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
    const std::string key = trim(body.substr(0, eq)), value = trim(body.substr(eq + 1));
    if (key.empty()) throw FormatError(origin + ":" + std::to_string(n) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) { return parse_key_values(read_text(path), path.string()); }

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + '\n';
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace borderflow
