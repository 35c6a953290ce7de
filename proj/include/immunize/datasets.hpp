#pragma once

// Task construction: a tabular CSV pipeline, MNIST-style IDX digit pairs and a
// synthetic generator with controlled covariance alignment.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "immunize/dataset.hpp"
#include "immunize/error.hpp"
#include "immunize/random.hpp"
#include "immunize/spectral.hpp"

namespace immunize {

// --- CSV ------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// RFC 4180: quoted fields may hold commas, doubled quotes and line breaks;
/// CRLF and LF both end a record. Blank lines are skipped.
inline CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, field_started = false;
  auto end_field = [&] {
    rec.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(rec.size() == 1 && rec[0].empty())) records.push_back(std::move(rec));
    rec.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw error(errc::empty_file, "unterminated quoted field");
  if (field_started || !field.empty() || !rec.empty()) end_record();
  if (records.empty()) throw error(errc::empty_file, "CSV has no header");
  CsvTable t;
  t.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size())
      throw error(errc::dimension_mismatch, "CSV record " + std::to_string(r) + " has " +
                                                std::to_string(records[r].size()) + " fields, header has " +
                                                std::to_string(t.header.size()));
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error(errc::io_failure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// --- tabular pipeline -------------------------------------------------------------

enum class NormalizationMode { per_split, pooled };

struct TabularConfig {
  std::filesystem::path csv_path;
  std::string split_column = "MSZoning";
  std::string split_value = "RL";  // matching rows form D_H
  std::string target_P = "LotArea";
  std::string target_H = "SalePrice";
  std::vector<std::string> drop_columns = {"Id"};
  NormalizationMode normalization = NormalizationMode::per_split;
  bool normalize_targets = true;
};

namespace detail {

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

inline std::optional<double> parse_number(const std::string& s) {
  double v = 0;
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && e[-1] == ' ') --e;
  if (b < e && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw error(errc::missing_column, "column '" + name + "' not in header");
  return static_cast<std::size_t>(it - header.begin());
}

/// Numeric columns parse directly (missing -> 0). Any other column is label
/// encoded by first appearance in file order; missing entries become the
/// category "0", matching a fill-then-encode pipeline.
inline std::vector<double> encode_column(const CsvTable& t, std::size_t c, bool& categorical) {
  categorical = false;
  for (const auto& r : t.rows)
    if (!is_missing(r[c]) && !parse_number(r[c])) {
      categorical = true;
      break;
    }
  std::vector<double> out;
  out.reserve(t.rows.size());
  if (!categorical) {
    for (const auto& r : t.rows) out.push_back(is_missing(r[c]) ? 0.0 : *parse_number(r[c]));
    return out;
  }
  std::map<std::string, double> codes;
  for (const auto& r : t.rows) {
    const std::string key = is_missing(r[c]) ? "0" : r[c];
    const auto [it, fresh] = codes.emplace(key, static_cast<double>(codes.size()));
    out.push_back(it->second);
  }
  return out;
}

inline ColumnStats stats_of(const std::vector<double>& v, const std::vector<std::size_t>& rows) {
  double mean = 0;
  for (auto r : rows) mean += v[r];
  mean /= static_cast<double>(rows.size());
  double ss = 0;
  for (auto r : rows) ss += (v[r] - mean) * (v[r] - mean);
  // Population std, so normalized columns have unit variance exactly.
  return {mean, std::sqrt(ss / static_cast<double>(rows.size()))};
}

inline bool degenerate(const ColumnStats& s) { return !(s.std > 1e-12 * std::max(1.0, std::abs(s.mean))); }

}  // namespace detail

/// Splits on split_column == split_value (D_H) versus the rest (D_P), encodes,
/// drops columns that are constant in either split, and z-normalizes.
inline std::pair<Dataset, Dataset> load_tabular(const TabularConfig& cfg, const CsvTable& table) {
  const auto& h = table.header;
  const auto split_c = detail::column_index(h, cfg.split_column);
  const auto tp = detail::column_index(h, cfg.target_P);
  const auto th = detail::column_index(h, cfg.target_H);
  std::vector<bool> excluded(h.size(), false);
  excluded[tp] = excluded[th] = true;
  for (const auto& d : cfg.drop_columns) excluded[detail::column_index(h, d)] = true;
  if (table.rows.empty()) throw error(errc::empty_file, "CSV has a header but no rows");

  std::vector<std::size_t> rows_p, rows_h, all;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    (table.rows[r][split_c] == cfg.split_value ? rows_h : rows_p).push_back(r);
    all.push_back(r);
  }
  if (rows_p.empty()) throw error(errc::empty_split, "no rows outside " + cfg.split_column + "=" + cfg.split_value);
  if (rows_h.empty()) throw error(errc::empty_split, "no rows with " + cfg.split_column + "=" + cfg.split_value);

  Dataset dp, dh;
  const bool pooled = cfg.normalization == NormalizationMode::pooled;
  std::vector<std::vector<double>> cols;
  for (std::size_t c = 0; c < h.size(); ++c) {
    if (excluded[c]) continue;
    bool cat = false;
    auto v = detail::encode_column(table, c, cat);
    const auto sp = detail::stats_of(v, pooled ? all : rows_p);
    const auto sh = detail::stats_of(v, pooled ? all : rows_h);
    const auto raw_p = detail::stats_of(v, rows_p);
    const auto raw_h = detail::stats_of(v, rows_h);
    if (detail::degenerate(raw_p) || detail::degenerate(raw_h)) {
      const std::string msg = "dropped constant column '" + h[c] + "' (constant in " +
                              (detail::degenerate(raw_h) ? "D_H" : "D_P") + ")";
      dp.warnings.push_back(msg);
      dh.warnings.push_back(msg);
      continue;
    }
    dp.feature_names.push_back(h[c]);
    dh.feature_names.push_back(h[c]);
    dp.normalization.push_back(sp);
    dh.normalization.push_back(sh);
    cols.push_back(std::move(v));
  }
  if (cols.empty()) throw error(errc::empty_split, "no usable feature columns");

  auto build = [&](Dataset& ds, const std::vector<std::size_t>& rows, std::size_t target) {
    const auto n = static_cast<Index>(rows.size());
    ds.X.resize(n, static_cast<Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto& s = ds.normalization[j];
      for (Index i = 0; i < n; ++i)
        ds.X(i, static_cast<Index>(j)) = (cols[j][rows[static_cast<std::size_t>(i)]] - s.mean) / s.std;
    }
    bool cat = false;
    const auto y = detail::encode_column(table, target, cat);
    if (cat) throw error(errc::invalid_labels, "target '" + h[target] + "' is not numeric");
    ds.Y.resize(n, 1);
    for (Index i = 0; i < n; ++i) ds.Y(i, 0) = y[rows[static_cast<std::size_t>(i)]];
    if (cfg.normalize_targets) {
      const auto s = detail::stats_of(y, pooled ? all : rows);
      if (detail::degenerate(s)) throw error(errc::numerical_failure, "target '" + h[target] + "' is constant");
      ds.Y = (ds.Y.array() - s.mean) / s.std;
    }
    ds.provenance = cfg.csv_path.string() + " [" + h[target] + "]";
    ds.validate();
  };
  build(dp, rows_p, tp);
  build(dh, rows_h, th);
  return {std::move(dp), std::move(dh)};
}

inline std::pair<Dataset, Dataset> load_tabular(const TabularConfig& cfg) {
  const std::string text = read_text(cfg.csv_path);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw error(errc::empty_file, cfg.csv_path.string() + " is empty");
  return load_tabular(cfg, parse_csv(text));
}

// --- IDX --------------------------------------------------------------------------

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

struct IdxData {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major per image
  std::vector<std::uint8_t> labels;

  std::size_t count() const { return labels.size(); }
  std::size_t image_size() const { return std::size_t{rows} * cols; }
};

namespace detail {

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size()) throw error(errc::bad_magic, "IDX header truncated");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw error(errc::io_failure, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw error(errc::io_failure, "cannot write " + p.string());
}

}  // namespace detail

inline IdxData read_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = detail::slurp(images_path);
  const auto lbl = detail::slurp(labels_path);
  if (detail::read_be32(img, 0) != idx_images_magic)
    throw error(errc::bad_magic, images_path.string() + " is not an IDX image file");
  if (detail::read_be32(lbl, 0) != idx_labels_magic)
    throw error(errc::bad_magic, labels_path.string() + " is not an IDX label file");
  const std::uint32_t n_img = detail::read_be32(img, 4);
  const std::uint32_t n_lbl = detail::read_be32(lbl, 4);
  if (n_img != n_lbl)
    throw error(errc::label_image_count_mismatch,
                std::to_string(n_img) + " images vs " + std::to_string(n_lbl) + " labels");
  IdxData d;
  d.rows = detail::read_be32(img, 8);
  d.cols = detail::read_be32(img, 12);
  const std::size_t need = 16 + std::size_t{n_img} * d.image_size();
  if (img.size() != need) throw error(errc::label_image_count_mismatch, "image payload size does not match header");
  if (lbl.size() != 8 + std::size_t{n_lbl}) throw error(errc::label_image_count_mismatch, "label payload size");
  d.pixels.assign(img.begin() + 16, img.end());
  d.labels.assign(lbl.begin() + 8, lbl.end());
  return d;
}

inline void write_idx(const IdxData& d, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  if (d.pixels.size() != d.count() * d.image_size())
    throw error(errc::label_image_count_mismatch, "pixel buffer does not match label count");
  std::string img, lbl;
  detail::put_be32(img, idx_images_magic);
  detail::put_be32(img, static_cast<std::uint32_t>(d.count()));
  detail::put_be32(img, d.rows);
  detail::put_be32(img, d.cols);
  img.append(d.pixels.begin(), d.pixels.end());
  detail::put_be32(lbl, idx_labels_magic);
  detail::put_be32(lbl, static_cast<std::uint32_t>(d.count()));
  lbl.append(d.labels.begin(), d.labels.end());
  detail::dump(images_path, img);
  detail::dump(labels_path, lbl);
}

/// digit_a -> 0, digit_b -> 1; each class keeps its first min(n_a, n_b)
/// images in file order; pixels scaled to [0, 1].
inline Dataset idx_pair(const IdxData& d, int digit_a, int digit_b) {
  if (digit_a == digit_b) throw error(errc::digit_absent, "digit pair must be two different digits");
  std::size_t na = 0, nb = 0;
  for (auto l : d.labels) {
    na += l == digit_a;
    nb += l == digit_b;
  }
  if (na == 0 || nb == 0)
    throw error(errc::digit_absent, "digit " + std::to_string(na == 0 ? digit_a : digit_b) + " not in label file");
  const std::size_t keep = std::min(na, nb);
  std::vector<std::size_t> idx;
  std::size_t ka = 0, kb = 0;
  for (std::size_t i = 0; i < d.count(); ++i) {
    if (d.labels[i] == digit_a && ka < keep) {
      idx.push_back(i);
      ++ka;
    } else if (d.labels[i] == digit_b && kb < keep) {
      idx.push_back(i);
      ++kb;
    }
  }
  Dataset ds;
  const auto px = static_cast<Index>(d.image_size());
  ds.X.resize(static_cast<Index>(idx.size()), px);
  ds.Y.resize(static_cast<Index>(idx.size()), 1);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const std::uint8_t* p = d.pixels.data() + idx[r] * d.image_size();
    for (Index c = 0; c < px; ++c) ds.X(static_cast<Index>(r), c) = p[c] / 255.0;
    ds.Y(static_cast<Index>(r), 0) = d.labels[idx[r]] == digit_a ? 0.0 : 1.0;
  }
  for (Index c = 0; c < px; ++c) ds.feature_names.push_back("px" + std::to_string(c));
  ds.provenance = "idx pair " + std::to_string(digit_a) + "-" + std::to_string(digit_b);
  return ds;
}

inline Dataset load_idx_pair(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                             int digit_a, int digit_b) {
  if (digit_a == digit_b) throw error(errc::digit_absent, "digit pair must be two different digits");
  return idx_pair(read_idx(images_path, labels_path), digit_a, digit_b);
}

/// Inverse of idx_pair for a loaded pair: pixels back to bytes, labels back to digits.
inline IdxData idx_from_pair(const Dataset& ds, int digit_a, int digit_b, std::uint32_t rows, std::uint32_t cols) {
  if (static_cast<std::size_t>(ds.dim()) != std::size_t{rows} * cols)
    throw error(errc::dimension_mismatch, "image size does not match feature count");
  IdxData d;
  d.rows = rows;
  d.cols = cols;
  for (Index r = 0; r < ds.rows(); ++r) {
    for (Index c = 0; c < ds.dim(); ++c)
      d.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(ds.X(r, c), 0.0, 1.0) * 255.0)));
    d.labels.push_back(static_cast<std::uint8_t>(ds.Y(r, 0) == 0.0 ? digit_a : digit_b));
  }
  return d;
}

// --- synthetic tasks ---------------------------------------------------------------

struct SyntheticSpec {
  Index D_in = 4;
  Index N_P = 200;
  Index N_H = 200;
  Vector spectrum_P;
  Vector spectrum_H;
  double alignment_angle = 0.0;  // rotation of the top-2 principal plane of K_H against K_P
  std::uint64_t seed = 0;
  double noise = 0.01;

  void validate() const {
    if (D_in < 1 || N_P < 1 || N_H < 1) throw error(errc::invalid_spec, "sizes must be >= 1");
    for (const Vector* s : {&spectrum_P, &spectrum_H}) {
      if (s->size() != D_in) throw error(errc::invalid_spec, "spectrum length must equal D_in");
      for (Index i = 0; i < D_in; ++i) {
        if (!((*s)(i) > 0) || !std::isfinite((*s)(i))) throw error(errc::invalid_spec, "spectra must be positive");
        if (i > 0 && (*s)(i) > (*s)(i - 1)) throw error(errc::invalid_spec, "spectra must be descending");
      }
    }
    if (!(alignment_angle >= 0) || alignment_angle > std::numbers::pi / 2 + 1e-15)
      throw error(errc::invalid_spec, "alignment_angle must lie in [0, pi/2]");
    if (alignment_angle > 0 && D_in < 2) throw error(errc::invalid_spec, "rotation needs D_in >= 2");
    if (!(noise >= 0)) throw error(errc::invalid_spec, "noise must be >= 0");
  }
};

/// Eigenbases for the two covariances: Q_P random orthogonal, Q_H equal to Q_P
/// with its first two columns rotated by alignment_angle.
inline std::pair<Matrix, Matrix> synthetic_bases(const SyntheticSpec& spec, Rng& rng) {
  const Matrix qp = random_orthogonal(spec.D_in, rng);
  Matrix qh = qp;
  if (spec.D_in >= 2) {
    const double c = std::cos(spec.alignment_angle), s = std::sin(spec.alignment_angle);
    qh.col(0) = c * qp.col(0) + s * qp.col(1);
    qh.col(1) = -s * qp.col(0) + c * qp.col(1);
  }
  return {qp, qh};
}

/// Gaussian rows with covariance Q diag(spectrum) Q^T and targets from a
/// planted linear map plus N(0, noise^2).
inline std::pair<Dataset, Dataset> synthesize(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto [qp, qh] = synthetic_bases(spec, rng);
  auto draw = [&](Index n, const Vector& spectrum, const Matrix& q, const char* name) {
    Dataset ds;
    ds.X = random_normal(n, spec.D_in, rng) * spectrum.cwiseSqrt().asDiagonal() * q.transpose();
    const Matrix w = random_normal(spec.D_in, 1, rng);
    ds.Y = ds.X * w + random_normal(n, 1, rng, spec.noise);
    for (Index c = 0; c < spec.D_in; ++c) ds.feature_names.push_back("x" + std::to_string(c));
    ds.provenance = std::string("synthetic ") + name + " seed " + std::to_string(spec.seed);
    return ds;
  };
  Dataset dp = draw(spec.N_P, spec.spectrum_P, qp, "P");
  Dataset dh = draw(spec.N_H, spec.spectrum_H, qh, "H");
  return {std::move(dp), std::move(dh)};
}

}  // namespace immunize
