#include "sdr/dataset.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

namespace sdr {

namespace {

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

SpatialDataset::SpatialDataset(CoordMatrix coords, Eigen::MatrixXd features, Eigen::VectorXd pred,
                               LabelMask labeled, Eigen::VectorXd outcome, std::vector<std::string> feature_names)
    : coords_(std::move(coords)),
      features_(std::move(features)),
      pred_(std::move(pred)),
      labeled_(std::move(labeled)),
      outcome_(std::move(outcome)),
      feature_names_(std::move(feature_names)) {
  const Index n = coords_.rows();
  if (n < 1) throw InsufficientDataError("dataset must contain at least one unit");
  if (features_.rows() != n && !(features_.cols() == 0))
    throw SchemaError("features have " + std::to_string(features_.rows()) + " rows, expected " + std::to_string(n));
  if (features_.cols() == 0) features_.resize(n, 0);
  if (pred_.size() != n || labeled_.size() != n || outcome_.size() != n)
    throw SchemaError("per-unit sequences must all have length n = " + std::to_string(n));
  if (!feature_names_.empty() && static_cast<Index>(feature_names_.size()) != features_.cols())
    throw SchemaError("feature name count does not match feature columns");
  if (feature_names_.empty())
    for (Index j = 0; j < features_.cols(); ++j) feature_names_.push_back("f" + std::to_string(j + 1));
  if (!all_finite(coords_)) throw DomainError("non-finite coordinate");
  if (!all_finite(features_)) throw DomainError("non-finite feature value");
  if (!pred_.allFinite()) throw DomainError("non-finite prediction");
  for (Index i = 0; i < n; ++i) {
    if (labeled_(i)) {
      if (!std::isfinite(outcome_(i)))
        throw ConsistencyError("unit " + std::to_string(i) + " is labeled but has no finite outcome");
      ++labeled_count_;
    } else {
      outcome_(i) = std::numeric_limits<double>::quiet_NaN();
    }
  }
}

Eigen::VectorXd SpatialDataset::outcome_or(double fill) const {
  return labeled_.select(outcome_, Eigen::VectorXd::Constant(size(), fill));
}

SpatialDataset SpatialDataset::select(const std::vector<Index>& rows) const {
  const auto m = static_cast<Index>(rows.size());
  CoordMatrix c(m, 2);
  Eigen::MatrixXd f(m, features_.cols());
  Eigen::VectorXd p(m), y(m);
  LabelMask r(m);
  for (Index k = 0; k < m; ++k) {
    const Index i = rows[static_cast<std::size_t>(k)];
    c.row(k) = coords_.row(i);
    f.row(k) = features_.row(i);
    p(k) = pred_(i);
    r(k) = labeled_(i);
    y(k) = outcome_(i);
  }
  return SpatialDataset(std::move(c), std::move(f), std::move(p), std::move(r), std::move(y), feature_names_);
}

// -- CSV ---------------------------------------------------------------------

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return j;
  throw SchemaError("missing column '" + name + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("'" + path.string() + "' has no header row");
  t.header = split_csv_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size())
      throw ParseError("row " + std::to_string(t.rows.size()) + " (line " + std::to_string(lineno) + ") has " +
                       std::to_string(cells.size()) + " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

bool is_missing_token(const std::string& cell) {
  if (cell.empty()) return true;
  return cell.size() == 2 && std::toupper(static_cast<unsigned char>(cell[0])) == 'N' &&
         std::toupper(static_cast<unsigned char>(cell[1])) == 'A';
}

double parse_double_cell(const std::string& cell, std::size_t row, const std::string& column) {
  double v = 0.0;
  const char* b = cell.data();
  const char* e = b + cell.size();
  if (!cell.empty() && *b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (cell.empty() || ec != std::errc() || ptr != e)
    throw ParseError("row " + std::to_string(row) + ", column '" + column + "': '" + cell + "' is not numeric");
  return v;
}

bool parse_bool_cell(const std::string& cell, std::size_t row, const std::string& column) {
  std::string s;
  for (char c : cell) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "1" || s == "true" || s == "t" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "f" || s == "no") return false;
  const double v = parse_double_cell(cell, row, column);
  if (v == 1.0) return true;
  if (v == 0.0) return false;
  throw ParseError("row " + std::to_string(row) + ", column '" + column + "': label must be 0 or 1");
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

SpatialDataset load_dataset_csv(const std::filesystem::path& path, const ColumnMap& columns) {
  const CsvTable t = read_csv(path);
  const std::size_t cx = t.column(columns.coord_x);
  const std::size_t cy = t.column(columns.coord_y);
  std::vector<std::size_t> cf;
  for (const auto& f : columns.features) cf.push_back(t.column(f));
  const std::size_t cp = t.column(columns.pred);
  const std::size_t cr = t.column(columns.label);
  const std::size_t co = t.column(columns.outcome);

  const auto n = static_cast<Index>(t.rows.size());
  if (n == 0) throw InsufficientDataError("'" + path.string() + "' has no data rows");
  CoordMatrix coords(n, 2);
  Eigen::MatrixXd features(n, static_cast<Index>(cf.size()));
  Eigen::VectorXd pred(n), outcome(n);
  LabelMask labeled(n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    const auto r = static_cast<std::size_t>(i);
    coords(i, 0) = parse_double_cell(row[cx], r, columns.coord_x);
    coords(i, 1) = parse_double_cell(row[cy], r, columns.coord_y);
    for (std::size_t j = 0; j < cf.size(); ++j)
      features(i, static_cast<Index>(j)) = parse_double_cell(row[cf[j]], r, columns.features[j]);
    pred(i) = parse_double_cell(row[cp], r, columns.pred);
    labeled(i) = parse_bool_cell(row[cr], r, columns.label);
    if (is_missing_token(row[co])) {
      if (labeled(i)) throw ConsistencyError("row " + std::to_string(i) + " is labeled but its outcome is empty");
      outcome(i) = std::numeric_limits<double>::quiet_NaN();
    } else {
      outcome(i) = parse_double_cell(row[co], r, columns.outcome);
    }
  }
  return SpatialDataset(std::move(coords), std::move(features), std::move(pred), std::move(labeled),
                        std::move(outcome), columns.features);
}

void write_dataset_csv(const SpatialDataset& ds, const std::filesystem::path& path, const ColumnMap& columns) {
  if (static_cast<Index>(columns.features.size()) != ds.feature_count())
    throw SchemaError("column map names " + std::to_string(columns.features.size()) + " features, dataset has " +
                      std::to_string(ds.feature_count()));
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << columns.coord_x << ',' << columns.coord_y;
  for (const auto& f : columns.features) out << ',' << f;
  out << ',' << columns.pred << ',' << columns.label << ',' << columns.outcome << '\n';
  for (Index i = 0; i < ds.size(); ++i) {
    out << format_double(ds.coords()(i, 0)) << ',' << format_double(ds.coords()(i, 1));
    for (Index j = 0; j < ds.feature_count(); ++j) out << ',' << format_double(ds.features()(i, j));
    out << ',' << format_double(ds.pred()(i)) << ',' << (ds.labeled()(i) ? 1 : 0) << ',';
    if (ds.labeled()(i)) out << format_double(ds.outcome_or_nan()(i));
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// -- distances ---------------------------------------------------------------

std::size_t nearest_rank(double q, std::size_t count) {
  // The relative slack keeps q*N that is an integer up to rounding on that integer.
  const double x = q * static_cast<double>(count);
  auto k = static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
  return std::clamp<std::size_t>(k, 1, count);
}

DistanceSummary summarize_distances(const CoordMatrix& coords, const std::vector<double>& probs) {
  if (coords.rows() < 2) throw InsufficientDataError("distance summary needs at least two points");
  auto d = pairwise_distances(coords);
  std::sort(d.begin(), d.end());
  DistanceSummary s;
  s.n_pairs = d.size();
  s.min_pair_distance = d.front();
  for (double q : probs) {
    if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("quantile probability must lie in [0,1]");
    s.quantile_table[q] = d[nearest_rank(q, d.size()) - 1];
  }
  return s;
}

}  // namespace sdr
