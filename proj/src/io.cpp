#include "mwe/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <set>
#include <sstream>

namespace mwe {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ", ";
    out += cells[i];
  }
  return out;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw ValidationError(source.string() + ": missing column '" + name + "'");
  }
  return static_cast<std::size_t>(it - header.begin());
}

std::string CsvTable::where(std::size_t row) const {
  return source.string() + ":" + std::to_string(line[row]);
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& text = rows[row][col];
  if (text.empty()) throw ValidationError(where(row) + ": empty " + header[col]);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || errno == ERANGE) {
    throw ValidationError(where(row) + ": cannot parse " + header[col] + " '" + text + "'");
  }
  if (!std::isfinite(v)) {
    throw ValidationError(where(row) + ": non-finite " + header[col] + " '" + text + "'");
  }
  return v;
}

double CsvTable::optional_number(std::size_t row, std::size_t col) const {
  const std::string& text = rows[row][col];
  if (text.empty() || text == "NA" || text == "nan" || text == "NaN") {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return number(row, col);
}

Period CsvTable::period(std::size_t row, std::size_t col) const {
  try {
    return Period::parse(rows[row][col]);
  } catch (const ValidationError& e) {
    throw ValidationError(where(row) + ": " + e.what());
  }
}

CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& required) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  CsvTable table;
  table.source = path;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto cells = split(t);
    if (!have_header) {
      table.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(table.header.size()) + " fields, found " +
                            std::to_string(cells.size()));
    }
    table.rows.push_back(std::move(cells));
    table.line.push_back(line_no);
  }
  if (!have_header) {
    throw ValidationError(path.string() + ": empty file, missing header (expected: " +
                          join(required) + ")");
  }
  std::vector<std::string> missing;
  for (const auto& r : required) {
    if (std::find(table.header.begin(), table.header.end(), r) == table.header.end()) {
      missing.push_back(r);
    }
  }
  if (!missing.empty()) {
    throw ValidationError(path.string() + ": header lacks column(s): " + join(missing));
  }
  return table;
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::string& provenance,
                     const std::vector<std::string>& header)
    : path_(path), columns_(header.size()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw ValidationError("cannot write " + path.string());
  out_ << "# " << provenance << "\n";
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << "\n";
}

CsvWriter& CsvWriter::cell(const std::string& text) {
  pending_.push_back(text);
  return *this;
}

CsvWriter& CsvWriter::cell(double value) { return cell(format_double(value)); }

CsvWriter& CsvWriter::cell(std::size_t value) { return cell(std::to_string(value)); }

void CsvWriter::end_row() {
  require(pending_.size() == columns_, path_.string() + ": row has " +
                                           std::to_string(pending_.size()) + " cells, header " +
                                           std::to_string(columns_));
  for (std::size_t i = 0; i < pending_.size(); ++i) out_ << (i ? "," : "") << pending_[i];
  out_ << "\n";
  pending_.clear();
}

void CsvWriter::close() {
  out_.close();
  if (!out_) throw ValidationError("failed writing " + path_.string());
}

std::vector<AssetReturn> read_asset_returns(const std::filesystem::path& path) {
  const auto t = read_csv(path, {"period", "asset_id", "return", "market_cap", "sector_code"});
  const auto cp = t.column("period"), ca = t.column("asset_id"), cr = t.column("return"),
             cm = t.column("market_cap"), cs = t.column("sector_code");
  std::map<std::pair<int, std::string>, std::size_t> seen;
  std::vector<AssetReturn> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    AssetReturn a;
    a.period = t.period(i, cp);
    a.asset_id = t.rows[i][ca];
    a.ret = t.number(i, cr);
    a.market_cap = t.number(i, cm);
    a.sector_code = t.rows[i][cs];
    if (a.asset_id.empty()) throw ValidationError(t.where(i) + ": empty asset_id");
    if (a.sector_code.empty()) throw ValidationError(t.where(i) + ": missing sector_code");
    if (a.market_cap < 0.0) throw ValidationError(t.where(i) + ": negative market_cap");
    const auto [it, fresh] = seen.emplace(std::make_pair(a.period.index(), a.asset_id), i);
    if (!fresh) {
      throw ValidationError(path.string() + ": duplicate (period, asset) " + a.period.str() +
                            ", " + a.asset_id + " on lines " + std::to_string(t.line[it->second]) +
                            " and " + std::to_string(t.line[i]));
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<FactorValue> read_characteristics(const std::filesystem::path& path) {
  const auto t = read_csv(path, {"period", "asset_id", "factor", "value"});
  const auto cp = t.column("period"), ca = t.column("asset_id"), cf = t.column("factor"),
             cv = t.column("value");
  std::map<std::tuple<int, std::string, std::string>, std::size_t> seen;
  std::vector<FactorValue> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    FactorValue f;
    f.period = t.period(i, cp);
    f.asset_id = t.rows[i][ca];
    f.factor = t.rows[i][cf];
    f.value = t.optional_number(i, cv);
    const auto [it, fresh] = seen.emplace(std::make_tuple(f.period.index(), f.asset_id, f.factor), i);
    if (!fresh) {
      throw ValidationError(path.string() + ": duplicate (period, asset, factor) " +
                            f.period.str() + ", " + f.asset_id + ", " + f.factor + " on lines " +
                            std::to_string(t.line[it->second]) + " and " +
                            std::to_string(t.line[i]));
    }
    out.push_back(std::move(f));
  }
  return out;
}

void write_asset_returns(const std::filesystem::path& path, const std::string& provenance,
                         const std::vector<AssetReturn>& rows) {
  CsvWriter w(path, provenance, {"period", "asset_id", "return", "market_cap", "sector_code"});
  for (const auto& a : rows) {
    w.cell(a.period.str()).cell(a.asset_id).cell(a.ret).cell(a.market_cap).cell(a.sector_code);
    w.end_row();
  }
  w.close();
}

void write_characteristics(const std::filesystem::path& path, const std::string& provenance,
                           const std::vector<FactorValue>& rows) {
  CsvWriter w(path, provenance, {"period", "asset_id", "factor", "value"});
  for (const auto& f : rows) {
    w.cell(f.period.str()).cell(f.asset_id).cell(f.factor).cell(f.value);
    w.end_row();
  }
  w.close();
}

namespace {

// period column first, then numeric or categorical columns.
std::vector<Period> read_period_column(const CsvTable& t) {
  const auto cp = t.column("period");
  std::vector<Period> periods;
  std::map<int, std::size_t> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const Period p = t.period(i, cp);
    const auto [it, fresh] = seen.emplace(p.index(), i);
    if (!fresh) {
      throw ValidationError(t.source.string() + ": duplicate period " + p.str() + " on lines " +
                            std::to_string(t.line[it->second]) + " and " +
                            std::to_string(t.line[i]));
    }
    if (!periods.empty() && !(periods.back() < p)) {
      throw ValidationError(t.where(i) + ": periods must be increasing");
    }
    periods.push_back(p);
  }
  return periods;
}

}  // namespace

FactorTable read_factor_table(const std::filesystem::path& path) {
  const auto t = read_csv(path, {"period"});
  FactorTable out;
  out.periods = read_period_column(t);
  const auto cp = t.column("period");
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c == cp) continue;
    out.names.push_back(t.header[c]);
    cols.push_back(c);
  }
  out.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = t.number(i, cols[k]);
    }
  }
  return out;
}

void write_factor_table(const std::filesystem::path& path, const std::string& provenance,
                        const FactorTable& table) {
  std::vector<std::string> header{"period"};
  header.insert(header.end(), table.names.begin(), table.names.end());
  CsvWriter w(path, provenance, header);
  for (std::size_t i = 0; i < table.periods.size(); ++i) {
    w.cell(table.periods[i].str());
    for (Eigen::Index k = 0; k < table.values.cols(); ++k) {
      w.cell(table.values(static_cast<Eigen::Index>(i), k));
    }
    w.end_row();
  }
  w.close();
}

IndicatorTable read_indicators(const std::filesystem::path& path) {
  const auto t = read_csv(path, {"period"});
  IndicatorTable out;
  out.periods = read_period_column(t);
  const auto cp = t.column("period");
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c == cp) continue;
    out.names.push_back(t.header[c]);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (t.rows[i][c].empty()) throw ValidationError(t.where(i) + ": empty " + t.header[c]);
      labels.push_back(t.rows[i][c]);
    }
    out.labels.push_back(std::move(labels));
  }
  return out;
}

void write_indicators(const std::filesystem::path& path, const std::string& provenance,
                      const IndicatorTable& table) {
  std::vector<std::string> header{"period"};
  header.insert(header.end(), table.names.begin(), table.names.end());
  CsvWriter w(path, provenance, header);
  for (std::size_t i = 0; i < table.periods.size(); ++i) {
    w.cell(table.periods[i].str());
    for (const auto& col : table.labels) w.cell(col[i]);
    w.end_row();
  }
  w.close();
}

void write_sector_panel(const std::filesystem::path& path, const std::string& provenance,
                        const SectorPanel& panel) {
  std::vector<std::string> header{"period", "ret_eq", "ret_cap"};
  header.insert(header.end(), panel.factor_names.begin(), panel.factor_names.end());
  CsvWriter w(path, provenance, header);
  for (std::size_t t = 0; t < panel.periods.size(); ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    w.cell(panel.periods[t].str()).cell(panel.returns_eq[row]).cell(panel.returns_cap[row]);
    for (Eigen::Index k = 0; k < panel.factors.cols(); ++k) w.cell(panel.factors(row, k));
    w.end_row();
  }
  w.close();
}

SectorPanel read_sector_panel(const std::filesystem::path& path, const std::string& sector_id) {
  const auto t = read_csv(path, {"period", "ret_eq", "ret_cap"});
  SectorPanel sp;
  sp.sector_id = sector_id;
  sp.periods = read_period_column(t);
  const auto ce = t.column("ret_eq"), cc = t.column("ret_cap"), cp = t.column("period");
  std::vector<std::size_t> factor_cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c == cp || c == ce || c == cc) continue;
    sp.factor_names.push_back(t.header[c]);
    factor_cols.push_back(c);
  }
  const auto T = static_cast<Eigen::Index>(t.rows.size());
  sp.returns_eq.resize(T);
  sp.returns_cap.resize(T);
  sp.factors.resize(T, static_cast<Eigen::Index>(factor_cols.size()));
  sp.cap_fallback.assign(t.rows.size(), false);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    sp.returns_eq[row] = t.number(i, ce);
    sp.returns_cap[row] = t.number(i, cc);
    for (std::size_t k = 0; k < factor_cols.size(); ++k) {
      sp.factors(row, static_cast<Eigen::Index>(k)) = t.number(i, factor_cols[k]);
    }
  }
  return sp;
}

std::map<std::string, PredictionPanel> read_prediction_panels(const std::filesystem::path& path) {
  const auto t = read_csv(path, {"period", "sector_id", "model_id", "forecast", "realized"});
  const auto cp = t.column("period"), cs = t.column("sector_id"), cm = t.column("model_id"),
             cf = t.column("forecast"), cr = t.column("realized");

  struct Cell {
    double forecast;
    double realized;
    std::size_t row;
  };
  struct Sector {
    std::vector<std::string> models;  // first-appearance order
    std::map<int, std::map<std::string, Cell>> cells;
  };
  std::map<std::string, Sector> sectors;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const Period p = t.period(i, cp);
    const std::string& sector = t.rows[i][cs];
    const std::string& model = t.rows[i][cm];
    if (sector.empty() || model.empty()) {
      throw ValidationError(t.where(i) + ": empty sector_id or model_id");
    }
    auto& s = sectors[sector];
    if (std::find(s.models.begin(), s.models.end(), model) == s.models.end()) {
      s.models.push_back(model);
    }
    auto& by_model = s.cells[p.index()];
    const auto it = by_model.find(model);
    if (it != by_model.end()) {
      throw ValidationError(path.string() + ": duplicate (period, sector, model) " + p.str() +
                            ", " + sector + ", " + model + " on lines " +
                            std::to_string(t.line[it->second.row]) + " and " +
                            std::to_string(t.line[i]));
    }
    by_model.emplace(model, Cell{t.number(i, cf), t.number(i, cr), i});
  }

  std::map<std::string, PredictionPanel> out;
  for (const auto& [sector, s] : sectors) {
    const auto tau = static_cast<Eigen::Index>(s.cells.size());
    const auto L = static_cast<Eigen::Index>(s.models.size());
    Eigen::MatrixXd F(tau, L);
    Eigen::VectorXd r(tau);
    std::vector<Period> periods;
    Eigen::Index row = 0;
    for (const auto& [pidx, by_model] : s.cells) {
      periods.push_back(Period::from_index(pidx));
      for (Eigen::Index l = 0; l < L; ++l) {
        const auto& id = s.models[static_cast<std::size_t>(l)];
        const auto it = by_model.find(id);
        if (it == by_model.end()) {
          throw ValidationError(path.string() + ": sector " + sector + " lacks a forecast from " +
                                id + " for " + Period::from_index(pidx).str());
        }
        F(row, l) = it->second.forecast;
        if (l == 0) {
          r[row] = it->second.realized;
        } else if (it->second.realized != r[row]) {
          throw ValidationError(t.where(it->second.row) + ": realized return disagrees with "
                                "other models for the same sector and period");
        }
      }
      ++row;
    }
    out.emplace(sector, PredictionPanel(std::move(F), std::move(r), s.models, std::move(periods)));
  }
  return out;
}

void write_prediction_panels(const std::filesystem::path& path, const std::string& provenance,
                             const std::map<std::string, PredictionPanel>& panels) {
  CsvWriter w(path, provenance, {"period", "sector_id", "model_id", "forecast", "realized"});
  for (const auto& [sector, p] : panels) {
    for (std::size_t t = 0; t < p.periods(); ++t) {
      for (std::size_t l = 0; l < p.models(); ++l) {
        w.cell(p.period_ids()[t].str())
            .cell(sector)
            .cell(p.model_ids()[l])
            .cell(p.forecasts()(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(l)))
            .cell(p.realized()[static_cast<Eigen::Index>(t)]);
        w.end_row();
      }
    }
  }
  w.close();
}

}  // namespace mwe
