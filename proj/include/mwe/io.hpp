#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mwe/core.hpp"
#include "mwe/factors.hpp"
#include "mwe/portfolio.hpp"

namespace mwe {

/// Comma-separated text with a header row. Lines starting with '#' are
/// comments. `line` keeps the 1-based file line of every data row.
struct CsvTable {
  std::filesystem::path source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line;

  [[nodiscard]] std::size_t column(const std::string& name) const;
  /// "file:line" for error messages.
  [[nodiscard]] std::string where(std::size_t row) const;
  [[nodiscard]] double number(std::size_t row, std::size_t col) const;
  /// Empty, "NA" and "nan" cells read as NaN.
  [[nodiscard]] double optional_number(std::size_t row, std::size_t col) const;
  [[nodiscard]] Period period(std::size_t row, std::size_t col) const;
};

/// Reads a table and checks that every `required` column is present.
CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& required);

/// %.17g, so values survive a write/read round trip exactly.
std::string format_double(double value);

/// Writes the provenance comment line first, then the header.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& provenance,
            const std::vector<std::string>& header);
  CsvWriter& cell(const std::string& text);
  CsvWriter& cell(double value);
  CsvWriter& cell(std::size_t value);
  void end_row();
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::vector<std::string> pending_;
  std::size_t columns_;
};

std::vector<AssetReturn> read_asset_returns(const std::filesystem::path& path);
std::vector<FactorValue> read_characteristics(const std::filesystem::path& path);
void write_asset_returns(const std::filesystem::path& path, const std::string& provenance,
                         const std::vector<AssetReturn>& rows);
void write_characteristics(const std::filesystem::path& path, const std::string& provenance,
                           const std::vector<FactorValue>& rows);

/// period plus one column per factor.
FactorTable read_factor_table(const std::filesystem::path& path);
void write_factor_table(const std::filesystem::path& path, const std::string& provenance,
                        const FactorTable& table);

/// period plus one categorical column per indicator.
struct IndicatorTable {
  std::vector<Period> periods;
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> labels;  // names × periods
};
IndicatorTable read_indicators(const std::filesystem::path& path);
void write_indicators(const std::filesystem::path& path, const std::string& provenance,
                      const IndicatorTable& table);

/// period, ret_eq, ret_cap, then the factor columns.
void write_sector_panel(const std::filesystem::path& path, const std::string& provenance,
                        const SectorPanel& panel);
SectorPanel read_sector_panel(const std::filesystem::path& path, const std::string& sector_id);

/// Long format: period, sector_id, model_id, forecast, realized. Every sector
/// needs a forecast from every one of its models in every one of its periods.
std::map<std::string, PredictionPanel> read_prediction_panels(const std::filesystem::path& path);
void write_prediction_panels(const std::filesystem::path& path, const std::string& provenance,
                             const std::map<std::string, PredictionPanel>& panels);

}  // namespace mwe
