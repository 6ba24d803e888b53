#pragma once

#include <string>
#include <vector>

namespace gdich {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

/// Reads a numeric CSV with a mandatory header line. Throws ConfigError on
/// missing files, ragged rows or non-numeric cells.
CsvTable read_csv(const std::string& path);

/// Writes header and rows; numbers use 17 significant digits.
void write_csv(const std::string& path, const CsvTable& table);

/// Formats a double the way write_csv does.
std::string format_number(double v);

} // namespace gdich
