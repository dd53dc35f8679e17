#pragma once

#include <string>
#include <vector>

namespace fairpipe {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Reads a delimiter-separated file with a header row. Handles double-quoted
// fields with embedded delimiters and doubled quotes. Cells are trimmed of
// surrounding ASCII whitespace.
CsvTable read_csv(const std::string& path, char delimiter = ',');

// Serializes a table back to delimiter-separated text. Fields containing the
// delimiter, quotes or newlines are quoted.
std::string write_csv(const CsvTable& table, char delimiter = ',');

}  // namespace fairpipe
