#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lakeqa {

using CsvRecord = std::vector<std::string>;

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// RFC-4180 reader: comma separated, double-quote escaping, CRLF or LF line ends,
/// embedded newlines inside quotes. A trailing empty line is not a record.
std::vector<CsvRecord> parse_csv(std::string_view text);
std::vector<CsvRecord> read_csv_file(const std::filesystem::path& path);

std::string csv_escape(std::string_view field);
std::string format_csv(const std::vector<CsvRecord>& records);
void write_csv_file(const std::filesystem::path& path, const std::vector<CsvRecord>& records);

}  // namespace lakeqa
