#pragma once

// Comma-separated data files: loading with validation, and re-emission.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcglm/structure.hpp"

namespace mcglm {

struct Schema {
  std::string group;
  std::string time;
  std::string key;     // repeated-measures key, may be empty
  std::string offset;  // exposure on the natural scale, may be empty
  std::vector<std::string> responses;
  std::vector<std::string> categorical;
  std::vector<std::string> numeric;
};

class Dataset {
 public:
  Index n_rows() const { return n_rows_; }
  const Schema& schema() const { return schema_; }
  const std::vector<std::string>& columns() const { return columns_; }  // file order

  bool has_column(const std::string& name) const { return text_.contains(name); }
  bool is_numeric(const std::string& name) const { return values_.contains(name); }
  bool is_categorical(const std::string& name) const { return levels_.contains(name); }

  // Raw cells of any column.
  const std::vector<std::string>& text(const std::string& name) const;
  // Parsed values of the time, offset, response and numeric columns.
  const std::vector<double>& values(const std::string& name) const;
  // Levels of a categorical column in first-appearance order.
  const std::vector<std::string>& levels(const std::string& name) const;

  // Groups from the group column, time from the time column, key from the
  // key column (or the group when absent).
  GroupIndex group_index() const;

  friend Dataset parse_dataset(std::istream& in, const Schema& schema);

 private:
  Schema schema_;
  Index n_rows_ = 0;
  std::vector<std::string> columns_;
  std::unordered_map<std::string, std::vector<std::string>> text_;
  std::unordered_map<std::string, std::vector<double>> values_;
  std::unordered_map<std::string, std::vector<std::string>> levels_;
};

// Throws LoadError (row-addressed where possible).
Dataset parse_dataset(std::istream& in, const Schema& schema);
Dataset load_dataset(const std::filesystem::path& path, const Schema& schema);

// Numeric columns use the shortest representation that reads back to the
// same double, so load -> write -> load -> write is byte-stable.
void write_dataset(const Dataset& data, std::ostream& out);
void write_dataset(const Dataset& data, const std::filesystem::path& path);

// Shortest round-trip decimal form of x.
std::string format_number(double x);

}  // namespace mcglm
