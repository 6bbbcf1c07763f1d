#include "mcglm/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "mcglm/error.hpp"

namespace mcglm {

namespace {

std::vector<std::string> split_csv(const std::string& line, long row) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  if (quoted) throw LoadError("unterminated quoted field", row);
  out.push_back(std::move(cell));
  return out;
}

std::string quote_csv(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace

std::string format_number(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

const std::vector<std::string>& Dataset::text(const std::string& name) const {
  const auto it = text_.find(name);
  if (it == text_.end()) throw SpecificationError("unknown column '" + name + "'");
  return it->second;
}

const std::vector<double>& Dataset::values(const std::string& name) const {
  const auto it = values_.find(name);
  if (it == values_.end()) throw SpecificationError("column '" + name + "' is not numeric");
  return it->second;
}

const std::vector<std::string>& Dataset::levels(const std::string& name) const {
  const auto it = levels_.find(name);
  if (it == levels_.end()) throw SpecificationError("column '" + name + "' is not categorical");
  return it->second;
}

GroupIndex Dataset::group_index() const {
  const auto& groups = text(schema_.group);
  std::vector<double> time = schema_.time.empty() ? std::vector<double>(n_rows_, 0.0)
                                                  : values(schema_.time);
  std::vector<std::string> key = schema_.key.empty() ? groups : text(schema_.key);
  return GroupIndex::from_labels(groups, std::move(time), std::move(key));
}

Dataset parse_dataset(std::istream& in, const Schema& schema) {
  Dataset data;
  data.schema_ = schema;
  std::string line;
  long row = 1;
  bool have_header = false;
  while (!have_header && std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) have_header = true;
  }
  if (!have_header) throw LoadError("no rows");
  data.columns_ = split_csv(line, row);
  for (auto& c : data.columns_) c = trim(c);
  std::unordered_set<std::string> seen;
  for (const auto& c : data.columns_) {
    if (c.empty()) throw LoadError("empty column name in header", row);
    if (!seen.insert(c).second) throw LoadError("duplicate column '" + c + "'", row);
  }

  std::vector<std::vector<std::string>> cells(data.columns_.size());
  std::vector<long> file_row;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_csv(line, row);
    if (fields.size() != data.columns_.size()) {
      throw LoadError("expected " + std::to_string(data.columns_.size()) + " fields, found " +
                          std::to_string(fields.size()),
                      row);
    }
    for (std::size_t c = 0; c < fields.size(); ++c) cells[c].push_back(trim(fields[c]));
    file_row.push_back(row);
  }
  data.n_rows_ = cells.empty() ? 0 : static_cast<Index>(cells.front().size());
  if (data.n_rows_ == 0) throw LoadError("no rows");

  for (std::size_t c = 0; c < data.columns_.size(); ++c)
    data.text_[data.columns_[c]] = std::move(cells[c]);

  auto require = [&](const std::string& name, const char* role) -> const std::vector<std::string>& {
    const auto it = data.text_.find(name);
    if (it == data.text_.end()) {
      throw LoadError(std::string("missing ") + role + " column '" + name + "'", 1);
    }
    for (std::size_t i = 0; i < it->second.size(); ++i)
      if (it->second[i].empty()) {
        throw LoadError("missing value in column '" + name + "'", file_row[i]);
      }
    return it->second;
  };
  enum class Check { any, count, positive };
  auto numeric = [&](const std::string& name, const char* role, Check check) {
    const auto& raw = require(name, role);
    std::vector<double> v(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const long r = file_row[i];
      if (!parse_double(raw[i], v[i])) {
        throw LoadError("column '" + name + "': '" + raw[i] + "' is not a number", r);
      }
      if (check == Check::count && (v[i] < 0.0 || v[i] != std::floor(v[i]))) {
        throw LoadError("column '" + name + "': '" + raw[i] + "' is not a non-negative integer count",
                        r);
      }
      if (check == Check::positive && !(v[i] > 0.0)) {
        throw LoadError("column '" + name + "': offset must be positive, found '" + raw[i] + "'", r);
      }
    }
    data.values_[name] = std::move(v);
  };

  require(schema.group, "group");
  if (!schema.key.empty()) require(schema.key, "key");
  if (!schema.time.empty()) numeric(schema.time, "time", Check::any);
  if (!schema.offset.empty()) numeric(schema.offset, "offset", Check::positive);
  for (const auto& r : schema.responses) numeric(r, "response", Check::count);
  for (const auto& n : schema.numeric) numeric(n, "numeric", Check::any);
  for (const auto& c : schema.categorical) {
    const auto& raw = require(c, "categorical");
    std::vector<std::string> levels;
    std::unordered_set<std::string> known;
    for (const auto& v : raw)
      if (known.insert(v).second) levels.push_back(v);
    data.levels_[c] = std::move(levels);
  }
  return data;
}

Dataset load_dataset(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open data file '" + path.string() + "'");
  return parse_dataset(in, schema);
}

void write_dataset(const Dataset& data, std::ostream& out) {
  const auto& cols = data.columns();
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << quote_csv(cols[c]);
  out << '\n';
  for (Index i = 0; i < data.n_rows(); ++i) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c) out << ',';
      if (data.is_numeric(cols[c])) {
        out << format_number(data.values(cols[c])[i]);
      } else {
        out << quote_csv(data.text(cols[c])[i]);
      }
    }
    out << '\n';
  }
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write data file '" + path.string() + "'");
  write_dataset(data, out);
  if (!out) throw LoadError("write failed for '" + path.string() + "'");
}

}  // namespace mcglm
