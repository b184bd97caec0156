#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include "nnynet/nrrd_io.hpp"

namespace nnynet::io {

namespace {

// One CSV line -> cells; double quotes group and "" escapes a quote.
std::vector<std::string> split_csv_line(const std::string& line, std::size_t row) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw TableError("row " + std::to_string(row) + ": unterminated quote");
  cells.push_back(std::move(cur));
  for (auto& s : cells) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return cells;
}

bool parse_number(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (b != e && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e && std::isfinite(out);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::string fmt_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

const PatientRecord& PatientTable::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw TableError("no record with id '" + id + "'");
}

PatientTable load_table(std::string_view text, const std::vector<ColumnSchema>& schema) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_numbers;
  {
    std::istringstream is{std::string(text)};
    std::size_t lineno = 0;
    for (std::string line; std::getline(is, line);) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      rows.push_back(split_csv_line(line, lineno));
      row_numbers.push_back(lineno);
    }
  }
  if (rows.empty()) throw TableError("table has no header row");
  const std::vector<std::string>& header = rows.front();
  if (header.size() < 1) throw TableError("header has no columns");

  PatientTable t;
  t.id_column = header[0];
  t.columns.assign(header.begin() + 1, header.end());
  const std::size_t f = t.columns.size();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != header.size()) {
      throw TableError("row " + std::to_string(row_numbers[r]) + ": expected " + std::to_string(header.size()) +
                       " cells, found " + std::to_string(rows[r].size()));
    }
  }

  std::map<std::string, FeatureKind> declared;
  for (const auto& s : schema) declared[s.name] = s.kind;
  t.kinds.resize(f);
  for (std::size_t c = 0; c < f; ++c) {
    if (const auto it = declared.find(t.columns[c]); it != declared.end()) {
      t.kinds[c] = it->second;
      continue;
    }
    bool numeric = true;
    for (std::size_t r = 1; r < rows.size() && numeric; ++r) {
      double v;
      const std::string& cell = rows[r][c + 1];
      numeric = cell.empty() || parse_number(cell, v);
    }
    t.kinds[c] = numeric ? FeatureKind::continuous : FeatureKind::categorical;
  }

  t.categories.resize(f);
  std::vector<std::map<std::string, std::size_t>> codes(f);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    PatientRecord rec;
    rec.id = rows[r][0];
    rec.features.assign(f, 0.0);
    rec.missing.assign(f, false);
    rec.kind = t.kinds;
    for (std::size_t c = 0; c < f; ++c) {
      const std::string& cell = rows[r][c + 1];
      if (cell.empty()) {
        rec.missing[c] = true;
        continue;
      }
      if (t.kinds[c] == FeatureKind::continuous) {
        if (!parse_number(cell, rec.features[c])) {
          throw TableError("row " + std::to_string(row_numbers[r]) + ": column '" + t.columns[c] +
                           "' is not numeric: '" + cell + "'");
        }
      } else {
        auto [it, inserted] = codes[c].try_emplace(cell, t.categories[c].size());
        if (inserted) t.categories[c].push_back(cell);
        rec.features[c] = static_cast<double>(it->second);
      }
    }
    t.records.push_back(std::move(rec));
  }
  return t;
}

std::string write_table(const PatientTable& table) {
  std::ostringstream os;
  os << quote_if_needed(table.id_column);
  for (const auto& c : table.columns) os << ',' << quote_if_needed(c);
  os << '\n';
  for (const auto& r : table.records) {
    os << quote_if_needed(r.id);
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      os << ',';
      if (r.missing[c]) continue;
      if (table.kinds[c] == FeatureKind::categorical) {
        const auto code = static_cast<std::size_t>(std::llround(r.features[c]));
        os << quote_if_needed(code < table.categories[c].size() ? table.categories[c][code] : std::to_string(code));
      } else {
        os << fmt_number(r.features[c]);
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace nnynet::io
