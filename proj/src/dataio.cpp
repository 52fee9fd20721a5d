#include "agekf/dataio.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace agekf::dataio {

namespace {

std::string strip_bom(std::string line) {
  if (line.size() >= 3 && line[0] == '\xEF' && line[1] == '\xBB' && line[2] == '\xBF') {
    line.erase(0, 3);
  }
  return line;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::string unquote(std::string s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
    s = s.substr(1, s.size() - 2);
  }
  return s;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, sep)) fields.push_back(field);
  return fields;
}

long long parse_count(const std::string& text, int line_no) {
  try {
    std::size_t used = 0;
    const long long value = std::stoll(text, &used);
    if (used != text.size() || value < 0) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": invalid death count '" + text + "'");
  }
}

int parse_year(const std::string& text, int line_no) {
  try {
    std::size_t used = 0;
    // Year codes may carry a decimal point ("1999.0" appears in some exports).
    const double value = std::stod(text, &used);
    const int year = static_cast<int>(std::lround(value));
    if (used != text.size() || year < 1800 || year > 2200) throw std::invalid_argument(text);
    return year;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": invalid year '" + text + "'");
  }
}

}  // namespace

int wonder_age_group_index(const std::string& label) {
  static const std::map<std::string, int> table = [] {
    std::map<std::string, int> t;
    t["< 1 year"] = 0;
    t["1-4 years"] = 1;
    for (int i = 0; i < 19; ++i) {
      const int lo = 5 + 5 * i;
      t[std::to_string(lo) + "-" + std::to_string(lo + 4) + " years"] = 2 + i;
    }
    t["100+ years"] = 21;
    return t;
  }();
  const auto it = table.find(trim(label));
  if (it == table.end()) throw ParseError("unknown age-group label '" + label + "'");
  return it->second;
}

std::vector<ObservationBatch> parse_wonder(std::istream& input) {
  std::string line;
  int line_no = 0;

  if (!std::getline(input, line)) throw ParseError("empty WONDER export");
  ++line_no;
  line = strip_bom(line);

  const std::vector<std::string> header = split(line, '\t');
  int notes_col = -1, age_col = -1, year_col = -1, deaths_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name = unquote(header[i]);
    if (name == "Notes") notes_col = static_cast<int>(i);
    if (name.find("Age Group") != std::string::npos && name.find("Code") == std::string::npos &&
        age_col < 0) {
      age_col = static_cast<int>(i);
    }
    if (name == "Year" || name == "Year Code") {
      if (year_col < 0 || name == "Year") year_col = static_cast<int>(i);
    }
    if (name == "Deaths") deaths_col = static_cast<int>(i);
  }
  if (year_col < 0) throw ParseError("WONDER export: missing Year column");
  if (age_col < 0) throw ParseError("WONDER export: missing age-group column");
  if (deaths_col < 0) throw ParseError("WONDER export: missing Deaths column");

  std::map<int, ObservationBatch> batches;
  auto batch_for = [&batches](int year) -> ObservationBatch& {
    auto& batch = batches[year];
    if (batch.deaths.empty()) {
      batch.year = year;
      batch.deaths.assign(kNumCoarseBins, 0);
      // Bins absent from the export carry no information; treat as suppressed.
      batch.suppressed.assign(kNumCoarseBins, true);
    }
    return batch;
  };

  while (std::getline(input, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    if (unquote(stripped).rfind("---", 0) == 0) break;  // trailing notes block

    const std::vector<std::string> fields = split(line, '\t');
    const int needed = std::max({age_col, year_col, deaths_col});
    if (static_cast<int>(fields.size()) <= needed) {
      throw ParseError("line " + std::to_string(line_no) + ": too few columns");
    }

    const std::string notes = notes_col >= 0 && notes_col < static_cast<int>(fields.size())
                                  ? unquote(fields[notes_col])
                                  : "";
    const std::string year_text = unquote(fields[year_col]);
    const std::string deaths_text = unquote(fields[deaths_col]);

    if (notes == "Total") {
      if (!year_text.empty()) {
        batch_for(parse_year(year_text, line_no)).reported_total =
            parse_count(deaths_text, line_no);
      }
      continue;  // grand totals (no year) are ignored
    }
    if (!notes.empty()) break;  // start of a notes block without the --- sentinel

    if (year_text.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": missing year");
    }
    int bin;
    try {
      bin = wonder_age_group_index(unquote(fields[age_col]));
    } catch (const ParseError& err) {
      throw ParseError("line " + std::to_string(line_no) + ": " + err.what());
    }

    ObservationBatch& batch = batch_for(parse_year(year_text, line_no));
    if (deaths_text == "Suppressed") {
      batch.suppressed[bin] = true;
      batch.deaths[bin] = 0;
    } else {
      batch.deaths[bin] = parse_count(deaths_text, line_no);
      batch.suppressed[bin] = false;
    }
  }

  std::vector<ObservationBatch> out;
  out.reserve(batches.size());
  for (auto& [year, batch] : batches) out.push_back(std::move(batch));
  return out;
}

std::vector<ObservationBatch> parse_canonical_observations(std::istream& input) {
  std::map<int, ObservationBatch> batches;
  std::string line;
  int line_no = 0;
  while (std::getline(input, line)) {
    ++line_no;
    line = (line_no == 1) ? strip_bom(line) : line;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    if (line_no == 1 && stripped.rfind("year", 0) == 0) continue;  // header

    const std::vector<std::string> fields = split(stripped, ',');
    if (fields.size() != 4) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected year,bin_low,bin_high,deaths");
    }
    const int year = parse_year(trim(fields[0]), line_no);
    const double bin_low = std::stod(trim(fields[1]));
    auto& batch = batches[year];
    if (batch.deaths.empty()) {
      batch.year = year;
      batch.deaths.assign(kNumCoarseBins, 0);
      batch.suppressed.assign(kNumCoarseBins, true);
    }
    // Identify the bin by its lower edge: 0, 1, 5, 10, ..., 100.
    int bin = -1;
    if (bin_low == 0.0) bin = 0;
    else if (bin_low == 1.0) bin = 1;
    else if (bin_low >= 5.0 && bin_low <= 100.0 && std::fmod(bin_low, 5.0) == 0.0) {
      bin = 2 + static_cast<int>(bin_low / 5.0) - 1;
    }
    if (bin < 0 || bin >= kNumCoarseBins) {
      throw ParseError("line " + std::to_string(line_no) + ": unknown bin_low " +
                       trim(fields[1]));
    }
    const std::string deaths_text = trim(fields[3]);
    if (deaths_text == "Suppressed") {
      batch.suppressed[bin] = true;
    } else {
      batch.deaths[bin] = parse_count(deaths_text, line_no);
      batch.suppressed[bin] = false;
    }
  }
  std::vector<ObservationBatch> out;
  out.reserve(batches.size());
  for (auto& [year, batch] : batches) out.push_back(std::move(batch));
  return out;
}

PopulationSeries parse_population(std::istream& input) {
  PopulationSeries series;
  std::string line;
  int line_no = 0;
  while (std::getline(input, line)) {
    ++line_no;
    line = (line_no == 1) ? strip_bom(line) : line;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    if (stripped.rfind("year", 0) == 0) continue;  // header

    const std::vector<std::string> fields = split(stripped, ',');
    if (fields.size() != 2) {
      throw ParseError("line " + std::to_string(line_no) + ": expected year,population");
    }
    const int year = parse_year(trim(fields[0]), line_no);
    const double persons = std::stod(trim(fields[1]));
    if (!(persons > 0.0)) {
      throw ParseError("line " + std::to_string(line_no) + ": population must be > 0");
    }
    if (!series.years.empty() && year <= series.years.back()) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": years must strictly increase (got " + std::to_string(year) + ")");
    }
    series.years.push_back(year);
    series.persons.push_back(persons);
  }
  if (series.years.empty()) {
    std::cerr << "warning: population series is empty\n";
  }
  return series;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t hash = 14695981039346656037ULL;  // FNV-1a 64-bit offset basis
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(hash));
  return buffer;
}

namespace {

std::string format_double(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

nlohmann::json metadata_json(const RunOutput& run) {
  return nlohmann::json{{"seed", run.seed},
                        {"config", run.config_text},
                        {"config_hash", run.config_hash},
                        {"data_provenance", run.data_provenance}};
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open output file: " + path);
  out << content;
  if (!out) throw ParseError("write failed: " + path);
}

}  // namespace

void write_output(const RunOutput& run, OutputFormat format, const std::string& path) {
  if (run.times.size() != run.rows.size()) {
    throw ConfigError("write_output: times/rows length mismatch");
  }
  if (format == OutputFormat::json) {
    nlohmann::json doc;
    doc["schema_version"] = run.schema_version;
    doc["metadata"] = metadata_json(run);
    doc["index_name"] = run.index_name;
    doc["columns"] = run.columns;
    doc["times"] = run.times;
    doc["rows"] = run.rows;
    write_file(path, doc.dump(2) + "\n");
    return;
  }

  std::ostringstream csv;
  csv << run.index_name;
  for (const auto& column : run.columns) csv << "," << column;
  csv << "\n";
  for (std::size_t i = 0; i < run.rows.size(); ++i) {
    if (run.rows[i].size() != run.columns.size()) {
      throw ConfigError("write_output: row " + std::to_string(i) + " width mismatch");
    }
    csv << format_double(run.times[i]);
    for (double value : run.rows[i]) csv << "," << format_double(value);
    csv << "\n";
  }
  write_file(path, csv.str());

  nlohmann::json meta;
  meta["schema_version"] = run.schema_version;
  meta["metadata"] = metadata_json(run);
  write_file(path + ".meta.json", meta.dump(2) + "\n");
}

RunOutput read_output_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& err) {
    throw ParseError("invalid JSON in " + path + ": " + err.what());
  }
  try {
    RunOutput run;
    run.schema_version = doc.at("schema_version").get<int>();
    const auto& meta = doc.at("metadata");
    run.seed = meta.at("seed").get<std::uint64_t>();
    run.config_text = meta.at("config").get<std::string>();
    run.config_hash = meta.at("config_hash").get<std::string>();
    run.data_provenance = meta.at("data_provenance").get<std::string>();
    run.index_name = doc.at("index_name").get<std::string>();
    run.columns = doc.at("columns").get<std::vector<std::string>>();
    run.times = doc.at("times").get<std::vector<double>>();
    // Non-finite values serialize as null; map them back to NaN.
    for (const auto& row : doc.at("rows")) {
      std::vector<double> values;
      values.reserve(row.size());
      for (const auto& cell : row) {
        values.push_back(cell.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                        : cell.get<double>());
      }
      run.rows.push_back(std::move(values));
    }
    return run;
  } catch (const nlohmann::json::exception& err) {
    throw ParseError("unexpected schema in " + path + ": " + err.what());
  }
}

}  // namespace agekf::dataio
