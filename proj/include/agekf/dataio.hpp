#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "agekf/errors.hpp"

namespace agekf::dataio {

/// One year of death counts in the 22 coarse age bins. Suppressed cells
/// (WONDER suppresses counts of 1-9) carry no count and are flagged.
struct ObservationBatch {
  int year = 0;
  std::vector<long long> deaths;      // 22 entries, bin order by ascending age
  std::vector<bool> suppressed;       // 22 flags
  std::optional<long long> reported_total;  // from a Total row, when present
};

/// Annual population series (year, persons).
struct PopulationSeries {
  std::vector<int> years;
  std::vector<double> persons;

  std::size_t size() const { return years.size(); }
};

/// Serializable results of one filter/forecast run plus the metadata needed
/// to reproduce it bit-identically.
struct RunOutput {
  int schema_version = 1;
  std::uint64_t seed = 0;
  std::string config_text;      // canonical flat key = value listing
  std::string config_hash;      // fnv1a-64 of config_text, hex
  std::string data_provenance;  // input files, fixture notes
  std::string index_name = "time";  // leading-column label (time, age, year)
  std::vector<std::string> columns;
  std::vector<double> times;    // leading-column values
  std::vector<std::vector<double>> rows;  // rows[i] matches columns
};

/// Number of coarse reporting bins.
inline constexpr int kNumCoarseBins = 22;

/// Index of a WONDER age-group label ("< 1 year", "15-19 years",
/// "100+ years") in coarse-bin order; throws ParseError for unknown labels.
int wonder_age_group_index(const std::string& label);

/// Parse a CDC WONDER tab-separated export: header row, quoted data rows,
/// optional per-year Total rows, then a "---" delimited notes block that is
/// ignored. Returns one batch per year, sorted by year.
std::vector<ObservationBatch> parse_wonder(std::istream& input);

/// Parse the canonical observation schema: year,bin_low,bin_high,deaths
/// (deaths may be the literal "Suppressed"). Header row optional.
std::vector<ObservationBatch> parse_canonical_observations(std::istream& input);

/// Parse a two-column year,population CSV. Years must strictly increase.
/// An empty stream yields an empty series (with a warning on stderr).
PopulationSeries parse_population(std::istream& input);

/// FNV-1a 64-bit hash, hex encoded; used to fingerprint configurations.
std::string fnv1a_hex(const std::string& text);

/// Write a run as CSV (plus a .meta.json sidecar carrying the metadata) or
/// as a single versioned JSON document.
enum class OutputFormat { csv, json };
void write_output(const RunOutput& run, OutputFormat format, const std::string& path);

/// Read back a JSON document produced by write_output.
RunOutput read_output_json(const std::string& path);

}  // namespace agekf::dataio
