#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "eatkit/bell_expression.hpp"
#include "eatkit/scenario.hpp"

namespace eatkit {

/// Column layout of experimental .dat files. Column numbers are 1-based, as
/// in the JSON file.
struct DataConfig {
  Scenario scenario;
  std::vector<std::vector<int>> settings_indices;        // [x][y] -> row tag
  std::vector<int> alice_clicks_column;                   // per outcome a
  std::vector<int> bob_clicks_column;                     // per outcome b
  std::vector<std::vector<int>> alice_bob_clicks_column;  // [a][b]
  double time_per_line = 1.0;
  int setting_column_number = 1;
  int meta_data_column_number = 2;
  std::int64_t meta_data_column_value = 0;
  std::string directory_with_datafiles;
  std::string setup_nickname;
  std::string human_description;
  nlohmann::json additional_data_dict = nlohmann::json::object();

  /// Throws validation errors naming the offending field.
  void validate() const;
  /// Largest column number referenced by the layout.
  int max_column() const;
};

DataConfig parse_data_config(const std::string& json_text);
DataConfig data_config_from_json(const nlohmann::json& j);
/// Field names and order follow the reference Data Config files, including
/// the derived AO/BO/AS/BS entries.
nlohmann::json to_json(const DataConfig& config);

/// Summed counts for one setting pair.
struct PairCounts {
  std::vector<std::uint64_t> alice_clicks;               // [a]
  std::vector<std::uint64_t> bob_clicks;                 // [b]
  std::vector<std::vector<std::uint64_t>> coincidences;  // [a][b]
  std::uint64_t rows = 0;
  double total_time = 0.0;

  std::uint64_t total_coincidences() const;
  friend bool operator==(const PairCounts&, const PairCounts&) = default;
};

struct AggregatedCounts {
  Scenario scenario;
  std::vector<PairCounts> pairs;  // x * BS + y

  AggregatedCounts() = default;
  explicit AggregatedCounts(Scenario s);

  PairCounts& at(int x, int y);
  const PairCounts& at(int x, int y) const;

  /// Sums another set of counts into this one (commutative).
  void merge(const AggregatedCounts& other);

  friend bool operator==(const AggregatedCounts&, const AggregatedCounts&) = default;
};

nlohmann::json to_json(const AggregatedCounts& counts);
AggregatedCounts aggregated_counts_from_json(const nlohmann::json& j);

struct IngestReport {
  std::vector<std::string> files;
  std::uint64_t accepted_rows = 0;
  std::uint64_t ignored_metadata_rows = 0;
  std::uint64_t unknown_tag_rows = 0;
  std::uint64_t short_rows = 0;
  std::vector<std::string> warnings;
};

/// Accepts one whitespace-separated line into `counts`. Returns false (and
/// updates the report) when the row is skipped. Throws on non-integer tokens.
bool accumulate_line(const DataConfig& config, std::string_view line, AggregatedCounts& counts,
                     IngestReport& report, const std::string& source = "<input>", std::size_t line_no = 0);

/// Reads every *.dat file of config.directory_with_datafiles in filename order.
AggregatedCounts parse_data_files(const DataConfig& config, IngestReport* report = nullptr);

struct BehaviorEstimate {
  BehaviorDistribution behavior;
  double events_per_second = 0.0;
};

/// P(a,b|x,y) from coincidence ratios. The event rate is Alice's singles
/// total over the total acquisition time.
BehaviorEstimate counts_to_behavior(const AggregatedCounts& counts);

struct ValueWithError {
  double value = 0.0;
  double half_width = 0.0;
  std::string method;
};

/// Expression value on the estimated behavior plus a two-sided Hoeffding
/// half-width, union-bounded over the expression's atoms.
ValueWithError expression_value_with_error(const BellExpression& expr, const AggregatedCounts& counts,
                                           double confidence);

}  // namespace eatkit
