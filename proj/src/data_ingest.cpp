#include "eatkit/data_ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "eatkit/error.hpp"

namespace eatkit {

using nlohmann::json;

namespace {

const json& require(const json& j, const char* field) {
  if (!j.is_object() || !j.contains(field)) {
    throw validation_error("config.missing_field", std::string("Data Config is missing field \"") + field + "\"");
  }
  return j.at(field);
}

template <typename T>
T field_as(const json& j, const char* field) {
  try {
    return require(j, field).get<T>();
  } catch (const json::exception& e) {
    throw validation_error("config.field_type", std::string("Data Config field \"") + field + "\": " + e.what());
  }
}

std::string field_string_or(const json& j, const char* field, std::string fallback) {
  if (!j.contains(field) || j.at(field).is_null()) return fallback;
  return field_as<std::string>(j, field);
}

void check_column(int column, const std::string& what) {
  if (column < 1) {
    throw validation_error("config.column", what + " = " + std::to_string(column) + ": columns start from 1");
  }
}

}  // namespace

void DataConfig::validate() const {
  const int as = scenario.alice_settings();
  const int bs = scenario.bob_settings();
  const int ao = scenario.max_alice_outcomes();
  const int bo = scenario.max_bob_outcomes();
  if (static_cast<int>(settings_indices.size()) != as) {
    throw validation_error("config.shape", "settings_indices has " + std::to_string(settings_indices.size()) +
                                               " rows but A_config has " + std::to_string(as) + " settings");
  }
  std::set<int> tags;
  for (const auto& row : settings_indices) {
    if (static_cast<int>(row.size()) != bs) {
      throw validation_error("config.shape", "settings_indices rows must have " + std::to_string(bs) +
                                                 " entries (one per Bob setting)");
    }
    for (int tag : row) {
      if (tag < 1) throw validation_error("config.tag", "settings_indices entries must be positive");
      if (!tags.insert(tag).second) {
        throw validation_error("config.duplicate_tag", "settings_indices tag " + std::to_string(tag) + " is used twice");
      }
    }
  }
  if (static_cast<int>(alice_clicks_column.size()) != ao) {
    throw validation_error("config.shape", "alice_clicks_column needs " + std::to_string(ao) + " columns (AO)");
  }
  if (static_cast<int>(bob_clicks_column.size()) != bo) {
    throw validation_error("config.shape", "bob_clicks_column needs " + std::to_string(bo) + " columns (BO)");
  }
  if (static_cast<int>(alice_bob_clicks_column.size()) != ao) {
    throw validation_error("config.shape", "alice_bob_clicks_column needs " + std::to_string(ao) + " rows (AO)");
  }
  for (const auto& row : alice_bob_clicks_column) {
    if (static_cast<int>(row.size()) != bo) {
      throw validation_error("config.shape", "alice_bob_clicks_column rows need " + std::to_string(bo) + " columns (BO)");
    }
  }
  if (!(time_per_line > 0.0) || !std::isfinite(time_per_line)) {
    throw validation_error("config.time_per_line", "time_per_line must be positive");
  }
  check_column(setting_column_number, "setting_column_number");
  check_column(meta_data_column_number, "meta_data_column_number");
  std::set<int> used{setting_column_number};
  if (!used.insert(meta_data_column_number).second) {
    throw validation_error("config.column_clash", "setting and meta-data columns coincide");
  }
  auto claim = [&](int column, const std::string& what) {
    check_column(column, what);
    if (used.count(column) != 0U && (column == setting_column_number || column == meta_data_column_number)) {
      throw validation_error("config.column_clash", what + " reuses the setting or meta-data column");
    }
  };
  for (int c : alice_clicks_column) claim(c, "alice_clicks_column");
  for (int c : bob_clicks_column) claim(c, "bob_clicks_column");
  std::set<int> coincidence_columns;
  for (const auto& row : alice_bob_clicks_column) {
    for (int c : row) {
      claim(c, "alice_bob_clicks_column");
      if (!coincidence_columns.insert(c).second) {
        throw validation_error("config.column_clash", "coincidence column " + std::to_string(c) + " is used twice");
      }
    }
  }
}

int DataConfig::max_column() const {
  int m = std::max(setting_column_number, meta_data_column_number);
  for (int c : alice_clicks_column) m = std::max(m, c);
  for (int c : bob_clicks_column) m = std::max(m, c);
  for (const auto& row : alice_bob_clicks_column)
    for (int c : row) m = std::max(m, c);
  return m;
}

DataConfig data_config_from_json(const json& j) {
  if (!j.is_object()) throw validation_error("config.not_object", "Data Config must be a JSON object");
  DataConfig c;
  c.scenario = Scenario(field_as<std::vector<int>>(j, "A_config"), field_as<std::vector<int>>(j, "B_config"));
  c.settings_indices = field_as<std::vector<std::vector<int>>>(j, "settings_indices");
  c.alice_clicks_column = field_as<std::vector<int>>(j, "alice_clicks_column");
  c.bob_clicks_column = field_as<std::vector<int>>(j, "bob_clicks_column");
  c.alice_bob_clicks_column = field_as<std::vector<std::vector<int>>>(j, "alice_bob_clicks_column");
  c.time_per_line = field_as<double>(j, "time_per_line");
  c.setting_column_number = field_as<int>(j, "setting_column_number");
  c.meta_data_column_number = field_as<int>(j, "meta_data_column_number");
  c.meta_data_column_value = field_as<std::int64_t>(j, "meta_data_column_value");
  c.directory_with_datafiles = field_string_or(j, "directory_with_datafiles", "");
  c.setup_nickname = field_string_or(j, "setup_nickname", "");
  c.human_description = field_string_or(j, "human_description", "");
  if (j.contains("additional_data_dict") && !j.at("additional_data_dict").is_null()) {
    c.additional_data_dict = j.at("additional_data_dict");
  }
  // Derived fields are optional, but must agree when present.
  const std::pair<const char*, int> derived[] = {
      {"AO", c.scenario.max_alice_outcomes()},
      {"BO", c.scenario.max_bob_outcomes()},
      {"AS", c.scenario.alice_settings()},
      {"BS", c.scenario.bob_settings()},
  };
  for (const auto& [name, expected] : derived) {
    if (j.contains(name) && field_as<int>(j, name) != expected) {
      throw validation_error("config.shape", std::string(name) + " = " + std::to_string(field_as<int>(j, name)) +
                                                 " disagrees with A_config/B_config (expected " +
                                                 std::to_string(expected) + ")");
    }
  }
  c.validate();
  return c;
}

DataConfig parse_data_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw validation_error("config.json", std::string("Data Config is not valid JSON: ") + e.what());
  }
  return data_config_from_json(j);
}

json to_json(const DataConfig& c) {
  json j;
  j["A_config"] = c.scenario.a_config();
  j["B_config"] = c.scenario.b_config();
  j["AO"] = c.scenario.max_alice_outcomes();
  j["BO"] = c.scenario.max_bob_outcomes();
  j["AS"] = c.scenario.alice_settings();
  j["BS"] = c.scenario.bob_settings();
  j["settings_indices"] = c.settings_indices;
  j["alice_clicks_column"] = c.alice_clicks_column;
  j["bob_clicks_column"] = c.bob_clicks_column;
  j["alice_bob_clicks_column"] = c.alice_bob_clicks_column;
  j["time_per_line"] = c.time_per_line;
  j["setting_column_number"] = c.setting_column_number;
  j["meta_data_column_number"] = c.meta_data_column_number;
  j["meta_data_column_value"] = c.meta_data_column_value;
  j["directory_with_datafiles"] = c.directory_with_datafiles;
  j["setup_nickname"] = c.setup_nickname;
  j["human_description"] = c.human_description;
  j["additional_data_dict"] = c.additional_data_dict;
  return j;
}

std::uint64_t PairCounts::total_coincidences() const {
  std::uint64_t s = 0;
  for (const auto& row : coincidences)
    for (auto v : row) s += v;
  return s;
}

AggregatedCounts::AggregatedCounts(Scenario s) : scenario(std::move(s)) {
  for (int x = 0; x < scenario.alice_settings(); ++x) {
    for (int y = 0; y < scenario.bob_settings(); ++y) {
      PairCounts p;
      const auto ao = static_cast<std::size_t>(scenario.alice_outcomes(x));
      const auto bo = static_cast<std::size_t>(scenario.bob_outcomes(y));
      p.alice_clicks.assign(ao, 0);
      p.bob_clicks.assign(bo, 0);
      p.coincidences.assign(ao, std::vector<std::uint64_t>(bo, 0));
      pairs.push_back(std::move(p));
    }
  }
}

PairCounts& AggregatedCounts::at(int x, int y) {
  return pairs.at(static_cast<std::size_t>(x * scenario.bob_settings() + y));
}

const PairCounts& AggregatedCounts::at(int x, int y) const {
  return pairs.at(static_cast<std::size_t>(x * scenario.bob_settings() + y));
}

void AggregatedCounts::merge(const AggregatedCounts& other) {
  if (!(scenario == other.scenario)) {
    throw validation_error("counts.scenario_mismatch", "cannot merge counts from different scenarios");
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& p = pairs[i];
    const auto& q = other.pairs[i];
    for (std::size_t a = 0; a < p.alice_clicks.size(); ++a) p.alice_clicks[a] += q.alice_clicks[a];
    for (std::size_t b = 0; b < p.bob_clicks.size(); ++b) p.bob_clicks[b] += q.bob_clicks[b];
    for (std::size_t a = 0; a < p.coincidences.size(); ++a)
      for (std::size_t b = 0; b < p.coincidences[a].size(); ++b) p.coincidences[a][b] += q.coincidences[a][b];
    p.rows += q.rows;
    p.total_time += q.total_time;
  }
}

json to_json(const AggregatedCounts& counts) {
  json pairs = json::array();
  for (int x = 0; x < counts.scenario.alice_settings(); ++x) {
    for (int y = 0; y < counts.scenario.bob_settings(); ++y) {
      const auto& p = counts.at(x, y);
      pairs.push_back({{"x", x},
                       {"y", y},
                       {"alice_clicks", p.alice_clicks},
                       {"bob_clicks", p.bob_clicks},
                       {"coincidences", p.coincidences},
                       {"rows", p.rows},
                       {"total_time", p.total_time}});
    }
  }
  return {{"A_config", counts.scenario.a_config()}, {"B_config", counts.scenario.b_config()}, {"pairs", pairs}};
}

AggregatedCounts aggregated_counts_from_json(const json& j) {
  try {
    AggregatedCounts counts(
        Scenario(j.at("A_config").get<std::vector<int>>(), j.at("B_config").get<std::vector<int>>()));
    for (const auto& e : j.at("pairs")) {
      auto& p = counts.at(e.at("x").get<int>(), e.at("y").get<int>());
      p.alice_clicks = e.at("alice_clicks").get<std::vector<std::uint64_t>>();
      p.bob_clicks = e.at("bob_clicks").get<std::vector<std::uint64_t>>();
      p.coincidences = e.at("coincidences").get<std::vector<std::vector<std::uint64_t>>>();
      p.rows = e.at("rows").get<std::uint64_t>();
      p.total_time = e.at("total_time").get<double>();
    }
    return counts;
  } catch (const json::exception& e) {
    throw validation_error("counts.schema", std::string("malformed aggregated counts: ") + e.what());
  }
}

bool accumulate_line(const DataConfig& config, std::string_view line, AggregatedCounts& counts,
                     IngestReport& report, const std::string& source, std::size_t line_no) {
  std::vector<std::int64_t> cols;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos >= line.size()) break;
    std::size_t end = pos;
    while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) ++end;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(line.data() + pos, line.data() + end, v);
    if (ec != std::errc() || ptr != line.data() + end) {
      std::ostringstream os;
      os << source << ":" << line_no << ": column " << cols.size() + 1 << ": \"" << line.substr(pos, end - pos)
         << "\" is not an integer";
      throw validation_error("data.token", os.str());
    }
    cols.push_back(v);
    pos = end;
  }
  if (cols.empty()) return false;
  if (static_cast<int>(cols.size()) < config.max_column()) {
    ++report.short_rows;
    std::ostringstream os;
    os << source << ":" << line_no << ": row has " << cols.size() << " columns, layout needs " << config.max_column();
    report.warnings.push_back(os.str());
    return false;
  }
  auto col = [&](int one_based) { return cols[static_cast<std::size_t>(one_based - 1)]; };
  if (col(config.meta_data_column_number) != config.meta_data_column_value) {
    ++report.ignored_metadata_rows;
    return false;
  }
  const auto tag = col(config.setting_column_number);
  int sx = -1;
  int sy = -1;
  for (int x = 0; x < static_cast<int>(config.settings_indices.size()); ++x)
    for (int y = 0; y < static_cast<int>(config.settings_indices[static_cast<std::size_t>(x)].size()); ++y)
      if (config.settings_indices[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)] == tag) {
        sx = x;
        sy = y;
      }
  if (sx < 0) {
    ++report.unknown_tag_rows;
    std::ostringstream os;
    os << source << ":" << line_no << ": unknown setting tag " << tag;
    report.warnings.push_back(os.str());
    return false;
  }
  for (auto v : cols) {
    if (v < 0) {
      std::ostringstream os;
      os << source << ":" << line_no << ": negative count " << v;
      throw validation_error("data.negative", os.str());
    }
  }
  auto& p = counts.at(sx, sy);
  const auto& s = counts.scenario;
  for (int a = 0; a < s.alice_outcomes(sx); ++a)
    p.alice_clicks[static_cast<std::size_t>(a)] += static_cast<std::uint64_t>(col(config.alice_clicks_column[static_cast<std::size_t>(a)]));
  for (int b = 0; b < s.bob_outcomes(sy); ++b)
    p.bob_clicks[static_cast<std::size_t>(b)] += static_cast<std::uint64_t>(col(config.bob_clicks_column[static_cast<std::size_t>(b)]));
  for (int a = 0; a < s.alice_outcomes(sx); ++a)
    for (int b = 0; b < s.bob_outcomes(sy); ++b)
      p.coincidences[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] += static_cast<std::uint64_t>(
          col(config.alice_bob_clicks_column[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]));
  ++p.rows;
  p.total_time = config.time_per_line * static_cast<double>(p.rows);
  ++report.accepted_rows;
  return true;
}

AggregatedCounts parse_data_files(const DataConfig& config, IngestReport* report_out) {
  namespace fs = std::filesystem;
  config.validate();
  IngestReport report;
  const fs::path dir(config.directory_with_datafiles);
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw io_error("data.directory", "directory_with_datafiles \"" + dir.string() + "\" is not a readable directory");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".dat") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  AggregatedCounts counts(config.scenario);
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw io_error("data.unreadable", "cannot read " + file.string());
    report.files.push_back(file.filename().string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      accumulate_line(config, line, counts, report, file.filename().string(), line_no);
    }
  }
  // coincidence counts can never exceed the singles they are drawn from
  for (int x = 0; x < counts.scenario.alice_settings(); ++x)
    for (int y = 0; y < counts.scenario.bob_settings(); ++y) {
      const auto& p = counts.at(x, y);
      for (std::size_t a = 0; a < p.coincidences.size(); ++a)
        for (std::size_t b = 0; b < p.coincidences[a].size(); ++b)
          if (p.coincidences[a][b] > std::min(p.alice_clicks[a], p.bob_clicks[b])) {
            std::ostringstream os;
            os << "setting pair (" << x << "," << y << "): coincidences[" << a << "][" << b
               << "] exceed the corresponding singles";
            report.warnings.push_back(os.str());
          }
    }
  if (report_out != nullptr) *report_out = report;
  if (report.accepted_rows == 0) {
    std::ostringstream os;
    os << "no accepted rows in " << files.size() << " .dat file(s) under \"" << dir.string() << "\" ("
       << report.ignored_metadata_rows << " rows ignored for meta-data value, " << report.unknown_tag_rows
       << " with unknown setting tags, " << report.short_rows << " too short)";
    throw validation_error("data.no_rows", os.str());
  }
  return counts;
}

BehaviorEstimate counts_to_behavior(const AggregatedCounts& counts) {
  const auto& s = counts.scenario;
  BehaviorEstimate out{BehaviorDistribution(s), 0.0};
  double singles = 0.0;
  double time = 0.0;
  for (int x = 0; x < s.alice_settings(); ++x) {
    for (int y = 0; y < s.bob_settings(); ++y) {
      const auto& p = counts.at(x, y);
      const auto total = p.total_coincidences();
      if (total == 0) {
        throw validation_error("data.empty_pair", "setting pair (" + std::to_string(x) + "," + std::to_string(y) +
                                                      ") has no coincidences");
      }
      for (int a = 0; a < s.alice_outcomes(x); ++a)
        for (int b = 0; b < s.bob_outcomes(y); ++b)
          out.behavior(a, b, x, y) = static_cast<double>(p.coincidences[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]) /
                                     static_cast<double>(total);
      for (auto c : p.alice_clicks) singles += static_cast<double>(c);
      time += p.total_time;
    }
  }
  out.events_per_second = time > 0.0 ? singles / time : 0.0;
  return out;
}

ValueWithError expression_value_with_error(const BellExpression& expr, const AggregatedCounts& counts,
                                           double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw validation_error("error_bar.confidence", "confidence must lie in (0,1)");
  }
  if (!(expr.scenario() == counts.scenario)) {
    throw validation_error("expression.scenario_mismatch", "expression and counts use different scenarios");
  }
  ValueWithError out;
  out.method = "hoeffding-union";
  out.value = evaluate_expression(expr, counts_to_behavior(counts).behavior);
  const auto m = static_cast<double>(expr.atom_count());
  if (m == 0.0) return out;
  const double log_term = std::log(2.0 * m / (1.0 - confidence));
  for (const auto& t : expr.terms()) {
    const auto& at = t.atom;
    double span = 1.0;
    int x = at.x;
    int y = at.y;
    switch (at.kind) {
      case BellAtom::Kind::correlator:
        span = 2.0;
        break;
      case BellAtom::Kind::marginal_a:
        y = 0;
        break;
      case BellAtom::Kind::marginal_b:
        x = 0;
        break;
      case BellAtom::Kind::joint:
        break;
      case BellAtom::Kind::constant:
        continue;
    }
    const auto n = static_cast<double>(counts.at(x, y).total_coincidences());
    if (n == 0.0) {
      throw validation_error("data.empty_pair", to_string(at) + " refers to a setting pair without data");
    }
    out.half_width += std::abs(t.coefficient) * span * std::sqrt(log_term / (2.0 * n));
  }
  return out;
}

}  // namespace eatkit
