#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eatkit/data_ingest.hpp"
#include "eatkit/eat.hpp"
#include "eatkit/relaxation.hpp"

namespace eatkit {

enum class StageKind { data_config, eber_data, certificate, min_tradeoff, sweep_result };

std::string to_string(StageKind k);
/// Throws "edq.kind" naming the unknown kind.
StageKind stage_kind_from_string(const std::string& s);

inline constexpr int kEdqVersion = 1;

/// One saved pipeline stage. Payloads are the JSON forms of the stage types.
struct EdqDocument {
  StageKind kind = StageKind::data_config;
  int version = kEdqVersion;
  nlohmann::json payload = nlohmann::json::object();
  std::string created_at;  // ISO 8601, UTC
  std::string setup_nickname;
};

/// Stamps created_at with the current time.
EdqDocument make_document(StageKind kind, nlohmann::json payload, std::string setup_nickname = {});

nlohmann::json to_json(const EdqDocument& d);
/// Checks the envelope and that the payload decodes as its kind.
EdqDocument edq_from_json(const nlohmann::json& j);
/// Throws a validation error when `payload` does not decode as `kind`.
void validate_payload(StageKind kind, const nlohmann::json& payload);

void save_stage(const EdqDocument& doc, const std::filesystem::path& path);
/// A bare Data Config JSON file is accepted as a data-config document.
EdqDocument load_stage(const std::filesystem::path& path);
/// Like load_stage, but also requires the given kind.
EdqDocument load_stage(const std::filesystem::path& path, StageKind expected);

nlohmann::json to_json(const IngestReport& r);
IngestReport ingest_report_from_json(const nlohmann::json& j);

/// Parsed experimental data: the configuration it was read with, the summed
/// counts and the ingestion report.
struct EberData {
  DataConfig config;
  AggregatedCounts counts;
  IngestReport report;

  BehaviorEstimate estimate() const { return counts_to_behavior(counts); }
};

/// Also carries the estimated behavior ([x][y][a][b]) and event rate.
nlohmann::json to_json(const EberData& e);
EberData eber_data_from_json(const nlohmann::json& j);

EberData parse_data(const DataConfig& config);

struct CertificateOptions {
  double confidence = 0.99;
  /// Move each measured value toward its value on the uniform behavior by
  /// the statistical half-width (never past it).
  bool derate = true;
};

/// Certificate values for `expressions` measured on the counts. Only the
/// scenario, expressions, values, nickname and measurement record are set;
/// the spot, entropy and use case are left to the caller.
MinTradeoffRequest certificate_from_eber(const EberData& eber, const std::vector<std::string>& expressions,
                                         const CertificateOptions& options = {});

/// Checks a certificate before any solve: expressions parse, the spot is a
/// valid setting pair and key distribution has H(A|B) at the spot.
void check_certificate(const MinTradeoffRequest& r);

/// Certificate from a request body with the min-tradeoff request keys.
/// Without "values" the expressions are measured on `eber` (required then),
/// using "confidence" (default 0.99) and "derate" (default true).
MinTradeoffRequest certificate_from_body(const nlohmann::json& body, const EberData* eber);

/// Sweep stage: the min-tradeoff it was computed from, the request, the cells.
struct SweepDocument {
  MinTradeoffInfo min_tradeoff;
  SweepRequest request;
  EatSweepResult result;
};

nlohmann::json to_json(const SweepDocument& s);
SweepDocument sweep_document_from_json(const nlohmann::json& j);

SweepDocument run_rates(const MinTradeoffInfo& f, const SweepRequest& request);

/// Sweep axis by name. Accepts the CSV column names and the aliases
/// -log-beta, chunk-time, events-per-sec, eps-s and p-omega.
enum class SweepAxis { log2_inv_beta, gamma, chunk_time, events_per_second, eps_s, p_omega };

SweepAxis sweep_axis_from_string(const std::string& s);
std::string to_string(SweepAxis a);

/// Net gain on an x-y grid, maximized over every other parameter.
struct SweepGrid {
  SweepAxis x = SweepAxis::log2_inv_beta;
  SweepAxis y = SweepAxis::gamma;
  std::vector<double> xs;                  // ascending
  std::vector<double> ys;                  // ascending
  std::vector<std::vector<double>> values;  // [iy][ix]
};

SweepGrid sweep_grid(const EatSweepResult& r, SweepAxis x, SweepAxis y);
/// Long format: header "<x>,<y>,net_gain_per_second", one row per grid point.
std::string to_csv(const SweepGrid& g);
nlohmann::json to_json(const SweepGrid& g);

}  // namespace eatkit
