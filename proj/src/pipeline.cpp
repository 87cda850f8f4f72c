#include "eatkit/pipeline.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <sstream>

#include "eatkit/bell_expression.hpp"
#include "eatkit/error.hpp"

namespace eatkit {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<StageKind, const char*>, 5> kKinds{{{StageKind::data_config, "data-config"},
                                                                   {StageKind::eber_data, "eber-data"},
                                                                   {StageKind::certificate, "certificate"},
                                                                   {StageKind::min_tradeoff, "min-tradeoff"},
                                                                   {StageKind::sweep_result, "sweep-result"}}};

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json behavior_to_json(const BehaviorDistribution& p) {
  const auto& s = p.scenario();
  json out = json::array();
  for (int x = 0; x < s.alice_settings(); ++x) {
    json row = json::array();
    for (int y = 0; y < s.bob_settings(); ++y) {
      json block = json::array();
      for (int a = 0; a < s.alice_outcomes(x); ++a) {
        json line = json::array();
        for (int b = 0; b < s.bob_outcomes(y); ++b) line.push_back(p(a, b, x, y));
        block.push_back(line);
      }
      row.push_back(block);
    }
    out.push_back(row);
  }
  return out;
}

double axis_value(const EatCell& c, SweepAxis a) {
  switch (a) {
    case SweepAxis::log2_inv_beta: return c.log2_inv_beta;
    case SweepAxis::gamma: return c.params.gamma;
    case SweepAxis::chunk_time: return c.params.chunk_time;
    case SweepAxis::events_per_second: return c.params.events_per_second;
    case SweepAxis::eps_s: return c.params.eps_s;
    case SweepAxis::p_omega: return c.params.p_omega;
  }
  return 0.0;
}

}  // namespace

std::string to_string(StageKind k) {
  for (const auto& [kind, name] : kKinds)
    if (kind == k) return name;
  return "unknown";
}

StageKind stage_kind_from_string(const std::string& s) {
  for (const auto& [kind, name] : kKinds)
    if (s == name) return kind;
  throw validation_error("edq.kind", "unknown .edq kind '" + s +
                                         "' (expected data-config, eber-data, certificate, min-tradeoff or "
                                         "sweep-result)");
}

EdqDocument make_document(StageKind kind, json payload, std::string setup_nickname) {
  EdqDocument d;
  d.kind = kind;
  d.payload = std::move(payload);
  d.created_at = now_utc();
  d.setup_nickname = std::move(setup_nickname);
  return d;
}

json to_json(const EdqDocument& d) {
  return {{"kind", to_string(d.kind)},
          {"version", d.version},
          {"created_at", d.created_at},
          {"setup_nickname", d.setup_nickname},
          {"payload", d.payload}};
}

void validate_payload(StageKind kind, const json& payload) {
  try {
    switch (kind) {
      case StageKind::data_config: data_config_from_json(payload); break;
      case StageKind::eber_data: eber_data_from_json(payload); break;
      case StageKind::certificate: min_tradeoff_request_from_json(payload); break;
      case StageKind::min_tradeoff: min_tradeoff_from_json(payload); break;
      case StageKind::sweep_result: sweep_document_from_json(payload); break;
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::validation) throw;
    throw validation_error("edq.payload", "payload is not a valid " + to_string(kind) + " document: " + e.what());
  }
}

EdqDocument edq_from_json(const json& j) {
  if (!j.is_object()) throw validation_error("edq.schema", ".edq document must be a JSON object");
  for (const char* key : {"kind", "version", "payload"}) {
    if (!j.contains(key)) throw validation_error("edq.schema", std::string(".edq document lacks \"") + key + "\"");
  }
  if (!j.at("kind").is_string()) throw validation_error("edq.schema", ".edq kind must be a string");
  EdqDocument d;
  d.kind = stage_kind_from_string(j.at("kind").get<std::string>());
  if (!j.at("version").is_number_integer()) throw validation_error("edq.version", ".edq version must be an integer");
  d.version = j.at("version").get<int>();
  if (d.version != kEdqVersion) {
    throw validation_error("edq.version", "unsupported .edq version " + std::to_string(d.version));
  }
  d.payload = j.at("payload");
  d.created_at = j.value("created_at", std::string{});
  d.setup_nickname = j.value("setup_nickname", std::string{});
  validate_payload(d.kind, d.payload);
  return d;
}

void save_stage(const EdqDocument& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("io.write", "cannot open " + path.string() + " for writing");
  out << to_json(doc).dump(2) << "\n";
  out.close();
  if (!out) throw io_error("io.write", "failed writing " + path.string());
}

EdqDocument load_stage(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("io.read", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw validation_error("edq.json", path.string() + " is not valid JSON: " + e.what());
  }
  if (j.is_object() && !j.contains("kind") && j.contains("settings_indices")) {
    const DataConfig config = data_config_from_json(j);
    return make_document(StageKind::data_config, to_json(config), config.setup_nickname);
  }
  return edq_from_json(j);
}

EdqDocument load_stage(const std::filesystem::path& path, StageKind expected) {
  auto d = load_stage(path);
  if (d.kind != expected) {
    throw validation_error("edq.kind_mismatch", path.string() + " holds a " + to_string(d.kind) +
                                                    " document, expected " + to_string(expected));
  }
  return d;
}

json to_json(const IngestReport& r) {
  return {{"files", r.files},
          {"accepted_rows", r.accepted_rows},
          {"ignored_metadata_rows", r.ignored_metadata_rows},
          {"unknown_tag_rows", r.unknown_tag_rows},
          {"short_rows", r.short_rows},
          {"warnings", r.warnings}};
}

IngestReport ingest_report_from_json(const json& j) {
  try {
    IngestReport r;
    r.files = j.value("files", std::vector<std::string>{});
    r.accepted_rows = j.at("accepted_rows").get<std::uint64_t>();
    r.ignored_metadata_rows = j.value("ignored_metadata_rows", std::uint64_t{0});
    r.unknown_tag_rows = j.value("unknown_tag_rows", std::uint64_t{0});
    r.short_rows = j.value("short_rows", std::uint64_t{0});
    r.warnings = j.value("warnings", std::vector<std::string>{});
    return r;
  } catch (const json::exception& e) {
    throw validation_error("eber.report", std::string("malformed ingest report: ") + e.what());
  }
}

json to_json(const EberData& e) {
  const auto est = e.estimate();
  return {{"config", to_json(e.config)},
          {"counts", to_json(e.counts)},
          {"report", to_json(e.report)},
          {"behavior", behavior_to_json(est.behavior)},
          {"events_per_second", est.events_per_second}};
}

EberData eber_data_from_json(const json& j) {
  if (!j.is_object() || !j.contains("config") || !j.contains("counts") || !j.contains("report")) {
    throw validation_error("eber.schema", "eber data needs config, counts and report");
  }
  EberData e;
  e.config = data_config_from_json(j.at("config"));
  e.counts = aggregated_counts_from_json(j.at("counts"));
  e.report = ingest_report_from_json(j.at("report"));
  if (!(e.counts.scenario == e.config.scenario)) {
    throw validation_error("eber.scenario", "counts and config describe different scenarios");
  }
  return e;
}

EberData parse_data(const DataConfig& config) {
  EberData e;
  e.config = config;
  e.counts = parse_data_files(config, &e.report);
  return e;
}

MinTradeoffRequest certificate_from_eber(const EberData& eber, const std::vector<std::string>& expressions,
                                         const CertificateOptions& options) {
  if (expressions.empty()) throw validation_error("certificate.empty", "at least one expression is required");
  const auto& scenario = eber.config.scenario;
  const auto uniform = uniform_behavior(scenario);
  MinTradeoffRequest r;
  r.scenario = scenario;
  r.setup_nickname = eber.config.setup_nickname;
  json measured = json::array();
  for (const auto& text : expressions) {
    const auto expr = parse_expression(text, scenario);
    const auto v = expression_value_with_error(expr, eber.counts, options.confidence);
    double target = v.value;
    if (options.derate) {
      const double u = evaluate_expression(expr, uniform);
      const double step = std::min(v.half_width, std::abs(v.value - u));
      target = v.value > u ? v.value - step : v.value + step;
    }
    r.expressions.push_back(text);
    r.values.push_back(target);
    measured.push_back({{"expression", text},
                        {"measured", v.value},
                        {"half_width", v.half_width},
                        {"method", v.method},
                        {"certificate_value", target}});
  }
  r.additional_data = {{"measurements", measured},
                       {"confidence", options.confidence},
                       {"derated", options.derate},
                       {"events_per_second", eber.estimate().events_per_second}};
  return r;
}

void check_certificate(const MinTradeoffRequest& r) {
  if (r.expressions.empty()) throw validation_error("certificate.empty", "at least one expression is required");
  if (r.expressions.size() != r.values.size()) {
    throw validation_error("certificate.arity", "expressions and values differ in length");
  }
  for (const auto& e : r.expressions) parse_expression(e, r.scenario);
  if (r.spot.first < 0 || r.spot.second < 0) throw validation_error("certificate.spot", "spot setting is negative");
  if (r.level < 1) throw validation_error("certificate.level", "relaxation level must be at least 1");
  if (r.entropy_type == EntropyType::von_neumann && r.m_radau < 1) {
    throw validation_error("certificate.m_radau", "von Neumann entropy needs m_radau >= 1");
  }
  if (r.use_case == UseCase::key_distribution && !r.hab.contains(r.spot)) {
    throw validation_error("certificate.hab", "key distribution needs H(A|B) at spot setting (" +
                                                  std::to_string(r.spot.first) + "," +
                                                  std::to_string(r.spot.second) + ")");
  }
}

MinTradeoffRequest certificate_from_body(const json& body, const EberData* eber) {
  if (!body.is_object()) throw validation_error("certificate.body", "certificate body must be a JSON object");
  json j = body;
  MinTradeoffRequest r;
  if (body.contains("values")) {
    if (eber && !j.contains("A_config")) {
      j["A_config"] = eber->config.scenario.a_config();
      j["B_config"] = eber->config.scenario.b_config();
    }
    r = min_tradeoff_request_from_json(j);
  } else {
    if (!eber) throw validation_error("certificate.no_data", "no parsed data to measure the certificate on");
    std::vector<std::string> expressions;
    CertificateOptions options;
    try {
      expressions = body.at("expressions").get<std::vector<std::string>>();
      options.confidence = body.value("confidence", options.confidence);
      options.derate = body.value("derate", options.derate);
    } catch (const json::exception& e) {
      throw validation_error("certificate.body", std::string("malformed certificate body: ") + e.what());
    }
    if (!(options.confidence > 0.0 && options.confidence < 1.0)) {
      throw validation_error("certificate.confidence", "confidence must lie in (0,1)");
    }
    json merged = to_json(certificate_from_eber(*eber, expressions, options));
    for (const char* key : {"spot_setting", "relaxation_level", "m_radau", "entropy_type", "use_case", "guess",
                            "hab_dict", "setup_nickname"}) {
      if (body.contains(key)) merged[key] = body.at(key);
    }
    if (!merged.contains("spot_setting")) merged["spot_setting"] = {0, 0};
    r = min_tradeoff_request_from_json(merged);
  }
  check_certificate(r);
  return r;
}

json to_json(const SweepDocument& s) {
  return {{"min_tradeoff", to_json(s.min_tradeoff)}, {"request", to_json(s.request)}, {"result", to_json(s.result)}};
}

SweepDocument sweep_document_from_json(const json& j) {
  if (!j.is_object() || !j.contains("min_tradeoff") || !j.contains("request") || !j.contains("result")) {
    throw validation_error("sweep.schema", "sweep document needs min_tradeoff, request and result");
  }
  SweepDocument s;
  s.min_tradeoff = min_tradeoff_from_json(j.at("min_tradeoff"));
  s.request = sweep_request_from_json(j.at("request"));
  s.result = eat_sweep_result_from_json(j.at("result"));
  return s;
}

SweepDocument run_rates(const MinTradeoffInfo& f, const SweepRequest& request) {
  SweepDocument s;
  s.min_tradeoff = f;
  s.request = request;
  s.result = sweep(f, request, *default_backend());
  return s;
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "log2_inv_beta" || s == "-log-beta" || s == "-log beta" || s == "beta") return SweepAxis::log2_inv_beta;
  if (s == "gamma") return SweepAxis::gamma;
  if (s == "chunk_time" || s == "chunk-time") return SweepAxis::chunk_time;
  if (s == "events_per_second" || s == "events-per-sec" || s == "events-per-second") {
    return SweepAxis::events_per_second;
  }
  if (s == "eps_s" || s == "eps-s") return SweepAxis::eps_s;
  if (s == "p_omega" || s == "p-omega") return SweepAxis::p_omega;
  throw validation_error("grid.axis", "unknown sweep axis '" + s + "'");
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::log2_inv_beta: return "log2_inv_beta";
    case SweepAxis::gamma: return "gamma";
    case SweepAxis::chunk_time: return "chunk_time";
    case SweepAxis::events_per_second: return "events_per_second";
    case SweepAxis::eps_s: return "eps_s";
    case SweepAxis::p_omega: return "p_omega";
  }
  return "unknown";
}

SweepGrid sweep_grid(const EatSweepResult& r, SweepAxis x, SweepAxis y) {
  if (x == y) throw validation_error("grid.axis", "x and y axes must differ");
  if (r.cells.empty()) throw validation_error("grid.empty", "sweep result has no cells");
  SweepGrid g;
  g.x = x;
  g.y = y;
  for (const auto& c : r.cells) {
    g.xs.push_back(axis_value(c, x));
    g.ys.push_back(axis_value(c, y));
  }
  for (auto* v : {&g.xs, &g.ys}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  g.values.assign(g.ys.size(), std::vector<double>(g.xs.size(), -std::numeric_limits<double>::infinity()));
  for (const auto& c : r.cells) {
    const auto ix = std::lower_bound(g.xs.begin(), g.xs.end(), axis_value(c, x)) - g.xs.begin();
    const auto iy = std::lower_bound(g.ys.begin(), g.ys.end(), axis_value(c, y)) - g.ys.begin();
    auto& v = g.values[static_cast<std::size_t>(iy)][static_cast<std::size_t>(ix)];
    v = std::max(v, c.net_gain);
  }
  return g;
}

std::string to_csv(const SweepGrid& g) {
  std::ostringstream os;
  os << to_string(g.x) << "," << to_string(g.y) << ",net_gain_per_second\n";
  for (std::size_t iy = 0; iy < g.ys.size(); ++iy)
    for (std::size_t ix = 0; ix < g.xs.size(); ++ix)
      os << fmt(g.xs[ix]) << "," << fmt(g.ys[iy]) << "," << fmt(g.values[iy][ix]) << "\n";
  return os.str();
}

json to_json(const SweepGrid& g) {
  return {{"x", to_string(g.x)}, {"y", to_string(g.y)}, {"xs", g.xs}, {"ys", g.ys}, {"net_gain_per_second", g.values}};
}

}  // namespace eatkit
