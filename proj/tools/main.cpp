#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eatkit/pipeline.hpp"
#include "eatkit/service.hpp"

using namespace eatkit;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kSolver = 3;
constexpr int kIo = 4;

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::validation: return kValidation;
    case ErrorKind::solver: return kSolver;
    case ErrorKind::io: return kIo;
  }
  return kValidation;
}

std::string full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> number_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
    if (item.empty() || used != item.size()) {
      throw validation_error("cli.number", "--" + flag + ": '" + item + "' is not a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw validation_error("cli.number", "--" + flag + " is empty");
  return out;
}

std::vector<int> int_list(const std::string& text, const std::string& flag) {
  std::vector<int> out;
  for (double v : number_list(text, flag)) {
    if (v != static_cast<int>(v)) throw validation_error("cli.number", "--" + flag + " expects integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

Setting parse_setting(const std::string& text, const std::string& flag) {
  std::string s = text;
  if (s.size() >= 2 && s.front() == '(' && s.back() == ')') s = s.substr(1, s.size() - 2);
  const auto v = int_list(s, flag);
  if (v.size() != 2) throw validation_error("cli.setting", "--" + flag + " expects x,y");
  return {v[0], v[1]};
}

// "(x,y):value"
std::pair<Setting, double> parse_hab(const std::string& text) {
  static const std::regex re(R"(\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s*:\s*(\S+)\s*)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) {
    throw validation_error("cli.hab", "--hab expects \"(x,y):value\", got '" + text + "'");
  }
  return {{std::stoi(m[1]), std::stoi(m[2])}, number_list(m[3], "hab").at(0)};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("io.read", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("io.write", "cannot open " + path + " for writing");
  out << text;
  if (!out) throw io_error("io.write", "failed writing " + path);
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw validation_error("cli.json", path + " is not valid JSON: " + e.what());
  }
}

struct ParseDataArgs {
  std::string config;
  std::string data_dir;
  std::string out;
};

int parse_data_cmd(const ParseDataArgs& a) {
  DataConfig c = data_config_from_json(load_stage(a.config, StageKind::data_config).payload);
  if (!a.data_dir.empty()) c.directory_with_datafiles = a.data_dir;
  const auto e = parse_data(c);
  const auto est = e.estimate();
  std::cout << "files: " << e.report.files.size() << "\n"
            << "accepted rows: " << e.report.accepted_rows << "\n"
            << "ignored rows: " << e.report.ignored_metadata_rows + e.report.unknown_tag_rows + e.report.short_rows
            << "\n"
            << "events per second: " << full(est.events_per_second) << "\n";
  for (const auto& w : e.report.warnings) std::cout << "warning: " << w << "\n";
  if (!a.out.empty()) save_stage(make_document(StageKind::eber_data, to_json(e), c.setup_nickname), a.out);
  return kOk;
}

struct MintradeoffArgs {
  std::string eber;
  std::string request;
  std::string a_config;
  std::string b_config;
  std::vector<std::string> certificates;
  std::vector<double> values;
  std::string spot = "0,0";
  std::string entropy = "min";
  std::string use_case = "rng";
  int level = 2;
  int m_radau = 8;
  std::vector<std::string> hab;
  std::string guess;
  double confidence = 0.99;
  bool no_derate = false;
  std::string nickname;
  std::string out;
};

MinTradeoffRequest build_request(const MintradeoffArgs& a) {
  if (!a.request.empty()) {
    return min_tradeoff_request_from_json(load_stage(a.request, StageKind::certificate).payload);
  }
  if (a.certificates.empty()) throw validation_error("cli.certificate", "at least one --certificate is required");
  MinTradeoffRequest r;
  if (!a.eber.empty() && a.values.empty()) {
    const auto e = eber_data_from_json(load_stage(a.eber, StageKind::eber_data).payload);
    r = certificate_from_eber(e, a.certificates, {a.confidence, !a.no_derate});
  } else {
    if (a.values.size() != a.certificates.size()) {
      throw validation_error("cli.value", "every --certificate needs a --value (or pass --eber to measure them)");
    }
    if (!a.eber.empty()) {
      r.scenario = eber_data_from_json(load_stage(a.eber, StageKind::eber_data).payload).config.scenario;
    } else {
      if (a.a_config.empty() || a.b_config.empty()) {
        throw validation_error("cli.scenario", "--a-config and --b-config are required without --eber");
      }
      r.scenario = Scenario(int_list(a.a_config, "a-config"), int_list(a.b_config, "b-config"));
    }
    r.expressions = a.certificates;
    r.values = a.values;
  }
  r.spot = parse_setting(a.spot, "spot");
  r.entropy_type = entropy_type_from_string(a.entropy);
  r.use_case = use_case_from_string(a.use_case);
  r.level = a.level;
  r.m_radau = a.m_radau;
  for (const auto& h : a.hab) r.hab.insert(parse_hab(h));
  if (!a.guess.empty()) {
    if (a.guess != "alice" && a.guess != "joint") {
      throw validation_error("cli.guess", "--guess must be alice or joint");
    }
    r.guess = a.guess == "alice" ? GuessTarget::alice : GuessTarget::joint;
  }
  if (!a.nickname.empty()) r.setup_nickname = a.nickname;
  return r;
}

int mintradeoff_cmd(const MintradeoffArgs& a) {
  const auto r = build_request(a);
  check_certificate(r);
  for (std::size_t k = 0; k < r.expressions.size(); ++k) {
    std::cout << "certificate " << r.expressions[k] << " = " << full(r.values[k]) << "\n";
  }
  const auto f = calculate_mintradeoff(r);
  std::cout << "min-tradeoff certificate value: " << full(f.certificate_value) << "\n"
            << "asymptotic rate: " << full(f.asymptotic_keyrate) << "\n"
            << "constant: " << full(f.constant) << "\n";
  for (std::size_t k = 0; k < f.coefficients.size(); ++k) {
    std::cout << "lambda[" << k << "]: " << full(f.coefficients[k]) << "\n";
  }
  if (!a.out.empty()) save_stage(make_document(StageKind::min_tradeoff, to_json(f), f.setup_nickname), a.out);
  return kOk;
}

struct RatesArgs {
  std::string mt;
  std::string chunk_time = "3600";
  std::string events = "1e6";
  std::string eps_s = "1e-12";
  std::string p_omega = "0.99";
  std::string gamma = "0.01";
  double switch_delay = 0.0;
  bool subtract = false;
  std::string hab;
  int min_beta = 1;
  int max_beta = 40;
  std::string out;
  std::string csv;
};

int rates_cmd(const RatesArgs& a) {
  const auto f = min_tradeoff_from_json(load_stage(a.mt, StageKind::min_tradeoff).payload);
  SweepRequest q;
  q.chunk_times = number_list(a.chunk_time, "chunk-time");
  q.events_per_second = number_list(a.events, "events-per-sec");
  q.eps_s = number_list(a.eps_s, "eps-s");
  q.p_omega = number_list(a.p_omega, "p-omega");
  q.gammas = number_list(a.gamma, "gamma");
  q.switch_delay = a.switch_delay;
  q.subtract_consumption = a.subtract;
  if (!a.hab.empty()) q.hab = number_list(a.hab, "hab").at(0);
  q.min_log2_inv_beta = a.min_beta;
  q.max_log2_inv_beta = a.max_beta;
  q.validate();
  const auto doc = run_rates(f, q);
  const auto& best = doc.result.best_cell();
  std::cout << "asymptotic rate: " << full(doc.result.asymptotic_rate) << "\n"
            << "net gain: " << full(best.net_gain) << "\n"
            << "cells: " << doc.result.cells.size() << "\n"
            << "combinations: " << doc.result.best_per_combination().size() << "\n"
            << "parameters: " << parameter_dictionary(best, doc.result, f).dump() << "\n";
  if (!a.out.empty()) save_stage(make_document(StageKind::sweep_result, to_json(doc), f.setup_nickname), a.out);
  if (!a.csv.empty()) write_file(a.csv, to_csv(doc.result));
  return kOk;
}

struct PlotArgs {
  std::string sweep;
  std::string x = "-log-beta";
  std::string y = "gamma";
  std::string out;
  std::string format = "csv";
};

int plot_cmd(const PlotArgs& a) {
  const auto doc = sweep_document_from_json(load_stage(a.sweep, StageKind::sweep_result).payload);
  const auto grid = sweep_grid(doc.result, sweep_axis_from_string(a.x), sweep_axis_from_string(a.y));
  std::string text;
  if (a.format == "csv") {
    text = to_csv(grid);
  } else if (a.format == "json") {
    text = to_json(grid).dump(2) + "\n";
  } else {
    throw validation_error("cli.format", "--format must be csv or json");
  }
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_file(a.out, text);
  }
  return kOk;
}

int serve_cmd(const ServiceOptions& o) {
  Service service(o);
  std::cout << "serving on " << o.bind_address << ":" << o.port << std::endl;
  service.run();
  return kOk;
}

struct ValidateArgs {
  std::string config;
  std::string edq;
};

int validate_cmd(const ValidateArgs& a) {
  if (a.config.empty() == a.edq.empty()) throw validation_error("cli.validate", "pass exactly one of --config, --edq");
  if (!a.config.empty()) {
    const auto c = data_config_from_json(parse_json_file(a.config));
    std::cout << "ok: data-config " << c.scenario.to_string() << "\n";
  } else {
    const auto d = load_stage(a.edq);
    std::cout << "ok: " << to_string(d.kind) << "\n";
  }
  return kOk;
}

struct SdpArgs {
  std::string problem;
  std::string solution;
};

int sdp_cmd(const SdpArgs& a) {
  const auto p = sdp_problem_from_json(parse_json_file(a.problem));
  const auto s = InteriorPointBackend().solve(p, SolverSettings{});
  const auto text = to_json(s).dump(2) + "\n";
  if (a.solution.empty()) {
    std::cout << text;
  } else {
    write_file(a.solution, text);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Device-independent randomness and key rates from Bell experiment data"};
  app.require_subcommand(1);
  std::function<int()> action;

  ParseDataArgs pd;
  auto* c_pd = app.add_subcommand("parse-data", "Sum experimental counts into an eber-data stage");
  c_pd->add_option("--config", pd.config, "Data Config JSON or .edq")->required();
  c_pd->add_option("--data-dir", pd.data_dir, "Override the data directory");
  c_pd->add_option("--out", pd.out, "Output .edq");
  c_pd->callback([&] { action = [&] { return parse_data_cmd(pd); }; });

  MintradeoffArgs mt;
  auto* c_mt = app.add_subcommand("mintradeoff", "Compute a min-tradeoff function");
  c_mt->add_option("--eber", mt.eber, "eber-data .edq to measure certificates on");
  c_mt->add_option("--request", mt.request, "certificate .edq holding the full request");
  c_mt->add_option("--a-config", mt.a_config, "Alice's outcome counts per setting, e.g. 2,2,2");
  c_mt->add_option("--b-config", mt.b_config, "Bob's outcome counts per setting");
  c_mt->add_option("--certificate", mt.certificates, "Certificate expression (repeatable)");
  c_mt->add_option("--value", mt.values, "Certificate value (repeatable, in order)");
  c_mt->add_option("--spot", mt.spot, "Spot setting x,y");
  c_mt->add_option("--entropy", mt.entropy, "min or vn");
  c_mt->add_option("--use-case", mt.use_case, "rng or qkd");
  c_mt->add_option("--level", mt.level, "NPA level");
  c_mt->add_option("--m-radau", mt.m_radau, "Gauss-Radau nodes for vn");
  c_mt->add_option("--hab", mt.hab, "H(A|B) as \"(x,y):value\" (repeatable)");
  c_mt->add_option("--guess", mt.guess, "alice or joint");
  c_mt->add_option("--confidence", mt.confidence, "Confidence of measured values");
  c_mt->add_flag("--no-derate", mt.no_derate, "Use measured values as they are");
  c_mt->add_option("--nickname", mt.nickname, "Setup nickname");
  c_mt->add_option("--out", mt.out, "Output .edq");
  c_mt->callback([&] { action = [&] { return mintradeoff_cmd(mt); }; });

  RatesArgs rt;
  auto* c_rt = app.add_subcommand("rates", "Sweep finite-size rates over parameters and beta");
  c_rt->add_option("--mt", rt.mt, "min-tradeoff .edq")->required();
  c_rt->add_option("--chunk-time", rt.chunk_time, "Seconds per chunk (comma list)");
  c_rt->add_option("--events-per-sec", rt.events, "Event rate (comma list)");
  c_rt->add_option("--eps-s", rt.eps_s, "Smoothing parameter (comma list)");
  c_rt->add_option("--p-omega", rt.p_omega, "Completeness (comma list)");
  c_rt->add_option("--gamma", rt.gamma, "Test probability (comma list)");
  c_rt->add_option("--switch-delay", rt.switch_delay, "Seconds lost per setting switch");
  c_rt->add_flag("--subtract-consumption", rt.subtract, "Subtract setting randomness");
  c_rt->add_option("--hab", rt.hab, "Override H(A|B)");
  c_rt->add_option("--min-beta-exp", rt.min_beta, "Smallest -log2 beta");
  c_rt->add_option("--max-beta-exp", rt.max_beta, "Largest -log2 beta");
  c_rt->add_option("--out", rt.out, "Output .edq");
  c_rt->add_option("--csv", rt.csv, "Write every cell as CSV");
  c_rt->callback([&] { action = [&] { return rates_cmd(rt); }; });

  PlotArgs pl;
  auto* c_pl = app.add_subcommand("plot-data", "Net gain grid over two sweep parameters");
  c_pl->add_option("--sweep", pl.sweep, "sweep-result .edq")->required();
  c_pl->add_option("--x", pl.x, "x axis");
  c_pl->add_option("--y", pl.y, "y axis");
  c_pl->add_option("--out", pl.out, "Output file (stdout if absent)");
  c_pl->add_option("--format", pl.format, "csv or json");
  c_pl->callback([&] { action = [&] { return plot_cmd(pl); }; });

  ServiceOptions sv;
  auto* c_sv = app.add_subcommand("serve", "Run the HTTP service");
  c_sv->add_option("--port", sv.port, "Port");
  c_sv->add_option("--bind", sv.bind_address, "Bind address");
  c_sv->add_option("--state-dir", sv.state_dir, "Directory for stage documents");
  c_sv->add_option("--workers", sv.workers, "Min-tradeoff worker threads");
  c_sv->callback([&] { action = [&] { return serve_cmd(sv); }; });

  ValidateArgs va;
  auto* c_va = app.add_subcommand("validate", "Check a Data Config or .edq file");
  c_va->add_option("--config", va.config, "Data Config JSON");
  c_va->add_option("--edq", va.edq, ".edq document");
  c_va->callback([&] { action = [&] { return validate_cmd(va); }; });

  SdpArgs sd;
  auto* c_sd = app.add_subcommand("sdp-solve", "Solve an SDP problem JSON with the built-in solver");
  c_sd->add_option("problem", sd.problem, "Problem JSON")->required();
  c_sd->add_option("solution", sd.solution, "Solution JSON (stdout if absent)");
  c_sd->callback([&] { action = [&] { return sdp_cmd(sd); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  try {
    return action();
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
    return exit_code(e);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error [json]: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
}
