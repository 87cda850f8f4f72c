#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <regex>

#include <gtest/gtest.h>

#include "eatkit/pipeline.hpp"
#include "temp_dir.hpp"

namespace eatkit {
namespace {

namespace fs = std::filesystem;
using fixtures::read_file;
using fixtures::TempDir;
using nlohmann::json;

const fs::path kDataDir = fs::path(EATKIT_DATA_DIR) / "simple_bell";
const std::string kModChsh = "C(0,0)+C(0,1)+C(1,0)-C(1,1)+C(2,1)";

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Run cli(const TempDir& dir, const std::vector<std::string>& args) {
  std::string cmd = "cd " + quote(dir.path().string()) + " && " + quote(EATKIT_CLI);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>" + quote((dir / "stderr.txt").string());
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = read_file(dir / "stderr.txt");
  return r;
}

std::string line_value(const std::string& out, const std::string& label) {
  const auto at = out.find(label + ": ");
  if (at == std::string::npos) return {};
  const auto start = at + label.size() + 2;
  return out.substr(start, out.find('\n', start) - start);
}

MinTradeoffRequest modchsh_request() {
  MinTradeoffRequest r;
  r.scenario = Scenario({2, 2, 2}, {2, 2});
  r.expressions = {kModChsh};
  r.values = {3.8};
  r.spot = {2, 0};
  return r;
}

Run modchsh_mintradeoff(const TempDir& dir) {
  return cli(dir, {"mintradeoff", "--a-config", "2,2,2", "--b-config", "2,2", "--certificate", kModChsh, "--value",
                   "3.8", "--spot", "2,0", "--entropy", "min", "--use-case", "rng", "--level", "2", "--out",
                   "mt.edq"});
}

TEST(Cli, ModChshChainMatchesLibrary) {
  TempDir dir;
  const auto mt = modchsh_mintradeoff(dir);
  ASSERT_EQ(mt.code, 0) << mt.err;
  const auto rate = line_value(mt.out, "asymptotic rate");
  EXPECT_NEAR(std::stod(rate), 1.4368663908, 1e-3);
  EXPECT_GE(std::regex_replace(rate, std::regex("[^0-9]"), "").size(), 15u);

  const auto f = calculate_mintradeoff(modchsh_request());
  const auto loaded = load_stage(dir / "mt.edq", StageKind::min_tradeoff);
  EXPECT_EQ(loaded.payload.dump(), to_json(f).dump());

  const auto rates = cli(dir, {"rates", "--mt", "mt.edq", "--chunk-time", "3600", "--events-per-sec", "1e6", "--eps-s",
                               "1e-12", "--p-omega", "0.99", "--gamma", "0.01", "--out", "sweep.edq"});
  ASSERT_EQ(rates.code, 0) << rates.err;
  const auto doc = run_rates(f, SweepRequest{});
  EXPECT_EQ(load_stage(dir / "sweep.edq", StageKind::sweep_result).payload.dump(), to_json(doc).dump());
  const auto& best = doc.result.best_cell();
  EXPECT_EQ(std::stod(line_value(rates.out, "net gain")), best.net_gain);
  const auto params = json::parse(line_value(rates.out, "parameters"));
  EXPECT_EQ(params, parameter_dictionary(best, doc.result, f));
  EXPECT_NEAR(params.at("-log beta").get<double>(), 21.0, 1.0);
  EXPECT_NEAR(params.at("pxpy_randomness_consumption_per_round").get<double>(), std::log2(6.0), 1e-15);

  const auto plot = cli(dir, {"plot-data", "--sweep", "sweep.edq", "--x", "-log-beta", "--y", "gamma"});
  ASSERT_EQ(plot.code, 0) << plot.err;
  EXPECT_EQ(plot.out, to_csv(sweep_grid(doc.result, SweepAxis::log2_inv_beta, SweepAxis::gamma)));
  const auto plot_file = cli(dir, {"plot-data", "--sweep", "sweep.edq", "--out", "grid.json", "--format", "json"});
  ASSERT_EQ(plot_file.code, 0) << plot_file.err;
  EXPECT_EQ(json::parse(read_file(dir / "grid.json")).at("y"), "gamma");
}

TEST(Cli, RatesCartesianProduct) {
  TempDir dir;
  ASSERT_EQ(modchsh_mintradeoff(dir).code, 0);
  const auto r = cli(dir, {"rates", "--mt", "mt.edq", "--gamma", "0.01,0.02", "--eps-s", "1e-12,1e-9",
                           "--min-beta-exp", "21", "--max-beta-exp", "21", "--out", "s.edq"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_value(r.out, "cells"), "4");
  EXPECT_EQ(line_value(r.out, "combinations"), "4");
  const auto doc = sweep_document_from_json(load_stage(dir / "s.edq").payload);
  EXPECT_EQ(doc.result.cells.size(), 4u);
  const auto wide = cli(dir, {"rates", "--mt", "mt.edq", "--gamma", "0.01,0.02", "--eps-s", "1e-12,1e-9"});
  ASSERT_EQ(wide.code, 0) << wide.err;
  EXPECT_EQ(line_value(wide.out, "combinations"), "4");
  EXPECT_EQ(line_value(wide.out, "cells"), "160");
}

TEST(Cli, ValidateListingConfig) {
  TempDir dir;
  const auto r = cli(dir, {"validate", "--config", (kDataDir / "listing9.json").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("ok", 0), 0u);
  dir.write("bad.json", R"({"A_config": [2, 2]})");
  EXPECT_EQ(cli(dir, {"validate", "--config", "bad.json"}).code, 2);
  EXPECT_EQ(cli(dir, {"validate", "--edq", (kDataDir / "listing9.json").string()}).code, 0);
}

TEST(Cli, ParseDataQkdChain) {
  TempDir dir;
  const auto p = cli(dir, {"parse-data", "--config", (kDataDir / "listing9.json").string(), "--data-dir",
                           kDataDir.string(), "--out", "eber.edq"});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(line_value(p.out, "events per second"), "1000000000");
  EXPECT_EQ(line_value(p.out, "accepted rows"), "4");
  EXPECT_EQ(line_value(p.out, "ignored rows"), "1");

  const std::vector<std::string> base = {"mintradeoff", "--eber",        "eber.edq",     "--certificate", "C(0,0)",
                                         "--spot",      "0,2",           "--entropy",    "vn",            "--use-case",
                                         "qkd",         "--certificate", "C(1,1)"};
  const auto missing = cli(dir, base);
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("certificate.hab"), std::string::npos) << missing.err;

  auto with_hab = base;
  for (const char* a : {"--hab", "(0,2):0.01", "--m-radau", "2", "--out", "q.edq"}) with_hab.push_back(a);
  const auto q = cli(dir, with_hab);
  ASSERT_EQ(q.code, 0) << q.err;
  const auto f = min_tradeoff_from_json(load_stage(dir / "q.edq").payload);
  EXPECT_EQ(f.use_case, UseCase::key_distribution);
  EXPECT_NEAR(f.certificate_value - f.asymptotic_keyrate, 0.01, 1e-12);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(cli(dir, {"--help"}).code, 0);
  EXPECT_EQ(cli(dir, {}).code, 2);
  EXPECT_EQ(cli(dir, {"rates", "--mt", "x.edq", "--no-such-flag"}).code, 2);
  EXPECT_EQ(cli(dir, {"frobnicate"}).code, 2);

  const auto syntax = cli(dir, {"mintradeoff", "--a-config", "2,2", "--b-config", "2,2", "--certificate", "C(0,0",
                                "--value", "0.5"});
  EXPECT_EQ(syntax.code, 2);
  EXPECT_NE(syntax.err.find("expression.syntax"), std::string::npos) << syntax.err;

  EXPECT_EQ(cli(dir, {"rates", "--mt", "missing.edq"}).code, 4);
  EXPECT_EQ(cli(dir, {"rates", "--mt", (kDataDir / "listing9.json").string()}).code, 2);

  const auto infeasible = cli(dir, {"mintradeoff", "--a-config", "2,2", "--b-config", "2,2", "--certificate",
                                    "C(0,0)+C(0,1)+C(1,0)-C(1,1)", "--value", "3.5"});
  EXPECT_EQ(infeasible.code, 3) << infeasible.err;

  ASSERT_EQ(modchsh_mintradeoff(dir).code, 0);
  EXPECT_EQ(cli(dir, {"rates", "--mt", "mt.edq", "--gamma", "0.01,abc"}).code, 2);
  EXPECT_EQ(cli(dir, {"rates", "--mt", "mt.edq", "--gamma", "1.5"}).code, 2);
}

TEST(Cli, SdpSolveBridge) {
  TempDir dir;
  const Scenario s({2, 2}, {2, 2});
  const auto chsh = parse_expression("C(0,0)+C(0,1)+C(1,0)-C(1,1)", s);
  dir.write("p.json", to_json(build_npa_optimize(s, 2, chsh, Sense::maximize)).dump());
  const auto r = cli(dir, {"sdp-solve", "p.json", "s.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto sol = dual_solution_from_json(json::parse(read_file(dir / "s.json")));
  EXPECT_EQ(sol.status, SolveStatus::optimal);
  EXPECT_NEAR(sol.dual_objective, 2.0 * std::sqrt(2.0), 1e-6);
}

}  // namespace
}  // namespace eatkit
