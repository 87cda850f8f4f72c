#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <gtest/gtest.h>

#include "eatkit/pipeline.hpp"
#include "expect_error.hpp"
#include "temp_dir.hpp"

namespace eatkit {
namespace {

namespace fs = std::filesystem;
using fixtures::read_file;
using fixtures::TempDir;
using fixtures::throws_code;
using nlohmann::json;

const fs::path kDataDir = fs::path(EATKIT_DATA_DIR) / "simple_bell";

MinTradeoffRequest modchsh_request() {
  MinTradeoffRequest r;
  r.scenario = Scenario({2, 2, 2}, {2, 2});
  r.expressions = {"C(0,0)+C(0,1)+C(1,0)-C(1,1)+C(2,1)"};
  r.values = {3.8};
  r.spot = {2, 0};
  r.setup_nickname = "modCHSH";
  return r;
}

const MinTradeoffInfo& modchsh() {
  static const MinTradeoffInfo f = calculate_mintradeoff(modchsh_request());
  return f;
}

EberData listing_eber() {
  auto c = parse_data_config(read_file(kDataDir / "listing9.json"));
  c.directory_with_datafiles = kDataDir.string();
  return parse_data(c);
}

TEST(Edq, MinTradeoffSaveLoadRoundTrip) {
  TempDir dir;
  const auto& f = modchsh();
  save_stage(make_document(StageKind::min_tradeoff, to_json(f), f.setup_nickname), dir / "mt.edq");
  const auto d = load_stage(dir / "mt.edq");
  EXPECT_EQ(d.kind, StageKind::min_tradeoff);
  EXPECT_EQ(d.version, kEdqVersion);
  EXPECT_EQ(d.setup_nickname, "modCHSH");
  const auto g = min_tradeoff_from_json(d.payload);
  EXPECT_EQ(to_json(g), to_json(f));
  EXPECT_EQ(g.certificate_value, f.certificate_value);
  EXPECT_EQ(g.coefficients, f.coefficients);
  EXPECT_EQ(g.constant, f.constant);
}

TEST(Edq, UnknownKindNamesTheKind) {
  TempDir dir;
  dir.write("x.edq", R"({"kind": "mystery-stage", "version": 1, "payload": {}})");
  try {
    load_stage(dir / "x.edq");
    FAIL() << "no error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "edq.kind");
    EXPECT_NE(std::string(e.what()).find("mystery-stage"), std::string::npos);
  }
}

TEST(Edq, ListingConfigLoadsAsDataConfig) {
  const auto d = load_stage(kDataDir / "listing9.json");
  EXPECT_EQ(d.kind, StageKind::data_config);
  EXPECT_EQ(d.setup_nickname, "Simple Bell");
  EXPECT_EQ(d.payload, json::parse(read_file(kDataDir / "listing9.json")));
  EXPECT_NO_THROW(validate_payload(StageKind::data_config, d.payload));
}

TEST(Edq, EnvelopeErrors) {
  TempDir dir;
  dir.write("v.edq", R"({"kind": "data-config", "version": 7, "payload": {}})");
  EXPECT_TRUE(throws_code([&] { load_stage(dir / "v.edq"); }, "edq.version"));
  dir.write("p.edq", R"({"kind": "data-config", "version": 1})");
  EXPECT_TRUE(throws_code([&] { load_stage(dir / "p.edq"); }, "edq.schema"));
  dir.write("m.edq", R"({"kind": "min-tradeoff", "version": 1, "payload": {"A_config": [2]}})");
  EXPECT_TRUE(throws_code([&] { load_stage(dir / "m.edq"); }, "edq.payload"));
  dir.write("j.edq", "{not json");
  EXPECT_TRUE(throws_code([&] { load_stage(dir / "j.edq"); }, "edq.json"));
  EXPECT_TRUE(throws_code([&] { load_stage(dir / "missing.edq"); }, "io.read"));
  EXPECT_TRUE(throws_code([&] { load_stage(kDataDir / "listing9.json", StageKind::min_tradeoff); },
                          "edq.kind_mismatch"));
}

TEST(Edq, SaveToUnwritablePathIsIoError) {
  EXPECT_TRUE(throws_code(
      [] { save_stage(make_document(StageKind::data_config, json::object()), "/nonexistent-dir/x.edq"); },
      "io.write"));
}

TEST(Edq, EveryKindRoundTrips) {
  TempDir dir;
  const auto eber = listing_eber();
  SweepRequest q;
  q.max_log2_inv_beta = 5;
  const std::vector<std::pair<StageKind, json>> docs = {
      {StageKind::data_config, to_json(eber.config)},
      {StageKind::eber_data, to_json(eber)},
      {StageKind::certificate, to_json(modchsh_request())},
      {StageKind::min_tradeoff, to_json(modchsh())},
      {StageKind::sweep_result, to_json(run_rates(modchsh(), q))},
  };
  for (const auto& [kind, payload] : docs) {
    const auto path = dir / (to_string(kind) + ".edq");
    save_stage(make_document(kind, payload), path);
    const auto back = load_stage(path, kind);
    EXPECT_EQ(back.payload, payload) << to_string(kind);
  }
}

TEST(EberData, JsonRoundTrip) {
  const auto e = listing_eber();
  const auto back = eber_data_from_json(to_json(e));
  EXPECT_EQ(back.counts, e.counts);
  EXPECT_EQ(back.report.accepted_rows, 4u);
  EXPECT_EQ(back.report.ignored_metadata_rows, 1u);
  EXPECT_EQ(to_json(back.config), to_json(e.config));
  EXPECT_EQ(to_json(e).at("events_per_second").get<double>(), 1e9);
}

TEST(Certificate, MeasuredWithoutDerating) {
  const auto r = certificate_from_eber(listing_eber(), {"C(0,0)", "C(1,1)"}, {0.99, false});
  ASSERT_EQ(r.values.size(), 2u);
  EXPECT_NEAR(r.values[0], std::sqrt(0.5), 1e-6);
  EXPECT_NEAR(r.values[1], -std::sqrt(0.5), 1e-6);
  EXPECT_EQ(r.scenario, Scenario({2, 2}, {2, 2}));
  EXPECT_EQ(r.additional_data.at("derated"), false);
}

TEST(Certificate, DeratingMovesTowardUniformByHalfWidth) {
  const auto eber = listing_eber();
  const auto raw = certificate_from_eber(eber, {"C(0,0)", "C(1,1)", "C(0,0)+C(0,1)+C(1,0)-C(1,1)"}, {0.99, false});
  const auto der = certificate_from_eber(eber, {"C(0,0)", "C(1,1)", "C(0,0)+C(0,1)+C(1,0)-C(1,1)"}, {0.99, true});
  const auto& m = der.additional_data.at("measurements");
  for (std::size_t k = 0; k < 3; ++k) {
    const double hw = m[k].at("half_width").get<double>();
    EXPECT_GT(hw, 0.0);
    EXPECT_NEAR(std::abs(raw.values[k]) - std::abs(der.values[k]), hw, 1e-15);
  }
}

TEST(Certificate, DeratingStopsAtUniformValue) {
  EberData e = listing_eber();
  AggregatedCounts small(e.config.scenario);
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) {
      auto& p = small.at(x, y);
      p.coincidences = {{3, 1}, {1, 3}};
      p.alice_clicks = {4, 4};
      p.bob_clicks = {4, 4};
      p.rows = 1;
      p.total_time = 1.0;
    }
  e.counts = small;
  const auto r = certificate_from_eber(e, {"C(0,0)", "P(0,0|0,0)"}, {0.99, true});
  EXPECT_EQ(r.values[0], 0.0);
  EXPECT_EQ(r.values[1], 0.25);
}

TEST(Certificate, KeyDistributionNeedsHab) {
  auto r = modchsh_request();
  r.use_case = UseCase::key_distribution;
  EXPECT_TRUE(throws_code([&] { check_certificate(r); }, "certificate.hab"));
  r.hab[{1, 0}] = 0.1;
  EXPECT_TRUE(throws_code([&] { check_certificate(r); }, "certificate.hab"));
  r.hab[{2, 0}] = 0.1;
  EXPECT_NO_THROW(check_certificate(r));
}

TEST(Certificate, FromBody) {
  json body = to_json(modchsh_request());
  EXPECT_EQ(to_json(certificate_from_body(body, nullptr)), body);

  const auto eber = listing_eber();
  const json measured = {{"expressions", {"C(0,0)"}}, {"spot_setting", {0, 1}}, {"derate", false}};
  const auto r = certificate_from_body(measured, &eber);
  EXPECT_EQ(r.spot, Setting(0, 1));
  EXPECT_NEAR(r.values.at(0), std::sqrt(0.5), 1e-6);

  EXPECT_TRUE(throws_code([&] { certificate_from_body({{"expressions", {"C(0,0)"}}}, nullptr); },
                          "certificate.no_data"));
  EXPECT_TRUE(throws_code([&] { certificate_from_body({{"expressions", {"C(0,"}}}, &eber); }, "expression.syntax"));
  json qkd = measured;
  qkd["use_case"] = "qkd";
  EXPECT_TRUE(throws_code([&] { certificate_from_body(qkd, &eber); }, "certificate.hab"));
}

TEST(SweepJson, NonFiniteValuesRoundTrip) {
  EatCell c;
  c.breakdown.n_eps_k = std::numeric_limits<double>::infinity();
  c.breakdown.bound = -std::numeric_limits<double>::infinity();
  c.params.hab = 0.25;
  const auto back = eat_cell_from_json(json::parse(to_json(c).dump()));
  EXPECT_EQ(back.breakdown.n_eps_k, std::numeric_limits<double>::infinity());
  EXPECT_EQ(back.breakdown.bound, -std::numeric_limits<double>::infinity());
  EXPECT_EQ(back.params.hab, 0.25);
}

TEST(SweepJson, DocumentRoundTripIsExact) {
  SweepRequest q;
  q.gammas = {0.01, 0.05};
  q.eps_s = {1e-12, 1e-9};
  const auto doc = run_rates(modchsh(), q);
  const std::string text = to_json(doc).dump();
  const auto back = sweep_document_from_json(json::parse(text));
  EXPECT_EQ(to_json(back).dump(), text);
  EXPECT_EQ(to_csv(back.result), to_csv(doc.result));
  EXPECT_EQ(back.result.best, doc.result.best);
}

TEST(SweepGrid, MaximizesOverOtherParameters) {
  SweepRequest q;
  q.gammas = {0.01, 0.05};
  q.eps_s = {1e-12, 1e-9};
  q.max_log2_inv_beta = 30;
  const auto r = run_rates(modchsh(), q).result;
  const auto g = sweep_grid(r, sweep_axis_from_string("-log-beta"), sweep_axis_from_string("gamma"));
  ASSERT_EQ(g.xs.size(), 30u);
  ASSERT_EQ(g.ys, (std::vector<double>{0.01, 0.05}));
  for (std::size_t iy = 0; iy < g.ys.size(); ++iy)
    for (std::size_t ix = 0; ix < g.xs.size(); ++ix) {
      double best = -1.0;
      for (const auto& c : r.cells)
        if (c.log2_inv_beta == g.xs[ix] && c.params.gamma == g.ys[iy]) best = std::max(best, c.net_gain);
      EXPECT_EQ(g.values[iy][ix], best);
    }
  const auto csv = to_csv(g);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "log2_inv_beta,gamma,net_gain_per_second");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 61);
  const auto j = to_json(g);
  EXPECT_EQ(j.at("x"), "log2_inv_beta");
  EXPECT_EQ(j.at("net_gain_per_second").size(), 2u);
}

TEST(SweepGrid, AxisErrors) {
  EXPECT_TRUE(throws_code([] { sweep_axis_from_string("colour"); }, "grid.axis"));
  EatSweepResult r;
  r.cells.resize(1);
  EXPECT_TRUE(throws_code([&] { sweep_grid(r, SweepAxis::gamma, SweepAxis::gamma); }, "grid.axis"));
  EXPECT_TRUE(throws_code([] { sweep_grid(EatSweepResult{}, SweepAxis::gamma, SweepAxis::eps_s); }, "grid.empty"));
  for (const char* name : {"chunk-time", "events-per-sec", "eps-s", "p-omega", "log2_inv_beta", "p_omega"})
    EXPECT_NO_THROW(sweep_axis_from_string(name)) << name;
}

}  // namespace
}  // namespace eatkit
