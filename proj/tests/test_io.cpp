#include "storectl/config.hpp"
#include "storectl/prices.hpp"
#include "storectl/report.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace storectl;
using doctest::Approx;

TEST_CASE("timestamps") {
  CHECK(parse_timestamp("1970-01-02T00:30") == 24 * 60 + 30);
  CHECK(format_timestamp(parse_timestamp("2011-03-01T23:30")) == "2011-03-01T23:30");
  CHECK(parse_timestamp("2011-03-01T23:30:00") == parse_timestamp("2011-03-01T23:30"));
  CHECK_THROWS_AS(parse_timestamp("2011-13-01T00:00"), std::invalid_argument);
  CHECK_THROWS_AS(parse_timestamp("yesterday"), std::invalid_argument);
}

TEST_CASE("price files") {
  std::istringstream ok("timestamp,price\n2011-03-01T00:00,41.2\n2011-03-01T00:30,39.9\n2011-03-01T01:00,38\n");
  const PriceSeries s = read_prices(ok);
  CHECK(s.size() == 3);
  CHECK(s.step_minutes == 30);
  CHECK(s.prices(0) == 41.2);

  std::ostringstream out;
  write_prices(out, s);
  std::istringstream back(out.str());
  const PriceSeries r = read_prices(back);
  CHECK((r.prices.array() == s.prices.array()).all());
  CHECK(r.timestamps == s.timestamps);

  std::istringstream dup("timestamp,price\n2011-03-01T00:00,41.2\n2011-03-01T00:30,39.9\n2011-03-01T00:30,38\n");
  try {
    read_prices(dup);
    FAIL("duplicate accepted");
  } catch (const PriceParseError& e) {
    CHECK(e.line() == 4);
  }
  std::istringstream bad("timestamp,price\n2011-03-01T00:00,cheap\n");
  CHECK_THROWS_AS(read_prices(bad), PriceParseError);
}

TEST_CASE("synthetic prices") {
  const PriceSeries flat = synth_prices(2, 50.0, 0.0, 0.0, 1);
  CHECK(flat.size() == 96);
  CHECK((flat.prices.array() == 50.0).all());

  const PriceSeries wave = synth_prices(1, 50.0, 20.0, 0.0, 1);
  CHECK(wave.prices(0) == Approx(30.0));
  CHECK(wave.prices(24) == Approx(70.0));
  CHECK(wave.prices.minCoeff() == Approx(30.0));

  const PriceSeries a = synth_prices(3, 50.0, 20.0, 5.0, 77), b = synth_prices(3, 50.0, 20.0, 5.0, 77);
  CHECK((a.prices.array() == b.prices.array()).all());
}

TEST_CASE("presets build valid instances") {
  for (const auto& name : preset_names()) {
    if (name == "year-terminal") continue;
    const ProblemInstance inst = build_instance(parse_config(preset(name)));
    CHECK(validate_instance(inst).ok());
  }
  const ProblemInstance month = build_instance(parse_config(preset("month-exp10")));
  CHECK(month.horizon() == 1440);
  CHECK(month.period(1).upper == 10.0);
  CHECK(month.period(1).rates.p_in == 1.0);
  CHECK_THROWS_AS(preset("no-such-preset"), ConfigError);
}

TEST_CASE("overrides and key checks") {
  nlohmann::json doc = preset("two-day");
  apply_override(doc, "penalty.family=exponential");
  apply_override(doc, "penalty.a=10");
  apply_override(doc, "capacity=20");
  const RunConfig cfg = parse_config(doc);
  CHECK(cfg.capacity == std::vector<double>{20.0});
  const auto* ex = std::get_if<ExponentialPenalty>(&cfg.penalty);
  REQUIRE(ex != nullptr);
  CHECK(ex->a == 10.0);

  nlohmann::json typo = preset("two-day");
  typo["capacty"] = 3;
  CHECK_THROWS_AS(parse_config(typo), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
}

TEST_CASE("report files") {
  const ProblemInstance inst = build_instance(parse_config(preset("two-day")));
  const Solution sol = solve(inst);
  std::ostringstream traj;
  write_trajectory_csv(traj, inst, sol);
  std::istringstream lines(traj.str());
  std::string first, header;
  std::getline(lines, first);
  std::getline(lines, header);
  CHECK(first == "# schema_version=1");
  CHECK(header == "t,level,increment,lambda,nu,horizon,at_lower,at_upper");
  int rows = 0;
  for (std::string l; std::getline(lines, l);) ++rows;
  CHECK(rows == inst.horizon() + 1);

  const auto obj = objective_json(inst, sol);
  CHECK(obj.at("objective").get<double>() == sol.objective);
  CHECK(obj.at("schema_version") == 1);
  const auto kkt = kkt_json(verify_kkt(inst, sol), 1e-6);
  CHECK(kkt.at("passed") == true);
  CHECK(kkt.at("conditions").size() == 5);
}

TEST_CASE("oracle comparison on the two-day preset") {
  const ProblemInstance inst = build_instance(parse_config(preset("two-day")));
  const Solution sol = solve(inst);
  const OracleComparison cmp = compare_with_oracle(inst, sol, 201);
  CHECK(cmp.passed);
  CHECK(cmp.gap <= cmp.bound);
}
