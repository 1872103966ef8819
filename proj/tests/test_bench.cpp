#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "ebt/bench.hpp"
#include "ebt/config.hpp"
#include "ebt/tensor.hpp"

using namespace ebt;

TEST_CASE("variant parsing") {
  CHECK(bench::parse_variant("bt-grc").entangled);
  CHECK(bench::parse_variant("ebt-grc").slice);
  CHECK_FALSE(bench::parse_variant("ebt-grc-noslice").slice);
  CHECK_THROWS_AS(bench::parse_variant("what"), contract_error);
}

TEST_CASE("single repetition, single bucket yields one row per variant") {
  bench::BenchConfig cfg;
  cfg.lengths = {12};
  cfg.variants = {"bt-grc", "ebt-grc"};
  cfg.d = 16;
  cfg.d_s = 8;
  cfg.beam_size = 2;
  cfg.repetitions = 1;
  auto rows = bench::bench_run(cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].variant == "bt-grc");
  CHECK(rows[1].variant == "ebt-grc");
  for (const auto& r : rows) {
    CHECK(r.length == 12);
    CHECK(r.peak_scalars > 0);
    CHECK_FALSE(r.over_budget);
  }
  // the entangled path retains more
  CHECK(rows[0].peak_scalars > rows[1].peak_scalars);
}

TEST_CASE("peak counts are deterministic across runs") {
  bench::BenchConfig cfg;
  cfg.lengths = {8, 16};
  cfg.variants = {"ebt-grc"};
  cfg.d = 12;
  cfg.d_s = 6;
  cfg.beam_size = 2;
  cfg.repetitions = 2;
  cfg.seed = 5;
  auto a = bench::bench_run(cfg);
  auto b = bench::bench_run(cfg);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); i++) {
    CHECK(a[i].peak_scalars == b[i].peak_scalars);
    CHECK(a[i].over_budget == b[i].over_budget);
  }
  // larger inputs retain more
  CHECK(a[1].peak_scalars > a[0].peak_scalars);
}

TEST_CASE("over-budget rows are reported, not crashed") {
  bench::BenchConfig cfg;
  cfg.lengths = {6, 10};
  cfg.variants = {"bt-grc"};
  cfg.d = 16;
  cfg.d_s = 8;
  cfg.beam_size = 2;
  cfg.repetitions = 1;
  cfg.scalar_budget = 1;  // everything busts it
  auto rows = bench::bench_run(cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].over_budget);
  CHECK(rows[1].over_budget);
  // the second bucket is skipped outright once the first goes over
  CHECK(rows[1].peak_scalars == 0);

  std::string table = bench::format_table(rows);
  CHECK(table.find("over budget") != std::string::npos);
}

TEST_CASE("report formats") {
  bench::BenchConfig cfg;
  cfg.lengths = {6};
  cfg.variants = {"ebt-grc"};
  cfg.d = 8;
  cfg.d_s = 4;
  cfg.beam_size = 2;
  cfg.repetitions = 1;
  auto rows = bench::bench_run(cfg);
  std::string table = bench::format_table(rows);
  CHECK(table.find("variant") != std::string::npos);
  CHECK(table.find("ebt-grc") != std::string::npos);

  std::string csv = bench::format_csv(rows, false);
  CHECK(csv.find("variant,length,peak_scalars,over_budget") == 0);
  CHECK(csv.find("ebt-grc,6,") != std::string::npos);
}

TEST_CASE("config parsing") {
  Config cfg = Config::parse(
      "# comment\n"
      "d = 64\n"
      "lengths = 50, 100, 200  # trailing comment\n"
      "slice = false\n"
      "lr=0.001\n"
      "name = ebt-grc\n");
  CHECK(cfg.get_int("d", 0) == 64);
  CHECK(cfg.get_int_list("lengths", {}) == std::vector<int>{50, 100, 200});
  CHECK_FALSE(cfg.get_bool("slice", true));
  CHECK(cfg.get_double("lr", 0) == 0.001);
  CHECK(cfg.get("name", "") == "ebt-grc");
  CHECK(cfg.get_int("missing", 7) == 7);

  CHECK_THROWS_AS(Config::parse("what is this"), config_error);
  CHECK_THROWS_AS(Config::parse("d = notanumber").get_int("d", 0),
                  config_error);
}
