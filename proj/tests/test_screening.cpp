#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "premod/scenario.hpp"
#include "premod/screening.hpp"

using namespace premod;

TEST_CASE("age-standardized rate") {
  CHECK(asr({{0.001, 1.0}}) == Catch::Approx(0.001));
  CHECK(asr({{10e-5, 0.5}, {20e-5, 0.5}}) == Catch::Approx(15e-5));
  CHECK_THROWS_AS(asr({{0.001, 0.4}, {0.002, 0.4}}), Error);  // weights != 1
}

TEST_CASE("three-stage pipeline reproduces the published arithmetic") {
  const auto sc = paper_pipeline_scenario();
  const auto res = run_cascade(sc.prevalence, sc.population, sc.stages);
  REQUIRE(res.stages.size() == 3);
  CHECK(std::abs(res.stages[0].positives - 44816.0) <= 2.0);
  CHECK(std::abs(res.stages[1].positives - 8532.0) <= 2.0);
  CHECK(std::abs(res.detected - 21.0) <= 0.5);
  CHECK(std::abs(res.nns - 406.0) <= 1.0);
  CHECK(std::abs(res.nns_base - 3317.0) <= 1.0);
  CHECK(std::abs(res.efficiency - 8.2) <= 0.1);
  CHECK(std::abs(100.0 * res.final_ppv - 3.9) <= 0.1);
}

TEST_CASE("EUS-only baseline") {
  const auto sc = eus_only_scenario();
  const auto res = run_cascade(sc.prevalence, sc.population, sc.stages);
  CHECK(std::abs(res.nns - 3317.0) <= 1.0);
  CHECK(res.nns == Catch::Approx(res.nns_base));  // single-stage identity
  CHECK(res.efficiency == Catch::Approx(1.0));
}

TEST_CASE("END-PAC comparison with 40% capture") {
  const auto sc = endpac_comparison_scenario();
  const auto res = run_cascade(sc.prevalence, sc.population, sc.stages);
  REQUIRE(res.stages.size() == 2);
  CHECK(std::abs(res.stages[0].positives - 18005.0) <= 5.0);
  CHECK(std::abs(res.detected - 6.7) <= 0.1);
  CHECK(std::abs(res.nns - 2676.0) <= 2.0);
  CHECK(std::abs(100.0 * res.final_ppv - 0.6) <= 0.05);
}

TEST_CASE("cascade conservation and enrichment laws") {
  const auto sc = paper_pipeline_scenario();
  const auto res = run_cascade(sc.prevalence, sc.population, sc.stages);
  double cases_in = sc.prevalence * sc.population;
  for (std::size_t i = 0; i < res.stages.size(); ++i) {
    const auto& st = res.stages[i];
    CHECK(st.positives <= st.population_in);
    CHECK(st.cases_carried <= cases_in + 1e-9);  // cases never increase downstream
    CHECK(st.cases_carried ==
          Catch::Approx(sc.stages[i].sensitivity * sc.stages[i].capture_fraction *
                        st.prevalence_in * st.population_in));
    cases_in = st.cases_carried;
    // LR+ > 1 at every stage here, so prevalence must be enriched
    if (i + 1 < res.stages.size()) CHECK(res.stages[i + 1].prevalence_in > st.prevalence_in);
  }
}

TEST_CASE("single stage with perfect specificity hits the NNS identity") {
  const auto res = run_cascade(0.01, 10000, {{"only", 0.8, 0.999999999, 1.0}});
  CHECK(res.nns == Catch::Approx(1.0 / (0.01 * 0.8)).epsilon(1e-6));
  CHECK(res.nns == Catch::Approx(res.nns_base).epsilon(1e-6));
}

TEST_CASE("degenerate stages are rejected") {
  CHECK_THROWS_AS(run_cascade(0.01, 1000, {{"zero-sens", 0.0, 0.9, 1.0}}), Error);
  CHECK_THROWS_AS(run_cascade(0.01, 1000, {{"spec-one", 0.9, 1.0, 1.0}}), Error);
  CHECK_THROWS_AS(run_cascade(0.01, 1000, {}), Error);
  CHECK_THROWS_AS(run_cascade(0.0, 1000, {{"s", 0.9, 0.9, 1.0}}), Error);
}

TEST_CASE("scenario json round trip") {
  const nlohmann::json j = {
      {"population", 50000.0},
      {"asr_groups", {{{"rate", 10e-5}, {"weight", 0.6}}, {{"rate", 30e-5}, {"weight", 0.4}}}},
      {"stages",
       {{{"name", "a"}, {"sensitivity", 0.9}, {"specificity", 0.8}},
        {{"name", "b"}, {"sensitivity", 0.7}, {"specificity", 0.95},
         {"capture_fraction", 0.5}}}}};
  const auto sc = scenario_from_json(j, "custom");
  CHECK(sc.population == 50000.0);
  CHECK(sc.prevalence == Catch::Approx(18e-5));
  REQUIRE(sc.stages.size() == 2);
  CHECK(sc.stages[1].capture_fraction == 0.5);
  CHECK_NOTHROW(run_cascade(sc.prevalence, sc.population, sc.stages));
}

TEST_CASE("half-to-even display rounding") {
  CHECK(round_even(2.5) == 2.0);
  CHECK(round_even(3.5) == 4.0);
  CHECK(round_even(2.4) == 2.0);
  CHECK(round_even(2.6) == 3.0);
}
