#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "premod/metrics.hpp"
#include "premod/recal.hpp"

using namespace premod;

TEST_CASE("prevalence to odds") {
  CHECK(prevalence_to_odds(0.5) == 1.0);
  CHECK(prevalence_to_odds(1.0 / 11.0) == Catch::Approx(0.1));  // the 1:10 ratio
  CHECK(prevalence_to_odds(0.000332) == Catch::Approx(0.00033211).epsilon(1e-4));
  CHECK_THROWS_AS(prevalence_to_odds(0.0), Error);
  CHECK_THROWS_AS(prevalence_to_odds(1.0), Error);
}

TEST_CASE("logit shift") {
  const RecalSpec spec{1.0 / 10.0, 1.0 / 29.0};
  SECTION("identity when priors match") {
    const RecalSpec id{0.25, 0.25};
    CHECK(recalibrate_logit(1.234, id) == 1.234);
    CHECK(recalibrate_prob(0.77, id) == Catch::Approx(0.77).epsilon(1e-12));
  }
  SECTION("z=0 with 1/10 -> 1/29 moves by ln(10/29)") {
    CHECK(recalibrate_logit(0.0, spec) == Catch::Approx(std::log(10.0 / 29.0)));
    CHECK(recalibrate_logit(0.0, spec) == Catch::Approx(-1.0647).epsilon(1e-4));
  }
  SECTION("composition src->mid->tar equals src->tar") {
    const RecalSpec a{0.1, 0.02}, b{0.02, 0.5}, direct{0.1, 0.5};
    const double z = 0.37;
    CHECK(recalibrate_logit(recalibrate_logit(z, a), b) ==
          Catch::Approx(recalibrate_logit(z, direct)).epsilon(1e-14));
  }
}

TEST_CASE("probability recalibration matches the direct odds oracle") {
  const RecalSpec spec{1.0 / 10.0, 1.0 / 29.0};
  SECTION("p=0.5 worked example") {
    // odds 1 * (10/29)/(1) ... target/src = (1/29)/(1/10) = 10/29
    const double expect = (10.0 / 29.0) / (1.0 + 10.0 / 29.0);
    CHECK(recalibrate_prob(0.5, spec) == Catch::Approx(expect).epsilon(1e-12));
    CHECK(recalibrate_prob(0.5, spec) == Catch::Approx(0.2564).epsilon(1e-3));
  }
  SECTION("odds form on random inputs") {
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
      const double p = rng.uniform(1e-6, 1.0 - 1e-6);
      const double odds_c = p / (1.0 - p) * (spec.pi_tar / spec.pi_src);
      CHECK(recalibrate_prob(p, spec) ==
            Catch::Approx(odds_c / (1.0 + odds_c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("recalibration preserves ranking and AUROC exactly") {
  Rng rng(17);
  std::vector<Scored> raw;
  for (int i = 0; i < 500; ++i) {
    const double z = rng.normal(0.0, 2.0);
    const int label = rng.uniform() < 0.3 ? 1 : 0;
    raw.push_back({1.0 / (1.0 + std::exp(-(z + (label ? 1.0 : 0.0)))), label});
  }
  const RecalSpec spec{0.1, 1.0 / 200.0};
  auto shifted = raw;
  for (auto& s : shifted) s.score = recalibrate_prob(s.score, spec);
  CHECK(std::abs(auroc(raw) - auroc(shifted)) < 1e-12);
  for (std::size_t i = 1; i < raw.size(); ++i) {
    const bool before = raw[i - 1].score < raw[i].score;
    const bool after = shifted[i - 1].score < shifted[i].score;
    CHECK(before == after);
  }
}
