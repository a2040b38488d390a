#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "premod/ehr.hpp"

using namespace premod;

namespace {

PatientRecord make_patient(const std::string& id, Sex sex, long birth_day,
                           const std::string& site) {
  PatientRecord p;
  p.patient_id = id;
  p.sex = sex;
  p.birth_day = birth_day;
  p.site = site;
  return p;
}

void add_diag(PatientRecord& p, long day, const std::string& code) {
  p.events.push_back({p.patient_id, day, EventKind::Diagnosis, code, 0.0, false});
}

void add_lab(PatientRecord& p, long day, const std::string& name, double v) {
  p.events.push_back({p.patient_id, day, EventKind::Lab, name, v, true});
}

// 70 years old at day 30000, ~11 years of history, plenty of labs
PatientRecord typical_case(const std::string& id = "c1") {
  auto p = make_patient(id, Sex::Female, 30000 - 70 * 365, "SiteA");
  for (long d = 26000; d < 30000; d += 400) add_diag(p, d, "K20");
  for (long d = 26000; d < 30000; d += 500) add_lab(p, d, "hgb", 13.5);
  add_diag(p, 30000, "C25.1");
  p.sort_events();
  return p;
}

}  // namespace

TEST_CASE("code normalization and prefix matching") {
  CHECK(normalize_code("c25.1") == "C251");
  CHECK(matches_any_prefix(normalize_code("C25.1"), {"157", "C25"}));
  CHECK(matches_any_prefix(normalize_code("157.9"), {"157", "C25"}));
  CHECK_FALSE(matches_any_prefix(normalize_code("K20"), {"157", "C25"}));
}

TEST_CASE("select_cases applies the index/age/history/lab rules") {
  CohortSpec spec;
  SECTION("qualifying patient included with index at first case code") {
    auto res = select_cases({typical_case()}, spec);
    REQUIRE(res.selected.size() == 1);
    CHECK(res.selected[0].index_day == 30000);
    CHECK(res.selected[0].label == Label::Case);
    CHECK(res.counts.included == 1);
  }
  SECTION("age 17 at index is excluded") {
    auto p = typical_case();
    p.birth_day = 30000 - 17 * 365;
    auto res = select_cases({p}, spec);
    CHECK(res.selected.empty());
    CHECK(res.counts.under_age == 1);
  }
  SECTION("2.9 years of prior history is excluded, 3.1 passes") {
    // hand-checked fixture: five patients, varying pre-index span
    std::vector<PatientRecord> ps;
    const double spans[] = {1.0, 2.9, 3.1, 7.0, 12.0};
    for (int i = 0; i < 5; ++i) {
      auto p = make_patient("p" + std::to_string(i), Sex::Male, 30000 - 60 * 365, "S");
      const long first = 30000 - years_to_days(spans[i]);
      add_diag(p, first, "K10");
      for (int k = 0; k < 4; ++k) add_lab(p, first + 10 + k, "hgb", 14.0);
      add_diag(p, 30000, "C25");
      p.sort_events();
      ps.push_back(p);
    }
    auto res = select_cases(ps, spec);
    REQUIRE(res.selected.size() == 3);  // manual recount: spans 3.1, 7, 12 qualify
    CHECK(res.counts.short_history == 2);
    std::set<std::string> ids;
    for (const auto& lp : res.selected) ids.insert(lp.patient.patient_id);
    CHECK(ids == std::set<std::string>{"p2", "p3", "p4"});
  }
  SECTION("fewer than 3 panel labs excluded (per-panel default)") {
    auto p = typical_case();
    p.events.erase(std::remove_if(p.events.begin(), p.events.end(),
                                  [](const EventRecord& e) { return e.kind == EventKind::Lab; }),
                   p.events.end());
    add_lab(p, 28000, "hgb", 13.0);
    add_lab(p, 28100, "hgb", 12.8);
    p.sort_events();
    auto res = select_cases({p}, spec);
    CHECK(res.selected.empty());
    CHECK(res.counts.too_few_labs == 1);
  }
  SECTION("per-test reading excludes when any panel lab is under-measured") {
    CohortSpec strict = spec;
    strict.per_test_lab_rule = true;
    strict.lab_panel = {"hgb", "glu"};
    auto p = typical_case();  // has >= 3 hgb values, zero glu
    auto res = select_cases({p}, strict);
    CHECK(res.selected.empty());
    auto relaxed = spec;
    relaxed.lab_panel = {"hgb", "glu"};
    CHECK(select_cases({p}, relaxed).selected.size() == 1);
  }
  SECTION("history is truncated to the 20 years preceding index") {
    auto p = typical_case();
    add_diag(p, 30000 - years_to_days(25.0), "K99");
    p.sort_events();
    auto res = select_cases({p}, spec);
    REQUIRE(res.selected.size() == 1);
    for (const auto& e : res.selected[0].patient.events)
      CHECK(e.day >= 30000 - years_to_days(20.0));
  }
}

TEST_CASE("select_controls") {
  CohortSpec spec;
  SECTION("index day is last record minus 365") {
    auto p = make_patient("k1", Sex::Female, 10000 - 70 * 365, "S");
    for (long d = 4000; d <= 10000; d += 300) add_diag(p, d, "K30");
    for (int i = 0; i < 5; ++i) add_lab(p, 5000 + i * 100, "hgb", 14.2);
    p.sort_events();
    auto res = select_controls({p}, spec);
    REQUIRE(res.selected.size() == 1);
    CHECK(res.selected[0].index_day == 9635);
    CHECK(res.selected[0].label == Label::Control);
    // truncation drops the trailing offset year
    for (const auto& e : res.selected[0].patient.events) CHECK(e.day <= 9635);
  }
  SECTION("any excluded code anywhere rejects the patient") {
    auto p = make_patient("k2", Sex::Male, 10000 - 60 * 365, "S");
    for (long d = 4000; d <= 10000; d += 300) add_diag(p, d, "K30");
    for (int i = 0; i < 5; ++i) add_lab(p, 5000 + i * 100, "hgb", 14.2);
    add_diag(p, 4100, "C18.9");  // colon cancer -> excluded
    p.sort_events();
    auto res = select_controls({p}, spec);
    CHECK(res.selected.empty());
    CHECK(res.counts.no_qualifying_code == 1);
  }
  SECTION("3-patient fixture, one failing the lab rule") {
    std::vector<PatientRecord> ps;
    for (int i = 0; i < 3; ++i) {
      auto p = make_patient("k" + std::to_string(i), Sex::Female, 10000 - 55 * 365, "S");
      for (long d = 4000; d <= 10000; d += 250) add_diag(p, d, "K40");
      const int n_labs = i == 1 ? 2 : 6;  // patient k1 under-measured
      for (int k = 0; k < n_labs; ++k) add_lab(p, 5000 + 50 * k, "plt", 250.0);
      p.sort_events();
      ps.push_back(p);
    }
    auto res = select_controls(ps, spec);
    REQUIRE(res.selected.size() == 2);  // manual filter: k0 and k2
    CHECK(res.counts.too_few_labs == 1);
  }
}

TEST_CASE("control selection invariant: no excluded prefix survives") {
  CohortSpec spec;
  std::vector<PatientRecord> ps;
  Rng rng(5);
  const std::vector<std::string> codes{"K10", "C18", "157.1", "E11", "230.4", "J45"};
  for (int i = 0; i < 40; ++i) {
    auto p = make_patient("r" + std::to_string(i), i % 2 ? Sex::Male : Sex::Female,
                          10000 - 60 * 365, "S");
    for (long d = 3000; d <= 10000; d += 200)
      add_diag(p, d, codes[rng.index(codes.size())]);
    for (int k = 0; k < 5; ++k) add_lab(p, 6000 + k * 10, "hgb", 13.0);
    p.sort_events();
    ps.push_back(p);
  }
  for (const auto& lp : select_controls(ps, spec).selected)
    for (const auto& e : lp.patient.events)
      if (e.kind == EventKind::Diagnosis)
        CHECK_FALSE(matches_any_prefix(normalize_code(e.code),
                                       spec.control_excluded_prefixes));
}

TEST_CASE("match_controls") {
  CohortSpec spec;
  auto make_labeled = [](const std::string& id, Sex sex, double age, Label label) {
    LabeledPatient lp;
    lp.patient.patient_id = id;
    lp.patient.sex = sex;
    lp.index_day = 20000;
    lp.patient.birth_day = 20000 - years_to_days(age);
    lp.label = label;
    return lp;
  };
  std::vector<LabeledPatient> cases{make_labeled("case0", Sex::Female, 70, Label::Case)};
  std::vector<LabeledPatient> pool;
  for (int i = 0; i < 40; ++i)
    pool.push_back(make_labeled("ctrl" + std::to_string(i), Sex::Female, 69.0 + (i % 5),
                                Label::Control));

  SECTION("full ratio when enough eligible controls") {
    auto res = match_controls(cases, pool, spec, 7);
    CHECK(res.matched_controls.size() == 29);
    CHECK(res.exhausted_cases == 0);
    CHECK(res.achieved_ratio == Catch::Approx(29.0));
  }
  SECTION("saturates when eligible pool is short") {
    // first 10 controls cycle ages 69..73; the caliper admits 8 of them
    std::vector<LabeledPatient> small(pool.begin(), pool.begin() + 10);
    auto res = match_controls(cases, small, spec, 7);
    CHECK(res.matched_controls.size() == 8);
    CHECK(res.saturated_cases == 1);
  }
  SECTION("sex and age caliper respected; exhaustion reported") {
    std::vector<LabeledPatient> males{make_labeled("m0", Sex::Male, 70, Label::Control)};
    auto res = match_controls(cases, males, spec, 7);
    CHECK(res.matched_controls.empty());
    CHECK(res.exhausted_cases == 1);

    std::vector<LabeledPatient> old_ctrls{make_labeled("o0", Sex::Female, 75, Label::Control)};
    CHECK(match_controls(cases, old_ctrls, spec, 7).exhausted_cases == 1);
  }
  SECTION("identical seed reproduces the matching; controls never reused") {
    std::vector<LabeledPatient> two_cases{cases[0],
                                          make_labeled("case1", Sex::Female, 70, Label::Case)};
    auto a = match_controls(two_cases, pool, spec, 99);
    auto b = match_controls(two_cases, pool, spec, 99);
    REQUIRE(a.matched_controls.size() == b.matched_controls.size());
    std::set<std::string> seen;
    for (std::size_t i = 0; i < a.matched_controls.size(); ++i) {
      CHECK(a.matched_controls[i].patient.patient_id ==
            b.matched_controls[i].patient.patient_id);
      CHECK(seen.insert(a.matched_controls[i].patient.patient_id).second);
    }
    auto c = match_controls(two_cases, pool, spec, 100);
    bool any_diff = c.matched_controls.size() != a.matched_controls.size();
    for (std::size_t i = 0; !any_diff && i < a.matched_controls.size(); ++i)
      any_diff = a.matched_controls[i].patient.patient_id !=
                 c.matched_controls[i].patient.patient_id;
    CHECK(any_diff);
  }
}
