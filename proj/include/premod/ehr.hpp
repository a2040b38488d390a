#pragma once

// Core patient/event records and the case/control selection and matching
// rules. All selection is pure over immutable inputs; matching is the one
// seeded, stateful step.

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "premod/common.hpp"

namespace premod {

enum class EventKind { Diagnosis, Lab };
enum class Sex { Female, Male };
enum class Label { Control = 0, Case = 1 };

struct EventRecord {
  std::string patient_id;
  long day = 0;  // integer days since epoch
  EventKind kind = EventKind::Diagnosis;
  std::string code;  // diagnosis code or lab test name
  double value = 0.0;
  bool has_value = false;  // present exactly when kind == Lab
};

struct PatientRecord {
  std::string patient_id;
  Sex sex = Sex::Female;
  long birth_day = 0;
  std::string site;
  std::vector<EventRecord> events;  // sorted non-decreasing by day

  void sort_events() {
    std::stable_sort(events.begin(), events.end(),
                     [](const EventRecord& a, const EventRecord& b) { return a.day < b.day; });
  }
};

// Chapter-level prefix match on normalized (dot-stripped, uppercased) codes.
inline std::string normalize_code(const std::string& code) {
  std::string out;
  out.reserve(code.size());
  for (char c : code) {
    if (c == '.') continue;
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

inline bool matches_any_prefix(const std::string& normalized_code,
                               const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes)
    if (normalized_code.rfind(p, 0) == 0) return true;
  return false;
}

struct CohortSpec {
  std::vector<std::string> case_code_prefixes{"157", "C25"};
  std::vector<std::string> control_excluded_prefixes{
      "C15", "C16", "C17", "C18", "C19", "C20", "C21", "C25", "D00", "D01",
      "C7A", "150", "151", "152", "153", "154", "155", "156", "157", "230"};
  double min_age_years = 18.0;
  double min_history_years = 3.0;
  int min_lab_measurements = 3;
  std::vector<std::string> lab_panel;  // empty = every lab test counts
  long control_index_offset_days = 365;
  int matching_ratio = 29;
  double age_match_tolerance_years = 2.0;
  double history_window_years = 20.0;
  // Reading of "fewer than 3 measurements for any blood tests of interest":
  // false (default) = fewer than 3 across the whole panel excludes;
  // true = any single panel test with fewer than 3 excludes.
  bool per_test_lab_rule = false;

  void validate() const {
    if (matching_ratio < 1) throw Error("ConfigError", "matching_ratio must be >= 1");
    if (min_age_years <= 0 || min_history_years <= 0 || min_lab_measurements <= 0 ||
        control_index_offset_days <= 0 || history_window_years <= 0)
      throw Error("ConfigError", "cohort thresholds must be positive");
  }
};

struct LabeledPatient {
  PatientRecord patient;  // truncated to the history window preceding index_day
  Label label = Label::Control;
  long index_day = 0;

  double age_at_index() const {
    return static_cast<double>(index_day - patient.birth_day) / kDaysPerYear;
  }
};

// Per-exclusion counts for the selection flowchart.
struct SelectionCounts {
  std::size_t screened = 0;
  std::size_t no_qualifying_code = 0;  // cases: no case code; controls: excluded code present
  std::size_t under_age = 0;
  std::size_t short_history = 0;
  std::size_t too_few_labs = 0;
  std::size_t included = 0;
};

struct SelectionResult {
  std::vector<LabeledPatient> selected;
  SelectionCounts counts;
};

namespace detail {

inline bool lab_in_panel(const CohortSpec& spec, const std::string& code) {
  if (spec.lab_panel.empty()) return true;
  return std::find(spec.lab_panel.begin(), spec.lab_panel.end(), code) !=
         spec.lab_panel.end();
}

// Applies the shared age / history-span / lab-count filters and truncation.
// Returns nullopt when any filter rejects; bumps the matching counter.
inline std::optional<LabeledPatient> finalize(const PatientRecord& p, long index_day,
                                              Label label, const CohortSpec& spec,
                                              SelectionCounts& counts) {
  const double age = static_cast<double>(index_day - p.birth_day) / kDaysPerYear;
  if (age < spec.min_age_years) {
    ++counts.under_age;
    return std::nullopt;
  }
  if (p.events.empty() ||
      index_day - p.events.front().day < years_to_days(spec.min_history_years)) {
    ++counts.short_history;
    return std::nullopt;
  }
  const long window_start = index_day - years_to_days(spec.history_window_years);

  std::map<std::string, int> lab_counts;
  int panel_total = 0;
  for (const auto& e : p.events) {
    if (e.kind != EventKind::Lab || e.day >= index_day || e.day < window_start) continue;
    if (!lab_in_panel(spec, e.code)) continue;
    ++panel_total;
    ++lab_counts[e.code];
  }
  bool lab_ok;
  if (spec.per_test_lab_rule) {
    lab_ok = !spec.lab_panel.empty();
    for (const auto& name : spec.lab_panel)
      if (lab_counts[name] < spec.min_lab_measurements) lab_ok = false;
  } else {
    lab_ok = panel_total >= spec.min_lab_measurements;
  }
  if (!lab_ok) {
    ++counts.too_few_labs;
    return std::nullopt;
  }

  LabeledPatient out;
  out.label = label;
  out.index_day = index_day;
  out.patient.patient_id = p.patient_id;
  out.patient.sex = p.sex;
  out.patient.birth_day = p.birth_day;
  out.patient.site = p.site;
  for (const auto& e : p.events)
    if (e.day >= window_start && e.day <= index_day) out.patient.events.push_back(e);
  ++counts.included;
  return out;
}

}  // namespace detail

// Cases: first event matching a case-code prefix defines the index date.
inline SelectionResult select_cases(const std::vector<PatientRecord>& patients,
                                    const CohortSpec& spec) {
  spec.validate();
  SelectionResult res;
  for (const auto& p : patients) {
    ++res.counts.screened;
    long index_day = 0;
    bool found = false;
    for (const auto& e : p.events) {
      if (e.kind == EventKind::Diagnosis &&
          matches_any_prefix(normalize_code(e.code), spec.case_code_prefixes)) {
        index_day = e.day;
        found = true;
        break;
      }
    }
    if (!found) {
      ++res.counts.no_qualifying_code;
      continue;
    }
    if (auto lp = detail::finalize(p, index_day, Label::Case, spec, res.counts))
      res.selected.push_back(std::move(*lp));
  }
  return res;
}

// Controls: no excluded code anywhere in history; index date is the most
// recent record minus the configured offset (one year).
inline SelectionResult select_controls(const std::vector<PatientRecord>& patients,
                                       const CohortSpec& spec) {
  spec.validate();
  SelectionResult res;
  for (const auto& p : patients) {
    ++res.counts.screened;
    bool excluded = false;
    for (const auto& e : p.events) {
      if (e.kind == EventKind::Diagnosis &&
          matches_any_prefix(normalize_code(e.code), spec.control_excluded_prefixes)) {
        excluded = true;
        break;
      }
    }
    if (excluded || p.events.empty()) {
      ++res.counts.no_qualifying_code;
      continue;
    }
    const long index_day = p.events.back().day - spec.control_index_offset_days;
    if (auto lp = detail::finalize(p, index_day, Label::Control, spec, res.counts))
      res.selected.push_back(std::move(*lp));
  }
  return res;
}

struct MatchResult {
  std::vector<LabeledPatient> matched_controls;
  std::size_t exhausted_cases = 0;  // cases with zero eligible controls
  std::size_t saturated_cases = 0;  // cases matched below the target ratio
  double achieved_ratio = 0.0;
};

// Age- and sex-matched control sampling, without replacement, up to
// matching_ratio controls per case. Deterministic for a fixed seed.
inline MatchResult match_controls(const std::vector<LabeledPatient>& cases,
                                  const std::vector<LabeledPatient>& controls,
                                  const CohortSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (controls.empty()) throw Error("MatchExhausted", "no controls to match against");
  MatchResult res;
  Rng rng(child_seed(seed, "match_controls"));
  std::vector<bool> used(controls.size(), false);
  std::size_t total = 0;
  for (const auto& c : cases) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < controls.size(); ++i) {
      if (used[i]) continue;
      if (controls[i].patient.sex != c.patient.sex) continue;
      if (std::abs(controls[i].age_at_index() - c.age_at_index()) >
          spec.age_match_tolerance_years)
        continue;
      eligible.push_back(i);
    }
    if (eligible.empty()) {
      ++res.exhausted_cases;
      continue;
    }
    const std::size_t want = static_cast<std::size_t>(spec.matching_ratio);
    const std::size_t take = std::min(want, eligible.size());
    if (take < want) ++res.saturated_cases;
    // partial Fisher-Yates over the eligible list
    for (std::size_t j = 0; j < take; ++j) {
      const std::size_t pick = j + rng.index(eligible.size() - j);
      std::swap(eligible[j], eligible[pick]);
      used[eligible[j]] = true;
      res.matched_controls.push_back(controls[eligible[j]]);
      ++total;
    }
  }
  res.achieved_ratio =
      cases.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(cases.size());
  return res;
}

}  // namespace premod
