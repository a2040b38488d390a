#pragma once

// Line-delimited file formats shared across subcommands:
//   events        patient_id \t day \t kind \t code \t value   (value empty for diag)
//   demographics  patient_id \t sex \t birth_day \t site
//   cohort        patient_id \t label \t index_day \t site
//   scores        patient_id,site,fold,label,logit,prob        (CSV with header)

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "premod/ehr.hpp"

namespace premod::io {

inline const char* kind_str(EventKind k) { return k == EventKind::Diagnosis ? "diag" : "lab"; }
inline const char* sex_str(Sex s) { return s == Sex::Female ? "F" : "M"; }
inline const char* label_str(Label l) { return l == Label::Case ? "case" : "control"; }

inline EventKind parse_kind(const std::string& s) {
  if (s == "diag") return EventKind::Diagnosis;
  if (s == "lab") return EventKind::Lab;
  throw Error("ParseError", "unknown event kind '" + s + "'");
}

inline Sex parse_sex(const std::string& s) {
  if (s == "F") return Sex::Female;
  if (s == "M") return Sex::Male;
  throw Error("ParseError", "unknown sex '" + s + "'");
}

inline Label parse_label(const std::string& s) {
  if (s == "case") return Label::Case;
  if (s == "control") return Label::Control;
  throw Error("ParseError", "unknown label '" + s + "'");
}

inline std::ofstream open_out(const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);  // binary: no platform newline mangling
  if (!out) throw Error("FileError", "cannot write " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("FileError", "cannot read " + path);
  return in;
}

inline void write_events(const std::vector<PatientRecord>& patients,
                         const std::string& path) {
  auto out = open_out(path);
  char buf[64];
  for (const auto& p : patients) {
    for (const auto& e : p.events) {
      out << p.patient_id << '\t' << e.day << '\t' << kind_str(e.kind) << '\t' << e.code
          << '\t';
      if (e.has_value) {
        std::snprintf(buf, sizeof buf, "%.17g", e.value);
        out << buf;
      }
      out << '\n';
    }
  }
}

inline void write_demographics(const std::vector<PatientRecord>& patients,
                               const std::string& path) {
  auto out = open_out(path);
  for (const auto& p : patients)
    out << p.patient_id << '\t' << sex_str(p.sex) << '\t' << p.birth_day << '\t' << p.site
        << '\n';
}

// Loads both files into per-patient records with day-sorted events.
// Patients come back sorted by id so downstream runs are order-stable.
inline std::vector<PatientRecord> load_patients(const std::string& events_path,
                                                const std::string& demo_path) {
  std::map<std::string, PatientRecord> by_id;
  {
    auto in = open_in(demo_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto f = split(line, '\t');
      if (f.size() != 4) throw Error("ParseError", "demographics line needs 4 fields: " + line);
      PatientRecord p;
      p.patient_id = f[0];
      p.sex = parse_sex(f[1]);
      p.birth_day = std::stol(f[2]);
      p.site = f[3];
      by_id.emplace(p.patient_id, std::move(p));
    }
  }
  {
    auto in = open_in(events_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto f = split(line, '\t');
      if (f.size() != 5) throw Error("ParseError", "event line needs 5 fields: " + line);
      auto it = by_id.find(f[0]);
      if (it == by_id.end())
        throw Error("ParseError", "event for unknown patient '" + f[0] + "'");
      EventRecord e;
      e.patient_id = f[0];
      e.day = std::stol(f[1]);
      e.kind = parse_kind(f[2]);
      e.code = f[3];
      e.has_value = !f[4].empty();
      if (e.has_value) e.value = std::stod(f[4]);
      if ((e.kind == EventKind::Lab) != e.has_value)
        throw Error("ParseError", "value must be present exactly for lab events: " + line);
      it->second.events.push_back(std::move(e));
    }
  }
  std::vector<PatientRecord> out;
  out.reserve(by_id.size());
  for (auto& [id, p] : by_id) {
    p.sort_events();
    out.push_back(std::move(p));
  }
  return out;
}

struct CohortRow {
  std::string patient_id;
  Label label;
  long index_day;
  std::string site;
};

inline void write_cohort(const std::vector<LabeledPatient>& cohort,
                         const std::string& path) {
  auto out = open_out(path);
  for (const auto& lp : cohort)
    out << lp.patient.patient_id << '\t' << label_str(lp.label) << '\t' << lp.index_day
        << '\t' << lp.patient.site << '\n';
}

inline std::vector<CohortRow> read_cohort(const std::string& path) {
  auto in = open_in(path);
  std::vector<CohortRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != 4) throw Error("ParseError", "cohort line needs 4 fields: " + line);
    rows.push_back({f[0], parse_label(f[1]), std::stol(f[2]), f[3]});
  }
  return rows;
}

struct ScoredPatient {
  std::string patient_id;
  std::string site;
  int fold = 0;  // model index within the LOSO iteration
  int label = 0;
  double logit = 0.0;
  double prob = 0.0;
};

inline void write_scores(const std::vector<ScoredPatient>& scores,
                         const std::string& path) {
  auto out = open_out(path);
  out << "patient_id,site,fold,label,logit,prob\n";
  char buf[128];
  for (const auto& s : scores) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g", s.label, s.logit, s.prob);
    out << s.patient_id << ',' << s.site << ',' << s.fold << ',' << buf << '\n';
  }
}

inline std::vector<ScoredPatient> read_scores(const std::string& path) {
  auto in = open_in(path);
  std::vector<ScoredPatient> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("patient_id,", 0) == 0) continue;
    }
    auto f = split(line, ',');
    if (f.size() != 6) throw Error("ParseError", "scores line needs 6 fields: " + line);
    ScoredPatient s;
    s.patient_id = f[0];
    s.site = f[1];
    s.fold = std::stoi(f[2]);
    s.label = std::stoi(f[3]);
    s.logit = std::stod(f[4]);
    s.prob = std::stod(f[5]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace premod::io
