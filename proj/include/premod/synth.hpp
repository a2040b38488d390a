#pragma once

// Multi-site synthetic cohort generator with a planted pre-diagnostic
// signal: cases ramp up a designated risk-code group and drift designated
// labs toward abnormal over the onset window before their index date.
// Everything is derived from per-patient child seeds, so generation is
// order-independent and reproducible byte for byte.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"

#include "premod/ehr.hpp"

namespace premod {

struct SynthLabSpec {
  std::string name;
  double healthy_mean = 0.0;
  double healthy_sd = 1.0;
  int drift = 0;  // -1 falls toward abnormal, +1 rises, 0 no planted drift
};

struct SynthSiteSpec {
  std::string name;
  int n_cases = 0;
  int n_controls = 0;
  double visit_rate_scale = 1.0;  // baseline intensity offset
  double lab_shift_sd = 0.0;      // healthy setpoint shift, in units of sd
  double code_mix_shift = 0.0;    // rotates the background code distribution
};

struct SynthConfig {
  std::vector<SynthSiteSpec> sites;
  int code_vocab_size = 64;
  std::vector<SynthLabSpec> labs;
  std::vector<std::string> risk_codes{"K000", "K001", "K002"};
  double signal_onset_years = 5.0;
  double risk_code_boost = 2.0;      // extra risk-code events per visit at full ramp
  double lab_drift_sds = 2.5;        // drift magnitude at the index date
  double visit_rate_per_year = 12.0;
  double history_years_min = 6.0;
  double history_years_max = 16.0;
  double setpoint_sd = 0.5;          // per-patient lab setpoint spread, in sds
  long index_day_base = 15000;
  std::uint64_t seed = 1;

  void validate() const {
    if (sites.empty()) throw Error("ConfigError", "at least one site required");
    for (const auto& s : sites)
      if (s.n_cases <= 0 || s.n_controls <= 0)
        throw Error("ConfigError", "per-site case/control counts must be positive");
    if (code_vocab_size <= 0) throw Error("ConfigError", "empty code vocabulary");
    if (labs.empty()) throw Error("ConfigError", "empty lab panel");
    if (signal_onset_years <= 0 || signal_onset_years > history_years_min)
      throw Error("ConfigError", "signal_onset_years must be in (0, history_years_min]");
    if (visit_rate_per_year <= 0 || history_years_min <= 0 ||
        history_years_max < history_years_min)
      throw Error("ConfigError", "bad rate or history bounds");
  }

  std::vector<std::string> code_vocab() const {
    std::vector<std::string> v;
    char buf[16];
    for (int i = 0; i < code_vocab_size; ++i) {
      std::snprintf(buf, sizeof buf, "K%03d", i);
      v.emplace_back(buf);
    }
    return v;
  }

  std::vector<std::string> lab_names() const {
    std::vector<std::string> v;
    for (const auto& l : labs) v.push_back(l.name);
    return v;
  }
};

inline SynthConfig default_synth_config() {
  SynthConfig c;
  c.labs = {{"hgb", 14.0, 1.2, -1}, {"plt", 250.0, 60.0, +1}, {"glu", 95.0, 12.0, +1},
            {"alt", 28.0, 9.0, 0},  {"tbil", 0.7, 0.25, +1},  {"wbc", 6.5, 1.6, 0},
            {"cre", 0.95, 0.2, 0},  {"alp", 75.0, 20.0, +1}};
  c.sites = {{"SiteA", 48, 960, 1.0, 0.0, 0.0},
             {"SiteB", 48, 960, 0.8, 0.3, 1.0},
             {"SiteC", 48, 960, 1.25, -0.3, 2.0}};
  return c;
}

namespace detail {

// Logistic ramp of the planted signal: ~0 beyond the onset horizon, ~1 at
// the index date.
inline double signal_ramp(double years_before_index, double onset_years) {
  return 1.0 / (1.0 + std::exp(-(4.0 - 8.0 * years_before_index / onset_years)));
}

// Background code weights: Zipf-ish, rotated per site so that LOSO transfer
// is non-trivial.
inline std::vector<double> code_weights(int vocab, double mix_shift) {
  std::vector<double> w(static_cast<std::size_t>(vocab));
  for (int i = 0; i < vocab; ++i) {
    const double pos = std::fmod(i + mix_shift, static_cast<double>(vocab));
    w[i] = 1.0 / (1.0 + pos);
  }
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return w;
}

inline int sample_categorical(Rng& rng, const std::vector<double>& w) {
  double u = rng.uniform();
  for (std::size_t i = 0; i < w.size(); ++i) {
    u -= w[i];
    if (u <= 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(w.size()) - 1;
}

}  // namespace detail

// Generates one patient. Cases get the planted ramp plus a case-defining
// "C25" event at the index date; controls get a trailing year of events so
// that last-record-minus-one-year lands exactly on their intended index.
inline PatientRecord generate_patient(const SynthConfig& cfg, const SynthSiteSpec& site,
                                      bool is_case, int ordinal) {
  char idbuf[64];
  std::snprintf(idbuf, sizeof idbuf, "%s-%s-%04d", site.name.c_str(),
                is_case ? "case" : "ctrl", ordinal);
  PatientRecord p;
  p.patient_id = idbuf;
  p.site = site.name;
  Rng rng(child_seed(cfg.seed, p.patient_id));

  p.sex = rng.uniform() < 0.5 ? Sex::Female : Sex::Male;
  const long index_day = cfg.index_day_base + static_cast<long>(rng.index(365));
  const double age_years = rng.uniform(55.0, 85.0);
  p.birth_day = index_day - years_to_days(age_years);

  const double hist_years = rng.uniform(cfg.history_years_min, cfg.history_years_max);
  const long hist_days = years_to_days(hist_years);
  const long tail_days = is_case ? 0 : 365;  // control records run past the index

  const auto weights = detail::code_weights(cfg.code_vocab_size, site.code_mix_shift);
  const auto vocab = cfg.code_vocab();

  // per-patient lab setpoints
  std::vector<double> setpoint(cfg.labs.size());
  for (std::size_t l = 0; l < cfg.labs.size(); ++l)
    setpoint[l] = cfg.labs[l].healthy_mean +
                  cfg.labs[l].healthy_sd * (site.lab_shift_sd + cfg.setpoint_sd * rng.normal());

  auto emit_diag = [&](long day, const std::string& code) {
    p.events.push_back({p.patient_id, day, EventKind::Diagnosis, code, 0.0, false});
  };
  auto emit_lab = [&](long day, std::size_t l, double ramp) {
    const auto& spec = cfg.labs[l];
    const double drifted =
        setpoint[l] + spec.drift * ramp * cfg.lab_drift_sds * spec.healthy_sd;
    const double v = drifted + 0.35 * spec.healthy_sd * rng.normal();
    p.events.push_back({p.patient_id, day, EventKind::Lab, spec.name, v, true});
  };

  const double rate = cfg.visit_rate_per_year * site.visit_rate_scale;
  const long n_visits =
      std::max<long>(4, rng.poisson(rate * (hist_years + tail_days / kDaysPerYear)));
  std::vector<long> visit_days;
  visit_days.push_back(index_day - hist_days);  // anchor the history span
  for (long i = 1; i < n_visits; ++i)
    visit_days.push_back(index_day - hist_days +
                         static_cast<long>(rng.index(static_cast<std::size_t>(hist_days + tail_days))));
  if (!is_case) visit_days.push_back(index_day + tail_days);  // most recent record

  for (long day : visit_days) {
    const double years_before = static_cast<double>(index_day - day) / kDaysPerYear;
    const double ramp = (is_case && years_before >= 0.0)
                            ? detail::signal_ramp(years_before, cfg.signal_onset_years)
                            : 0.0;
    const long n_codes = 1 + rng.poisson(0.8);
    for (long c = 0; c < n_codes; ++c)
      emit_diag(day, vocab[static_cast<std::size_t>(detail::sample_categorical(rng, weights))]);
    if (ramp > 0.0 && !cfg.risk_codes.empty()) {
      const long extra = rng.poisson(ramp * cfg.risk_code_boost);
      for (long c = 0; c < extra; ++c)
        emit_diag(day, cfg.risk_codes[rng.index(cfg.risk_codes.size())]);
    }
    if (rng.uniform() < 0.4) {
      for (std::size_t l = 0; l < cfg.labs.size(); ++l)
        if (rng.uniform() < 0.5) emit_lab(day, l, ramp);
    }
  }
  // guaranteed panel draws so every patient passes the lab-count filter
  for (long off : {30L, 400L, 800L})
    for (std::size_t l = 0; l < cfg.labs.size(); ++l)
      emit_lab(index_day - off,  l,
               is_case ? detail::signal_ramp(off / kDaysPerYear, cfg.signal_onset_years)
                       : 0.0);

  if (is_case) emit_diag(index_day, "C25");
  p.sort_events();
  return p;
}

inline std::vector<PatientRecord> generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<PatientRecord> out;
  for (const auto& site : cfg.sites) {
    for (int i = 0; i < site.n_cases; ++i)
      out.push_back(generate_patient(cfg, site, true, i));
    for (int i = 0; i < site.n_controls; ++i)
      out.push_back(generate_patient(cfg, site, false, i));
  }
  return out;
}

// ---- JSON config (documented in the README)

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c = default_synth_config();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("code_vocab_size")) c.code_vocab_size = j.at("code_vocab_size");
  if (j.contains("risk_codes")) c.risk_codes = j.at("risk_codes").get<std::vector<std::string>>();
  if (j.contains("signal_onset_years")) c.signal_onset_years = j.at("signal_onset_years");
  if (j.contains("risk_code_boost")) c.risk_code_boost = j.at("risk_code_boost");
  if (j.contains("lab_drift_sds")) c.lab_drift_sds = j.at("lab_drift_sds");
  if (j.contains("visit_rate_per_year")) c.visit_rate_per_year = j.at("visit_rate_per_year");
  if (j.contains("history_years_min")) c.history_years_min = j.at("history_years_min");
  if (j.contains("history_years_max")) c.history_years_max = j.at("history_years_max");
  if (j.contains("setpoint_sd")) c.setpoint_sd = j.at("setpoint_sd");
  if (j.contains("index_day_base")) c.index_day_base = j.at("index_day_base");
  if (j.contains("labs")) {
    c.labs.clear();
    for (const auto& jl : j.at("labs"))
      c.labs.push_back({jl.at("name"), jl.at("mean"), jl.at("sd"), jl.value("drift", 0)});
  }
  if (j.contains("sites")) {
    c.sites.clear();
    for (const auto& js : j.at("sites"))
      c.sites.push_back({js.at("name"), js.at("n_cases"), js.at("n_controls"),
                         js.value("visit_rate_scale", 1.0), js.value("lab_shift_sd", 0.0),
                         js.value("code_mix_shift", 0.0)});
  }
  return c;
}

}  // namespace premod
