#pragma once

// Time-bucketed encoding of irregular event histories into fixed T x D
// matrices: diagnosis columns carry per-bucket occurrence counts, lab columns
// per-bucket averages (standardized). Bucket t covers
// [index_day - (t+1)*tau, index_day - t*tau), so t = 0 sits against the index
// date and lead-time exclusion zeroes a prefix of buckets.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "premod/ehr.hpp"
#include "premod/io.hpp"

namespace premod {

struct LabStandardization {
  double mean = 0.0;
  double sd = 1.0;
};

struct EncoderConfig {
  int tau_days = 30;
  int T = 240;  // 20 years x 12 monthly buckets
  std::vector<std::string> code_vocab;
  std::vector<std::string> lab_vocab;
  std::vector<LabStandardization> lab_standardization;  // parallel to lab_vocab
  bool standardize_labs = true;  // false = raw bucket averages

  int C() const { return static_cast<int>(code_vocab.size()); }
  int L() const { return static_cast<int>(lab_vocab.size()); }
  int D() const { return C() + L(); }

  void validate() const {
    if (tau_days <= 0 || T <= 0) throw Error("ConfigError", "tau_days and T must be positive");
    if (D() == 0) throw Error("VocabEmpty", "code and lab vocabularies are both empty");
    for (const auto* v : {&code_vocab, &lab_vocab}) {
      auto sorted = *v;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw Error("ConfigError", "vocabulary contains duplicates");
    }
    if (standardize_labs && lab_standardization.size() != lab_vocab.size())
      throw Error("ConfigError", "lab standardization must match lab vocabulary");
  }

  std::uint64_t code_vocab_hash() const { return hash_strings(code_vocab); }
  std::uint64_t lab_vocab_hash() const { return hash_strings(lab_vocab); }
};

struct BucketMatrix {
  int T = 0, C = 0, L = 0;
  int tau_days = 30;
  std::vector<double> values;  // T x (C+L), row-major
  std::string patient_id;
  std::string site;
  long index_day = 0;
  int label = 0;
  double lead_years_excluded = 0.0;  // 0 = raw matrix
  long oov_events = 0;               // events whose code/lab was outside the vocab

  int D() const { return C + L; }
  double& at(int t, int d) { return values[static_cast<std::size_t>(t) * D() + d]; }
  double at(int t, int d) const { return values[static_cast<std::size_t>(t) * D() + d]; }
  bool raw() const { return lead_years_excluded == 0.0; }
};

// Encodes the history as seen from an arbitrary virtual index date; only
// events strictly before `index_day` fall into buckets.
inline BucketMatrix encode_at(const PatientRecord& patient, long index_day, Label label,
                              const EncoderConfig& cfg) {
  cfg.validate();
  BucketMatrix m;
  m.T = cfg.T;
  m.C = cfg.C();
  m.L = cfg.L();
  m.tau_days = cfg.tau_days;
  m.values.assign(static_cast<std::size_t>(cfg.T) * cfg.D(), 0.0);
  m.patient_id = patient.patient_id;
  m.site = patient.site;
  m.index_day = index_day;
  m.label = static_cast<int>(label);

  std::unordered_map<std::string, int> code_ix, lab_ix;
  for (int i = 0; i < cfg.C(); ++i) code_ix.emplace(cfg.code_vocab[i], i);
  for (int i = 0; i < cfg.L(); ++i) lab_ix.emplace(cfg.lab_vocab[i], i);

  // per (bucket, lab) running sums for the averages
  std::vector<double> lab_sum(static_cast<std::size_t>(cfg.T) * cfg.L(), 0.0);
  std::vector<int> lab_n(static_cast<std::size_t>(cfg.T) * cfg.L(), 0);

  const long horizon = static_cast<long>(cfg.T) * cfg.tau_days;
  for (const auto& e : patient.events) {
    if (e.day >= index_day || e.day < index_day - horizon) continue;
    const long t = (index_day - 1 - e.day) / cfg.tau_days;
    if (e.kind == EventKind::Diagnosis) {
      auto it = code_ix.find(e.code);
      if (it == code_ix.end()) {
        ++m.oov_events;
        continue;
      }
      m.at(static_cast<int>(t), it->second) += 1.0;
    } else {
      auto it = lab_ix.find(e.code);
      if (it == lab_ix.end()) {
        ++m.oov_events;
        continue;
      }
      lab_sum[t * cfg.L() + it->second] += e.value;
      lab_n[t * cfg.L() + it->second] += 1;
    }
  }
  for (int t = 0; t < cfg.T; ++t) {
    for (int l = 0; l < cfg.L(); ++l) {
      const int n = lab_n[static_cast<std::size_t>(t) * cfg.L() + l];
      if (n == 0) continue;  // absent bucket stays 0
      double v = lab_sum[static_cast<std::size_t>(t) * cfg.L() + l] / n;
      if (cfg.standardize_labs) {
        const auto& st = cfg.lab_standardization[l];
        v = (v - st.mean) / (st.sd > 0.0 ? st.sd : 1.0);
      }
      m.at(t, cfg.C() + l) = v;
    }
  }
  return m;
}

inline BucketMatrix encode(const LabeledPatient& patient, const EncoderConfig& cfg) {
  return encode_at(patient.patient, patient.index_day, patient.label, cfg);
}

// Zeroes every bucket whose interval intersects the final lead_years before
// the index date (a prefix, given the t = 0 orientation). Evaluation-only;
// training uses raw matrices.
inline BucketMatrix exclude_lead_time(const BucketMatrix& m, double lead_years) {
  BucketMatrix out = m;
  if (lead_years <= 0.0) return out;
  const long lead_days = std::llround(lead_years * 365.0);
  const long zeroed = std::min<long>((lead_days + m.tau_days - 1) / m.tau_days, m.T);
  std::fill(out.values.begin(),
            out.values.begin() + static_cast<std::size_t>(zeroed) * m.D(), 0.0);
  out.lead_years_excluded = std::max(m.lead_years_excluded, lead_years);
  return out;
}

// Fits per-lab mean/sd over all in-window pre-index lab values of the given
// (development) patients.
inline std::vector<LabStandardization> fit_lab_standardization(
    const std::vector<LabeledPatient>& dev, const EncoderConfig& cfg) {
  std::vector<double> sum(cfg.L(), 0.0), sumsq(cfg.L(), 0.0);
  std::vector<long> n(cfg.L(), 0);
  std::unordered_map<std::string, int> lab_ix;
  for (int i = 0; i < cfg.L(); ++i) lab_ix.emplace(cfg.lab_vocab[i], i);
  const long horizon = static_cast<long>(cfg.T) * cfg.tau_days;
  for (const auto& lp : dev) {
    for (const auto& e : lp.patient.events) {
      if (e.kind != EventKind::Lab) continue;
      if (e.day >= lp.index_day || e.day < lp.index_day - horizon) continue;
      auto it = lab_ix.find(e.code);
      if (it == lab_ix.end()) continue;
      sum[it->second] += e.value;
      sumsq[it->second] += e.value * e.value;
      ++n[it->second];
    }
  }
  std::vector<LabStandardization> out(cfg.L());
  for (int l = 0; l < cfg.L(); ++l) {
    if (n[l] == 0) continue;
    const double mean = sum[l] / static_cast<double>(n[l]);
    double var = sumsq[l] / static_cast<double>(n[l]) - mean * mean;
    if (var < 0.0) var = 0.0;
    out[l].mean = mean;
    out[l].sd = std::sqrt(var);
    if (out[l].sd <= 0.0) out[l].sd = 1.0;
  }
  return out;
}

// One matrix per virtual index date, stepping at step_days across the span
// from the first event to the labeled index date, oldest window first.
inline std::vector<std::pair<long, BucketMatrix>> sliding_windows(
    const LabeledPatient& patient, const EncoderConfig& cfg, int step_days = 30) {
  if (step_days <= 0) throw Error("ConfigError", "step_days must be positive");
  std::vector<std::pair<long, BucketMatrix>> out;
  const long first_day =
      patient.patient.events.empty() ? patient.index_day : patient.patient.events.front().day;
  const long span = std::max<long>(0, patient.index_day - first_day);
  const long n = std::max<long>(1, span / step_days);
  for (long k = 0; k < n; ++k) {
    const long end = patient.index_day - (n - 1 - k) * step_days;
    BucketMatrix m = encode_at(patient.patient, end, patient.label, cfg);
    out.emplace_back(end, std::move(m));
  }
  return out;
}

// Frequency-ranked code/lab vocabularies from development patients; codes
// matching the given skip prefixes (case-defining and excluded chapters) are
// left out since they cannot occur pre-index in a valid cohort.
inline void build_vocab(const std::vector<LabeledPatient>& dev,
                        const std::vector<std::string>& skip_prefixes,
                        std::size_t max_codes, std::size_t max_labs, EncoderConfig& cfg) {
  std::map<std::string, long> code_freq, lab_freq;
  for (const auto& lp : dev) {
    for (const auto& e : lp.patient.events) {
      if (e.day >= lp.index_day) continue;
      if (e.kind == EventKind::Diagnosis) {
        if (matches_any_prefix(normalize_code(e.code), skip_prefixes)) continue;
        ++code_freq[e.code];
      } else {
        ++lab_freq[e.code];
      }
    }
  }
  auto top = [](const std::map<std::string, long>& freq, std::size_t k) {
    std::vector<std::pair<std::string, long>> v(freq.begin(), freq.end());
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (v.size() > k) v.resize(k);
    std::vector<std::string> names;
    names.reserve(v.size());
    for (auto& [name, cnt] : v) names.push_back(name);
    std::sort(names.begin(), names.end());
    return names;
  };
  cfg.code_vocab = top(code_freq, max_codes);
  cfg.lab_vocab = top(lab_freq, max_labs);
}

// ---- matrix dump (binary header + row-major doubles, plus a CSV debug form)

inline void write_matrices(const std::vector<BucketMatrix>& ms, const EncoderConfig& cfg,
                           const std::string& path) {
  auto out = io::open_out(path);
  const char magic[8] = {'P', 'B', 'M', 'X', '1', '\0', '\0', '\0'};
  out.write(magic, 8);
  auto w32 = [&](std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<char*>(b), 4);
  };
  auto w64 = [&](std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<char*>(b), 8);
  };
  w32(static_cast<std::uint32_t>(cfg.T));
  w32(static_cast<std::uint32_t>(cfg.C()));
  w32(static_cast<std::uint32_t>(cfg.L()));
  w64(cfg.code_vocab_hash());
  w64(cfg.lab_vocab_hash());
  w64(ms.size());
  for (const auto& m : ms) {
    w64(m.patient_id.size());
    out.write(m.patient_id.data(), static_cast<std::streamsize>(m.patient_id.size()));
    w64(static_cast<std::uint64_t>(m.index_day));
    w32(static_cast<std::uint32_t>(m.label));
    for (double v : m.values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      w64(bits);
    }
  }
}

inline std::vector<BucketMatrix> read_matrices(const std::string& path,
                                               const EncoderConfig& cfg) {
  auto in = io::open_in(path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "PBMX1\0\0\0", 8) != 0)
    throw Error("Corrupt", "bad matrix dump magic in " + path);
  auto r32 = [&]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  };
  auto r64 = [&]() {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  };
  const int T = static_cast<int>(r32());
  const int C = static_cast<int>(r32());
  const int L = static_cast<int>(r32());
  const std::uint64_t ch = r64(), lh = r64();
  if (T != cfg.T || C != cfg.C() || L != cfg.L() || ch != cfg.code_vocab_hash() ||
      lh != cfg.lab_vocab_hash())
    throw Error("VocabMismatch", "matrix dump does not match encoder config");
  const std::uint64_t count = r64();
  std::vector<BucketMatrix> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    BucketMatrix m;
    m.T = T;
    m.C = C;
    m.L = L;
    m.tau_days = cfg.tau_days;
    const std::uint64_t idlen = r64();
    m.patient_id.resize(idlen);
    in.read(m.patient_id.data(), static_cast<std::streamsize>(idlen));
    m.index_day = static_cast<long>(static_cast<std::int64_t>(r64()));
    m.label = static_cast<int>(r32());
    m.values.resize(static_cast<std::size_t>(T) * (C + L));
    for (auto& v : m.values) {
      const std::uint64_t bits = r64();
      std::memcpy(&v, &bits, 8);
    }
    if (!in) throw Error("Corrupt", "truncated matrix dump " + path);
    out.push_back(std::move(m));
  }
  return out;
}

inline void write_matrices_csv(const std::vector<BucketMatrix>& ms,
                               const EncoderConfig& cfg, const std::string& path) {
  auto out = io::open_out(path);
  out << "patient_id,bucket,feature,value\n";
  char buf[64];
  for (const auto& m : ms) {
    for (int t = 0; t < m.T; ++t)
      for (int d = 0; d < m.D(); ++d) {
        const double v = m.at(t, d);
        if (v == 0.0) continue;
        const std::string& name =
            d < m.C ? cfg.code_vocab[d] : cfg.lab_vocab[d - m.C];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << m.patient_id << ',' << t << ',' << name << ',' << buf << '\n';
      }
  }
}

}  // namespace premod
