#include "lpreg/telemetry.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace lpreg {

namespace {

using nlohmann::json;

TokenClass parse_class(const std::string& s) {
  if (s == "spark") return TokenClass::spark;
  if (s == "irrelevant") return TokenClass::irrelevant;
  if (s == "other") return TokenClass::other;
  throw IoError("probes: unknown token class '" + s + "'");
}

double parse_double_field(const std::string& field, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size())
    throw IoError("metrics: bad number '" + field + "' in " + where);
  return v;
}

}  // namespace

std::string probe_jsonl_line(const TokenProbeRecord& rec) {
  json row;
  row["step"] = rec.step;
  row["token_id"] = rec.token_id;
  row["token"] = rec.token;
  row["sampled_prob"] = rec.sampled_prob;
  row["position_entropy"] = rec.position_entropy;
  row["class"] = token_class_name(rec.cls);
  if (rec.has_proxy) {
    row["tau_used"] = rec.tau_used;
    row["kept_mass"] = rec.kept_mass;
    row["support_size"] = rec.support_size;
  }
  return row.dump();
}

std::vector<TokenProbeRecord> read_probes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("probes: cannot open " + path);
  std::vector<TokenProbeRecord> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("probes: bad line " + std::to_string(lineno) + ": " +
                    e.what());
    }
    TokenProbeRecord rec;
    rec.step = row.at("step").get<long>();
    rec.token_id = row.at("token_id").get<int>();
    rec.token = row.at("token").get<std::string>();
    rec.sampled_prob = row.at("sampled_prob").get<double>();
    rec.position_entropy = row.at("position_entropy").get<double>();
    rec.cls = parse_class(row.at("class").get<std::string>());
    if (row.contains("tau_used")) {
      rec.has_proxy = true;
      rec.tau_used = row.at("tau_used").get<double>();
      rec.kept_mass = row.at("kept_mass").get<double>();
      rec.support_size = row.at("support_size").get<int>();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

bool probe_selected(uint64_t seed, long step, uint64_t index, double rate) {
  if (rate >= 1.0) return true;
  if (rate <= 0.0) return false;
  Rng rng(derive_seed({stream_tag("probe"), seed,
                       static_cast<uint64_t>(step), index}));
  return rng.uniform() < rate;
}

// ============================================================================
// Metrics rows
// ============================================================================

std::string metrics_csv_line(const MetricsRow& row) {
  std::string line = std::to_string(row.step);
  line += ',';
  line += fmt_double(row.eval_accuracy);
  line += ',';
  line += fmt_double(row.mean_entropy);
  line += ',';
  line += fmt_double(row.loss);
  line += ',';
  line += fmt_double(row.delta);
  line += ',';
  if (row.reg_ratio_defined) line += fmt_double(row.reg_ratio);
  line += ',';
  line += std::to_string(row.gated_count);
  line += ',';
  line += fmt_double(row.spark_frequency);
  line += ',';
  line += fmt_double(row.irrelevant_low_prob_rate);
  return line;
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("metrics: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw IoError("metrics: unexpected header in " + path);
  std::vector<MetricsRow> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (line.back() == ',') fields.push_back("");
    if (fields.size() != 9)
      throw IoError("metrics: wrong field count on line " +
                    std::to_string(lineno) + " of " + path);
    const std::string where = path + ":" + std::to_string(lineno);
    MetricsRow r;
    r.step = std::stol(fields[0]);
    r.eval_accuracy = parse_double_field(fields[1], where);
    r.mean_entropy = parse_double_field(fields[2], where);
    r.loss = parse_double_field(fields[3], where);
    r.delta = parse_double_field(fields[4], where);
    if (!fields[5].empty()) {
      r.reg_ratio = parse_double_field(fields[5], where);
      r.reg_ratio_defined = true;
    }
    r.gated_count = std::stol(fields[6]);
    r.spark_frequency = parse_double_field(fields[7], where);
    r.irrelevant_low_prob_rate = parse_double_field(fields[8], where);
    rows.push_back(r);
  }
  return rows;
}

// ============================================================================
// Summaries
// ============================================================================

std::vector<DensityWindow> density_summary(
    const std::vector<TokenProbeRecord>& records, int bins, int window) {
  if (bins < 1 || window < 1)
    throw std::invalid_argument("density_summary: bins and window must be >= 1");
  // window index by step, steps counted from 1
  std::map<long, DensityWindow> acc;
  for (const TokenProbeRecord& rec : records) {
    const long idx = rec.step <= 1 ? 0 : (rec.step - 1) / window;
    DensityWindow& w = acc[idx];
    if (w.mass.empty()) {
      w.first_step = idx * window + 1;
      w.last_step = (idx + 1) * window;
      w.mass.assign(static_cast<size_t>(bins), 0.0);
    }
    double p = rec.sampled_prob;
    if (p < 0.0) p = 0.0;
    if (p > 1.0) p = 1.0;
    int b = static_cast<int>(p * bins);
    if (b >= bins) b = bins - 1;
    w.mass[static_cast<size_t>(b)] += 1.0;
    ++w.count;
  }
  std::vector<DensityWindow> out;
  out.reserve(acc.size());
  for (auto& [idx, w] : acc) {
    for (double& m : w.mass) m /= static_cast<double>(w.count);
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<GapRow> class_mean_prob_gap(
    const std::vector<TokenProbeRecord>& records, double low, double high) {
  struct Acc {
    double spark_sum = 0.0;
    long spark_n = 0;
    double irr_sum = 0.0;
    long irr_n = 0;
  };
  std::map<long, Acc> by_step;
  for (const TokenProbeRecord& rec : records) {
    if (rec.sampled_prob < low || rec.sampled_prob > high) continue;
    if (rec.cls == TokenClass::spark) {
      Acc& a = by_step[rec.step];
      a.spark_sum += rec.sampled_prob;
      ++a.spark_n;
    } else if (rec.cls == TokenClass::irrelevant) {
      Acc& a = by_step[rec.step];
      a.irr_sum += rec.sampled_prob;
      ++a.irr_n;
    }
  }
  std::vector<GapRow> out;
  for (const auto& [step, a] : by_step) {
    if (a.spark_n == 0 || a.irr_n == 0) continue;  // undefined: omit the row
    GapRow row;
    row.step = step;
    row.spark_mean = a.spark_sum / static_cast<double>(a.spark_n);
    row.irrelevant_mean = a.irr_sum / static_cast<double>(a.irr_n);
    row.gap = row.spark_mean - row.irrelevant_mean;
    out.push_back(row);
  }
  return out;
}

}  // namespace lpreg
