#include "lpreg/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>

namespace lpreg {

namespace {

using nlohmann::json;

/// One config section being read: tracks consumed keys so anything left over
/// can be reported as unknown, and wraps type errors with the field path.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object())
      throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!doc_.contains(key)) return;
    try {
      doc_.at(key).get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  /// String field parsed through a name -> value mapping.
  template <typename T>
  void get_enum(const char* key, T& out,
                std::initializer_list<std::pair<const char*, T>> names) {
    std::string s;
    bool present = doc_.contains(key);
    get(key, s);
    if (!present) return;
    for (const auto& [name, value] : names) {
      if (s == name) {
        out = value;
        return;
      }
    }
    throw ConfigError(path_ + "." + key + ": unknown value '" + s + "'");
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return doc_.contains(key) ? &doc_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : doc_.items()) {
      if (!seen_.count(item.key()))
        throw ConfigError(path_ + "." + item.key() + ": unknown field");
    }
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_model(const json& doc, PolicyConfig& m) {
  Section s(doc, "model");
  s.get("vocab_size", m.vocab_size);
  s.get("context_window", m.context_window);
  s.get("embed_dim", m.embed_dim);
  s.get("hidden_size", m.hidden_size);
  s.get("attention", m.attention);
  s.get("init_scale", m.init_scale);
  s.get("eos_logit_bias", m.eos_logit_bias);
  s.get("init_biases", m.init_biases);
  s.finish();
}

void parse_env(const json& doc, EnvConfig& e) {
  Section s(doc, "env");
  s.get("family", e.family);
  s.get("difficulty", e.difficulty);
  s.get("p_direct", e.p_direct);
  s.get("direct_map", e.direct_map);
  s.get("connector_map", e.connector_map);
  s.get("eval_size", e.eval_size);
  s.get("eval_seed", e.eval_seed);
  s.get("eval_set_path", e.eval_set_path);
  s.finish();
}

void parse_objective(const json& doc, ObjectiveConfig& o) {
  Section s(doc, "objective");
  std::string variant;
  if (doc.contains("variant")) {
    s.get("variant", variant);
    auto v = parse_variant(variant);
    if (!v) throw ConfigError("objective.variant: unknown value '" + variant + "'");
    o.variant = *v;
  } else {
    s.get("variant", variant);  // marks the key as known
  }
  s.get("beta", o.beta);
  s.get("rho", o.rho);
  if (const json* t = s.child("threshold")) {
    Section st(*t, "objective.threshold");
    st.get_enum("kind", o.threshold.kind,
                {{"min_p", NoiseThresholdRule::Kind::min_p},
                 {"fixed", NoiseThresholdRule::Kind::fixed}});
    st.get("value", o.threshold.value);
    st.finish();
  }
  s.get("upper_clip", o.upper_clip);
  s.get_enum("kl_direction", o.kl_direction,
             {{"forward", KlDirection::forward},
              {"reverse", KlDirection::reverse}});
  s.get("filter_enabled", o.filter_enabled);
  s.get_enum("gate_basis", o.gate_basis,
             {{"lowest_probability", GateBasis::lowest_probability},
              {"highest_entropy", GateBasis::highest_entropy}});
  s.get("entropy_coefficient", o.entropy_coefficient);
  s.get("ppo_epsilon", o.ppo_epsilon);
  s.get("epsilon_high", o.epsilon_high);
  s.get("ref_kl_beta", o.ref_kl_beta);
  s.finish();
}

void parse_schedule(const json& doc, TrainSchedule& t) {
  Section s(doc, "schedule");
  s.get_enum("regime", t.regime,
             {{"on_policy", Regime::on_policy},
              {"off_policy", Regime::off_policy}});
  s.get("rollout_batch", t.rollout_batch);
  s.get("group_size", t.group_size);
  s.get("mini_batch", t.mini_batch);
  s.get("learning_rate", t.learning_rate);
  s.get("max_steps", t.max_steps);
  s.get("max_response_len", t.max_response_len);
  s.get("eval_every", t.eval_every);
  s.get("seed", t.seed);
  s.get("optimizer", t.optimizer);
  s.get("momentum", t.momentum);
  s.get("grad_clip_norm", t.grad_clip_norm);
  s.finish();
}

void parse_telemetry(const json& doc, TelemetryConfig& t) {
  Section s(doc, "telemetry");
  s.get("probe_enabled", t.probe_enabled);
  s.get("probe_every", t.probe_every);
  s.get("probe_subsample", t.probe_subsample);
  s.get("density_window", t.density_window);
  s.get("bins", t.bins);
  s.finish();
}

}  // namespace

const char* regime_name(Regime r) {
  return r == Regime::on_policy ? "on_policy" : "off_policy";
}

int TrainSchedule::updates_per_rollout() const {
  return regime == Regime::on_policy ? 1 : rollout_batch / mini_batch;
}

void TrainSchedule::validate() const {
  if (rollout_batch < 1)
    throw ConfigError("schedule.rollout_batch: must be >= 1");
  if (group_size < 2)
    throw ConfigError("schedule.group_size: must be >= 2 (group statistics)");
  if (mini_batch < 1) throw ConfigError("schedule.mini_batch: must be >= 1");
  if (regime == Regime::off_policy && rollout_batch % mini_batch != 0)
    throw ConfigError(
        "schedule.mini_batch: must divide rollout_batch in the off_policy "
        "regime");
  if (!(learning_rate > 0.0))
    throw ConfigError("schedule.learning_rate: must be > 0");
  if (max_steps < 0) throw ConfigError("schedule.max_steps: must be >= 0");
  if (max_response_len < 1)
    throw ConfigError("schedule.max_response_len: must be >= 1");
  if (eval_every < 1) throw ConfigError("schedule.eval_every: must be >= 1");
  if (optimizer != "sgd" && optimizer != "momentum")
    throw ConfigError("schedule.optimizer: must be 'sgd' or 'momentum'");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ConfigError("schedule.momentum: must lie in [0, 1)");
  if (!(grad_clip_norm >= 0.0))
    throw ConfigError("schedule.grad_clip_norm: must be >= 0");
}

void TelemetryConfig::validate() const {
  if (probe_every < 1) throw ConfigError("telemetry.probe_every: must be >= 1");
  if (!(probe_subsample >= 0.0 && probe_subsample <= 1.0))
    throw ConfigError("telemetry.probe_subsample: must lie in [0, 1]");
  if (density_window < 1)
    throw ConfigError("telemetry.density_window: must be >= 1");
  if (bins < 1) throw ConfigError("telemetry.bins: must be >= 1");
}

void ExperimentConfig::validate() const {
  model.validate();
  env.validate();
  objective.validate();
  schedule.validate();
  telemetry.validate();
}

ExperimentConfig parse_config(const nlohmann::json& doc) {
  ExperimentConfig cfg;
  Section root(doc, "config");
  if (const json* j = root.child("model")) parse_model(*j, cfg.model);
  if (const json* j = root.child("env")) parse_env(*j, cfg.env);
  if (const json* j = root.child("objective")) parse_objective(*j, cfg.objective);
  if (const json* j = root.child("schedule")) parse_schedule(*j, cfg.schedule);
  if (const json* j = root.child("telemetry")) parse_telemetry(*j, cfg.telemetry);
  root.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return parse_config(doc);
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["model"] = {{"vocab_size", cfg.model.vocab_size},
                  {"context_window", cfg.model.context_window},
                  {"embed_dim", cfg.model.embed_dim},
                  {"hidden_size", cfg.model.hidden_size},
                  {"attention", cfg.model.attention},
                  {"init_scale", cfg.model.init_scale},
                  {"eos_logit_bias", cfg.model.eos_logit_bias},
                  {"init_biases", cfg.model.init_biases}};
  doc["env"] = {{"family", cfg.env.family},
                {"difficulty", cfg.env.difficulty},
                {"p_direct", cfg.env.p_direct},
                {"direct_map", cfg.env.direct_map},
                {"connector_map", cfg.env.connector_map},
                {"eval_size", cfg.env.eval_size},
                {"eval_seed", cfg.env.eval_seed},
                {"eval_set_path", cfg.env.eval_set_path}};
  doc["objective"] = {
      {"variant", variant_name(cfg.objective.variant)},
      {"beta", cfg.objective.beta},
      {"rho", cfg.objective.rho},
      {"threshold",
       {{"kind", cfg.objective.threshold.kind == NoiseThresholdRule::Kind::min_p
                     ? "min_p"
                     : "fixed"},
        {"value", cfg.objective.threshold.value}}},
      {"upper_clip", cfg.objective.upper_clip},
      {"kl_direction",
       cfg.objective.kl_direction == KlDirection::forward ? "forward"
                                                          : "reverse"},
      {"filter_enabled", cfg.objective.filter_enabled},
      {"gate_basis", cfg.objective.gate_basis == GateBasis::lowest_probability
                         ? "lowest_probability"
                         : "highest_entropy"},
      {"entropy_coefficient", cfg.objective.entropy_coefficient},
      {"ppo_epsilon", cfg.objective.ppo_epsilon},
      {"epsilon_high", cfg.objective.epsilon_high},
      {"ref_kl_beta", cfg.objective.ref_kl_beta}};
  doc["schedule"] = {{"regime", regime_name(cfg.schedule.regime)},
                     {"rollout_batch", cfg.schedule.rollout_batch},
                     {"group_size", cfg.schedule.group_size},
                     {"mini_batch", cfg.schedule.mini_batch},
                     {"learning_rate", cfg.schedule.learning_rate},
                     {"max_steps", cfg.schedule.max_steps},
                     {"max_response_len", cfg.schedule.max_response_len},
                     {"eval_every", cfg.schedule.eval_every},
                     {"seed", cfg.schedule.seed},
                     {"optimizer", cfg.schedule.optimizer},
                     {"momentum", cfg.schedule.momentum},
                     {"grad_clip_norm", cfg.schedule.grad_clip_norm}};
  doc["telemetry"] = {{"probe_enabled", cfg.telemetry.probe_enabled},
                      {"probe_every", cfg.telemetry.probe_every},
                      {"probe_subsample", cfg.telemetry.probe_subsample},
                      {"density_window", cfg.telemetry.density_window},
                      {"bins", cfg.telemetry.bins}};
  return doc;
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  return fnv1a64(config_to_json(cfg).dump());
}

uint64_t resume_hash(const ExperimentConfig& cfg) {
  json doc = config_to_json(cfg);
  doc["schedule"].erase("max_steps");
  return fnv1a64(doc.dump());
}

void apply_overrides(nlohmann::json& doc, const nlohmann::json& overrides) {
  if (!overrides.is_object())
    throw ConfigError("overrides: expected an object of dotted-path keys");
  for (const auto& item : overrides.items()) {
    const std::string& path = item.key();
    json* node = &doc;
    size_t start = 0;
    for (size_t dot = path.find('.'); dot != std::string::npos;
         dot = path.find('.', start)) {
      node = &(*node)[path.substr(start, dot - start)];
      start = dot + 1;
    }
    (*node)[path.substr(start)] = item.value();
  }
}

}  // namespace lpreg
