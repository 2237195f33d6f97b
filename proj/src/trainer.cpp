#include "lpreg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "lpreg/proxy.hpp"
#include "lpreg/svg.hpp"

namespace lpreg {

namespace {

using nlohmann::json;

/// Binary reward of one sampled output against its task.
double score_output(const Environment& env, const TaskInstance& task,
                    const std::vector<int>& output) {
  return env.verify(output, task).reward;
}

}  // namespace

// ============================================================================
// Rollout
// ============================================================================

TrainBatch rollout(const PolicyParams& params, const Environment& env,
                   const ExperimentConfig& cfg, long step) {
  const TrainSchedule& sched = cfg.schedule;
  const bool need_proxies = cfg.objective.variant == Variant::lp_reg &&
                            cfg.objective.filter_enabled;

  TrainBatch batch;
  batch.step = step;
  batch.behavior_fingerprint = params.fingerprint();
  batch.groups.reserve(static_cast<size_t>(sched.rollout_batch));

  std::vector<double> sampled_probs;  // concatenated, for delta

  for (int p = 0; p < sched.rollout_batch; ++p) {
    RolloutGroup group;
    const uint64_t task_seed =
        derive_seed({stream_tag("task"), sched.seed,
                     static_cast<uint64_t>(step), static_cast<uint64_t>(p)});
    group.task = env.generate(task_seed);

    for (int m = 0; m < sched.group_size; ++m) {
      Rng rng(derive_seed({stream_tag("rollout"), sched.seed,
                           static_cast<uint64_t>(step),
                           static_cast<uint64_t>(p), static_cast<uint64_t>(m)}));
      Trajectory traj =
          sample_sequence(params, group.task.prompt, sched.max_response_len,
                          1.0, rng, need_proxies);
      group.rewards.push_back(score_output(env, group.task, traj.output));

      if (need_proxies) {
        std::vector<ProxyDistribution> traj_proxies;
        traj_proxies.reserve(traj.step_dists.size());
        for (const TokenDistribution& dist : traj.step_dists) {
          const double tau = resolve_threshold(cfg.objective.threshold, dist);
          traj_proxies.push_back(build_proxy(dist, tau));
        }
        batch.proxies.push_back(std::move(traj_proxies));
        traj.step_dists.clear();  // proxies built; free the dense snapshots
        traj.step_dists.shrink_to_fit();
      }
      sampled_probs.insert(sampled_probs.end(), traj.step_probs.begin(),
                           traj.step_probs.end());
      batch.token_count += static_cast<long>(traj.output.size());
      group.trajectories.push_back(std::move(traj));
    }
    group.advantages = group_advantages(group.rewards);
    batch.groups.push_back(std::move(group));
  }

  batch.delta = batch_delta(sampled_probs, cfg.objective.rho);
  return batch;
}

// ============================================================================
// PreparedUpdate
// ============================================================================

PreparedUpdate::PreparedUpdate(const TrainBatch& batch, size_t group_begin,
                               size_t group_end,
                               const ObjectiveConfig& objective,
                               const PolicyParams* ref_params)
    : batch_(batch),
      group_begin_(group_begin),
      group_end_(group_end),
      objective_(objective),
      ref_params_(ref_params) {
  if (group_end_ > batch_.groups.size() || group_begin_ >= group_end_)
    throw std::invalid_argument("PreparedUpdate: bad group range");
  if (objective_.ref_kl_beta != 0.0) {
    if (!ref_params_)
      throw std::invalid_argument(
          "PreparedUpdate: reference KL requires reference parameters");
    // Freeze the reference distribution of every scored position now;
    // it never changes across value/gradient calls.
    for (size_t g = group_begin_; g < group_end_; ++g) {
      for (const Trajectory& traj : batch_.groups[g].trajectories) {
        std::vector<int> context = traj.prompt;
        for (int tok : traj.output) {
          ref_dists_.push_back(
              next_token_distribution(*ref_params_, context, 1.0));
          context.push_back(tok);
        }
      }
    }
  }
}

double PreparedUpdate::value(const PolicyParams& params) const {
  return score(params, nullptr);
}

void PreparedUpdate::add_gradient(const PolicyParams& params,
                                  PolicyParams& grad) const {
  score(params, &grad);
}

double PreparedUpdate::score(const PolicyParams& params,
                             PolicyParams* grad) const {
  // Re-run the current-policy forward pass over the frozen token stream.
  std::vector<ForwardCache> caches;
  std::vector<TokenDistribution> dists;
  std::vector<TokenIngredient> tokens;
  std::vector<size_t> traj_lengths;

  size_t traj_flat = 0;  // trajectory index within the whole batch
  for (size_t g = 0; g < group_begin_; ++g)
    traj_flat += batch_.groups[g].trajectories.size();

  for (size_t g = group_begin_; g < group_end_; ++g) {
    const RolloutGroup& group = batch_.groups[g];
    for (size_t m = 0; m < group.trajectories.size(); ++m, ++traj_flat) {
      const Trajectory& traj = group.trajectories[m];
      traj_lengths.push_back(traj.output.size());
      std::vector<int> context = traj.prompt;
      for (size_t j = 0; j < traj.output.size(); ++j) {
        ForwardCache cache;
        forward(params, context, cache);
        dists.push_back(TokenDistribution::from_logits(cache.logits, 1.0));
        caches.push_back(std::move(cache));

        TokenIngredient tok;
        tok.sampled = traj.output[j];
        tok.behavior_prob = traj.step_probs[j];
        tok.behavior_entropy = traj.step_entropies[j];
        tok.advantage = group.advantages.values[m];
        tok.traj = static_cast<int>(traj_lengths.size() - 1);
        if (batch_.has_proxies())
          tok.proxy = &batch_.proxies[traj_flat][j];
        tokens.push_back(tok);
        context.push_back(traj.output[j]);
      }
    }
  }
  for (size_t i = 0; i < tokens.size(); ++i) {
    tokens[i].current_dist = &dists[i];
    tokens[i].current_prob = dists[i].probs[static_cast<size_t>(tokens[i].sampled)];
    if (!ref_dists_.empty()) tokens[i].ref_dist = &ref_dists_[i];
  }

  std::vector<TokenGrad> grads;
  BatchLossOutput out = batch_loss(tokens, traj_lengths, batch_.delta,
                                   objective_, grad ? &grads : nullptr);
  diag_ = out.diag;

  if (grad) {
    // Chain through the softmax: dL/dz_k = p_k * (g_k - sum_j p_j g_j),
    // where g is the per-token probability-space gradient.
    const size_t vocab = dists.empty() ? 0 : dists[0].probs.size();
    std::vector<double> dlogits(vocab);
    for (size_t i = 0; i < tokens.size(); ++i) {
      const TokenGrad& tg = grads[i];
      if (tg.d_prob == 0.0 && tg.d_dist.empty()) continue;
      const std::vector<double>& p = dists[i].probs;
      double dot = 0.0;
      if (!tg.d_dist.empty()) {
        for (size_t k = 0; k < vocab; ++k) dot += p[k] * tg.d_dist[k];
      }
      const size_t s = static_cast<size_t>(tokens[i].sampled);
      dot += p[s] * tg.d_prob;
      for (size_t k = 0; k < vocab; ++k) {
        const double gk = (tg.d_dist.empty() ? 0.0 : tg.d_dist[k]) +
                          (k == s ? tg.d_prob : 0.0);
        dlogits[k] = p[k] * (gk - dot);
      }
      backward(params, caches[i], dlogits, *grad);
    }
  }
  return out.loss;
}

// ============================================================================
// Trainer state and update step
// ============================================================================

TrainerState make_trainer_state(const ExperimentConfig& cfg) {
  TrainerState state;
  state.params = PolicyParams::init(cfg.model, cfg.schedule.seed);
  if (cfg.schedule.optimizer == "momentum")
    state.momentum.assign(state.params.param_count(), 0.0);
  if (cfg.objective.ref_kl_beta != 0.0) {
    state.ref_params = state.params;
    state.has_ref = true;
  }
  return state;
}

StepDiagnostics train_step(TrainerState& state, const TrainBatch& batch,
                           const ExperimentConfig& cfg) {
  if (batch.behavior_fingerprint != state.params.fingerprint())
    throw std::logic_error(
        "train_step: batch was not sampled by the current parameters "
        "(fingerprint mismatch)");

  const TrainSchedule& sched = cfg.schedule;
  const int updates = sched.updates_per_rollout();
  const size_t groups_per_update = batch.groups.size() / updates;

  StepDiagnostics diag;
  diag.delta = batch.delta;
  diag.updates = updates;

  double loss_sum = 0.0, surr_wsum = 0.0, ent_wsum = 0.0, kl_wsum = 0.0;
  long token_total = 0;

  try {
    for (int u = 0; u < updates; ++u) {
      PreparedUpdate update(batch, u * groups_per_update,
                            (u + 1) * groups_per_update, cfg.objective,
                            state.has_ref ? &state.ref_params : nullptr);
      PolicyParams g = grad(update, state.params);
      const Diagnostics& d = update.diagnostics();

      loss_sum += d.loss;
      surr_wsum += d.surrogate_mean * d.token_count;
      ent_wsum += d.mean_entropy * d.token_count;
      kl_wsum += d.kl_mean_gated * d.gated_count;
      diag.gated_count += d.gated_count;
      diag.below_delta_count += d.below_delta_count;
      token_total += d.token_count;

      if (sched.grad_clip_norm > 0.0) {
        double sq = 0.0;
        for (double x : g.flat) sq += x * x;
        const double norm = std::sqrt(sq);
        if (norm > sched.grad_clip_norm) {
          const double scale = sched.grad_clip_norm / norm;
          for (double& x : g.flat) x *= scale;
        }
      }
      if (state.momentum.empty()) {
        for (size_t i = 0; i < state.params.flat.size(); ++i)
          state.params.flat[i] -= sched.learning_rate * g.flat[i];
      } else {
        for (size_t i = 0; i < state.params.flat.size(); ++i) {
          state.momentum[i] = sched.momentum * state.momentum[i] + g.flat[i];
          state.params.flat[i] -= sched.learning_rate * state.momentum[i];
        }
      }
      state.params.check_finite();
    }
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(e.what()) + " (batch fingerprint " +
                         hex64(batch.behavior_fingerprint) + ")");
  }

  diag.loss = loss_sum / updates;
  if (token_total > 0) {
    diag.surrogate_mean = surr_wsum / token_total;
    diag.mean_entropy = ent_wsum / token_total;
  }
  if (diag.gated_count > 0) diag.kl_mean_gated = kl_wsum / diag.gated_count;
  if (diag.below_delta_count > 0) {
    diag.reg_ratio = static_cast<double>(diag.gated_count) /
                     static_cast<double>(diag.below_delta_count);
    diag.reg_ratio_defined = true;
  }

  // Behaviour-side batch composition metrics.
  const Vocabulary& vocab = Vocabulary::default_vocab_ref();
  long spark = 0, irr_low = 0, tokens_seen = 0;
  double reward_sum = 0.0;
  long reward_n = 0;
  for (const RolloutGroup& group : batch.groups) {
    for (double r : group.rewards) {
      reward_sum += r;
      ++reward_n;
    }
    for (const Trajectory& traj : group.trajectories) {
      for (size_t j = 0; j < traj.output.size(); ++j) {
        const TokenClass cls = vocab.token_class(traj.output[j]);
        if (cls == TokenClass::spark) ++spark;
        if (cls == TokenClass::irrelevant && traj.step_probs[j] <= 0.1)
          ++irr_low;
        ++tokens_seen;
      }
    }
  }
  if (tokens_seen > 0) {
    diag.spark_frequency = static_cast<double>(spark) / tokens_seen;
    diag.irrelevant_low_prob_rate = static_cast<double>(irr_low) / tokens_seen;
  }
  if (reward_n > 0) diag.mean_reward = reward_sum / reward_n;

  state.step += 1;
  return diag;
}

// ============================================================================
// Evaluation
// ============================================================================

EvalResult evaluate(const PolicyParams& params, const Environment& env,
                    const std::vector<TaskInstance>& eval_set) {
  EvalResult result;
  std::vector<std::pair<std::string, std::pair<double, long>>> fam_acc;
  double total = 0.0;

  for (const TaskInstance& task : eval_set) {
    std::vector<int> context = task.prompt;
    std::vector<int> answer;
    for (int guard = 0; guard < 16; ++guard) {
      const std::vector<int> cands = env.answer_candidates(task, answer);
      const TokenDistribution dist =
          next_token_distribution(params, context, 1.0);
      int best = cands.front();
      for (int id : cands) {
        if (dist.probs[static_cast<size_t>(id)] >
            dist.probs[static_cast<size_t>(best)])
          best = id;  // ties keep the earlier (lowest) id
      }
      if (best == Vocabulary::eos_id) break;
      answer.push_back(best);
      context.push_back(best);
    }
    const double reward = env.verify(answer, task).reward;
    total += reward;

    const std::string fam = family_name(task.family);
    auto it = std::find_if(fam_acc.begin(), fam_acc.end(),
                           [&](const auto& e) { return e.first == fam; });
    if (it == fam_acc.end()) {
      fam_acc.push_back({fam, {reward, 1}});
    } else {
      it->second.first += reward;
      it->second.second += 1;
    }
  }

  if (!eval_set.empty())
    result.accuracy = total / static_cast<double>(eval_set.size());
  for (const auto& [fam, acc] : fam_acc)
    result.per_family.push_back({fam, acc.first / acc.second});
  return result;
}

// ============================================================================
// Checkpoints
// ============================================================================

void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const std::vector<double>* momentum, long step,
                     uint64_t compat_hash) {
  json header;
  header["format"] = "lpreg-ckpt-v1";
  header["step"] = step;
  header["compat"] = hex64(compat_hash);
  header["vocab_size"] = params.cfg.vocab_size;
  header["param_count"] = params.param_count();
  json blocks = json::array();
  for (const ParamBlock& b : params.blocks)
    blocks.push_back({{"name", b.name},
                      {"offset", b.offset},
                      {"rows", b.rows},
                      {"cols", b.cols}});
  header["blocks"] = std::move(blocks);
  header["momentum"] = momentum != nullptr;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot write " + path);
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(params.flat.data()),
            static_cast<std::streamsize>(params.flat.size() * sizeof(double)));
  if (momentum) {
    if (momentum->size() != params.flat.size())
      throw std::invalid_argument("checkpoint: momentum buffer shape mismatch");
    out.write(reinterpret_cast<const char*>(momentum->data()),
              static_cast<std::streamsize>(momentum->size() * sizeof(double)));
  }
  if (!out) throw IoError("checkpoint: short write on " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const PolicyConfig& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line))
    throw IoError("checkpoint: missing header in " + path);
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw IoError("checkpoint: bad header in " + path + ": " + e.what());
  }
  if (header.value("format", "") != std::string("lpreg-ckpt-v1"))
    throw IoError("checkpoint: unknown format in " + path);

  LoadedCheckpoint loaded;
  loaded.step = header.at("step").get<long>();
  loaded.compat_hash = std::stoull(header.at("compat").get<std::string>(),
                                   nullptr, 16);
  loaded.params = PolicyParams::zeros(model);
  if (header.at("param_count").get<size_t>() != loaded.params.param_count())
    throw IoError("checkpoint: parameter count mismatch in " + path);
  const json& blocks = header.at("blocks");
  if (blocks.size() != loaded.params.blocks.size())
    throw IoError("checkpoint: block table mismatch in " + path);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const ParamBlock& b = loaded.params.blocks[i];
    if (blocks[i].at("name").get<std::string>() != b.name ||
        blocks[i].at("offset").get<size_t>() != b.offset ||
        blocks[i].at("rows").get<size_t>() != b.rows ||
        blocks[i].at("cols").get<size_t>() != b.cols)
      throw IoError("checkpoint: block table mismatch in " + path +
                    " (block " + b.name + ")");
  }

  in.read(reinterpret_cast<char*>(loaded.params.flat.data()),
          static_cast<std::streamsize>(loaded.params.flat.size() *
                                       sizeof(double)));
  if (in.gcount() !=
      static_cast<std::streamsize>(loaded.params.flat.size() * sizeof(double)))
    throw IoError("checkpoint: truncated parameter data in " + path);
  if (header.at("momentum").get<bool>()) {
    loaded.has_momentum = true;
    loaded.momentum.resize(loaded.params.flat.size());
    in.read(reinterpret_cast<char*>(loaded.momentum.data()),
            static_cast<std::streamsize>(loaded.momentum.size() *
                                         sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(loaded.momentum.size() *
                                                    sizeof(double)))
      throw IoError("checkpoint: truncated momentum data in " + path);
  }
  loaded.params.check_finite();
  return loaded;
}

// ============================================================================
// Probe collection
// ============================================================================

std::vector<TokenProbeRecord> collect_probes(const TrainBatch& batch,
                                             const Vocabulary& vocab,
                                             const TelemetryConfig& tcfg,
                                             uint64_t seed) {
  std::vector<TokenProbeRecord> records;
  size_t traj_flat = 0;
  uint64_t index = 0;
  for (const RolloutGroup& group : batch.groups) {
    for (const Trajectory& traj : group.trajectories) {
      for (size_t j = 0; j < traj.output.size(); ++j, ++index) {
        const int id = traj.output[j];
        const TokenClass cls = vocab.token_class(id);
        const bool keep =
            cls != TokenClass::other ||
            probe_selected(seed, batch.step, index, tcfg.probe_subsample);
        if (!keep) continue;
        TokenProbeRecord rec;
        rec.step = batch.step;
        rec.token_id = id;
        rec.token = vocab.name(id);
        rec.sampled_prob = traj.step_probs[j];
        rec.position_entropy = traj.step_entropies[j];
        rec.cls = cls;
        if (batch.has_proxies()) {
          const ProxyDistribution& proxy = batch.proxies[traj_flat][j];
          rec.has_proxy = true;
          rec.tau_used = proxy.tau_used;
          rec.kept_mass = proxy.kept_mass;
          rec.support_size = static_cast<int>(proxy.support.size());
        }
        records.push_back(std::move(rec));
      }
      ++traj_flat;
    }
  }
  return records;
}

// ============================================================================
// Figures
// ============================================================================

namespace {

std::string window_color(size_t idx) {
  return "hsl(" + std::to_string((idx * 47) % 360) + ",70%,45%)";
}

const char* class_color(TokenClass cls) {
  switch (cls) {
    case TokenClass::spark:
      return "#d62728";
    case TokenClass::irrelevant:
      return "#7f7f7f";
    default:
      return "#1f77b4";
  }
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("figures: cannot write " + path);
  out << content;
  if (!out) throw IoError("figures: short write on " + path);
}

}  // namespace

void render_figures(const std::string& run_dir, const std::string& figure) {
  namespace fs = std::filesystem;
  const bool all = figure == "all";
  if (!all && figure != "curves" && figure != "density" &&
      figure != "scatter" && figure != "gap")
    throw std::invalid_argument("render_figures: unknown figure '" + figure +
                                "'");

  int bins = 50, window = 100;
  const std::string echo_path = run_dir + "/config.echo.json";
  if (fs::exists(echo_path)) {
    std::ifstream in(echo_path);
    json doc = json::parse(in);
    bins = doc.at("telemetry").at("bins").get<int>();
    window = doc.at("telemetry").at("density_window").get<int>();
  }

  std::vector<MetricsRow> rows;
  if (fs::exists(run_dir + "/metrics.csv"))
    rows = read_metrics_csv(run_dir + "/metrics.csv");
  std::vector<TokenProbeRecord> probes;
  if (fs::exists(run_dir + "/probes.jsonl"))
    probes = read_probes(run_dir + "/probes.jsonl");

  if ((all || figure == "curves") && !rows.empty()) {
    auto series_of = [&](const char* label, const char* color, auto field) {
      svg::Series s;
      s.label = label;
      s.color = color;
      for (const MetricsRow& r : rows)
        s.points.push_back({static_cast<double>(r.step), field(r)});
      return s;
    };
    std::vector<svg::Panel> panels(4);
    panels[0].figure.title = "evaluation accuracy";
    panels[0].figure.x_label = "step";
    panels[0].figure.series = {series_of("accuracy", "#1f77b4", [](auto& r) {
      return r.eval_accuracy;
    })};
    panels[1].figure.title = "mean sampling entropy";
    panels[1].figure.x_label = "step";
    panels[1].figure.series = {series_of("entropy", "#2ca02c", [](auto& r) {
      return r.mean_entropy;
    })};
    panels[2].figure.title = "loss";
    panels[2].figure.x_label = "step";
    panels[2].figure.series = {
        series_of("loss", "#9467bd", [](auto& r) { return r.loss; })};
    panels[3].figure.title = "spark-token frequency";
    panels[3].figure.x_label = "step";
    panels[3].figure.series = {series_of("spark_frequency", "#d62728",
                                         [](auto& r) {
                                           return r.spark_frequency;
                                         })};
    write_text_file(run_dir + "/curves.svg", svg::render_panels(panels));
  }

  if ((all || figure == "density") && !probes.empty()) {
    std::vector<svg::Panel> panels;
    for (TokenClass cls :
         {TokenClass::spark, TokenClass::irrelevant, TokenClass::other}) {
      std::vector<TokenProbeRecord> cls_records;
      for (const TokenProbeRecord& r : probes)
        if (r.cls == cls) cls_records.push_back(r);
      if (cls_records.empty()) continue;
      const std::vector<DensityWindow> windows =
          density_summary(cls_records, bins, window);
      svg::Panel panel;
      panel.figure.title = std::string("sampled-probability density: ") +
                           token_class_name(cls);
      panel.figure.x_label = "sampled probability";
      panel.figure.y_label = "mass";
      for (size_t w = 0; w < windows.size(); ++w) {
        svg::Series s;
        s.label = "steps " + std::to_string(windows[w].first_step) + "-" +
                  std::to_string(windows[w].last_step);
        s.color = window_color(w);
        for (int b = 0; b < bins; ++b)
          s.points.push_back(
              {(b + 0.5) / bins, windows[w].mass[static_cast<size_t>(b)]});
        panel.figure.series.push_back(std::move(s));
      }
      panels.push_back(std::move(panel));
    }
    if (!panels.empty())
      write_text_file(run_dir + "/density.svg",
                      svg::render_panels(panels, 880, 320));
  }

  if ((all || figure == "scatter") && !probes.empty()) {
    svg::Figure fig;
    fig.title = "sampled probability vs position entropy";
    fig.x_label = "sampled probability";
    fig.y_label = "entropy";
    for (TokenClass cls :
         {TokenClass::other, TokenClass::irrelevant, TokenClass::spark}) {
      svg::Series s;
      s.label = token_class_name(cls);
      s.color = class_color(cls);
      std::vector<const TokenProbeRecord*> cls_records;
      for (const TokenProbeRecord& r : probes)
        if (r.cls == cls) cls_records.push_back(&r);
      const size_t stride = cls_records.size() > 4000
                                ? (cls_records.size() + 3999) / 4000
                                : 1;
      for (size_t i = 0; i < cls_records.size(); i += stride)
        s.points.push_back(
            {cls_records[i]->sampled_prob, cls_records[i]->position_entropy});
      if (!s.points.empty()) fig.series.push_back(std::move(s));
    }
    if (!fig.series.empty())
      write_text_file(run_dir + "/scatter.svg", svg::render_scatter(fig));
  }

  if ((all || figure == "gap") && !probes.empty()) {
    const std::vector<GapRow> gaps = class_mean_prob_gap(probes);
    if (!gaps.empty()) {
      svg::Figure fig;
      fig.title = "low-probability mean: spark vs irrelevant";
      fig.x_label = "step";
      fig.y_label = "mean sampled probability";
      svg::Series spark{"spark mean", "#d62728", {}};
      svg::Series irr{"irrelevant mean", "#7f7f7f", {}};
      svg::Series gap{"gap", "#1f77b4", {}};
      for (const GapRow& r : gaps) {
        spark.points.push_back({static_cast<double>(r.step), r.spark_mean});
        irr.points.push_back({static_cast<double>(r.step), r.irrelevant_mean});
        gap.points.push_back({static_cast<double>(r.step), r.gap});
      }
      fig.series = {spark, irr, gap};
      write_text_file(run_dir + "/gap.svg", svg::render_line_chart(fig));
    }
  }
}

// ============================================================================
// Experiment runner
// ============================================================================

namespace {

std::string ckpt_path(const std::string& out_dir, long step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06ld.bin", step);
  return out_dir + "/" + buf;
}

constexpr const char* kObjectiveHeader =
    "step,loss,surrogate_mean,kl_mean_gated,delta,reg_ratio,gated_count,"
    "below_delta_count,mean_entropy";

std::string objective_csv_line(long step, const StepDiagnostics& d) {
  std::string line = std::to_string(step);
  line += ',';
  line += fmt_double(d.loss);
  line += ',';
  line += fmt_double(d.surrogate_mean);
  line += ',';
  line += fmt_double(d.kl_mean_gated);
  line += ',';
  line += fmt_double(d.delta);
  line += ',';
  if (d.reg_ratio_defined) line += fmt_double(d.reg_ratio);
  line += ',';
  line += std::to_string(d.gated_count);
  line += ',';
  line += std::to_string(d.below_delta_count);
  line += ',';
  line += fmt_double(d.mean_entropy);
  return line;
}

/// Opens a line-oriented artifact for appending, writing the header only
/// when the file is new or empty.
std::ofstream open_append(const std::string& path, const char* header) {
  namespace fs = std::filesystem;
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("run: cannot open " + path);
  if (fresh && header != nullptr) out << header << "\n";
  return out;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg,
                         const std::string& out_dir,
                         const std::string& resume_ckpt) {
  namespace fs = std::filesystem;
  cfg.validate();

  const Vocabulary& vocab = Vocabulary::default_vocab_ref();
  if (cfg.model.vocab_size != vocab.size())
    throw ConfigError("model.vocab_size: must equal the stock vocabulary (" +
                      std::to_string(vocab.size()) + ")");

  fs::create_directories(out_dir);
  write_text_file(out_dir + "/config.echo.json",
                  config_to_json(cfg).dump(2) + "\n");

  Environment env(cfg.env, &vocab);
  const std::vector<TaskInstance> eval_set = env.eval_set();

  TrainerState state = make_trainer_state(cfg);
  if (!resume_ckpt.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(resume_ckpt, cfg.model);
    if (loaded.compat_hash != resume_hash(cfg))
      throw ConfigError(
          "resume: checkpoint belongs to an incompatible configuration");
    if (loaded.has_momentum != (cfg.schedule.optimizer == "momentum"))
      throw ConfigError("resume: optimizer mismatch with checkpoint");
    state.params = std::move(loaded.params);
    state.momentum = std::move(loaded.momentum);
    state.step = loaded.step;
  }

  std::ofstream metrics = open_append(out_dir + "/metrics.csv", kMetricsHeader);
  std::ofstream objective =
      open_append(out_dir + "/objective.csv", kObjectiveHeader);
  std::ofstream probes_out;  // opened lazily on first probe write

  double current_acc = evaluate(state.params, env, eval_set).accuracy;

  if (cfg.schedule.max_steps == 0) {
    MetricsRow row;
    row.step = 0;
    row.eval_accuracy = current_acc;
    metrics << metrics_csv_line(row) << "\n";
    save_checkpoint(ckpt_path(out_dir, 0), state.params,
                    state.momentum.empty() ? nullptr : &state.momentum, 0,
                    resume_hash(cfg));
    return {0, current_acc};
  }

  if (resume_ckpt.empty())
    save_checkpoint(ckpt_path(out_dir, 0), state.params,
                    state.momentum.empty() ? nullptr : &state.momentum, 0,
                    resume_hash(cfg));

  for (long step = state.step + 1; step <= cfg.schedule.max_steps; ++step) {
    TrainBatch batch = rollout(state.params, env, cfg, step);
    const StepDiagnostics diag = train_step(state, batch, cfg);

    if (cfg.telemetry.probe_enabled && step % cfg.telemetry.probe_every == 0) {
      const std::vector<TokenProbeRecord> records =
          collect_probes(batch, vocab, cfg.telemetry, cfg.schedule.seed);
      if (!records.empty() && !probes_out.is_open())
        probes_out = open_append(out_dir + "/probes.jsonl", nullptr);
      for (const TokenProbeRecord& rec : records)
        probes_out << probe_jsonl_line(rec) << "\n";
    }

    const bool eval_point =
        step % cfg.schedule.eval_every == 0 || step == cfg.schedule.max_steps;
    if (eval_point) {
      current_acc = evaluate(state.params, env, eval_set).accuracy;
      save_checkpoint(ckpt_path(out_dir, step), state.params,
                      state.momentum.empty() ? nullptr : &state.momentum, step,
                      resume_hash(cfg));
    }

    MetricsRow row;
    row.step = step;
    row.eval_accuracy = current_acc;
    row.mean_entropy = diag.mean_entropy;
    row.loss = diag.loss;
    row.delta = diag.delta;
    row.reg_ratio = diag.reg_ratio;
    row.reg_ratio_defined = diag.reg_ratio_defined;
    row.gated_count = diag.gated_count;
    row.spark_frequency = diag.spark_frequency;
    row.irrelevant_low_prob_rate = diag.irrelevant_low_prob_rate;
    metrics << metrics_csv_line(row) << "\n";
    metrics.flush();
    objective << objective_csv_line(step, diag) << "\n";
    objective.flush();
  }

  metrics.close();
  objective.close();
  if (probes_out.is_open()) probes_out.close();
  render_figures(out_dir, "all");

  return {cfg.schedule.max_steps, current_acc};
}

}  // namespace lpreg
