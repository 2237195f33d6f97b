#include "lpreg/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lpreg {

void PolicyConfig::validate() const {
  if (vocab_size < 4) throw ConfigError("model.vocab_size: must be >= 4");
  if (vocab_size > 4096) throw ConfigError("model.vocab_size: must be <= 4096");
  if (context_window < 1) throw ConfigError("model.context_window: must be >= 1");
  if (context_window > 64) throw ConfigError("model.context_window: must be <= 64");
  if (embed_dim < 1) throw ConfigError("model.embed_dim: must be >= 1");
  if (hidden_size < 1) throw ConfigError("model.hidden_size: must be >= 1");
  if (!(init_scale > 0.0)) throw ConfigError("model.init_scale: must be > 0");
  if (!std::isfinite(eos_logit_bias))
    throw ConfigError("model.eos_logit_bias: must be finite");
  for (const auto& [token, bias] : init_biases) {
    if (token < 0 || token >= vocab_size)
      throw ConfigError("model.init_biases: token id out of range");
    if (!std::isfinite(bias))
      throw ConfigError("model.init_biases: bias must be finite");
  }
}

// ============================================================================
// Parameter layout
// ============================================================================

static std::vector<ParamBlock> make_layout(const PolicyConfig& cfg) {
  const size_t V = cfg.vocab_size, E = cfg.embed_dim, H = cfg.hidden_size,
               W = cfg.context_window;
  std::vector<ParamBlock> blocks;
  size_t off = 0;
  auto add = [&](const char* name, size_t rows, size_t cols) {
    blocks.push_back({name, off, rows, cols});
    off += rows * cols;
  };
  add("embed", V, E);
  if (cfg.attention) {
    add("attn_q", E, E);
    add("attn_k", E, E);
    add("attn_v", E, E);
    add("attn_o", E, E);
  }
  add("w1", H, W * E);
  add("b1", H, 1);
  add("w2", H, H);
  add("b2", H, 1);
  add("w_out", V, H);
  add("b_out", V, 1);
  return blocks;
}

PolicyParams PolicyParams::zeros(const PolicyConfig& cfg) {
  cfg.validate();
  PolicyParams p;
  p.cfg = cfg;
  p.blocks = make_layout(cfg);
  size_t total = 0;
  for (const auto& b : p.blocks) total += b.size();
  p.flat.assign(total, 0.0);
  return p;
}

PolicyParams PolicyParams::init(const PolicyConfig& cfg, uint64_t seed) {
  PolicyParams p = zeros(cfg);
  Rng rng(derive_seed({stream_tag("policy-init"), seed}));
  for (const auto& b : p.blocks) {
    if (b.name == "b1" || b.name == "b2" || b.name == "b_out") continue;
    for (size_t i = 0; i < b.size(); ++i)
      p.flat[b.offset + i] = cfg.init_scale * rng.normal();
  }
  p.block("b_out")[1] += cfg.eos_logit_bias;  // id 1 is <eos>
  for (const auto& [token, bias] : cfg.init_biases)
    p.block("b_out")[token] += bias;
  return p;
}

double* PolicyParams::block(const std::string& name) {
  return flat.data() + block_info(name).offset;
}

const double* PolicyParams::block(const std::string& name) const {
  return flat.data() + block_info(name).offset;
}

const ParamBlock& PolicyParams::block_info(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw std::invalid_argument("policy: unknown parameter block " + name);
}

uint64_t PolicyParams::fingerprint() const {
  uint64_t h = fnv1a64(flat.data(), flat.size() * sizeof(double));
  int shape[5] = {cfg.vocab_size, cfg.context_window, cfg.embed_dim,
                  cfg.hidden_size, cfg.attention ? 1 : 0};
  return fnv1a64(shape, sizeof shape, h);
}

void PolicyParams::check_finite() const {
  for (const auto& b : blocks) {
    if (!all_finite(flat.data() + b.offset, b.size()))
      throw NumericalError("policy: non-finite values in parameter block '" +
                           b.name + "'");
  }
}

bool PolicyParams::same_shape(const PolicyParams& other) const {
  if (flat.size() != other.flat.size() || blocks.size() != other.blocks.size())
    return false;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const auto &a = blocks[i], &b = other.blocks[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
  }
  return true;
}

// ============================================================================
// Forward
// ============================================================================

// y[0..rows) = M[rows x cols] * x (+ y's prior content discarded)
static void matvec(const double* M, const double* x, size_t rows, size_t cols,
                   double* y) {
  for (size_t r = 0; r < rows; ++r) {
    const double* row = M + r * cols;
    double acc = 0.0;
    for (size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// y[0..cols) += M^T * d  for row-major M[rows x cols]
static void matvec_t_add(const double* M, const double* d, size_t rows,
                         size_t cols, double* y) {
  for (size_t r = 0; r < rows; ++r) {
    const double* row = M + r * cols;
    const double dr = d[r];
    for (size_t c = 0; c < cols; ++c) y[c] += row[c] * dr;
  }
}

// M[rows x cols] += d (outer) x
static void outer_add(double* M, const double* d, const double* x, size_t rows,
                      size_t cols) {
  for (size_t r = 0; r < rows; ++r) {
    double* row = M + r * cols;
    const double dr = d[r];
    for (size_t c = 0; c < cols; ++c) row[c] += dr * x[c];
  }
}

static void pad_context(const std::vector<int>& context, int window,
                        int vocab_size, std::vector<int>& out) {
  out.resize(window);
  const int len = static_cast<int>(context.size());
  for (int j = 0; j < window; ++j) {
    const int idx = len - window + j;
    int id = idx >= 0 ? context[idx] : 0;  // 0 is <pad>
    if (id < 0 || id >= vocab_size)
      throw std::invalid_argument("policy: context token id out of range");
    out[j] = id;
  }
}

static void attention_forward(const PolicyParams& params, ForwardCache& c) {
  const size_t E = params.cfg.embed_dim, W = params.cfg.context_window;
  const double* wq = params.block("attn_q");
  const double* wk = params.block("attn_k");
  const double* wv = params.block("attn_v");
  const double* wo = params.block("attn_o");
  const double scale = 1.0 / std::sqrt(static_cast<double>(E));

  c.q.resize(W * E);
  c.k.resize(W * E);
  c.v.resize(W * E);
  c.u.resize(W * E);
  c.attn.resize(W * W);
  for (size_t j = 0; j < W; ++j) {
    matvec(wq, c.e.data() + j * E, E, E, c.q.data() + j * E);
    matvec(wk, c.e.data() + j * E, E, E, c.k.data() + j * E);
    matvec(wv, c.e.data() + j * E, E, E, c.v.data() + j * E);
  }
  for (size_t j = 0; j < W; ++j) {
    double* row = c.attn.data() + j * W;
    double mx = -1e300;
    for (size_t t = 0; t < W; ++t) {
      double s = 0.0;
      for (size_t d = 0; d < E; ++d) s += c.q[j * E + d] * c.k[t * E + d];
      row[t] = s * scale;
      mx = std::max(mx, row[t]);
    }
    double z = 0.0;
    for (size_t t = 0; t < W; ++t) {
      row[t] = std::exp(row[t] - mx);
      z += row[t];
    }
    for (size_t t = 0; t < W; ++t) row[t] /= z;
    double* uj = c.u.data() + j * E;
    std::fill(uj, uj + E, 0.0);
    for (size_t t = 0; t < W; ++t) {
      const double a = row[t];
      const double* vt = c.v.data() + t * E;
      for (size_t d = 0; d < E; ++d) uj[d] += a * vt[d];
    }
  }
  // residual mix: embcat_j = e_j + Wo u_j
  std::vector<double> tmp(E);
  for (size_t j = 0; j < W; ++j) {
    matvec(wo, c.u.data() + j * E, E, E, tmp.data());
    for (size_t d = 0; d < E; ++d) c.embcat[j * E + d] = c.e[j * E + d] + tmp[d];
  }
}

void forward(const PolicyParams& params, const std::vector<int>& context,
             ForwardCache& cache) {
  const auto& cfg = params.cfg;
  const size_t V = cfg.vocab_size, E = cfg.embed_dim, H = cfg.hidden_size,
               W = cfg.context_window;

  pad_context(context, cfg.context_window, cfg.vocab_size, cache.ctx);

  const double* embed = params.block("embed");
  cache.embcat.resize(W * E);
  if (cfg.attention) {
    cache.e.resize(W * E);
    for (size_t j = 0; j < W; ++j) {
      const double* row = embed + static_cast<size_t>(cache.ctx[j]) * E;
      std::copy(row, row + E, cache.e.begin() + j * E);
    }
    attention_forward(params, cache);
  } else {
    for (size_t j = 0; j < W; ++j) {
      const double* row = embed + static_cast<size_t>(cache.ctx[j]) * E;
      std::copy(row, row + E, cache.embcat.begin() + j * E);
    }
  }

  cache.h1.resize(H);
  cache.h2.resize(H);
  cache.logits.resize(V);

  matvec(params.block("w1"), cache.embcat.data(), H, W * E, cache.h1.data());
  const double* b1 = params.block("b1");
  for (size_t i = 0; i < H; ++i) cache.h1[i] = std::tanh(cache.h1[i] + b1[i]);

  matvec(params.block("w2"), cache.h1.data(), H, H, cache.h2.data());
  const double* b2 = params.block("b2");
  for (size_t i = 0; i < H; ++i) cache.h2[i] = std::tanh(cache.h2[i] + b2[i]);

  matvec(params.block("w_out"), cache.h2.data(), V, H, cache.logits.data());
  const double* bo = params.block("b_out");
  for (size_t i = 0; i < V; ++i) cache.logits[i] += bo[i];

  if (!all_finite(cache.logits.data(), V))
    throw NumericalError("policy: non-finite logits (inspect parameter blocks)");
}

std::vector<double> forward_logits(const PolicyParams& params,
                                   const std::vector<int>& context) {
  ForwardCache cache;
  forward(params, context, cache);
  return std::move(cache.logits);
}

TokenDistribution next_token_distribution(const PolicyParams& params,
                                          const std::vector<int>& context,
                                          double temperature) {
  ForwardCache cache;
  forward(params, context, cache);
  return TokenDistribution::from_logits(cache.logits, temperature);
}

// ============================================================================
// Backward
// ============================================================================

static void attention_backward(const PolicyParams& params,
                               const ForwardCache& c,
                               const std::vector<double>& dembcat,
                               PolicyParams& grad, std::vector<double>& de) {
  const size_t E = params.cfg.embed_dim, W = params.cfg.context_window;
  const double* wq = params.block("attn_q");
  const double* wk = params.block("attn_k");
  const double* wv = params.block("attn_v");
  const double* wo = params.block("attn_o");
  const double scale = 1.0 / std::sqrt(static_cast<double>(E));

  de.assign(W * E, 0.0);
  std::vector<double> du(W * E, 0.0), dq(W * E, 0.0), dk(W * E, 0.0),
      dv(W * E, 0.0), ds(W);

  // residual mix: embcat_j = e_j + Wo u_j
  for (size_t j = 0; j < W; ++j) {
    const double* dm = dembcat.data() + j * E;
    for (size_t d = 0; d < E; ++d) de[j * E + d] += dm[d];
    outer_add(grad.block("attn_o"), dm, c.u.data() + j * E, E, E);
    matvec_t_add(wo, dm, E, E, du.data() + j * E);
  }
  // u_j = sum_t attn[j,t] v_t ; attn rows are softmaxed scores
  for (size_t j = 0; j < W; ++j) {
    const double* arow = c.attn.data() + j * W;
    const double* duj = du.data() + j * E;
    double dot_sum = 0.0;
    for (size_t t = 0; t < W; ++t) {
      double da = 0.0;
      const double* vt = c.v.data() + t * E;
      for (size_t d = 0; d < E; ++d) {
        da += duj[d] * vt[d];
        dv[t * E + d] += arow[t] * duj[d];
      }
      ds[t] = da;
      dot_sum += arow[t] * da;
    }
    for (size_t t = 0; t < W; ++t) {
      const double dscore = arow[t] * (ds[t] - dot_sum) * scale;
      for (size_t d = 0; d < E; ++d) {
        dq[j * E + d] += dscore * c.k[t * E + d];
        dk[t * E + d] += dscore * c.q[j * E + d];
      }
    }
  }
  // linear projections q/k/v = W e
  for (size_t j = 0; j < W; ++j) {
    outer_add(grad.block("attn_q"), dq.data() + j * E, c.e.data() + j * E, E, E);
    outer_add(grad.block("attn_k"), dk.data() + j * E, c.e.data() + j * E, E, E);
    outer_add(grad.block("attn_v"), dv.data() + j * E, c.e.data() + j * E, E, E);
    matvec_t_add(wq, dq.data() + j * E, E, E, de.data() + j * E);
    matvec_t_add(wk, dk.data() + j * E, E, E, de.data() + j * E);
    matvec_t_add(wv, dv.data() + j * E, E, E, de.data() + j * E);
  }
}

void backward(const PolicyParams& params, const ForwardCache& cache,
              const std::vector<double>& dlogits, PolicyParams& grad) {
  const auto& cfg = params.cfg;
  const size_t V = cfg.vocab_size, E = cfg.embed_dim, H = cfg.hidden_size,
               W = cfg.context_window;
  if (dlogits.size() != V)
    throw std::invalid_argument("backward: dlogits size mismatch");
  if (!grad.same_shape(params))
    throw std::invalid_argument("backward: grad buffer shape mismatch");

  // output projection
  outer_add(grad.block("w_out"), dlogits.data(), cache.h2.data(), V, H);
  {
    double* dbo = grad.block("b_out");
    for (size_t i = 0; i < V; ++i) dbo[i] += dlogits[i];
  }
  std::vector<double> dh2(H, 0.0);
  matvec_t_add(params.block("w_out"), dlogits.data(), V, H, dh2.data());

  // second tanh layer
  for (size_t i = 0; i < H; ++i) dh2[i] *= 1.0 - cache.h2[i] * cache.h2[i];
  outer_add(grad.block("w2"), dh2.data(), cache.h1.data(), H, H);
  {
    double* db2 = grad.block("b2");
    for (size_t i = 0; i < H; ++i) db2[i] += dh2[i];
  }
  std::vector<double> dh1(H, 0.0);
  matvec_t_add(params.block("w2"), dh2.data(), H, H, dh1.data());

  // first tanh layer
  for (size_t i = 0; i < H; ++i) dh1[i] *= 1.0 - cache.h1[i] * cache.h1[i];
  outer_add(grad.block("w1"), dh1.data(), cache.embcat.data(), H, W * E);
  {
    double* db1 = grad.block("b1");
    for (size_t i = 0; i < H; ++i) db1[i] += dh1[i];
  }
  std::vector<double> dembcat(W * E, 0.0);
  matvec_t_add(params.block("w1"), dh1.data(), H, W * E, dembcat.data());

  // embeddings (through attention when enabled)
  double* dembed = grad.block("embed");
  if (cfg.attention) {
    std::vector<double> de;
    attention_backward(params, cache, dembcat, grad, de);
    for (size_t j = 0; j < W; ++j) {
      double* row = dembed + static_cast<size_t>(cache.ctx[j]) * E;
      for (size_t d = 0; d < E; ++d) row[d] += de[j * E + d];
    }
  } else {
    for (size_t j = 0; j < W; ++j) {
      double* row = dembed + static_cast<size_t>(cache.ctx[j]) * E;
      for (size_t d = 0; d < E; ++d) row[d] += dembcat[j * E + d];
    }
  }
}

// ============================================================================
// Sampling
// ============================================================================

Trajectory sample_sequence(const PolicyParams& params,
                           const std::vector<int>& prompt, int max_len,
                           double temperature, Rng& rng, bool retain_dists) {
  if (prompt.empty())
    throw std::invalid_argument("sample_sequence: empty prompt");
  if (max_len < 1)
    throw std::invalid_argument("sample_sequence: max_len must be >= 1");

  Trajectory traj;
  traj.prompt = prompt;
  std::vector<int> ctx = prompt;
  for (int t = 0; t < max_len; ++t) {
    TokenDistribution dist = next_token_distribution(params, ctx, temperature);
    const int tok = dist.sample(rng);
    traj.output.push_back(tok);
    traj.step_probs.push_back(dist.probs[tok]);
    traj.step_entropies.push_back(dist.entropy);
    if (retain_dists) traj.step_dists.push_back(std::move(dist));
    ctx.push_back(tok);
    if (tok == 1) {  // <eos>
      traj.terminated = true;
      break;
    }
  }
  return traj;
}

double mean_step_entropy(const std::vector<Trajectory>& batch) {
  if (batch.empty())
    throw std::invalid_argument("mean_step_entropy: empty batch");
  double sum = 0.0;
  size_t n = 0;
  for (const auto& t : batch) {
    if (t.step_dists.size() != t.output.size())
      throw std::invalid_argument(
          "mean_step_entropy: step distributions not retained");
    for (const auto& d : t.step_dists) {
      sum += d.entropy;
      ++n;
    }
  }
  if (n == 0)
    throw std::invalid_argument("mean_step_entropy: batch has no tokens");
  return sum / static_cast<double>(n);
}

}  // namespace lpreg
