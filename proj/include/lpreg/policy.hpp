#pragma once
/**
 * Tiny autoregressive categorical policy.
 *
 * Architecture (fixed recipe): token embeddings for the last `context_window`
 * ids (left-padded with "<pad>"), optionally mixed by a single-head attention
 * block, concatenated into one vector, passed through two tanh feed-forward
 * layers, then projected to one logit per vocabulary token. Next-token
 * distributions are softmax(logits / temperature) computed in the log domain.
 *
 * All parameters live in one flat double buffer with a named block map, so
 * optimizer steps, serialization, fingerprinting and finite-difference probes
 * are simple flat-index operations. Gradients reuse the same layout.
 *
 * The reverse pass is hand-written against this fixed recipe (no general
 * tape): backward() consumes a forward cache plus dLoss/dlogits and
 * accumulates into a parameter-shaped buffer. Correctness is certified by
 * central finite differences in the gradient module.
 */

#include <string>
#include <vector>

#include "lpreg/common.hpp"
#include "lpreg/distribution.hpp"

namespace lpreg {

struct PolicyConfig {
  int vocab_size = 64;
  int context_window = 8;
  int embed_dim = 16;
  int hidden_size = 64;
  bool attention = false;     // single-head attention mixing, off by default
  double init_scale = 0.08;   // stddev of the random init
  double eos_logit_bias = 0.0;  // added to <eos>'s output bias at init so
                                // untrained policies terminate quickly
  // Optional per-token output-bias nudges at init: (token id, logit bias)
  // pairs modelling a prior that makes selected tokens plausible from the
  // start, the way a pretrained model already favours discourse connectors.
  std::vector<std::pair<int, double>> init_biases;

  void validate() const;
};

struct ParamBlock {
  std::string name;
  size_t offset = 0;
  size_t rows = 0;
  size_t cols = 0;
  size_t size() const { return rows * cols; }
};

struct PolicyParams {
  PolicyConfig cfg;
  std::vector<ParamBlock> blocks;
  std::vector<double> flat;

  static PolicyParams zeros(const PolicyConfig& cfg);
  /// Gaussian init (stddev cfg.init_scale) for weights, zero biases, then
  /// cfg.eos_logit_bias added to the <eos> output bias.
  static PolicyParams init(const PolicyConfig& cfg, uint64_t seed);

  double* block(const std::string& name);
  const double* block(const std::string& name) const;
  const ParamBlock& block_info(const std::string& name) const;

  size_t param_count() const { return flat.size(); }
  uint64_t fingerprint() const;
  /// Throws NumericalError naming the first offending block.
  void check_finite() const;
  bool same_shape(const PolicyParams& other) const;
};

/// Intermediate activations of one forward evaluation, kept for backward().
struct ForwardCache {
  std::vector<int> ctx;        // padded window ids, length W
  std::vector<double> embcat;  // W*E input to the MLP (post-attention)
  std::vector<double> h1, h2;  // tanh activations
  std::vector<double> logits;  // V
  // attention internals (populated only when cfg.attention):
  std::vector<double> e;             // raw embeddings, W*E
  std::vector<double> q, k, v, u;    // projected vectors, W*E each
  std::vector<double> attn;          // W*W row-major weights
};

/// Fills `cache` from the last cfg.context_window entries of `context`
/// (left-padded with <pad> when shorter). Context ids must be valid;
/// non-finite logits raise NumericalError.
void forward(const PolicyParams& params, const std::vector<int>& context,
             ForwardCache& cache);

std::vector<double> forward_logits(const PolicyParams& params,
                                   const std::vector<int>& context);

TokenDistribution next_token_distribution(const PolicyParams& params,
                                          const std::vector<int>& context,
                                          double temperature);

/// Accumulates dLoss/dparams into `grad` (same layout as params) given the
/// cache of a forward evaluation and dLoss/dlogits at that position.
void backward(const PolicyParams& params, const ForwardCache& cache,
              const std::vector<double>& dlogits, PolicyParams& grad);

// ============================================================================
// Sampling
// ============================================================================

struct Trajectory {
  std::vector<int> prompt;
  std::vector<int> output;        // includes the terminal <eos> when present
  std::vector<double> step_probs;      // behaviour probability of each token
  std::vector<double> step_entropies;  // distribution entropy per position
  std::vector<TokenDistribution> step_dists;  // retained on request
  bool terminated = false;  // true: stopped on <eos>; false: length cap
};

/// Ancestral sampling at the given temperature until <eos> or max_len tokens.
/// The prompt must be non-empty. step_probs are exactly the distribution
/// entries of the sampled ids.
Trajectory sample_sequence(const PolicyParams& params,
                           const std::vector<int>& prompt, int max_len,
                           double temperature, Rng& rng, bool retain_dists);

/// Arithmetic mean of per-position entropies over all retained step
/// distributions. Requires a non-empty batch with distributions retained.
double mean_step_entropy(const std::vector<Trajectory>& batch);

}  // namespace lpreg
