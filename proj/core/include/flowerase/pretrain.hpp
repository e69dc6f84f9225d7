#pragma once

// Fits θ_o on the synthetic corpus with the flow-matching objective
// ||v(u_t, c, t) - (x_T - u)||^2.

#include <cstdint>
#include <functional>
#include <vector>

#include "flowerase/data_synth.hpp"
#include "flowerase/rng.hpp"
#include "flowerase/toymodel.hpp"

namespace flowerase::engine {

struct PretrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 8;
  double lr = 3e-3;
  double min_lr = 1e-4;  // cosine floor
  std::size_t warmup = 100;
  double caption_dropout = 0.1;  // fraction trained on the empty prompt
  double word_shuffle = 0.5;     // probability a caption's words are permuted
  double unk_prob = 0.03;        // per-word replacement by <unk>
  double grad_clip = 1.0;
  double ema_decay = 0.999;  // returned weights are the exponential moving average; 0 disables
  std::uint64_t seed = 0;
};

/// Word-level permutation of a prompt. A multi-word `keep` phrase moves as one unit.
std::string shuffle_words(std::string_view prompt, Rng& rng, std::string_view keep = {});

struct PretrainStats {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

using PretrainCallback = std::function<void(const PretrainStats&)>;

struct PretrainResult {
  model::ModelParams params;
  std::vector<double> loss_history;
};

/// Each epoch visits the samples in a fresh seeded order. Throws
/// DivergenceError on a non-finite loss; `last_good` (if given) then holds the
/// weights from the previous step.
PretrainResult pretrain(const model::ModelConfig& config, const model::Vocabulary& vocab,
                            const std::vector<data::Sample>& samples, const PretrainConfig& pc,
                        const PretrainCallback& on_step = {}, model::ModelParams* last_good = nullptr);

/// Mean flow-matching loss over `samples` at fixed seeded (t, noise) draws.
double flow_matching_loss(const model::ModelConfig& config, const model::ModelParams& params,
                          const model::Vocabulary& vocab, const std::vector<data::Sample>& samples,
                          std::uint64_t seed);

}  // namespace flowerase::engine
