#include "flowerase/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flowerase/error.hpp"
#include "flowerase/flow.hpp"
#include "flowerase/optim.hpp"
#include "flowerase/rng.hpp"

namespace flowerase::engine {

std::string shuffle_words(std::string_view prompt, Rng& rng, std::string_view keep) {
  const auto words = model::split_words(prompt);
  const auto key = model::split_words(keep);
  std::vector<std::string> units;
  for (std::size_t i = 0; i < words.size();) {
    if (key.size() > 1 && i + key.size() <= words.size() &&
        std::equal(key.begin(), key.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
      units.push_back(model::join_words(key));
      i += key.size();
    } else {
      units.push_back(words[i++]);
    }
  }
  rng.shuffle(units.begin(), units.end());
  return model::join_words(units);
}

PretrainResult pretrain(const model::ModelConfig& config, const model::Vocabulary& vocab,
                        const std::vector<data::Sample>& samples, const PretrainConfig& pc,
                        const PretrainCallback& on_step, model::ModelParams* last_good) {
  config.validate();
  if (samples.empty()) throw DataError("pretraining needs at least one sample");
  if (pc.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  model::ModelParams params = model::init_params(config);
  params.set_requires_grad(true);
  AdamW opt(params.parameters(), AdamWConfig{.lr = pc.lr, .grad_clip = pc.grad_clip});
  Rng rng(mix_seed(pc.seed, 0x9E7A));
  model::ModelParams ema = params.clone();
  const auto live = params.parameters();
  auto shadow = ema.parameters();

  const auto null_tokens = model::tokenize("", vocab, config.text_len);
  std::vector<std::size_t> order(samples.size());
  std::size_t cursor = order.size();
  PretrainResult result;

  for (std::size_t step = 0; step < pc.steps; ++step) {
    double lr = pc.lr;
    if (step < pc.warmup) {
      lr = pc.lr * static_cast<double>(step + 1) / static_cast<double>(pc.warmup);
    } else if (pc.steps > pc.warmup) {
      const double p = static_cast<double>(step - pc.warmup) / static_cast<double>(pc.steps - pc.warmup);
      lr = pc.min_lr + 0.5 * (pc.lr - pc.min_lr) * (1.0 + std::cos(std::numbers::pi * p));
    }
    opt.set_lr(lr);
    opt.zero_grad();
    double total = 0.0;
    for (std::size_t b = 0; b < pc.batch_size; ++b) {
      if (cursor == order.size()) {
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      const double t = rng.uniform();
      const auto noise = flow::gaussian_noise(config.latent_shape(), rng.next_u64());
      const bool drop = rng.uniform() < pc.caption_dropout;
      const auto fs = flow::make_sample(samples[i].image, noise, t);
      const bool shuffle = rng.uniform() < pc.word_shuffle;
      auto ids = drop            ? null_tokens.ids
                       : shuffle ? model::tokenize(shuffle_words(samples[i].caption, rng), vocab, config.text_len).ids
                                 : model::tokenize(samples[i].caption, vocab, config.text_len).ids;
      if (!drop) {
        for (auto& id : ids)
          if (id != model::kPad && rng.uniform() < pc.unk_prob) id = model::kUnk;
      }
      const auto out = model::forward(config, params, {}, fs.u_t, ids, t);
      const auto loss = ag::scale(ag::mean(ag::square(ag::sub(out.velocity, fs.v_target))),
                                  1.0 / static_cast<double>(pc.batch_size));
      ag::backward(loss);
      total += loss.item();
    }
    if (!std::isfinite(total)) {
      if (last_good != nullptr) *last_good = (pc.ema_decay > 0.0 ? ema : params).clone();
      throw DivergenceError("pretraining loss diverged at step " + std::to_string(step));
    }
    result.loss_history.push_back(total);
    opt.step();
    const double decay = std::min(pc.ema_decay, (1.0 + step) / (10.0 + step));
    for (std::size_t k = 0; k < live.size(); ++k) {
      auto dst = shadow[k].mutable_data();
      const auto src = live[k].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = decay * dst[j] + (1.0 - decay) * src[j];
    }
    if (on_step) on_step(PretrainStats{step, total, lr});
  }
  result.params = pc.ema_decay > 0.0 ? std::move(ema) : std::move(params);
  result.params.set_requires_grad(false);
  return result;
}

double flow_matching_loss(const model::ModelConfig& config, const model::ModelParams& params,
                          const model::Vocabulary& vocab, const std::vector<data::Sample>& samples,
                          std::uint64_t seed) {
  ag::NoGradGuard guard;
  Rng rng(seed);
  double total = 0.0;
  for (const auto& s : samples) {
    const double t = rng.uniform();
    const auto noise = flow::gaussian_noise(config.latent_shape(), rng.next_u64());
    const auto fs = flow::make_sample(s.image, noise, t);
    const auto ids = model::tokenize(s.caption, vocab, config.text_len).ids;
    const auto out = model::forward(config, params, {}, fs.u_t, ids, t);
    total += ag::mean(ag::square(ag::sub(out.velocity, fs.v_target))).item();
  }
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

}  // namespace flowerase::engine
