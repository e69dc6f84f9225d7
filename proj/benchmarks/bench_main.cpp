#include <benchmark/benchmark.h>

#include "flowerase/attention_tools.hpp"
#include "flowerase/autograd.hpp"
#include "flowerase/checkpoint.hpp"
#include "flowerase/data_synth.hpp"
#include "flowerase/flow.hpp"
#include "flowerase/lora.hpp"
#include "flowerase/rng.hpp"
#include "flowerase/toymodel.hpp"

using namespace flowerase;

namespace {

ag::Tensor noise(const ag::Shape& shape, std::uint64_t seed, bool grad = false) {
  Rng r(seed);
  std::vector<double> v(ag::numel_of(shape));
  for (auto& x : v) x = r.normal();
  return ag::Tensor(shape, std::move(v), grad);
}

// The pilot-sized model (defaults) with fresh weights.
engine::BaseModel pilot_model() {
  engine::BaseModel m;
  m.vocab = data::world_vocabulary();
  m.config.vocab_size = m.vocab.size();
  m.params = model::init_params(m.config);
  return m;
}

lora::LoraAdapter adapter_for(const engine::BaseModel& m) {
  return lora::LoraAdapter::create(m.params.target_shapes(lora::default_targets(m.config.num_dual_blocks)), 4, 4.0, 1,
                                   m.config.digest());
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise({n, n}, 1);
  const auto b = noise({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ag::matmul(a, b));
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * 2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(96)->Arg(192);

void BM_Forward(benchmark::State& state) {
  const auto m = pilot_model();
  const auto toks = model::tokenize("a red circle above a blue square", m.vocab, m.config.text_len).ids;
  const auto x = noise(m.config.latent_shape(), 3);
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model::forward(m.config, m.params, {}, x, toks, 0.5).velocity);
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

// Forward with attention capture and backward into the LoRA factors: the unit
// of work of one erase step.
void BM_ForwardBackwardLora(benchmark::State& state) {
  const auto m = pilot_model();
  auto ad = adapter_for(m);
  ad.set_requires_grad(true);
  const std::string prompt = "a red circle above a blue square";
  const auto toks = model::tokenize(prompt, m.vocab, m.config.text_len).ids;
  const auto spans = attn::locate_spans(prompt, "red", m.config.text_len);
  const auto x = noise(m.config.latent_shape(), 3);
  for (auto _ : state) {
    const auto r = model::forward(m.config, m.params, std::span(&ad, 1), x, toks, 0.5,
                                  {.capture_attention = true, .zero_columns = {}});
    ag::backward(ag::add(ag::mean(ag::mul(r.velocity, r.velocity)), attn::attn_loss(r.records, spans).value));
  }
}
BENCHMARK(BM_ForwardBackwardLora)->Unit(benchmark::kMillisecond);

void BM_EulerSample(benchmark::State& state) {
  const auto m = pilot_model();
  const auto toks = model::tokenize("a green striped star", m.vocab, m.config.text_len).ids;
  const flow::SamplerConfig sc{.num_steps = static_cast<std::size_t>(state.range(0)), .seed = 4};
  for (auto _ : state) benchmark::DoNotOptimize(flow::euler_sample(m.config, m.params, {}, toks, sc));
}
BENCHMARK(BM_EulerSample)->Arg(7)->Arg(28)->Unit(benchmark::kMillisecond);

void BM_Render(benchmark::State& state) {
  Rng r(5);
  const auto scene = data::random_scene(r, 32);
  for (auto _ : state) benchmark::DoNotOptimize(data::render(scene));
}
BENCHMARK(BM_Render);

}  // namespace

BENCHMARK_MAIN();
