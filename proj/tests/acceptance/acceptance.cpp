// Acceptance suite: one PASS/FAIL line per criterion. Criteria 6-8 and 10 run
// on the pinned pilot (the default RunConfig); the pretrained model and the
// classifier are cached in the work directory keyed by their config digests.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "flowerase/attention_tools.hpp"
#include "flowerase/checkpoint.hpp"
#include "flowerase/engine.hpp"
#include "flowerase/evaluation.hpp"
#include "flowerase/flow.hpp"
#include "flowerase/losses.hpp"
#include "flowerase/lora.hpp"
#include "flowerase/pretrain.hpp"
#include "flowerase/run_config.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace flowerase;
using testing::max_abs_diff;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [violated]");
    pass = pass && ok;
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

concepts::ConceptSpec spec_for(const std::string& word) {
  static const auto th = concepts::Thesaurus::load(concepts::data_path("thesaurus.json"));
  static const auto store = concepts::BucketStore::load(concepts::data_path("concept_buckets.json"));
  return concepts::make_spec(word, th, store);
}

// --- 1: gradient correctness -------------------------------------------------

Outcome gradient_correctness() {
  Outcome o;
  const auto m = testing::tiny_model(1, 32, 16);
  auto adapter = testing::random_adapter(m, 7, 0.05);
  const std::span<const lora::LoraAdapter> ads(&adapter, 1);
  const auto& cfg = m.config;
  auto toks = [&](const std::string& p) { return model::tokenize(p, m.vocab, cfg.text_len).ids; };

  const std::string prompt = "a red circle above a blue square";
  const auto spans = attn::locate_spans(prompt, "red", cfg.text_len);
  const auto x_t = testing::random_tensor(cfg.latent_shape(), 11);
  const double t = 0.6;
  ag::Tensor v_cond, v_uncond;
  {
    ag::NoGradGuard g;
    v_cond = model::forward(cfg, m.params, {}, x_t, toks(prompt), t).velocity;
    v_uncond = model::forward(cfg, m.params, {}, x_t, toks(""), t).velocity;
  }
  const auto u_pix = testing::random_tensor(cfg.latent_shape(), 12, 0.5);
  const auto x_T = flow::gaussian_noise(cfg.latent_shape(), 13);
  const auto fs_ = flow::make_sample(u_pix, x_T, 0.4);
  const model::ForwardOptions capture{.capture_attention = true, .zero_columns = {}};

  const std::vector<std::pair<std::string, std::function<ag::Tensor()>>> cases = {
      {"esd",
       [&] {
         return losses::esd_loss(model::forward(cfg, m.params, ads, x_t, toks(prompt), t).velocity, v_cond, v_uncond);
       }},
      {"attn",
       [&] {
         const auto r = model::forward(cfg, m.params, ads, x_t, toks(prompt), t, capture);
         return attn::attn_loss(r.records, spans).value;
       }},
      {"preservation",
       [&] {
         return losses::preservation_loss(
             model::forward(cfg, m.params, ads, fs_.u_t, toks("a green square"), 0.4).velocity, fs_.v_target);
       }},
      {"rsc",
       [&] {
         auto feature = [&](const std::string& word) {
           const std::string p = "a " + word + " circle";
           const auto r = model::forward(cfg, m.params, ads, x_T, toks(p), 1.0, capture);
           return attn::concept_feature(r.records, attn::locate_spans(p, word, cfg.text_len));
         };
         losses::ConceptFeatures f{feature("red"), feature("crimson"), {feature("green"), feature("blue"), feature("white")}};
         return losses::rsc_loss(f, {.tau = 0.07, .k = 3});
       }},
  };
  for (const auto& [name, fn] : cases) {
    const auto gc = testing::grad_check(fn, adapter.parameters(), 6);
    o.require(gc.rel_error < 1e-4 && gc.numeric_norm > 0.0, name + fmt(" rel %.2e", gc.rel_error));
  }
  return o;
}

// --- 2: flow exactness -------------------------------------------------------

Outcome flow_exactness() {
  Outcome o;
  const ag::Shape shape = {32, 32, 3};
  const auto u = testing::random_tensor(shape, 21);
  const auto x_T = flow::gaussian_noise(shape, 9);
  const auto exact = [&](const ag::Tensor&, double) { return flow::velocity_target(u, x_T); };
  for (std::size_t steps : {1, 7, 28}) {
    const double err = max_abs_diff(flow::euler_sample(exact, shape, {.num_steps = steps, .seed = 9}), u);
    o.require(err <= 1e-9, fmt("%.0f steps err %.1e", static_cast<double>(steps), err));
  }
  return o;
}

// --- 3: attention invariants --------------------------------------------------

Outcome attention_invariants() {
  Outcome o;
  const auto m = testing::tiny_model(2, 32, 16);
  const auto& cfg = m.config;
  const std::string prompt = "a striped red star beside a white circle";
  const auto toks = model::tokenize(prompt, m.vocab, cfg.text_len).ids;
  const auto x = flow::gaussian_noise(cfg.latent_shape(), 3);
  ag::NoGradGuard g;
  const auto out = model::forward(cfg, m.params, {}, x, toks, 0.8, {.capture_attention = true, .zero_columns = {}});
  double worst = 0.0;
  for (const auto& rec : out.records) {
    const std::size_t T = rec.weights.shape()[1];
    for (std::size_t r = 0; r < rec.weights.numel() / T; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < T; ++c) s += rec.weights[r * T + c];
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  o.require(worst <= 1e-6, fmt("row sums within %.1e", worst));

  const auto spans = attn::locate_spans(prompt, "red", cfg.text_len);
  const auto cols = attn::span_columns(spans);
  bool exact = true, idempotent = true;
  for (const auto& rec : out.records) {
    const auto z1 = attn::zero_columns(rec, spans, cfg.text_len);
    const auto z2 = attn::zero_columns(z1, spans, cfg.text_len);
    const std::size_t T = z1.weights.shape()[1];
    for (std::size_t r = 0; r < z1.weights.numel() / T; ++r) {
      for (std::size_t c : cols) exact = exact && z1.weights[r * T + c] == 0.0;
    }
    idempotent = idempotent && max_abs_diff(z1.weights, z2.weights) == 0.0;
  }
  // The same columns zeroed inside the forward pass.
  const auto zf = model::forward(cfg, m.params, {}, x, toks, 0.8, {.capture_attention = true, .zero_columns = cols});
  for (const auto& rec : zf.records) {
    const std::size_t T = rec.weights.shape()[1];
    for (std::size_t r = 0; r < rec.weights.numel() / T; ++r) {
      for (std::size_t c : cols) exact = exact && rec.weights[r * T + c] == 0.0;
    }
  }
  o.require(exact, "zeroed columns exactly 0");
  o.require(idempotent, "zero_columns idempotent");

  const std::size_t H = cfg.num_heads, T = cfg.total_tokens();
  model::AttentionRecord uniform{0, 1.0, ag::Tensor({H, T, T}, std::vector<double>(H * T * T, 1.0 / T))};
  std::vector<model::AttentionRecord> recs(cfg.num_dual_blocks, uniform);
  const double got = attn::attn_loss(recs, spans).value.item();
  const double want = static_cast<double>(cols.size()) / static_cast<double>(T);
  o.require(std::abs(got - want) <= 1e-9, fmt("uniform attn_loss %.12f vs L/T %.12f", got, want));
  return o;
}

// --- 4: RSC oracles ------------------------------------------------------------

Outcome rsc_oracles() {
  Outcome o;
  const auto f = testing::random_tensor({40}, 5);
  const double k3 = losses::rsc_loss({f, f, {f, f, f}}, {.tau = 0.07, .k = 3}).item();
  const double k1 = losses::rsc_loss({f, f, {f}}, {.tau = 0.07, .k = 1}).item();
  o.require(std::abs(k3 - std::log(3.0)) <= 1e-9, fmt("K=3 %.12f", k3));
  o.require(std::abs(k1) <= 1e-12, fmt("K=1 %.1e", k1));
  return o;
}

// --- 5: LoRA composition -------------------------------------------------------

Outcome lora_composition() {
  Outcome o;
  const auto m = testing::tiny_model(3, 32, 16);
  const auto a = testing::random_adapter(m, 5, 0.3);
  const auto toks = model::tokenize("a red circle", m.vocab, m.config.text_len).ids;
  const flow::SamplerConfig sc{.num_steps = 28, .seed = 2};
  const auto single = flow::euler_sample(m.config, m.params, std::span(&a, 1), toks, sc);
  for (std::size_t n : {2, 3, 5}) {
    const auto merged =
        lora::merge(lora::MergeSpec::make(std::vector<lora::LoraAdapter>(n, a), lora::MergeMode::kNormalized));
    const double err = max_abs_diff(single, flow::euler_sample(m.config, m.params, std::span(&merged, 1), toks, sc));
    o.require(err <= 1e-6, fmt("N=%.0f identical: %.1e/pixel", static_cast<double>(n), err));
  }
  const std::vector<lora::LoraAdapter> parts = {testing::random_adapter(m, 6), testing::random_adapter(m, 7),
                                                testing::random_adapter(m, 8)};
  double worst = 0.0;
  for (auto mode : {lora::MergeMode::kNormalized, lora::MergeMode::kUnnormalized}) {
    const auto merged = lora::merge(lora::MergeSpec::make(parts, mode));
    const double w = mode == lora::MergeMode::kNormalized ? 1.0 / static_cast<double>(parts.size()) : 1.0;
    for (const auto& name : merged.target_names()) {
      ag::Tensor ref = m.params.get(name);
      for (const auto& p : parts) ref = ag::add(ref, ag::scale(p.delta(name), w));
      worst = std::max(worst, max_abs_diff(lora::apply(m.params.get(name), merged, name), ref));
    }
  }
  o.require(worst <= 1e-9, fmt("linearity vs weight-sum oracle %.1e", worst));
  return o;
}

// --- pilot assets ---------------------------------------------------------------

struct Pilot {
  RunConfig rc;
  engine::BaseModel base;
  eval::ConceptClassifier classifier;
  double pretrain_seconds = 0.0;
  bool pretrain_cached = false;
};

std::string key_of(const nlohmann::json& j) { return io::hex64(io::fnv1a(j.dump())); }

Pilot prepare_pilot(const fs::path& work, bool fresh) {
  Pilot p;
  p.rc.validate();
  fs::create_directories(work);
  const auto manifest = data::make_manifest(p.rc.corpus.n, p.rc.corpus.seed, p.rc.corpus.image_side);
  const auto cfg_json = p.rc.to_json();

  const auto model_path = work / ("model_" + key_of({cfg_json["corpus"], cfg_json["model"], cfg_json["pretrain"]}) + ".femd");
  const auto model_meta = fs::path(model_path.string() + ".json");
  if (!fresh && fs::exists(model_path) && fs::exists(model_meta)) {
    p.base = engine::load_model(model_path.string());
    p.pretrain_seconds = nlohmann::json::parse(std::ifstream(model_meta)).at("pretrain_seconds").get<double>();
    p.pretrain_cached = true;
  } else {
    std::cout << "pretraining pilot model (" << p.rc.pretrain.steps << " steps)..." << std::endl;
    p.base.vocab = data::world_vocabulary();
    p.base.config = p.rc.model;
    p.base.config.vocab_size = p.base.vocab.size();
    p.base.config.image_side = p.rc.corpus.image_side;
    const auto samples = data::materialize(manifest, "train");
    const auto t0 = Clock::now();
    auto r = engine::pretrain(p.base.config, p.base.vocab, samples, p.rc.pretrain);
    p.pretrain_seconds = seconds_since(t0);
    p.base.params = std::move(r.params);
    p.base.loss_history = std::move(r.loss_history);
    engine::save_model(p.base, model_path.string());
    std::ofstream(model_meta) << nlohmann::json{{"pretrain_seconds", p.pretrain_seconds}}.dump() << "\n";
  }

  const auto clf_path = work / ("classifier_" + key_of({cfg_json["corpus"], cfg_json["classifier"]}) + ".fecl");
  if (!fresh && fs::exists(clf_path)) {
    p.classifier = eval::ConceptClassifier::load(clf_path.string());
  } else {
    std::cout << "training classifier..." << std::endl;
    p.classifier = eval::train_classifier(manifest, p.rc.classifier, false);
    p.classifier.save(clf_path.string());
  }
  return p;
}

// One concept per taxonomy analog: Entity, Abstraction, Relationship.
const std::vector<std::string> kPilotConcepts = {"triangle", "red", "beside"};
const std::vector<std::uint64_t> kSeeds = {0, 1, 2};

Outcome pretraining_viability(const Pilot& p, std::map<std::string, eval::Accuracies>& before) {
  Outcome o;
  o.require(p.rc.corpus.n >= 2000 && p.rc.corpus.image_side == 32,
            fmt("corpus %.0f samples at %.0fpx", static_cast<double>(p.rc.corpus.n), static_cast<double>(p.rc.corpus.image_side)));
  o.require(p.pretrain_seconds < 1800.0,
            fmt("pretrain %.0f s", p.pretrain_seconds) + (p.pretrain_cached ? " (cached run)" : ""));
  for (const auto& [name, acc] : p.classifier.heldout) o.require(acc >= 0.95, name + fmt(" %.3f", acc));
  for (const auto& c : kPilotConcepts) {
    const auto rep = eval::measure(p.base, {}, spec_for(c), p.classifier, p.rc.measure);
    before[c] = rep.before;
    o.require(rep.before.acc_e >= 0.8, c + fmt(" Acc_e %.3f", rep.before.acc_e));
  }
  return o;
}

struct Averages {
  eval::Accuracies before, after;
};

Averages average(const std::vector<eval::EvalReport>& reps) {
  Averages a;
  const double n = static_cast<double>(reps.size());
  for (const auto& r : reps) {
    a.before.acc_e += r.before.acc_e / n;
    a.before.acc_ir += r.before.acc_ir / n;
    a.before.acc_g += r.before.acc_g / n;
    a.after.acc_e += r.after.acc_e / n;
    a.after.acc_ir += r.after.acc_ir / n;
    a.after.acc_g += r.after.acc_g / n;
  }
  return a;
}

lora::LoraAdapter erase_concept(const Pilot& p, const std::string& c, std::uint64_t seed, double* seconds) {
  auto cfg = p.rc.erase;
  cfg.seed = seed;
  const auto t0 = Clock::now();
  auto r = engine::erase(p.base, spec_for(c), cfg);
  if (seconds != nullptr) *seconds = seconds_since(t0);
  return std::move(r.adapter);
}

eval::MeasureConfig measure_seeded(const Pilot& p, std::uint64_t seed) {
  auto m = p.rc.measure;
  m.seed = seed;
  return m;
}

const std::string kEraseConcept = "red";

Outcome erasure_efficacy(const Pilot& p, std::vector<lora::LoraAdapter>& adapters) {
  Outcome o;
  const auto& e = p.rc.erase;
  o.require(e.iterations == 200 && e.esd.eta == 1.0 && e.rsc.tau == 0.07 && e.rsc.k == 3, "default M=200 eta=1 tau=0.07 K=3");
  std::vector<eval::EvalReport> reps;
  double slowest = 0.0;
  for (auto seed : kSeeds) {
    double secs = 0.0;
    adapters.push_back(erase_concept(p, kEraseConcept, seed, &secs));
    slowest = std::max(slowest, secs);
    reps.push_back(eval::measure(p.base, std::span(&adapters.back(), 1), spec_for(kEraseConcept), p.classifier,
                                 measure_seeded(p, seed)));
    std::cout << "  seed " << seed << fmt(": erase %.0f s, Acc_e %.3f -> %.3f", secs, reps.back().before.acc_e,
                                          reps.back().after.acc_e)
              << std::endl;
  }
  const auto a = average(reps);
  o.require(a.after.acc_e <= 0.5 * a.before.acc_e, fmt("Acc_e %.3f -> %.3f", a.before.acc_e, a.after.acc_e));
  o.require(a.after.acc_ir >= 0.85 * a.before.acc_ir, fmt("Acc_ir %.3f -> %.3f", a.before.acc_ir, a.after.acc_ir));
  o.require(a.after.acc_g <= 0.7 * a.before.acc_g, fmt("Acc_g %.3f -> %.3f", a.before.acc_g, a.after.acc_g));
  o.require(slowest < 600.0, fmt("slowest erase %.0f s", slowest));
  return o;
}

Outcome attack_ordering(const Pilot& p, const std::vector<lora::LoraAdapter>& adapters) {
  Outcome o;
  const std::vector<eval::AttackSpec> attacks = {eval::AttackSpec::parse("misspell"),
                                                 eval::AttackSpec::parse("prefix_suffix"),
                                                 eval::AttackSpec::parse("repeat")};
  std::map<std::string, std::map<std::string, double>> mean;
  for (std::size_t i = 0; i < kSeeds.size(); ++i) {
    const auto res = eval::attack(p.base, std::span(&adapters[i], 1), spec_for(kEraseConcept), attacks, p.classifier,
                                  measure_seeded(p, kSeeds[i]));
    for (const auto& r : res) {
      for (const auto& [d, v] : r.asr) mean[r.attack][d] += v / static_cast<double>(kSeeds.size());
    }
  }
  for (const auto& [name, asr] : mean) {
    o.require(asr.at("zero_columns") >= asr.at("adapter"),
              name + fmt(" none %.3f adapter %.3f zero %.3f", asr.at("none"), asr.at("adapter"), asr.at("zero_columns")));
  }
  return o;
}

// --- 9: determinism ------------------------------------------------------------------

std::uint64_t mini_pipeline(std::uint64_t seed) {
  RunConfig rc;
  rc.set_seed(seed);
  const auto manifest = data::make_manifest(48, rc.corpus.seed, 16);
  engine::BaseModel base = testing::tiny_model(rc.model.seed, 32, 16);
  engine::PretrainConfig pc = rc.pretrain;
  pc.steps = 30;
  pc.batch_size = 4;
  pc.warmup = 5;
  auto pr = engine::pretrain(base.config, base.vocab, data::materialize(manifest, "train"), pc);
  base.params = std::move(pr.params);
  eval::ClassifierConfig cc = rc.classifier;
  cc.epochs = 1;
  cc.channels = 8;
  cc.hidden = 16;
  cc.gate = 0.0;  // only determinism matters for this classifier
  const auto clf = eval::train_classifier(manifest, cc, false);
  auto ec = rc.erase;
  ec.iterations = 4;
  ec.sampler.num_steps = 4;
  ec.preservation_count = 6;
  const auto adapter = engine::erase(base, spec_for("red"), ec).adapter;
  eval::MeasureConfig mc = rc.measure;
  mc.prompts_per_label = 1;
  mc.samples_per_prompt = 2;
  mc.num_steps = 4;
  return eval::measure(base, std::span(&adapter, 1), spec_for("red"), clf, mc).hash();
}

Outcome determinism(const Pilot* pilot) {
  Outcome o;
  const auto h1 = mini_pipeline(5);
  const auto h2 = mini_pipeline(5);
  o.require(h1 == h2, "EvalReport hash " + io::hex64(h1) + " twice");
  o.require(mini_pipeline(6) != h1, "a different seed changes the hash");

  // Resume equivalence on the pilot model when available, else a tiny one.
  const engine::BaseModel tiny = testing::tiny_model(4, 32, 16);
  const engine::BaseModel& base = pilot != nullptr ? pilot->base : tiny;
  auto cfg = pilot != nullptr ? pilot->rc.erase : engine::BiLevelConfig{};
  cfg.iterations = 10;
  engine::EraseSession full(base, spec_for("red"), cfg);
  full.run();
  engine::EraseSession first(base, spec_for("red"), cfg);
  first.run(5);
  const auto bytes = first.checkpoint_bytes();
  engine::EraseSession second(base, spec_for("red"), cfg);
  second.restore(bytes);
  second.run();
  o.require(second.adapter().hash() == full.adapter().hash() &&
                engine::log_to_jsonl(second.log()) == engine::log_to_jsonl(full.log()),
            "5+5 resumed == unbroken 10");
  return o;
}

// --- 10: multi-concept erasure ----------------------------------------------------------

const std::string kSecondConcept = "triangle";

Outcome multi_concept(const Pilot& p, const lora::LoraAdapter& first) {
  Outcome o;
  const auto second = erase_concept(p, kSecondConcept, 0, nullptr);
  const auto merged = lora::merge(lora::MergeSpec::make({first, second}, lora::MergeMode::kNormalized));
  for (const auto& c : {kEraseConcept, kSecondConcept}) {
    const auto r = eval::measure(p.base, std::span(&merged, 1), spec_for(c), p.classifier, measure_seeded(p, 0));
    o.require(r.after.acc_e < 0.7 * r.before.acc_e, c + fmt(" Acc_e %.3f -> %.3f", r.before.acc_e, r.after.acc_e));
    o.require(r.after.acc_ir >= 0.8 * r.before.acc_ir, c + fmt(" Acc_ir %.3f -> %.3f", r.before.acc_ir, r.after.acc_ir));
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string work_dir = "acceptance_work";
  std::vector<int> only;
  bool fresh = false;
  app.add_option("--work-dir", work_dir, "Cache for the pilot model and classifier");
  app.add_option("--only", only, "Run just these criteria")->check(CLI::Range(1, 10));
  app.add_flag("--fresh", fresh, "Ignore cached pilot assets");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int id) { return selected.empty() || selected.count(id) > 0; };

  nlohmann::json report = nlohmann::json::array();
  int failures = 0;
  auto run = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = seconds_since(t0);
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail
              << fmt(" [%.1f s]", secs) << std::endl;
    report.push_back({{"criterion", id}, {"name", name}, {"pass", o.pass}, {"detail", o.detail}, {"seconds", secs}});
  };

  run(1, "gradient correctness", gradient_correctness);
  run(2, "flow exactness", flow_exactness);
  run(3, "attention invariants", attention_invariants);
  run(4, "RSC oracle values", rsc_oracles);
  run(5, "LoRA composition", lora_composition);

  std::optional<Pilot> pilot;
  std::string pilot_error;
  if (wanted(6) || wanted(7) || wanted(8) || wanted(10)) {
    try {
      pilot = prepare_pilot(work_dir, fresh);
    } catch (const std::exception& e) {
      pilot_error = e.what();
    }
  }
  auto with_pilot = [&](const std::function<Outcome(const Pilot&)>& fn) {
    return [&, fn] {
      if (!pilot) throw std::runtime_error("pilot unavailable: " + pilot_error);
      return fn(*pilot);
    };
  };
  std::map<std::string, eval::Accuracies> before;
  std::vector<lora::LoraAdapter> red_adapters;
  run(6, "pretraining viability", with_pilot([&](const Pilot& p) { return pretraining_viability(p, before); }));
  run(7, "erasure efficacy and specificity", with_pilot([&](const Pilot& p) { return erasure_efficacy(p, red_adapters); }));
  run(8, "attack ordering", with_pilot([&](const Pilot& p) {
        if (red_adapters.size() != kSeeds.size()) {
          for (auto s : kSeeds) red_adapters.push_back(erase_concept(p, kEraseConcept, s, nullptr));
        }
        return attack_ordering(p, red_adapters);
      }));
  run(9, "determinism", [&] { return determinism(pilot ? &*pilot : nullptr); });
  run(10, "multi-concept erasure", with_pilot([&](const Pilot& p) {
         return multi_concept(p, red_adapters.empty() ? erase_concept(p, kEraseConcept, 0, nullptr) : red_adapters.front());
       }));

  fs::create_directories(work_dir);
  std::ofstream(fs::path(work_dir) / "acceptance_report.json") << report.dump(2) << "\n";
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
