// flowerase: command-line front end for the toy concept-erasure pipeline.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "flowerase/attention_tools.hpp"
#include "flowerase/checkpoint.hpp"
#include "flowerase/data_synth.hpp"
#include "flowerase/engine.hpp"
#include "flowerase/error.hpp"
#include "flowerase/evaluation.hpp"
#include "flowerase/flow.hpp"
#include "flowerase/lora.hpp"
#include "flowerase/pretrain.hpp"
#include "flowerase/run_config.hpp"

namespace fs = std::filesystem;
using namespace flowerase;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;
constexpr int kExitEval = 5;
constexpr int kExitInternal = 6;

constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  usage error (unknown flag, missing argument)\n"
    "  2  configuration error (schema violation, unknown key, incompatible adapters)\n"
    "  3  data error (missing or corrupt corpus, model, checkpoint or adapter file)\n"
    "  4  training error (divergence, degenerate features)\n"
    "  5  evaluation error (classifier gate, bad attack spec)\n"
    "  6  internal error\n";

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig: return kExitConfig;
    case ErrorCategory::kData: return kExitData;
    case ErrorCategory::kTraining: return kExitTraining;
    case ErrorCategory::kEval: return kExitEval;
    case ErrorCategory::kInternal: return kExitInternal;
  }
  return kExitInternal;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;

  RunConfig load() const {
    RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (seed) c.set_seed(*seed);
    c.validate();
    return c;
  }
};

void add_common(CLI::App* app, Common& c, const std::string& out_help) {
  app->add_option("--config", c.config_path, "Run configuration JSON")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Override every seed in the configuration");
  app->add_option("--out", c.out, out_help);
}

std::string or_default(const std::string& v, const std::string& fallback) { return v.empty() ? fallback : v; }

engine::BaseModel load_base(const std::string& path) {
  if (!fs::exists(path)) throw DataError("model file '" + path + "' not found (run `flowerase pretrain` first)");
  return engine::load_model(path);
}

std::vector<lora::LoraAdapter> load_adapters(const std::vector<std::string>& paths, const std::string& mode) {
  std::vector<lora::LoraAdapter> out;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw DataError("adapter file '" + p + "' not found");
    out.push_back(lora::load(p));
  }
  if (out.size() > 1) {
    auto merged = lora::merge(lora::MergeSpec::make(std::move(out), lora::merge_mode_from_string(mode)));
    out.clear();
    out.push_back(std::move(merged));
  }
  return out;
}

void check_adapters(const engine::BaseModel& base, const std::vector<lora::LoraAdapter>& adapters) {
  for (const auto& a : adapters) {
    if (a.config_digest() != base.config.digest()) {
      throw DigestMismatchError("adapter was trained for a different model config");
    }
  }
}

concepts::ConceptSpec resolve_concept(const RunConfig& rc, const std::string& c_un, const std::string& tmpl) {
  const auto th = concepts::Thesaurus::load(rc.resolved_thesaurus());
  const auto store = concepts::BucketStore::load(rc.resolved_buckets());
  if (rc.llm.endpoint.empty() && tmpl.empty()) return concepts::make_spec(c_un, th, store);
  concepts::LlmClientConfig llm = rc.llm;
  llm.offline_fallback = rc.resolved_buckets();
  const auto fetched = concepts::fetch_buckets(c_un, llm, rc.erase.rsc.k);
  for (const auto& w : fetched.warnings) std::cerr << "warning: " << w << "\n";
  std::string sentence = tmpl;
  if (sentence.empty()) sentence = store.contains(c_un) ? store.sentence_template(c_un) : "a photo of [concept]";
  return concepts::make_spec(c_un, th, sentence, fetched.buckets, store.contains(c_un) ? store.category(c_un) : "");
}

eval::ConceptClassifier load_classifier(const std::string& path) {
  if (!fs::exists(path)) throw DataError("classifier '" + path + "' not found (run `flowerase train-classifier`)");
  auto c = eval::ConceptClassifier::load(path);
  if (!c.gated()) throw GateError("classifier '" + path + "' did not pass its held-out gate");
  return c;
}

// --- subcommands -----------------------------------------------------------

int cmd_gen_data(const Common& com, std::optional<std::size_t> n) {
  auto rc = com.load();
  if (n) rc.corpus.n = *n;
  const std::string dir = or_default(com.out, rc.out_dir + "/corpus");
  const auto m = data::generate_corpus(rc.corpus.n, rc.corpus.seed, dir, rc.corpus.image_side);
  std::cout << "wrote " << m.records.size() << " samples to " << dir << "\n";
  std::cout << "manifest hash " << io::hex64(m.hash()) << "\n";
  return kExitOk;
}

data::CorpusManifest load_corpus(const std::string& dir) {
  const std::string path = dir + "/manifest.jsonl";
  if (!fs::exists(path)) throw DataError("corpus manifest '" + path + "' not found (run `flowerase gen-data`)");
  return data::CorpusManifest::load(path);
}

int cmd_pretrain(const Common& com, const std::string& data_dir, std::optional<std::size_t> steps) {
  auto rc = com.load();
  if (steps) rc.pretrain.steps = *steps;
  const auto manifest = load_corpus(or_default(data_dir, rc.out_dir + "/corpus"));
  engine::BaseModel base;
  base.vocab = data::world_vocabulary();
  base.config = rc.model;
  base.config.vocab_size = base.vocab.size();
  base.config.image_side = manifest.image_side;
  const auto samples = data::materialize(manifest, "train");
  const std::string out = or_default(com.out, rc.out_dir + "/model.femd");
  const auto t0 = std::chrono::steady_clock::now();
  model::ModelParams last_good;
  try {
    auto r = engine::pretrain(base.config, base.vocab, samples, rc.pretrain,
                              [&](const engine::PretrainStats& s) {
                                if (s.step % 250 == 0 || s.step + 1 == rc.pretrain.steps) {
                                  std::printf("step %6zu  loss %.4f  lr %.2e  %.0fs\n", s.step, s.loss, s.lr,
                                              seconds_since(t0));
                                  std::fflush(stdout);
                                }
                              },
                              &last_good);
    base.params = std::move(r.params);
    base.loss_history = std::move(r.loss_history);
  } catch (const DivergenceError&) {
    base.params = std::move(last_good);
    engine::save_model(base, out + ".last_good");
    std::cerr << "saved last finite weights to " << out << ".last_good\n";
    throw;
  }
  ensure_parent(out);
  engine::save_model(base, out);
  std::cout << "saved " << out << " (" << base.params.count() << " weights, " << seconds_since(t0) << " s)\n";
  return kExitOk;
}

int cmd_train_classifier(const Common& com, const std::string& data_dir) {
  const auto rc = com.load();
  const auto manifest = load_corpus(or_default(data_dir, rc.out_dir + "/corpus"));
  const auto clf = eval::train_classifier(manifest, rc.classifier, true);
  const std::string out = or_default(com.out, rc.out_dir + "/classifier.fecl");
  ensure_parent(out);
  clf.save(out);
  for (const auto& [k, v] : clf.heldout) std::printf("%-9s %.3f\n", k.c_str(), v);
  std::cout << "saved " << out << "\n";
  return kExitOk;
}

struct EraseArgs {
  std::string model, concept_word, sentence_template, checkpoint, resume, log;
  std::optional<std::size_t> iterations;
  std::size_t checkpoint_every = 50;
};

int cmd_erase(const Common& com, const EraseArgs& a) {
  auto rc = com.load();
  if (a.iterations) rc.erase.iterations = *a.iterations;
  const auto base = load_base(or_default(a.model, rc.out_dir + "/model.femd"));
  const auto spec = resolve_concept(rc, a.concept_word, a.sentence_template);
  engine::EraseSession session(base, spec, rc.erase);
  if (!a.resume.empty()) {
    if (!fs::exists(a.resume)) throw DataError("checkpoint '" + a.resume + "' not found");
    session.load_checkpoint(a.resume);
    std::cout << "resumed at iteration " << session.iteration() << "\n";
  }
  const auto t0 = std::chrono::steady_clock::now();
  session.on_log = [&](const engine::LogEntry& e) {
    if (e.level == "upper" && (e.iteration % 20 == 0 || e.iteration + 1 == rc.erase.iterations)) {
      const auto& low = session.log()[session.log().size() - 2].losses;
      std::printf("iter %4zu  esd %.5f  attn %.5f  lora %.5f  rsc %.4f  %.0fs\n", e.iteration, low.at("esd"),
                  low.at("attn"), e.losses.at("lora"), e.losses.at("rsc"), seconds_since(t0));
      std::fflush(stdout);
    }
  };
  while (!session.done()) {
    session.run(a.checkpoint_every);
    if (!a.checkpoint.empty()) {
      ensure_parent(a.checkpoint);
      session.save_checkpoint(a.checkpoint);
    }
  }
  const std::string out = or_default(com.out, rc.out_dir + "/" + spec.c_un + ".fela");
  ensure_parent(out);
  auto adapter = session.adapter().clone();
  adapter.set_requires_grad(false);
  lora::save(adapter, out);
  write_text(or_default(a.log, out + ".log.jsonl"), engine::log_to_jsonl(session.log()));
  std::cout << "saved " << out << " (adapter hash " << io::hex64(adapter.hash()) << ")\n";
  return kExitOk;
}

struct SampleArgs {
  std::string model, prompt, zero_keyword, merge_mode = "normalized";
  std::vector<std::string> adapters;
  std::size_t n = 4;
  std::size_t steps = 28;
};

int cmd_sample(const Common& com, const SampleArgs& a) {
  const auto rc = com.load();
  const auto base = load_base(or_default(a.model, rc.out_dir + "/model.femd"));
  const auto adapters = load_adapters(a.adapters, a.merge_mode);
  check_adapters(base, adapters);
  const std::string dir = or_default(com.out, rc.out_dir + "/samples");
  fs::create_directories(dir);
  const std::uint64_t seed0 = com.seed.value_or(rc.measure.seed);
  const eval::Conditioning cond{adapters, a.zero_keyword};
  for (std::size_t i = 0; i < a.n; ++i) {
    const auto img = eval::sample_image(base, cond, a.prompt, seed0 + i, a.steps);
    char name[32];
    std::snprintf(name, sizeof name, "/sample_%03zu.ppm", i);
    data::write_ppm(img, dir + name);
    data::save_image(img, dir + std::string(name).replace(std::string(name).size() - 3, 3, "feim"));
  }
  std::cout << "wrote " << a.n << " samples to " << dir << "\n";
  return kExitOk;
}

int cmd_merge(const Common& com, const std::vector<std::string>& paths, const std::string& mode) {
  if (paths.size() < 2) throw ConfigError("merge needs at least two --adapter files");
  const auto rc = com.load();
  const auto merged = load_adapters(paths, mode).front();
  const std::string out = or_default(com.out, rc.out_dir + "/merged.fela");
  ensure_parent(out);
  lora::save(merged, out);
  std::cout << "saved " << out << " (" << merged.terms().size() << " terms, " << mode << ")\n";
  return kExitOk;
}

struct EvalArgs {
  std::string model, classifier, merge_mode = "normalized";
  std::vector<std::string> concept_words, adapters, attacks;
};

int cmd_eval(const Common& com, const EvalArgs& a) {
  const auto rc = com.load();
  const auto base = load_base(or_default(a.model, rc.out_dir + "/model.femd"));
  const auto clf = load_classifier(or_default(a.classifier, rc.out_dir + "/classifier.fecl"));
  const auto adapters = load_adapters(a.adapters, a.merge_mode);
  check_adapters(base, adapters);
  std::vector<eval::EvalReport> reports;
  nlohmann::json all = nlohmann::json::array();
  for (const auto& c : a.concept_words) {
    const auto spec = resolve_concept(rc, c, "");
    reports.push_back(eval::measure(base, adapters, spec, clf, rc.measure));
    auto j = reports.back().to_json();
    j["hash"] = io::hex64(reports.back().hash());
    all.push_back(std::move(j));
  }
  std::cout << eval::format_table(reports);
  const std::string out = or_default(com.out, rc.out_dir + "/eval_report.json");
  write_text(out, all.dump(2) + "\n");
  for (const auto& r : reports) std::cout << r.concept_word << " report hash " << io::hex64(r.hash()) << "\n";
  return kExitOk;
}

int cmd_attack(const Common& com, const EvalArgs& a) {
  const auto rc = com.load();
  const auto base = load_base(or_default(a.model, rc.out_dir + "/model.femd"));
  const auto clf = load_classifier(or_default(a.classifier, rc.out_dir + "/classifier.fecl"));
  const auto adapters = load_adapters(a.adapters, a.merge_mode);
  check_adapters(base, adapters);
  std::vector<eval::AttackSpec> attacks;
  for (const auto& s : a.attacks) attacks.push_back(eval::AttackSpec::parse(s));
  if (attacks.empty()) {
    attacks = {eval::AttackSpec::parse("misspell"), eval::AttackSpec::parse("prefix_suffix"),
               eval::AttackSpec::parse("repeat")};
  }
  nlohmann::json all = nlohmann::json::array();
  std::printf("%-10s %-22s %8s %8s %13s\n", "concept", "attack", "none", "adapter", "zero_columns");
  for (const auto& c : a.concept_words) {
    const auto spec = resolve_concept(rc, c, "");
    for (const auto& r : eval::attack(base, adapters, spec, attacks, clf, rc.measure)) {
      std::printf("%-10s %-22s %8.3f %8.3f %13.3f\n", c.c_str(), r.attack.c_str(), r.asr.at("none"),
                  r.asr.at("adapter"), r.asr.at("zero_columns"));
      all.push_back({{"concept", c}, {"attack", r.attack}, {"asr", r.asr}, {"prompts", r.prompts}});
    }
  }
  write_text(or_default(com.out, rc.out_dir + "/attack_report.json"), all.dump(2) + "\n");
  return kExitOk;
}

struct InspectArgs {
  std::string model, prompt, keyword, merge_mode = "normalized";
  std::vector<std::string> adapters;
  double t = 1.0;
};

int cmd_inspect_attn(const Common& com, const InspectArgs& a) {
  const auto rc = com.load();
  const auto base = load_base(or_default(a.model, rc.out_dir + "/model.femd"));
  const auto adapters = load_adapters(a.adapters, a.merge_mode);
  check_adapters(base, adapters);
  const auto& cfg = base.config;
  const auto toks = model::tokenize(a.prompt, base.vocab, cfg.text_len);
  ag::Tensor x = flow::gaussian_noise(cfg.latent_shape(), com.seed.value_or(rc.measure.seed));
  if (a.t < 1.0) {
    ag::NoGradGuard guard;
    const auto steps = static_cast<std::size_t>(std::lround((1.0 - a.t) * 28.0));
    if (steps > 0) x = flow::euler_integrate(flow::model_field(cfg, base.params, adapters, toks.ids), x, 1.0, a.t, steps);
  }
  ag::NoGradGuard guard;
  const auto out = model::forward(cfg, base.params, adapters, x, toks.ids, a.t,
                                  model::ForwardOptions{.capture_attention = true, .zero_columns = {}});
  const std::string dir = or_default(com.out, rc.out_dir + "/attention");
  fs::create_directories(dir);
  std::vector<attn::TokenSpan> spans;
  if (!a.keyword.empty()) {
    spans = attn::locate_spans(a.prompt, a.keyword, cfg.text_len);
    if (spans.empty()) throw ConfigError("keyword '" + a.keyword + "' not found in the prompt");
  }
  for (const auto& rec : out.records) {
    const std::string prefix = dir + "/block" + std::to_string(rec.block_index);
    attn::write_attention_pgm(rec, prefix);
    for (std::size_t col = 0; col < toks.length; ++col) {
      attn::write_token_map_pgm(rec, col, cfg.text_len, cfg.patches_per_side(),
                                prefix + "_token" + std::to_string(col) + ".pgm");
    }
  }
  std::printf("tokens:");
  for (std::size_t i = 0; i < toks.length; ++i) std::printf(" %zu:%s", i, base.vocab.word(toks.ids[i]).c_str());
  std::printf("\n");
  if (!spans.empty()) {
    const auto mass = attn::attn_loss(out.records, spans).value.item();
    std::printf("mean attention on '%s': %.4f (uniform would be %.4f)\n", a.keyword.c_str(), mass,
                static_cast<double>(spans.size() * spans[0].length()) / static_cast<double>(cfg.total_tokens()));
  }
  std::cout << "wrote attention maps to " << dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy concept erasure for dual-stream flow transformers"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);
  app.set_version_flag("--version", "flowerase 0.1.0");

  Common com;
  std::optional<std::size_t> n, steps;
  std::string data_dir;
  EraseArgs ea;
  SampleArgs sa;
  EvalArgs va;
  InspectArgs ia;
  std::vector<std::string> merge_paths;
  std::string merge_mode = "normalized";
  const auto mode_check = CLI::IsMember({"normalized", "unnormalized"});

  auto* gen = app.add_subcommand("gen-data", "Render the captioned toy corpus");
  add_common(gen, com, "Output directory (default <out_dir>/corpus)");
  gen->add_option("--n", n, "Number of samples");

  auto* pre = app.add_subcommand("pretrain", "Fit the base flow model on the corpus");
  add_common(pre, com, "Model file (default <out_dir>/model.femd)");
  pre->add_option("--data", data_dir, "Corpus directory");
  pre->add_option("--steps", steps, "Override pretrain.steps");

  auto* clf = app.add_subcommand("train-classifier", "Train the attribute classifier used by eval and attack");
  add_common(clf, com, "Classifier file (default <out_dir>/classifier.fecl)");
  clf->add_option("--data", data_dir, "Corpus directory");

  auto* er = app.add_subcommand("erase", "Train a LoRA adapter that erases one concept");
  add_common(er, com, "Adapter file (default <out_dir>/<concept>.fela)");
  er->add_option("--model", ea.model, "Base model file");
  er->add_option("--concept", ea.concept_word, "Concept to erase")->required();
  er->add_option("--template", ea.sentence_template, "Sentence template containing [concept]");
  er->add_option("--iterations", ea.iterations, "Override erase.iterations");
  er->add_option("--checkpoint", ea.checkpoint, "Write a resumable checkpoint here");
  er->add_option("--checkpoint-every", ea.checkpoint_every, "Iterations between checkpoints")->check(CLI::PositiveNumber);
  er->add_option("--resume", ea.resume, "Resume from a checkpoint");
  er->add_option("--log", ea.log, "Run log (JSON lines)");

  auto* sm = app.add_subcommand("sample", "Generate images (PPM) for a prompt");
  add_common(sm, com, "Output directory (default <out_dir>/samples)");
  sm->add_option("--model", sa.model, "Base model file");
  sm->add_option("--prompt", sa.prompt, "Prompt text")->required();
  sm->add_option("--adapter", sa.adapters, "Adapter file (repeatable; several are merged)");
  sm->add_option("--merge-mode", sa.merge_mode, "How repeated adapters combine")->check(mode_check);
  sm->add_option("--zero-keyword", sa.zero_keyword, "Zero this keyword's attention columns (index-based erasure)");
  sm->add_option("--n", sa.n, "Number of images")->check(CLI::PositiveNumber);
  sm->add_option("--steps", sa.steps, "Euler steps")->check(CLI::PositiveNumber);

  auto* mg = app.add_subcommand("merge", "Compose adapters into one file");
  add_common(mg, com, "Merged adapter file (default <out_dir>/merged.fela)");
  mg->add_option("--adapter", merge_paths, "Adapter file (repeatable)")->required();
  mg->add_option("--merge-mode", merge_mode, "normalized (weights 1/N) or unnormalized")->check(mode_check);

  auto add_eval_opts = [&](CLI::App* sub) {
    sub->add_option("--model", va.model, "Base model file");
    sub->add_option("--classifier", va.classifier, "Classifier file");
    sub->add_option("--concept", va.concept_words, "Concept to score (repeatable)")->required();
    sub->add_option("--adapter", va.adapters, "Adapter file (repeatable; several are merged)");
    sub->add_option("--merge-mode", va.merge_mode, "How repeated adapters combine")->check(mode_check);
  };
  auto* ev = app.add_subcommand("eval", "Acc_e / Acc_ir / Acc_g with and without adapters");
  add_common(ev, com, "Report JSON (default <out_dir>/eval_report.json)");
  add_eval_opts(ev);

  auto* at = app.add_subcommand("attack", "Attack success rate under each defense");
  add_common(at, com, "Report JSON (default <out_dir>/attack_report.json)");
  add_eval_opts(at);
  at->add_option("--attack", va.attacks, "misspell[:chars] | prefix_suffix[:pre:suf] | repeat[:count] (repeatable)");

  auto* ins = app.add_subcommand("inspect-attn", "Write attention maps (PGM) for a prompt");
  add_common(ins, com, "Output directory (default <out_dir>/attention)");
  ins->add_option("--model", ia.model, "Base model file");
  ins->add_option("--prompt", ia.prompt, "Prompt text")->required();
  ins->add_option("--keyword", ia.keyword, "Report attention mass on this keyword");
  ins->add_option("--adapter", ia.adapters, "Adapter file (repeatable)");
  ins->add_option("--merge-mode", ia.merge_mode, "How repeated adapters combine")->check(mode_check);
  ins->add_option("--t", ia.t, "Timestep of the captured forward pass")->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(com, n);
    if (*pre) return cmd_pretrain(com, data_dir, steps);
    if (*clf) return cmd_train_classifier(com, data_dir);
    if (*er) return cmd_erase(com, ea);
    if (*sm) return cmd_sample(com, sa);
    if (*mg) return cmd_merge(com, merge_paths, merge_mode);
    if (*ev) return cmd_eval(com, va);
    if (*at) return cmd_attack(com, va);
    if (*ins) return cmd_inspect_attn(com, ia);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
