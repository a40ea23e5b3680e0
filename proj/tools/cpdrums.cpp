// cpdrums: corpus preprocessing, tokenization, training, generation and evaluation.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpdrums/pipeline.h"

using namespace cpdrums;
using nlohmann::ordered_json;

namespace {

void emit(const ordered_json& j) { std::cout << j.dump(2) << std::endl; }

int fail(const std::string& stage, const std::string& what) {
  std::cerr << ordered_json{{"status", "error"}, {"stage", stage}, {"message", what}}.dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compound-word conditional drums toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  ConfigOverrides ov;
  std::uint64_t seed = 0;
  std::string preset, tau;
  app.add_option("--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  auto* preset_opt = app.add_option("--preset", preset, "model preset")->check(CLI::IsMember({"paper", "desk"}));
  auto* tau_opt = app.add_option("--tau", tau, "sampling temperature: a number or 'uniform'");

  auto* pre = app.add_subcommand("preprocess", "MIDI corpus -> phrase stores, splits and stats");
  auto* voc = app.add_subcommand("vocab", "build the encoder and decoder vocabularies");
  auto* tok = app.add_subcommand("tokenize", "phrase stores -> token datasets");
  auto* trn = app.add_subcommand("train", "train or resume from the last checkpoint");

  auto* gen = app.add_subcommand("generate", "generate drums for seed phrases");
  std::string checkpoint, split = "test";
  int limit = -1;
  gen->add_option("--checkpoint", checkpoint, "checkpoint (default: best)");
  gen->add_option("--split", split, "seed split")->check(CLI::IsMember({"train", "valid", "test"}));
  gen->add_option("--limit", limit, "at most this many seeds");

  auto* evl = app.add_subcommand("evaluate", "density and feature-difference tables");
  std::string generated_dir, truth_dir;
  evl->add_option("--generated", generated_dir, "generated phrase files (default: work/generated)");
  evl->add_option("--truth", truth_dir, "ground-truth phrase files (default: work/truth)");

  auto* met = app.add_subcommand("metrics", "metrics of a phrase store or phrase directory");
  std::string input;
  met->add_option("input", input, "phrase store or directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (*seed_opt) ov.seed = seed;
  if (*preset_opt) ov.preset = preset;
  if (*tau_opt) ov.tau = tau;

  std::string stage = "config";
  try {
    RunConfig cfg = load_run_config(config_path, ov);
    if (limit >= 0) cfg.generate_limit = limit;
    const ordered_json stamp = {{"config_hash", cfg.run_hash()}, {"data_hash", cfg.data_hash()}, {"seed", cfg.seed}};

    if (*pre) {
      stage = "preprocess";
      const auto st = run_preprocess(cfg);
      for (const auto& [file, reason] : st.skipped) std::cerr << "skipped " << file << ": " << reason << '\n';
      emit({{"status", "ok"}, {"stage", stage}, {"stamp", stamp}, {"stats", st.to_json()}});
    } else if (*voc) {
      stage = "vocab";
      const auto v = run_vocab(cfg);
      emit({{"status", "ok"}, {"stage", stage}, {"stamp", stamp},
            {"encoder_sizes", v.encoder.sizes()}, {"decoder_sizes", v.decoder.sizes()},
            {"reference_encoder_sizes", kPaperEncoderVocabSizes}, {"reference_decoder_sizes", kPaperDecoderVocabSizes}});
    } else if (*tok) {
      stage = "tokenize";
      run_tokenize(cfg);
      emit({{"status", "ok"}, {"stage", stage}, {"stamp", stamp}});
    } else if (*trn) {
      stage = "train";
      const auto r = run_train(cfg);
      emit({{"status", "ok"}, {"stage", stage}, {"stamp", stamp}, {"steps", r.steps}, {"epochs", r.epochs},
            {"best_epoch", r.best_epoch}, {"best_valid_loss", r.best_valid}, {"early_stopped", r.early_stopped},
            {"best_checkpoint", r.best_checkpoint}});
    } else if (*gen) {
      stage = "generate";
      const auto r = run_generate(cfg, checkpoint, split);
      emit({{"status", "ok"}, {"stage", stage}, {"stamp", stamp}, {"generated", r.source_ids.size()},
            {"generated_dir", r.generated_dir.string()}, {"truth_dir", r.truth_dir.string()}});
    } else if (*evl) {
      stage = "evaluate";
      const auto g = generated_dir.empty() ? cfg.work_dir / "generated" : std::filesystem::path(generated_dir);
      const auto t = truth_dir.empty() ? cfg.work_dir / "truth" : std::filesystem::path(truth_dir);
      const auto b = run_evaluate(cfg, g, t);
      std::cerr << "Drum density per bar\n" << b.density_table << "\nHigh-level feature differences (x100)\n"
                << b.diff_table;
      for (const auto& id : b.unpaired) std::cerr << "unpaired " << id << '\n';
      emit({{"status", "ok"}, {"stage", stage}, {"stamp", stamp}, {"pairs", b.source_ids.size()},
            {"unpaired", b.unpaired}, {"report", (cfg.work_dir / "reports" / "evaluation.json").string()}});
    } else if (*met) {
      stage = "metrics";
      emit(run_metrics(cfg, input));
    }
  } catch (const PipelineError& e) {
    return fail(e.stage(), e.what());
  } catch (const std::exception& e) {
    return fail(stage, e.what());
  }
  return 0;
}
