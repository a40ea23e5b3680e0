#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "cpdrums/codec.h"
#include "cpdrums/pipeline.h"
#include "cpdrums/train.h"
#include "test_support.h"

using namespace cpdrums;
namespace fs = std::filesystem;

namespace {

const fs::path kToyCorpus = fs::path(CPDRUMS_SOURCE_DIR) / "data" / "toy_corpus";

nlohmann::json small_config(const fs::path& work, const fs::path& corpus = kToyCorpus) {
  return {{"corpus_dir", corpus.string()},
          {"work_dir", work.string()},
          {"seed", 3},
          {"model",
           {{"preset", "desk"},
            {"enc_emb_sizes", {4, 2, 2, 4, 4}},
            {"dec_emb_sizes", {6, 6}},
            {"model_dim", 16},
            {"bilstm_layers", 1},
            {"bilstm_hidden", 16},
            {"dec_layers", 1},
            {"heads", 2},
            {"ffn_dim", 32}}},
          {"train", {{"max_epochs", 20}, {"max_steps", 0}}},
          {"generate", {{"tau", 1.0}, {"limit", 1}}}};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

Phrase one_bar(const std::string& id, const std::vector<int>& kick_steps) {
  Phrase p;
  p.source_id = id;
  p.bars.push_back({0, {4, 4}, Rational(120)});
  for (int s : kick_steps) p.drums.push_back({0, Rational(s, 4), DrumComponent::Kick});
  return p;
}

}  // namespace

TEST_CASE("empty corpus directory") {
  TempDir tmp("cpdrums_pipe_empty");
  fs::create_directories(tmp.path / "corpus");
  const auto cfg = run_config_from_json(small_config(tmp.path / "work", tmp.path / "corpus"), tmp.path);
  try {
    run_preprocess(cfg);
    FAIL("expected an error");
  } catch (const PipelineError& e) {
    CHECK(std::string(e.what()).find("no input files") != std::string::npos);
    CHECK(e.stage() == "preprocess");
  }
}

TEST_CASE("config loading and overrides") {
  TempDir tmp("cpdrums_pipe_cfg");
  auto j = small_config(tmp.path / "work");
  auto cfg = run_config_from_json(j, tmp.path);
  CHECK(cfg.seed == 3);
  CHECK(cfg.model.model_dim == 16);
  CHECK_FALSE(cfg.temperature.uniform);
  CHECK(cfg.temperature.tau == 1.0);

  ConfigOverrides ov;
  ov.seed = 11;
  ov.tau = "uniform";
  ov.preset = "paper";
  const auto o = run_config_from_json(j, tmp.path, ov);
  CHECK(o.seed == 11);
  CHECK(o.temperature.uniform);
  CHECK(o.model.preset == "paper");
  CHECK(o.model.dropout == doctest::Approx(0.3));
  CHECK(o.model.model_dim == 16);  // explicit overrides still apply
  CHECK(o.run_hash() != cfg.run_hash());
  CHECK(o.data_hash() == cfg.data_hash());

  CHECK(parse_temperature("0.9").tau == doctest::Approx(0.9));
  CHECK_THROWS_AS(parse_temperature("0"), PipelineError);
  CHECK_THROWS_AS(parse_temperature("-1"), PipelineError);
  CHECK_THROWS_AS(parse_temperature("warm"), PipelineError);
  CHECK_THROWS_AS(parse_temperature("1.0x"), PipelineError);

  j["corpus_dir"] = (tmp.path / "absent").string();
  CHECK_THROWS_AS(run_config_from_json(j, tmp.path), PipelineError);
  auto bad = small_config(tmp.path / "work");
  bad.erase("work_dir");
  CHECK_THROWS_AS(run_config_from_json(bad, tmp.path), PipelineError);
}

TEST_CASE("preprocess is deterministic and logs the file without bass") {
  TempDir tmp("cpdrums_pipe_pre");
  const auto a = run_config_from_json(small_config(tmp.path / "a"), tmp.path);
  const auto b = run_config_from_json(small_config(tmp.path / "b"), tmp.path);
  const auto sa = run_preprocess(a);
  const auto sb = run_preprocess(b);
  CHECK(sa.files == 20);
  CHECK(sa.used_files == 19);
  REQUIRE(sa.skipped.count("toy_19.mid") == 1);
  CHECK(sa.skipped.at("toy_19.mid").find("bass") != std::string::npos);
  CHECK(read_text_file((a.work_dir / "preprocess.log").string()).find("skip toy_19.mid") != std::string::npos);
  CHECK(sa.phrases_kept == sb.phrases_kept);
  CHECK(sa.dropped_by_pitch.at(56) > 0);
  for (const char* split : {"train", "valid", "test"}) {
    const auto file = fs::path("phrases") / (std::string(split) + ".jsonl");
    CHECK(read_text_file((a.work_dir / file).string()) == read_text_file((b.work_dir / file).string()));
  }
  CHECK(sa.split_counts[0] + sa.split_counts[1] + sa.split_counts[2] == static_cast<std::size_t>(sa.phrases_kept));
  const auto store = read_phrase_store((a.work_dir / "phrases" / "train.jsonl").string());
  CHECK(store.stamp.config_hash == a.data_hash());
  CHECK(store.stamp.seed == a.seed);
}

TEST_CASE("stages reject artifacts from another config") {
  TempDir tmp("cpdrums_pipe_hash");
  const auto j = small_config(tmp.path / "work");
  const auto cfg = run_config_from_json(j, tmp.path);
  CHECK_THROWS_AS(run_vocab(cfg), PipelineError);  // nothing preprocessed yet
  run_preprocess(cfg);
  run_vocab(cfg);
  run_tokenize(cfg);

  auto other_codec = j;
  other_codec["codec"] = {{"tempo_bin_width", 5}};
  CHECK_THROWS_AS(run_tokenize(run_config_from_json(other_codec, tmp.path)), PipelineError);
  ConfigOverrides seed;
  seed.seed = 99;
  CHECK_THROWS_AS(run_train(run_config_from_json(j, tmp.path, seed)), PipelineError);

  // a vocabulary stamped by another config no longer matches the token datasets
  auto v = parse_vocab_pair(read_text_file((cfg.work_dir / "vocab.json").string()));
  const auto saved = serialize_vocab_pair(v);
  v.encoder.stamp.config_hash = "0000000000000000";
  v.decoder.stamp.config_hash = "0000000000000000";
  write_text_file((cfg.work_dir / "vocab.json").string(), serialize_vocab_pair(v));
  try {
    run_train(cfg);
    FAIL("expected a hash mismatch");
  } catch (const PipelineError& e) {
    CHECK(std::string(e.what()).find("config hash") != std::string::npos);
  }
  write_text_file((cfg.work_dir / "vocab.json").string(), saved);
}

TEST_CASE("generation output") {
  TempDir tmp("cpdrums_pipe_gen");
  auto j = small_config(tmp.path / "work");
  const auto cfg = run_config_from_json(j, tmp.path);
  run_preprocess(cfg);
  const auto vocab = run_vocab(cfg);
  run_tokenize(cfg);
  const auto tr = run_train(cfg);
  REQUIRE(fs::exists(tr.best_checkpoint));

  const auto g = run_generate(cfg);
  REQUIRE(g.source_ids.size() == 1);
  const auto stem = file_stem(g.source_ids[0]);
  const auto midi = g.generated_dir / (stem + ".mid");
  REQUIRE(fs::exists(midi));
  const auto score = parse_midi(read_file_bytes(midi.string())).score;
  REQUIRE(score.tracks.size() == 3);
  CHECK(score.tracks[0].role_hint == TrackRole::Guitar);
  CHECK(score.tracks[1].role_hint == TrackRole::Bass);
  CHECK(score.tracks[2].role_hint == TrackRole::Drums);

  const auto tokens = nlohmann::json::parse(read_text_file((g.generated_dir / (stem + ".tokens.json")).string()));
  std::vector<DecoderWord> emitted;
  for (const auto& w : tokens.at("words")) emitted.push_back({w.at(0).get<int>(), w.at(1).get<int>()});
  CHECK(tokens.at("stamp").at("seed").get<std::uint64_t>() == cfg.seed);

  const auto seed_phrase = read_phrase_file(g.truth_dir / (stem + ".phrase.json"));
  const auto generated = read_phrase_file(g.generated_dir / (stem + ".phrase.json"));
  const auto decoded = decode_drums(emitted, vocab.decoder, seed_phrase.bars);
  CHECK(decoded.bars == static_cast<int>(seed_phrase.bars.size()));
  CHECK(decoded.saw_eos);
  CHECK(generated.drums == decoded.events);

  // the written drum track re-tokenizes to the emitted stream
  CorpusFilterConfig loose;
  loose.min_phrase_bars = 1;
  const auto reparsed = phrases_from_score(score, "re", loose, cfg.codec.grid);
  REQUIRE(reparsed.size() == 1);
  Phrase re = generated;
  re.drums = reparsed[0].drums;
  CHECK(encode_drums(re, vocab.decoder) == emitted);
  CHECK(reparsed[0].guitar == seed_phrase.guitar);
  CHECK(reparsed[0].bass == seed_phrase.bass);

  // a checkpoint with other vocabulary sizes is rejected
  auto ckpt = nn::load_checkpoint(tr.best_checkpoint);
  auto mc = ckpt.config;
  mc.dec_vocab[0] += 1;
  nn::Model<float> wrong(mc, 1);
  nn::AdamW opt(wrong, mc.lr, mc.weight_decay);
  const auto wrong_path = (tmp.path / "wrong.ckpt").string();
  nn::save_checkpoint(wrong_path, wrong, opt, ckpt.state, ckpt.stamp);
  CHECK_THROWS_AS(run_generate(cfg, wrong_path), PipelineError);
  CHECK_THROWS_AS(run_generate(cfg, (tmp.path / "absent.ckpt").string()), PipelineError);
}

TEST_CASE("evaluation") {
  TempDir tmp("cpdrums_pipe_eval");
  const auto cfg = run_config_from_json(small_config(tmp.path / "work"), tmp.path);
  const ArtifactStamp stamp{"x", 1};
  const auto gen = tmp.path / "gen";
  const auto truth = tmp.path / "truth";
  // pair a: one kick moved off the 8th grid; pair b: identical; c: generated only
  write_phrase_file(truth / "a.phrase.json", one_bar("a", {0, 4, 8, 12}), stamp);
  write_phrase_file(gen / "a.phrase.json", one_bar("a", {0, 4, 8, 13}), stamp);
  write_phrase_file(truth / "b.phrase.json", one_bar("b", {0, 2, 4, 6, 8}), stamp);
  write_phrase_file(gen / "b.phrase.json", one_bar("b", {0, 2, 4, 6, 8}), stamp);
  write_phrase_file(gen / "c.phrase.json", one_bar("c", {0}), stamp);

  const auto b = run_evaluate(cfg, gen, truth);
  CHECK(b.source_ids == std::vector<std::string>{"a", "b"});
  CHECK(b.unpaired == std::vector<std::string>{"c"});
  // symmetry gap 1 - 1/2, pattern rate gap 1 - 3/4 on pair a; nothing on pair b.
  // Each feature is divided by its largest gap: values 1 and 0.
  for (std::size_t f : {1u, 4u}) {
    CAPTURE(kFeatureNames[f]);
    CHECK(b.diff.features[f].mean == doctest::Approx(0.5));
    CHECK(b.diff.features[f].stddev == doctest::Approx(0.5));
  }
  CHECK(b.diff.norm[1] == doctest::Approx(0.5));
  CHECK(b.diff.norm[4] == doctest::Approx(0.25));
  CHECK(b.diff.features[3].mean == 0.0);  // single bars: groove consistency 1 on both sides
  for (const auto* name : kFeatureNames) CHECK(b.diff_table.find(name) != std::string::npos);
  CHECK(b.diff_table.find("50.00 (50.00)") != std::string::npos);
  CHECK(b.density_table.find("Training Dataset") != std::string::npos);

  const auto self = run_evaluate(cfg, truth, truth);
  CHECK(self.unpaired.empty());
  for (const auto& f : self.diff.features) {
    CHECK(f.mean == 0.0);
    CHECK(f.stddev == 0.0);
  }
  const auto report = nlohmann::json::parse(read_text_file((cfg.work_dir / "reports" / "evaluation.json").string()));
  CHECK(report.at("stamp").at("seed").get<std::uint64_t>() == cfg.seed);
  CHECK(report.at("differences").size() == 5);

  CHECK_THROWS_AS(run_evaluate(cfg, gen, tmp.path / "absent"), PipelineError);
  fs::create_directories(tmp.path / "empty");
  CHECK_THROWS_AS(run_evaluate(cfg, gen, tmp.path / "empty"), PipelineError);

  const auto m = run_metrics(cfg, truth);
  CHECK(m.at("phrases").size() == 2);
  CHECK(m.at("phrases")[0].at("metrics").at("Pattern Rate").at("exact") == "1");
}

TEST_CASE("rendered phrases preprocess back to themselves") {
  std::mt19937_64 rng(5);
  CorpusFilterConfig loose;
  loose.min_phrase_bars = 1;
  loose.max_bpm = Rational(500);  // 220 bpm is not exact in microseconds per quarter
  for (int trial = 0; trial < 30; ++trial) {
    auto p = testing::random_phrase(rng);
    const auto score = phrase_to_score(p);
    REQUIRE(score.tracks.size() == 3);
    const auto back = phrases_from_score(parse_midi(write_midi(score)).score, "r", loose, 4);
    if (p.drums.empty() && p.guitar.empty() && p.bass.empty()) continue;
    REQUIRE(back.size() == 1);
    CAPTURE(trial);
    CHECK(back[0].drums == p.drums);
    CHECK(back[0].guitar == p.guitar);
    CHECK(back[0].bass == p.bass);
    for (std::size_t b = 0; b < back[0].bars.size(); ++b) CHECK(back[0].bars[b].ts == p.bars[b].ts);
  }
}

TEST_CASE("file stems") {
  CHECK(file_stem("toy_01#0") == "toy_01_0");
  CHECK(file_stem("a/b c.d") == "a_b_c.d");
}
