#include <doctest.h>

#include <random>

#include "cpdrums/codec.h"
#include "cpdrums/token_dataset.h"
#include "test_support.h"

using namespace cpdrums;

namespace {

Phrase one_bar(TimeSignature ts = {4, 4}, int bpm = 120) {
  Phrase p;
  p.source_id = "t#0";
  p.bars = {{0, ts, Rational(bpm)}};
  return p;
}

std::vector<Phrase> mixed_corpus(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  std::vector<Phrase> out;
  for (int i = 0; i < n; ++i) out.push_back(testing::random_phrase(rng));
  return out;
}

}  // namespace

TEST_CASE("an empty 4/4 bar encodes to three high-level words") {
  const auto p = one_bar();
  const auto v = build_vocab({p}, {});
  const auto& enc = v.encoder;
  const auto words = encode_condition(p, enc);
  REQUIRE(words.size() == 3);
  const auto& group = enc.dim(enc_dim::kGroup);
  const auto& type = enc.dim(enc_dim::kType);
  const auto& value = enc.dim(enc_dim::kValue);
  for (const auto& w : words) CHECK(w.group == group.id(tok::kHighLevel));
  CHECK(words[0].type == type.id(tok::kBar));
  CHECK(words[1].type == type.id(tok::kTimeSig));
  CHECK(words[1].value == value.id("ts:4/4"));
  CHECK(words[2].type == type.id(tok::kTempo));
  CHECK(words[2].value == value.id("bpm:120"));
  CHECK(words[0].onset == enc.dim(enc_dim::kOnset).id(tok::kBarOnset));
  CHECK(words[1].duration == enc.dim(enc_dim::kDuration).id(tok::kBar));
}

TEST_CASE("guitar chord at onset 0 for two quarters") {
  auto p = one_bar();
  p.guitar.push_back({0, Rational(0), Rational(2), EventKind::Chord});
  const auto enc = build_vocab({p}, {}).encoder;
  const auto words = encode_condition(p, enc);
  REQUIRE(words.size() == 4);
  const auto& w = words[3];
  CHECK(enc.dim(enc_dim::kOnset).token(w.onset) == "0");
  CHECK(enc.dim(enc_dim::kGroup).token(w.group) == tok::kGuitar);
  CHECK(enc.dim(enc_dim::kType).token(w.type) == tok::kChord);
  CHECK(enc.dim(enc_dim::kDuration).token(w.duration) == "2");
  CHECK(enc.dim(enc_dim::kValue).token(w.value) == tok::kNaN);
}

TEST_CASE("high-level words on change only") {
  Phrase p = one_bar();
  p.bars.push_back({1, {4, 4}, Rational(120)});
  p.bars.push_back({2, {3, 4}, Rational(120)});
  CodecOptions every;
  CodecOptions on_change;
  on_change.emit_highlevel_every_bar = false;
  CHECK(encode_condition(p, build_vocab({p}, every).encoder).size() == 9);
  const auto enc = build_vocab({p}, on_change).encoder;
  const auto words = encode_condition(p, enc);
  CHECK(words.size() == 6);  // 3 + Bar + Bar + TimeSig
  CHECK(check_encoder_grammar(words, enc).empty());
}

TEST_CASE("drum stream examples") {
  const auto specials_of = [](const Vocabulary& dec) { return DecoderSpecials(dec); };
  SUBCASE("kick and snare on beat one") {
    auto p = one_bar();
    p.drums = {{0, Rational(0), DrumComponent::Kick}, {0, Rational(0), DrumComponent::Snare}};
    const auto dec = build_vocab({p}, {}).decoder;
    const DecoderSpecials s = specials_of(dec);
    const auto words = encode_drums(p, dec);
    const int zero = dec.dim(dec_dim::kOnset).id("0");
    const auto& drums = dec.dim(dec_dim::kDrums);
    const std::vector<DecoderWord> expected = {
        s.bos(), s.bar(), {zero, drums.id("Kick")}, {zero, drums.id("Snare")}, s.eos()};
    CHECK(words == expected);
  }
  SUBCASE("empty bar") {
    const auto p = one_bar();
    const auto dec = build_vocab({p}, {}).decoder;
    const DecoderSpecials s(dec);
    CHECK(encode_drums(p, dec) == std::vector<DecoderWord>{s.bos(), s.bar(), s.eos()});
    const auto r = decode_drums({s.bos(), s.bar(), s.eos()}, dec, p.bars);
    CHECK(r.events.empty());
    CHECK(r.bars == 1);
    CHECK(r.saw_eos);
  }
  SUBCASE("four on the floor") {
    auto p = one_bar();
    for (int q = 0; q < 4; ++q) p.drums.push_back({0, Rational(q), DrumComponent::Kick});
    const auto dec = build_vocab({p}, {}).decoder;
    const auto words = encode_drums(p, dec);
    REQUIRE(words.size() == 7);
    for (int q = 0; q < 4; ++q) {
      CHECK(dec.dim(dec_dim::kOnset).token(words[2 + q].onset) == std::to_string(q));
    }
  }
}

TEST_CASE("toy 4/4 corpus yields 19 decoder onsets and 16 drum tokens") {
  std::mt19937_64 rng(1);
  std::vector<Phrase> corpus;
  for (int i = 0; i < 10; ++i) {
    auto p = testing::random_phrase(rng);
    for (auto& b : p.bars) b.ts = {4, 4};
    p.drums.erase(std::remove_if(p.drums.begin(), p.drums.end(),
                                 [&](const DrumEvent& d) { return d.onset >= 4; }),
                  p.drums.end());
    for (auto* ev : {&p.guitar, &p.bass}) {
      ev->erase(std::remove_if(ev->begin(), ev->end(), [](const AccompEvent& e) { return e.onset >= 4; }),
                ev->end());
    }
    corpus.push_back(p);
  }
  const auto v = build_vocab(corpus, {});
  CHECK(v.decoder.dim(dec_dim::kOnset).size() == 19);
  CHECK(v.decoder.dim(dec_dim::kDrums).size() == kNumDrumComponents + 3);
  CHECK(v.encoder.dim(enc_dim::kGroup).size() == 4);
  CHECK(v.encoder.dim(enc_dim::kType).size() == 6);
  for (const auto& d : v.encoder.dims) CHECK(d.token(kPadId) == tok::kPad);
  for (const auto& d : v.decoder.dims) CHECK(d.token(kPadId) == tok::kPad);
}

TEST_CASE("vocabulary build is deterministic and serialization round-trips byte-exactly") {
  const auto corpus = mixed_corpus(3, 40);
  const ArtifactStamp stamp{"abc", 9};
  const auto a = serialize_vocab_pair(build_vocab(corpus, {}, stamp));
  const auto b = serialize_vocab_pair(build_vocab(corpus, {}, stamp));
  CHECK(a == b);
  const auto parsed = parse_vocab_pair(a);
  CHECK(serialize_vocab_pair(parsed) == a);
  CHECK(parsed.encoder == build_vocab(corpus, {}, stamp).encoder);
  for (const auto& d : parsed.decoder.dims) {
    for (int i = 0; i < d.size(); ++i) CHECK(d.id(d.token(i)) == i);
  }
  CHECK_THROWS(build_vocab({}, {}));
}

TEST_CASE("out-of-vocabulary tokens name the dimension") {
  auto p = one_bar();
  const auto v = build_vocab({p}, {});
  auto q = one_bar({4, 4}, 180);
  try {
    encode_condition(q, v.encoder);
    FAIL("expected an error");
  } catch (const VocabularyError& e) {
    CHECK(std::string(e.what()).find("value") != std::string::npos);
    CHECK(std::string(e.what()).find("bpm:180") != std::string::npos);
  }
  auto r = one_bar();
  r.drums.push_back({0, Rational(1, 3), DrumComponent::Kick});  // off the 16th grid
  CHECK_THROWS_AS(encode_drums(r, v.decoder), VocabularyError);
}

TEST_CASE("decode errors and clamping") {
  Phrase p = one_bar({4, 4});
  p.bars.push_back({1, {3, 4}, Rational(120)});
  const auto dec = build_vocab({p}, {}).decoder;
  const DecoderSpecials s(dec);
  const auto& onset = dec.dim(dec_dim::kOnset);
  const int kick = dec.dim(dec_dim::kDrums).id("Kick");

  CHECK_THROWS(decode_drums({s.bar(), s.eos()}, dec, p.bars));                                // no BOS
  CHECK_THROWS(decode_drums({s.bos(), {onset.id("1"), kick}, s.eos()}, dec, p.bars));         // hit first
  CHECK_THROWS(decode_drums({s.bos(), s.bar(), s.bar(), s.bar(), s.eos()}, dec, p.bars));     // too many bars
  CHECK_THROWS(decode_drums({s.bos(), s.bar(), {onset.size() + 3, kick}, s.eos()}, dec, p.bars));  // unknown id

  const auto r = decode_drums({s.bos(), s.bar(), s.bar(), {onset.id("15/4"), kick}, s.eos()}, dec, p.bars);
  REQUIRE(r.events.size() == 1);
  CHECK(r.clamped == 1);
  CHECK(r.events[0].bar == 1);
  CHECK(r.events[0].onset == Rational(11, 4));  // last 16th step of a 3/4 bar
}

TEST_CASE("codec round-trip and grammar over random phrases") {
  const auto corpus = mixed_corpus(17, 200);
  const auto v = build_vocab(corpus, {});
  for (const auto& p : corpus) {
    const auto dwords = encode_drums(p, v.decoder);
    CHECK(check_decoder_grammar(dwords, v.decoder, static_cast<int>(p.bars.size())).empty());
    const auto r = decode_drums(dwords, v.decoder, p.bars);
    CHECK(r.events == p.drums);
    CHECK(r.clamped == 0);
    const auto ewords = encode_condition(p, v.encoder);
    CHECK(check_encoder_grammar(ewords, v.encoder).empty());
    CHECK(ewords.size() <= 3 * p.bars.size() + p.guitar.size() + p.bass.size());
  }
}

TEST_CASE("grammar checks catch violations") {
  auto p = one_bar();
  p.guitar.push_back({0, Rational(1), Rational(1), EventKind::Note});
  p.bass.push_back({0, Rational(2), Rational(1), EventKind::Note});
  const auto v = build_vocab({p}, {});
  auto words = encode_condition(p, v.encoder);
  REQUIRE(check_encoder_grammar(words, v.encoder).empty());

  auto swapped = words;
  std::swap(swapped[3], swapped[4]);  // onsets decrease
  CHECK_FALSE(check_encoder_grammar(swapped, v.encoder).empty());
  auto not_nan = words;
  not_nan[3].value = v.encoder.dim(enc_dim::kValue).id("bpm:120");
  CHECK_FALSE(check_encoder_grammar(not_nan, v.encoder).empty());
  auto headless = std::vector<EncoderWord>(words.begin() + 1, words.end());
  CHECK_FALSE(check_encoder_grammar(headless, v.encoder).empty());

  const DecoderSpecials s(v.decoder);
  CHECK_FALSE(check_decoder_grammar({s.bos(), s.bar(), s.eos()}, v.decoder, 2).empty());
  CHECK_FALSE(check_decoder_grammar({s.bar(), s.eos()}, v.decoder, 1).empty());
}

TEST_CASE("tokenized dataset round-trips") {
  const auto corpus = mixed_corpus(23, 30);
  const ArtifactStamp stamp{"feed", 4};
  const auto v = build_vocab(corpus, {}, stamp);
  TokenDataset ds;
  ds.stamp = stamp;
  for (const auto& p : corpus) ds.records.push_back(tokenize_phrase(p, v));
  const auto bytes = serialize_token_dataset(ds);
  CHECK(parse_token_dataset(bytes) == ds);
  auto bad = bytes;
  bad.pop_back();
  CHECK_THROWS(parse_token_dataset(bad));
}
