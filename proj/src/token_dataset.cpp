/**
 * @file token_dataset.cpp
 * @brief Tokenized dataset encoding.
 */

#include "cpdrums/token_dataset.h"

#include <cstring>
#include <stdexcept>

#include "cpdrums/midi.h"

namespace cpdrums {

namespace {

constexpr char kMagic[4] = {'C', 'P', 'T', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
  void u16(std::uint32_t v) { u(v, 2); }
  void u32(std::uint32_t v) { u(v, 4); }
  void u64(std::uint64_t v) { u(v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::uint64_t u(int bytes) {
    if (pos_ + static_cast<std::size_t>(bytes) > b_.size()) {
      throw std::runtime_error("token dataset truncated at byte " + std::to_string(pos_));
    }
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint32_t u16() { return static_cast<std::uint32_t>(u(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
  std::uint64_t u64() { return u(8); }
  std::string str() {
    const auto n = u32();
    if (pos_ + n > b_.size()) throw std::runtime_error("token dataset string truncated");
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

TokenizedPhrase tokenize_phrase(const Phrase& phrase, const VocabPair& vocab) {
  return {phrase.source_id, phrase.bars, encode_condition(phrase, vocab.encoder),
          encode_drums(phrase, vocab.decoder)};
}

std::vector<std::uint8_t> serialize_token_dataset(const TokenDataset& ds) {
  Writer w;
  for (const char c : kMagic) w.u(static_cast<std::uint8_t>(c), 1);
  w.u32(kVersion);
  w.str(ds.stamp.config_hash);
  w.u64(ds.stamp.seed);
  w.u32(static_cast<std::uint32_t>(ds.records.size()));
  for (const auto& r : ds.records) {
    w.str(r.source_id);
    w.u32(static_cast<std::uint32_t>(r.bars.size()));
    for (const auto& b : r.bars) {
      w.u32(static_cast<std::uint32_t>(b.index));
      w.u16(static_cast<std::uint32_t>(b.ts.numerator));
      w.u16(static_cast<std::uint32_t>(b.ts.denominator));
      w.u64(static_cast<std::uint64_t>(b.tempo_bpm.numerator()));
      w.u64(static_cast<std::uint64_t>(b.tempo_bpm.denominator()));
    }
    w.u32(static_cast<std::uint32_t>(r.condition.size()));
    for (const auto& e : r.condition) {
      for (const int id : e.ids()) w.u32(static_cast<std::uint32_t>(id));
    }
    w.u32(static_cast<std::uint32_t>(r.drums.size()));
    for (const auto& d : r.drums) {
      w.u32(static_cast<std::uint32_t>(d.onset));
      w.u32(static_cast<std::uint32_t>(d.drums));
    }
  }
  return w.take();
}

TokenDataset parse_token_dataset(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw std::runtime_error("not a tokenized dataset (bad magic)");
  }
  Reader r(bytes);
  r.u(4);
  if (r.u32() != kVersion) throw std::runtime_error("unsupported tokenized dataset version");
  TokenDataset ds;
  ds.stamp.config_hash = r.str();
  ds.stamp.seed = r.u64();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    TokenizedPhrase p;
    p.source_id = r.str();
    const auto bars = r.u32();
    for (std::uint32_t b = 0; b < bars; ++b) {
      Bar bar;
      bar.index = static_cast<int>(r.u32());
      bar.ts.numerator = static_cast<int>(r.u16());
      bar.ts.denominator = static_cast<int>(r.u16());
      const auto num = static_cast<std::int64_t>(r.u64());
      const auto den = static_cast<std::int64_t>(r.u64());
      bar.tempo_bpm = Rational(num, den);
      p.bars.push_back(bar);
    }
    const auto enc_len = r.u32();
    for (std::uint32_t k = 0; k < enc_len; ++k) {
      std::array<int, 5> ids{};
      for (auto& id : ids) id = static_cast<int>(r.u32());
      p.condition.push_back(EncoderWord::from_ids(ids));
    }
    const auto dec_len = r.u32();
    for (std::uint32_t k = 0; k < dec_len; ++k) {
      DecoderWord w;
      w.onset = static_cast<int>(r.u32());
      w.drums = static_cast<int>(r.u32());
      p.drums.push_back(w);
    }
    ds.records.push_back(std::move(p));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after tokenized dataset");
  return ds;
}

void write_token_dataset(const std::string& path, const TokenDataset& ds) {
  const auto bytes = serialize_token_dataset(ds);
  write_file_bytes(path, bytes);
}

TokenDataset read_token_dataset(const std::string& path) {
  return parse_token_dataset(read_file_bytes(path));
}

}  // namespace cpdrums
