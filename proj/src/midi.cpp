/**
 * @file midi.cpp
 * @brief Standard MIDI File reader/writer.
 */

#include "cpdrums/midi.h"

#include <algorithm>
#include <array>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>

namespace cpdrums {

namespace {

constexpr int kDrumChannel = 9;
constexpr std::int64_t kMicrosPerMinute = 60'000'000;

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::size_t pos, std::size_t end)
      : bytes_(bytes), pos_(pos), end_(end) {}

  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ >= end_; }

  std::uint8_t u8() {
    if (pos_ >= end_) throw MidiParseError("unexpected end of data", pos_);
    return bytes_[pos_++];
  }

  std::uint32_t be(int n) {
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | u8();
    return v;
  }

  std::uint32_t vlq() {
    const auto start = pos_;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const auto b = u8();
      v = (v << 7) | (b & 0x7F);
      if ((b & 0x80) == 0) return v;
    }
    throw MidiParseError("variable-length quantity longer than 4 bytes", start);
  }

  void skip(std::size_t n) {
    if (n > end_ - pos_) throw MidiParseError("chunk data runs past its end", pos_);
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
  std::size_t end_;
};

struct ChannelState {
  bool used = false;
  std::optional<int> program;
  std::vector<NoteEvent> notes;
  std::map<int, std::deque<Tick>> open;  // pitch -> FIFO of onset ticks
};

void sort_notes(std::vector<NoteEvent>& notes) { std::sort(notes.begin(), notes.end()); }

template <typename Change, typename Default>
void normalize_map(std::vector<Change>& map, const Default& fallback) {
  std::stable_sort(map.begin(), map.end(),
                   [](const Change& a, const Change& b) { return a.tick < b.tick; });
  std::vector<Change> out;
  for (const auto& c : map) {
    if (!out.empty() && out.back().tick == c.tick) {
      out.back() = c;
    } else {
      out.push_back(c);
    }
  }
  if (out.empty() || out.front().tick != 0) out.insert(out.begin(), fallback);
  map = std::move(out);
}

void parse_track_chunk(ByteReader& r, std::size_t chunk_end, Score& score, ParseResult& result,
                       int chunk_index) {
  std::array<ChannelState, 16> channels;
  Tick tick = 0;
  std::uint8_t running = 0;

  while (r.pos() < chunk_end) {
    tick += r.vlq();
    const auto status_pos = r.pos();
    std::uint8_t status = r.u8();
    std::optional<std::uint8_t> first_data;
    if (status < 0x80) {
      if (running == 0) throw MidiParseError("data byte without running status", status_pos);
      first_data = status;
      status = running;
    }

    if (status == 0xFF) {
      running = 0;
      const auto type = r.u8();
      const auto len = r.vlq();
      const auto data_pos = r.pos();
      if (type == 0x2F) {
        r.skip(len);
        break;
      }
      if (type == 0x51 && len == 3) {
        const auto uspq = r.be(3);
        if (uspq == 0) throw MidiParseError("zero tempo", data_pos);
        score.tempo_map.push_back({tick, Rational(kMicrosPerMinute, uspq)});
      } else if (type == 0x58 && len >= 2) {
        const int num = r.u8();
        const int pow = r.u8();
        if (num == 0 || pow > 6) throw MidiParseError("invalid time signature", data_pos);
        score.ts_map.push_back({tick, TimeSignature{num, 1 << pow}});
        r.skip(len - 2);
      } else {
        r.skip(len);
      }
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      running = 0;
      r.skip(r.vlq());
      continue;
    }
    if (status >= 0xF0) throw MidiParseError("unsupported system message", status_pos);

    running = status;
    const int kind = status & 0xF0;
    const int ch = status & 0x0F;
    auto data = [&]() -> int {
      if (first_data) {
        const auto v = *first_data;
        first_data.reset();
        return v;
      }
      return r.u8();
    };
    auto& state = channels[ch];

    switch (kind) {
      case 0x80:
      case 0x90: {
        const int pitch = data();
        const int velocity = data();
        if (pitch > 127) throw MidiParseError("pitch out of range", status_pos);
        state.used = true;
        if (kind == 0x90 && velocity > 0) {
          state.open[pitch].push_back(tick);
        } else {
          auto it = state.open.find(pitch);
          if (it != state.open.end() && !it->second.empty()) {
            const Tick on = it->second.front();
            it->second.pop_front();
            state.notes.push_back({on, tick - on, pitch});
          }
        }
        break;
      }
      case 0xA0:
      case 0xB0:
      case 0xE0:
        data();
        data();
        break;
      case 0xC0: {
        const int program = data();
        state.used = true;
        if (!state.program) state.program = program;
        break;
      }
      case 0xD0:
        data();
        break;
      default:
        break;
    }
  }

  for (int ch = 0; ch < 16; ++ch) {
    auto& state = channels[ch];
    for (auto& [pitch, onsets] : state.open) {
      for (const Tick on : onsets) {
        result.warnings.push_back("track " + std::to_string(chunk_index) + " channel " +
                                  std::to_string(ch + 1) + ": dangling note-on pitch " +
                                  std::to_string(pitch) + " at tick " + std::to_string(on) +
                                  " closed at track end");
        state.notes.push_back({on, tick - on, pitch});
      }
    }
    if (!state.used) continue;
    Track t;
    t.channel = ch;
    t.program = state.program.value_or(0);
    t.role_hint = role_from_channel_program(ch, t.program);
    t.notes = std::move(state.notes);
    sort_notes(t.notes);
    score.tracks.push_back(std::move(t));
  }
}

void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int n) {
  for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>(0x80 | (v & 0x7F));
  while (n > 0) out.push_back(buf[--n]);
}

struct RawEvent {
  Tick tick;
  int order;  // tie-break within a tick
  std::vector<std::uint8_t> bytes;
};

std::vector<std::uint8_t> encode_chunk(std::vector<RawEvent> events) {
  std::stable_sort(events.begin(), events.end(), [](const RawEvent& a, const RawEvent& b) {
    return a.tick != b.tick ? a.tick < b.tick : a.order < b.order;
  });
  std::vector<std::uint8_t> body;
  Tick last = 0;
  for (const auto& e : events) {
    const Tick delta = e.tick - last;
    if (delta < 0 || delta > 0x0FFFFFFF) throw MidiWriteError("event delta out of range");
    put_vlq(body, static_cast<std::uint32_t>(delta));
    body.insert(body.end(), e.bytes.begin(), e.bytes.end());
    last = e.tick;
  }
  put_vlq(body, 0);
  body.insert(body.end(), {0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> chunk{'M', 'T', 'r', 'k'};
  put_be(chunk, static_cast<std::uint32_t>(body.size()), 4);
  chunk.insert(chunk.end(), body.begin(), body.end());
  return chunk;
}

int log2_exact(int v) {
  int p = 0;
  while ((1 << p) < v) ++p;
  return (1 << p) == v ? p : -1;
}

}  // namespace

const char* to_string(TrackRole role) {
  switch (role) {
    case TrackRole::Guitar: return "guitar";
    case TrackRole::Bass: return "bass";
    case TrackRole::Drums: return "drums";
    case TrackRole::Other: return "other";
  }
  return "other";
}

TrackRole role_from_channel_program(int channel, int program) {
  if (channel == kDrumChannel) return TrackRole::Drums;
  if (program >= 24 && program <= 31) return TrackRole::Guitar;
  if (program >= 32 && program <= 39) return TrackRole::Bass;
  return TrackRole::Other;
}

std::string to_string(const TimeSignature& ts) {
  return std::to_string(ts.numerator) + "/" + std::to_string(ts.denominator);
}

Rational Score::tempo_at(Tick tick) const {
  Rational bpm(120);
  for (const auto& t : tempo_map) {
    if (t.tick > tick) break;
    bpm = t.bpm;
  }
  return bpm;
}

TimeSignature Score::ts_at(Tick tick) const {
  TimeSignature ts;
  for (const auto& t : ts_map) {
    if (t.tick > tick) break;
    ts = t.ts;
  }
  return ts;
}

MidiParseError::MidiParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}

ParseResult parse_midi(std::span<const std::uint8_t> bytes) {
  ParseResult result;
  Score& score = result.score;
  ByteReader header(bytes, 0, bytes.size());
  if (bytes.size() < 14 || !std::equal(bytes.begin(), bytes.begin() + 4, "MThd")) {
    throw MidiParseError("missing MThd header", 0);
  }
  header.skip(4);
  const auto header_len = header.be(4);
  if (header_len < 6) throw MidiParseError("header chunk too short", 4);
  const auto format = header.be(2);
  const auto ntracks = header.be(2);
  const auto division = header.be(2);
  if (format > 1) throw MidiParseError("unsupported MIDI format " + std::to_string(format), 8);
  if (division & 0x8000) throw MidiParseError("SMPTE time division is not supported", 12);
  if (division == 0) throw MidiParseError("zero ticks per quarter", 12);
  score.ticks_per_quarter = static_cast<int>(division);
  header.skip(header_len - 6);

  std::size_t pos = header.pos();
  std::uint32_t seen = 0;
  int chunk_index = 0;
  while (seen < ntracks && pos < bytes.size()) {
    ByteReader chunk_head(bytes, pos, bytes.size());
    const auto id_pos = chunk_head.pos();
    const std::uint8_t id[4] = {chunk_head.u8(), chunk_head.u8(), chunk_head.u8(), chunk_head.u8()};
    const auto len = chunk_head.be(4);
    const auto data_start = chunk_head.pos();
    if (len > bytes.size() - data_start) {
      throw MidiParseError("chunk length exceeds file size", id_pos + 4);
    }
    const auto data_end = data_start + len;
    if (std::equal(id, id + 4, "MTrk")) {
      ByteReader r(bytes, data_start, data_end);
      parse_track_chunk(r, data_end, score, result, chunk_index++);
      ++seen;
    }
    pos = data_end;
  }
  if (seen < ntracks) {
    result.warnings.push_back("header declares " + std::to_string(ntracks) + " tracks, found " +
                              std::to_string(seen));
  }
  normalize(score);
  return result;
}

std::vector<std::uint8_t> write_midi(const Score& score) {
  if (score.ticks_per_quarter <= 0 || score.ticks_per_quarter > 0x7FFF) {
    throw MidiWriteError("ticks_per_quarter out of range");
  }
  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
  put_be(out, 6, 4);
  put_be(out, 1, 2);
  put_be(out, static_cast<std::uint32_t>(score.tracks.size() + 1), 2);
  put_be(out, static_cast<std::uint32_t>(score.ticks_per_quarter), 2);

  std::vector<RawEvent> conductor;
  for (const auto& c : score.ts_map) {
    const int pow = log2_exact(c.ts.denominator);
    if (c.ts.numerator < 1 || c.ts.numerator > 255 || pow < 0 || pow > 6) {
      throw MidiWriteError("time signature " + to_string(c.ts) + " is not representable");
    }
    conductor.push_back({c.tick, 0,
                         {0xFF, 0x58, 0x04, static_cast<std::uint8_t>(c.ts.numerator),
                          static_cast<std::uint8_t>(pow), 24, 8}});
  }
  for (const auto& t : score.tempo_map) {
    if (t.bpm <= 0) throw MidiWriteError("non-positive tempo");
    const auto uspq = round_half_down(Rational(kMicrosPerMinute) / t.bpm);
    if (uspq < 1 || uspq > 0xFFFFFF) {
      throw MidiWriteError("tempo " + to_string(t.bpm) + " bpm is not representable");
    }
    std::vector<std::uint8_t> ev{0xFF, 0x51, 0x03};
    put_be(ev, static_cast<std::uint32_t>(uspq), 3);
    conductor.push_back({t.tick, 1, std::move(ev)});
  }
  auto chunk = encode_chunk(std::move(conductor));
  out.insert(out.end(), chunk.begin(), chunk.end());

  for (const auto& track : score.tracks) {
    if (track.channel < 0 || track.channel > 15) throw MidiWriteError("channel out of range");
    if (track.program < 0 || track.program > 127) throw MidiWriteError("program out of range");
    const auto ch = static_cast<std::uint8_t>(track.channel);
    std::vector<RawEvent> events;
    events.push_back({0, -1, {static_cast<std::uint8_t>(0xC0 | ch),
                              static_cast<std::uint8_t>(track.program)}});
    for (const auto& n : track.notes) {
      if (n.pitch < 0 || n.pitch > 127) throw MidiWriteError("pitch out of range");
      if (n.onset_tick < 0 || n.duration_ticks < 0) throw MidiWriteError("negative note time");
      const auto p = static_cast<std::uint8_t>(n.pitch);
      events.push_back({n.onset_tick, 1, {static_cast<std::uint8_t>(0x90 | ch), p, 100}});
      // Releases of earlier notes precede onsets at the same tick; zero-length notes
      // release after their own onset.
      events.push_back({n.onset_tick + n.duration_ticks, n.duration_ticks == 0 ? 2 : 0,
                        {static_cast<std::uint8_t>(0x80 | ch), p, 64}});
    }
    chunk = encode_chunk(std::move(events));
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Score quantize(const Score& score, Tick grid) {
  if (grid <= 0) throw std::invalid_argument("quantize: grid must be positive");
  auto snap = [grid](Tick t) { return round_half_down(Rational(t, grid)) * grid; };
  Score out = score;
  for (auto& track : out.tracks) {
    for (auto& n : track.notes) {
      const Tick on = snap(n.onset_tick);
      Tick end = snap(n.onset_tick + n.duration_ticks);
      if (track.role_hint != TrackRole::Drums && n.duration_ticks > 0 && end <= on) end = on + grid;
      n.onset_tick = on;
      n.duration_ticks = std::max<Tick>(0, end - on);
    }
    sort_notes(track.notes);
  }
  return out;
}

void normalize(Score& score) {
  for (auto& t : score.tracks) sort_notes(t.notes);
  normalize_map(score.tempo_map, TempoChange{0, Rational(120)});
  normalize_map(score.ts_map, TimeSignatureChange{0, TimeSignature{4, 4}});
}

}  // namespace cpdrums
