#include "miditex/midi_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>

namespace miditex {

int velocity_bin(int velocity) { return velocity / 16 + 1; }
int velocity_bin_representative(int bin) { return 16 * bin - 8; }

namespace {

struct Cursor {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;

    bool eof() const { return pos >= bytes.size(); }
    size_t remaining() const { return bytes.size() - pos; }

    uint8_t u8() {
        if (eof()) fail(ErrorKind::Format, "unexpected end of MIDI data at byte " + std::to_string(pos));
        return bytes[pos++];
    }
    uint8_t peek() const {
        if (eof()) fail(ErrorKind::Format, "unexpected end of MIDI data at byte " + std::to_string(pos));
        return bytes[pos];
    }
    uint16_t u16() { return static_cast<uint16_t>(u8() << 8 | u8()); }
    uint32_t u32() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = v << 8 | u8();
        return v;
    }
    uint32_t varlen() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            uint8_t b = u8();
            v = v << 7 | (b & 0x7f);
            if (!(b & 0x80)) return v;
        }
        fail(ErrorKind::Format, "variable-length quantity longer than 4 bytes at byte " + std::to_string(pos));
    }
    void skip(size_t n) {
        if (remaining() < n) fail(ErrorKind::Format, "truncated chunk at byte " + std::to_string(pos));
        pos += n;
    }
};

struct RawNote {
    int64_t on_tick = 0;
    int64_t off_tick = 0;
    int pitch = 0;
    int velocity = 64;
    int program = 0;
    bool percussion = false;
};

struct TimeSig {
    int numerator = 4;
    int denominator = 4;
    friend bool operator==(const TimeSig&, const TimeSig&) = default;
};

int64_t snap_to_grid(int64_t tick, int subbeats_per_beat, int denominator, int division) {
    // subbeat = round(tick * spb * den / (4 * division)), ties up
    int64_t num = tick * subbeats_per_beat * denominator;
    int64_t den = 4ll * division;
    return (2 * num + den) / (2 * den);
}

} // namespace

ParseResult parse_midi(const std::vector<uint8_t>& bytes, const GridConfig& grid) {
    Cursor cur{bytes};
    if (cur.remaining() < 14) fail(ErrorKind::Format, "not a MIDI file: shorter than the header chunk");
    if (cur.u32() != 0x4d546864u) fail(ErrorKind::Format, "not a MIDI file: missing MThd");
    uint32_t header_len = cur.u32();
    if (header_len < 6) fail(ErrorKind::Format, "malformed MThd length");
    uint16_t format = cur.u16();
    uint16_t ntrks = cur.u16();
    uint16_t division_raw = cur.u16();
    cur.skip(header_len - 6);
    if (format > 1) fail(ErrorKind::Unsupported, "SMF format " + std::to_string(format) + " not supported (only 0 and 1)");
    if (division_raw & 0x8000) fail(ErrorKind::Unsupported, "SMPTE time division not supported");
    int division = division_raw;
    if (division == 0) fail(ErrorKind::Format, "time division of zero");

    ParseReport report;
    std::vector<RawNote> notes;
    std::optional<TimeSig> timesig;
    int64_t max_eot_tick = 0;

    for (uint16_t trk = 0; trk < ntrks; ++trk) {
        // Skip alien chunks until the next MTrk.
        uint32_t chunk_type;
        uint32_t chunk_len;
        for (;;) {
            chunk_type = cur.u32();
            chunk_len = cur.u32();
            if (chunk_type == 0x4d54726bu) break;
            cur.skip(chunk_len);
        }
        size_t track_end = cur.pos + chunk_len;
        if (track_end > bytes.size()) fail(ErrorKind::Format, "track chunk overruns the file");

        int64_t tick = 0;
        uint8_t running_status = 0;
        std::map<int, int> program_of_channel;                        // channel -> program
        std::map<std::pair<int, int>, std::vector<size_t>> open_notes;// (channel, pitch) -> indices into notes

        while (cur.pos < track_end) {
            tick += cur.varlen();
            uint8_t status = cur.peek();
            if (status & 0x80) {
                cur.u8();
                if (status < 0xf0) running_status = status;
            } else {
                if (!(running_status & 0x80))
                    fail(ErrorKind::Format, "data byte without running status at byte " + std::to_string(cur.pos));
                status = running_status;
            }

            if (status == 0xff) { // meta
                uint8_t type = cur.u8();
                uint32_t len = cur.varlen();
                size_t data_at = cur.pos;
                if (type == 0x58 && len >= 2) {
                    TimeSig ts;
                    ts.numerator = bytes[data_at];
                    int log2den = bytes[data_at + 1];
                    if (ts.numerator < 1 || log2den > 6)
                        fail(ErrorKind::Unsupported, "unsupported time signature at tick " + std::to_string(tick));
                    ts.denominator = 1 << log2den;
                    if (!timesig) {
                        timesig = ts;
                        if (tick != 0)
                            report.warnings.push_back("time signature first appears at tick " +
                                                      std::to_string(tick) + "; applied from the start");
                    } else if (!(ts == *timesig)) {
                        fail(ErrorKind::Unsupported,
                             "time signature change at tick " + std::to_string(tick) +
                                 " (track " + std::to_string(trk) + "); re-bar the file first");
                    }
                } else if (type == 0x2f) {
                    max_eot_tick = std::max(max_eot_tick, tick);
                }
                cur.skip(len);
                running_status = 0;
            } else if (status == 0xf0 || status == 0xf7) { // sysex
                uint32_t len = cur.varlen();
                cur.skip(len);
                running_status = 0;
            } else {
                int kind = status >> 4;
                int channel = status & 0x0f;
                switch (kind) {
                case 0x8: case 0x9: case 0xa: case 0xb: case 0xe: {
                    uint8_t d1 = cur.u8();
                    uint8_t d2 = cur.u8();
                    if ((d1 | d2) & 0x80)
                        fail(ErrorKind::Format, "data byte with high bit set at byte " + std::to_string(cur.pos));
                    bool is_on = kind == 0x9 && d2 > 0;
                    bool is_off = kind == 0x8 || (kind == 0x9 && d2 == 0);
                    if (is_on) {
                        RawNote n;
                        n.on_tick = tick;
                        n.off_tick = -1;
                        n.pitch = d1;
                        n.velocity = d2;
                        n.program = program_of_channel.count(channel) ? program_of_channel[channel] : 0;
                        n.percussion = channel == 9;
                        open_notes[{channel, d1}].push_back(notes.size());
                        notes.push_back(n);
                    } else if (is_off) {
                        auto it = open_notes.find({channel, d1});
                        if (it != open_notes.end() && !it->second.empty()) {
                            size_t idx = it->second.front(); // first-on, first-off
                            it->second.erase(it->second.begin());
                            notes[idx].off_tick = tick;
                        }
                    }
                    break;
                }
                case 0xc: case 0xd: {
                    uint8_t d1 = cur.u8();
                    if (d1 & 0x80)
                        fail(ErrorKind::Format, "data byte with high bit set at byte " + std::to_string(cur.pos));
                    if (kind == 0xc) program_of_channel[channel] = d1;
                    break;
                }
                default:
                    fail(ErrorKind::Format, "unexpected status byte " + std::to_string(status) +
                                                " at byte " + std::to_string(cur.pos));
                }
            }
        }
        if (cur.pos != track_end)
            fail(ErrorKind::Format, "track " + std::to_string(trk) + " events overran the chunk length");
    }

    TimeSig ts = timesig.value_or(TimeSig{grid.default_beats_per_bar, grid.default_beat_unit});
    int spb = grid.subbeats_per_beat;

    QuantizedScore score;
    score.beats_per_bar = ts.numerator;
    score.subbeats_per_beat = spb;

    std::map<int, std::vector<NoteEvent>> by_program;
    int kept = 0;
    for (const auto& n : notes) {
        report.notes_parsed++;
        if (n.percussion) {
            report.percussion_dropped++;
            continue;
        }
        if (n.off_tick < 0) {
            report.unmatched_dropped++;
            continue;
        }
        NoteEvent ev;
        ev.onset = static_cast<int>(snap_to_grid(n.on_tick, spb, ts.denominator, division));
        int end = static_cast<int>(snap_to_grid(n.off_tick, spb, ts.denominator, division));
        ev.duration = end - ev.onset;
        if (ev.duration <= 0) {
            ev.duration = 1;
            report.zero_length_extended++;
        }
        ev.pitch = n.pitch;
        ev.velocity = velocity_bin_representative(velocity_bin(n.velocity));
        by_program[n.program].push_back(ev);
        ++kept;
    }
    if (report.percussion_dropped > 0)
        report.warnings.push_back("dropped " + std::to_string(report.percussion_dropped) +
                                  " percussion (channel 10) notes");
    if (report.unmatched_dropped > 0)
        report.warnings.push_back("dropped " + std::to_string(report.unmatched_dropped) +
                                  " note-ons without a matching note-off");
    if (kept == 0) fail(ErrorKind::EmptyScore, "file contains no notes after filtering");

    for (auto& [program, events] : by_program)
        score.tracks.push_back(ScoreTrack{program, std::move(events)});
    score = canonicalize(std::move(score));
    report.overlaps_merged = kept - score.event_count();

    // Trailing silence before the end-of-track marker keeps its bars.
    int64_t eot_sb = snap_to_grid(max_eot_tick, spb, ts.denominator, division);
    int spbar = score.subbeats_per_bar();
    int bars_from_eot = static_cast<int>((eot_sb + spbar - 1) / spbar);
    while (score.bar_count() < bars_from_eot)
        score.bar_ends.push_back((score.bar_count() + 1) * spbar);

    return ParseResult{std::move(score), std::move(report)};
}

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(v >> 8);
    out.push_back(v & 0xff);
}
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back((v >> (8 * i)) & 0xff);
}
void put_varlen(std::vector<uint8_t>& out, uint32_t v) {
    uint8_t buf[4];
    int n = 0;
    do {
        buf[n++] = v & 0x7f;
        v >>= 7;
    } while (v);
    for (int i = n - 1; i >= 0; --i) out.push_back(buf[i] | (i ? 0x80 : 0x00));
}

struct WireEvent {
    int64_t tick;
    int order; // 0 = note off, 1 = note on
    uint8_t status, d1, d2;
};

} // namespace

std::vector<uint8_t> write_midi(const QuantizedScore& score, double bpm) {
    if (score.empty()) fail(ErrorKind::EmptyScore, "refusing to write an empty score");
    if (bpm <= 0) fail(ErrorKind::BadRequest, "tempo must be positive");

    int denominator = 4;
    int log2den = 2;
    // beats_per_bar counts denominator units; the written signature matches.
    // Denominator fixed at 4 except when sub-beats would not divide evenly,
    // which cannot happen with the division chosen below.
    int division = 30 * score.subbeats_per_beat * denominator;
    int subbeat_ticks = 120;

    std::vector<uint8_t> out;
    put_u32(out, 0x4d546864u);
    put_u32(out, 6);
    put_u16(out, 1); // format 1
    put_u16(out, static_cast<uint16_t>(score.tracks.size()));
    put_u16(out, static_cast<uint16_t>(division));

    int64_t piece_end_tick = static_cast<int64_t>(score.bar_ends.back()) * subbeat_ticks;

    for (size_t t = 0; t < score.tracks.size(); ++t) {
        const auto& track = score.tracks[t];
        int channel = static_cast<int>(t % 15);
        if (channel >= 9) ++channel; // skip the percussion channel

        std::vector<uint8_t> body;
        if (t == 0) {
            // tempo
            put_varlen(body, 0);
            uint32_t uspq = static_cast<uint32_t>(std::llround(60000000.0 / bpm));
            body.insert(body.end(), {0xff, 0x51, 0x03});
            body.push_back((uspq >> 16) & 0xff);
            body.push_back((uspq >> 8) & 0xff);
            body.push_back(uspq & 0xff);
            // time signature
            put_varlen(body, 0);
            body.insert(body.end(), {0xff, 0x58, 0x04, static_cast<uint8_t>(score.beats_per_bar),
                                     static_cast<uint8_t>(log2den), 24, 8});
        }
        put_varlen(body, 0);
        body.push_back(static_cast<uint8_t>(0xc0 | channel));
        body.push_back(static_cast<uint8_t>(track.program));

        std::vector<WireEvent> events;
        for (const auto& ev : track.events) {
            events.push_back({static_cast<int64_t>(ev.onset) * subbeat_ticks, 1,
                              static_cast<uint8_t>(0x90 | channel), static_cast<uint8_t>(ev.pitch),
                              static_cast<uint8_t>(ev.velocity)});
            events.push_back({static_cast<int64_t>(ev.onset + ev.duration) * subbeat_ticks, 0,
                              static_cast<uint8_t>(0x80 | channel), static_cast<uint8_t>(ev.pitch), 64});
        }
        std::sort(events.begin(), events.end(), [](const WireEvent& a, const WireEvent& b) {
            return std::tie(a.tick, a.order, a.d1) < std::tie(b.tick, b.order, b.d1);
        });

        int64_t tick = 0;
        for (const auto& ev : events) {
            put_varlen(body, static_cast<uint32_t>(ev.tick - tick));
            tick = ev.tick;
            body.push_back(ev.status);
            body.push_back(ev.d1);
            body.push_back(ev.d2);
        }
        // end of track at the end of the last bar
        put_varlen(body, static_cast<uint32_t>(std::max<int64_t>(piece_end_tick - tick, 0)));
        body.insert(body.end(), {0xff, 0x2f, 0x00});

        put_u32(out, 0x4d54726bu);
        put_u32(out, static_cast<uint32_t>(body.size()));
        out.insert(out.end(), body.begin(), body.end());
    }
    return out;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot write '" + tmp + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) fail(ErrorKind::Io, "short write to '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        fail(ErrorKind::Io, "cannot move '" + tmp + "' into place");
}

} // namespace miditex
