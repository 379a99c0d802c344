#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "miditex/errors.hpp"

namespace miditex {

// One quantized note. Onsets and durations are in sub-beats on the piece
// grid; pitch and velocity are plain MIDI values. `track` is the index into
// QuantizedScore::tracks.
struct NoteEvent {
    int onset = 0;    // sub-beat index within the piece, >= 0
    int duration = 1; // sub-beats, >= 1
    int pitch = 0;    // 0..127
    int velocity = 64;// 1..127
    int track = 0;

    friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

struct ScoreTrack {
    int program = 0; // MIDI program 0..127
    std::vector<NoteEvent> events;

    friend bool operator==(const ScoreTrack&, const ScoreTrack&) = default;
};

// A piece on a uniform bar grid. Canonical form maintained by the library:
// tracks strictly ascending by program (one track per program), events per
// track sorted by (onset, pitch), overlapping same-pitch events merged.
struct QuantizedScore {
    std::vector<ScoreTrack> tracks;
    std::vector<int> bar_ends; // exclusive end of bar b in sub-beats, strictly increasing
    int beats_per_bar = 4;
    int subbeats_per_beat = 4;

    int subbeats_per_bar() const { return beats_per_bar * subbeats_per_beat; }
    int bar_count() const { return static_cast<int>(bar_ends.size()); }
    int bar_start(int bar) const { return bar == 0 ? 0 : bar_ends[bar - 1]; }

    int bar_of(int onset) const;

    bool empty() const;
    int event_count() const;

    // Events of `track` whose onset falls inside `bar`, in (onset, pitch) order.
    std::vector<NoteEvent> events_in_bar(int bar, int track) const;

    void check_bar(int bar) const {
        if (bar < 0 || bar >= bar_count())
            fail(ErrorKind::OutOfRange, "bar index " + std::to_string(bar) +
                                            " out of range [0, " + std::to_string(bar_count()) + ")");
    }

    friend bool operator==(const QuantizedScore&, const QuantizedScore&) = default;
};

// Sorts events, merges overlapping same-pitch events per track, sorts tracks
// by program (merging same-program tracks), and recomputes bar_ends to cover
// the last event. Everything that builds scores by hand goes through this.
QuantizedScore canonicalize(QuantizedScore score);

// Splits events longer than max_duration at bar boundaries (or at
// max_duration when a bar is longer than that). Lossy: the pieces are
// separate events afterwards, there is no tie. Idempotent.
QuantizedScore split_long_durations(QuantizedScore score, int max_duration);

// Stable 64-bit fingerprint of the score's full content (grid + events);
// used to stamp bin tables with the corpus they were fitted on.
uint64_t score_fingerprint(const QuantizedScore& score);
uint64_t corpus_fingerprint(const std::vector<QuantizedScore>& corpus);

} // namespace miditex
