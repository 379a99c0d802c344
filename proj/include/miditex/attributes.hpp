#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "miditex/score.hpp"

namespace miditex {

// Per-track texture of one bar. Entries exist iff the track has at least one
// event in the bar.
struct TrackBarTexture {
    double avg_pitch_raw = 0.0;
    int avg_pitch_class = 0;      // 1..13
    int pitch_diversity_raw = 0;  // distinct pitch classes, 1..12 when present
    int pitch_diversity_class = 0;// == raw here; 0 reserved for silence

    friend bool operator==(const TrackBarTexture&, const TrackBarTexture&) = default;
};

struct BarTexture {
    int rhythmicity_raw = 0;       // onset sub-beats in the bar
    double polyphonicity_raw = 0.0;// mean sounding notes per sub-beat
    int rhythmicity_class = 0;     // 1..8, 0 when no bin table was supplied
    int polyphonicity_class = 0;   // 1..8, 0 when no bin table was supplied
    std::map<int, TrackBarTexture> tracks; // track index -> texture

    friend bool operator==(const BarTexture&, const BarTexture&) = default;
};

struct TextureProfile {
    std::vector<BarTexture> bars;

    bool covers(int bar, int track) const {
        return bar >= 0 && bar < static_cast<int>(bars.size()) && bars[bar].tracks.count(track) > 0;
    }
    friend bool operator==(const TextureProfile&, const TextureProfile&) = default;
};

// Dataset-derived class boundaries: seven ascending edges per attribute,
// eight bins. See fit_bins.
struct BinTable {
    std::array<double, 7> rhythmicity_edges{};
    std::array<double, 7> polyphonicity_edges{};
    uint64_t corpus_fingerprint = 0;
    int beats_per_bar = 4;
    int subbeats_per_beat = 4;
};

// Count of sub-beats in the bar with at least one onset, all tracks.
int rhythmicity(const QuantizedScore& score, int bar);

// Mean over the bar's sub-beats of the number of notes sounding (hit or
// held) there, all tracks.
double polyphonicity(const QuantizedScore& score, int bar);

struct AvgPitch {
    double raw = 0.0;
    int cls = 0; // 1..13
};
// Unweighted mean MIDI pitch of the track's events in the bar; class is the
// mean rounded to the nearest ten, clamped to [10, 130], divided by ten.
AvgPitch avg_pitch(const QuantizedScore& score, int bar, int track);

// Distinct pitch classes among the track's events in the bar (1..12; the
// operation requires an active (bar, track) pair, 0 is reserved for silence).
int pitch_diversity(const QuantizedScore& score, int bar, int track);

// class = 1 + number of edges strictly below raw (left-closed: raw == edge k
// lands in class k).
int classify(double raw, const std::array<double, 7>& edges);

// Edges are the 1/8..7/8 nearest-rank quantiles of the per-bar raw values
// over the whole corpus. Requires at least 8 bars with notes.
BinTable fit_bins(const std::vector<QuantizedScore>& corpus);

// Full profile of a score. Bar-level classes are filled when a bin table is
// given, otherwise left 0.
TextureProfile extract_profile(const QuantizedScore& score, const BinTable* bins = nullptr);

} // namespace miditex
