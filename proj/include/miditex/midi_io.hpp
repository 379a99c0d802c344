#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "miditex/score.hpp"

namespace miditex {

struct GridConfig {
    int subbeats_per_beat = 4;
    // Used when the file carries no time signature.
    int default_beats_per_bar = 4;
    int default_beat_unit = 4;
};

struct ParseReport {
    int notes_parsed = 0;        // note pairs found in the file
    int percussion_dropped = 0;  // channel-10 notes
    int unmatched_dropped = 0;   // note-ons without a note-off
    int zero_length_extended = 0;// snapped to zero length, extended to 1
    int overlaps_merged = 0;     // same-track same-pitch overlaps merged
    std::vector<std::string> warnings;
};

struct ParseResult {
    QuantizedScore score;
    ParseReport report;
};

// Parses an SMF type 0/1 byte stream onto the sub-beat grid. Onsets and
// offsets snap to the nearest grid line (ties round up); velocities snap to
// the 8-bin representatives. Tracks are grouped by program and sorted.
// Tempo and all meta events other than the time signature are discarded;
// a time-signature change mid-file is rejected.
ParseResult parse_midi(const std::vector<uint8_t>& bytes, const GridConfig& grid);

// Serializes a canonical score as SMF type 1, one track per score track,
// program changes at tick 0, tempo and time signature in the first track.
// parse_midi(write_midi(s)) == s for canonical scores.
std::vector<uint8_t> write_midi(const QuantizedScore& score, double bpm = 120.0);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

// Velocity bins: eight bins of width 16 over 0..127, bin = v/16 + 1.
int velocity_bin(int velocity);
// Bin representative, 16*bin - 8; fixed point of bin() ∘ representative().
int velocity_bin_representative(int bin);

} // namespace miditex
