#pragma once

#include <cstdint>
#include <vector>

#include "miditex/instruments.hpp"
#include "miditex/rng.hpp"
#include "miditex/score.hpp"

namespace miditex {

// Random homophonic pieces: one designated melody instrument on top, chordal
// accompaniment strictly below it, textures spread widely so the attribute
// bins and the conditioning signal have something to learn from.
struct SynthOptions {
    int pieces = 200;
    int bars = 8;
    int min_tracks = 2;
    int max_tracks = 4;
    int beats_per_bar = 4;
    int subbeats_per_beat = 4;
    int max_density = 0; // cap on onset sub-beats per bar; 0 = the full bar
    uint64_t seed = 1;
    std::vector<int> program_pool; // empty = a small orchestral default
};

QuantizedScore synth_piece(Rng& rng, const SynthOptions& options,
                           const InstrumentRegistry& registry);
std::vector<QuantizedScore> synth_corpus(const SynthOptions& options,
                                         const InstrumentRegistry& registry);

// Unstructured random canonical scores for property tests: arbitrary
// chords, cross-bar durations, any registry programs.
struct RandomScoreOptions {
    int max_bars = 4;
    int max_tracks = 3;
    int max_events_per_track = 12;
    int beats_per_bar = 4;
    int subbeats_per_beat = 4;
    std::vector<int> program_pool;
};

QuantizedScore random_score(Rng& rng, const RandomScoreOptions& options);

} // namespace miditex
