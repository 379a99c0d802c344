#pragma once

#include <optional>
#include <vector>

#include "miditex/score.hpp"
#include "miditex/token_grammar.hpp"

namespace miditex {

class InstrumentRegistry;

// One melody note inside a bar, on the bar-local sub-beat grid.
struct MelodyEvent {
    int sub_beat = 0;    // 0..subbeats_per_bar-1
    int pitch_class = 0; // 0..11
    int octave = 4;      // -1..9
    int duration = 1;
    int velocity_bin = 5;

    int pitch() const { return pitch_of(pitch_class, octave); }
    friend bool operator==(const MelodyEvent&, const MelodyEvent&) = default;
};

struct MelodyBar {
    std::optional<int> source_track;      // argmax average-pitch track in the reference
    std::optional<int> target_program;    // empty = model-chosen
    std::vector<MelodyEvent> events;      // ordered by (sub_beat, pitch)

    bool empty() const { return events.empty(); }
    friend bool operator==(const MelodyBar&, const MelodyBar&) = default;
};

struct MelodyConstraint {
    std::vector<MelodyBar> bars;

    int bar_count() const { return static_cast<int>(bars.size()); }
    friend bool operator==(const MelodyConstraint&, const MelodyConstraint&) = default;
};

// Bar-wise skyline: per bar, the track with the highest raw average pitch
// (ties go to the lowest track index); its events become the bar's melody.
// Target instruments are left unresolved.
MelodyConstraint extract_melody(const QuantizedScore& score);

// Per-bar target programs. An empty optional means model-chosen. A single
// program applies to every bar.
MelodyConstraint assign_instruments(MelodyConstraint constraint,
                                    const std::vector<std::optional<int>>& choice,
                                    const InstrumentRegistry& registry);
MelodyConstraint assign_instrument(MelodyConstraint constraint, int program,
                                   const InstrumentRegistry& registry);

// One injected token with its slot mode: a fixed token, or an Octave slot
// the model fills in octave-inference mode.
struct MelodyRunItem {
    Token token;
    bool generate_octave = false;
};

// The token run injected after SubBeat(sub_beat) of `bar`: Track(target),
// then (PitchClass, Octave, Duration, Velocity) per event. Empty when the
// bar has no melody event at that sub-beat. Requires a resolved target.
std::vector<MelodyRunItem> melody_token_run(const MelodyConstraint& constraint, int bar,
                                            int sub_beat, bool infer_octave);

// Sub-beats of `bar` carrying at least one melody event, ascending.
std::vector<int> melody_sub_beats(const MelodyConstraint& constraint, int bar);

} // namespace miditex
