#include "miditex/melody.hpp"

#include <algorithm>

#include "miditex/attributes.hpp"
#include "miditex/instruments.hpp"
#include "miditex/midi_io.hpp"

namespace miditex {

MelodyConstraint extract_melody(const QuantizedScore& score) {
    MelodyConstraint constraint;
    constraint.bars.resize(score.bar_count());
    for (int b = 0; b < score.bar_count(); ++b) {
        MelodyBar& bar = constraint.bars[b];
        double best = -1.0;
        int best_track = -1;
        for (int t = 0; t < static_cast<int>(score.tracks.size()); ++t) {
            if (score.events_in_bar(b, t).empty()) continue;
            double raw = avg_pitch(score, b, t).raw;
            if (raw > best) { // strict: ties keep the lowest track index
                best = raw;
                best_track = t;
            }
        }
        if (best_track < 0) continue;
        bar.source_track = best_track;
        int lo = score.bar_start(b);
        for (const auto& ev : score.events_in_bar(b, best_track)) {
            MelodyEvent me;
            me.sub_beat = ev.onset - lo;
            me.pitch_class = ev.pitch % 12;
            me.octave = octave_of_pitch(ev.pitch);
            me.duration = ev.duration;
            me.velocity_bin = velocity_bin(ev.velocity);
            bar.events.push_back(me);
        }
    }
    return constraint;
}

MelodyConstraint assign_instruments(MelodyConstraint constraint,
                                    const std::vector<std::optional<int>>& choice,
                                    const InstrumentRegistry& registry) {
    if (choice.size() != constraint.bars.size())
        fail(ErrorKind::BadRequest, "instrument choice covers " + std::to_string(choice.size()) +
                                        " bars, melody has " + std::to_string(constraint.bars.size()));
    for (size_t b = 0; b < choice.size(); ++b) {
        if (choice[b]) registry.lookup(*choice[b]); // throws NotInSubset
        constraint.bars[b].target_program = choice[b];
    }
    return constraint;
}

MelodyConstraint assign_instrument(MelodyConstraint constraint, int program,
                                   const InstrumentRegistry& registry) {
    std::vector<std::optional<int>> choice(constraint.bars.size(), program);
    return assign_instruments(std::move(constraint), choice, registry);
}

std::vector<MelodyRunItem> melody_token_run(const MelodyConstraint& constraint, int bar,
                                            int sub_beat, bool infer_octave) {
    if (bar < 0 || bar >= constraint.bar_count())
        fail(ErrorKind::OutOfRange, "melody bar " + std::to_string(bar) + " out of range");
    const MelodyBar& mb = constraint.bars[bar];

    std::vector<MelodyRunItem> run;
    for (const auto& ev : mb.events) {
        if (ev.sub_beat != sub_beat) continue;
        if (run.empty()) {
            if (!mb.target_program)
                fail(ErrorKind::BadRequest, "melody target instrument unresolved for bar " +
                                                std::to_string(bar));
            run.push_back({Token::track(*mb.target_program), false});
        }
        run.push_back({Token::pitch_class(ev.pitch_class), false});
        run.push_back({Token::octave(ev.octave), infer_octave});
        run.push_back({Token::duration(ev.duration), false});
        run.push_back({Token::velocity(ev.velocity_bin), false});
    }
    return run;
}

std::vector<int> melody_sub_beats(const MelodyConstraint& constraint, int bar) {
    std::vector<int> out;
    if (bar < 0 || bar >= constraint.bar_count()) return out;
    for (const auto& ev : constraint.bars[bar].events)
        if (out.empty() || out.back() != ev.sub_beat) out.push_back(ev.sub_beat);
    return out;
}

} // namespace miditex
