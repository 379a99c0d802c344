#include "miditex/synthetic.hpp"

#include <algorithm>
#include <set>

#include "miditex/midi_io.hpp"

namespace miditex {

namespace {

// Flute, oboe, clarinet, bassoon, horn, trumpet, violin, viola, cello.
const std::vector<int> kDefaultPool = {73, 68, 71, 70, 60, 56, 40, 41, 42};

std::vector<int> pick_programs(Rng& rng, const std::vector<int>& pool, int count) {
    std::vector<int> shuffled = pool;
    rng.shuffle(shuffled);
    shuffled.resize(count);
    std::sort(shuffled.begin(), shuffled.end());
    return shuffled;
}

} // namespace

QuantizedScore synth_piece(Rng& rng, const SynthOptions& options,
                           const InstrumentRegistry& registry) {
    std::vector<int> pool = options.program_pool;
    if (pool.empty()) {
        for (int p : kDefaultPool)
            if (registry.contains(p)) pool.push_back(p);
        if (pool.empty())
            for (const auto& spec : registry.all()) pool.push_back(spec.program);
    }
    int n_tracks = rng.uniform_int(options.min_tracks,
                                   std::min<int>(options.max_tracks, static_cast<int>(pool.size())));
    std::vector<int> programs = pick_programs(rng, pool, n_tracks);

    // The melody goes to the instrument with the highest register midpoint;
    // accompaniment stays strictly below it so the skyline finds the melody.
    int melody_idx = 0;
    int best_mid = -1;
    for (int i = 0; i < n_tracks; ++i) {
        int mid = register_midpoint(registry.lookup(programs[i]));
        if (mid > best_mid) {
            best_mid = mid;
            melody_idx = i;
        }
    }
    const InstrumentSpec& mel_spec = registry.lookup(programs[melody_idx]);

    QuantizedScore score;
    score.beats_per_bar = options.beats_per_bar;
    score.subbeats_per_beat = options.subbeats_per_beat;
    for (int p : programs) score.tracks.push_back(ScoreTrack{p, {}});

    int spb = score.subbeats_per_bar();
    int mel_lo = std::max(mel_spec.register_low + (mel_spec.register_high - mel_spec.register_low) / 2,
                          mel_spec.register_low + 6);
    int mel_hi = mel_spec.register_high - 2;
    if (mel_hi <= mel_lo) mel_hi = mel_lo + 10;
    int melody_pitch = rng.uniform_int(mel_lo, mel_hi);
    int accomp_ceiling = mel_lo - 3; // keeps the melody's bar average on top

    int density_cap = options.max_density > 0 ? std::min(options.max_density, spb) : spb;
    for (int bar = 0; bar < options.bars; ++bar) {
        int bar_start = bar * spb;
        // Spread bar density widely: 1..cap onset sub-beats.
        int density = rng.uniform_int(1, density_cap);
        std::set<int> onsets;
        while (static_cast<int>(onsets.size()) < density) onsets.insert(rng.uniform_int(0, spb - 1));

        int bar_chord_size = rng.uniform_int(1, 3);
        int bar_hold = rng.uniform_int(1, 4); // sustain factor for polyphonicity spread

        int k = 0;
        for (int onset : onsets) {
            // Melody takes roughly every other onset; everything else goes to
            // the accompaniment. Both may coincide on a sub-beat.
            bool melody_here = k % 2 == 0 || n_tracks == 1;
            bool accomp_here = n_tracks > 1 && (k % 2 == 1 || rng.uniform() < 0.4);
            ++k;

            if (melody_here) {
                melody_pitch += rng.uniform_int(-3, 3);
                melody_pitch = std::clamp(melody_pitch, mel_lo, mel_hi);
                NoteEvent ev;
                ev.onset = bar_start + onset;
                ev.duration = std::min(rng.uniform_int(1, 4) * bar_hold, spb - onset);
                ev.duration = std::max(ev.duration, 1);
                ev.pitch = melody_pitch;
                ev.velocity = velocity_bin_representative(rng.uniform_int(4, 8));
                score.tracks[melody_idx].events.push_back(ev);
            }
            if (accomp_here) {
                int track = rng.uniform_int(0, n_tracks - 1);
                if (track == melody_idx) track = (track + 1) % n_tracks;
                const InstrumentSpec& spec = registry.lookup(programs[track]);
                int hi = std::min(accomp_ceiling, spec.register_high);
                int lo = spec.register_low;
                if (hi <= lo) hi = lo + 12;
                int root = rng.uniform_int(lo, std::max(lo, hi - 7));
                for (int c = 0; c < bar_chord_size; ++c) {
                    NoteEvent ev;
                    ev.onset = bar_start + onset;
                    ev.duration = std::min(rng.uniform_int(2, 6) * bar_hold, spb - onset);
                    ev.duration = std::max(ev.duration, 1);
                    ev.pitch = std::min(root + c * (rng.uniform() < 0.5 ? 3 : 4), hi);
                    ev.velocity = velocity_bin_representative(rng.uniform_int(2, 6));
                    score.tracks[track].events.push_back(ev);
                }
            }
        }
    }

    score = canonicalize(std::move(score));
    // Keep the requested bar count even if the last bars are quiet.
    int spbar = score.subbeats_per_bar();
    while (score.bar_count() < options.bars)
        score.bar_ends.push_back((score.bar_count() + 1) * spbar);
    return score;
}

std::vector<QuantizedScore> synth_corpus(const SynthOptions& options,
                                         const InstrumentRegistry& registry) {
    std::vector<QuantizedScore> corpus;
    corpus.reserve(options.pieces);
    for (int i = 0; i < options.pieces; ++i) {
        Rng rng(derive_seed(options.seed, 0x73796e ^ static_cast<uint64_t>(i)));
        corpus.push_back(synth_piece(rng, options, registry));
    }
    return corpus;
}

QuantizedScore random_score(Rng& rng, const RandomScoreOptions& options) {
    static const std::vector<int> kPool = {0, 40, 41, 42, 56, 60, 68, 70, 71, 73};
    const std::vector<int>& pool = options.program_pool.empty() ? kPool : options.program_pool;

    QuantizedScore score;
    score.beats_per_bar = options.beats_per_bar;
    score.subbeats_per_beat = options.subbeats_per_beat;
    int bars = rng.uniform_int(1, options.max_bars);
    int spb = score.subbeats_per_bar();
    int n_tracks = rng.uniform_int(1, std::min<int>(options.max_tracks, static_cast<int>(pool.size())));
    std::vector<int> programs = pick_programs(rng, pool, n_tracks);

    for (int t = 0; t < n_tracks; ++t) {
        ScoreTrack track{programs[t], {}};
        int n_events = rng.uniform_int(1, options.max_events_per_track);
        for (int i = 0; i < n_events; ++i) {
            NoteEvent ev;
            ev.onset = rng.uniform_int(0, bars * spb - 1);
            ev.duration = rng.uniform_int(1, 32);
            ev.pitch = rng.uniform_int(0, 127);
            ev.velocity = velocity_bin_representative(rng.uniform_int(1, 8));
            track.events.push_back(ev);
        }
        score.tracks.push_back(std::move(track));
    }
    // Overlap merging can exceed the largest duration token; normalize so
    // the result is always tokenizable.
    score = split_long_durations(canonicalize(std::move(score)), 32);
    while (score.bar_count() < bars)
        score.bar_ends.push_back((score.bar_count() + 1) * score.subbeats_per_bar());
    return score;
}

} // namespace miditex
