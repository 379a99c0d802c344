#include "miditex/attributes.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace miditex {

int rhythmicity(const QuantizedScore& score, int bar) {
    score.check_bar(bar);
    int lo = score.bar_start(bar), hi = score.bar_ends[bar];
    std::set<int> onset_subbeats;
    for (const auto& track : score.tracks)
        for (const auto& ev : track.events)
            if (ev.onset >= lo && ev.onset < hi) onset_subbeats.insert(ev.onset);
    return static_cast<int>(onset_subbeats.size());
}

double polyphonicity(const QuantizedScore& score, int bar) {
    score.check_bar(bar);
    int lo = score.bar_start(bar), hi = score.bar_ends[bar];
    int64_t sounding = 0;
    for (const auto& track : score.tracks)
        for (const auto& ev : track.events) {
            // overlap of [onset, onset+duration) with [lo, hi)
            int a = std::max(ev.onset, lo);
            int b = std::min(ev.onset + ev.duration, hi);
            if (b > a) sounding += b - a;
        }
    return static_cast<double>(sounding) / static_cast<double>(hi - lo);
}

AvgPitch avg_pitch(const QuantizedScore& score, int bar, int track) {
    auto events = score.events_in_bar(bar, track);
    if (events.empty())
        fail(ErrorKind::OutOfRange, "track " + std::to_string(track) + " has no events in bar " +
                                        std::to_string(bar));
    double sum = 0.0;
    for (const auto& ev : events) sum += ev.pitch;
    AvgPitch out;
    out.raw = sum / static_cast<double>(events.size());
    double rounded = std::round(out.raw / 10.0) * 10.0;
    rounded = std::clamp(rounded, 10.0, 130.0);
    out.cls = static_cast<int>(rounded) / 10;
    return out;
}

int pitch_diversity(const QuantizedScore& score, int bar, int track) {
    auto events = score.events_in_bar(bar, track);
    if (events.empty())
        fail(ErrorKind::OutOfRange, "track " + std::to_string(track) + " has no events in bar " +
                                        std::to_string(bar));
    std::set<int> classes;
    for (const auto& ev : events) classes.insert(ev.pitch % 12);
    return static_cast<int>(classes.size());
}

int classify(double raw, const std::array<double, 7>& edges) {
    int cls = 1;
    for (double e : edges)
        if (e < raw) ++cls;
    return cls;
}

namespace {

std::array<double, 7> quantile_edges(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    std::array<double, 7> edges{};
    size_t n = values.size();
    for (int k = 1; k <= 7; ++k) {
        // nearest-rank: smallest value with cumulative share >= k/8
        size_t rank = (k * n + 7) / 8; // ceil(k*n/8)
        edges[k - 1] = values[rank - 1];
    }
    return edges;
}

} // namespace

BinTable fit_bins(const std::vector<QuantizedScore>& corpus) {
    std::vector<double> rhy, poly;
    int bars_with_notes = 0;
    int beats_per_bar = 0, subbeats_per_beat = 0;
    for (const auto& score : corpus) {
        if (beats_per_bar == 0) {
            beats_per_bar = score.beats_per_bar;
            subbeats_per_beat = score.subbeats_per_beat;
        }
        for (int b = 0; b < score.bar_count(); ++b) {
            int r = rhythmicity(score, b);
            rhy.push_back(static_cast<double>(r));
            poly.push_back(polyphonicity(score, b));
            if (r > 0) ++bars_with_notes;
        }
    }
    if (bars_with_notes < 8)
        fail(ErrorKind::CorpusTooSmall, "bin fitting needs at least 8 bars with notes, got " +
                                            std::to_string(bars_with_notes));

    BinTable table;
    table.rhythmicity_edges = quantile_edges(std::move(rhy));
    table.polyphonicity_edges = quantile_edges(std::move(poly));
    table.corpus_fingerprint = corpus_fingerprint(corpus);
    table.beats_per_bar = beats_per_bar;
    table.subbeats_per_beat = subbeats_per_beat;
    return table;
}

TextureProfile extract_profile(const QuantizedScore& score, const BinTable* bins) {
    TextureProfile profile;
    profile.bars.resize(score.bar_count());
    for (int b = 0; b < score.bar_count(); ++b) {
        BarTexture& bar = profile.bars[b];
        bar.rhythmicity_raw = rhythmicity(score, b);
        bar.polyphonicity_raw = polyphonicity(score, b);
        if (bins) {
            bar.rhythmicity_class = classify(bar.rhythmicity_raw, bins->rhythmicity_edges);
            bar.polyphonicity_class = classify(bar.polyphonicity_raw, bins->polyphonicity_edges);
        }
        for (int t = 0; t < static_cast<int>(score.tracks.size()); ++t) {
            if (score.events_in_bar(b, t).empty()) continue;
            TrackBarTexture tex;
            AvgPitch ap = avg_pitch(score, b, t);
            tex.avg_pitch_raw = ap.raw;
            tex.avg_pitch_class = ap.cls;
            tex.pitch_diversity_raw = pitch_diversity(score, b, t);
            tex.pitch_diversity_class = tex.pitch_diversity_raw;
            bar.tracks[t] = tex;
        }
    }
    return profile;
}

} // namespace miditex
