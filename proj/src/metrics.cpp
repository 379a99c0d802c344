#include "miditex/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

namespace miditex {

namespace {

std::array<double, 12> chroma_vector(const QuantizedScore& score, int bar) {
    std::array<double, 12> v{};
    int lo = score.bar_start(bar), hi = score.bar_ends[bar];
    for (const auto& track : score.tracks)
        for (const auto& ev : track.events)
            if (ev.onset >= lo && ev.onset < hi) v[ev.pitch % 12] += 1.0;
    return v;
}

double cosine(const std::array<double, 12>& a, const std::array<double, 12>& b) {
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < 12; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    bool a_empty = na == 0.0, b_empty = nb == 0.0;
    if (a_empty && b_empty) return 1.0; // identical silence
    if (a_empty || b_empty) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace

std::vector<double> chroma_similarity_per_bar(const QuantizedScore& reference,
                                              const QuantizedScore& generation) {
    if (reference.bar_count() != generation.bar_count())
        fail(ErrorKind::BadRequest, "bar-count mismatch: reference has " +
                                        std::to_string(reference.bar_count()) + ", generation has " +
                                        std::to_string(generation.bar_count()));
    std::vector<double> out;
    for (int b = 0; b < reference.bar_count(); ++b)
        out.push_back(cosine(chroma_vector(reference, b), chroma_vector(generation, b)));
    return out;
}

double chroma_similarity(const QuantizedScore& reference, const QuantizedScore& generation) {
    auto per_bar = chroma_similarity_per_bar(reference, generation);
    return std::accumulate(per_bar.begin(), per_bar.end(), 0.0) / static_cast<double>(per_bar.size());
}

double normalized_edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
    size_t n = a.size(), m = b.size();
    if (n == 0 && m == 0) return 0.0;
    std::vector<int> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= m; ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[m]) / static_cast<double>(std::max(n, m));
}

namespace {

// Symbol stream for φ: per event, four tagged scalars. Velocity and the
// track identity stay out so re-instrumented or re-dynamicized melodies
// still count as faithful.
void append_event_symbols(std::vector<int>& out, int sub_beat, int pitch, int duration) {
    out.push_back(0 * 1000 + sub_beat);
    out.push_back(1 * 1000 + pitch % 12);
    out.push_back(2 * 1000 + (pitch / 12 - 1) + 1);
    out.push_back(3 * 1000 + duration);
}

std::vector<int> melody_bar_symbols(const MelodyBar& bar) {
    std::vector<int> out;
    for (const auto& ev : bar.events) append_event_symbols(out, ev.sub_beat, ev.pitch(), ev.duration);
    return out;
}

std::vector<int> track_bar_symbols(const QuantizedScore& score, int bar, int track) {
    std::vector<int> out;
    int lo = score.bar_start(bar);
    for (const auto& ev : score.events_in_bar(bar, track))
        append_event_symbols(out, ev.onset - lo, ev.pitch, ev.duration);
    return out;
}

} // namespace

std::vector<double> melodic_fidelity_per_bar(const MelodyConstraint& melody,
                                             const QuantizedScore& generation) {
    if (generation.bar_count() < melody.bar_count())
        fail(ErrorKind::BadRequest, "generation has fewer bars than the melody constraint");
    std::vector<double> out;
    for (int b = 0; b < melody.bar_count(); ++b) {
        const MelodyBar& mb = melody.bars[b];
        if (mb.events.empty()) {
            out.push_back(1.0); // d(ε,ε) = 0
            continue;
        }
        std::vector<int> mel = melody_bar_symbols(mb);
        double best = 1.0;
        for (int t = 0; t < static_cast<int>(generation.tracks.size()); ++t)
            best = std::min(best, normalized_edit_distance(mel, track_bar_symbols(generation, b, t)));
        out.push_back(1.0 - best);
    }
    return out;
}

double melodic_fidelity(const MelodyConstraint& melody, const QuantizedScore& generation) {
    auto per_bar = melodic_fidelity_per_bar(melody, generation);
    if (per_bar.empty()) return 1.0;
    return std::accumulate(per_bar.begin(), per_bar.end(), 0.0) / static_cast<double>(per_bar.size());
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& values) {
    size_t n = values.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
        double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

} // namespace

Correlation spearman(const std::vector<double>& requested, const std::vector<double>& realized) {
    if (requested.size() != realized.size())
        fail(ErrorKind::BadRequest, "spearman inputs differ in length");
    if (requested.size() < 2)
        fail(ErrorKind::BadRequest, "spearman needs at least two samples");

    auto constant = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    Correlation out;
    if (constant(requested) || constant(realized)) {
        out.undefined_reason = "constant input";
        return out;
    }
    std::vector<double> ra = average_ranks(requested), rb = average_ranks(realized);
    double n = static_cast<double>(ra.size());
    double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        double da = ra[i] - ma, db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    out.rho = cov / std::sqrt(va * vb);
    return out;
}

namespace {

Correlation pooled_spearman(const std::vector<double>& requested,
                            const std::vector<double>& realized) {
    Correlation out;
    if (requested.empty()) {
        out.undefined_reason = "no requested levels";
        return out;
    }
    if (requested.size() < 2) {
        out.undefined_reason = "fewer than two samples";
        return out;
    }
    return spearman(requested, realized);
}

QuantizedScore truncate_bars(const QuantizedScore& score, int bars) {
    QuantizedScore out = score;
    out.bar_ends.resize(bars);
    int end = out.bar_ends.back();
    for (auto& track : out.tracks) {
        std::vector<NoteEvent> kept;
        for (const auto& ev : track.events)
            if (ev.onset < end) kept.push_back(ev);
        track.events = std::move(kept);
    }
    return out;
}

} // namespace

EvalReport evaluate_scores(const QuantizedScore& reference, const QuantizedScore& generation,
                           const std::vector<BarControl>& requested_bars,
                           const std::map<std::pair<int, int>, TrackLevels>& requested_tracks,
                           const std::optional<MelodyConstraint>& melody, const BinTable& bins) {
    if (reference.bar_count() != generation.bar_count())
        fail(ErrorKind::BadRequest, "bar-count mismatch between reference and generation");

    EvalReport report;
    report.chroma_per_bar = chroma_similarity_per_bar(reference, generation);
    report.overall_fidelity =
        std::accumulate(report.chroma_per_bar.begin(), report.chroma_per_bar.end(), 0.0) /
        static_cast<double>(report.chroma_per_bar.size());

    MelodyConstraint mel = melody ? *melody : extract_melody(reference);
    report.phi_per_bar = melodic_fidelity_per_bar(mel, generation);
    report.melodic_fidelity = report.phi_per_bar.empty()
                                  ? 1.0
                                  : std::accumulate(report.phi_per_bar.begin(),
                                                    report.phi_per_bar.end(), 0.0) /
                                        static_cast<double>(report.phi_per_bar.size());

    TextureProfile realized = extract_profile(generation, &bins);

    std::vector<double> req_rhy, got_rhy, req_poly, got_poly;
    for (int b = 0; b < generation.bar_count(); ++b) {
        if (b < static_cast<int>(requested_bars.size())) {
            req_rhy.push_back(requested_bars[b].rhythmicity);
            got_rhy.push_back(realized.bars[b].rhythmicity_class);
            req_poly.push_back(requested_bars[b].polyphonicity);
            got_poly.push_back(realized.bars[b].polyphonicity_class);
        }
    }
    report.rhythmicity = pooled_spearman(req_rhy, got_rhy);
    report.polyphonicity = pooled_spearman(req_poly, got_poly);

    // Track level: pool every requested (bar, program) pair. A pair the
    // generation leaves silent contributes realized class 0.
    std::vector<double> req_div, got_div, req_avg, got_avg;
    for (const auto& [key, levels] : requested_tracks) {
        auto [bar, program] = key;
        if (bar >= generation.bar_count()) continue;
        int track = -1;
        for (int t = 0; t < static_cast<int>(generation.tracks.size()); ++t)
            if (generation.tracks[t].program == program) track = t;
        bool active = track >= 0 && realized.bars[bar].tracks.count(track) > 0;
        if (levels.pitch_avg) {
            req_avg.push_back(*levels.pitch_avg);
            got_avg.push_back(active ? realized.bars[bar].tracks.at(track).avg_pitch_class : 0);
        }
        if (levels.pitch_diversity) {
            req_div.push_back(*levels.pitch_diversity);
            got_div.push_back(active ? realized.bars[bar].tracks.at(track).pitch_diversity_class : 0);
        }
    }
    report.avg_pitch = pooled_spearman(req_avg, got_avg);
    report.pitch_diversity = pooled_spearman(req_div, got_div);
    return report;
}

EvalReport evaluate(const TransferRequest& request, const GenerationTrace& trace,
                    const BinTable& bins) {
    QuantizedScore reference = split_long_durations(request.reference, 32);
    int bars = trace.score.bar_count();
    if (reference.bar_count() > bars) reference = truncate_bars(reference, bars);
    std::vector<BarControl> requested = !trace.requested.empty() ? trace.requested
                                                                 : request.bar_controls;
    return evaluate_scores(reference, trace.score, requested, request.track_controls,
                           request.melody, bins);
}

namespace {

std::string fmt3(double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << v;
    return os.str();
}

std::string fmt_corr(const Correlation& c) { return c.rho ? fmt3(*c.rho) : "--"; }

} // namespace

std::string report_table(const EvalReport& report) {
    std::ostringstream os;
    os << "Overall fidelity  Melodic fidelity  Rhythm.  Polyph.  Pitch diversity  Average pitch\n";
    os << fmt3(report.overall_fidelity) << "             " << fmt3(report.melodic_fidelity)
       << "             " << fmt_corr(report.rhythmicity) << "    " << fmt_corr(report.polyphonicity)
       << "    " << fmt_corr(report.pitch_diversity) << "            " << fmt_corr(report.avg_pitch)
       << "\n";
    return os.str();
}

} // namespace miditex
