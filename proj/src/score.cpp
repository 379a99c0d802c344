#include "miditex/score.hpp"

#include <algorithm>
#include <map>

namespace miditex {

int QuantizedScore::bar_of(int onset) const {
    for (int b = 0; b < bar_count(); ++b)
        if (onset < bar_ends[b]) return b;
    fail(ErrorKind::OutOfRange, "onset " + std::to_string(onset) + " beyond the last bar boundary");
}

bool QuantizedScore::empty() const {
    for (const auto& t : tracks)
        if (!t.events.empty()) return false;
    return true;
}

int QuantizedScore::event_count() const {
    int n = 0;
    for (const auto& t : tracks) n += static_cast<int>(t.events.size());
    return n;
}

std::vector<NoteEvent> QuantizedScore::events_in_bar(int bar, int track) const {
    check_bar(bar);
    std::vector<NoteEvent> out;
    int lo = bar_start(bar), hi = bar_ends[bar];
    for (const auto& ev : tracks[track].events)
        if (ev.onset >= lo && ev.onset < hi) out.push_back(ev);
    return out;
}

QuantizedScore canonicalize(QuantizedScore score) {
    // Group tracks by program, ascending.
    std::map<int, std::vector<NoteEvent>> by_program;
    for (const auto& t : score.tracks) {
        auto& dst = by_program[t.program];
        dst.insert(dst.end(), t.events.begin(), t.events.end());
    }

    std::vector<ScoreTrack> tracks;
    int track_index = 0;
    int max_end = 0;
    for (auto& [program, events] : by_program) {
        std::sort(events.begin(), events.end(), [](const NoteEvent& a, const NoteEvent& b) {
            return std::tie(a.onset, a.pitch, a.duration) < std::tie(b.onset, b.pitch, b.duration);
        });
        // Merge overlapping same-pitch events into their union. Abutting
        // events (next.onset == end) stay separate.
        std::vector<NoteEvent> merged;
        for (NoteEvent ev : events) {
            ev.track = track_index;
            bool absorbed = false;
            for (auto it = merged.rbegin(); it != merged.rend(); ++it) {
                if (it->pitch != ev.pitch) continue;
                if (ev.onset < it->onset + it->duration) {
                    int end = std::max(it->onset + it->duration, ev.onset + ev.duration);
                    it->duration = end - it->onset;
                    absorbed = true;
                }
                break;
            }
            if (!absorbed) merged.push_back(ev);
        }
        std::sort(merged.begin(), merged.end(), [](const NoteEvent& a, const NoteEvent& b) {
            return std::tie(a.onset, a.pitch) < std::tie(b.onset, b.pitch);
        });
        for (const auto& ev : merged) max_end = std::max(max_end, ev.onset + ev.duration);
        tracks.push_back(ScoreTrack{program, std::move(merged)});
        ++track_index;
    }
    score.tracks = std::move(tracks);

    int spb = score.subbeats_per_bar();
    int bars = std::max(1, (max_end + spb - 1) / spb);
    score.bar_ends.clear();
    for (int b = 1; b <= bars; ++b) score.bar_ends.push_back(b * spb);
    return score;
}

QuantizedScore split_long_durations(QuantizedScore score, int max_duration) {
    int spb = score.subbeats_per_bar();
    bool changed = false;
    for (auto& track : score.tracks) {
        std::vector<NoteEvent> out;
        for (NoteEvent ev : track.events) {
            while (ev.duration > max_duration) {
                // Cut at the last bar boundary not beyond onset+max_duration;
                // if none lies strictly after the onset, cut at max_duration.
                int limit = ev.onset + max_duration;
                int boundary = (limit / spb) * spb;
                int cut = boundary > ev.onset ? boundary : limit;
                NoteEvent head = ev;
                head.duration = cut - ev.onset;
                out.push_back(head);
                ev.duration -= head.duration;
                ev.onset = cut;
                changed = true;
            }
            out.push_back(ev);
        }
        track.events = std::move(out);
    }
    if (!changed) return score;
    return canonicalize(std::move(score));
}

namespace {

void fnv_mix(uint64_t& h, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
    }
}

} // namespace

uint64_t score_fingerprint(const QuantizedScore& score) {
    uint64_t h = 1469598103934665603ull;
    fnv_mix(h, static_cast<uint64_t>(score.beats_per_bar));
    fnv_mix(h, static_cast<uint64_t>(score.subbeats_per_beat));
    fnv_mix(h, static_cast<uint64_t>(score.bar_count()));
    for (const auto& t : score.tracks) {
        fnv_mix(h, static_cast<uint64_t>(t.program));
        for (const auto& ev : t.events) {
            fnv_mix(h, static_cast<uint64_t>(ev.onset));
            fnv_mix(h, static_cast<uint64_t>(ev.duration));
            fnv_mix(h, static_cast<uint64_t>(ev.pitch));
            fnv_mix(h, static_cast<uint64_t>(ev.velocity));
        }
    }
    return h;
}

uint64_t corpus_fingerprint(const std::vector<QuantizedScore>& corpus) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& s : corpus) fnv_mix(h, score_fingerprint(s));
    return h;
}

} // namespace miditex
