#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "test_util.hpp"

using namespace miditex;
using namespace miditex::test;

namespace {

// Brute-force per-sub-beat enumeration the implementations must match.
int oracle_rhythmicity(const QuantizedScore& s, int bar) {
    int lo = s.bar_start(bar), hi = s.bar_ends[bar];
    int count = 0;
    for (int sb = lo; sb < hi; ++sb) {
        bool onset = false;
        for (const auto& t : s.tracks)
            for (const auto& ev : t.events)
                if (ev.onset == sb) onset = true;
        if (onset) ++count;
    }
    return count;
}

double oracle_polyphonicity(const QuantizedScore& s, int bar) {
    int lo = s.bar_start(bar), hi = s.bar_ends[bar];
    double total = 0;
    for (int sb = lo; sb < hi; ++sb)
        for (const auto& t : s.tracks)
            for (const auto& ev : t.events)
                if (ev.onset <= sb && sb < ev.onset + ev.duration) total += 1;
    return total / (hi - lo);
}

} // namespace

TEST_CASE("rhythmicity counts onset sub-beats across tracks") {
    QuantizedScore empty = make_score({40}, {{0, 16, 1, 60}}); // note in bar 1, bar 0 empty
    CHECK(rhythmicity(empty, 0) == 0);

    QuantizedScore beats =
        make_score({40, 42}, {{0, 0, 2, 70}, {1, 4, 2, 50}, {0, 8, 2, 70}, {1, 12, 2, 50}});
    CHECK(rhythmicity(beats, 0) == 4);

    QuantizedScore chord = make_score(
        {40}, {{0, 0, 16, 60}, {0, 0, 16, 64}, {0, 0, 16, 67}, {0, 0, 16, 72}});
    CHECK(rhythmicity(chord, 0) == 1); // one onset sub-beat, held notes do not count
}

TEST_CASE("polyphonicity averages sounding notes per sub-beat") {
    QuantizedScore empty = make_score({40}, {{0, 16, 1, 60}});
    CHECK(polyphonicity(empty, 0) == 0.0);

    QuantizedScore chord = make_score(
        {40}, {{0, 0, 16, 60}, {0, 0, 16, 64}, {0, 0, 16, 67}, {0, 0, 16, 72}});
    CHECK(polyphonicity(chord, 0) == doctest::Approx(4.0));

    QuantizedScore half = make_score({40}, {{0, 0, 8, 60}});
    CHECK(polyphonicity(half, 0) == doctest::Approx(0.5));
}

TEST_CASE("average pitch rounds to the nearest ten and clamps to 10..130") {
    QuantizedScore triad = make_score({40}, {{0, 0, 4, 60}, {0, 4, 4, 62}, {0, 8, 4, 64}});
    AvgPitch ap = avg_pitch(triad, 0, 0);
    CHECK(ap.raw == doctest::Approx(62.0));
    CHECK(ap.cls == 6);

    QuantizedScore top = make_score({40}, {{0, 0, 4, 127}});
    CHECK(avg_pitch(top, 0, 0).cls == 13); // 127 -> 130 -> 13

    QuantizedScore low = make_score({40}, {{0, 0, 4, 10}});
    CHECK(avg_pitch(low, 0, 0).cls == 1);

    QuantizedScore lowest = make_score({40}, {{0, 0, 4, 2}});
    CHECK(avg_pitch(lowest, 0, 0).cls == 1); // 2 -> 0 -> clamped to 10
}

TEST_CASE("pitch diversity counts distinct pitch classes") {
    QuantizedScore s = make_score({40}, {{0, 0, 4, 60}, {0, 4, 4, 72}, {0, 8, 4, 64}});
    CHECK(pitch_diversity(s, 0, 0) == 2); // C, C, E -> {0, 4}

    std::vector<NoteSpec> chromatic;
    for (int i = 0; i < 12; ++i) chromatic.push_back({0, i, 1, 60 + i});
    CHECK(pitch_diversity(make_score({40}, chromatic), 0, 0) == 12);

    QuantizedScore repeated = make_score({40}, {{0, 0, 2, 60}, {0, 4, 2, 60}, {0, 8, 2, 60}});
    CHECK(pitch_diversity(repeated, 0, 0) == 1);
}

TEST_CASE("inactive bar-track pairs raise an error") {
    QuantizedScore s = make_score({40, 42}, {{0, 0, 4, 70}}, 2);
    CHECK_THROWS_AS(avg_pitch(s, 0, 1), Error);
    CHECK_THROWS_AS(pitch_diversity(s, 1, 0), Error);
    CHECK_THROWS_AS(rhythmicity(s, 5), Error);
}

TEST_CASE("classify is left-closed and monotone") {
    std::array<double, 7> edges = {1, 2, 3, 4, 5, 6, 7};
    CHECK(classify(0.5, edges) == 1);
    CHECK(classify(100, edges) == 8);
    for (int k = 1; k <= 7; ++k) CHECK(classify(edges[k - 1], edges) == k);

    double prev = -1e9;
    int prev_class = 1;
    for (double raw = 0; raw <= 8; raw += 0.125) {
        int cls = classify(raw, edges);
        CHECK(cls >= prev_class);
        prev_class = cls;
        prev = raw;
    }
    (void)prev;
}

TEST_CASE("fit_bins reproduces the exact quantiles of a uniform grid") {
    // 16 bars whose rhythmicity values are exactly 1..16.
    std::vector<QuantizedScore> corpus;
    for (int k = 1; k <= 16; ++k) {
        std::vector<NoteSpec> notes;
        for (int i = 0; i < k; ++i) notes.push_back({0, i, 1, 70});
        corpus.push_back(make_score({40}, notes));
    }
    BinTable bins = fit_bins(corpus);
    std::array<double, 7> expected = {2, 4, 6, 8, 10, 12, 14};
    for (int i = 0; i < 7; ++i) CHECK(bins.rhythmicity_edges[i] == expected[i]);
}

TEST_CASE("constant corpora collapse every bar into class 1") {
    std::vector<QuantizedScore> corpus;
    for (int i = 0; i < 10; ++i) corpus.push_back(make_score({40}, {{0, 0, 4, 70}}));
    BinTable bins = fit_bins(corpus);
    CHECK(classify(1.0, bins.rhythmicity_edges) == 1);
}

TEST_CASE("small corpora are rejected") {
    std::vector<QuantizedScore> corpus;
    for (int i = 0; i < 7; ++i) corpus.push_back(make_score({40}, {{0, 0, 4, 70}}));
    try {
        fit_bins(corpus);
        FAIL("expected corpus-too-small");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::CorpusTooSmall);
    }
}

TEST_CASE("attributes equal the brute-force oracle on random bars") {
    Rng rng(7);
    int bars_checked = 0;
    while (bars_checked < 600) {
        QuantizedScore s = small_random_score(rng, 2, 3);
        for (int b = 0; b < s.bar_count(); ++b) {
            CHECK(rhythmicity(s, b) == oracle_rhythmicity(s, b));
            CHECK(polyphonicity(s, b) == oracle_polyphonicity(s, b)); // exact: same integer sums
            for (int t = 0; t < static_cast<int>(s.tracks.size()); ++t) {
                auto events = s.events_in_bar(b, t);
                if (events.empty()) continue;
                double sum = 0;
                std::set<int> classes;
                for (const auto& ev : events) {
                    sum += ev.pitch;
                    classes.insert(ev.pitch % 12);
                }
                CHECK(avg_pitch(s, b, t).raw == sum / events.size());
                CHECK(pitch_diversity(s, b, t) == static_cast<int>(classes.size()));
            }
            ++bars_checked;
        }
    }
}

TEST_CASE("bar-level attributes are invariant under track reordering") {
    Rng rng(11);
    for (int i = 0; i < 40; ++i) {
        QuantizedScore s = small_random_score(rng, 2, 3);
        QuantizedScore shuffled = s;
        std::reverse(shuffled.tracks.begin(), shuffled.tracks.end());
        shuffled = canonicalize(std::move(shuffled));
        while (shuffled.bar_count() < s.bar_count())
            shuffled.bar_ends.push_back((shuffled.bar_count() + 1) * shuffled.subbeats_per_bar());
        for (int b = 0; b < s.bar_count(); ++b) {
            CHECK(rhythmicity(s, b) == rhythmicity(shuffled, b));
            CHECK(polyphonicity(s, b) == polyphonicity(shuffled, b));
        }
    }
}

TEST_CASE("extract_profile covers exactly the active pairs") {
    QuantizedScore s = make_score({40, 73}, {{0, 0, 4, 60}, {1, 16, 4, 80}}, 2);
    BinTable bins = fixed_bins();
    TextureProfile profile = extract_profile(s, &bins);
    CHECK(profile.covers(0, 0));
    CHECK(!profile.covers(0, 1));
    CHECK(!profile.covers(1, 0));
    CHECK(profile.covers(1, 1));
    CHECK(profile.bars[0].rhythmicity_class >= 1);
}
