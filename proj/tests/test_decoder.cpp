#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "miditex/decoder.hpp"
#include "miditex/metrics.hpp"
#include "test_util.hpp"

using namespace miditex;
using namespace miditex::test;

namespace {

ModelConfig decoder_test_config(int vocab) {
    ModelConfig mc;
    mc.embed_dim = 16;
    mc.encoder_layers = 1;
    mc.decoder_layers = 1;
    mc.heads = 2;
    mc.latent_dim = 4;
    mc.condition_embed_dim = 8;
    mc.context_length = 2048;
    mc.vocab_size = vocab;
    return mc;
}

struct Fixture {
    InstrumentRegistry registry = small_registry();
    GrammarConfig grammar = small_grammar();
    Vocabulary vocab{grammar};
    BinTable bins = fixed_bins();
    Model model{decoder_test_config(Vocabulary(small_grammar()).size()), 1234};

    QuantizedScore reference(Rng& rng, int bars = 3) {
        SynthOptions so;
        so.pieces = 1;
        so.bars = bars;
        so.min_tracks = 2;
        so.max_tracks = 3;
        so.seed = rng.bits();
        so.program_pool = {40, 42, 56, 68, 70, 73};
        return synth_corpus(so, registry)[0];
    }

    TransferRequest request(Rng& rng, bool with_melody, bool auto_instruments) {
        TransferRequest req;
        req.reference = reference(rng);
        req.sampling.seed = rng.bits();
        req.sampling.temperature = 1.0;
        req.sampling.nucleus_p = 0.95;
        if (!auto_instruments) {
            std::vector<int> ensemble = {40, 73};
            req.instrumentation.emplace(req.reference.bar_count(), ensemble);
        }
        if (with_melody) {
            MelodyConstraint melody = extract_melody(req.reference);
            req.melody = assign_instrument(melody, 73, registry);
        }
        return req;
    }
};

} // namespace

TEST_CASE("sample_token obeys masks, temperature and seeding") {
    std::vector<double> dist = {0.1, 0.5, 0.2, 0.2};
    Rng rng(1);

    SUBCASE("a singleton mask is deterministic") {
        SamplingParams sp;
        for (int i = 0; i < 5; ++i) CHECK(sample_token(dist, {2}, sp, rng) == 2);
    }
    SUBCASE("temperature zero is the argmax over the mask") {
        SamplingParams sp;
        sp.temperature = 0.0;
        CHECK(sample_token(dist, {0, 1, 2, 3}, sp, rng) == 1);
        CHECK(sample_token(dist, {0, 2, 3}, sp, rng) == 2); // argmax among masked, ties -> lowest id
    }
    SUBCASE("identical seeds give identical streams") {
        SamplingParams sp;
        sp.nucleus_p = 0.9;
        Rng a(7), b(7);
        for (int i = 0; i < 50; ++i)
            CHECK(sample_token(dist, {0, 1, 2, 3}, sp, a) == sample_token(dist, {0, 1, 2, 3}, sp, b));
    }
    SUBCASE("zero mass over the mask is a dead end") {
        std::vector<double> zeros = {0.0, 0.0, 1.0};
        SamplingParams sp;
        CHECK_THROWS_AS(sample_token(zeros, {0, 1}, sp, rng), Error);
    }
}

TEST_CASE("feasible octaves enumerate reconstructible pitches") {
    // Pitch class 0 within the flute register 59..96: pitches 60, 72, 84, 96.
    auto octs = feasible_octaves(0, 58, 96);
    CHECK(octs == std::vector<int>{4, 5, 6, 7});

    // Non-strict: every pitch <= 127, i.e. octaves -1..9 for pitch class 0.
    auto all = feasible_octaves(0, -1, 127);
    CHECK(all.size() == 11);
    CHECK(feasible_octaves(11, -1, 127).size() == 10); // pc 11: octave 9 would be 131

    // One-note register with no such pitch class.
    CHECK(feasible_octaves(1, 59, 60).empty());
}

TEST_CASE("transfer without melody produces valid sequences of the right length") {
    Fixture fx;
    Rng rng(42);
    for (int i = 0; i < 8; ++i) {
        TransferRequest req = fx.request(rng, false, i % 2 == 0);
        GenerationTrace trace = transfer(req, fx.model, fx.grammar, fx.bins, fx.registry);
        CHECK(validate(trace.tokens, fx.grammar).ok);
        CHECK(trace.score.bar_count() == req.reference.bar_count());
        CHECK(trace.sources.size() == trace.tokens.tokens.size());
    }
}

TEST_CASE("enforced melody reproduces the constraint exactly (phi = 1)") {
    Fixture fx;
    Rng rng(77);
    for (int i = 0; i < 6; ++i) {
        TransferRequest req = fx.request(rng, true, i % 2 == 0);
        GenerationTrace trace = transfer(req, fx.model, fx.grammar, fx.bins, fx.registry);
        REQUIRE(validate(trace.tokens, fx.grammar).ok);
        double phi = melodic_fidelity(*req.melody, trace.score);
        CHECK(phi == 1.0);

        // The melody instrument's bar content equals the constraint verbatim.
        for (int b = 0; b < req.melody->bar_count(); ++b) {
            const MelodyBar& mb = req.melody->bars[b];
            if (mb.events.empty()) continue;
            int track = -1;
            for (int t = 0; t < static_cast<int>(trace.score.tracks.size()); ++t)
                if (trace.score.tracks[t].program == 73) track = t;
            REQUIRE(track >= 0);
            auto events = trace.score.events_in_bar(b, track);
            REQUIRE(events.size() == mb.events.size());
            for (size_t k = 0; k < events.size(); ++k) {
                CHECK(events[k].onset - trace.score.bar_start(b) == mb.events[k].sub_beat);
                CHECK(events[k].pitch == mb.events[k].pitch());
                CHECK(events[k].duration == mb.events[k].duration);
            }
        }
    }
}

TEST_CASE("forced control tokens appear verbatim in the trace") {
    Fixture fx;
    Rng rng(11);
    TransferRequest req = fx.request(rng, false, false);
    req.bar_controls.assign(req.reference.bar_count(), BarControl{7, 2});
    for (int b = 0; b < req.reference.bar_count(); ++b) {
        req.track_controls[{b, 40}] = TrackLevels{5, 3};
        req.track_controls[{b, 73}] = TrackLevels{9, 2};
    }
    GenerationTrace trace = transfer(req, fx.model, fx.grammar, fx.bins, fx.registry);

    CHECK(trace.requested == req.bar_controls);
    for (const auto& t : trace.tokens.tokens) {
        if (t.kind == TokenKind::PitchAvg) CHECK(t.b == (t.a == 40 ? 5 : 9));
        if (t.kind == TokenKind::PitchDiversity) CHECK(t.b == (t.a == 40 ? 3 : 2));
    }
    // Exactly the requested instrumentation is declared in each bar.
    GrammarState state(&fx.grammar);
    for (const auto& t : trace.tokens.tokens)
        if (t.kind == TokenKind::DescriptionTrack) CHECK((t.a == 40 || t.a == 73));
}

TEST_CASE("identical requests and seeds give identical traces") {
    Fixture fx;
    Rng rng(99);
    TransferRequest req = fx.request(rng, true, false);
    GenerationTrace a = transfer(req, fx.model, fx.grammar, fx.bins, fx.registry);
    GenerationTrace b = transfer(req, fx.model, fx.grammar, fx.bins, fx.registry);
    CHECK(a.tokens.tokens == b.tokens.tokens);
    CHECK(a.score == b.score);

    req.sampling.seed += 1;
    GenerationTrace c = transfer(req, fx.model, fx.grammar, fx.bins, fx.registry);
    CHECK(a.tokens.tokens != c.tokens.tokens); // overwhelmingly likely
}

TEST_CASE("melody instrument missing from the instrumentation is rejected") {
    Fixture fx;
    Rng rng(13);
    TransferRequest req = fx.request(rng, true, false);
    std::vector<int> without_flute = {40, 42};
    req.instrumentation.emplace(req.reference.bar_count(), without_flute);
    try {
        transfer(req, fx.model, fx.grammar, fx.bins, fx.registry);
        FAIL("expected a request-inconsistency error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::BadRequest);
    }
}

TEST_CASE("octave inference keeps pitch classes and durations, octaves free") {
    Fixture fx;
    Rng rng(21);
    TransferRequest req = fx.request(rng, true, false);
    req.octave_mode = OctaveMode::Infer;
    GenerationTrace trace = transfer(req, fx.model, fx.grammar, fx.bins, fx.registry);
    REQUIRE(validate(trace.tokens, fx.grammar).ok);

    int flute_track = -1;
    for (int t = 0; t < static_cast<int>(trace.score.tracks.size()); ++t)
        if (trace.score.tracks[t].program == 73) flute_track = t;
    REQUIRE(flute_track >= 0);
    for (int b = 0; b < req.melody->bar_count(); ++b) {
        const MelodyBar& mb = req.melody->bars[b];
        auto events = trace.score.events_in_bar(b, flute_track);
        REQUIRE(events.size() == mb.events.size());
        for (size_t k = 0; k < events.size(); ++k) {
            CHECK(events[k].pitch % 12 == mb.events[k].pitch_class);
            CHECK(events[k].duration == mb.events[k].duration);
            CHECK(events[k].pitch <= 127);
        }
    }
}

TEST_CASE("strict register keeps inferred melody pitches inside the instrument range") {
    Fixture fx;
    Rng rng(31);
    for (int program : {73, 70, 56, 40, 42}) {
        TransferRequest req = fx.request(rng, false, false);
        MelodyConstraint melody = extract_melody(req.reference);
        req.melody = assign_instrument(melody, program, fx.registry);
        std::vector<int> ensemble = {program};
        if (program != 40) ensemble.push_back(40);
        std::sort(ensemble.begin(), ensemble.end());
        req.instrumentation.emplace(req.reference.bar_count(), ensemble);
        req.octave_mode = OctaveMode::Infer;
        req.strict_register = true;

        GenerationTrace trace = transfer(req, fx.model, fx.grammar, fx.bins, fx.registry);
        const InstrumentSpec& spec = fx.registry.lookup(program);
        int track = -1;
        for (int t = 0; t < static_cast<int>(trace.score.tracks.size()); ++t)
            if (trace.score.tracks[t].program == program) track = t;
        REQUIRE(track >= 0);
        for (int b = 0; b < req.melody->bar_count(); ++b)
            for (const auto& ev : trace.score.events_in_bar(b, track))
                if (!req.melody->bars[b].events.empty()) {
                    CHECK(ev.pitch >= spec.register_low);
                    CHECK(ev.pitch <= spec.register_high);
                }
    }
}

TEST_CASE("grammar safety holds across many random requests") {
    Fixture fx;
    Rng rng(2024);
    for (int i = 0; i < 30; ++i) {
        TransferRequest req = fx.request(rng, i % 3 != 0, i % 2 == 0);
        req.sampling.temperature = 0.7 + 0.6 * rng.uniform();
        GenerationTrace trace = transfer(req, fx.model, fx.grammar, fx.bins, fx.registry);
        ValidationResult v = validate(trace.tokens, fx.grammar);
        INFO("request " << i << ": " << v.message);
        CHECK(v.ok);
    }
}
