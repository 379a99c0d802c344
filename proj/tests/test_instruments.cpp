#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "miditex/errors.hpp"
#include "miditex/instruments.hpp"

using namespace miditex;

TEST_CASE("note names follow the C4=60 convention") {
    CHECK(note_name_to_midi("C4") == 60);
    CHECK(note_name_to_midi("B3") == 59);
    CHECK(note_name_to_midi("C7") == 96);
    CHECK(note_name_to_midi("Bb1") == 34);
    CHECK(note_name_to_midi("F#3") == 54);
    CHECK(note_name_to_midi("C-1") == 0);
    CHECK(note_name_to_midi("G9") == 127);
    CHECK_THROWS_AS(note_name_to_midi("H2"), Error);
    CHECK_THROWS_AS(note_name_to_midi("C"), Error);
    CHECK_THROWS_AS(note_name_to_midi("A9"), Error); // 129, out of range
    CHECK(note_name_to_midi(midi_to_note_name(61)) == 61);
}

TEST_CASE("the five studied instruments carry the reference registers") {
    InstrumentRegistry reg = InstrumentRegistry::bundled();

    const InstrumentSpec& flute = reg.lookup(73);
    CHECK(flute.register_low == 59);  // B3
    CHECK(flute.register_high == 96); // C7

    const InstrumentSpec& violin = reg.lookup(40);
    CHECK(violin.register_low == 55);   // G3
    CHECK(violin.register_high == 107); // B7

    const InstrumentSpec& cello = reg.lookup(42);
    CHECK(cello.register_low == 36);  // C2
    CHECK(cello.register_high == 81); // A5

    const InstrumentSpec& bassoon = reg.lookup(70);
    CHECK(bassoon.register_low == 34);  // Bb1
    CHECK(bassoon.register_high == 71); // B4

    const InstrumentSpec& trumpet = reg.lookup(56);
    CHECK(trumpet.register_low == 54);  // F#3
    CHECK(trumpet.register_high == 84); // C6
}

TEST_CASE("register midpoints match the reference average notes within a semitone") {
    InstrumentRegistry reg = InstrumentRegistry::bundled();
    // F5 = 77, E3 = 52, A4 = 69, A5 = 81, Bb3 = 58
    CHECK(std::abs(register_midpoint(reg.lookup(73)) - 77) <= 1);
    CHECK(std::abs(register_midpoint(reg.lookup(70)) - 52) <= 1);
    CHECK(std::abs(register_midpoint(reg.lookup(56)) - 69) <= 1);
    CHECK(std::abs(register_midpoint(reg.lookup(40)) - 81) <= 1);
    CHECK(std::abs(register_midpoint(reg.lookup(42)) - 58) <= 1);
}

TEST_CASE("the registry holds 64 instruments with unique programs") {
    InstrumentRegistry reg = InstrumentRegistry::bundled();
    CHECK(reg.size() == 64);
    for (const auto& spec : reg.all()) CHECK(spec.register_low < spec.register_high);
}

TEST_CASE("unknown programs produce a not-in-subset error listing valid ones") {
    InstrumentRegistry reg = InstrumentRegistry::bundled();
    CHECK_THROWS_WITH_AS(reg.lookup(3), doctest::Contains("valid programs"), Error);
    try {
        reg.lookup(3);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NotInSubset);
    }
}

TEST_CASE("degenerate one-semitone register follows the rounding rule") {
    InstrumentSpec spec{0, "x", 60, 61};
    CHECK(register_midpoint(spec) == 61); // 60.5 rounds away from zero
}

TEST_CASE("the bundled registry matches the shipped data file") {
    std::string path = std::string(MIDITEX_DATA_DIR) + "/instruments.txt";
    InstrumentRegistry from_file = InstrumentRegistry::load(path);
    InstrumentRegistry bundled = InstrumentRegistry::bundled();
    REQUIRE(from_file.size() == bundled.size());
    for (const auto& spec : bundled.all()) {
        const InstrumentSpec& other = from_file.lookup(spec.program);
        CHECK(other.name == spec.name);
        CHECK(other.register_low == spec.register_low);
        CHECK(other.register_high == spec.register_high);
    }
}

TEST_CASE("registry parsing rejects malformed lines") {
    CHECK_THROWS_AS(InstrumentRegistry::parse("73, Flute, B3\n", "<t>"), Error);
    CHECK_THROWS_AS(InstrumentRegistry::parse("73, Flute, C7, B3\n", "<t>"), Error);
    CHECK_THROWS_AS(InstrumentRegistry::parse("73, A, C4, C5\n73, B, C4, C5\n", "<t>"), Error);
    CHECK_THROWS_AS(InstrumentRegistry::parse("200, A, C4, C5\n", "<t>"), Error);
}
