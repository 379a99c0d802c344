#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "miditex/attributes.hpp"
#include "miditex/instruments.hpp"
#include "miditex/score.hpp"

namespace miditex {

enum class TokenKind : uint8_t {
    BOS,
    EOS,
    Bar,
    SubBeat,          // a: position 0..subbeats_per_bar-1
    DescriptionTrack, // a: program
    PitchAvg,         // a: program, b: level 1..13
    PitchDiversity,   // a: program, b: level 1..13
    Track,            // a: program
    PitchClass,       // a: 0..11
    Octave,           // a: -1..9
    Duration,         // a: 1..max_duration
    Velocity,         // a: bin 1..8
};

struct Token {
    TokenKind kind = TokenKind::BOS;
    int16_t a = 0;
    int16_t b = 0;

    static Token bos() { return {TokenKind::BOS, 0, 0}; }
    static Token eos() { return {TokenKind::EOS, 0, 0}; }
    static Token bar() { return {TokenKind::Bar, 0, 0}; }
    static Token sub_beat(int pos) { return {TokenKind::SubBeat, static_cast<int16_t>(pos), 0}; }
    static Token description_track(int program) {
        return {TokenKind::DescriptionTrack, static_cast<int16_t>(program), 0};
    }
    static Token pitch_avg(int program, int level) {
        return {TokenKind::PitchAvg, static_cast<int16_t>(program), static_cast<int16_t>(level)};
    }
    static Token pitch_diversity(int program, int level) {
        return {TokenKind::PitchDiversity, static_cast<int16_t>(program), static_cast<int16_t>(level)};
    }
    static Token track(int program) { return {TokenKind::Track, static_cast<int16_t>(program), 0}; }
    static Token pitch_class(int pc) { return {TokenKind::PitchClass, static_cast<int16_t>(pc), 0}; }
    static Token octave(int oct) { return {TokenKind::Octave, static_cast<int16_t>(oct), 0}; }
    static Token duration(int d) { return {TokenKind::Duration, static_cast<int16_t>(d), 0}; }
    static Token velocity(int bin) { return {TokenKind::Velocity, static_cast<int16_t>(bin), 0}; }

    friend bool operator==(const Token&, const Token&) = default;
    friend auto operator<=>(const Token&, const Token&) = default;
};

// pitch = 12 * (octave + 1) + pitch_class; C4 = 60.
inline int pitch_of(int pitch_class, int octave) { return 12 * (octave + 1) + pitch_class; }
inline int octave_of_pitch(int pitch) { return pitch / 12 - 1; }

std::string token_to_string(const Token& token);
Token token_from_string(const std::string& text);

struct TokenSequence {
    std::vector<Token> tokens;
    // Bar containing each position; the k-th Bar token opens bar k. BOS is -1.
    std::vector<int> bar_index;

    size_t size() const { return tokens.size(); }
};

// Everything the vocabulary and the automaton are parameterized by. One
// config is shared by the grammar, the model and the decoder.
struct GrammarConfig {
    std::vector<int> programs; // ascending; the instrument subset
    int beats_per_bar = 4;
    int subbeats_per_beat = 4;
    int max_duration = 32;
    int velocity_bins = 8;
    int track_levels = 13; // levels per track-level attribute

    int subbeats_per_bar() const { return beats_per_bar * subbeats_per_beat; }
    bool has_program(int program) const;

    static GrammarConfig from_registry(const InstrumentRegistry& registry, int beats_per_bar = 4,
                                       int subbeats_per_beat = 4);
};

// Contiguous token ids for the model. Size is
//   3 + subbeats_per_bar + 3*T + 2*13*T + 12 + 11 + max_duration + velocity_bins
// with T = number of programs.
class Vocabulary {
public:
    explicit Vocabulary(GrammarConfig config);

    int size() const { return size_; }
    int id_of(const Token& token) const;
    Token token_of(int id) const;
    const GrammarConfig& config() const { return config_; }

private:
    GrammarConfig config_;
    int program_slot(int program) const;
    int size_ = 0;
    int off_subbeat_, off_desc_, off_avg_, off_div_, off_track_, off_pc_, off_oct_, off_dur_, off_vel_;
};

// Incremental legality automaton over the per-bar layout:
//   Bar, DescriptionTrack* (ascending), PitchAvg*, PitchDiversity* (same
//   track sets), then SubBeat groups ascending, Track groups ascending
//   within a sub-beat, (PitchClass Octave Duration Velocity)+ tuples in
//   ascending pitch order; every declared track plays at least once before
//   the bar closes.
class GrammarState {
public:
    explicit GrammarState(const GrammarConfig* config);

    bool is_legal(const Token& token, std::string* why = nullptr) const;
    void apply(const Token& token); // throws ErrorKind::Grammar when illegal
    std::vector<Token> legal_next() const;

    bool finished() const { return phase_ == Phase::Done; }
    int bar() const { return bar_; } // -1 before the first Bar token
    int position() const { return applied_; }

    // Declared programs of the open bar, and whether `program` already
    // played in it (used by the constrained decoder).
    const std::vector<int>& declared() const { return declared_; }
    bool has_played(int program) const { return played_.count(program) > 0; }
    int current_subbeat() const { return subbeat_; }

private:
    enum class Phase {
        Start,       // after BOS, expect first Bar
        AfterBar,    // bar open, description block not started
        Desc,        // inside DescriptionTrack block
        Avg,         // inside PitchAvg block
        Div,         // inside PitchDiversity block
        ContentStart,// control blocks done, expect first SubBeat
        AfterSubBeat,// expect first Track of the sub-beat
        AfterTrack,  // expect first PitchClass of the group
        AfterPitchClass,
        AfterOctave,
        AfterDuration,
        AfterVelocity,// tuple complete
        Done,
    };

    bool pitch_class_feasible(int pc) const;
    bool bar_may_close() const;

    const GrammarConfig* config_;
    Phase phase_ = Phase::Start;
    int applied_ = 0;
    int bar_ = -1;
    std::vector<int> declared_;
    std::set<int> played_;
    size_t control_cursor_ = 0; // next declared track expecting PitchAvg/Diversity
    int subbeat_ = -1;
    int track_ = -1;       // program of the open track group
    int last_pitch_ = -1;  // last completed pitch in the open group
    int pending_pc_ = -1;
};

struct ValidationResult {
    bool ok = true;
    int position = -1; // first offending token position
    std::string message;
    std::vector<Token> expected; // legal set at that position
};

// Encodes a score and its texture profile to the token stream. The profile
// must cover every active (bar, track) pair; durations must not exceed
// config.max_duration (split_long_durations first).
TokenSequence encode(const QuantizedScore& score, const TextureProfile& profile,
                     const GrammarConfig& config);

struct DecodeResult {
    QuantizedScore score;
    TextureProfile profile;
};

// Inverse of encode. Track-level classes come from the control tokens;
// raw values (and bar-level classes when a bin table is given) are
// recomputed from the decoded notes.
DecodeResult decode(const TokenSequence& tokens, const GrammarConfig& config,
                    const BinTable* bins = nullptr);

ValidationResult validate(const TokenSequence& tokens, const GrammarConfig& config);

// Exact continuation set after a valid prefix (prefix includes BOS, not EOS).
// Throws citing the first violation when the prefix itself is invalid.
std::vector<Token> legal_next(const TokenSequence& prefix, const GrammarConfig& config);

std::string sequence_to_text(const TokenSequence& tokens);
TokenSequence sequence_from_text(const std::string& text);

} // namespace miditex
