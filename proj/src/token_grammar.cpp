#include "miditex/token_grammar.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "miditex/midi_io.hpp"

namespace miditex {

namespace {

const char* kind_name(TokenKind kind) {
    switch (kind) {
    case TokenKind::BOS: return "BOS";
    case TokenKind::EOS: return "EOS";
    case TokenKind::Bar: return "Bar";
    case TokenKind::SubBeat: return "SubBeat";
    case TokenKind::DescriptionTrack: return "DescriptionTrack";
    case TokenKind::PitchAvg: return "PitchAvg";
    case TokenKind::PitchDiversity: return "PitchDiversity";
    case TokenKind::Track: return "Track";
    case TokenKind::PitchClass: return "PitchClass";
    case TokenKind::Octave: return "Octave";
    case TokenKind::Duration: return "Duration";
    case TokenKind::Velocity: return "Velocity";
    }
    return "?";
}

} // namespace

std::string token_to_string(const Token& token) {
    switch (token.kind) {
    case TokenKind::BOS:
    case TokenKind::EOS:
    case TokenKind::Bar:
        return kind_name(token.kind);
    case TokenKind::PitchAvg:
    case TokenKind::PitchDiversity:
        return std::string(kind_name(token.kind)) + "(" + std::to_string(token.a) + "," +
               std::to_string(token.b) + ")";
    default:
        return std::string(kind_name(token.kind)) + "(" + std::to_string(token.a) + ")";
    }
}

Token token_from_string(const std::string& text) {
    auto open = text.find('(');
    std::string name = text.substr(0, open);
    int a = 0, b = 0;
    int argc = 0;
    if (open != std::string::npos) {
        auto close = text.find(')', open);
        if (close == std::string::npos)
            fail(ErrorKind::Format, "unbalanced parenthesis in token '" + text + "'");
        std::string args = text.substr(open + 1, close - open - 1);
        auto comma = args.find(',');
        try {
            if (comma == std::string::npos) {
                a = std::stoi(args);
                argc = 1;
            } else {
                a = std::stoi(args.substr(0, comma));
                b = std::stoi(args.substr(comma + 1));
                argc = 2;
            }
        } catch (const std::exception&) {
            fail(ErrorKind::Format, "bad token arguments in '" + text + "'");
        }
    }
    static const std::map<std::string, std::pair<TokenKind, int>> kKinds = {
        {"BOS", {TokenKind::BOS, 0}},
        {"EOS", {TokenKind::EOS, 0}},
        {"Bar", {TokenKind::Bar, 0}},
        {"SubBeat", {TokenKind::SubBeat, 1}},
        {"DescriptionTrack", {TokenKind::DescriptionTrack, 1}},
        {"PitchAvg", {TokenKind::PitchAvg, 2}},
        {"PitchDiversity", {TokenKind::PitchDiversity, 2}},
        {"Track", {TokenKind::Track, 1}},
        {"PitchClass", {TokenKind::PitchClass, 1}},
        {"Octave", {TokenKind::Octave, 1}},
        {"Duration", {TokenKind::Duration, 1}},
        {"Velocity", {TokenKind::Velocity, 1}},
    };
    auto it = kKinds.find(name);
    if (it == kKinds.end()) fail(ErrorKind::Format, "unknown token '" + text + "'");
    if (argc != it->second.second)
        fail(ErrorKind::Format, "token '" + text + "' has the wrong number of arguments");
    return Token{it->second.first, static_cast<int16_t>(a), static_cast<int16_t>(b)};
}

bool GrammarConfig::has_program(int program) const {
    return std::binary_search(programs.begin(), programs.end(), program);
}

GrammarConfig GrammarConfig::from_registry(const InstrumentRegistry& registry, int beats_per_bar,
                                           int subbeats_per_beat) {
    GrammarConfig config;
    for (const auto& spec : registry.all()) config.programs.push_back(spec.program);
    config.beats_per_bar = beats_per_bar;
    config.subbeats_per_beat = subbeats_per_beat;
    return config;
}

Vocabulary::Vocabulary(GrammarConfig config) : config_(std::move(config)) {
    int T = static_cast<int>(config_.programs.size());
    int S = config_.subbeats_per_bar();
    int L = config_.track_levels;
    off_subbeat_ = 3;
    off_desc_ = off_subbeat_ + S;
    off_avg_ = off_desc_ + T;
    off_div_ = off_avg_ + T * L;
    off_track_ = off_div_ + T * L;
    off_pc_ = off_track_ + T;
    off_oct_ = off_pc_ + 12;
    off_dur_ = off_oct_ + 11;
    off_vel_ = off_dur_ + config_.max_duration;
    size_ = off_vel_ + config_.velocity_bins;
}

int Vocabulary::program_slot(int program) const {
    auto it = std::lower_bound(config_.programs.begin(), config_.programs.end(), program);
    if (it == config_.programs.end() || *it != program)
        fail(ErrorKind::NotInSubset, "program " + std::to_string(program) + " not in the vocabulary");
    return static_cast<int>(it - config_.programs.begin());
}

int Vocabulary::id_of(const Token& t) const {
    auto check = [&](bool ok) {
        if (!ok) fail(ErrorKind::OutOfRange, "token " + token_to_string(t) + " outside the vocabulary");
    };
    int L = config_.track_levels;
    switch (t.kind) {
    case TokenKind::BOS: return 0;
    case TokenKind::EOS: return 1;
    case TokenKind::Bar: return 2;
    case TokenKind::SubBeat:
        check(t.a >= 0 && t.a < config_.subbeats_per_bar());
        return off_subbeat_ + t.a;
    case TokenKind::DescriptionTrack: return off_desc_ + program_slot(t.a);
    case TokenKind::PitchAvg:
        check(t.b >= 1 && t.b <= L);
        return off_avg_ + program_slot(t.a) * L + (t.b - 1);
    case TokenKind::PitchDiversity:
        check(t.b >= 1 && t.b <= L);
        return off_div_ + program_slot(t.a) * L + (t.b - 1);
    case TokenKind::Track: return off_track_ + program_slot(t.a);
    case TokenKind::PitchClass:
        check(t.a >= 0 && t.a < 12);
        return off_pc_ + t.a;
    case TokenKind::Octave:
        check(t.a >= -1 && t.a <= 9);
        return off_oct_ + (t.a + 1);
    case TokenKind::Duration:
        check(t.a >= 1 && t.a <= config_.max_duration);
        return off_dur_ + (t.a - 1);
    case TokenKind::Velocity:
        check(t.a >= 1 && t.a <= config_.velocity_bins);
        return off_vel_ + (t.a - 1);
    }
    fail(ErrorKind::Internal, "unhandled token kind");
}

Token Vocabulary::token_of(int id) const {
    if (id < 0 || id >= size_) fail(ErrorKind::OutOfRange, "token id " + std::to_string(id));
    int L = config_.track_levels;
    if (id == 0) return Token::bos();
    if (id == 1) return Token::eos();
    if (id == 2) return Token::bar();
    if (id < off_desc_) return Token::sub_beat(id - off_subbeat_);
    if (id < off_avg_) return Token::description_track(config_.programs[id - off_desc_]);
    if (id < off_div_) {
        int rel = id - off_avg_;
        return Token::pitch_avg(config_.programs[rel / L], rel % L + 1);
    }
    if (id < off_track_) {
        int rel = id - off_div_;
        return Token::pitch_diversity(config_.programs[rel / L], rel % L + 1);
    }
    if (id < off_pc_) return Token::track(config_.programs[id - off_track_]);
    if (id < off_oct_) return Token::pitch_class(id - off_pc_);
    if (id < off_dur_) return Token::octave(id - off_oct_ - 1);
    if (id < off_vel_) return Token::duration(id - off_dur_ + 1);
    return Token::velocity(id - off_vel_ + 1);
}

GrammarState::GrammarState(const GrammarConfig* config) : config_(config) {}

bool GrammarState::pitch_class_feasible(int pc) const {
    int max_pitch = pc + 12 * ((127 - pc) / 12);
    return max_pitch > last_pitch_;
}

bool GrammarState::bar_may_close() const { return played_.size() == declared_.size(); }

bool GrammarState::is_legal(const Token& t, std::string* why) const {
    auto no = [&](const std::string& reason) {
        if (why) *why = reason;
        return false;
    };
    switch (phase_) {
    case Phase::Start:
        if (t.kind == TokenKind::Bar) return true;
        return no("expected the first Bar token");
    case Phase::AfterBar:
        if (t.kind == TokenKind::DescriptionTrack) {
            if (!config_->has_program(t.a)) return no("program not in the subset");
            return true;
        }
        if (t.kind == TokenKind::Bar || t.kind == TokenKind::EOS) return true;
        return no("expected DescriptionTrack, Bar or EOS after Bar");
    case Phase::Desc:
        if (t.kind == TokenKind::DescriptionTrack) {
            if (!config_->has_program(t.a)) return no("program not in the subset");
            if (t.a <= declared_.back()) return no("DescriptionTrack programs must strictly ascend");
            return true;
        }
        if (t.kind == TokenKind::PitchAvg) {
            if (t.a != declared_.front()) return no("PitchAvg block must follow declaration order");
            if (t.b < 1 || t.b > config_->track_levels) return no("PitchAvg level out of range");
            return true;
        }
        return no("expected DescriptionTrack or the PitchAvg block");
    case Phase::Avg:
        if (control_cursor_ < declared_.size()) {
            if (t.kind != TokenKind::PitchAvg) return no("expected PitchAvg for every declared track");
            if (t.a != declared_[control_cursor_]) return no("PitchAvg must follow declaration order");
            if (t.b < 1 || t.b > config_->track_levels) return no("PitchAvg level out of range");
            return true;
        }
        if (t.kind != TokenKind::PitchDiversity) return no("expected the PitchDiversity block");
        if (t.a != declared_.front()) return no("PitchDiversity must follow declaration order");
        if (t.b < 1 || t.b > config_->track_levels) return no("PitchDiversity level out of range");
        return true;
    case Phase::Div:
        if (t.kind != TokenKind::PitchDiversity)
            return no("expected PitchDiversity for every declared track");
        if (control_cursor_ >= declared_.size()) return no("PitchDiversity block already complete");
        if (t.a != declared_[control_cursor_]) return no("PitchDiversity must follow declaration order");
        if (t.b < 1 || t.b > config_->track_levels) return no("PitchDiversity level out of range");
        return true;
    case Phase::ContentStart:
        if (t.kind != TokenKind::SubBeat) return no("expected the first SubBeat of the bar");
        if (t.a < 0 || t.a >= config_->subbeats_per_bar()) return no("SubBeat position out of range");
        return true;
    case Phase::AfterSubBeat:
        if (t.kind != TokenKind::Track) return no("expected a Track group after SubBeat");
        if (!std::binary_search(declared_.begin(), declared_.end(), t.a))
            return no("Track program was not declared in this bar");
        if (subbeat_ == config_->subbeats_per_bar() - 1)
            for (int u : declared_)
                if (u != t.a && u < t.a && !played_.count(u))
                    return no("would strand an unplayed declared track in the last sub-beat");
        return true;
    case Phase::AfterTrack:
        if (t.kind != TokenKind::PitchClass) return no("expected PitchClass to open a note tuple");
        if (t.a < 0 || t.a >= 12) return no("PitchClass out of range");
        return true;
    case Phase::AfterPitchClass: {
        if (t.kind != TokenKind::Octave) return no("expected Octave after PitchClass");
        if (t.a < -1 || t.a > 9) return no("Octave out of range");
        int pitch = pitch_of(pending_pc_, t.a);
        if (pitch > 127) return no("pitch above 127");
        if (pitch <= last_pitch_) return no("tuples must ascend in pitch within a group");
        return true;
    }
    case Phase::AfterOctave:
        if (t.kind != TokenKind::Duration) return no("expected Duration after Octave");
        if (t.a < 1 || t.a > config_->max_duration) return no("Duration out of range");
        return true;
    case Phase::AfterDuration:
        if (t.kind != TokenKind::Velocity) return no("expected Velocity after Duration");
        if (t.a < 1 || t.a > config_->velocity_bins) return no("Velocity bin out of range");
        return true;
    case Phase::AfterVelocity:
        switch (t.kind) {
        case TokenKind::PitchClass:
            if (t.a < 0 || t.a >= 12) return no("PitchClass out of range");
            if (!pitch_class_feasible(t.a))
                return no("no octave yields an ascending pitch for this pitch class");
            return true;
        case TokenKind::Track:
            if (!std::binary_search(declared_.begin(), declared_.end(), t.a))
                return no("Track program was not declared in this bar");
            if (t.a <= track_) return no("Track groups must strictly ascend within a sub-beat");
            if (subbeat_ == config_->subbeats_per_bar() - 1)
                for (int u : declared_)
                    if (u != t.a && u < t.a && !played_.count(u))
                        return no("would strand an unplayed declared track in the last sub-beat");
            return true;
        case TokenKind::SubBeat:
            if (t.a < 0 || t.a >= config_->subbeats_per_bar()) return no("SubBeat position out of range");
            if (t.a <= subbeat_) return no("SubBeat positions must strictly ascend within a bar");
            return true;
        case TokenKind::Bar:
        case TokenKind::EOS:
            if (!bar_may_close()) return no("every declared track must play before the bar closes");
            return true;
        default:
            return no("expected PitchClass, Track, SubBeat, Bar or EOS after a tuple");
        }
    case Phase::Done:
        return no("nothing may follow EOS");
    }
    return no("unreachable");
}

void GrammarState::apply(const Token& t) {
    std::string why;
    if (!is_legal(t, &why)) {
        std::string expected;
        for (const auto& tok : legal_next()) {
            if (!expected.empty()) expected += " ";
            expected += token_to_string(tok);
            if (expected.size() > 160) {
                expected += " ...";
                break;
            }
        }
        fail(ErrorKind::Grammar, "illegal token " + token_to_string(t) + " at position " +
                                     std::to_string(applied_) + ": " + why +
                                     (expected.empty() ? "" : "; legal here: " + expected));
    }
    ++applied_;
    switch (t.kind) {
    case TokenKind::Bar:
        ++bar_;
        declared_.clear();
        played_.clear();
        control_cursor_ = 0;
        subbeat_ = -1;
        track_ = -1;
        last_pitch_ = -1;
        pending_pc_ = -1;
        phase_ = Phase::AfterBar;
        break;
    case TokenKind::EOS:
        phase_ = Phase::Done;
        break;
    case TokenKind::DescriptionTrack:
        declared_.push_back(t.a);
        phase_ = Phase::Desc;
        break;
    case TokenKind::PitchAvg:
        if (phase_ == Phase::Desc) control_cursor_ = 0;
        ++control_cursor_;
        phase_ = Phase::Avg;
        break;
    case TokenKind::PitchDiversity:
        if (phase_ == Phase::Avg) control_cursor_ = 0;
        ++control_cursor_;
        phase_ = control_cursor_ == declared_.size() ? Phase::ContentStart : Phase::Div;
        break;
    case TokenKind::SubBeat:
        subbeat_ = t.a;
        track_ = -1;
        last_pitch_ = -1;
        phase_ = Phase::AfterSubBeat;
        break;
    case TokenKind::Track:
        track_ = t.a;
        played_.insert(t.a);
        last_pitch_ = -1;
        phase_ = Phase::AfterTrack;
        break;
    case TokenKind::PitchClass:
        pending_pc_ = t.a;
        phase_ = Phase::AfterPitchClass;
        break;
    case TokenKind::Octave:
        last_pitch_ = pitch_of(pending_pc_, t.a);
        pending_pc_ = -1;
        phase_ = Phase::AfterOctave;
        break;
    case TokenKind::Duration:
        phase_ = Phase::AfterDuration;
        break;
    case TokenKind::Velocity:
        phase_ = Phase::AfterVelocity;
        break;
    case TokenKind::BOS:
        fail(ErrorKind::Grammar, "BOS may only start a sequence");
    }
}

std::vector<Token> GrammarState::legal_next() const {
    std::vector<Token> out;
    auto add = [&](const Token& t) {
        if (is_legal(t)) out.push_back(t);
    };
    switch (phase_) {
    case Phase::Start:
        add(Token::bar());
        break;
    case Phase::AfterBar:
        for (int p : config_->programs) add(Token::description_track(p));
        add(Token::bar());
        add(Token::eos());
        break;
    case Phase::Desc:
        for (int p : config_->programs) add(Token::description_track(p));
        for (int l = 1; l <= config_->track_levels; ++l)
            add(Token::pitch_avg(declared_.front(), l));
        break;
    case Phase::Avg:
        if (control_cursor_ < declared_.size())
            for (int l = 1; l <= config_->track_levels; ++l)
                add(Token::pitch_avg(declared_[control_cursor_], l));
        else
            for (int l = 1; l <= config_->track_levels; ++l)
                add(Token::pitch_diversity(declared_.front(), l));
        break;
    case Phase::Div:
        for (int l = 1; l <= config_->track_levels; ++l)
            add(Token::pitch_diversity(declared_[control_cursor_], l));
        break;
    case Phase::ContentStart:
        for (int s = 0; s < config_->subbeats_per_bar(); ++s) add(Token::sub_beat(s));
        break;
    case Phase::AfterSubBeat:
        for (int p : declared_) add(Token::track(p));
        break;
    case Phase::AfterTrack:
        for (int pc = 0; pc < 12; ++pc) add(Token::pitch_class(pc));
        break;
    case Phase::AfterPitchClass:
        for (int o = -1; o <= 9; ++o) add(Token::octave(o));
        break;
    case Phase::AfterOctave:
        for (int d = 1; d <= config_->max_duration; ++d) add(Token::duration(d));
        break;
    case Phase::AfterDuration:
        for (int v = 1; v <= config_->velocity_bins; ++v) add(Token::velocity(v));
        break;
    case Phase::AfterVelocity:
        for (int pc = 0; pc < 12; ++pc) add(Token::pitch_class(pc));
        for (int p : declared_) add(Token::track(p));
        for (int s = subbeat_ + 1; s < config_->subbeats_per_bar(); ++s) add(Token::sub_beat(s));
        add(Token::bar());
        add(Token::eos());
        break;
    case Phase::Done:
        break;
    }
    return out;
}

TokenSequence encode(const QuantizedScore& score, const TextureProfile& profile,
                     const GrammarConfig& config) {
    if (score.subbeats_per_bar() != config.subbeats_per_bar() ||
        score.beats_per_bar != config.beats_per_bar)
        fail(ErrorKind::Format, "score grid does not match the grammar configuration");
    for (const auto& track : score.tracks) {
        if (!config.has_program(track.program))
            fail(ErrorKind::NotInSubset,
                 "program " + std::to_string(track.program) + " not in the configured subset");
        for (const auto& ev : track.events)
            if (ev.duration > config.max_duration)
                fail(ErrorKind::Format, "event duration " + std::to_string(ev.duration) +
                                            " exceeds the maximum token duration " +
                                            std::to_string(config.max_duration) +
                                            "; split long durations first");
    }

    TokenSequence seq;
    auto put = [&](const Token& t, int bar) {
        seq.tokens.push_back(t);
        seq.bar_index.push_back(bar);
    };
    put(Token::bos(), -1);

    for (int b = 0; b < score.bar_count(); ++b) {
        put(Token::bar(), b);
        int lo = score.bar_start(b), hi = score.bar_ends[b];

        std::vector<int> active; // track indices, already ascending by program
        for (int t = 0; t < static_cast<int>(score.tracks.size()); ++t)
            if (!score.events_in_bar(b, t).empty()) active.push_back(t);

        for (int t : active) put(Token::description_track(score.tracks[t].program), b);
        for (int t : active) {
            if (!profile.covers(b, t))
                fail(ErrorKind::IncompleteProfile, "profile is missing bar " + std::to_string(b) +
                                                       ", track " + std::to_string(t));
            put(Token::pitch_avg(score.tracks[t].program, profile.bars[b].tracks.at(t).avg_pitch_class), b);
        }
        for (int t : active)
            put(Token::pitch_diversity(score.tracks[t].program,
                                       profile.bars[b].tracks.at(t).pitch_diversity_class), b);

        for (int s = lo; s < hi; ++s) {
            bool subbeat_open = false;
            for (int t : active) {
                std::vector<const NoteEvent*> here;
                for (const auto& ev : score.tracks[t].events)
                    if (ev.onset == s) here.push_back(&ev);
                if (here.empty()) continue;
                if (!subbeat_open) {
                    put(Token::sub_beat(s - lo), b);
                    subbeat_open = true;
                }
                put(Token::track(score.tracks[t].program), b);
                for (const auto* ev : here) { // already ascending in pitch
                    put(Token::pitch_class(ev->pitch % 12), b);
                    put(Token::octave(octave_of_pitch(ev->pitch)), b);
                    put(Token::duration(ev->duration), b);
                    put(Token::velocity(velocity_bin(ev->velocity)), b);
                }
            }
        }
    }
    put(Token::eos(), score.bar_count() - 1);
    return seq;
}

ValidationResult validate(const TokenSequence& tokens, const GrammarConfig& config) {
    ValidationResult res;
    auto reject = [&](int pos, const std::string& msg, std::vector<Token> expected) {
        res.ok = false;
        res.position = pos;
        res.message = msg;
        res.expected = std::move(expected);
        return res;
    };
    if (tokens.tokens.empty()) return reject(0, "empty sequence", {Token::bos()});
    if (tokens.tokens[0].kind != TokenKind::BOS)
        return reject(0, "sequence must start with BOS", {Token::bos()});

    GrammarState state(&config);
    for (size_t i = 1; i < tokens.tokens.size(); ++i) {
        std::string why;
        if (state.finished())
            return reject(static_cast<int>(i), "tokens after EOS", {});
        if (!state.is_legal(tokens.tokens[i], &why))
            return reject(static_cast<int>(i), why, state.legal_next());
        state.apply(tokens.tokens[i]);
    }
    if (!state.finished())
        return reject(static_cast<int>(tokens.tokens.size()), "sequence ends before EOS",
                      state.legal_next());
    return res;
}

std::vector<Token> legal_next(const TokenSequence& prefix, const GrammarConfig& config) {
    if (prefix.tokens.empty() || prefix.tokens[0].kind != TokenKind::BOS)
        fail(ErrorKind::Grammar, "prefix must start with BOS");
    GrammarState state(&config);
    for (size_t i = 1; i < prefix.tokens.size(); ++i) state.apply(prefix.tokens[i]);
    return state.legal_next();
}

DecodeResult decode(const TokenSequence& tokens, const GrammarConfig& config, const BinTable* bins) {
    ValidationResult v = validate(tokens, config);
    if (!v.ok)
        fail(ErrorKind::Grammar,
             "token sequence rejected at position " + std::to_string(v.position) + ": " + v.message);

    // First pass: programs ever declared, in ascending order.
    std::vector<int> programs;
    for (const auto& t : tokens.tokens)
        if (t.kind == TokenKind::DescriptionTrack) programs.push_back(t.a);
    std::sort(programs.begin(), programs.end());
    programs.erase(std::unique(programs.begin(), programs.end()), programs.end());
    std::map<int, int> track_of_program;
    for (size_t i = 0; i < programs.size(); ++i) track_of_program[programs[i]] = static_cast<int>(i);

    QuantizedScore score;
    score.beats_per_bar = config.beats_per_bar;
    score.subbeats_per_beat = config.subbeats_per_beat;
    for (int p : programs) score.tracks.push_back(ScoreTrack{p, {}});

    struct Claim {
        int avg = 0, div = 0;
    };
    std::vector<std::map<int, Claim>> claims; // per bar: track -> claimed classes

    int bar = -1, subbeat = -1, track = -1, pc = -1, pitch = -1, dur = 0;
    int spb = config.subbeats_per_bar();
    for (const auto& t : tokens.tokens) {
        switch (t.kind) {
        case TokenKind::Bar:
            ++bar;
            claims.emplace_back();
            break;
        case TokenKind::SubBeat: subbeat = t.a; break;
        case TokenKind::Track: track = track_of_program.at(t.a); break;
        case TokenKind::PitchClass: pc = t.a; break;
        case TokenKind::Octave: pitch = pitch_of(pc, t.a); break;
        case TokenKind::Duration: dur = t.a; break;
        case TokenKind::Velocity: {
            NoteEvent ev;
            ev.onset = bar * spb + subbeat;
            ev.duration = dur;
            ev.pitch = pitch;
            ev.velocity = velocity_bin_representative(t.a);
            ev.track = track;
            score.tracks[track].events.push_back(ev);
            break;
        }
        case TokenKind::EOS: {
            // Sampled durations may overhang the final bar; clip so the
            // decoded score keeps exactly the sequence's bar count. Encoder
            // output never overhangs (its bar list covers every note end).
            int piece_end = (bar + 1) * spb;
            for (auto& trk : score.tracks)
                for (auto& e : trk.events)
                    if (e.onset + e.duration > piece_end) e.duration = piece_end - e.onset;
            break;
        }
        case TokenKind::PitchAvg:
            claims[bar][track_of_program.at(t.a)].avg = t.b;
            break;
        case TokenKind::PitchDiversity:
            claims[bar][track_of_program.at(t.a)].div = t.b;
            break;
        default: break;
        }
    }

    int bars = bar + 1;
    // Same-pitch notes may overlap across sub-beat groups; merge them the
    // same way parsing does so the score round-trips through MIDI.
    score = canonicalize(std::move(score));
    score.bar_ends.clear();
    for (int b = 1; b <= bars; ++b) score.bar_ends.push_back(b * spb);

    DecodeResult out;
    out.profile = extract_profile(score, bins);
    // Control tokens are conditions, not measurements: report the claimed
    // classes so re-encoding reproduces the sequence. A claim whose onsets
    // vanished in overlap merging has no profile entry to carry it.
    for (int b = 0; b < bars; ++b)
        for (const auto& [trk, claim] : claims[b]) {
            auto it = out.profile.bars[b].tracks.find(trk);
            if (it == out.profile.bars[b].tracks.end()) continue;
            it->second.avg_pitch_class = claim.avg;
            it->second.pitch_diversity_class = claim.div;
        }
    out.score = std::move(score);
    return out;
}

std::string sequence_to_text(const TokenSequence& seq) {
    std::string out;
    for (const auto& t : seq.tokens) {
        out += token_to_string(t);
        out += '\n';
    }
    return out;
}

TokenSequence sequence_from_text(const std::string& text) {
    TokenSequence seq;
    std::istringstream in(text);
    std::string line;
    int bar = -1;
    while (std::getline(in, line)) {
        size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        size_t b = line.find_last_not_of(" \t\r");
        Token t = token_from_string(line.substr(a, b - a + 1));
        if (t.kind == TokenKind::Bar) ++bar;
        seq.tokens.push_back(t);
        seq.bar_index.push_back(t.kind == TokenKind::BOS ? -1 : bar);
    }
    return seq;
}

} // namespace miditex
