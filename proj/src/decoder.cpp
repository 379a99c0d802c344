#include "miditex/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

namespace miditex {

int sample_token(const std::vector<double>& dist, const std::vector<int>& candidate_ids,
                 const SamplingParams& params, Rng& rng) {
    if (candidate_ids.empty()) fail(ErrorKind::DeadEnd, "empty candidate set");
    std::vector<std::pair<double, int>> probs;
    probs.reserve(candidate_ids.size());
    double total = 0.0;
    for (int id : candidate_ids) {
        double p = dist[id];
        total += p;
        probs.emplace_back(p, id);
    }
    if (total <= 0.0)
        fail(ErrorKind::DeadEnd, "model assigns zero probability to every legal token");

    // Temperature on probabilities: p^(1/T) renormalized equals a softmax
    // temperature on the logits. The T→0 limit is the argmax.
    if (params.temperature < 1e-6) {
        auto best = probs[0];
        for (const auto& pi : probs)
            if (pi.first > best.first || (pi.first == best.first && pi.second < best.second))
                best = pi;
        return best.second;
    }
    if (params.temperature != 1.0) {
        double mx = 0.0;
        for (const auto& pi : probs) mx = std::max(mx, pi.first);
        total = 0.0;
        for (auto& pi : probs) {
            pi.first = pi.first > 0.0 ? std::pow(pi.first / mx, 1.0 / params.temperature) : 0.0;
            total += pi.first;
        }
        if (total <= 0.0) fail(ErrorKind::DeadEnd, "temperature underflow over the legal set");
    }

    // Nucleus: smallest prefix of the descending distribution with mass >= p.
    std::sort(probs.begin(), probs.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    double target = params.nucleus_p * total;
    double kept = 0.0;
    size_t n = 0;
    while (n < probs.size() && kept < target) {
        kept += probs[n].first;
        ++n;
    }
    if (n == 0) {
        n = 1;
        kept = probs[0].first;
    }

    double u = rng.uniform() * kept;
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        acc += probs[i].first;
        if (u < acc) return probs[i].second;
    }
    return probs[n - 1].second;
}

std::vector<int> feasible_octaves(int pitch_class, int min_pitch_exclusive, int max_pitch) {
    std::vector<int> out;
    max_pitch = std::min(max_pitch, 127);
    for (int o = -1; o <= 9; ++o) {
        int pitch = pitch_of(pitch_class, o);
        if (pitch > min_pitch_exclusive && pitch <= max_pitch) out.push_back(o);
    }
    return out;
}

namespace {

// Largest pitch with the given class not exceeding `limit`; -1 if none.
int highest_pitch_of_class(int pitch_class, int limit) {
    if (limit < pitch_class) return -1;
    return pitch_class + 12 * ((limit - pitch_class) / 12);
}

struct BarPlan {
    std::optional<std::vector<int>> forced_programs; // ascending; nullopt = sampled block
    std::vector<int> melody_subbeats;
    std::optional<int> melody_target; // may resolve lazily during generation
    bool has_melody = false;
};

class Generator {
public:
    Generator(const TransferRequest& request, const Model& model, const GrammarConfig& grammar,
              const BinTable& bins, const InstrumentRegistry& registry)
        : req_(request), model_(model), grammar_(grammar), bins_(bins), registry_(registry),
          vocab_(grammar), state_(&grammar_), rng_(request.sampling.seed) {}

    GenerationTrace run();

private:
    void validate_request();
    void prepare_plans();
    void prepare_session();

    void emit(const Token& token, TokenSource source);
    int sample_from(const std::vector<Token>& candidates);
    Token sample_and_emit(const std::vector<Token>& candidates, TokenSource source);

    void run_bar(int bar);
    void sample_description_block(int bar, BarPlan& plan);
    void emit_level_blocks(int bar);
    void content_loop(int bar, BarPlan& plan);
    void inject_run(int bar, BarPlan& plan, int sub_beat, const std::deque<int>& pending_after);
    std::vector<Token> sampled_content_candidates(int bar, const BarPlan& plan,
                                                  const std::deque<int>& pending) const;

    // Scheduling feasibility: can every unplayed declared track still be
    // placed, given the current sub-beat/track position, the melody
    // sub-beats still owed to injection, and the (possibly unresolved)
    // melody instrument? Injected runs open their sub-beat, so sampled
    // accompaniment there must exceed the melody program.
    int free_subbeats_after(int sub_beat, const std::deque<int>& pending) const;
    bool track_schedulable(int track, int cur_track, int sub_beat, const std::deque<int>& pending,
                           std::optional<int> target) const;
    bool bar_schedulable(int cur_track, int sub_beat, std::optional<int> just_played,
                         const std::deque<int>& pending, std::optional<int> target,
                         bool target_unresolved) const;
    bool injection_schedulable(int sub_beat, const BarPlan& plan,
                               const std::deque<int>& pending_after) const;

    const TransferRequest& req_;
    const Model& model_;
    const GrammarConfig& grammar_;
    const BinTable& bins_;
    const InstrumentRegistry& registry_;
    Vocabulary vocab_;
    GrammarState state_;
    Rng rng_;

    int bars_ = 0;
    std::vector<BarControl> bar_controls_;
    std::vector<BarPlan> plans_;
    std::optional<DecoderSession> session_;
    GenerationTrace trace_;
    bool just_injected_ = false;
};

void Generator::validate_request() {
    if (req_.reference.empty()) fail(ErrorKind::EmptyScore, "transfer reference has no notes");
    if (req_.reference.subbeats_per_bar() != grammar_.subbeats_per_bar() ||
        req_.reference.beats_per_bar != grammar_.beats_per_bar)
        fail(ErrorKind::BadRequest, "reference grid does not match the grammar configuration");
    int ref_bars = req_.reference.bar_count();
    bars_ = req_.length > 0 ? req_.length : ref_bars;
    if (bars_ > ref_bars)
        fail(ErrorKind::BadRequest, "requested " + std::to_string(bars_) +
                                        " bars but the reference has " + std::to_string(ref_bars));

    if (!req_.bar_controls.empty() && static_cast<int>(req_.bar_controls.size()) != bars_)
        fail(ErrorKind::BadRequest, "bar_controls must cover every generated bar");
    for (const auto& bc : req_.bar_controls)
        if (bc.rhythmicity < 1 || bc.rhythmicity > 8 || bc.polyphonicity < 1 || bc.polyphonicity > 8)
            fail(ErrorKind::BadRequest, "bar control classes must lie in 1..8");

    for (const auto& [key, levels] : req_.track_controls) {
        auto [bar, program] = key;
        if (bar < 0 || bar >= bars_) fail(ErrorKind::BadRequest, "track control bar out of range");
        if (!grammar_.has_program(program))
            fail(ErrorKind::NotInSubset, "track control program " + std::to_string(program) +
                                             " not in the configured subset");
        for (const auto& lv : {levels.pitch_avg, levels.pitch_diversity})
            if (lv && (*lv < 1 || *lv > grammar_.track_levels))
                fail(ErrorKind::BadRequest, "track control level out of range");
    }

    if (req_.instrumentation) {
        if (static_cast<int>(req_.instrumentation->size()) != bars_)
            fail(ErrorKind::BadRequest, "instrumentation must cover every generated bar");
        for (const auto& programs : *req_.instrumentation) {
            for (int p : programs) {
                registry_.lookup(p);
                if (!grammar_.has_program(p))
                    fail(ErrorKind::NotInSubset,
                         "program " + std::to_string(p) + " not in the grammar vocabulary");
            }
            for (size_t i = 1; i < programs.size(); ++i)
                if (programs[i] <= programs[i - 1])
                    fail(ErrorKind::BadRequest,
                         "instrumentation programs must be ascending and distinct");
        }
    }

    if (req_.melody) {
        if (req_.melody->bar_count() > bars_)
            fail(ErrorKind::BadRequest, "melody constraint has more bars than the requested length");
        for (int b = 0; b < req_.melody->bar_count(); ++b) {
            const MelodyBar& mb = req_.melody->bars[b];
            int last_sb = -1, last_pitch = -1;
            for (const auto& ev : mb.events) {
                if (ev.sub_beat < 0 || ev.sub_beat >= grammar_.subbeats_per_bar())
                    fail(ErrorKind::BadRequest,
                         "melody sub-beat out of range in bar " + std::to_string(b));
                if (ev.duration < 1 || ev.duration > grammar_.max_duration)
                    fail(ErrorKind::BadRequest,
                         "melody duration out of range in bar " + std::to_string(b));
                if (ev.sub_beat + ev.duration > (bars_ - b) * grammar_.subbeats_per_bar())
                    fail(ErrorKind::BadRequest,
                         "melody event in bar " + std::to_string(b) +
                             " extends past the end of the generated piece");
                if (ev.velocity_bin < 1 || ev.velocity_bin > grammar_.velocity_bins)
                    fail(ErrorKind::BadRequest, "melody velocity bin out of range");
                if (ev.sub_beat < last_sb)
                    fail(ErrorKind::BadRequest, "melody events must ascend by sub-beat");
                if (ev.sub_beat == last_sb && ev.pitch() <= last_pitch)
                    fail(ErrorKind::BadRequest,
                         "melody events at one sub-beat must strictly ascend in pitch");
                last_sb = ev.sub_beat;
                last_pitch = ev.pitch();
            }
            if (!mb.events.empty() && mb.target_program) {
                registry_.lookup(*mb.target_program);
                if (!grammar_.has_program(*mb.target_program))
                    fail(ErrorKind::NotInSubset, "melody target program not in the grammar vocabulary");
            }
        }
    }

    if (req_.sampling.temperature < 0 || req_.sampling.nucleus_p <= 0 || req_.sampling.nucleus_p > 1)
        fail(ErrorKind::BadRequest, "sampling parameters out of range");
    if (model_.config().vocab_size != vocab_.size())
        fail(ErrorKind::BadRequest,
             "checkpoint vocabulary (" + std::to_string(model_.config().vocab_size) +
                 ") does not match the grammar (" + std::to_string(vocab_.size()) + ")");
}

void Generator::prepare_plans() {
    plans_.resize(bars_);
    for (int b = 0; b < bars_; ++b) {
        BarPlan& plan = plans_[b];
        if (req_.instrumentation) plan.forced_programs = (*req_.instrumentation)[b];
        if (req_.melody && b < req_.melody->bar_count()) {
            const MelodyBar& mb = req_.melody->bars[b];
            if (!mb.events.empty()) {
                plan.has_melody = true;
                plan.melody_subbeats = melody_sub_beats(*req_.melody, b);
                plan.melody_target = mb.target_program;
                if (plan.forced_programs) {
                    if (plan.forced_programs->empty())
                        fail(ErrorKind::BadRequest,
                             "bar " + std::to_string(b) +
                                 " has melody events but an empty instrumentation");
                    if (plan.melody_target &&
                        !std::binary_search(plan.forced_programs->begin(),
                                            plan.forced_programs->end(), *plan.melody_target))
                        fail(ErrorKind::BadRequest,
                             "melody instrument " + std::to_string(*plan.melody_target) +
                                 " absent from the requested instrumentation of bar " +
                                 std::to_string(b));
                }
            }
        }
    }
}

void Generator::prepare_session() {
    QuantizedScore reference = split_long_durations(req_.reference, grammar_.max_duration);
    TextureProfile ref_profile = extract_profile(reference, &bins_);
    TokenSequence ref_tokens = encode(reference, ref_profile, grammar_);
    std::vector<BarLatent> latents = model_.encode_bars(ref_tokens, vocab_);

    bar_controls_.resize(bars_);
    for (int b = 0; b < bars_; ++b) {
        if (!req_.bar_controls.empty())
            bar_controls_[b] = req_.bar_controls[b];
        else
            bar_controls_[b] = BarControl{ref_profile.bars[b].rhythmicity_class,
                                          ref_profile.bars[b].polyphonicity_class};
    }

    std::vector<std::vector<double>> z;
    std::vector<std::pair<int, int>> conditions;
    for (int b = 0; b < bars_; ++b) {
        z.push_back(latents[b].mean);
        conditions.emplace_back(bar_controls_[b].rhythmicity, bar_controls_[b].polyphonicity);
    }
    session_.emplace(model_, std::move(z), std::move(conditions));
    trace_.requested = bar_controls_;
}

void Generator::emit(const Token& token, TokenSource source) {
    if (token.kind != TokenKind::BOS) state_.apply(token); // the automaton starts after BOS
    int bar = std::min(std::max(state_.bar(), 0), bars_ - 1);
    trace_.tokens.tokens.push_back(token);
    trace_.tokens.bar_index.push_back(token.kind == TokenKind::BOS ? -1 : state_.bar());
    trace_.sources.push_back(source);
    if (token.kind != TokenKind::EOS) session_->append(vocab_.id_of(token), bar);
    just_injected_ = false;
}

int Generator::sample_from(const std::vector<Token>& candidates) {
    std::vector<int> ids;
    ids.reserve(candidates.size());
    for (const auto& t : candidates) ids.push_back(vocab_.id_of(t));
    const std::vector<double>& dist = session_->next_distribution();
    try {
        return sample_token(dist, ids, req_.sampling, rng_);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::DeadEnd) throw;
        fail(ErrorKind::DeadEnd,
             std::string(e.what()) + "; prefix:\n" + sequence_to_text(trace_.tokens));
    }
}

Token Generator::sample_and_emit(const std::vector<Token>& candidates, TokenSource source) {
    Token token = vocab_.token_of(sample_from(candidates));
    emit(token, source);
    return token;
}

void Generator::run_bar(int bar) {
    BarPlan& plan = plans_[bar];
    bool last_bar = bar == bars_ - 1;

    if (plan.forced_programs) {
        for (int p : *plan.forced_programs) emit(Token::description_track(p), TokenSource::Control);
        if (plan.forced_programs->empty()) {
            // Forced empty bar: close it immediately.
            emit(last_bar ? Token::eos() : Token::bar(), TokenSource::Control);
            return;
        }
    } else {
        sample_description_block(bar, plan);
        if (state_.bar() != bar || state_.finished()) return; // sampled empty bar, closed
    }

    if (plan.has_melody) {
        const std::vector<int>& declared = state_.declared();
        if (declared.empty()) fail(ErrorKind::Internal, "melody bar has no declared tracks");
        if (plan.melody_target &&
            !std::binary_search(declared.begin(), declared.end(), *plan.melody_target))
            fail(ErrorKind::Internal, "melody target missing from the declared tracks");
        // A single declared track in a melody bar can only be the melody.
        if (!plan.melody_target && declared.size() == 1) plan.melody_target = declared[0];
    }

    emit_level_blocks(bar);
    content_loop(bar, plan);
}

void Generator::sample_description_block(int bar, BarPlan& plan) {
    bool last_bar = bar == bars_ - 1;
    for (;;) {
        std::vector<Token> legal = state_.legal_next();
        bool target_declared =
            plan.melody_target && std::binary_search(state_.declared().begin(),
                                                     state_.declared().end(), *plan.melody_target);
        std::vector<Token> candidates;
        for (const auto& t : legal) {
            switch (t.kind) {
            case TokenKind::DescriptionTrack:
                if (plan.has_melody && plan.melody_target && !target_declared &&
                    t.a > *plan.melody_target)
                    continue; // would make the melody instrument undeclarable
                candidates.push_back(t);
                break;
            case TokenKind::PitchAvg: // the move that ends the block
                if (plan.has_melody && plan.melody_target && !target_declared) continue;
                candidates.push_back(t);
                break;
            case TokenKind::Bar: // empty bar
                if (plan.has_melody || last_bar) continue;
                candidates.push_back(t);
                break;
            case TokenKind::EOS:
                if (plan.has_melody || !last_bar) continue;
                candidates.push_back(t);
                break;
            default:
                candidates.push_back(t);
                break;
            }
        }
        if (candidates.empty())
            fail(ErrorKind::DeadEnd, "no legal instrumentation choice in bar " + std::to_string(bar) +
                                         "; prefix:\n" + sequence_to_text(trace_.tokens));

        int picked_id = sample_from(candidates);
        Token picked = vocab_.token_of(picked_id);
        if (picked.kind == TokenKind::PitchAvg) {
            // Entering the level blocks; the level itself may be forced.
            auto it = req_.track_controls.find({bar, picked.a});
            if (it != req_.track_controls.end() && it->second.pitch_avg) {
                emit(Token::pitch_avg(picked.a, *it->second.pitch_avg), TokenSource::Control);
            } else {
                emit(picked, TokenSource::Model);
            }
            return;
        }
        if (picked.kind == TokenKind::Bar || picked.kind == TokenKind::EOS) {
            emit(picked, TokenSource::Control); // structural closer of an empty bar
            return;
        }
        emit(picked, TokenSource::Model); // DescriptionTrack
    }
}

void Generator::emit_level_blocks(int bar) {
    for (;;) {
        std::vector<Token> legal = state_.legal_next();
        std::vector<Token> levels;
        for (const auto& t : legal)
            if (t.kind == TokenKind::PitchAvg || t.kind == TokenKind::PitchDiversity)
                levels.push_back(t);
        if (levels.empty()) return; // level blocks complete
        int program = levels[0].a;
        TokenKind kind = levels[0].kind;
        auto it = req_.track_controls.find({bar, program});
        std::optional<int> forced_level;
        if (it != req_.track_controls.end())
            forced_level =
                kind == TokenKind::PitchAvg ? it->second.pitch_avg : it->second.pitch_diversity;
        if (forced_level) {
            Token t = kind == TokenKind::PitchAvg
                          ? Token::pitch_avg(program, *forced_level)
                          : Token::pitch_diversity(program, *forced_level);
            emit(t, TokenSource::Control);
        } else {
            sample_and_emit(levels, TokenSource::Model);
        }
    }
}

int Generator::free_subbeats_after(int sub_beat, const std::deque<int>& pending) const {
    // Sub-beats strictly after `sub_beat` that carry no pending melody.
    int total = (grammar_.subbeats_per_bar() - 1) - sub_beat;
    return total - static_cast<int>(pending.size());
}

bool Generator::track_schedulable(int track, int cur_track, int sub_beat,
                                  const std::deque<int>& pending,
                                  std::optional<int> target) const {
    if (track > cur_track) return true;                 // later in the current sub-beat
    if (free_subbeats_after(sub_beat, pending) > 0) return true; // a melody-free sub-beat
    if (target && !pending.empty() && track > *target) return true; // after a future run
    return false;
}

bool Generator::bar_schedulable(int cur_track, int sub_beat, std::optional<int> just_played,
                                const std::deque<int>& pending, std::optional<int> target,
                                bool target_unresolved) const {
    std::vector<int> unplayed;
    for (int u : state_.declared())
        if (!state_.has_played(u) && !(just_played && u == *just_played)) unplayed.push_back(u);

    if (!target_unresolved) {
        for (int u : unplayed) {
            if (target && u == *target) continue; // the injections play it
            if (!track_schedulable(u, cur_track, sub_beat, pending, target)) return false;
        }
        return true;
    }
    // Unresolved melody instrument: some unplayed track will become it.
    if (unplayed.empty()) return false; // nothing left to resolve to
    for (int candidate : unplayed) {
        bool ok = true;
        for (int u : unplayed) {
            if (u == candidate) continue;
            if (!track_schedulable(u, cur_track, sub_beat, pending, candidate)) {
                ok = false;
                break;
            }
        }
        if (ok) return true;
    }
    return false;
}

bool Generator::injection_schedulable(int sub_beat, const BarPlan& plan,
                                      const std::deque<int>& pending_after) const {
    if (plan.melody_target)
        return bar_schedulable(*plan.melody_target, sub_beat, *plan.melody_target, pending_after,
                               *plan.melody_target, false);
    // The run will resolve the target to an unplayed track; feasible if some
    // choice leaves the rest schedulable.
    std::vector<int> unplayed;
    for (int u : state_.declared())
        if (!state_.has_played(u)) unplayed.push_back(u);
    for (int candidate : unplayed) {
        bool ok = true;
        for (int u : unplayed) {
            if (u == candidate) continue;
            if (!track_schedulable(u, candidate, sub_beat, pending_after, candidate)) {
                ok = false;
                break;
            }
        }
        if (ok) return true;
    }
    return false;
}

std::vector<Token> Generator::sampled_content_candidates(int bar, const BarPlan& plan,
                                                         const std::deque<int>& pending) const {
    std::vector<Token> legal = state_.legal_next();
    std::vector<Token> out;
    const std::vector<int>& declared = state_.declared();
    bool unresolved = plan.has_melody && !plan.melody_target;
    int cur_sb = state_.current_subbeat();

    auto track_allowed = [&](int program) {
        if (plan.has_melody && plan.melody_target && program == *plan.melody_target)
            return false; // reserved for the injected melody
        if (unresolved && !pending.empty()) {
            // Keep one unplayed declared track for the lazy melody choice.
            int n_unplayed = 0;
            for (int p : declared)
                if (!state_.has_played(p)) ++n_unplayed;
            if (n_unplayed == 1 && !state_.has_played(program)) return false;
        }
        // Playing it must leave every other unplayed track schedulable.
        return bar_schedulable(program, cur_sb, program, pending, plan.melody_target, unresolved);
    };

    bool injection_ok = pending.empty() ? false : [&] {
        std::deque<int> after(pending.begin() + 1, pending.end());
        return injection_schedulable(pending.front(), plan, after);
    }();

    bool any_track_for_fresh_subbeat = false;
    for (int p : declared)
        if (track_allowed(p)) {
            any_track_for_fresh_subbeat = true;
            break;
        }

    bool last_bar = bar == bars_ - 1;
    for (const auto& t : legal) {
        switch (t.kind) {
        case TokenKind::PitchClass:
            if (just_injected_) continue; // the injected melody group is closed
            out.push_back(t);
            break;
        case TokenKind::Track:
            if (!track_allowed(t.a)) continue;
            out.push_back(t);
            break;
        case TokenKind::SubBeat:
            if (!pending.empty() && t.a == pending.front()) {
                if (!injection_ok) continue; // would inject into a stranding position
                out.push_back(t);
                break;
            }
            if (!pending.empty() && t.a > pending.front()) {
                // Triggers a forced injection at pending.front() instead.
                if (!injection_ok) continue;
                out.push_back(t);
                break;
            }
            if (!any_track_for_fresh_subbeat) continue;
            out.push_back(t);
            break;
        case TokenKind::Bar:
            if (last_bar) continue;
            if (!pending.empty() && !injection_ok) continue;
            out.push_back(t);
            break;
        case TokenKind::EOS:
            if (!last_bar) continue;
            if (!pending.empty() && !injection_ok) continue;
            out.push_back(t);
            break;
        default:
            out.push_back(t);
            break;
        }
    }
    return out;
}

void Generator::content_loop(int bar, BarPlan& plan) {
    std::deque<int> pending(plan.melody_subbeats.begin(), plan.melody_subbeats.end());

    auto force_injection = [&] {
        int sb = pending.front();
        pending.pop_front();
        emit(Token::sub_beat(sb), TokenSource::Melody);
        inject_run(bar, plan, sb, pending);
    };

    for (;;) {
        std::vector<Token> candidates = sampled_content_candidates(bar, plan, pending);
        if (candidates.empty()) {
            if (!pending.empty()) {
                std::deque<int> after(pending.begin() + 1, pending.end());
                if (!injection_schedulable(pending.front(), plan, after))
                    fail(ErrorKind::DeadEnd,
                         "bar " + std::to_string(bar) +
                             " exhausted its content while a declared track blocks the melody; prefix:\n" +
                             sequence_to_text(trace_.tokens));
                force_injection();
                continue;
            }
            fail(ErrorKind::DeadEnd, "no legal continuation in bar " + std::to_string(bar) +
                                         "; prefix:\n" + sequence_to_text(trace_.tokens));
        }

        int picked_id = sample_from(candidates);
        Token picked = vocab_.token_of(picked_id);

        bool passes_melody = false;
        if (!pending.empty()) {
            int next_mel = pending.front();
            if (picked.kind == TokenKind::Bar || picked.kind == TokenKind::EOS)
                passes_melody = true;
            else if (picked.kind == TokenKind::SubBeat && picked.a > next_mel)
                passes_melody = true;
        }
        if (passes_melody) {
            // Force-insert the skipped melody sub-beat; the sampled token is
            // discarded and generation resumes from the new prefix.
            force_injection();
            continue;
        }

        if (picked.kind == TokenKind::SubBeat && !pending.empty() && picked.a == pending.front()) {
            pending.pop_front();
            emit(picked, TokenSource::Model);
            inject_run(bar, plan, picked.a, pending);
            continue;
        }

        if (picked.kind == TokenKind::Bar || picked.kind == TokenKind::EOS) {
            emit(picked, TokenSource::Control); // structural: the request fixes the bar count
            return;
        }
        emit(picked, TokenSource::Model);
    }
}

void Generator::inject_run(int bar, BarPlan& plan, int sub_beat,
                           const std::deque<int>& pending_after) {
    const MelodyBar& mb = req_.melody->bars[bar];
    std::vector<MelodyEvent> events;
    for (const auto& ev : mb.events)
        if (ev.sub_beat == sub_beat) events.push_back(ev);
    if (events.empty()) fail(ErrorKind::Internal, "injection at a sub-beat with no melody events");

    if (plan.melody_target) {
        emit(Token::track(*plan.melody_target), TokenSource::Melody);
    } else {
        // Lazy resolution: the model picks the instrument among declared
        // tracks that have not yet played in this bar and whose choice keeps
        // the remaining tracks schedulable.
        std::vector<int> unplayed;
        for (int p : state_.declared())
            if (!state_.has_played(p)) unplayed.push_back(p);
        std::vector<Token> candidates;
        for (int candidate : unplayed) {
            bool ok = true;
            for (int u : unplayed) {
                if (u == candidate) continue;
                if (!track_schedulable(u, candidate, sub_beat, pending_after, candidate)) {
                    ok = false;
                    break;
                }
            }
            if (ok) candidates.push_back(Token::track(candidate));
        }
        if (candidates.empty())
            fail(ErrorKind::DeadEnd, "no unplayed declared track left for the melody instrument");
        Token t = sample_and_emit(candidates, TokenSource::Melody);
        plan.melody_target = t.a;
    }
    int target = *plan.melody_target;

    bool infer = req_.octave_mode == OctaveMode::Infer;
    int reg_lo = 0, reg_hi = 127;
    if (infer && req_.strict_register) {
        const InstrumentSpec& spec = registry_.lookup(target);
        reg_lo = spec.register_low;
        reg_hi = spec.register_high;
    }

    // Backward pass: the largest pitch each event may take while leaving an
    // ascending chain for the rest of the group.
    int k = static_cast<int>(events.size());
    std::vector<int> max_pitch(k, 127);
    if (infer) {
        int limit = reg_hi;
        for (int j = k - 1; j >= 0; --j) {
            int mp = highest_pitch_of_class(events[j].pitch_class, limit);
            if (mp < 0 || mp < reg_lo) {
                if (req_.strict_register)
                    fail(ErrorKind::InfeasibleRegister,
                         "no feasible octave for pitch class " +
                             std::to_string(events[j].pitch_class) + " within the register of " +
                             registry_.lookup(target).name);
                fail(ErrorKind::DeadEnd, "melody chord cannot fit below MIDI 127");
            }
            max_pitch[j] = mp;
            limit = mp - 1;
        }
    }

    int last_pitch = -1;
    for (int j = 0; j < k; ++j) {
        const MelodyEvent& ev = events[j];
        emit(Token::pitch_class(ev.pitch_class), TokenSource::Melody);
        if (!infer) {
            emit(Token::octave(ev.octave), TokenSource::Melody);
            last_pitch = ev.pitch();
        } else {
            int min_excl = std::max(last_pitch, reg_lo - 1);
            std::vector<int> octaves = feasible_octaves(ev.pitch_class, min_excl, max_pitch[j]);
            if (octaves.empty())
                fail(ErrorKind::Internal, "octave feasibility emptied despite the backward pass");
            std::vector<Token> candidates;
            for (int o : octaves) candidates.push_back(Token::octave(o));
            Token t = sample_and_emit(candidates, TokenSource::Melody);
            last_pitch = pitch_of(ev.pitch_class, t.a);
        }
        emit(Token::duration(ev.duration), TokenSource::Melody);
        emit(Token::velocity(ev.velocity_bin), TokenSource::Melody);
    }
    just_injected_ = true;
}

GenerationTrace Generator::run() {
    validate_request();
    prepare_plans();
    prepare_session();

    emit(Token::bos(), TokenSource::Control);
    emit(Token::bar(), TokenSource::Control); // opens bar 0
    for (int b = 0; b < bars_; ++b) run_bar(b);
    if (!state_.finished()) fail(ErrorKind::Internal, "generation ended before EOS");

    DecodeResult decoded = decode(trace_.tokens, grammar_, &bins_);
    trace_.score = std::move(decoded.score);
    trace_.profile = std::move(decoded.profile);
    for (int b = 0; b < bars_; ++b)
        trace_.realized.push_back(BarControl{trace_.profile.bars[b].rhythmicity_class,
                                             trace_.profile.bars[b].polyphonicity_class});
    return trace_;
}

} // namespace

GenerationTrace transfer(const TransferRequest& request, const Model& model,
                         const GrammarConfig& grammar, const BinTable& bins,
                         const InstrumentRegistry& registry) {
    Generator generator(request, model, grammar, bins, registry);
    return generator.run();
}

} // namespace miditex
