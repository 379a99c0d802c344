#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "miditex/attributes.hpp"
#include "miditex/instruments.hpp"
#include "miditex/melody.hpp"
#include "miditex/rng.hpp"
#include "miditex/score.hpp"
#include "miditex/seqmodel.hpp"
#include "miditex/token_grammar.hpp"

namespace miditex {

enum class OctaveMode { Enforce, Infer };

struct SamplingParams {
    double temperature = 1.0;
    double nucleus_p = 0.9;
    uint64_t seed = 0;
};

struct BarControl {
    int rhythmicity = 1;   // class 1..8
    int polyphonicity = 1; // class 1..8
    friend bool operator==(const BarControl&, const BarControl&) = default;
};

struct TrackLevels {
    std::optional<int> pitch_avg;       // level 1..13
    std::optional<int> pitch_diversity; // level 1..13
};

struct TransferRequest {
    QuantizedScore reference;
    int length = 0; // bars; 0 = reference bar count
    // Empty = the reference's own classes.
    std::vector<BarControl> bar_controls;
    // (bar, program) -> requested levels; absent levels are model-sampled.
    std::map<std::pair<int, int>, TrackLevels> track_controls;
    // Per-bar program sets; nullopt = automatic (the model samples the
    // DescriptionTrack block).
    std::optional<std::vector<std::vector<int>>> instrumentation;
    std::optional<MelodyConstraint> melody;
    OctaveMode octave_mode = OctaveMode::Enforce;
    bool strict_register = false;
    SamplingParams sampling;
};

enum class TokenSource { Model, Melody, Control };

struct GenerationTrace {
    TokenSequence tokens;
    std::vector<TokenSource> sources; // one per token
    std::vector<BarControl> requested; // the forced condition inputs, per bar
    std::vector<BarControl> realized;  // classes recomputed from the decoded score
    QuantizedScore score;
    TextureProfile profile;
};

// Renormalizes the distribution over `candidate_ids`, applies temperature
// then nucleus truncation, and samples. Dead end when every candidate has
// zero probability.
int sample_token(const std::vector<double>& dist, const std::vector<int>& candidate_ids,
                 const SamplingParams& params, Rng& rng);

// Octaves o with pitch = 12(o+1)+pc in (min_pitch_exclusive, max_pitch],
// clamped to MIDI range. Strict register intersection is expressed through
// the bounds.
std::vector<int> feasible_octaves(int pitch_class, int min_pitch_exclusive, int max_pitch);

// Constrained autoregressive generation. The grammar config must produce
// exactly the checkpoint's vocabulary.
GenerationTrace transfer(const TransferRequest& request, const Model& model,
                         const GrammarConfig& grammar, const BinTable& bins,
                         const InstrumentRegistry& registry);

} // namespace miditex
