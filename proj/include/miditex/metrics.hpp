#pragma once

#include <optional>
#include <string>
#include <vector>

#include "miditex/attributes.hpp"
#include "miditex/decoder.hpp"
#include "miditex/melody.hpp"
#include "miditex/score.hpp"

namespace miditex {

// A rank correlation that may be undefined (constant input on either side).
struct Correlation {
    std::optional<double> rho;
    std::string undefined_reason;
};

struct EvalReport {
    double overall_fidelity = 0.0; // mean bar-wise chroma cosine similarity
    double melodic_fidelity = 0.0; // φ
    Correlation rhythmicity;
    Correlation polyphonicity;
    Correlation pitch_diversity;
    Correlation avg_pitch;
    std::vector<double> chroma_per_bar;
    std::vector<double> phi_per_bar;
};

// Mean over bars of the cosine similarity between onset-count chroma
// vectors (all tracks). Both-empty bars score 1, one-empty bars 0.
double chroma_similarity(const QuantizedScore& reference, const QuantizedScore& generation);
std::vector<double> chroma_similarity_per_bar(const QuantizedScore& reference,
                                              const QuantizedScore& generation);

// Normalized Levenshtein distance between symbol sequences: d / max(len),
// zero for two empty sequences.
double normalized_edit_distance(const std::vector<int>& a, const std::vector<int>& b);

// φ: per bar, 1 − min over generated tracks of the normalized edit distance
// between the melody's and the track's event-symbol sequences (sub-beat,
// pitch class, octave, duration; velocity and track identity excluded),
// averaged over the melody's bars. Empty melody bars score 1.
double melodic_fidelity(const MelodyConstraint& melody, const QuantizedScore& generation);
std::vector<double> melodic_fidelity_per_bar(const MelodyConstraint& melody,
                                             const QuantizedScore& generation);

// Spearman rank correlation with average ranks for ties; undefined when
// either side is constant.
Correlation spearman(const std::vector<double>& requested, const std::vector<double>& realized);

// Full report for a transfer: realized classes are recomputed from the
// generated score through the attribute pipeline.
EvalReport evaluate(const TransferRequest& request, const GenerationTrace& trace,
                    const BinTable& bins);

// Standalone recomputation from a reference/generation pair plus the
// requested controls (no trace needed).
EvalReport evaluate_scores(const QuantizedScore& reference, const QuantizedScore& generation,
                           const std::vector<BarControl>& requested_bars,
                           const std::map<std::pair<int, int>, TrackLevels>& requested_tracks,
                           const std::optional<MelodyConstraint>& melody, const BinTable& bins);

// Text table in the evaluation-column order used throughout.
std::string report_table(const EvalReport& report);

} // namespace miditex
