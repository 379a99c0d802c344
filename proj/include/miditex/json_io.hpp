#pragma once

#include <string>

#include <json.hpp>

#include "miditex/attributes.hpp"
#include "miditex/decoder.hpp"
#include "miditex/instruments.hpp"
#include "miditex/melody.hpp"
#include "miditex/metrics.hpp"
#include "miditex/seqmodel.hpp"

namespace miditex {

using nlohmann::json;

json bin_table_to_json(const BinTable& table);
BinTable bin_table_from_json(const json& j);

json profile_to_json(const TextureProfile& profile);
TextureProfile profile_from_json(const json& j);

json melody_to_json(const MelodyConstraint& melody);
MelodyConstraint melody_from_json(const json& j);

json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const json& j);

json report_to_json(const EvalReport& report);
json trace_to_json(const GenerationTrace& trace);

// Parses and validates the versioned transfer-request document. The
// reference score and melody extraction are wired in by the caller;
// violations are reported with JSON pointer paths.
struct RequestDocument {
    int length = 0;
    std::vector<BarControl> bar_controls;
    std::map<std::pair<int, int>, TrackLevels> track_controls;
    std::optional<std::vector<std::vector<int>>> instrumentation;
    enum class MelodyMode { None, Extract, File } melody_mode = MelodyMode::Extract;
    std::string melody_path;                      // mode == File
    std::vector<std::optional<int>> melody_instruments; // per bar, or one entry for all
    OctaveMode octave_mode = OctaveMode::Enforce;
    bool strict_register = false;
    SamplingParams sampling;
};

RequestDocument request_from_json(const json& j);
json request_to_json(const RequestDocument& doc);

// Project-level configuration for the CLI.
struct ProjectConfig {
    int beats_per_bar = 4;
    int subbeats_per_beat = 4;
    std::string registry_path; // empty = bundled registry
    std::string bin_table_path;
    ModelConfig model; // vocab_size filled from the grammar at use time
    SamplingParams sampling;
    double tempo_bpm = 120.0;
    TrainOptions train;
};

ProjectConfig project_config_from_json(const json& j);
ProjectConfig load_project_config(const std::string& path);

json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

} // namespace miditex
