#include "miditex/json_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace miditex {

namespace {

// Typed field access that reports failures as JSON pointer paths.
const json* field(const json& j, const std::string& path, const std::string& key) {
    if (!j.is_object()) fail(ErrorKind::BadRequest, path + ": expected an object");
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

int require_int(const json& j, const std::string& path, int lo, int hi) {
    if (!j.is_number_integer())
        fail(ErrorKind::BadRequest, path + ": expected an integer");
    int v = j.get<int>();
    if (v < lo || v > hi)
        fail(ErrorKind::BadRequest, path + ": must lie in " + std::to_string(lo) + ".." +
                                        std::to_string(hi));
    return v;
}

double require_number(const json& j, const std::string& path) {
    if (!j.is_number()) fail(ErrorKind::BadRequest, path + ": expected a number");
    return j.get<double>();
}

std::string require_string(const json& j, const std::string& path) {
    if (!j.is_string()) fail(ErrorKind::BadRequest, path + ": expected a string");
    return j.get<std::string>();
}

const json& require_array(const json& j, const std::string& path) {
    if (!j.is_array()) fail(ErrorKind::BadRequest, path + ": expected an array");
    return j;
}

std::string hex64(uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

uint64_t from_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

} // namespace

json bin_table_to_json(const BinTable& table) {
    return json{{"version", 1},
                {"rhythmicity_edges", table.rhythmicity_edges},
                {"polyphonicity_edges", table.polyphonicity_edges},
                {"corpus_fingerprint", hex64(table.corpus_fingerprint)},
                {"grid", {{"beats_per_bar", table.beats_per_bar},
                          {"subbeats_per_beat", table.subbeats_per_beat}}}};
}

BinTable bin_table_from_json(const json& j) {
    BinTable table;
    auto edges = j.at("rhythmicity_edges");
    auto pedges = j.at("polyphonicity_edges");
    if (edges.size() != 7 || pedges.size() != 7)
        fail(ErrorKind::Format, "bin table must carry exactly 7 edges per attribute");
    for (int i = 0; i < 7; ++i) {
        table.rhythmicity_edges[i] = edges[i].get<double>();
        table.polyphonicity_edges[i] = pedges[i].get<double>();
    }
    for (int i = 1; i < 7; ++i)
        if (table.rhythmicity_edges[i] < table.rhythmicity_edges[i - 1] ||
            table.polyphonicity_edges[i] < table.polyphonicity_edges[i - 1])
            fail(ErrorKind::Format, "bin table edges must be non-decreasing");
    table.corpus_fingerprint = from_hex64(j.at("corpus_fingerprint").get<std::string>());
    table.beats_per_bar = j.at("grid").at("beats_per_bar").get<int>();
    table.subbeats_per_beat = j.at("grid").at("subbeats_per_beat").get<int>();
    return table;
}

json profile_to_json(const TextureProfile& profile) {
    json bars = json::array();
    for (const auto& bar : profile.bars) {
        json tracks = json::object();
        for (const auto& [track, tex] : bar.tracks)
            tracks[std::to_string(track)] = {{"avg_pitch_raw", tex.avg_pitch_raw},
                                             {"avg_pitch_class", tex.avg_pitch_class},
                                             {"pitch_diversity_raw", tex.pitch_diversity_raw},
                                             {"pitch_diversity_class", tex.pitch_diversity_class}};
        bars.push_back({{"rhythmicity_raw", bar.rhythmicity_raw},
                        {"rhythmicity_class", bar.rhythmicity_class},
                        {"polyphonicity_raw", bar.polyphonicity_raw},
                        {"polyphonicity_class", bar.polyphonicity_class},
                        {"tracks", std::move(tracks)}});
    }
    return json{{"version", 1}, {"bars", std::move(bars)}};
}

TextureProfile profile_from_json(const json& j) {
    TextureProfile profile;
    for (const auto& jb : j.at("bars")) {
        BarTexture bar;
        bar.rhythmicity_raw = jb.at("rhythmicity_raw").get<int>();
        bar.rhythmicity_class = jb.at("rhythmicity_class").get<int>();
        bar.polyphonicity_raw = jb.at("polyphonicity_raw").get<double>();
        bar.polyphonicity_class = jb.at("polyphonicity_class").get<int>();
        for (const auto& [key, jt] : jb.at("tracks").items()) {
            TrackBarTexture tex;
            tex.avg_pitch_raw = jt.at("avg_pitch_raw").get<double>();
            tex.avg_pitch_class = jt.at("avg_pitch_class").get<int>();
            tex.pitch_diversity_raw = jt.at("pitch_diversity_raw").get<int>();
            tex.pitch_diversity_class = jt.at("pitch_diversity_class").get<int>();
            bar.tracks[std::stoi(key)] = tex;
        }
        profile.bars.push_back(std::move(bar));
    }
    return profile;
}

json melody_to_json(const MelodyConstraint& melody) {
    json bars = json::array();
    for (const auto& bar : melody.bars) {
        json events = json::array();
        for (const auto& ev : bar.events)
            events.push_back({{"sub_beat", ev.sub_beat},
                              {"pitch_class", ev.pitch_class},
                              {"octave", ev.octave},
                              {"duration", ev.duration},
                              {"velocity_bin", ev.velocity_bin}});
        json b{{"events", std::move(events)}};
        b["source_track"] = bar.source_track ? json(*bar.source_track) : json(nullptr);
        b["target_program"] = bar.target_program ? json(*bar.target_program) : json(nullptr);
        bars.push_back(std::move(b));
    }
    return json{{"version", 1}, {"bars", std::move(bars)}};
}

MelodyConstraint melody_from_json(const json& j) {
    MelodyConstraint melody;
    const json& bars = require_array(j.at("bars"), "/bars");
    int bi = 0;
    for (const auto& jb : bars) {
        std::string bpath = "/bars/" + std::to_string(bi++);
        MelodyBar bar;
        if (auto* st = field(jb, bpath, "source_track"); st && !st->is_null())
            bar.source_track = require_int(*st, bpath + "/source_track", 0, 4096);
        if (auto* tp = field(jb, bpath, "target_program"); tp && !tp->is_null())
            bar.target_program = require_int(*tp, bpath + "/target_program", 0, 127);
        if (auto* evs = field(jb, bpath, "events")) {
            int ei = 0;
            for (const auto& je : require_array(*evs, bpath + "/events")) {
                std::string epath = bpath + "/events/" + std::to_string(ei++);
                MelodyEvent ev;
                ev.sub_beat = require_int(je.at("sub_beat"), epath + "/sub_beat", 0, 1 << 14);
                ev.pitch_class = require_int(je.at("pitch_class"), epath + "/pitch_class", 0, 11);
                ev.octave = require_int(je.at("octave"), epath + "/octave", -1, 9);
                ev.duration = require_int(je.at("duration"), epath + "/duration", 1, 1 << 14);
                ev.velocity_bin = require_int(je.at("velocity_bin"), epath + "/velocity_bin", 1, 8);
                bar.events.push_back(ev);
            }
        }
        melody.bars.push_back(std::move(bar));
    }
    return melody;
}

json model_config_to_json(const ModelConfig& c) {
    return json{{"embed_dim", c.embed_dim},
                {"encoder_layers", c.encoder_layers},
                {"decoder_layers", c.decoder_layers},
                {"heads", c.heads},
                {"latent_dim", c.latent_dim},
                {"condition_embed_dim", c.condition_embed_dim},
                {"beta", c.beta},
                {"free_bits", c.free_bits},
                {"context_length", c.context_length},
                {"vocab_size", c.vocab_size},
                {"bar_classes", c.bar_classes},
                {"logvar_min", c.logvar_min},
                {"logvar_max", c.logvar_max}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.heads = j.value("heads", c.heads);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.condition_embed_dim = j.value("condition_embed_dim", c.condition_embed_dim);
    c.beta = j.value("beta", c.beta);
    c.free_bits = j.value("free_bits", c.free_bits);
    c.context_length = j.value("context_length", c.context_length);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.bar_classes = j.value("bar_classes", c.bar_classes);
    c.logvar_min = j.value("logvar_min", c.logvar_min);
    c.logvar_max = j.value("logvar_max", c.logvar_max);
    return c;
}

namespace {

json correlation_to_json(const Correlation& c) {
    if (c.rho) return json(*c.rho);
    return json{{"undefined", c.undefined_reason}};
}

} // namespace

json report_to_json(const EvalReport& report) {
    return json{{"overall_fidelity", report.overall_fidelity},
                {"melodic_fidelity", report.melodic_fidelity},
                {"rhythmicity_spearman", correlation_to_json(report.rhythmicity)},
                {"polyphonicity_spearman", correlation_to_json(report.polyphonicity)},
                {"pitch_diversity_spearman", correlation_to_json(report.pitch_diversity)},
                {"avg_pitch_spearman", correlation_to_json(report.avg_pitch)},
                {"per_bar", {{"chroma", report.chroma_per_bar}, {"phi", report.phi_per_bar}}}};
}

json trace_to_json(const GenerationTrace& trace) {
    json tokens = json::array();
    for (size_t i = 0; i < trace.tokens.tokens.size(); ++i) {
        const char* src = trace.sources[i] == TokenSource::Model     ? "model"
                          : trace.sources[i] == TokenSource::Melody  ? "melody"
                                                                     : "control";
        tokens.push_back({{"token", token_to_string(trace.tokens.tokens[i])},
                          {"bar", trace.tokens.bar_index[i]},
                          {"source", src}});
    }
    json requested = json::array(), realized = json::array();
    for (const auto& bc : trace.requested)
        requested.push_back({{"rhythmicity", bc.rhythmicity}, {"polyphonicity", bc.polyphonicity}});
    for (const auto& bc : trace.realized)
        realized.push_back({{"rhythmicity", bc.rhythmicity}, {"polyphonicity", bc.polyphonicity}});
    return json{{"version", 1},
                {"tokens", std::move(tokens)},
                {"requested_bar_classes", std::move(requested)},
                {"realized_bar_classes", std::move(realized)}};
}

RequestDocument request_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorKind::BadRequest, "/: request must be a JSON object");
    if (auto* v = field(j, "/", "version"); !v || require_int(*v, "/version", 1, 1) != 1)
        fail(ErrorKind::BadRequest, "/version: must be 1");

    RequestDocument doc;
    if (auto* v = field(j, "/", "length")) doc.length = require_int(*v, "/length", 1, 1 << 16);

    if (auto* v = field(j, "/", "bar_controls")) {
        int i = 0;
        for (const auto& jb : require_array(*v, "/bar_controls")) {
            std::string path = "/bar_controls/" + std::to_string(i++);
            BarControl bc;
            bc.rhythmicity = require_int(jb.at("rhythmicity"), path + "/rhythmicity", 1, 8);
            bc.polyphonicity = require_int(jb.at("polyphonicity"), path + "/polyphonicity", 1, 8);
            doc.bar_controls.push_back(bc);
        }
    }

    if (auto* v = field(j, "/", "track_controls")) {
        int i = 0;
        for (const auto& jt : require_array(*v, "/track_controls")) {
            std::string path = "/track_controls/" + std::to_string(i++);
            int bar = require_int(jt.at("bar"), path + "/bar", 0, 1 << 16);
            int program = require_int(jt.at("program"), path + "/program", 0, 127);
            TrackLevels levels;
            if (auto* pa = field(jt, path, "pitch_avg"); pa && !pa->is_null())
                levels.pitch_avg = require_int(*pa, path + "/pitch_avg", 1, 13);
            if (auto* pd = field(jt, path, "pitch_diversity"); pd && !pd->is_null())
                levels.pitch_diversity = require_int(*pd, path + "/pitch_diversity", 1, 13);
            doc.track_controls[{bar, program}] = levels;
        }
    }

    if (auto* v = field(j, "/", "instrumentation")) {
        std::string mode = require_string(v->at("mode"), "/instrumentation/mode");
        if (mode == "auto") {
            doc.instrumentation.reset();
        } else if (mode == "user") {
            std::vector<std::vector<int>> per_bar;
            if (auto* ens = field(*v, "/instrumentation", "ensemble")) {
                std::vector<int> programs;
                int i = 0;
                for (const auto& jp : require_array(*ens, "/instrumentation/ensemble"))
                    programs.push_back(
                        require_int(jp, "/instrumentation/ensemble/" + std::to_string(i++), 0, 127));
                per_bar.assign(1, programs); // expanded to every bar by the caller
                doc.instrumentation = per_bar;
            } else if (auto* lists = field(*v, "/instrumentation", "programs")) {
                int b = 0;
                for (const auto& jl : require_array(*lists, "/instrumentation/programs")) {
                    std::string path = "/instrumentation/programs/" + std::to_string(b++);
                    std::vector<int> programs;
                    int i = 0;
                    for (const auto& jp : require_array(jl, path))
                        programs.push_back(require_int(jp, path + "/" + std::to_string(i++), 0, 127));
                    per_bar.push_back(std::move(programs));
                }
                doc.instrumentation = per_bar;
            } else {
                fail(ErrorKind::BadRequest,
                     "/instrumentation: user mode needs 'ensemble' or 'programs'");
            }
        } else {
            fail(ErrorKind::BadRequest, "/instrumentation/mode: must be 'auto' or 'user'");
        }
    }

    if (auto* v = field(j, "/", "melody")) {
        std::string mode = require_string(v->at("mode"), "/melody/mode");
        if (mode == "none")
            doc.melody_mode = RequestDocument::MelodyMode::None;
        else if (mode == "extract")
            doc.melody_mode = RequestDocument::MelodyMode::Extract;
        else if (mode == "file") {
            doc.melody_mode = RequestDocument::MelodyMode::File;
            doc.melody_path = require_string(v->at("path"), "/melody/path");
        } else
            fail(ErrorKind::BadRequest, "/melody/mode: must be 'none', 'extract' or 'file'");
        if (auto* inst = field(*v, "/melody", "instrument")) {
            if (inst->is_null())
                doc.melody_instruments.assign(1, std::nullopt);
            else
                doc.melody_instruments.assign(
                    1, require_int(*inst, "/melody/instrument", 0, 127));
        }
        if (auto* insts = field(*v, "/melody", "instruments")) {
            int i = 0;
            for (const auto& ji : require_array(*insts, "/melody/instruments")) {
                std::string path = "/melody/instruments/" + std::to_string(i++);
                if (ji.is_null())
                    doc.melody_instruments.push_back(std::nullopt);
                else
                    doc.melody_instruments.push_back(require_int(ji, path, 0, 127));
            }
        }
    }

    if (auto* v = field(j, "/", "octave_mode")) {
        std::string mode = require_string(*v, "/octave_mode");
        if (mode == "enforce")
            doc.octave_mode = OctaveMode::Enforce;
        else if (mode == "infer")
            doc.octave_mode = OctaveMode::Infer;
        else
            fail(ErrorKind::BadRequest, "/octave_mode: must be 'enforce' or 'infer'");
    }
    if (auto* v = field(j, "/", "strict_register")) {
        if (!v->is_boolean()) fail(ErrorKind::BadRequest, "/strict_register: expected a boolean");
        doc.strict_register = v->get<bool>();
    }
    if (auto* v = field(j, "/", "sampling")) {
        if (auto* t = field(*v, "/sampling", "temperature")) {
            doc.sampling.temperature = require_number(*t, "/sampling/temperature");
            if (doc.sampling.temperature < 0)
                fail(ErrorKind::BadRequest, "/sampling/temperature: must be non-negative");
        }
        if (auto* p = field(*v, "/sampling", "nucleus_p")) {
            doc.sampling.nucleus_p = require_number(*p, "/sampling/nucleus_p");
            if (doc.sampling.nucleus_p <= 0 || doc.sampling.nucleus_p > 1)
                fail(ErrorKind::BadRequest, "/sampling/nucleus_p: must lie in (0, 1]");
        }
        if (auto* s = field(*v, "/sampling", "seed"))
            doc.sampling.seed = static_cast<uint64_t>(require_number(*s, "/sampling/seed"));
    }
    return doc;
}

json request_to_json(const RequestDocument& doc) {
    json j{{"version", 1}};
    if (doc.length > 0) j["length"] = doc.length;
    if (!doc.bar_controls.empty()) {
        json arr = json::array();
        for (const auto& bc : doc.bar_controls)
            arr.push_back({{"rhythmicity", bc.rhythmicity}, {"polyphonicity", bc.polyphonicity}});
        j["bar_controls"] = std::move(arr);
    }
    if (!doc.track_controls.empty()) {
        json arr = json::array();
        for (const auto& [key, levels] : doc.track_controls) {
            json jt{{"bar", key.first}, {"program", key.second}};
            if (levels.pitch_avg) jt["pitch_avg"] = *levels.pitch_avg;
            if (levels.pitch_diversity) jt["pitch_diversity"] = *levels.pitch_diversity;
            arr.push_back(std::move(jt));
        }
        j["track_controls"] = std::move(arr);
    }
    if (doc.instrumentation) {
        j["instrumentation"] = {{"mode", "user"}, {"programs", *doc.instrumentation}};
    } else {
        j["instrumentation"] = {{"mode", "auto"}};
    }
    switch (doc.melody_mode) {
    case RequestDocument::MelodyMode::None: j["melody"] = {{"mode", "none"}}; break;
    case RequestDocument::MelodyMode::Extract: j["melody"] = {{"mode", "extract"}}; break;
    case RequestDocument::MelodyMode::File:
        j["melody"] = {{"mode", "file"}, {"path", doc.melody_path}};
        break;
    }
    if (!doc.melody_instruments.empty()) {
        json arr = json::array();
        for (const auto& inst : doc.melody_instruments)
            arr.push_back(inst ? json(*inst) : json(nullptr));
        j["melody"]["instruments"] = std::move(arr);
    }
    j["octave_mode"] = doc.octave_mode == OctaveMode::Infer ? "infer" : "enforce";
    j["strict_register"] = doc.strict_register;
    j["sampling"] = {{"temperature", doc.sampling.temperature},
                     {"nucleus_p", doc.sampling.nucleus_p},
                     {"seed", doc.sampling.seed}};
    return j;
}

ProjectConfig project_config_from_json(const json& j) {
    ProjectConfig config;
    if (auto* g = field(j, "/", "grid")) {
        config.beats_per_bar = require_int(g->at("beats_per_bar"), "/grid/beats_per_bar", 1, 64);
        config.subbeats_per_beat =
            require_int(g->at("subbeats_per_beat"), "/grid/subbeats_per_beat", 1, 48);
    }
    if (auto* v = field(j, "/", "registry_path")) config.registry_path = require_string(*v, "/registry_path");
    if (auto* v = field(j, "/", "bin_table_path"))
        config.bin_table_path = require_string(*v, "/bin_table_path");
    if (auto* v = field(j, "/", "model")) config.model = model_config_from_json(*v);
    if (auto* v = field(j, "/", "tempo_bpm")) config.tempo_bpm = require_number(*v, "/tempo_bpm");
    if (auto* v = field(j, "/", "sampling")) {
        if (auto* t = field(*v, "/sampling", "temperature"))
            config.sampling.temperature = require_number(*t, "/sampling/temperature");
        if (auto* p = field(*v, "/sampling", "nucleus_p"))
            config.sampling.nucleus_p = require_number(*p, "/sampling/nucleus_p");
        if (auto* s = field(*v, "/sampling", "seed"))
            config.sampling.seed = static_cast<uint64_t>(require_number(*s, "/sampling/seed"));
    }
    if (auto* v = field(j, "/", "train")) {
        config.train.steps = v->value("steps", config.train.steps);
        config.train.batch_size = v->value("batch_size", config.train.batch_size);
        config.train.lr = v->value("lr", config.train.lr);
        config.train.grad_clip = v->value("grad_clip", config.train.grad_clip);
        config.train.seed = v->value("seed", config.train.seed);
        config.train.snapshot_every = v->value("snapshot_every", config.train.snapshot_every);
        config.train.log_every = v->value("log_every", config.train.log_every);
    }
    return config;
}

ProjectConfig load_project_config(const std::string& path) {
    return project_config_from_json(read_json_file(path));
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, path + ": " + e.what());
    }
    return j;
}

void write_json_file(const std::string& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot write '" + tmp + "'");
        out << text;
        if (!out) fail(ErrorKind::Io, "short write to '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        fail(ErrorKind::Io, "cannot move '" + tmp + "' into place");
}

} // namespace miditex
