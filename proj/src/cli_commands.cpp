#include "miditex/cli_commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "miditex/decoder.hpp"
#include "miditex/metrics.hpp"
#include "miditex/midi_io.hpp"
#include "miditex/synthetic.hpp"

namespace miditex::cli {

namespace fs = std::filesystem;

namespace {

struct Context {
    ProjectConfig project;
    InstrumentRegistry registry;
    GrammarConfig grammar;
    std::optional<BinTable> bins;
    std::string out_dir;
    SamplingParams sampling;
};

Context make_context(const Options& options) {
    Context ctx;
    if (!options.config_path.empty()) ctx.project = load_project_config(options.config_path);

    if (!ctx.project.registry_path.empty()) {
        if (!fs::exists(ctx.project.registry_path))
            fail(ErrorKind::Io, "registry file '" + ctx.project.registry_path + "' does not exist");
        ctx.registry = InstrumentRegistry::load(ctx.project.registry_path);
    } else {
        ctx.registry = InstrumentRegistry::bundled();
    }
    ctx.grammar = GrammarConfig::from_registry(ctx.registry, ctx.project.beats_per_bar,
                                               ctx.project.subbeats_per_beat);

    std::string bins_path =
        !options.bins_path.empty() ? options.bins_path : ctx.project.bin_table_path;
    if (!bins_path.empty()) {
        if (!fs::exists(bins_path))
            fail(ErrorKind::Io, "bin table '" + bins_path + "' does not exist");
        ctx.bins = bin_table_from_json(read_json_file(bins_path));
        if (ctx.bins->beats_per_bar != ctx.project.beats_per_bar ||
            ctx.bins->subbeats_per_beat != ctx.project.subbeats_per_beat)
            fail(ErrorKind::BadRequest, "bin table '" + bins_path +
                                            "' was fitted on a different grid than the configuration");
    }

    ctx.out_dir = options.out_dir;
    fs::create_directories(ctx.out_dir);
    ctx.sampling = ctx.project.sampling;
    if (options.seed) ctx.sampling.seed = *options.seed;
    return ctx;
}

QuantizedScore load_score(const Context& ctx, const std::string& path, ParseReport* report = nullptr) {
    GridConfig grid;
    grid.subbeats_per_beat = ctx.project.subbeats_per_beat;
    grid.default_beats_per_bar = ctx.project.beats_per_bar;
    ParseResult parsed = parse_midi(read_file_bytes(path), grid);
    if (report) *report = parsed.report;
    return split_long_durations(std::move(parsed.score), ctx.grammar.max_duration);
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

std::string out_path(const Context& ctx, const std::string& name) {
    return (fs::path(ctx.out_dir) / name).string();
}

void write_bytes_atomic(const std::string& path, const std::vector<uint8_t>& bytes) {
    write_file_bytes(path, bytes);
}

} // namespace

int tokenize(const Options& options, const std::vector<std::string>& files) {
    Context ctx = make_context(options);
    std::vector<std::string> errors(files.size());
    const BinTable* bins = ctx.bins ? &*ctx.bins : nullptr;

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(files.size()); ++i) {
        try {
            QuantizedScore score = load_score(ctx, files[i]);
            TextureProfile profile = extract_profile(score, bins);
            TokenSequence tokens = encode(score, profile, ctx.grammar);
            write_text_file(out_path(ctx, stem_of(files[i]) + ".tokens.txt"),
                            sequence_to_text(tokens));
            write_json_file(out_path(ctx, stem_of(files[i]) + ".profile.json"),
                            profile_to_json(profile));
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    int failed = 0;
    for (size_t i = 0; i < files.size(); ++i)
        if (!errors[i].empty()) {
            ++failed;
            std::cerr << files[i] << ": " << errors[i] << "\n";
        }
    return failed == 0 ? 0 : 1;
}

int detokenize(const Options& options, const std::vector<std::string>& token_files) {
    Context ctx = make_context(options);
    int failed = 0;
    for (const auto& file : token_files) {
        try {
            TokenSequence tokens = sequence_from_text(read_text_file(file));
            DecodeResult decoded = decode(tokens, ctx.grammar, ctx.bins ? &*ctx.bins : nullptr);
            std::string stem = stem_of(file);
            if (stem.size() > 7 && stem.substr(stem.size() - 7) == ".tokens")
                stem = stem.substr(0, stem.size() - 7);
            write_bytes_atomic(out_path(ctx, stem + ".mid"),
                               write_midi(decoded.score, ctx.project.tempo_bpm));
        } catch (const std::exception& e) {
            ++failed;
            std::cerr << file << ": " << e.what() << "\n";
        }
    }
    return failed == 0 ? 0 : 1;
}

int fit_bins(const Options& options, const std::vector<std::string>& files,
             const std::string& out_file) {
    Context ctx = make_context(options);
    std::vector<QuantizedScore> corpus;
    for (const auto& file : files) corpus.push_back(load_score(ctx, file));
    BinTable table = miditex::fit_bins(corpus);
    write_json_file(out_file, bin_table_to_json(table));
    return 0;
}

int extract_melody_cmd(const Options& options, const std::string& file,
                       const std::string& out_file) {
    Context ctx = make_context(options);
    QuantizedScore score = load_score(ctx, file);
    MelodyConstraint melody = extract_melody(score);
    write_json_file(out_file, melody_to_json(melody));
    return 0;
}

int analyze(const Options& options, const std::string& file, std::ostream& out) {
    Context ctx = make_context(options);
    QuantizedScore score = load_score(ctx, file);
    TextureProfile profile = extract_profile(score, ctx.bins ? &*ctx.bins : nullptr);

    out << "bar\trhythmicity_raw\trhythmicity_class\tpolyphonicity_raw\tpolyphonicity_class\n";
    for (size_t b = 0; b < profile.bars.size(); ++b) {
        const BarTexture& bar = profile.bars[b];
        out << b << "\t" << bar.rhythmicity_raw << "\t" << bar.rhythmicity_class << "\t"
            << bar.polyphonicity_raw << "\t" << bar.polyphonicity_class << "\n";
    }
    out << "\nbar\ttrack\tprogram\tavg_pitch_raw\tavg_pitch_class\tpitch_diversity\n";
    for (size_t b = 0; b < profile.bars.size(); ++b)
        for (const auto& [track, tex] : profile.bars[b].tracks)
            out << b << "\t" << track << "\t" << score.tracks[track].program << "\t"
                << tex.avg_pitch_raw << "\t" << tex.avg_pitch_class << "\t"
                << tex.pitch_diversity_raw << "\n";
    return 0;
}

int synth(const Options& options, int pieces, int bars) {
    Context ctx = make_context(options);
    SynthOptions synth_options;
    synth_options.pieces = pieces;
    synth_options.bars = bars;
    synth_options.seed = ctx.sampling.seed;
    synth_options.beats_per_bar = ctx.project.beats_per_bar;
    synth_options.subbeats_per_beat = ctx.project.subbeats_per_beat;
    std::vector<QuantizedScore> corpus = synth_corpus(synth_options, ctx.registry);
    for (size_t i = 0; i < corpus.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%04zu.mid", i);
        write_bytes_atomic(out_path(ctx, name), write_midi(corpus[i], ctx.project.tempo_bpm));
    }
    return 0;
}

namespace {

struct Prepared {
    std::vector<QuantizedScore> corpus;
    BinTable bins;
    std::vector<SeqExample> examples;
    Vocabulary vocab;
};

Prepared prepare_corpus(const Context& ctx, const std::vector<std::string>& files) {
    Prepared prep{{}, {}, {}, Vocabulary(ctx.grammar)};
    for (const auto& file : files) prep.corpus.push_back(load_score(ctx, file));
    prep.bins = ctx.bins ? *ctx.bins : miditex::fit_bins(prep.corpus);
    for (const auto& score : prep.corpus) {
        TextureProfile profile = extract_profile(score, &prep.bins);
        TokenSequence tokens = encode(score, profile, ctx.grammar);
        prep.examples.push_back(make_example(tokens, profile, prep.vocab));
    }
    return prep;
}

} // namespace

int train_cmd(const Options& options, const std::vector<std::string>& files,
              const std::string& checkpoint_out, int steps_override) {
    Context ctx = make_context(options);
    if (files.empty()) fail(ErrorKind::BadRequest, "no corpus files given");
    Prepared prep = prepare_corpus(ctx, files);

    ModelConfig mc = ctx.project.model;
    mc.vocab_size = prep.vocab.size();
    mc.bar_classes = 8;
    TrainOptions topt = ctx.project.train;
    if (steps_override > 0) topt.steps = steps_override;
    if (options.seed) topt.seed = *options.seed;
    topt.log_path = checkpoint_out + ".log.jsonl";

    Model model(mc, topt.seed);
    TrainResult result = train_model(model, prep.examples, topt);
    model.save(checkpoint_out);
    if (!ctx.bins) write_json_file(checkpoint_out + ".bins.json", bin_table_to_json(prep.bins));

    std::cout << "steps " << result.steps_run << "  recon " << result.initial_recon << " -> "
              << result.final_recon << (result.diverged ? "  (diverged, rolled back)" : "") << "\n";
    return result.diverged ? 1 : 0;
}

namespace {

TransferRequest build_request(const Context& ctx, const RequestDocument& doc,
                              const QuantizedScore& reference, const Options& options) {
    TransferRequest request;
    request.reference = reference;
    request.length = doc.length > 0 ? doc.length : reference.bar_count();
    request.bar_controls = doc.bar_controls;
    request.track_controls = doc.track_controls;
    if (doc.instrumentation) {
        std::vector<std::vector<int>> per_bar = *doc.instrumentation;
        if (per_bar.size() == 1 && request.length > 1)
            per_bar.assign(request.length, per_bar[0]); // single ensemble, every bar
        request.instrumentation = std::move(per_bar);
    }

    if (doc.melody_mode != RequestDocument::MelodyMode::None) {
        MelodyConstraint melody;
        if (doc.melody_mode == RequestDocument::MelodyMode::Extract) {
            melody = miditex::extract_melody(reference);
            melody.bars.resize(std::min<size_t>(melody.bars.size(), request.length));
        } else {
            melody = melody_from_json(read_json_file(doc.melody_path));
        }
        if (!doc.melody_instruments.empty()) {
            std::vector<std::optional<int>> per_bar = doc.melody_instruments;
            if (per_bar.size() == 1) per_bar.assign(melody.bars.size(), per_bar[0]);
            melody = assign_instruments(std::move(melody), per_bar, ctx.registry);
        }
        request.melody = std::move(melody);
    }

    request.octave_mode = doc.octave_mode;
    request.strict_register = doc.strict_register;
    request.sampling = doc.sampling;
    if (!options.octave_mode.empty()) {
        if (options.octave_mode == "enforce")
            request.octave_mode = OctaveMode::Enforce;
        else if (options.octave_mode == "infer")
            request.octave_mode = OctaveMode::Infer;
        else
            fail(ErrorKind::BadRequest, "--octave-mode must be 'enforce' or 'infer'");
    }
    if (options.strict_register) request.strict_register = *options.strict_register;
    if (options.seed) request.sampling.seed = *options.seed;
    return request;
}

} // namespace

int transfer_cmd(const Options& options, const std::string& reference_path,
                 const std::string& request_path, const std::string& checkpoint_path) {
    Context ctx = make_context(options);
    if (!ctx.bins)
        fail(ErrorKind::BadRequest, "transfer needs a bin table (--bins or the project config)");
    QuantizedScore reference = load_score(ctx, reference_path);
    RequestDocument doc = request_from_json(read_json_file(request_path));
    TransferRequest request = build_request(ctx, doc, reference, options);

    Model model = Model::load(checkpoint_path);
    GenerationTrace trace = transfer(request, model, ctx.grammar, *ctx.bins, ctx.registry);
    EvalReport report = evaluate(request, trace, *ctx.bins);

    std::string stem = stem_of(reference_path);
    write_bytes_atomic(out_path(ctx, stem + ".transfer.mid"),
                       write_midi(trace.score, ctx.project.tempo_bpm));
    write_json_file(out_path(ctx, stem + ".trace.json"), trace_to_json(trace));
    write_text_file(out_path(ctx, stem + ".tokens.txt"), sequence_to_text(trace.tokens));
    write_json_file(out_path(ctx, stem + ".report.json"), report_to_json(report));
    std::cout << report_table(report);
    return 0;
}

int evaluate_cmd(const Options& options, const std::string& reference_path,
                 const std::string& generated_path, const std::string& request_path,
                 std::ostream& out) {
    Context ctx = make_context(options);
    if (!ctx.bins)
        fail(ErrorKind::BadRequest, "evaluate needs a bin table (--bins or the project config)");
    QuantizedScore reference = load_score(ctx, reference_path);
    QuantizedScore generated = load_score(ctx, generated_path);
    if (reference.bar_count() != generated.bar_count())
        fail(ErrorKind::BadRequest, "bar-count mismatch: reference has " +
                                        std::to_string(reference.bar_count()) + " bars, generation " +
                                        std::to_string(generated.bar_count()));

    RequestDocument doc = request_from_json(read_json_file(request_path));
    std::vector<BarControl> requested = doc.bar_controls;
    if (requested.empty()) {
        TextureProfile ref_profile = extract_profile(reference, &*ctx.bins);
        for (const auto& bar : ref_profile.bars)
            requested.push_back(BarControl{bar.rhythmicity_class, bar.polyphonicity_class});
    }
    std::optional<MelodyConstraint> melody;
    if (doc.melody_mode == RequestDocument::MelodyMode::File)
        melody = melody_from_json(read_json_file(doc.melody_path));

    EvalReport report =
        evaluate_scores(reference, generated, requested, doc.track_controls, melody, *ctx.bins);
    out << report_to_json(report).dump(2) << "\n";
    std::cerr << report_table(report);
    return 0;
}

} // namespace miditex::cli
