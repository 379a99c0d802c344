#include <iostream>

#include <CLI11.hpp>

#include "miditex/cli_commands.hpp"
#include "miditex/errors.hpp"

using miditex::cli::Options;

int main(int argc, char** argv) {
    CLI::App app{"melody-aware texture-controllable multi-track style transfer"};
    app.require_subcommand(1);

    Options options;
    uint64_t seed_value = 0;
    bool seed_given = false;
    bool strict_flag = false;
    bool strict_given = false;
    app.add_option("--config", options.config_path, "project config JSON");
    app.add_option("--out-dir", options.out_dir, "output directory")->capture_default_str();
    app.add_option("--bins", options.bins_path, "bin table JSON (overrides the config)");
    auto* seed_opt = app.add_option("--seed", seed_value, "seed override");
    app.add_option("--octave-mode", options.octave_mode, "enforce|infer")
        ->check(CLI::IsMember({"enforce", "infer", ""}));
    auto* strict_opt = app.add_flag("--strict-register", strict_flag,
                                    "mask inferred octaves to the instrument register");

    std::vector<std::string> files;
    std::string out_file, reference, request_path, checkpoint, generated;
    int pieces = 20, bars = 8, steps = 0;

    auto* tok = app.add_subcommand("tokenize", "MIDI files -> token text + texture profiles");
    tok->add_option("files", files, "input MIDI files")->required();

    auto* detok = app.add_subcommand("detokenize", "token text files -> MIDI");
    detok->add_option("files", files, "input token files")->required();

    auto* fit = app.add_subcommand("fit-bins", "fit attribute bins on a corpus");
    fit->add_option("files", files, "corpus MIDI files")->required();
    fit->add_option("--out", out_file, "bin table output path")->required();

    auto* mel = app.add_subcommand("extract-melody", "skyline melody of a MIDI file");
    mel->add_option("file", reference, "input MIDI file")->required();
    mel->add_option("--out", out_file, "melody JSON output path")->required();

    auto* ana = app.add_subcommand("analyze", "per-bar attribute table (TSV)");
    ana->add_option("file", reference, "input MIDI file")->required();

    auto* syn = app.add_subcommand("synth", "generate a synthetic homophonic corpus");
    syn->add_option("--pieces", pieces, "number of pieces")->capture_default_str();
    syn->add_option("--bars", bars, "bars per piece")->capture_default_str();

    auto* trn = app.add_subcommand("train", "train a checkpoint on a MIDI corpus");
    trn->add_option("files", files, "corpus MIDI files")->required();
    trn->add_option("--checkpoint", checkpoint, "checkpoint output path")->required();
    trn->add_option("--steps", steps, "step-count override");

    auto* tra = app.add_subcommand("transfer", "style transfer of a reference piece");
    tra->add_option("reference", reference, "reference MIDI file")->required();
    tra->add_option("--request", request_path, "transfer request JSON")->required();
    tra->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    auto* eva = app.add_subcommand("evaluate", "metrics for a reference/generation pair");
    eva->add_option("reference", reference, "reference MIDI file")->required();
    eva->add_option("generated", generated, "generated MIDI file")->required();
    eva->add_option("--request", request_path, "request JSON with the asked-for controls")->required();

    CLI11_PARSE(app, argc, argv);
    seed_given = seed_opt->count() > 0;
    strict_given = strict_opt->count() > 0;
    if (seed_given) options.seed = seed_value;
    if (strict_given) options.strict_register = strict_flag;

    try {
        if (tok->parsed()) return miditex::cli::tokenize(options, files);
        if (detok->parsed()) return miditex::cli::detokenize(options, files);
        if (fit->parsed()) return miditex::cli::fit_bins(options, files, out_file);
        if (mel->parsed()) return miditex::cli::extract_melody_cmd(options, reference, out_file);
        if (ana->parsed()) return miditex::cli::analyze(options, reference, std::cout);
        if (syn->parsed()) return miditex::cli::synth(options, pieces, bars);
        if (trn->parsed()) return miditex::cli::train_cmd(options, files, checkpoint, steps);
        if (tra->parsed()) return miditex::cli::transfer_cmd(options, reference, request_path, checkpoint);
        if (eva->parsed())
            return miditex::cli::evaluate_cmd(options, reference, generated, request_path, std::cout);
    } catch (const miditex::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.is_input_error() ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
