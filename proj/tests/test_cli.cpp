#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "miditex/cli_commands.hpp"
#include "miditex/decoder.hpp"
#include "miditex/midi_io.hpp"
#include "test_util.hpp"

using namespace miditex;
using namespace miditex::test;
namespace fs = std::filesystem;

namespace {

struct Workspace {
    fs::path dir;
    cli::Options options;

    Workspace() {
        dir = fs::path("cli_ws");
        fs::remove_all(dir);
        fs::create_directories(dir);

        std::ofstream reg(dir / "registry.txt");
        reg << "40, Violin, G3, B7\n42, Cello, C2, A5\n56, Trumpet, F#3, C6\n"
               "68, Oboe, A#3, A6\n70, Bassoon, A#1, B4\n73, Flute, B3, C7\n";
        reg.close();

        json config = {
            {"grid", {{"beats_per_bar", 4}, {"subbeats_per_beat", 4}}},
            {"registry_path", (dir / "registry.txt").string()},
            {"model",
             {{"embed_dim", 16},
              {"encoder_layers", 1},
              {"decoder_layers", 1},
              {"heads", 2},
              {"latent_dim", 4},
              {"condition_embed_dim", 8},
              {"context_length", 2048}}},
            {"train", {{"steps", 6}, {"batch_size", 2}, {"lr", 0.003}, {"seed", 5}}},
        };
        write_json_file((dir / "config.json").string(), config);

        options.config_path = (dir / "config.json").string();
        options.out_dir = dir.string();
    }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    std::vector<std::string> synth_files(int n) const {
        std::vector<std::string> files;
        for (int i = 0; i < n; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "synth_%04d.mid", i);
            files.push_back(path(name));
        }
        return files;
    }
};

std::vector<uint8_t> slurp(const std::string& path) { return read_file_bytes(path); }

} // namespace

TEST_CASE("the full command pipeline works end to end") {
    Workspace ws;

    // synth
    REQUIRE(cli::synth(ws.options, 6, 4) == 0);
    auto files = ws.synth_files(6);
    for (const auto& f : files) REQUIRE(fs::exists(f));

    // fit-bins
    REQUIRE(cli::fit_bins(ws.options, files, ws.path("bins.json")) == 0);
    BinTable bins = bin_table_from_json(read_json_file(ws.path("bins.json")));
    CHECK(bins.beats_per_bar == 4);
    ws.options.bins_path = ws.path("bins.json");

    // tokenize -> detokenize round trip, byte identical to the quantized source
    REQUIRE(cli::tokenize(ws.options, files) == 0);
    std::vector<std::string> token_files;
    for (int i = 0; i < 6; ++i) token_files.push_back(ws.path("synth_000" + std::to_string(i) + ".tokens.txt"));
    for (const auto& f : token_files) REQUIRE(fs::exists(f));
    REQUIRE(cli::detokenize(ws.options, token_files) == 0);
    for (int i = 0; i < 6; ++i) {
        auto original = slurp(files[i]);
        auto round = slurp(ws.path("synth_000" + std::to_string(i) + ".mid"));
        CHECK(original == round);
    }

    // analyze
    std::ostringstream tsv;
    REQUIRE(cli::analyze(ws.options, files[0], tsv) == 0);
    CHECK(tsv.str().find("rhythmicity_raw") != std::string::npos);
    CHECK(tsv.str().find("avg_pitch_class") != std::string::npos);

    // extract-melody
    REQUIRE(cli::extract_melody_cmd(ws.options, files[0], ws.path("melody.json")) == 0);
    MelodyConstraint melody = melody_from_json(read_json_file(ws.path("melody.json")));
    CHECK(melody.bar_count() == 4);

    // train a tiny checkpoint
    REQUIRE(cli::train_cmd(ws.options, files, ws.path("model.ckpt"), 0) == 0);
    REQUIRE(fs::exists(ws.path("model.ckpt")));
    REQUIRE(fs::exists(ws.path("model.ckpt.log.jsonl")));

    // transfer with a melody request
    json request = {
        {"version", 1},
        {"instrumentation", {{"mode", "user"}, {"ensemble", {40, 73}}}},
        {"melody", {{"mode", "extract"}, {"instrument", 73}}},
        {"octave_mode", "enforce"},
        {"sampling", {{"temperature", 1.0}, {"nucleus_p", 0.9}, {"seed", 7}}},
    };
    write_json_file(ws.path("request.json"), request);
    REQUIRE(cli::transfer_cmd(ws.options, files[0], ws.path("request.json"), ws.path("model.ckpt")) == 0);
    REQUIRE(fs::exists(ws.path("synth_0000.transfer.mid")));
    REQUIRE(fs::exists(ws.path("synth_0000.trace.json")));
    REQUIRE(fs::exists(ws.path("synth_0000.tokens.txt")));
    REQUIRE(fs::exists(ws.path("synth_0000.report.json")));

    json report = read_json_file(ws.path("synth_0000.report.json"));
    CHECK(report.at("melodic_fidelity").get<double>() == 1.0); // enforce mode guarantee

    // determinism: the same request and seed give a bit-identical trace
    std::string trace_once = read_text_file(ws.path("synth_0000.trace.json"));
    REQUIRE(cli::transfer_cmd(ws.options, files[0], ws.path("request.json"), ws.path("model.ckpt")) == 0);
    CHECK(read_text_file(ws.path("synth_0000.trace.json")) == trace_once);

    // standalone evaluation of the transfer output matches the bundled report
    std::ostringstream eval_out;
    REQUIRE(cli::evaluate_cmd(ws.options, files[0], ws.path("synth_0000.transfer.mid"),
                              ws.path("request.json"), eval_out) == 0);
    json standalone = json::parse(eval_out.str());
    CHECK(standalone.at("overall_fidelity") == report.at("overall_fidelity"));
    CHECK(standalone.at("melodic_fidelity") == report.at("melodic_fidelity"));
    CHECK(standalone.at("rhythmicity_spearman") == report.at("rhythmicity_spearman"));

    // self-evaluation: the reference against itself scores 1.0 across the board
    std::ostringstream self_out;
    json plain_request = {{"version", 1}};
    write_json_file(ws.path("self_request.json"), plain_request);
    REQUIRE(cli::evaluate_cmd(ws.options, files[0], files[0], ws.path("self_request.json"),
                              self_out) == 0);
    json self = json::parse(self_out.str());
    CHECK(self.at("overall_fidelity").get<double>() == doctest::Approx(1.0));
    CHECK(self.at("melodic_fidelity").get<double>() == 1.0);
    if (self.at("rhythmicity_spearman").is_number())
        CHECK(self.at("rhythmicity_spearman").get<double>() == doctest::Approx(1.0));
}

TEST_CASE("a corrupt file in a batch fails the batch but not the other files") {
    Workspace ws;
    REQUIRE(cli::synth(ws.options, 2, 2) == 0);
    std::ofstream bad(ws.path("broken.mid"), std::ios::binary);
    bad << "this is not midi";
    bad.close();

    auto files = ws.synth_files(2);
    files.push_back(ws.path("broken.mid"));
    CHECK(cli::tokenize(ws.options, files) == 1);
    CHECK(fs::exists(ws.path("synth_0000.tokens.txt")));
    CHECK(fs::exists(ws.path("synth_0001.tokens.txt")));
    CHECK(!fs::exists(ws.path("broken.tokens.txt")));
}

TEST_CASE("schema violations report JSON pointer paths") {
    json bad = {{"version", 1}, {"bar_controls", {{{"rhythmicity", 99}, {"polyphonicity", 1}}}}};
    try {
        request_from_json(bad);
        FAIL("expected a schema error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("/bar_controls/0/rhythmicity") != std::string::npos);
        CHECK(e.is_input_error());
    }

    json no_version = json::object();
    CHECK_THROWS_WITH_AS(request_from_json(no_version), doctest::Contains("/version"), Error);
}

TEST_CASE("a schema-valid request naming an unknown instrument is rejected") {
    Workspace ws;
    REQUIRE(cli::synth(ws.options, 4, 4) == 0);
    REQUIRE(cli::fit_bins(ws.options, ws.synth_files(4), ws.path("bins.json")) == 0);
    ws.options.bins_path = ws.path("bins.json");
    REQUIRE(cli::train_cmd(ws.options, ws.synth_files(4), ws.path("model.ckpt"), 2) == 0);

    json request = {{"version", 1},
                    {"instrumentation", {{"mode", "user"}, {"ensemble", {25, 73}}}}};
    write_json_file(ws.path("request.json"), request);
    try {
        cli::transfer_cmd(ws.options, ws.synth_files(4)[0], ws.path("request.json"),
                          ws.path("model.ckpt"));
        FAIL("expected a registry error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NotInSubset);
        CHECK(e.is_input_error()); // maps to exit code 1
    }
}

TEST_CASE("project config rejects missing files and mismatched grids") {
    Workspace ws;
    json config = read_json_file(ws.path("config.json"));
    config["registry_path"] = ws.path("missing.txt");
    write_json_file(ws.path("bad_config.json"), config);
    cli::Options options = ws.options;
    options.config_path = ws.path("bad_config.json");
    CHECK_THROWS_AS(cli::synth(options, 1, 2), Error);

    // A bin table fitted on another grid is refused.
    REQUIRE(cli::synth(ws.options, 1, 2) == 0);
    BinTable bins = fixed_bins();
    bins.beats_per_bar = 3;
    write_json_file(ws.path("bins3.json"), bin_table_to_json(bins));
    cli::Options with_bins = ws.options;
    with_bins.bins_path = ws.path("bins3.json");
    CHECK_THROWS_AS(cli::tokenize(with_bins, ws.synth_files(1)), Error);
}
