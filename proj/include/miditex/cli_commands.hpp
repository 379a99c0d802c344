#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "miditex/json_io.hpp"

namespace miditex::cli {

// Shared flags resolved before dispatch. Paths given on the command line
// override the project config.
struct Options {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<uint64_t> seed;
    std::string octave_mode; // "", "enforce", "infer"
    std::optional<bool> strict_register;
    std::string bins_path;
};

// Exit codes: 0 success, 1 input error (returned or thrown as an input-side
// Error), 2 internal (any other exception; mapped by the binary's main).
int tokenize(const Options& options, const std::vector<std::string>& files);
int detokenize(const Options& options, const std::vector<std::string>& token_files);
int fit_bins(const Options& options, const std::vector<std::string>& files,
             const std::string& out_path);
int extract_melody_cmd(const Options& options, const std::string& file,
                       const std::string& out_path);
int analyze(const Options& options, const std::string& file, std::ostream& out);
int synth(const Options& options, int pieces, int bars);
int train_cmd(const Options& options, const std::vector<std::string>& files,
              const std::string& checkpoint_out, int steps_override);
int transfer_cmd(const Options& options, const std::string& reference_path,
                 const std::string& request_path, const std::string& checkpoint_path);
int evaluate_cmd(const Options& options, const std::string& reference_path,
                 const std::string& generated_path, const std::string& request_path,
                 std::ostream& out);

} // namespace miditex::cli
