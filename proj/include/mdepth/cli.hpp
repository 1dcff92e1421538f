#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mdepth/config.hpp"

namespace mdepth::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

// Each command writes its artifacts plus config.ini (the resolved config)
// under out.
void cmd_synth(const RunConfig& config, const fs::path& out);
void cmd_train(const RunConfig& config, const fs::path& out);
void cmd_refine(const RunConfig& config, const fs::path& out);
void cmd_eval(const RunConfig& config, const fs::path& out);
void cmd_viz(const RunConfig& config, const fs::path& out);

// Maps a caught exception to its exit code.
int exit_code_for(const std::exception& e);

// mdepth <synth|train|refine|eval|viz> [--config FILE] [--set section.key=value]... --out DIR
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// File stem used for a window's artifacts ("seq_0/1" -> "seq_0_1").
std::string window_stem(const std::string& window_name);

}  // namespace mdepth::cli
