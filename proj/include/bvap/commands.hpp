// Command-line entry points: train, predict, eval, synth, gradcheck, ablate.
#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "bvap/config.hpp"
#include "bvap/dataset.hpp"
#include "bvap/model.hpp"

namespace bvap {

/// "synth" or "synth:N" generates N (default 20) synthetic samples at the
/// configured base size; anything else is a manifest path.
std::vector<SampleRecord> load_data(const std::string& spec, const RunConfig& cfg,
                                    std::uint64_t seed);

/// Builds a model from `cfg` and overwrites its parameters from `checkpoint`.
/// Every model parameter must be present in the file.
Model load_model(const RunConfig& cfg, const std::filesystem::path& checkpoint);

/// Returns the process exit status.
int run_cli(int argc, char** argv);

}  // namespace bvap
