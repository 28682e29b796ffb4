#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gfusion/data.hpp"
#include "gfusion/metrics.hpp"
#include "gfusion/modality.hpp"

namespace gfusion::cli {

inline constexpr const char* kToolName = "gfusion";
inline constexpr const char* kToolVersion = "0.1.0";

enum class Verb { train, eval, gridsearch, score, synth, report };

std::string verb_name(Verb v);

// Raised for bad command lines; what() carries the offending flag or value
// followed by usage text.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CheckpointPolicy { all, best };

struct Command {
  Verb verb = Verb::train;
  std::filesystem::path manifest;
  std::filesystem::path config;
  std::filesystem::path grid;
  std::filesystem::path checkpoint;
  std::filesystem::path predictions;
  std::filesystem::path out;
  std::optional<ModalitySet> modalities;
  std::optional<std::uint64_t> seed;
  Split split = Split::test;
  ReportFormat format = ReportFormat::markdown;
  std::size_t jobs = 1;
  CheckpointPolicy checkpoints = CheckpointPolicy::all;
  std::vector<std::filesystem::path> runs;
  SynthOptions synth;
};

std::string usage();

// args excludes the program name.
Command parse(const std::vector<std::string>& args);

// Dispatches the command. Returns the process exit status; diagnostics go
// to `err`, human-readable summaries to `out`.
int run(const Command& cmd, std::ostream& out, std::ostream& err);

// parse + run with usage handling, as used by main().
int main_entry(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err);

}  // namespace gfusion::cli
