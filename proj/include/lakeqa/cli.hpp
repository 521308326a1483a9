#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lakeqa/eval.hpp"
#include "lakeqa/reasoner.hpp"

namespace lakeqa {

/// Process exit codes, one per failing stage.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitInput = 4,
  kExitDecomposition = 5,
  kExitRetrieval = 6,
  kExitPlanning = 7,
  kExitExecution = 8,
  kExitDataset = 9,
  kExitProvider = 10,
};

int exit_code_for(Stage stage);

/// Run record for eval from one answered question.
RunRecord make_run_record(const std::string& id, const std::string& question, std::size_t k,
                          const AnswerOutcome& outcome);

/// args excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, const char* const* argv);

}  // namespace lakeqa
