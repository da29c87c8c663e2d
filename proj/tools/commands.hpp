#pragma once

#include <iosfwd>
#include <string>

#include "run_config.hpp"

namespace zsseg::cli {

// Each command reads what it needs from the config, writes its artifacts and
// prints a JSON summary to `out`. Failures are raised as zsseg::Error.

void cmd_synth(const RunConfig& config, std::ostream& out);
void cmd_train(const RunConfig& config, std::ostream& out);
void cmd_eval_seg(const RunConfig& config, std::ostream& out);
void cmd_eval_cls(const RunConfig& config, std::ostream& out);
void cmd_concepts(const RunConfig& config, std::ostream& out);
void cmd_visualize(const RunConfig& config, std::ostream& out);
void cmd_init_vit(const RunConfig& config, std::ostream& out);
void cmd_precompute(const RunConfig& config, std::ostream& out);

/// Names accepted by run_command, in help order.
const char* const* command_names();
void run_command(const std::string& name, const RunConfig& config, std::ostream& out);

}  // namespace zsseg::cli
