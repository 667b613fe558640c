#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mvstr/run_config.hpp"

namespace mvstr {

// Renders `config.synth` with the run seed and exports it to `out_dir`.
void cmd_synth(const RunConfig& config, const std::string& out_dir);

// Trains on every view of the given datasets and saves a checkpoint. The
// per-step log goes to `log_path` when it is not empty.
TrainLog cmd_train(const RunConfig& config, const std::vector<std::string>& data_dirs,
                   const std::string& checkpoint, const std::string& log_path = {});

// Predicts a depth and confidence map for every reference in pair.txt using
// its first `infer.sources` sources. Writes a dataset directory (images,
// cams, finest-stage depths, confidence/<id>.pfm, pair.txt) that cmd_fuse
// reads.
void cmd_infer(const RunConfig& config, const std::string& data_dir, const std::string& checkpoint,
               const std::string& out_dir);

// Filters and fuses a dataset directory into a PLY. Returns the point count.
std::size_t cmd_fuse(const RunConfig& config, const std::string& data_dir, const std::string& out_ply);

// Prints "accuracy <a>", "completeness <c>" and "overall <o>" lines.
CloudMetrics cmd_eval(const RunConfig& config, const std::string& recon_ply, const std::string& gt_ply,
                      std::ostream& out);

// Returns 0 when every selected check passes, 2 otherwise.
int cmd_gradcheck(const RunConfig& config, const std::string& filter, std::ostream& out);

// Runs `body` and maps errors to exit codes: 1 for usage, configuration,
// I/O and dimension errors, 2 for numerical failures. The message goes to
// `err`.
int run_guarded(const std::function<int()>& body, std::ostream& err);

}  // namespace mvstr
