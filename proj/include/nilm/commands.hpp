#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "nilm/attention.hpp"
#include "nilm/config.hpp"
#include "nilm/model.hpp"
#include "nilm/training.hpp"

namespace nilm {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitDivergence = 3 };

// out_dir from the config unless NILM_OUT_DIR is set.
std::filesystem::path resolve_out_dir(const RunConfig& cfg);

ModelConfig model_config_from(const RunConfig& cfg, const AttentionMode& mode);
TrainConfig train_config_from(const RunConfig& cfg);

// ---- bench ----------------------------------------------------------------

struct BenchRow {
    std::string type;
    AttentionMode mode;
    double seconds = 0.0;  // median
    double ratio = 0.0;    // median over rounds of this row's time / the first row's time
    std::vector<double> samples;  // one time per round, aligned across rows
};

// Median of samples_a[i] / samples_b[i].
double paired_ratio(const BenchRow& a, const BenchRow& b);

// Interleaved encoder timings for the five attention variants. Each round
// times every variant once, so per-round ratios cancel slow drift of the host.
std::vector<BenchRow> run_bench(const ModelConfig& base, std::size_t batch, std::size_t reps, std::size_t warmup,
                                std::uint64_t seed);

// ---- gradcheck ------------------------------------------------------------

struct GradcheckRow {
    std::string mode;
    std::string parameter;
    double max_rel_error = 0.0;
};

// Full-model loss gradients against central differences, one row per
// parameter tensor.
std::vector<GradcheckRow> gradcheck_model(const ModelConfig& config, std::size_t batch, const LossConfig& loss,
                                          const MaskingScheme& masking, double fd_eps);

// The attention variants compared by the ablation grid, in table order.
std::vector<AttentionMode> ablation_variants();
std::string ablation_label(const AttentionMode& mode);

// ---- verbs ----------------------------------------------------------------
// Each returns an ExitCode; library errors propagate as exceptions and are
// mapped by run_cli.

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_bench(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_inspect(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// Parses argv (without the program name) and dispatches.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nilm
