#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cpga/datasets.hpp"
#include "cpga/training.hpp"

namespace cpga {

struct AblationSpec {
    std::string name;
    LossToggles toggles;
    std::vector<std::uint64_t> seeds;
    ShiftConfig benchmark;
    TrainConfig train;

    void validate() const;
};

struct AblationResult {
    std::string name;
    std::vector<std::uint64_t> seeds;
    std::vector<double> accuracies;  // NaN for a failed run
    std::vector<bool> failed;
    double mean = 0.0;
    double std = 0.0;
    double source_only_mean = 0.0;
    double inter_distance = 0.0;
    double intra_distance = 0.0;
};

/// One full pipeline per (spec, seed); the seed drives both the benchmark and
/// training. A diverging run is recorded as a failed cell. Source models and
/// generators are shared between specs that would train them identically.
std::vector<AblationResult> run_ablation(std::span<const AblationSpec> specs, std::ostream* progress = nullptr);

// source-only, contrastive, weighted, +ELR, +NC.
std::vector<AblationSpec> loss_ladder(std::span<const std::uint64_t> seeds, const ShiftConfig& benchmark,
                                      const TrainConfig& train);

void write_ablation_csv(std::ostream& out, std::span<const AblationResult> results);

struct SensitivityTable {
    std::vector<double> lambdas;
    std::vector<double> etas;
    Mat accuracy;  // lambdas x etas, mean over seeds

    // Rows are lambda values, columns eta values.
    void write_csv(std::ostream& out) const;
};

SensitivityTable run_sensitivity(std::span<const double> lambdas, std::span<const double> etas,
                                 const ShiftConfig& benchmark, const TrainConfig& train,
                                 std::span<const std::uint64_t> seeds, std::ostream* progress = nullptr);

struct NoisePoint {
    double rate = 0.0;
    double weighted = 0.0;
    double unweighted = 0.0;
};

/// For each rate, mean target accuracy of the weighted and the unweighted
/// contrastive variant with that fraction of pseudo labels corrupted.
std::vector<NoisePoint> run_noise_robustness(std::span<const double> rates, const ShiftConfig& benchmark,
                                             const TrainConfig& train, std::span<const std::uint64_t> seeds,
                                             std::ostream* progress = nullptr);

void write_noise_csv(std::ostream& out, std::span<const NoisePoint> points);

/// Writes loss.svg, accuracy.svg and prototypes.svg into `dir`. The prototype
/// scatter uses a seeded random 2-D projection of `prototypes` when given,
/// otherwise it plots inter- against intra-class distance per epoch.
std::vector<std::string> emit_plots(const MetricsLog& log, const std::string& dir, const Mat* prototypes = nullptr,
                                    const Labels* labels = nullptr);

}  // namespace cpga
