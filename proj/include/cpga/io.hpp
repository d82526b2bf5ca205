#pragma once

#include <cstdint>
#include <string>

#include "cpga/datasets.hpp"
#include "cpga/experiments.hpp"
#include "cpga/memory.hpp"
#include "cpga/nn.hpp"
#include "cpga/training.hpp"

namespace cpga {

/// Checkpoint text format:
///
///   cpga-checkpoint v1
///   component=<name> seed=<u64> frozen=<0|1> tensors=<count>
///   <name> <rows> <cols>          (one manifest line per tensor)
///   data
///   <rows*cols values, row-major, 17 significant digits>   (one line per tensor)
///
/// Values round-trip exactly.
std::string serialize_checkpoint(const ParamSet& params);
ParamSet parse_checkpoint(const std::string& text);
void save_checkpoint(const std::string& path, const ParamSet& params);
ParamSet load_checkpoint(const std::string& path);

// FNV-1a of the serialized checkpoint.
std::uint64_t checkpoint_hash(const ParamSet& params);

// Banks travel in the same checkpoint format.
ParamSet to_params(const PredictionBank& bank);
ParamSet to_params(const FeatureBank& bank);
PredictionBank prediction_bank_from_params(const ParamSet& params);
FeatureBank feature_bank_from_params(const ParamSet& params);

enum class Benchmark { Gaussian, Moons };

struct RunConfig {
    Benchmark benchmark = Benchmark::Gaussian;
    ShiftConfig shift;
    TrainConfig train;
};

// Default rotated-Gaussians benchmark: K=8, d_in=16, rotation 0.5 rad, noise 0.8,
// target translated by 0.8 along every axis.
ShiftConfig rotated_gaussians_benchmark(std::uint64_t seed);

/// JSON document {"benchmark": "gaussian"|"moons", "shift": {...}, "train": {...}}
/// whose keys mirror the ShiftConfig / TrainConfig field names. Missing keys keep
/// their defaults; unknown keys are a ConfigError naming the key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string dump_run_config(const RunConfig& cfg);

/// Ablation document: the run-config keys plus
///   "seeds": [1, 2, ...]                       (required)
///   "ladder": true                             (the five-step loss ladder), and/or
///   "variants": [{"name": "...", "toggles": {...}}, ...]
/// Variant toggles start from train.toggles.
std::vector<AblationSpec> parse_ablation_spec(const std::string& json_text);
std::vector<AblationSpec> load_ablation_spec(const std::string& path);

// Draws target and source domains for the configured benchmark.
std::pair<Dataset, Dataset> make_domains(const RunConfig& cfg);

// Parses a comma-separated list of numbers ("1,3,5").
std::vector<double> parse_number_list(const std::string& text);

}  // namespace cpga
