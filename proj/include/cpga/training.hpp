#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cpga/datasets.hpp"
#include "cpga/labeling.hpp"
#include "cpga/losses.hpp"
#include "cpga/memory.hpp"
#include "cpga/models.hpp"

namespace cpga {

struct LossToggles {
    bool use_contrastive = true;
    bool use_weights = true;
    bool use_elr = true;
    bool use_nc = true;
    bool stage1_contrastive = true;

    bool any_adaptation() const { return use_contrastive || use_elr || use_nc; }
};

struct TrainConfig {
    // Source pretraining.
    int pretrain_epochs = 60;
    double pretrain_learning_rate = 0.01;
    double label_smoothing = 0.1;

    // Stage 1: generator. One epoch is `stage1_batches_per_epoch` generated batches.
    int stage1_epochs = 200;
    int stage1_batches_per_epoch = 5;
    int stage1_prototypes_per_class = 2;
    double stage1_learning_rate = 0.01;

    // Stage 2: adaptation.
    int stage2_epochs = 100;
    double learning_rate = 0.02;
    int batch_size = 64;
    double lambda = 5.0;
    double eta = 0.05;
    double beta = 0.9;
    double tau = 0.07;
    BankInit bank_init = BankInit::Zero;
    double pseudo_label_noise = 0.0;

    double momentum = 0.9;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    // Architecture.
    int feature_dim = 64;
    int noise_dim = 100;
    std::vector<int> extractor_hidden{64, 64};
    int generator_hidden = 256;
    std::vector<int> projector_hidden{64, 32};
    int projection_dim = 16;

    // Reverse validation: epochs for the reverse classifier and prototypes scored per class.
    int reverse_epochs = 30;
    int reverse_prototypes_per_class = 50;

    LossToggles toggles;

    void validate() const;
    losses::Stage2Weights stage2_weights() const;
};

struct EpochRecord {
    int epoch = 0;
    std::string stage;
    // NaN marks a field that does not apply to the stage.
    double loss_total = 0.0;
    double loss_ce = 0.0;
    double loss_conp = 0.0;
    double loss_conw = 0.0;
    double loss_elr = 0.0;
    double loss_nc = 0.0;
    double target_accuracy = 0.0;
    double pseudo_accuracy = 0.0;
    double mean_weight = 0.0;
    double inter_distance = 0.0;
    double intra_distance = 0.0;
};

/// Append-only per-epoch log with strictly increasing epoch numbers.
class MetricsLog {
public:
    static const char* csv_header();

    void append(EpochRecord record);
    void extend(const MetricsLog& other);
    const std::vector<EpochRecord>& records() const { return records_; }
    bool empty() const { return records_.empty(); }
    int last_epoch() const { return records_.empty() ? 0 : records_.back().epoch; }

    void write_csv(std::ostream& out) const;
    std::string to_csv() const;
    static MetricsLog read_csv(std::istream& in);

private:
    std::vector<EpochRecord> records_;
};

struct PrototypeGeometry {
    double inter = 0.0;  // mean cosine distance between different-class prototypes
    double intra = 0.0;  // mean cosine distance between same-class prototypes
};

PrototypeGeometry prototype_geometry(const Mat& prototypes, std::span<const int> labels);

// `per_class` prototypes per class in class-major order; labels written to `labels`.
Mat draw_prototypes(const Generator& generator, int per_class, std::mt19937_64& rng, Labels* labels);

struct SourceModel {
    Extractor extractor;
    Classifier classifier;  // frozen on return
    double train_accuracy = 0.0;
};

// Untrained components exactly as the training entry points initialize them.
SourceModel initial_source_model(int input_dim, int num_classes, const TrainConfig& cfg);
Generator initial_generator(int num_classes, int feature_dim, const TrainConfig& cfg);
Projector initial_projector(int feature_dim, const TrainConfig& cfg);

/// Label-smoothed cross entropy with SGD over extractor and classifier.
SourceModel pretrain_source(const Dataset& source, const TrainConfig& cfg);

/// Trains a generator against the frozen classifier on L_ce + L_con^p
/// (L_ce alone when `stage1_contrastive` is off). The result is frozen.
Generator train_stage1(const Classifier& classifier, const TrainConfig& cfg, MetricsLog* log = nullptr,
                       std::ostream* progress = nullptr);

struct Stage2Result {
    Extractor extractor;
    Projector projector;
    MetricsLog log;
    PredictionBank predictions;
    FeatureBank features;
    PseudoLabels pseudo;
};

/// Prototype adaptation. Per epoch: one prototype per class from the fixed
/// generator, refresh centroids and pseudo labels over the full target set,
/// then batched steps on L_con^w + lambda L_elr + eta L_nc with bank updates.
Stage2Result train_stage2(const Extractor& extractor, const Generator& generator, const Classifier& classifier,
                          const Dataset& target, const TrainConfig& cfg, int first_epoch = 1,
                          std::ostream* progress = nullptr);

// argmax of classify(extract(x)).
Labels infer(const Extractor& extractor, const Classifier& classifier, const Mat& inputs);

struct ReverseValidation {
    std::size_t best = 0;
    std::vector<double> scores;  // prototype accuracy of each reverse classifier
    std::vector<Labels> predictions;  // target predictions of each adapted candidate
};

/// Adapts once per candidate, trains a fresh classifier on the adapted target
/// features with the candidate's predicted labels, and scores it on freshly
/// generated source prototypes. The highest score wins; ties go to the first.
ReverseValidation reverse_validate(std::span<const TrainConfig> candidates, const SourceModel& source,
                                   const Generator& generator, const Dataset& target);

struct PipelineResult {
    SourceModel source;
    Generator generator;
    Stage2Result adapted;
    MetricsLog log;
    PrototypeGeometry geometry;
    double source_accuracy = 0.0;
    double source_only_accuracy = 0.0;
    double adapted_accuracy = 0.0;
};

PipelineResult run_pipeline(const Dataset& source, const Dataset& target, const TrainConfig& cfg,
                            std::ostream* progress = nullptr);

}  // namespace cpga
