#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "cpga/nn.hpp"
#include "cpga/tensor.hpp"

namespace cpga {

// Feature extractor: tanh MLP d_in -> hidden... -> d with a linear output layer.
struct Extractor {
    ParamSet params;

    static Extractor create(int input_dim, int feature_dim, std::span<const int> hidden, std::uint64_t seed);
    static Extractor from_params(ParamSet params);

    int input_dim() const { return static_cast<int>(params.values.front().cols()); }
    int feature_dim() const { return static_cast<int>(params.values[params.values.size() - 2].rows()); }
    std::size_t layers() const { return params.values.size() / 2; }
    std::vector<Activation> activations() const;

    Mat forward(const Mat& x, MlpCache* cache = nullptr) const;
    void backward(const MlpCache& cache, const Mat& grad_features, Grads& grads) const;
};

struct ClassifierCache {
    Mat features;
    NormalizedRows directions;
    Mat cosines;  // features * unit directions^T
};

/// Weight-normalized linear classifier without bias: logit_k = g_k * <q, v_k / |v_k|>.
/// Parameters: "direction" (K x d) and "gain" (1 x K).
struct Classifier {
    ParamSet params;

    static Classifier create(int num_classes, int feature_dim, std::uint64_t seed);
    static Classifier from_params(ParamSet params);

    int num_classes() const { return static_cast<int>(params.values[0].rows()); }
    int feature_dim() const { return static_cast<int>(params.values[0].cols()); }

    // Effective unit weight directions, one row per class.
    Mat unit_directions() const;

    Mat logits(const Mat& features, ClassifierCache* cache = nullptr) const;
    Mat probabilities(const Mat& features) const { return softmax_rows(logits(features)); }

    /// Returns dL/dfeatures. Parameter gradients are accumulated only if
    /// `grads` is non-null, which is a contract error once frozen.
    Mat backward(const ClassifierCache& cache, const Mat& grad_logits, Grads* grads) const;
};

struct GeneratorCache {
    Labels labels;
    Mat noise;
    MlpCache mlp;
};

/// Conditional prototype generator: embedding(y) (element-wise *) z -> ReLU MLP -> d.
/// Parameters: "embedding" (K x d_z) followed by the MLP layers.
struct Generator {
    ParamSet params;

    static Generator create(int num_classes, int noise_dim, int hidden, int feature_dim, std::uint64_t seed);
    static Generator from_params(ParamSet params);

    int num_classes() const { return static_cast<int>(params.values[0].rows()); }
    int noise_dim() const { return static_cast<int>(params.values[0].cols()); }
    int feature_dim() const { return static_cast<int>(params.values.back().cols()); }
    std::vector<Activation> activations() const;

    Mat forward(std::span<const int> labels, const Mat& noise, GeneratorCache* cache = nullptr) const;
    void backward(const GeneratorCache& cache, const Mat& grad_prototypes, Grads& grads) const;
};

// Noise rows drawn from U(0, 1).
Mat sample_noise(int rows, int noise_dim, std::mt19937_64& rng);

struct ProjectorCache {
    MlpCache mlp;
    NormalizedRows out;
};

// Three-layer projector with L2-normalized output rows.
struct Projector {
    ParamSet params;

    static Projector create(int feature_dim, std::span<const int> hidden, int output_dim, std::uint64_t seed);
    static Projector from_params(ParamSet params);

    int output_dim() const { return static_cast<int>(params.values[params.values.size() - 2].rows()); }
    std::size_t layers() const { return params.values.size() / 2; }
    std::vector<Activation> activations() const;

    Mat forward(const Mat& features, ProjectorCache* cache = nullptr) const;
    Mat backward(const ProjectorCache& cache, const Mat& grad_out, Grads* grads) const;
};

// Functional forms of the four forward operations.
Mat extract(const Extractor& extractor, const Mat& inputs);
Mat classify(const Classifier& classifier, const Mat& features);
Mat generate(const Generator& generator, std::span<const int> labels, const Mat& noise);
Mat project(const Projector& projector, const Mat& features);

}  // namespace cpga
