#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpga/tensor.hpp"

namespace cpga {

enum class Activation { Identity, Tanh, Relu };

// A named, ordered collection of parameter tensors. The order is the
// declared order used by checkpoints, hashing and the optimizer.
struct ParamSet {
    std::string component;
    std::uint64_t seed = 0;
    std::vector<std::string> names;
    std::vector<Mat> values;
    bool frozen = false;

    std::size_t add(std::string name, Mat value);
    std::size_t index_of(std::string_view name) const;
    const Mat& at(std::string_view name) const { return values[index_of(name)]; }
    Mat& at(std::string_view name) { return values[index_of(name)]; }
    std::size_t scalar_count() const;

    // Hash over names, shapes and raw values.
    std::uint64_t hash() const;
};

using Grads = std::vector<Mat>;

Grads zero_grads(const ParamSet& params);

// Copies every scalar into one vector in declared order, and back.
Vec flatten(const ParamSet& params);
Vec flatten(const Grads& grads);
void unflatten(const Vec& flat, ParamSet& params);

// Dense layers stored as ("<prefix>.<l>.weight" out x in, "<prefix>.<l>.bias" 1 x out).
// `widths` includes the input width.
void append_mlp(ParamSet& params, const std::string& prefix, std::span<const int> widths, std::mt19937_64& rng);

struct MlpCache {
    std::vector<Mat> inputs;
    std::vector<Mat> pre;
};

Mat mlp_forward(const ParamSet& params, std::size_t offset, std::span<const Activation> acts, const Mat& x,
                MlpCache* cache);

// Accumulates parameter gradients into `grads` (if non-null) and returns dL/dx.
Mat mlp_backward(const ParamSet& params, std::size_t offset, std::span<const Activation> acts, const MlpCache& cache,
                 const Mat& grad_out, Grads* grads);

// Infers hidden/output widths of an MLP stored at `offset` with `layers` layers.
std::vector<int> mlp_widths(const ParamSet& params, std::size_t offset, std::size_t layers);

/// SGD with classical momentum (v <- mu v + g; p <- p - lr v) and optional
/// L2 weight decay. Refuses to touch a frozen parameter set.
class Sgd {
public:
    Sgd(double learning_rate, double momentum, double weight_decay = 0.0);
    void step(ParamSet& params, const Grads& grads);

private:
    double lr_;
    double momentum_;
    double weight_decay_;
    std::vector<Mat> velocity_;
};

}  // namespace cpga
