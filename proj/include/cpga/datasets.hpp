#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpga/tensor.hpp"

namespace cpga {

enum class Domain { Source, Target };

std::string to_string(Domain domain);
Domain parse_domain(const std::string& text);

/// Feature matrix plus class labels. For a target domain the labels exist
/// only for evaluation; adaptation code reads `features()` alone.
class Dataset {
public:
    Dataset(Mat features, Labels labels, Domain domain, int num_classes);

    const Mat& features() const { return features_; }
    int size() const { return static_cast<int>(features_.rows()); }
    int input_dim() const { return static_cast<int>(features_.cols()); }
    int num_classes() const { return num_classes_; }
    Domain domain() const { return domain_; }

    // Ground truth, for training a source model or scoring a target one.
    const Labels& eval_labels() const { return labels_; }

private:
    Mat features_;
    Labels labels_;
    Domain domain_;
    int num_classes_;
};

struct ShiftConfig {
    int num_classes = 8;
    int input_dim = 16;
    int samples_per_class = 150;
    double rotation_angle = 0.5;
    std::vector<double> translation;  // empty means zero
    double scale = 1.0;
    double noise_std = 1.0;
    std::uint64_t seed = 0;

    // Throws ConfigError naming the first invalid field.
    void validate() const;
};

/// Source: K Gaussian clusters around orthogonal class means (on a circle if
/// K > d_in). Target: the same clusters with means rotated, scaled and
/// translated, sampled with fresh noise. Deterministic in the config.
std::pair<Dataset, Dataset> make_gaussian_domains(const ShiftConfig& cfg);

// Two interleaved half circles (K must be 2); the target is rotated about the data centre.
std::pair<Dataset, Dataset> make_moons_domains(const ShiftConfig& cfg);

/// Replaces exactly floor(rate * n) labels, chosen uniformly without
/// replacement, by a uniformly drawn different class.
Labels inject_label_noise(std::span<const int> labels, int num_classes, double rate, std::uint64_t seed);

// Text format: "cpga-dataset v1 K=<int> d=<int> domain=<source|target>", then "label,f1,...,fd" rows.
void save_dataset(std::ostream& out, const Dataset& data);
Dataset load_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

}  // namespace cpga
