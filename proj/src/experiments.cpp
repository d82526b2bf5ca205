#include "cpga/experiments.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

namespace cpga {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Everything a seed needs before Stage 2.
struct PreparedSeed {
    Dataset source;
    Dataset target;
    SourceModel model;
    double source_only = 0.0;
    std::map<bool, Generator> generators;  // keyed by stage1_contrastive
};

std::string preparation_key(const ShiftConfig& shift, const TrainConfig& t) {
    std::ostringstream k;
    k << std::setprecision(17) << shift.num_classes << '|' << shift.input_dim << '|' << shift.samples_per_class << '|'
      << shift.rotation_angle << '|' << shift.scale << '|' << shift.noise_std << '|' << shift.seed << '|';
    for (double v : shift.translation) k << v << ',';
    k << '|' << t.seed << '|' << t.pretrain_epochs << '|' << t.pretrain_learning_rate << '|' << t.label_smoothing << '|'
      << t.stage1_epochs << '|' << t.stage1_batches_per_epoch << '|' << t.stage1_prototypes_per_class << '|'
      << t.stage1_learning_rate << '|' << t.momentum << '|' << t.weight_decay << '|' << t.batch_size << '|'
      << t.feature_dim << '|' << t.noise_dim << '|' << t.generator_hidden << '|' << t.tau << '|';
    for (int w : t.extractor_hidden) k << w << ',';
    return k.str();
}

class SeedCache {
public:
    PreparedSeed& get(const ShiftConfig& shift, const TrainConfig& train, std::ostream* progress) {
        const std::string key = preparation_key(shift, train);
        auto it = cache_.find(key);
        if (it == cache_.end()) {
            auto [source, target] = make_gaussian_domains(shift);
            SourceModel model = pretrain_source(source, train);
            const double source_only =
                accuracy(infer(model.extractor, model.classifier, target.features()), target.eval_labels());
            if (progress) {
                *progress << "seed " << shift.seed << ": source accuracy " << model.train_accuracy
                          << ", source-only target accuracy " << source_only << '\n';
            }
            auto prepared = std::make_unique<PreparedSeed>(
                PreparedSeed{std::move(source), std::move(target), std::move(model), source_only, {}});
            it = cache_.emplace(key, std::move(prepared)).first;
        }
        return *it->second;
    }

    const Generator& generator(PreparedSeed& prepared, const TrainConfig& train) {
        const bool contrastive = train.toggles.stage1_contrastive;
        auto it = prepared.generators.find(contrastive);
        if (it == prepared.generators.end()) {
            it = prepared.generators.emplace(contrastive, train_stage1(prepared.model.classifier, train)).first;
        }
        return it->second;
    }

private:
    std::map<std::string, std::unique_ptr<PreparedSeed>> cache_;
};

struct RunOutcome {
    double accuracy = kNaN;
    double source_only = kNaN;
    PrototypeGeometry geometry{kNaN, kNaN};
    bool failed = false;
};

RunOutcome run_seed(SeedCache& cache, ShiftConfig shift, TrainConfig train, std::uint64_t seed,
                    std::ostream* progress) {
    shift.seed = seed;
    train.seed = seed;
    RunOutcome out;
    try {
        PreparedSeed& prepared = cache.get(shift, train, progress);
        out.source_only = prepared.source_only;
        const Generator& generator = cache.generator(prepared, train);
        std::mt19937_64 rng(seed);
        Labels labels;
        const Mat protos = draw_prototypes(generator, 2, rng, &labels);
        out.geometry = prototype_geometry(protos, labels);
        if (!train.toggles.any_adaptation()) {
            out.accuracy = prepared.source_only;
        } else {
            const Stage2Result adapted =
                train_stage2(prepared.model.extractor, generator, prepared.model.classifier, prepared.target, train);
            out.accuracy = accuracy(infer(adapted.extractor, prepared.model.classifier, prepared.target.features()),
                                    prepared.target.eval_labels());
        }
    } catch (const DivergenceError& e) {
        out.failed = true;
        out.accuracy = kNaN;
        if (progress) *progress << "seed " << seed << ": run failed: " << e.what() << '\n';
    }
    return out;
}

struct MeanStd {
    double mean = kNaN;
    double std = kNaN;
};

MeanStd mean_std(std::span<const double> values) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : values) {
        if (std::isnan(v)) continue;
        sum += v;
        ++n;
    }
    if (n == 0) return {};
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (double v : values) {
        if (!std::isnan(v)) sq += (v - mean) * (v - mean);
    }
    return {mean, std::sqrt(sq / static_cast<double>(n))};
}

void csv_value(std::ostream& out, double v) {
    if (!std::isnan(v)) out << v;
}

}  // namespace

void AblationSpec::validate() const {
    if (seeds.empty()) throw ConfigError("seeds: ablation spec '" + name + "' needs at least one seed");
    if (toggles.use_elr && !toggles.use_contrastive) {
        throw ConfigError("toggles.use_elr: requires contrastive alignment in spec '" + name + "'");
    }
    benchmark.validate();
    TrainConfig t = train;
    t.toggles = toggles;
    t.validate();
}

std::vector<AblationResult> run_ablation(std::span<const AblationSpec> specs, std::ostream* progress) {
    for (const auto& spec : specs) spec.validate();
    SeedCache cache;
    std::vector<AblationResult> results;
    for (const auto& spec : specs) {
        AblationResult r;
        r.name = spec.name;
        r.seeds = spec.seeds;
        std::vector<double> source_only;
        std::vector<double> inter;
        std::vector<double> intra;
        TrainConfig train = spec.train;
        train.toggles = spec.toggles;
        for (std::uint64_t seed : spec.seeds) {
            const RunOutcome o = run_seed(cache, spec.benchmark, train, seed, progress);
            r.accuracies.push_back(o.accuracy);
            r.failed.push_back(o.failed);
            source_only.push_back(o.source_only);
            inter.push_back(o.geometry.inter);
            intra.push_back(o.geometry.intra);
            if (progress) *progress << spec.name << " seed " << seed << ": accuracy " << o.accuracy << '\n';
        }
        const MeanStd acc = mean_std(r.accuracies);
        r.mean = acc.mean;
        r.std = acc.std;
        r.source_only_mean = mean_std(source_only).mean;
        r.inter_distance = mean_std(inter).mean;
        r.intra_distance = mean_std(intra).mean;
        results.push_back(std::move(r));
    }
    return results;
}

std::vector<AblationSpec> loss_ladder(std::span<const std::uint64_t> seeds, const ShiftConfig& benchmark,
                                      const TrainConfig& train) {
    const std::vector<std::uint64_t> s(seeds.begin(), seeds.end());
    auto spec = [&](std::string name, bool contrastive, bool weights, bool elr, bool nc) {
        LossToggles t;
        t.use_contrastive = contrastive;
        t.use_weights = weights;
        t.use_elr = elr;
        t.use_nc = nc;
        t.stage1_contrastive = true;
        return AblationSpec{std::move(name), t, s, benchmark, train};
    };
    return {spec("source_only", false, false, false, false), spec("contrastive", true, false, false, false),
            spec("weighted", true, true, false, false), spec("weighted_elr", true, true, true, false),
            spec("full", true, true, true, true)};
}

void write_ablation_csv(std::ostream& out, std::span<const AblationResult> results) {
    out << "name,seed,accuracy,failed\n" << std::setprecision(10);
    for (const auto& r : results) {
        for (std::size_t i = 0; i < r.accuracies.size(); ++i) {
            out << r.name << ',' << r.seeds[i] << ',';
            csv_value(out, r.accuracies[i]);
            out << ',' << (r.failed[i] ? 1 : 0) << '\n';
        }
    }
    out << "\nname,mean,std,source_only_mean,inter_distance,intra_distance\n";
    for (const auto& r : results) {
        out << r.name << ',';
        csv_value(out, r.mean);
        out << ',';
        csv_value(out, r.std);
        out << ',';
        csv_value(out, r.source_only_mean);
        out << ',';
        csv_value(out, r.inter_distance);
        out << ',';
        csv_value(out, r.intra_distance);
        out << '\n';
    }
}

void SensitivityTable::write_csv(std::ostream& out) const {
    out << "lambda\\eta" << std::setprecision(10);
    for (double e : etas) out << ',' << e;
    out << '\n';
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        out << lambdas[i];
        for (std::size_t j = 0; j < etas.size(); ++j) {
            out << ',';
            csv_value(out, accuracy(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
        out << '\n';
    }
}

SensitivityTable run_sensitivity(std::span<const double> lambdas, std::span<const double> etas,
                                 const ShiftConfig& benchmark, const TrainConfig& train,
                                 std::span<const std::uint64_t> seeds, std::ostream* progress) {
    if (lambdas.empty() || etas.empty()) throw ConfigError("sweep: lambda and eta grids must be non-empty");
    if (seeds.empty()) throw ConfigError("seeds: sweep needs at least one seed");
    SeedCache cache;
    SensitivityTable table{{lambdas.begin(), lambdas.end()}, {etas.begin(), etas.end()},
                           Mat(static_cast<Eigen::Index>(lambdas.size()), static_cast<Eigen::Index>(etas.size()))};
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        for (std::size_t j = 0; j < etas.size(); ++j) {
            TrainConfig t = train;
            t.lambda = lambdas[i];
            t.eta = etas[j];
            t.validate();
            std::vector<double> acc;
            for (std::uint64_t seed : seeds) acc.push_back(run_seed(cache, benchmark, t, seed, progress).accuracy);
            table.accuracy(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = mean_std(acc).mean;
            if (progress) {
                *progress << "lambda " << lambdas[i] << " eta " << etas[j] << ": accuracy " << mean_std(acc).mean
                          << '\n';
            }
        }
    }
    return table;
}

std::vector<NoisePoint> run_noise_robustness(std::span<const double> rates, const ShiftConfig& benchmark,
                                             const TrainConfig& train, std::span<const std::uint64_t> seeds,
                                             std::ostream* progress) {
    if (seeds.empty()) throw ConfigError("seeds: noise study needs at least one seed");
    for (double r : rates) {
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("rates: noise rates must be in [0, 1]");
    }
    SeedCache cache;
    std::vector<NoisePoint> points;
    for (double rate : rates) {
        NoisePoint p{rate, 0.0, 0.0};
        for (bool weighted : {true, false}) {
            TrainConfig t = train;
            t.pseudo_label_noise = rate;
            t.toggles.use_contrastive = true;
            t.toggles.use_weights = weighted;
            t.toggles.use_elr = false;
            t.toggles.use_nc = false;
            std::vector<double> acc;
            for (std::uint64_t seed : seeds) acc.push_back(run_seed(cache, benchmark, t, seed, progress).accuracy);
            (weighted ? p.weighted : p.unweighted) = mean_std(acc).mean;
        }
        if (progress) {
            *progress << "noise " << rate << ": weighted " << p.weighted << " unweighted " << p.unweighted << '\n';
        }
        points.push_back(p);
    }
    return points;
}

void write_noise_csv(std::ostream& out, std::span<const NoisePoint> points) {
    out << "rate,weighted,unweighted\n" << std::setprecision(10);
    for (const auto& p : points) {
        out << p.rate << ',';
        csv_value(out, p.weighted);
        out << ',';
        csv_value(out, p.unweighted);
        out << '\n';
    }
}

// ------------------------------------------------------------------- plots

namespace {

struct Series {
    std::string name;
    std::string colour;
    std::vector<double> x;
    std::vector<double> y;
};

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

/// Minimal SVG chart: axes with min/max labels, polylines (or dots) and a legend.
std::string svg_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Series>& series, bool scatter) {
    constexpr double w = 640, h = 420, left = 70, right = 160, top = 40, bottom = 50;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax - xmin < 1e-12) xmin -= 0.5, xmax += 0.5;
    if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (w - left - right); };
    auto py = [&](double y) { return h - bottom - (y - ymin) / (ymax - ymin) * (h - top - bottom); };

    std::ostringstream svg;
    svg << std::setprecision(6);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << left << "\" y=\"" << h - bottom + 16 << "\" font-size=\"11\">" << xmin << "</text>\n";
    svg << "<text x=\"" << w - right << "\" y=\"" << h - bottom + 16 << "\" font-size=\"11\" text-anchor=\"end\">"
        << xmax << "</text>\n";
    svg << "<text x=\"" << left - 4 << "\" y=\"" << h - bottom << "\" font-size=\"11\" text-anchor=\"end\">" << ymin
        << "</text>\n";
    svg << "<text x=\"" << left - 4 << "\" y=\"" << top + 10 << "\" font-size=\"11\" text-anchor=\"end\">" << ymax
        << "</text>\n";
    svg << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
        << xlabel << "</text>\n";
    svg << "<text x=\"16\" y=\"" << (top + h - bottom) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 "
        << (top + h - bottom) / 2 << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts.emplace_back(px(s.x[i]), py(s.y[i]));
        }
        if (scatter || pts.size() == 1) {
            for (const auto& [x, y] : pts) {
                svg << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3\" fill=\"" << s.colour << "\"/>\n";
            }
        } else if (!pts.empty()) {
            svg << "<polyline fill=\"none\" stroke=\"" << s.colour << "\" stroke-width=\"1.5\" points=\"";
            for (const auto& [x, y] : pts) svg << x << ',' << y << ' ';
            svg << "\"/>\n";
        }
        const double ly = top + 16.0 * static_cast<double>(si);
        svg << "<rect x=\"" << w - right + 10 << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\"" << s.colour
            << "\"/>\n";
        svg << "<text x=\"" << w - right + 26 << "\" y=\"" << ly + 9 << "\" font-size=\"11\">" << s.name << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ConfigError("plot: cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw ConfigError("plot: failed writing '" + path.string() + "'");
}

}  // namespace

std::vector<std::string> emit_plots(const MetricsLog& log, const std::string& dir, const Mat* prototypes,
                                    const Labels* labels) {
    if (log.empty()) throw ContractError("plot: metrics log is empty");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir)) throw ConfigError("plot: cannot create output directory '" + dir + "'");

    auto column = [&](double EpochRecord::*field, const char* stage) {
        Series s;
        for (const auto& r : log.records()) {
            if (r.stage != stage) continue;
            s.x.push_back(r.epoch);
            s.y.push_back(r.*field);
        }
        return s;
    };

    std::vector<Series> loss;
    for (const char* stage : {"stage1", "stage2"}) {
        Series s = column(&EpochRecord::loss_total, stage);
        if (s.x.empty()) continue;
        s.name = std::string(stage) + " total";
        s.colour = kPalette[loss.size()];
        loss.push_back(std::move(s));
    }

    std::vector<Series> acc;
    for (auto [field, name] : {std::pair{&EpochRecord::target_accuracy, "target accuracy"},
                               std::pair{&EpochRecord::pseudo_accuracy, "pseudo-label accuracy"},
                               std::pair{&EpochRecord::mean_weight, "mean weight"}}) {
        Series s = column(field, "stage2");
        if (s.x.empty()) continue;
        s.name = name;
        s.colour = kPalette[acc.size()];
        acc.push_back(std::move(s));
    }

    std::vector<Series> geo;
    std::string geo_title = "Prototype geometry";
    std::string geo_x = "inter-class cosine distance";
    std::string geo_y = "intra-class cosine distance";
    if (prototypes && labels && prototypes->rows() > 0) {
        if (static_cast<std::size_t>(prototypes->rows()) != labels->size()) throw ShapeError("plot: label count");
        // Fixed seeded Gaussian projection to two dimensions.
        std::mt19937_64 rng(20211);
        std::normal_distribution<double> n01(0.0, 1.0);
        Mat proj(prototypes->cols(), 2);
        for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = n01(rng);
        const Mat xy = normalize_rows(*prototypes).unit * proj;
        int k = 0;
        for (int y : *labels) k = std::max(k, y + 1);
        for (int c = 0; c < k; ++c) {
            Series s{"class " + std::to_string(c), kPalette[c % 10], {}, {}};
            for (std::size_t i = 0; i < labels->size(); ++i) {
                if ((*labels)[i] != c) continue;
                s.x.push_back(xy(static_cast<Eigen::Index>(i), 0));
                s.y.push_back(xy(static_cast<Eigen::Index>(i), 1));
            }
            geo.push_back(std::move(s));
        }
        geo_title = "Generated prototypes (random 2-D projection)";
        geo_x = "projection 1";
        geo_y = "projection 2";
    } else {
        for (const char* stage : {"stage1", "stage2"}) {
            Series s{stage, kPalette[geo.size()], {}, {}};
            for (const auto& r : log.records()) {
                if (r.stage != stage) continue;
                s.x.push_back(r.inter_distance);
                s.y.push_back(r.intra_distance);
            }
            if (!s.x.empty()) geo.push_back(std::move(s));
        }
    }

    const fs::path base(dir);
    const std::vector<std::pair<std::string, std::string>> files{
        {"loss.svg", svg_chart("Training loss", "epoch", "loss", loss, false)},
        {"accuracy.svg", svg_chart("Accuracy", "epoch", "fraction", acc, false)},
        {"prototypes.svg", svg_chart(geo_title, geo_x, geo_y, geo, true)}};
    std::vector<std::string> written;
    for (const auto& [name, text] : files) {
        write_file(base / name, text);
        written.push_back((base / name).string());
    }
    return written;
}

}  // namespace cpga
