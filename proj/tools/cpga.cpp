// cpga: command-line driver for runs, ablations, sweeps, noise studies and plots.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "cpga/experiments.hpp"
#include "cpga/io.hpp"

namespace fs = std::filesystem;
using namespace cpga;

namespace {

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    return out;
}

RunConfig config_or_default(const std::string& path) {
    if (!path.empty()) return load_run_config(path);
    RunConfig cfg;
    cfg.shift = rotated_gaussians_benchmark(0);
    return cfg;
}

std::vector<std::uint64_t> seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    for (double v : parse_number_list(text)) {
        if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
            throw ConfigError("seeds: expected non-negative integers");
        }
        seeds.push_back(static_cast<std::uint64_t>(v));
    }
    return seeds;
}

void write_prototypes(const fs::path& path, const Mat& prototypes, const Labels& labels) {
    auto out = open_out(path);
    out << "label";
    for (Eigen::Index j = 0; j < prototypes.cols(); ++j) out << ",p" << j + 1;
    out << '\n' << std::setprecision(17);
    for (Eigen::Index i = 0; i < prototypes.rows(); ++i) {
        out << labels[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < prototypes.cols(); ++j) out << ',' << prototypes(i, j);
        out << '\n';
    }
}

// Inverse of write_prototypes.
std::pair<Mat, Labels> read_prototypes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("prototypes: cannot open '" + path + "'");
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> rows;
    Labels labels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream cells(line);
        std::string cell;
        std::getline(cells, cell, ',');
        labels.push_back(std::stoi(cell));
        rows.emplace_back();
        while (std::getline(cells, cell, ',')) rows.back().push_back(std::stod(cell));
        if (rows.back().size() != rows.front().size()) throw ShapeError("prototypes: ragged rows");
    }
    if (rows.empty()) throw ShapeError("prototypes: no rows");
    Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return {m, labels};
}

int cmd_run(const std::string& config_path, const fs::path& out_dir, bool dump_pseudo) {
    const RunConfig cfg = load_run_config(config_path);
    fs::create_directories(out_dir);
    auto [source, target] = make_domains(cfg);
    save_dataset((out_dir / "source.txt").string(), source);
    save_dataset((out_dir / "target.txt").string(), target);

    const PipelineResult r = run_pipeline(source, target, cfg.train, &std::cout);

    auto metrics = open_out(out_dir / "metrics.csv");
    r.log.write_csv(metrics);
    fs::create_directories(out_dir / "checkpoints");
    save_checkpoint((out_dir / "checkpoints" / "extractor.ckpt").string(), r.adapted.extractor.params);
    save_checkpoint((out_dir / "checkpoints" / "classifier.ckpt").string(), r.source.classifier.params);
    save_checkpoint((out_dir / "checkpoints" / "generator.ckpt").string(), r.generator.params);
    save_checkpoint((out_dir / "checkpoints" / "projector.ckpt").string(), r.adapted.projector.params);
    save_checkpoint((out_dir / "checkpoints" / "prediction_bank.ckpt").string(), to_params(r.adapted.predictions));
    save_checkpoint((out_dir / "checkpoints" / "feature_bank.ckpt").string(), to_params(r.adapted.features));

    std::mt19937_64 rng(cfg.train.seed);
    Labels labels;
    const Mat prototypes = draw_prototypes(r.generator, 20, rng, &labels);
    write_prototypes(out_dir / "prototypes.csv", prototypes, labels);
    if (dump_pseudo) {
        auto out = open_out(out_dir / "pseudo_labels.csv");
        write_pseudo_labels(out, r.adapted.pseudo);
    }
    {
        auto out = open_out(out_dir / "config.json");
        out << dump_run_config(cfg) << '\n';
    }
    auto summary = open_out(out_dir / "summary.csv");
    summary << "source_accuracy,source_only_target_accuracy,adapted_target_accuracy,inter_distance,intra_distance\n"
            << std::setprecision(10) << r.source_accuracy << ',' << r.source_only_accuracy << ','
            << r.adapted_accuracy << ',' << r.geometry.inter << ',' << r.geometry.intra << '\n';
    std::cout << "source-only target accuracy " << r.source_only_accuracy << ", adapted " << r.adapted_accuracy
              << "; outputs in " << out_dir.string() << '\n';
    return 0;
}

int cmd_ablate(const std::string& spec_path, const std::string& out_path) {
    const auto specs = load_ablation_spec(spec_path);
    const auto results = run_ablation(specs, &std::cout);
    auto out = open_out(out_path);
    write_ablation_csv(out, results);
    for (const auto& r : results) {
        std::cout << std::left << std::setw(16) << r.name << " mean " << r.mean << " std " << r.std << '\n';
    }
    return 0;
}

int cmd_sweep(const std::string& lambdas, const std::string& etas, const std::string& config_path,
              const std::string& seeds, const std::string& out_path) {
    const RunConfig cfg = config_or_default(config_path);
    const auto table = run_sensitivity(parse_number_list(lambdas), parse_number_list(etas), cfg.shift, cfg.train,
                                       seed_list(seeds), &std::cout);
    auto out = open_out(out_path);
    table.write_csv(out);
    return 0;
}

int cmd_noise(const std::string& rates, const std::string& config_path, const std::string& seeds,
              const std::string& out_path) {
    const RunConfig cfg = config_or_default(config_path);
    const auto points = run_noise_robustness(parse_number_list(rates), cfg.shift, cfg.train, seed_list(seeds),
                                             &std::cout);
    auto out = open_out(out_path);
    write_noise_csv(out, points);
    return 0;
}

int cmd_plot(const std::string& log_path, const std::string& out_dir, const std::string& prototypes_path) {
    std::ifstream in(log_path);
    if (!in) throw ConfigError("log: cannot open '" + log_path + "'");
    const MetricsLog log = MetricsLog::read_csv(in);
    std::vector<std::string> files;
    if (prototypes_path.empty()) {
        files = emit_plots(log, out_dir);
    } else {
        const auto [protos, labels] = read_prototypes(prototypes_path);
        files = emit_plots(log, out_dir, &protos, &labels);
    }
    for (const auto& f : files) std::cout << f << '\n';
    return 0;
}

int cmd_data(const std::string& config_path, const fs::path& out_dir) {
    const RunConfig cfg = config_or_default(config_path);
    fs::create_directories(out_dir);
    auto [source, target] = make_domains(cfg);
    save_dataset((out_dir / "source.txt").string(), source);
    save_dataset((out_dir / "target.txt").string(), target);
    std::cout << (out_dir / "source.txt").string() << '\n' << (out_dir / "target.txt").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive prototype generation and adaptation on synthetic domain shift"};
    app.require_subcommand(1);

    std::string config, spec, out, lambdas, etas, rates, seeds = "1,2,3,4,5", log, prototypes;
    bool dump_pseudo = false;

    auto* run = app.add_subcommand("run", "Pretrain, generate prototypes and adapt; writes logs and checkpoints");
    run->add_option("--config", config, "JSON run config")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "Output directory")->default_val("cpga_run");
    run->add_flag("--pseudo-labels", dump_pseudo, "Also write the final pseudo labels and weights");

    auto* ablate = app.add_subcommand("ablate", "Run an ablation document and write per-seed accuracies");
    ablate->add_option("--spec", spec, "JSON ablation spec")->required()->check(CLI::ExistingFile);
    ablate->add_option("--out", out, "CSV output")->default_val("ablation.csv");

    auto* sweep = app.add_subcommand("sweep", "Grid over lambda and eta");
    sweep->add_option("--lambda", lambdas, "Comma-separated lambda values")->required();
    sweep->add_option("--eta", etas, "Comma-separated eta values")->required();
    sweep->add_option("--config", config, "JSON run config (defaults to the rotated-Gaussians benchmark)");
    sweep->add_option("--seeds", seeds, "Comma-separated seeds")->capture_default_str();
    sweep->add_option("--out", out, "CSV output")->default_val("sensitivity.csv");

    auto* noise = app.add_subcommand("noise", "Weighted vs unweighted alignment under pseudo-label noise");
    noise->add_option("--rates", rates, "Comma-separated noise rates in [0, 1]")->required();
    noise->add_option("--config", config, "JSON run config (defaults to the rotated-Gaussians benchmark)");
    noise->add_option("--seeds", seeds, "Comma-separated seeds")->capture_default_str();
    noise->add_option("--out", out, "CSV output")->default_val("noise.csv");

    auto* plot = app.add_subcommand("plot", "Render loss, accuracy and prototype plots from a metrics CSV");
    plot->add_option("--log", log, "metrics.csv written by 'run'")->required()->check(CLI::ExistingFile);
    plot->add_option("--out", out, "Output directory")->required();
    plot->add_option("--prototypes", prototypes, "prototypes.csv written by 'run'")->check(CLI::ExistingFile);

    auto* data = app.add_subcommand("data", "Write the source and target datasets of a config");
    data->add_option("--config", config, "JSON run config (defaults to the rotated-Gaussians benchmark)");
    data->add_option("--out", out, "Output directory")->default_val("cpga_data");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(config, out, dump_pseudo);
        if (*ablate) return cmd_ablate(spec, out);
        if (*sweep) return cmd_sweep(lambdas, etas, config, seeds, out);
        if (*noise) return cmd_noise(rates, config, seeds, out);
        if (*plot) return cmd_plot(log, out, prototypes);
        if (*data) return cmd_data(config, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
