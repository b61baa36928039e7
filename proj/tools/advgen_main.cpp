#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "advgen/advgen.hpp"

namespace {

advgen::EpsilonInterval parse_epsilon_flag(const std::string& s) {
    const auto pos = s.find(':');
    try {
        std::size_t used = 0;
        if (pos == std::string::npos) {
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return advgen::EpsilonInterval::constant(v);
        }
        const std::string lo = s.substr(0, pos), hi = s.substr(pos + 1);
        const double lo_v = std::stod(lo, &used);
        if (used != lo.size()) throw std::invalid_argument(s);
        const double hi_v = std::stod(hi, &used);
        if (used != hi.size()) throw std::invalid_argument(s);
        return {lo_v, hi_v};
    } catch (const std::exception&) {
        throw advgen::ConfigError("--epsilon expects LO or LO:HI, got '" + s + "'");
    }
}

// Validates during flag parsing so a malformed value is a usage error.
const CLI::Validator kEpsilonFormat(
    [](std::string& s) -> std::string {
        try {
            parse_epsilon_flag(s);
            return {};
        } catch (const advgen::ConfigError& e) {
            return e.what();
        }
    },
    "LO[:HI]");

struct AttackFlags {
    std::string config_path;
    std::string out_dir;
    std::string epsilon;
    std::string truncation;
    std::string loss;
    std::string ref_image;
    std::vector<std::string> ref_embeddings;
    std::uint64_t seed = 0;
    int steps = 0;
    double cmin = 0.0, cmax = 0.0, delta = 0.0;
    std::size_t samples = 0;
};

void register_attack_flags(CLI::App* cmd, AttackFlags& f) {
    cmd->add_option("--config", f.config_path, "experiment config JSON")->required();
    cmd->add_option("--seed", f.seed, "base seed override");
    cmd->add_option("--steps", f.steps, "attack steps override");
    cmd->add_option("--epsilon", f.epsilon, "step size LO or interval LO:HI")
        ->check(kEpsilonFormat);
    cmd->add_option("--cmin", f.cmin, "noise truncation lower bound");
    cmd->add_option("--cmax", f.cmax, "noise truncation upper bound");
    cmd->add_option("--delta", f.delta, "init noise std");
    cmd->add_option("--truncation", f.truncation, "noise | sample")
        ->check(CLI::IsMember({"noise", "sample"}));
    cmd->add_option("--loss", f.loss, "l1 | var | directional")
        ->check(CLI::IsMember({"l1", "var", "directional"}));
    cmd->add_option("--ref-embedding", f.ref_embeddings,
                    "embedding file; pass twice (reference, then source)");
    cmd->add_option("--ref-image", f.ref_image, "reference image for directional loss");
    cmd->add_option("--out", f.out_dir, "output directory override");
    cmd->add_option("--samples", f.samples, "number of seeded jobs K");
}

advgen::ExperimentConfig apply_attack_flags(const CLI::App* cmd, const AttackFlags& f) {
    advgen::ExperimentConfig cfg = advgen::load_experiment_config(f.config_path);
    if (cmd->count("--seed")) cfg.attack.seed = f.seed;
    if (cmd->count("--steps")) cfg.attack.steps = f.steps;
    if (cmd->count("--epsilon")) cfg.attack.epsilon0 = parse_epsilon_flag(f.epsilon);
    if (cmd->count("--cmin")) cfg.attack.c_min = f.cmin;
    if (cmd->count("--cmax")) cfg.attack.c_max = f.cmax;
    if (cmd->count("--delta")) cfg.attack.init_noise_delta = f.delta;
    if (cmd->count("--truncation")) {
        cfg.attack.truncation = advgen::truncation_from_name(f.truncation);
    }
    if (cmd->count("--loss")) cfg.attack.loss.variant = advgen::loss_variant_from_name(f.loss);
    if (cmd->count("--ref-image")) cfg.references.image = f.ref_image;
    if (!f.ref_embeddings.empty()) {
        cfg.references.embedding_ref = f.ref_embeddings[0];
        if (f.ref_embeddings.size() > 1) cfg.references.embedding_src = f.ref_embeddings[1];
    }
    if (cmd->count("--out")) cfg.out_dir = f.out_dir;
    if (cmd->count("--samples")) cfg.samples = f.samples;
    return cfg;
}

int cmd_metrics(const std::vector<std::string>& paths, std::uint64_t embedder_seed,
                std::size_t dim, const std::string& out_file) {
    std::vector<advgen::Tensor> images;
    for (const std::string& p : paths) images.push_back(advgen::load_image(p));
    if (images.empty() || images[0].shape().size() != 2) {
        throw advgen::ConfigError("metrics expects at least two HxW grayscale images");
    }
    advgen::Embedder embedder(images[0].shape()[0], images[0].shape()[1], embedder_seed, dim);
    advgen::DiversityReport report = advgen::diversity_report(images, embedder);
    advgen::json j = advgen::diversity_report_to_json(report);
    std::cout << j.dump(2) << "\n";
    if (!out_file.empty()) advgen::write_json_file(j, out_file);
    return 0;
}

int cmd_gradcheck(int cases, std::uint64_t seed) {
    const advgen::GradcheckReport report = advgen::run_gradcheck(cases, seed);
    std::cout << "gradcheck: max relative error " << advgen::format_double(report.max_rel_error)
              << " over " << report.cases << " randomized graphs\n";
    return report.max_rel_error <= 1e-6 ? 0 : 1;
}

void print_divergence(const advgen::DivergenceReport& r, std::ostream& out) {
    out << r.method << ": trials " << r.trials << ", distances " << r.distances.size()
        << ", mean pairwise L1 " << advgen::format_double(r.mean_distance) << "\n";
    out << "  distances:";
    for (double d : r.distances) out << " " << advgen::format_double(d);
    out << "\n";
}

advgen::json divergence_to_json(const advgen::DivergenceReport& r) {
    advgen::json j;
    j["method"] = r.method;
    j["trials"] = r.trials;
    j["metric"] = r.metric == advgen::DivergenceMetric::kCrossRun ? "cross-run" : "consecutive-step";
    j["distances"] = r.distances;
    j["mean_distance"] = r.mean_distance;
    return j;
}

int cmd_divergence(const std::string& config_path, int trials, const std::string& loss,
                   std::uint64_t seed, bool seed_given, double delta, bool consecutive,
                   const std::string& out_file) {
    using namespace advgen;

    std::unique_ptr<Generator> model;
    ConditionSet conditions;
    AdamConfig cfg;
    if (config_path.empty()) {
        auto testbed = std::make_unique<InpaintingTestbed>(standard_inpainting_testbed());
        conditions = testbed->conditions;
        model = std::make_unique<DiffusionFillGenerator>(std::move(testbed->model));
        cfg = standard_divergence_config(seed);
    } else {
        ExperimentConfig file_cfg = load_experiment_config(config_path);
        MaterializedExperiment m = materialize_experiment(file_cfg);
        model = std::move(m.model);
        conditions = std::move(m.conditions);
        cfg = m.adam_config();
        if (seed_given) cfg.base.seed = seed;
    }
    cfg.base.loss =
        loss == "l1" ? LossSpec::untargeted_l1() : LossSpec::untargeted_var();
    const DivergenceMetric metric =
        consecutive ? DivergenceMetric::kConsecutiveStep : DivergenceMetric::kCrossRun;

    const DivergenceReport sign_report = path_divergence_experiment(
        *model, conditions, AttackMethod::kSign, trials, delta, cfg, {}, metric);
    const DivergenceReport adam_report = path_divergence_experiment(
        *model, conditions, AttackMethod::kAdam, trials, delta, cfg, {}, metric);

    print_divergence(sign_report, std::cout);
    print_divergence(adam_report, std::cout);
    const double ratio = adam_report.mean_distance > 0.0
                             ? sign_report.mean_distance / adam_report.mean_distance
                             : std::numeric_limits<double>::infinity();
    std::cout << "sign/adam divergence ratio: " << advgen::format_double(ratio) << "\n";

    if (!out_file.empty()) {
        json j;
        j["sign"] = divergence_to_json(sign_report);
        j["adam"] = divergence_to_json(adam_report);
        j["ratio"] = ratio;
        write_json_file(j, out_file);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"advgen: diverse generation from deterministic conditional models via "
                 "input-condition attacks"};
    app.require_subcommand(1);

    AttackFlags attack_flags;
    CLI::App* attack_cmd =
        app.add_subcommand("attack", "run K seeded attack jobs and write samples + reports");
    register_attack_flags(attack_cmd, attack_flags);

    AttackFlags compare_flags;
    CLI::App* compare_cmd = app.add_subcommand(
        "compare-optimizer", "sign vs adam on the same jobs: per-step loss and quality proxy");
    register_attack_flags(compare_cmd, compare_flags);

    std::vector<std::string> metric_paths;
    std::uint64_t metrics_seed = 7;
    std::size_t metrics_dim = 8;
    std::string metrics_out;
    CLI::App* metrics_cmd =
        app.add_subcommand("metrics", "diversity report over an existing image set");
    metrics_cmd->add_option("images", metric_paths, "two or more image paths")
        ->required()
        ->expected(-2);
    metrics_cmd->add_option("--embedder-seed", metrics_seed, "toy embedder seed");
    metrics_cmd->add_option("--embedding-dim", metrics_dim, "toy embedder dimension");
    metrics_cmd->add_option("--out", metrics_out, "also write the JSON report here");

    int gradcheck_cases = 100;
    std::uint64_t gradcheck_seed = 1000;
    CLI::App* gradcheck_cmd = app.add_subcommand(
        "gradcheck", "autodiff vs finite differences over randomized graphs");
    gradcheck_cmd->add_option("--cases", gradcheck_cases, "number of randomized graphs");
    gradcheck_cmd->add_option("--seed", gradcheck_seed, "base seed");

    std::string div_config, div_loss = "var", div_out;
    int div_trials = 5;
    std::uint64_t div_seed = 100;
    double div_delta = 1e-7;
    bool div_consecutive = false;
    CLI::App* div_cmd = app.add_subcommand(
        "divergence", "init-sensitivity of sign vs adam under micro init noise");
    div_cmd->add_option("--trials", div_trials, "number of trials")->check(CLI::Range(2, 1000));
    div_cmd->add_option("--config", div_config, "experiment config (default: built-in toy job)");
    div_cmd->add_option("--loss", div_loss, "l1 | var")->check(CLI::IsMember({"l1", "var"}));
    div_cmd->add_option("--seed", div_seed, "base seed (trial seeds are base + index)");
    div_cmd->add_option("--delta", div_delta, "init noise std");
    div_cmd->add_flag("--consecutive", div_consecutive,
                      "report consecutive-step distances within runs instead of cross-run");
    div_cmd->add_option("--out", div_out, "write the JSON report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    }

    try {
        if (*attack_cmd) {
            return advgen::run_experiment(apply_attack_flags(attack_cmd, attack_flags));
        }
        if (*compare_cmd) {
            return advgen::run_compare_optimizer(apply_attack_flags(compare_cmd, compare_flags),
                                                 std::cout);
        }
        if (*metrics_cmd) {
            return cmd_metrics(metric_paths, metrics_seed, metrics_dim, metrics_out);
        }
        if (*gradcheck_cmd) {
            return cmd_gradcheck(gradcheck_cases, gradcheck_seed);
        }
        if (*div_cmd) {
            return cmd_divergence(div_config, div_trials, div_loss, div_seed,
                                  div_cmd->count("--seed") > 0, div_delta, div_consecutive,
                                  div_out);
        }
    } catch (const advgen::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
