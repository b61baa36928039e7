#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "advgen/attack.hpp"
#include "advgen/error.hpp"
#include "advgen/image_io.hpp"
#include "advgen/metrics.hpp"
#include "advgen/models.hpp"
#include "advgen/optim.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

using json = nlohmann::json;

/// Shortest round-trip decimal form; keeps CSV output byte-deterministic.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Experiment configuration (JSON file schema)
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::string id = "diffusion-fill";
    int k_iters = 25;          // diffusion-fill
    std::uint64_t seed = 42;   // conv-gen weights
    std::size_t channels = 4;  // conv-gen width
};

struct ConditionFileSpec {
    std::string name;
    std::string path;
    std::string role = "image";  // image | mask | style-reference
    bool perturbable = true;
    std::string perturb_mask_path;  // optional binary mask image
};

struct ReferenceConfig {
    std::string image;          // reference image path (directional, image branch)
    std::string embedding_ref;  // embedding file paths (directional, text branch)
    std::string embedding_src;
};

struct AdamParams {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon_hat = 1e-8;
};

struct EmbedderConfig {
    std::uint64_t seed = 7;
    std::size_t dim = 8;
    std::size_t mid_channels = 4;
};

struct ExperimentConfig {
    ModelConfig model;
    std::vector<ConditionFileSpec> conditions;
    std::string method = "sign";  // sign | adam
    AttackConfig attack;          // loss reference tensors are loaded at run time
    ReferenceConfig references;
    AdamParams adam;
    EmbedderConfig embedder;
    std::size_t samples = 1;
    std::string out_dir = "out";
    std::string image_format = "pfm";  // pfm | pgm | ppm
    std::size_t frechet_patch = 8;
};

inline const char* loss_variant_name(LossVariant v) {
    switch (v) {
        case LossVariant::kUntargetedL1: return "l1";
        case LossVariant::kUntargetedVar: return "var";
        default: return "directional";
    }
}

inline LossVariant loss_variant_from_name(const std::string& s) {
    if (s == "l1") return LossVariant::kUntargetedL1;
    if (s == "var") return LossVariant::kUntargetedVar;
    if (s == "directional") return LossVariant::kTargetedDirectional;
    throw ConfigError("unknown loss variant '" + s + "' (expected l1|var|directional)");
}

inline const char* truncation_name(TruncationMode m) {
    return m == TruncationMode::kNoiseTrunc ? "noise" : "sample";
}

inline TruncationMode truncation_from_name(const std::string& s) {
    if (s == "noise") return TruncationMode::kNoiseTrunc;
    if (s == "sample") return TruncationMode::kSampleClip;
    throw ConfigError("unknown truncation mode '" + s + "' (expected noise|sample)");
}

inline json experiment_config_to_json(const ExperimentConfig& c) {
    json j;
    j["model"] = {{"id", c.model.id},
                  {"k_iters", c.model.k_iters},
                  {"seed", c.model.seed},
                  {"channels", c.model.channels}};
    j["conditions"] = json::array();
    for (const auto& cond : c.conditions) {
        json jc = {{"name", cond.name},
                   {"path", cond.path},
                   {"role", cond.role},
                   {"perturbable", cond.perturbable}};
        if (!cond.perturb_mask_path.empty()) jc["perturb_mask"] = cond.perturb_mask_path;
        j["conditions"].push_back(jc);
    }
    j["method"] = c.method;
    j["attack"] = {{"steps", c.attack.steps},
                   {"epsilon", json::array({c.attack.epsilon0.lo, c.attack.epsilon0.hi})},
                   {"decay", c.attack.decay},
                   {"delta", c.attack.init_noise_delta},
                   {"c_min", c.attack.c_min},
                   {"c_max", c.attack.c_max},
                   {"truncation", truncation_name(c.attack.truncation)},
                   {"loss", loss_variant_name(c.attack.loss.variant)},
                   {"seed", c.attack.seed},
                   {"domain", json::array({c.attack.domain_min, c.attack.domain_max})}};
    j["references"] = {{"image", c.references.image},
                       {"embedding_ref", c.references.embedding_ref},
                       {"embedding_src", c.references.embedding_src}};
    j["adam"] = {{"lr", c.adam.lr},
                 {"beta1", c.adam.beta1},
                 {"beta2", c.adam.beta2},
                 {"epsilon_hat", c.adam.epsilon_hat}};
    j["embedder"] = {{"seed", c.embedder.seed},
                     {"dim", c.embedder.dim},
                     {"mid_channels", c.embedder.mid_channels}};
    j["samples"] = c.samples;
    j["out_dir"] = c.out_dir;
    j["image_format"] = c.image_format;
    j["frechet_patch"] = c.frechet_patch;
    return j;
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
    ExperimentConfig c;
    try {
        if (j.contains("model")) {
            const json& m = j["model"];
            c.model.id = m.value("id", c.model.id);
            c.model.k_iters = m.value("k_iters", c.model.k_iters);
            c.model.seed = m.value("seed", c.model.seed);
            c.model.channels = m.value("channels", c.model.channels);
        }
        for (const json& jc : j.value("conditions", json::array())) {
            ConditionFileSpec s;
            s.name = jc.at("name").get<std::string>();
            s.path = jc.at("path").get<std::string>();
            s.role = jc.value("role", s.role);
            s.perturbable = jc.value("perturbable", s.role == "image");
            s.perturb_mask_path = jc.value("perturb_mask", std::string{});
            c.conditions.push_back(std::move(s));
        }
        c.method = j.value("method", c.method);
        if (j.contains("attack")) {
            const json& a = j["attack"];
            c.attack.steps = a.value("steps", c.attack.steps);
            if (a.contains("epsilon")) {
                const json& e = a["epsilon"];
                if (e.is_array()) {
                    c.attack.epsilon0 = {e.at(0).get<double>(), e.at(1).get<double>()};
                } else {
                    c.attack.epsilon0 = EpsilonInterval::constant(e.get<double>());
                }
            }
            c.attack.decay = a.value("decay", c.attack.decay);
            c.attack.init_noise_delta = a.value("delta", c.attack.init_noise_delta);
            c.attack.c_min = a.value("c_min", c.attack.c_min);
            c.attack.c_max = a.value("c_max", c.attack.c_max);
            if (a.contains("truncation")) {
                c.attack.truncation = truncation_from_name(a["truncation"].get<std::string>());
            }
            if (a.contains("loss")) {
                c.attack.loss.variant = loss_variant_from_name(a["loss"].get<std::string>());
            }
            c.attack.seed = a.value("seed", c.attack.seed);
            if (a.contains("domain")) {
                c.attack.domain_min = a["domain"].at(0).get<double>();
                c.attack.domain_max = a["domain"].at(1).get<double>();
            }
        }
        if (j.contains("references")) {
            const json& r = j["references"];
            c.references.image = r.value("image", std::string{});
            c.references.embedding_ref = r.value("embedding_ref", std::string{});
            c.references.embedding_src = r.value("embedding_src", std::string{});
        }
        if (j.contains("adam")) {
            const json& a = j["adam"];
            c.adam.lr = a.value("lr", c.adam.lr);
            c.adam.beta1 = a.value("beta1", c.adam.beta1);
            c.adam.beta2 = a.value("beta2", c.adam.beta2);
            c.adam.epsilon_hat = a.value("epsilon_hat", c.adam.epsilon_hat);
        }
        if (j.contains("embedder")) {
            const json& e = j["embedder"];
            c.embedder.seed = e.value("seed", c.embedder.seed);
            c.embedder.dim = e.value("dim", c.embedder.dim);
            c.embedder.mid_channels = e.value("mid_channels", c.embedder.mid_channels);
        }
        c.samples = j.value("samples", c.samples);
        c.out_dir = j.value("out_dir", c.out_dir);
        c.image_format = j.value("image_format", c.image_format);
        c.frechet_patch = j.value("frechet_patch", c.frechet_patch);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
    if (c.method != "sign" && c.method != "adam") {
        throw ConfigError("unknown method '" + c.method + "' (expected sign|adam)");
    }
    if (c.image_format != "pfm" && c.image_format != "pgm" && c.image_format != "ppm") {
        throw ConfigError("unknown image_format '" + c.image_format + "'");
    }
    if (c.samples < 1) throw ConfigError("samples must be >= 1");
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Materialization: files and ids -> model, conditions, embedder, loss tensors
// ---------------------------------------------------------------------------

struct MaterializedExperiment {
    std::unique_ptr<Generator> model;
    ConditionSet conditions;
    std::optional<Embedder> embedder;
    AttackConfig attack;  // loss carries loaded reference tensors
    AdamParams adam;

    AdamConfig adam_config() const {
        AdamConfig a;
        a.base = attack;
        a.lr = adam.lr;
        a.beta1 = adam.beta1;
        a.beta2 = adam.beta2;
        a.epsilon_hat = adam.epsilon_hat;
        return a;
    }
};

inline ConditionRole role_from_name(const std::string& s) {
    if (s == "image") return ConditionRole::kImage;
    if (s == "mask") return ConditionRole::kMask;
    if (s == "style-reference") return ConditionRole::kStyleReference;
    throw ConfigError("unknown condition role '" + s + "'");
}

inline MaterializedExperiment materialize_experiment(const ExperimentConfig& cfg) {
    MaterializedExperiment m;
    if (cfg.conditions.empty()) throw ConfigError("experiment config lists no conditions");

    for (const auto& spec : cfg.conditions) {
        ConditionEntry e;
        e.name = spec.name;
        e.value = load_image(spec.path);
        e.perturbable = spec.perturbable;
        if (!spec.perturb_mask_path.empty()) e.perturb_mask = load_image(spec.perturb_mask_path);
        m.conditions.add(std::move(e));
    }

    const Shape& first = m.conditions.at(0).value.shape();
    if (first.size() != 2) {
        throw ConfigError("the shipped models take HxW grayscale conditions, got " +
                          shape_to_string(first));
    }
    const std::size_t h = first[0], w = first[1];

    if (cfg.model.id == "diffusion-fill") {
        m.model = std::make_unique<DiffusionFillGenerator>(h, w, cfg.model.k_iters);
    } else if (cfg.model.id == "conv-gen") {
        m.model = std::make_unique<ConvGenerator>(h, w, cfg.model.seed, cfg.model.channels);
    } else {
        throw ConfigError("unknown model id '" + cfg.model.id + "'");
    }

    m.embedder.emplace(h, w, cfg.embedder.seed, cfg.embedder.dim, cfg.embedder.mid_channels);

    m.attack = cfg.attack;
    if (m.attack.loss.variant == LossVariant::kTargetedDirectional) {
        const bool has_image = !cfg.references.image.empty();
        const bool has_pair =
            !cfg.references.embedding_ref.empty() && !cfg.references.embedding_src.empty();
        if (has_image == has_pair) {
            throw ConfigError(
                "directional loss requires exactly one reference form: an image, or an "
                "embedding_ref/embedding_src pair");
        }
        if (has_image) {
            m.attack.loss = LossSpec::targeted_image(load_image(cfg.references.image));
        } else {
            m.attack.loss = LossSpec::targeted_pair(
                load_reference_embedding(cfg.references.embedding_ref, m.embedder->dim()),
                load_reference_embedding(cfg.references.embedding_src, m.embedder->dim()));
        }
    }
    m.adam = cfg.adam;
    return m;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

/// Trace CSV. With several perturbable conditions the eps column carries the
/// first one and linf_perturbation the max; the in-memory trace keeps all.
inline void write_trace_csv(const AttackTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write trace: " + path);
    out << "step,loss,eps,linf_perturbation,l1_output_delta\n";
    for (const TraceRecord& r : trace.records) {
        double linf = 0.0;
        for (double v : r.linf_perturbation) linf = std::max(linf, v);
        out << r.step << ',' << format_double(r.loss) << ','
            << format_double(r.eps.empty() ? 0.0 : r.eps[0]) << ',' << format_double(linf) << ','
            << format_double(r.l1_output_delta) << '\n';
    }
}

/// Tiles equally-shaped grayscale images onto one canvas, left-to-right,
/// top-to-bottom, with a 2-pixel white gap.
inline Tensor contact_sheet(const std::vector<Tensor>& images) {
    if (images.empty()) throw ConfigError("contact_sheet: no images");
    const Shape& s = images[0].shape();
    if (s.size() != 2) throw DimensionError("contact_sheet expects HxW images");
    for (const Tensor& t : images) {
        if (!t.same_shape(images[0])) throw DimensionError("contact_sheet: shapes differ");
    }
    const std::size_t n = images.size();
    std::size_t cols = 1;
    while (cols * cols < n) ++cols;
    const std::size_t rows = (n + cols - 1) / cols;
    const std::size_t gap = 2;
    Tensor sheet(Shape{rows * s[0] + (rows - 1) * gap, cols * s[1] + (cols - 1) * gap}, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = i / cols, c = i % cols;
        const std::size_t y0 = r * (s[0] + gap), x0 = c * (s[1] + gap);
        for (std::size_t y = 0; y < s[0]; ++y) {
            for (std::size_t x = 0; x < s[1]; ++x) {
                sheet.at(y0 + y, x0 + x) = images[i].at(y, x);
            }
        }
    }
    return sheet;
}

inline json diversity_report_to_json(const DiversityReport& r) {
    json j;
    j["sample_count"] = r.sample_count;
    j["l1_scale"] = "mean absolute pixel difference, 0-255 scale";
    j["embedding_note"] = "embedding distance (LPIPS stand-in)";
    j["mean_pairwise_l1"] = r.mean_pairwise_l1;
    j["mean_pairwise_embedding_distance"] = r.mean_pairwise_embedding;
    j["pairwise_l1"] = r.l1_matrix;
    j["pairwise_embedding_distance"] = r.embedding_matrix;
    return j;
}

inline void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write: " + path);
    out << j.dump(2) << '\n';
}

namespace detail {

inline std::string two_digit(std::size_t i) {
    std::string s = std::to_string(i);
    return s.size() < 2 ? "0" + s : s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

/// Runs K seeded attack jobs (job seed = base seed + job index) and writes
/// samples, traces, a contact sheet, the diversity report, and the echoed
/// config into the output directory. Idempotent for fixed seeds.
inline int run_experiment(const ExperimentConfig& cfg, std::ostream& err = std::cerr) {
    std::string stage = "setup";
    try {
        stage = "materialize";
        MaterializedExperiment m = materialize_experiment(cfg);

        stage = "prepare-output";
        std::filesystem::create_directories(cfg.out_dir);
        const auto out_path = [&](const std::string& name) {
            return (std::filesystem::path(cfg.out_dir) / name).string();
        };

        stage = "attack-jobs";
        std::vector<Tensor> samples;
        Tensor default_output;
        for (std::size_t k = 0; k < cfg.samples; ++k) {
            AttackConfig job_cfg = m.attack;
            job_cfg.seed = m.attack.seed + k;
            AttackResult res;
            if (cfg.method == "adam") {
                AdamConfig ac = m.adam_config();
                ac.base = job_cfg;
                res = run_optimizer_attack(*m.model, m.conditions, ac, &*m.embedder);
            } else {
                res = run_attack(*m.model, m.conditions, job_cfg, &*m.embedder);
            }
            if (k == 0) default_output = res.default_output;
            save_image(res.final_output(), out_path("sample_" + detail::two_digit(k) + "." +
                                                    cfg.image_format));
            write_trace_csv(res.trace, out_path("trace_" + detail::two_digit(k) + ".csv"));
            samples.push_back(res.final_output());
        }

        stage = "default-output";
        save_image(default_output, out_path("default." + cfg.image_format));

        stage = "contact-sheet";
        std::vector<Tensor> sheet_images;
        sheet_images.push_back(default_output);
        for (const Tensor& s : samples) sheet_images.push_back(s);
        save_image(contact_sheet(sheet_images), out_path("contact_sheet.pgm"));

        stage = "diversity-report";
        json report;
        if (samples.size() >= 2) {
            report = diversity_report_to_json(diversity_report(samples, *m.embedder));
        } else {
            report["sample_count"] = 1;
            report["note"] = "pairwise metrics require at least 2 samples";
        }
        write_json_file(report, out_path("diversity.json"));

        stage = "echo-config";
        write_json_file(experiment_config_to_json(cfg), out_path("config.json"));
        return 0;
    } catch (const std::exception& e) {
        err << "stage " << stage << " failed: " << e.what() << "\n";
        return 1;
    }
}

/// Side-by-side sign vs adam comparison on the same jobs: per-step mean loss
/// and the patch-Frechet proxy of each method's step outputs against the
/// default output.
inline int run_compare_optimizer(const ExperimentConfig& cfg, std::ostream& out,
                                 std::ostream& err = std::cerr) {
    std::string stage = "setup";
    try {
        stage = "materialize";
        MaterializedExperiment m = materialize_experiment(cfg);

        stage = "compare-jobs";
        const int steps = m.attack.steps;
        // step_outputs[method][step] = outputs across jobs
        std::vector<std::vector<std::vector<Tensor>>> step_outputs(
            2, std::vector<std::vector<Tensor>>(std::size_t(steps)));
        std::vector<std::vector<double>> loss_sums(2, std::vector<double>(std::size_t(steps), 0.0));
        Tensor default_output;
        for (std::size_t k = 0; k < cfg.samples; ++k) {
            AttackConfig job_cfg = m.attack;
            job_cfg.seed = m.attack.seed + k;
            AdamConfig ac = m.adam_config();
            ac.base = job_cfg;
            const AttackResult sign_res = run_attack(*m.model, m.conditions, job_cfg, &*m.embedder);
            const AttackResult adam_res =
                run_optimizer_attack(*m.model, m.conditions, ac, &*m.embedder);
            if (k == 0) default_output = sign_res.default_output;
            for (int s = 0; s < steps; ++s) {
                step_outputs[0][std::size_t(s)].push_back(sign_res.step_outputs[std::size_t(s)]);
                step_outputs[1][std::size_t(s)].push_back(adam_res.step_outputs[std::size_t(s)]);
                loss_sums[0][std::size_t(s)] += sign_res.trace.records[std::size_t(s)].loss;
                loss_sums[1][std::size_t(s)] += adam_res.trace.records[std::size_t(s)].loss;
            }
        }

        stage = "comparison-table";
        std::filesystem::create_directories(cfg.out_dir);
        const std::string csv_path =
            (std::filesystem::path(cfg.out_dir) / "comparison.csv").string();
        std::ofstream csv(csv_path, std::ios::binary);
        if (!csv) throw IoError("cannot write " + csv_path);
        csv << "step,sign_loss,sign_frechet,adam_loss,adam_frechet\n";
        out << "step  sign_loss      sign_frechet   adam_loss      adam_frechet\n";
        const std::vector<Tensor> reference{default_output};
        for (int s = 0; s < steps; ++s) {
            const double sl = loss_sums[0][std::size_t(s)] / double(cfg.samples);
            const double al = loss_sums[1][std::size_t(s)] / double(cfg.samples);
            const double sf =
                patch_frechet_distance(step_outputs[0][std::size_t(s)], reference, cfg.frechet_patch);
            const double af =
                patch_frechet_distance(step_outputs[1][std::size_t(s)], reference, cfg.frechet_patch);
            csv << (s + 1) << ',' << format_double(sl) << ',' << format_double(sf) << ','
                << format_double(al) << ',' << format_double(af) << '\n';
            char line[160];
            std::snprintf(line, sizeof(line), "%-5d %-14.6g %-14.6g %-14.6g %-14.6g\n", s + 1, sl,
                          sf, al, af);
            out << line;
        }

        stage = "echo-config";
        write_json_file(experiment_config_to_json(cfg),
                        (std::filesystem::path(cfg.out_dir) / "config.json").string());
        return 0;
    } catch (const std::exception& e) {
        err << "stage " << stage << " failed: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace advgen
