#include "ptlab/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

#include "ptlab/constructions.hpp"
#include "ptlab/errors.hpp"
#include "ptlab/experiments.hpp"
#include "ptlab/inversion.hpp"
#include "ptlab/io.hpp"
#include "ptlab/lipschitz.hpp"
#include "ptlab/numerics.hpp"
#include "ptlab/tuning.hpp"

namespace ptlab {

namespace {

namespace fs = std::filesystem;
using io::Json;

// Collects the inputs and outputs of one invocation and writes a manifest
// next to every output.
class Run {
public:
    Run(std::string command, std::uint64_t seed)
        : command_(std::move(command)), seed_(seed), start_(std::chrono::steady_clock::now()) {}

    Json read_json(const std::string& path) {
        const std::string text = io::read_text(path);
        inputs_.emplace_back(path, io::sha256_hex(text));
        try {
            return Json::parse(text);
        } catch (const Json::exception& e) {
            throw Error(ErrorKind::InvalidInput, path + ": " + e.what());
        }
    }

    void write(const std::string& path, const std::string& content) {
        io::write_atomic(path, content);
        outputs_.emplace_back(path, io::sha256_hex(content));
    }
    void write(const std::string& path, const Json& j) { write(path, j.dump(2) + "\n"); }

    void finish() const {
        io::RunManifest m{command_, seed_, inputs_, outputs_};
        m.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        const Json j = io::manifest_to_json(m);
        for (const auto& [path, hash] : outputs_) io::write_json(io::manifest_path(path), j);
    }

private:
    std::string command_;
    std::uint64_t seed_;
    std::chrono::steady_clock::time_point start_;
    std::vector<std::pair<std::string, std::string>> inputs_;
    std::vector<std::pair<std::string, std::string>> outputs_;
};

TransformerLayerWeights single_layer(const TransformerStack& st, const std::string& what) {
    require(st.layers.size() == 1, ErrorKind::InvalidInput, what + " needs single-layer weights");
    return st.layers.front();
}

Json mlp_to_json(const MlpWeights& w) {
    return {{"W_1", io::matrix_to_json(w.W_1)}, {"b_1", w.b_1}, {"W_2", io::matrix_to_json(w.W_2)}, {"b_2", w.b_2}};
}

Json train_result_to_json(const TrainConfig& cfg, const TrainRecord& rec) {
    Json j = {{"method", std::string(to_string(cfg.method))},
              {"prompt_length", cfg.prompt_length},
              {"learning_rate", cfg.learning_rate},
              {"seed", cfg.seed.value},
              {"steps_run", rec.steps_run},
              {"converged", rec.converged},
              {"initial_loss", io::number_to_json(rec.initial_loss)},
              {"final_loss", io::number_to_json(rec.final_loss)},
              {"last_iterate_loss", io::number_to_json(rec.last_iterate_loss)},
              {"prompt", io::matrix_to_json(rec.final_params.prompt.tokens)}};
    if (rec.final_params.mlp) j["mlp"] = mlp_to_json(*rec.final_params.mlp);
    if (const auto& l = rec.final_params.lora)
        j["lora"] = {{"A1", io::matrix_to_json(l->A1)}, {"B1", io::matrix_to_json(l->B1)},
                     {"A2", io::matrix_to_json(l->A2)}, {"B2", io::matrix_to_json(l->B2)},
                     {"delta_b1", l->delta_b1}};
    return j;
}

// Memorization error of an update on the supervised last column.
double memorizer_error(const TransformerLayerWeights& layer, const SeqDataset& ds, const LoraUpdate& u) {
    TransformerLayerWeights updated = layer;
    updated.mlp = apply_lora_update(layer.mlp, u);
    double err = 0.0;
    const auto features = post_attention_features(layer, ds);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Vector y = mlp_token(features[i], updated.mlp);
        const Matrix& Y = ds.examples[i].Y;
        for (std::size_t r = 0; r < y.size(); ++r) err = std::max(err, std::abs(y[r] - Y(r, Y.cols() - 1)));
    }
    return err;
}

int exit_code_for(ErrorKind kind) {
    return kind == ErrorKind::InvalidInput || kind == ErrorKind::InvalidMatrix ? kExitInvalidArguments
                                                                             : kExitPrecondition;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Prompt tuning and fine-tuning expressiveness toolkit"};
    app.require_subcommand(1);
    int result = kExitOk;
    std::function<void()> action;

    std::uint64_t seed = 0;
    std::string weights, dataset, out_path;

    // gen-weights
    InitOptions init;
    auto* gen = app.add_subcommand("gen-weights", "Sample single-layer weights");
    gen->add_option("--d", init.d, "Token dimension")->required()->check(CLI::PositiveNumber);
    gen->add_option("--heads", init.heads, "Number of heads")->check(CLI::PositiveNumber);
    gen->add_option("--head-size", init.head_size, "Head size (default d)");
    gen->add_option("--hidden", init.hidden, "MLP width (default d)");
    gen->add_option("--seed", seed, "Seed");
    gen->add_flag("--contractive-mlp", init.contractive_mlp, "Rescale the MLP to ||W_1|| ||W_2|| = 0.9");
    gen->add_flag("--identity-output", init.identity_output, "Use W_o = I");
    gen->add_option("--out", out_path, "Weights JSON")->required();
    gen->callback([&] {
        action = [&] {
            Run run("gen-weights", seed);
            Rng rng(seed);
            run.write(out_path, io::stack_to_json(TransformerStack{{init_layer(init, rng)}}));
            run.finish();
        };
    });

    // bound / certify
    double D = 0.0, alpha = 0.0;
    std::size_t m = 1, layer_index = 0;
    auto* bound = app.add_subcommand("bound", "Lipschitz bounds of one layer");
    bound->add_option("--weights", weights)->required();
    bound->add_option("--D", D, "Bound on the input spectral norm")->required()->check(CLI::NonNegativeNumber);
    bound->add_option("--m", m, "Sequence length")->required()->check(CLI::PositiveNumber);
    bound->add_option("--alpha", alpha, "Prompt-to-input distance ratio")->check(CLI::NonNegativeNumber);
    bound->add_option("--layer", layer_index, "Layer index");
    bound->add_option("--out", out_path)->required();
    bound->callback([&] {
        action = [&] {
            Run run("bound", 0);
            const auto st = io::stack_from_json(run.read_json(weights));
            require(layer_index < st.layers.size(), ErrorKind::InvalidInput, "layer index out of range");
            CompactnessConstants c{.D_per_layer = std::vector<double>(st.layers.size(), D), .D_X = D, .alpha = alpha,
                                   .m = m};
            const auto report = lipschitz_report(st.layers[layer_index], c, layer_index);
            run.write(out_path, io::report_to_json(report));
            run.finish();
            out << "layer_bound " << io::format_double(report.layer_bound) << "\n";
        };
    });

    auto* certify = app.add_subcommand("certify", "Invertibility certificate of a stack");
    certify->add_option("--weights", weights)->required();
    certify->add_option("--D", D)->required()->check(CLI::NonNegativeNumber);
    certify->add_option("--m", m)->required()->check(CLI::PositiveNumber);
    certify->add_option("--out", out_path)->required();
    certify->callback([&] {
        action = [&] {
            Run run("certify", 0);
            const auto st = io::stack_from_json(run.read_json(weights));
            const auto cert = certify_invertible(
                st, {.D_per_layer = std::vector<double>(st.layers.size(), D), .D_X = D, .m = m});
            run.write(out_path, io::certificate_to_json(cert));
            run.finish();
            out << "certified " << (cert.certified ? "true" : "false") << " margin "
                << io::format_double(cert.margin) << "\n";
        };
    });

    // invert-mlp
    std::string y_path;
    FixedPointOptions fp;
    auto* inv = app.add_subcommand("invert-mlp", "Invert the MLP of a single layer");
    inv->add_option("--weights", weights)->required();
    inv->add_option("--y", y_path, "JSON vector or d x k matrix of targets")->required();
    inv->add_option("--max-iter", fp.max_iter)->check(CLI::PositiveNumber);
    inv->add_option("--tol", fp.tol)->check(CLI::PositiveNumber);
    inv->add_option("--out", out_path)->required();
    inv->callback([&] {
        action = [&] {
            Run run("invert-mlp", 0);
            const auto layer = single_layer(io::stack_from_json(run.read_json(weights)), "invert-mlp");
            const Json yj = run.read_json(y_path);
            const bool is_vector = yj.is_array() && !yj.empty() && !yj.front().is_array();
            Matrix Y;
            if (is_vector) {
                const Vector y = io::vector_from_json(yj);
                Y = Matrix(y.size(), 1);
                Y.set_col(0, y);
            } else {
                Y = io::matrix_from_json(yj);
            }
            require(Y.rows() == layer.d(), ErrorKind::InvalidInput, "y has the wrong dimension");
            const Matrix X = invert_mlp_seq(Y, layer.mlp, fp);
            const double residual = max_abs(mlp_forward(X, layer.mlp) - Y);
            Json xj = io::matrix_to_json(X);
            if (is_vector) xj = X.col(0);
            run.write(out_path, Json{{"x", xj}, {"residual", io::number_to_json(residual)}});
            run.finish();
            out << "residual " << io::format_double(residual) << "\n";
        };
    });

    // construct
    std::string cert_out;
    std::size_t d = 0, n = 0;
    auto* construct = app.add_subcommand("construct", "Adversarial datasets");
    construct->require_subcommand(1);
    auto* unl = construct->add_subcommand("unlearnable", "Two-example dataset no prompt can fit");
    unl->add_option("--weights", weights)->required();
    unl->add_option("--d", d, "Token dimension (checked against the weights)");
    unl->add_option("--seed", seed);
    unl->add_option("--out", out_path, "Dataset JSON")->required();
    unl->add_option("--certificate-out", cert_out, "Certificate JSON (default <out>.certificate.json)");
    unl->callback([&] {
        action = [&] {
            Run run("construct unlearnable", seed);
            const auto layer = single_layer(io::stack_from_json(run.read_json(weights)), "construct unlearnable");
            if (d == 0) d = layer.d();
            require(d == layer.d(), ErrorKind::InvalidInput, "--d does not match the weights");
            const auto pair = build_unlearnable_pair(RngSeed{seed}, d, layer);
            const Json meta = {{"shared_token", "last column"}, {"supervised", "last column"}};
            run.write(out_path, io::dataset_to_json(pair.dataset, meta));
            run.write(cert_out.empty() ? out_path + ".certificate.json" : cert_out,
                      io::certificate_to_json(pair.certificate));
            run.finish();
            out << "cone_margin " << io::format_double(pair.certificate.cone_margin) << "\n";
        };
    });
    auto* lb = construct->add_subcommand("lowerbound", "Dataset needing at least n prompt tokens");
    lb->add_option("--weights", weights)->required();
    lb->add_option("--n", n, "Number of examples")->required()->check(CLI::PositiveNumber);
    lb->add_option("--seed", seed);
    lb->add_option("--out", out_path)->required();
    lb->callback([&] {
        action = [&] {
            Run run("construct lowerbound", seed);
            const auto layer = single_layer(io::stack_from_json(run.read_json(weights)), "construct lowerbound");
            const auto lbd = build_lower_bound_dataset(RngSeed{seed}, n, layer.d(), layer);
            const Json meta = {{"supervised", "last column"}, {"min_feature_gap", io::number_to_json(lbd.min_feature_gap)}};
            run.write(out_path, io::dataset_to_json(lbd.dataset, meta));
            run.finish();
            out << "examples " << lbd.dataset.size() << "\n";
        };
    });

    // train
    std::string method_name = "prompt", log_path;
    std::optional<double> lr;
    std::optional<std::size_t> steps;
    std::size_t prompt_len = 0, lora_rank = 2;
    auto* train_cmd = app.add_subcommand("train", "Train a prompt, the MLP or a LoRA adapter");
    train_cmd->add_option("--weights", weights)->required();
    train_cmd->add_option("--dataset", dataset)->required();
    train_cmd->add_option("--method", method_name)->check(CLI::IsMember({"prompt", "finetune", "finetune_mlp", "lora"}));
    train_cmd->add_option("--prompt-len", prompt_len);
    train_cmd->add_option("--lora-rank", lora_rank)->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", lr)->check(CLI::PositiveNumber);
    train_cmd->add_option("--steps", steps);
    train_cmd->add_option("--seed", seed);
    train_cmd->add_option("--log", log_path, "Loss history CSV");
    train_cmd->add_option("--out", out_path, "Final parameters JSON");
    train_cmd->callback([&] {
        action = [&] {
            Run run("train", seed);
            const auto layer = single_layer(io::stack_from_json(run.read_json(weights)), "train");
            const auto ds = io::dataset_from_json(run.read_json(dataset));
            TrainConfig cfg = TrainConfig::defaults(parse_train_method(method_name));
            if (lr) cfg.learning_rate = *lr;
            if (steps) cfg.steps = *steps;
            cfg.prompt_length = prompt_len;
            cfg.lora_rank = lora_rank;
            cfg.seed = RngSeed{seed};
            const auto rec = train(layer, ds, cfg);
            if (!log_path.empty()) run.write(log_path, io::train_log_csv(rec));
            if (!out_path.empty()) run.write(out_path, train_result_to_json(cfg, rec));
            run.finish();
            out << "final_loss " << io::format_double(rec.final_loss) << " steps " << rec.steps_run << "\n";
        };
    });

    // sweep-prompt-length
    std::vector<std::size_t> lengths{1, 2, 5, 10, 20, 50, 100};
    std::size_t runs = 5;
    std::string json_out;
    auto* sweep = app.add_subcommand("sweep-prompt-length", "Prompt tuning across prompt lengths");
    sweep->add_option("--weights", weights)->required();
    sweep->add_option("--dataset", dataset)->required();
    sweep->add_option("--lengths", lengths)->delimiter(',');
    sweep->add_option("--runs", runs)->check(CLI::PositiveNumber);
    sweep->add_option("--lr", lr)->check(CLI::PositiveNumber);
    sweep->add_option("--steps", steps);
    sweep->add_option("--seed", seed);
    sweep->add_option("--out", out_path, "Sweep CSV")->required();
    sweep->add_option("--json", json_out, "Per-run losses as JSON");
    sweep->callback([&] {
        action = [&] {
            Run run("sweep-prompt-length", seed);
            const auto layer = single_layer(io::stack_from_json(run.read_json(weights)), "sweep-prompt-length");
            const auto ds = io::dataset_from_json(run.read_json(dataset));
            TrainConfig cfg = TrainConfig::defaults(TrainMethod::Prompt);
            if (lr) cfg.learning_rate = *lr;
            if (steps) cfg.steps = *steps;
            cfg.seed = RngSeed{seed};
            const auto rows = sweep_prompt_length(layer, ds, lengths, cfg, runs);
            run.write(out_path, io::sweep_csv(rows));
            if (!json_out.empty()) run.write(json_out, io::sweep_to_json(rows));
            run.finish();
            for (const auto& r : rows)
                out << "length " << r.prompt_length << " mean_mse " << io::format_double(r.mean_mse) << "\n";
        };
    });

    // validate-bounds
    BoundsValidationOptions vb;
    auto* validate = app.add_subcommand("validate-bounds", "Empirical soundness sweep of the Lipschitz bounds");
    validate->add_option("--seeds", vb.configs, "Number of layer configurations")->check(CLI::PositiveNumber);
    validate->add_option("--pairs", vb.pairs, "Input pairs per configuration")->check(CLI::PositiveNumber);
    validate->add_option("--max-d", vb.max_d)->check(CLI::PositiveNumber);
    validate->add_option("--max-m", vb.max_m)->check(CLI::PositiveNumber);
    validate->add_option("--seed", seed);
    validate->add_option("--out", out_path);
    validate->callback([&] {
        action = [&] {
            Run run("validate-bounds", seed);
            const auto rep = validate_bounds(RngSeed{seed}, vb);
            if (!out_path.empty()) {
                Json cases = Json::array();
                for (const auto& c : rep.cases)
                    cases.push_back({{"d", c.d}, {"m", c.m}, {"heads", c.heads}, {"D", c.D},
                                     {"head_ratio", c.head_ratio}, {"head_bound", c.head_bound},
                                     {"block_ratio", c.block_ratio}, {"block_bound", c.block_bound},
                                     {"layer_ratio", c.layer_ratio}, {"layer_bound", c.layer_bound}});
                run.write(out_path, Json{{"configs", rep.cases.size()},
                                         {"pairs", vb.pairs},
                                         {"violations", rep.violations},
                                         {"max_tightness", rep.max_tightness},
                                         {"cases", cases}});
                run.finish();
            }
            out << "violations " << rep.violations << " max_tightness " << io::format_double(rep.max_tightness)
                << "\n";
            if (rep.violations != 0) result = kExitAcceptance;
        };
    });

    // gradcheck
    GradcheckOptions gc;
    auto* grad = app.add_subcommand("gradcheck", "Analytic versus finite-difference gradients");
    grad->add_option("--configs", gc.configs)->check(CLI::PositiveNumber);
    grad->add_option("--tol", gc.tol)->check(CLI::PositiveNumber);
    grad->add_option("--seed", seed);
    grad->add_option("--out", out_path);
    grad->callback([&] {
        action = [&] {
            Run run("gradcheck", seed);
            const auto rep = run_gradcheck(RngSeed{seed}, gc);
            if (!out_path.empty()) {
                run.write(out_path, Json{{"configs", rep.configs},
                                         {"coordinates", rep.coordinates},
                                         {"failures", rep.failures},
                                         {"resampled", rep.resampled},
                                         {"max_rel_error_prompt", rep.max_rel_error_prompt},
                                         {"max_rel_error_mlp", rep.max_rel_error_mlp},
                                         {"max_rel_error_lora", rep.max_rel_error_lora}});
                run.finish();
            }
            out << "max_rel_error " << io::format_double(rep.max_rel_error()) << " failures " << rep.failures << "\n";
            if (!rep.passed(gc.tol)) result = kExitAcceptance;
        };
    });

    // lora-memorize
    auto* mem = app.add_subcommand("lora-memorize", "Closed-form MLP update memorizing a dataset");
    mem->add_option("--weights", weights)->required();
    mem->add_option("--dataset", dataset)->required();
    mem->add_option("--seed", seed);
    mem->add_option("--out", out_path)->required();
    mem->callback([&] {
        action = [&] {
            Run run("lora-memorize", seed);
            const auto layer = single_layer(io::stack_from_json(run.read_json(weights)), "lora-memorize");
            const auto ds = io::dataset_from_json(run.read_json(dataset));
            const auto u = build_lora_memorizer(layer, ds, RngSeed{seed});
            const double e = memorizer_error(layer, ds, u);
            Json j = io::lora_update_to_json(u);
            j["max_abs_error"] = io::number_to_json(e);
            run.write(out_path, j);
            run.finish();
            out << "max_abs_error " << io::format_double(e) << " parameter_count " << u.parameter_count << "\n";
        };
    });

    // figure1
    Figure1Options f1;
    std::uint64_t layer_seed = 1;
    auto* fig = app.add_subcommand("figure1", "Prompt tuning versus fine-tuning on unlearnable datasets");
    fig->add_option("--seeds", f1.dataset_seeds, "Dataset seeds")->delimiter(',');
    fig->add_option("--layer-seed", layer_seed);
    fig->add_option("--d", f1.d)->check(CLI::Range(2, 1000));
    fig->add_option("--lengths", f1.lengths)->delimiter(',');
    fig->add_option("--runs", f1.runs)->check(CLI::PositiveNumber);
    fig->add_option("--prompt-steps", f1.prompt_steps)->check(CLI::PositiveNumber);
    fig->add_option("--finetune-steps", f1.finetune_steps)->check(CLI::PositiveNumber);
    fig->add_option("--out", out_path)->required();
    fig->callback([&] {
        action = [&] {
            Run run("figure1", layer_seed);
            f1.layer_seed = RngSeed{layer_seed};
            const auto res = figure1_experiment(f1);
            run.write(out_path, figure1_to_json(res));
            run.finish();
            for (const auto& e : res.datasets)
                out << "dataset " << e.seed << " finetune " << io::format_double(e.finetune.mean_mse) << " lora "
                    << io::format_double(e.lora.mean_mse) << "\n";
        };
    });

    // prompt-norm
    PromptNormOptions pn;
    auto* norm = app.add_subcommand("prompt-norm", "Prompt spectral norm before and after toy prompt tuning");
    norm->add_option("--runs", pn.runs)->check(CLI::PositiveNumber);
    norm->add_option("--max-attempts", pn.max_attempts)->check(CLI::PositiveNumber);
    norm->add_option("--steps", pn.steps)->check(CLI::PositiveNumber);
    norm->add_option("--seed", seed);
    norm->add_option("--out", out_path)->required();
    norm->callback([&] {
        action = [&] {
            Run run("prompt-norm", seed);
            const auto res = prompt_norm_experiment(RngSeed{seed}, pn);
            run.write(out_path, prompt_norm_to_json(res));
            run.finish();
            out << "qualifying " << res.runs.size() << " increased " << res.increased << "\n";
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalidArguments;
    }

    try {
        if (action) action();
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const Json::exception& e) {
        err << "error: malformed input: " << e.what() << "\n";
        return kExitInvalidArguments;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalidArguments;
    }
    return result;
}

}  // namespace ptlab
