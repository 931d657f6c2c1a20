// hystar: data generation, training, evaluation and verification driver.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config/input error,
// 3 numeric abort.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "hystar/hystar.hpp"

namespace fs = std::filesystem;
using namespace hystar;

namespace {

constexpr int exit_ok = 0, exit_check = 1, exit_usage = 2, exit_numeric = 3;

struct Options {
    std::string config, data, out, checkpoint;
    std::string param;
    std::vector<double> values;
    std::string scope = "loss";
    std::uint64_t seed = 0;
    bool corrupt_adjoint = false;
    std::size_t n = 8;
    double lambda = 1.0, epsilon = 1.0;
    int iters = 50;
};

RunConfig load_run_config(const Options& o) {
    if (!o.config.empty()) return load_config(o.config);
    if (!o.checkpoint.empty() && fs::exists(o.checkpoint + ".cfg")) return load_config(o.checkpoint + ".cfg");
    RunConfig c;
    c.validate();
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    f << text;
    if (!f) throw Error("write to '" + path.string() + "' failed");
}

fs::path prepare_out(const Options& o, const RunConfig& cfg) {
    if (o.out.empty()) throw ConfigError("--out", "an output directory is required");
    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "resolved.cfg", resolved_config(cfg));
    return o.out;
}

StyleDataset load_data(const Options& o) {
    if (o.data.empty()) throw ConfigError("--data", "a dataset directory is required");
    if (!fs::is_directory(o.data)) throw Error("dataset directory '" + o.data + "' not found");
    return read_dataset(o.data);
}

std::string run_label(const TrainConfig& t) { return to_string(t.mode) + "+" + to_string(t.loss); }

std::string run_id(const TrainConfig& t) { return run_label(t) + "_s" + std::to_string(t.seed); }

void print_epoch(const EpochRecord& r) {
    std::printf("epoch %zu loss %.6f", r.epoch, r.mean_loss);
    if (r.evaluated) {
        for (const auto& s : r.metrics.styles) std::printf(" %s %.2f", s.style.c_str(), s.top1);
        std::printf(" mean %.2f", r.metrics.mean_top1);
    }
    std::printf("\n");
    std::fflush(stdout);
}

void print_run(const RunRecord& r) {
    std::printf("%s seed %llu mean top1 %.2f\n", r.label.c_str(), static_cast<unsigned long long>(r.seed),
                r.result.final_metrics().mean_top1);
    std::fflush(stdout);
}

int cmd_gen_data(const Options& o) {
    const RunConfig cfg = load_run_config(o);
    const fs::path out = prepare_out(o, cfg);
    const StyleDataset ds = generate(cfg.dataset_config());
    write_dataset(ds, out);
    std::printf("items %zu classes %zu styles %zu per_class_per_style %zu\n", ds.items.size(), cfg.data.n_classes,
                ds.styles.size(), cfg.data.samples_per_class_per_style);
    std::printf("checksum %08x\n", directory_checksum(out));
    return exit_ok;
}

int cmd_train(const Options& o) {
    const RunConfig cfg = load_run_config(o);
    const StyleDataset ds = load_data(o);
    const fs::path out = prepare_out(o, cfg);
    const TrainConfig tc = cfg.train_config();
    Model<float> model(cfg.encoder_config(), cfg.seed);
    TrainResult result;
    try {
        result = train(model, ds, tc, cfg.data.holdout_styles, print_epoch);
    } catch (const TrainingAborted& e) {
        write_text(out / "abort_state.txt", e.dump());
        throw;
    }
    std::ofstream csv(out / "metrics.csv", std::ios::binary);
    csv << metrics_header << "\n";
    write_metrics_rows(csv, run_id(tc), tc.seed, run_label(tc), result);
    const fs::path ckpt = o.checkpoint.empty() ? out / "checkpoint.bin" : fs::path(o.checkpoint);
    save_checkpoint(model, ckpt);
    write_text(ckpt.string() + ".cfg", resolved_config(cfg));
    std::printf("checkpoint %s\n", ckpt.string().c_str());
    return exit_ok;
}

Model<float> restored_model(const Options& o, const RunConfig& cfg) {
    Model<float> model(cfg.encoder_config(), cfg.seed);
    if (!o.checkpoint.empty()) load_checkpoint(model, o.checkpoint);
    model.encoder.set_ablation_mode(cfg.train.mode);
    return model;
}

int cmd_eval(const Options& o) {
    const RunConfig cfg = load_run_config(o);
    const StyleDataset ds = load_data(o);
    const fs::path out = prepare_out(o, cfg);
    Model<float> model = restored_model(o, cfg);
    const TrainConfig tc = cfg.train_config();
    TrainResult r;
    EpochRecord rec;
    rec.epoch = o.checkpoint.empty() ? 0 : tc.epochs;
    rec.evaluated = true;
    rec.metrics = evaluate(model, ds);
    r.history.push_back(rec);
    std::ofstream csv(out / "metrics.csv", std::ios::binary);
    csv << metrics_header << "\n";
    write_metrics_rows(csv, run_id(tc), tc.seed, run_label(tc), r);
    std::ostringstream echo;
    write_metrics_rows(echo, run_id(tc), tc.seed, run_label(tc), r);
    std::cout << echo.str();
    return exit_ok;
}

void write_run_metrics(std::ostream& os, const RunRecord& r) {
    write_metrics_rows(os, r.run_id, r.seed, r.label, r.result);
    os.flush();
}

int cmd_ablate(const Options& o) {
    const RunConfig cfg = load_run_config(o);
    const StyleDataset ds = load_data(o);
    const fs::path out = prepare_out(o, cfg);
    std::ofstream metrics(out / "metrics.csv", std::ios::binary);
    metrics << metrics_header << "\n";
    const auto rows = run_ablation(ds, cfg.experiment(), [&](const RunRecord& r) {
        print_run(r);
        write_run_metrics(metrics, r);
    });
    std::ofstream table(out / "ablation.csv", std::ios::binary);
    write_top1_table(table, "config", rows);
    for (const auto& [label, unused] : ablation_configs())
        std::printf("%-20s mean top1 %.2f\n", label.c_str(), average_mean_top1(rows, label));
    return exit_ok;
}

int cmd_sweep(const Options& o) {
    const RunConfig cfg = load_run_config(o);
    const StyleDataset ds = load_data(o);
    const auto& values = o.values.empty() ? default_sweep_values(o.param) : o.values;
    const fs::path out = prepare_out(o, cfg);
    std::ofstream metrics(out / "metrics.csv", std::ios::binary);
    metrics << metrics_header << "\n";
    const auto rows = run_sweep(ds, cfg.experiment(), o.param, values, [&](const RunRecord& r) {
        print_run(r);
        write_run_metrics(metrics, r);
    });
    std::ofstream table(out / ("sweep_" + o.param + ".csv"), std::ios::binary);
    write_top1_table(table, o.param, rows);
    for (double v : values)
        std::printf("%s=%s mean top1 %.2f\n", o.param.c_str(), fmt_value(v).c_str(),
                    average_mean_top1(rows, fmt_value(v)));
    return exit_ok;
}

int cmd_export(const Options& o) {
    const RunConfig cfg = load_run_config(o);
    const StyleDataset ds = load_data(o);
    const fs::path out = prepare_out(o, cfg);
    Model<float> model = restored_model(o, cfg);
    PreparedData<float> data(model, ds);
    std::vector<std::size_t> all(ds.items.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::ofstream csv(out / "embeddings.csv", std::ios::binary);
    write_embeddings_csv(csv, ds, embed_items(model, data, all));
    std::printf("embeddings %zu x %zu\n", all.size(), cfg.encoder.embed_dim);
    return exit_ok;
}

int cmd_gradcheck(const Options& o) {
    const GradScope scope = parse_grad_scope(o.scope);
    debug::corrupt_matmul_adjoint = o.corrupt_adjoint;
    const double threshold = grad_threshold(scope);
    std::printf("scope %s threshold %g h 1e-04 precision f64\n", to_string(scope).c_str(), threshold);
    const auto entries = run_gradcheck(scope, o.seed);
    std::vector<std::string> failed;
    for (const auto& e : entries) {
        const bool ok = e.max_rel_error <= threshold;
        std::printf("%-32s %.3e %s\n", e.name.c_str(), e.max_rel_error, ok ? "ok" : "FAIL");
        if (!ok) failed.push_back(e.name);
    }
    std::printf("max %.3e\n", max_error(entries));
    if (!failed.empty()) {
        std::fprintf(stderr, "gradient check failed for:");
        for (const auto& f : failed) std::fprintf(stderr, " %s", f.c_str());
        std::fprintf(stderr, "\n");
        return exit_check;
    }
    return exit_ok;
}

int cmd_sinkhorn_demo(const Options& o) {
    if (o.n < 2) throw ConfigError("--n", "must be >= 2");
    Rng rng = make_rng(o.seed, "sinkhorn-demo");
    auto Q = gaussian_tensor<double>({o.n, 16}, rng, 1.0);
    auto P = gaussian_tensor<double>({o.n, 16}, rng, 1.0);
    Graph<double> g(GradMode::disabled);
    const Tensor<double> S = g.value(similarity_matrix(g, g.constant(Q), g.constant(P)));
    const TransportPlan plan = sinkhorn(cost_matrix(S, o.lambda), o.epsilon, o.iters);
    for (std::size_t t = 0; t < plan.deviation_history.size(); ++t)
        if ((t + 1) % 10 == 0 || t + 1 == plan.deviation_history.size())
            std::printf("iter %zu deviation %.3e\n", t + 1, plan.deviation_history[t]);
    if (o.n <= 8) {
        std::printf("plan [");
        for (std::size_t i = 0; i < o.n; ++i) {
            std::printf("%s[", i ? "," : "");
            for (std::size_t j = 0; j < o.n; ++j) std::printf("%s%.6g", j ? "," : "", plan(i, j));
            std::printf("]");
        }
        std::printf("]\n");
    }
    const fs::path out = o.out.empty() ? fs::path(".") : fs::path(o.out);
    fs::create_directories(out);
    std::ofstream csv(out / "plan.csv", std::ios::binary);
    write_matrix_csv(csv, plan);
    if (!csv) throw Error("cannot write " + (out / "plan.csv").string());
    return exit_ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral style modulation: data, training, evaluation and checks"};
    app.require_subcommand(1);
    Options o;

    auto add_run_flags = [&](CLI::App* sub, bool needs_data) {
        sub->add_option("--config", o.config, "key=value configuration file");
        if (needs_data) sub->add_option("--data", o.data, "dataset directory")->required();
        sub->add_option("--out", o.out, "output directory")->required();
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
    add_run_flags(gen, false);

    auto* tr = app.add_subcommand("train", "train one configuration");
    add_run_flags(tr, true);
    tr->add_option("--checkpoint", o.checkpoint, "checkpoint path (default <out>/checkpoint.bin)");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (or the untrained model)");
    add_run_flags(ev, true);
    ev->add_option("--checkpoint", o.checkpoint, "checkpoint to restore");

    auto* ab = app.add_subcommand("ablate", "train the four ablation configurations");
    add_run_flags(ab, true);

    auto* sw = app.add_subcommand("sweep", "sweep a loss hyperparameter");
    add_run_flags(sw, true);
    sw->add_option("--param", o.param, "gamma or lambda")->required()->check(CLI::IsMember({"gamma", "lambda"}));
    sw->add_option("--values", o.values, "comma-separated values")->delimiter(',');

    auto* ex = app.add_subcommand("export-embeddings", "write per-item embeddings as CSV");
    add_run_flags(ex, true);
    ex->add_option("--checkpoint", o.checkpoint, "checkpoint to restore");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks (f64)");
    gc->add_option("--scope", o.scope, "loss, layer or end2end")->check(CLI::IsMember({"loss", "layer", "end2end"}));
    gc->add_option("--seed", o.seed, "seed");
    gc->add_flag("--corrupt-adjoint", o.corrupt_adjoint)->group("");

    auto* sk = app.add_subcommand("sinkhorn-demo", "run Sinkhorn on a random similarity batch");
    sk->add_option("--n", o.n, "batch size");
    sk->add_option("--lambda", o.lambda, "cost sharpness");
    sk->add_option("--epsilon", o.epsilon, "entropic regularization");
    sk->add_option("--iters", o.iters, "iterations");
    sk->add_option("--seed", o.seed, "seed");
    sk->add_option("--out", o.out, "directory for plan.csv (default: working directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (*gen) return cmd_gen_data(o);
        if (*tr) return cmd_train(o);
        if (*ev) return cmd_eval(o);
        if (*ab) return cmd_ablate(o);
        if (*sw) return cmd_sweep(o);
        if (*ex) return cmd_export(o);
        if (*gc) return cmd_gradcheck(o);
        if (*sk) return cmd_sinkhorn_demo(o);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return exit_numeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_usage;
    }
    return exit_usage;
}
