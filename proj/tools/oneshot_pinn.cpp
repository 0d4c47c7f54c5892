// oneshot-pinn: train bundle checkpoints, run one-shot transfer inference, and
// reproduce the summary experiments (benchmark table, bundle ablation, Poisson
// superposition). Exit codes: 0 ok, 2 config error, 3 missing artifact,
// 4 numerical failure.

#include "ospinn/problems.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ospinn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitNumerical = 4;

struct MissingArtifact : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string out_root(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("OSPINN_OUT")) return env;
    return ".";
}

std::string checkpoint_path(const std::string& out, const std::string& explicit_path, Family family,
                            std::uint64_t seed) {
    if (!explicit_path.empty()) return explicit_path;
    return out + "/" + family_name(family) + "_seed" + std::to_string(seed) + ".ckpt";
}

std::ofstream open_out(const std::string& path) {
    fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path().string());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot open output file: " + path);
    return f;
}

MlpParams load_family_checkpoint(const std::string& path, Family family) {
    if (!fs::exists(path)) throw MissingArtifact("checkpoint not found: " + path + " (run train first)");
    MlpParams p = load_checkpoint(path);
    if (p.input_dim != family_info(family).input_dim)
        throw ConfigError("checkpoint " + path + " has input_dim " + std::to_string(p.input_dim) +
                          ", incompatible with family " + family_name(family));
    if (!p.provenance.empty() && p.provenance.find(family_name(family)) == std::string::npos)
        throw ConfigError("checkpoint " + path + " was trained for a different family (provenance: " +
                          p.provenance + ")");
    return p;
}

// Held-out test bundles. ODE families draw from the sampling sets; Poisson
// sweeps k uniformly over [1,4]; Schrodinger walks a near-square (sigma, p0)
// grid over [0.4,0.8] x [0.5,4].
std::vector<Bundle> make_test_bundles(Family family, int n, std::uint64_t seed) {
    if (n < 0) throw ConfigError("test count must be >= 0");
    if (family == Family::Poisson) {
        std::vector<Bundle> out;
        const auto ks = linspace(1.0, 4.0, std::max(n, 1));
        for (int i = 0; i < n; ++i) {
            Bundle b;
            b.family = family;
            b.params = PoissonParams{ks[static_cast<std::size_t>(i)]};
            out.push_back(b);
        }
        return out;
    }
    if (family == Family::Schrodinger) {
        std::vector<Bundle> out;
        if (n <= 3) {
            for (int i = 0; i < n; ++i) {
                Bundle b;
                b.family = family;
                b.params = kSchrodingerTrainPairs[static_cast<std::size_t>(i)];
                out.push_back(b);
            }
            return out;
        }
        const int ns = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
        const auto sigmas = linspace(0.4, 0.8, ns);
        const auto p0s = linspace(0.5, 4.0, ns);
        for (int i = 0; i < ns && static_cast<int>(out.size()) < n; ++i)
            for (int j = 0; j < ns && static_cast<int>(out.size()) < n; ++j) {
                Bundle b;
                b.family = family;
                b.params = SchrodParams{sigmas[static_cast<std::size_t>(i)], p0s[static_cast<std::size_t>(j)]};
                out.push_back(b);
            }
        return out;
    }
    return sample_bundles(family, n, seed);
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

void write_eval_csv(const std::string& path, const EvalReport& rep) {
    auto f = open_out(path);
    f << "index,desc,residual_mse,ic_mse,solution_mse,solve_ms,path\n";
    f.precision(17);
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
        const EvalRow& r = rep.rows[i];
        f << i << ',' << csv_escape(r.desc) << ',' << r.residual_mse << ',' << r.ic_mse << ','
          << r.solution_mse << ',' << r.solve_ms << ',' << r.path << '\n';
    }
}

json report_summary(Family family, const EvalReport& rep) {
    return {{"family", family_name(family)},
            {"tests", rep.rows.size()},
            {"mean_residual_mse", rep.mean_residual},
            {"std_residual_mse", rep.std_residual},
            {"mean_solution_mse", rep.mean_solution},
            {"std_solution_mse", rep.std_solution},
            {"total_infer_s", rep.total_infer_s}};
}

// ---- train --------------------------------------------------------------------

struct TrainOpts {
    std::string family_s = "first_order";
    std::uint64_t seed = 0;
    int iterations = -1;
    int bundles = -1;
    int collocation = -1;
    double lr = -1.0;
    std::vector<int> hidden;
    bool force = false;
    std::string out, ckpt;
};

int cmd_train(const TrainOpts& o) {
    const Family family = family_from_name(o.family_s);
    const std::string out = out_root(o.out);
    const std::string ckpt = checkpoint_path(out, o.ckpt, family, o.seed);
    if (fs::exists(ckpt) && !o.force) {
        std::cerr << "error: checkpoint already exists: " << ckpt << " (pass --force to overwrite)\n";
        return kExitConfig;
    }

    TrainConfig cfg = default_train_config(family, o.seed, o.bundles);
    if (o.iterations > 0) cfg.iterations = o.iterations;
    if (o.collocation > 0) cfg.collocation = o.collocation;
    if (o.lr > 0.0) cfg.lr = o.lr;
    if (!o.hidden.empty()) cfg.hidden = o.hidden;

    std::cerr << "training " << family_name(family) << ": " << cfg.bundles.size() << " bundles, "
              << cfg.iterations << " iterations, seed " << o.seed << "\n";
    const TrainResult tr = train_bundles(cfg);
    fs::create_directories(out);
    save_checkpoint(tr.params, ckpt);

    const std::string log_path = out + "/train_" + family_name(family) + "_seed" + std::to_string(o.seed) + ".csv";
    auto f = open_out(log_path);
    f << "iteration,total,residual,ic,bc,energy,elapsed_s\n";
    f.precision(17);
    for (const auto& row : tr.log)
        f << row.iteration << ',' << row.total << ',' << row.residual << ',' << row.ic << ',' << row.bc
          << ',' << row.energy << ',' << row.elapsed_s << '\n';

    json cfg_json = {{"schema", 1},
                     {"command", "train"},
                     {"family", family_name(family)},
                     {"seed", o.seed},
                     {"iterations", cfg.iterations},
                     {"collocation", cfg.collocation},
                     {"bundles", cfg.bundles.size()},
                     {"hidden", cfg.hidden},
                     {"lr", cfg.lr},
                     {"checkpoint", ckpt},
                     {"final_loss", tr.log.back().total}};
    open_out(ckpt + ".json") << cfg_json.dump(2) << '\n';

    std::cout << "wrote " << ckpt << " (final loss " << tr.log.back().total << "), log " << log_path << "\n";
    return kExitOk;
}

// ---- infer --------------------------------------------------------------------

struct InferOpts {
    std::string family_s = "first_order";
    std::uint64_t seed = 1;
    std::uint64_t ckpt_seed = 0;
    int tests = 100;
    double ridge = -1.0;
    int finetune_epochs = 5000;
    double finetune_lr = 1e-2;
    bool rho_test = false;
    std::string out, ckpt;
};

int run_rho_test(const MlpParams& params, const InferOpts& o, const std::string& out) {
    // rho_test = 1/4 sum_{k=1..4} (-1)^{k+1} 2k sin(k pi x) sin(k pi y):
    // solve the four modes, combine W_out linearly, and cross-check against a
    // direct solve plus the analytic combination.
    const PoissonBasis pb = make_poisson_basis(params, o.ridge);
    std::array<double, 4> wk{};
    for (int k = 1; k <= 4; ++k) wk[static_cast<std::size_t>(k - 1)] = (k % 2 == 1 ? 1.0 : -1.0) * k / 2.0;

    Matrix W_combo;
    json modes = json::array();
    std::vector<Matrix> combined_targets;
    for (int k = 1; k <= 4; ++k) {
        auto targets = poisson_targets(pb, static_cast<double>(k));
        const OneShotSolution sol = apply_factor(pb.factor, targets, pb.batches.interior.grid_hash);
        const double w = wk[static_cast<std::size_t>(k - 1)];
        if (k == 1) {
            W_combo = w * sol.W;
            combined_targets = targets;
            for (auto& t : combined_targets) t *= w;
        } else {
            W_combo += w * sol.W;
            for (std::size_t i = 0; i < targets.size(); ++i) combined_targets[i] += w * targets[i];
        }
        modes.push_back({{"k", k}, {"weight", w}, {"residual_loss", sol.loss[0]}});
    }
    const OneShotSolution direct = apply_factor(pb.factor, combined_targets, pb.batches.interior.grid_hash);
    const double linearity = (direct.W - W_combo).norm() / std::max(1.0, direct.W.norm());

    const Matrix H = detail::with_bias(pb.batches.interior.H(), true, true);
    const Vector pred = H * direct.W;
    Vector truth = Vector::Zero(pb.grid.rows());
    for (int k = 1; k <= 4; ++k)
        truth += wk[static_cast<std::size_t>(k - 1)] * poisson_analytic(static_cast<double>(k), pb.grid);
    const double sol_mse = (pred - truth).squaredNorm() / static_cast<double>(pb.grid.rows());

    json rep = {{"experiment", "poisson_rho_test"},
                {"modes", modes},
                {"superposition_w_relative_error", linearity},
                {"solution_mse_vs_analytic", sol_mse},
                {"solve_ms", direct.wall_s * 1e3}};
    const std::string jpath = out + "/rho_test.json";
    open_out(jpath) << rep.dump(2) << '\n';

    auto f = open_out(out + "/rho_test.csv");
    f << "index,desc,residual_mse,ic_mse,solution_mse,solve_ms,path\n";
    f.precision(17);
    f << 0 << ",rho_test," << direct.loss[0] / static_cast<double>(pb.grid.rows()) << ",0," << sol_mse << ','
      << direct.wall_s * 1e3 << ',' << direct.path << '\n';
    std::cout << rep.dump(2) << '\n';
    return kExitOk;
}

int cmd_infer(const InferOpts& o) {
    const Family family = family_from_name(o.family_s);
    const std::string out = out_root(o.out);
    const MlpParams params = load_family_checkpoint(checkpoint_path(out, o.ckpt, family, o.ckpt_seed), family);
    if (o.rho_test) {
        if (family != Family::Poisson) throw ConfigError("--rho-test applies to the poisson family only");
        return run_rho_test(params, o, out);
    }

    EvalOptions opt;
    opt.ridge = o.ridge;
    opt.finetune_epochs = o.finetune_epochs;
    opt.finetune_lr = o.finetune_lr;
    const auto tests = make_test_bundles(family, o.tests, o.seed);
    const EvalReport rep = evaluate(family, params, tests, opt);

    const std::string base = out + "/infer_" + family_name(family) + "_seed" + std::to_string(o.seed);
    write_eval_csv(base + ".csv", rep);
    json summary = report_summary(family, rep);
    summary["seed"] = o.seed;
    summary["checkpoint_hash"] = params.hash();
    open_out(base + ".json") << summary.dump(2) << '\n';
    std::cout << summary.dump(2) << '\n';
    return kExitOk;
}

// ---- ablate-bundles --------------------------------------------------------------

struct AblateOpts {
    std::string family_s = "first_order";
    std::vector<int> counts{1, 2, 5, 10};
    int seeds = 3;
    int iterations = 3000;
    int tests = 200;
    std::string out;
};

int cmd_ablate(const AblateOpts& o) {
    const Family family = family_from_name(o.family_s);
    if (is_pde(family)) throw ConfigError("ablate-bundles supports the 1-D ODE families");
    if (o.seeds < 1) throw ConfigError("--seeds must be >= 1");
    const std::string out = out_root(o.out);
    const auto tests = make_test_bundles(family, o.tests, 12345);
    EvalOptions opt;

    auto f = open_out(out + "/ablate_" + family_name(family) + ".csv");
    f << "bundle_count,mean_test_mse,std_test_mse,seeds\n";
    f.precision(17);
    for (int count : o.counts) {
        if (count < 1) throw ConfigError("bundle counts must be >= 1");
        std::vector<double> mses;
        for (int s = 0; s < o.seeds; ++s) {
            TrainConfig cfg = default_train_config(family, static_cast<std::uint64_t>(s), count);
            cfg.iterations = o.iterations;
            const TrainResult tr = train_bundles(cfg);
            const EvalReport rep = evaluate(family, tr.params, tests, opt);
            mses.push_back(rep.mean_residual);
            std::cerr << "bundles=" << count << " seed=" << s << " test mse=" << rep.mean_residual << "\n";
        }
        const double n = static_cast<double>(mses.size());
        const double mean = std::accumulate(mses.begin(), mses.end(), 0.0) / n;
        double var = 0.0;
        for (double m : mses) var += (m - mean) * (m - mean);
        f << count << ',' << mean << ',' << std::sqrt(var / n) << ',' << o.seeds << '\n';
        f.flush();
    }
    std::cout << "wrote " << out + "/ablate_" + family_name(family) + ".csv" << '\n';
    return kExitOk;
}

// ---- benchmark --------------------------------------------------------------------

struct BenchOpts {
    std::vector<std::string> only;
    bool train_first = false;
    int iterations = -1;
    std::uint64_t ckpt_seed = 0;
    std::string out;
};

struct BenchRowSpec {
    Family family;
    int tests;
    double desk_tolerance;  // on the family's headline metric
    const char* metric;
};

int cmd_benchmark(const BenchOpts& o) {
    const std::string out = out_root(o.out);
    const std::vector<BenchRowSpec> all{
        {Family::FirstOrder, 1000, 1e-5, "residual_mse"},
        {Family::SecondOrder, 1000, 1e-4, "residual_mse"},
        {Family::CoupledOsc, 100, 1e-6, "residual_mse"},
        {Family::NonlinearOsc, 30, 1e-3, "residual_mse"},
        {Family::Poisson, 100, 1e-3, "solution_mse"},
        {Family::Schrodinger, 3, 1e-3, "solution_mse"},
    };
    std::vector<BenchRowSpec> rows;
    for (const auto& r : all) {
        if (o.only.empty() ||
            std::find(o.only.begin(), o.only.end(), family_name(r.family)) != o.only.end())
            rows.push_back(r);
    }
    if (rows.empty()) throw ConfigError("--only matched no family");

    auto csv = open_out(out + "/benchmark.csv");
    csv << "family,tests,mean_residual_mse,std_residual_mse,mean_solution_mse,std_solution_mse,"
           "total_infer_s,desk_tolerance,metric\n";
    csv.precision(17);
    json jrows = json::array();
    std::cout << "family          tests  mean residual MSE  mean solution MSE  infer s   tolerance\n";
    for (const auto& r : rows) {
        const std::string ckpt = checkpoint_path(out, "", r.family, o.ckpt_seed);
        if (!fs::exists(ckpt)) {
            if (!o.train_first) {
                std::cerr << "warning: skipping " << family_name(r.family) << " (no checkpoint at " << ckpt
                          << "; pass --train-first)\n";
                continue;
            }
            TrainOpts to;
            to.family_s = family_name(r.family);
            to.seed = o.ckpt_seed;
            to.iterations = o.iterations;
            to.out = out;
            const int rc = cmd_train(to);
            if (rc != kExitOk) return rc;
        }
        const MlpParams params = load_family_checkpoint(ckpt, r.family);
        const auto tests = make_test_bundles(r.family, r.tests, 777);
        const EvalReport rep = evaluate(r.family, params, tests, EvalOptions{});
        csv << family_name(r.family) << ',' << rep.rows.size() << ',' << rep.mean_residual << ','
            << rep.std_residual << ',' << rep.mean_solution << ',' << rep.std_solution << ','
            << rep.total_infer_s << ',' << r.desk_tolerance << ',' << r.metric << '\n';
        csv.flush();
        json jr = report_summary(r.family, rep);
        jr["desk_tolerance"] = r.desk_tolerance;
        jr["metric"] = r.metric;
        jrows.push_back(jr);
        char line[160];
        std::snprintf(line, sizeof(line), "%-15s %5zu  %17.3e  %17.3e  %7.3f   %.0e (%s)",
                      family_name(r.family).c_str(), rep.rows.size(), rep.mean_residual, rep.mean_solution,
                      rep.total_infer_s, r.desk_tolerance, r.metric);
        std::cout << line << '\n';
    }
    open_out(out + "/benchmark.json") << jrows.dump(2) << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"one-shot transfer solver for differential equations on a frozen multi-head PINN basis"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from an INI/TOML file (flags take precedence)");
    int threads = 1;
    app.add_option("--threads", threads, "worker thread cap (evaluation is single-process)");

    TrainOpts to;
    auto* train = app.add_subcommand("train", "train a multi-head bundle checkpoint");
    train->add_option("--family", to.family_s, "equation family")->required();
    train->add_option("--seed", to.seed, "training seed");
    train->add_option("--iterations", to.iterations, "Adam iterations (default: family reference value)");
    train->add_option("--bundles", to.bundles, "bundle count (default: family reference value)");
    train->add_option("--collocation", to.collocation, "collocation point count");
    train->add_option("--lr", to.lr, "Adam learning rate");
    train->add_option("--hidden", to.hidden, "hidden layer widths")->delimiter(',');
    train->add_option("--out-dir", to.out, "output root (default: $OSPINN_OUT or .)");
    train->add_option("--checkpoint", to.ckpt, "explicit checkpoint path");
    train->add_flag("--force", to.force, "overwrite an existing checkpoint");

    InferOpts io;
    auto* infer = app.add_subcommand("infer", "one-shot inference on held-out equations");
    infer->add_option("--family", io.family_s, "equation family")->required();
    infer->add_option("--tests", io.tests, "number of held-out test equations");
    infer->add_option("--seed", io.seed, "test sampling seed");
    infer->add_option("--ckpt-seed", io.ckpt_seed, "seed of the checkpoint to load");
    infer->add_option("--ridge", io.ridge, "ridge lambda (<0: automatic)");
    infer->add_option("--finetune-epochs", io.finetune_epochs, "GD epochs for the nonlinear family");
    infer->add_option("--finetune-lr", io.finetune_lr, "GD learning rate for the nonlinear family");
    infer->add_flag("--rho-test", io.rho_test, "Poisson superposition experiment");
    infer->add_option("--out-dir", io.out, "output root (default: $OSPINN_OUT or .)");
    infer->add_option("--checkpoint", io.ckpt, "explicit checkpoint path");

    AblateOpts ao;
    auto* ablate = app.add_subcommand("ablate-bundles", "test MSE as a function of training bundle count");
    ablate->add_option("--family", ao.family_s, "equation family (1-D ODE families)");
    ablate->add_option("--counts", ao.counts, "bundle counts to sweep")->delimiter(',');
    ablate->add_option("--seeds", ao.seeds, "seeds per count");
    ablate->add_option("--iterations", ao.iterations, "training iterations per run");
    ablate->add_option("--tests", ao.tests, "held-out test equations");
    ablate->add_option("--out-dir", ao.out, "output root (default: $OSPINN_OUT or .)");

    BenchOpts bo;
    auto* bench = app.add_subcommand("benchmark", "summary table across all six families");
    bench->add_option("--only", bo.only, "restrict to these families")->delimiter(',');
    bench->add_flag("--train-first", bo.train_first, "train any missing checkpoint");
    bench->add_option("--iterations", bo.iterations, "iteration override when training");
    bench->add_option("--ckpt-seed", bo.ckpt_seed, "checkpoint seed to load");
    bench->add_option("--out-dir", bo.out, "output root (default: $OSPINN_OUT or .)");

    try {
        app.parse(argc, argv);
        if (train->parsed()) return cmd_train(to);
        if (infer->parsed()) return cmd_infer(io);
        if (ablate->parsed()) return cmd_ablate(ao);
        if (bench->parsed()) return cmd_benchmark(bo);
        return kExitConfig;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    } catch (const MissingArtifact& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitMissing;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitMissing;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const TrainDivergence& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
}
