// Acceptance suite: one test case per criterion, each printing a single
// PASS/FAIL line with its pinned tolerance. Trained checkpoints are cached
// under $OSPINN_CACHE so criteria sharing a family train only once.

#include "ospinn/problems.hpp"

#include "doctest.h"

#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>

namespace fs = std::filesystem;
using namespace ospinn;

namespace {

std::string cache_dir() {
    const char* p = std::getenv("OSPINN_CACHE");
    std::string dir = p != nullptr ? p : "acceptance_cache";
    fs::create_directories(dir);
    return dir;
}

MlpParams cached_checkpoint(Family family, int iterations, int bundles, std::uint64_t seed,
                            const std::function<void(TrainConfig&)>& tweak = {}) {
    const std::string path = cache_dir() + "/" + family_name(family) + "_i" + std::to_string(iterations) +
                             "_b" + std::to_string(bundles) + "_s" + std::to_string(seed) + ".ckpt";
    if (fs::exists(path)) return load_checkpoint(path);
    TrainConfig cfg = default_train_config(family, seed, bundles);
    cfg.iterations = iterations;
    if (tweak) tweak(cfg);
    std::printf("  [cache miss] training %s: %d iterations, %d bundles...\n", family_name(family).c_str(),
                iterations, bundles);
    std::fflush(stdout);
    const TrainResult tr = train_bundles(cfg);
    save_checkpoint(tr.params, path);
    std::printf("  [cache] %s final loss %.3e\n", path.c_str(), tr.log.back().total);
    return tr.params;
}

void report(int n, bool pass, const std::string& detail) {
    std::printf("[criterion %d] %s: %s\n", n, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    CHECK_MESSAGE(pass, "criterion " << n << ": " << detail);
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

Matrix grid_1d(double lo, double hi, Index n) {
    const auto ts = linspace(lo, hi, n);
    Matrix g(n, 1);
    for (Index i = 0; i < n; ++i) g(i, 0) = ts[static_cast<std::size_t>(i)];
    return g;
}

double hidden_value(const MlpParams& p, const Vector& x, Index unit) {
    return eval_hidden(p, x.transpose(), DerivativeRequest::value_only()).H()(0, unit);
}

}  // namespace

// ---- 1: jet derivatives and weight gradients vs central finite differences -----

TEST_CASE("criterion_1_autodiff_finite_difference_property") {
    const double jet_tol = 1e-5, grad_tol = 1e-4;
    double worst_jet = 0.0, worst_grad = 0.0;

    struct NetCfg {
        int input_dim;
        ActivationSpec act;
    };
    const NetCfg cfgs[] = {{1, ActivationSpec::tanh_()},
                           {1, ActivationSpec::sin_()},
                           {2, ActivationSpec::sin_()},
                           {2, ActivationSpec::blend(0.5)}};
    Rng rng(2024);
    for (const auto& c : cfgs) {
        ArchSpec a;
        a.input_dim = c.input_dim;
        a.hidden = {12, 12};
        a.heads = 2;
        a.activation = c.act;
        const MlpParams p = init_network(a, rng.next_u64());
        const DerivativeRequest req = c.input_dim == 1 ? DerivativeRequest::time_derivs(2)
                                                       : DerivativeRequest::all();
        Matrix pts(100, c.input_dim);
        for (Index i = 0; i < pts.rows(); ++i)
            for (Index j = 0; j < pts.cols(); ++j) pts(i, j) = rng.uniform(-1.5, 1.5);
        const JetBatch jb = eval_hidden(p, pts, req);
        const double h1 = 1e-5, h2 = 1e-4;
        for (Index i = 0; i < pts.rows(); ++i) {
            const Index u = static_cast<Index>(rng.index(static_cast<std::uint64_t>(jb.width())));
            const Vector x = pts.row(i).transpose();
            auto shifted = [&](int d, double h) {
                Vector y = x;
                y[d] += h;
                return hidden_value(p, y, u);
            };
            for (int d = 0; d < c.input_dim; ++d) {
                const Chan c1 = d == 0 ? kD0 : kD1;
                const Chan c2 = d == 0 ? kD00 : kD11;
                const double fd1 = (shifted(d, h1) - shifted(d, -h1)) / (2.0 * h1);
                const double fd2 =
                    (shifted(d, h2) - 2.0 * hidden_value(p, x, u) + shifted(d, -h2)) / (h2 * h2);
                worst_jet = std::max(worst_jet,
                                     std::abs(fd1 - jb.d(c1)(i, u)) / std::max(1.0, std::abs(fd1)));
                worst_jet = std::max(worst_jet,
                                     std::abs(fd2 - jb.d(c2)(i, u)) / std::max(1.0, std::abs(fd2)));
            }
            if (c.input_dim == 2) {
                auto at = [&](double dx, double dy) {
                    Vector y = x;
                    y[0] += dx;
                    y[1] += dy;
                    return hidden_value(p, y, u);
                };
                const double fdm = (at(h2, h2) - at(h2, -h2) - at(-h2, h2) + at(-h2, -h2)) / (4.0 * h2 * h2);
                worst_jet = std::max(worst_jet,
                                     std::abs(fdm - jb.d(kD01)(i, u)) / std::max(1.0, std::abs(fdm)));
            }
        }
    }

    // weight gradients of the composite losses vs central differences
    struct LossCfg {
        Family family;
        ActivationSpec act;
    };
    const LossCfg lcfgs[] = {{Family::FirstOrder, ActivationSpec::tanh_()},
                             {Family::NonlinearOsc, ActivationSpec::sin_()},
                             {Family::Poisson, ActivationSpec::sin_()}};
    for (const auto& lc : lcfgs) {
        TrainConfig cfg = default_train_config(lc.family, 7, 2);
        cfg.hidden = {8, 8};
        cfg.collocation = lc.family == Family::Poisson ? 36 : 12;
        ArchSpec a;
        a.input_dim = is_pde(lc.family) ? 2 : 1;
        a.hidden = cfg.hidden;
        a.heads = static_cast<int>(cfg.bundles.size()) * heads_per_bundle(lc.family);
        a.activation = lc.act;
        MlpParams p = init_network(a, 5);
        auto loss_of = [&](const MlpParams& q) {
            return is_pde(lc.family) ? pde_loss(q, cfg.bundles, pde_train_grids(cfg)).total
                                     : ode_loss(q, cfg.bundles, ode_train_grid(cfg)).total;
        };
        const LossValue lv = is_pde(lc.family) ? pde_loss(p, cfg.bundles, pde_train_grids(cfg))
                                               : ode_loss(p, cfg.bundles, ode_train_grid(cfg));
        const Vector g = grad_weights(p, lv.graph);
        Vector theta = p.to_vector();
        Vector gfd = Vector::Zero(theta.size());
        const double h = 1e-6;
        MlpParams q = p;
        for (Index k = 0; k < theta.size(); ++k) {
            Vector tp = theta;
            tp[k] += h;
            q.from_vector(tp);
            const double lp = loss_of(q);
            tp[k] -= 2.0 * h;
            q.from_vector(tp);
            gfd[k] = (lp - loss_of(q)) / (2.0 * h);
        }
        worst_grad = std::max(worst_grad, (g - gfd).norm() / std::max(1e-12, gfd.norm()));
    }

    report(1, worst_jet <= jet_tol && worst_grad <= grad_tol,
           fmt("jet FD rel err %.2e (tol %.0e), weight-grad FD rel err %.2e (tol %.0e)", worst_jet, jet_tol,
               worst_grad, grad_tol));
}

// ---- 2: analytic solve is at least as good as 5000-step GD fine-tuning ---------

TEST_CASE("criterion_2_convex_optimum_property") {
    const double tol = 1e-8;
    int count = 0;
    double worst_gap = -1e300;
    for (Family family : {Family::FirstOrder, Family::SecondOrder}) {
        const MlpParams p = cached_checkpoint(family, 5000, 10, 0);
        const int order = family == Family::FirstOrder ? 1 : 2;
        // Dense grid so the design matrix is tall (QR needs rows >= basis columns).
        const JetBatch jb = eval_hidden(p, grid_1d(0.0, 3.0, 301), DerivativeRequest::time_derivs(order));
        const JetBatch icb = eval_hidden(p, Matrix::Zero(1, 1), DerivativeRequest::time_derivs(order));
        const auto tests = sample_bundles(family, 10, 42);
        for (const Bundle& b : tests) {
            const auto& t = std::get<OdeTuple>(b.params);
            const LinearOdeOperatorSpec op = build_ode_operator(t);
            const AssembledSystem sys = assemble_ode(jb, op);
            // Smooth trunk bases are numerically rank-deficient, so take the
            // production path: ridge-regularized normal equations.
            const double analytic_loss = solve_wout_normal(sys, default_ridge(sys.gram())).loss[0];

            ResidualFn fn = [&](const Vector& u, const Vector& ut, const Vector& utt) {
                ResidualEval re;
                re.du = Vector::Zero(u.size());
                re.dut = Vector::Zero(u.size());
                re.dutt = Vector::Zero(u.size());
                re.r = order == 1 ? Vector(ut) : Vector(utt);
                (order == 1 ? re.dut : re.dutt).setOnes();
                for (Index i = 0; i < u.size(); ++i) {
                    const double x = jb.points(i, 0);
                    if (order == 1) {
                        re.r[i] += first_order_a(t.a0_id, x) * u[i] - first_order_f(t.f_id, x);
                        re.du[i] = first_order_a(t.a0_id, x);
                    } else {
                        re.r[i] += second_order_a1(t.a1_id, x) * ut[i] + second_order_a0(t.a0_id, x) * u[i] -
                                   second_order_f(t.f_id, x);
                        re.du[i] = second_order_a0(t.a0_id, x);
                        re.dut[i] = second_order_a1(t.a1_id, x);
                    }
                }
                return re;
            };
            FinetuneOptions opt;
            opt.epochs = 5000;
            opt.lr = 1e-2;
            const std::vector<double> ics =
                order == 1 ? std::vector<double>{t.u0} : std::vector<double>{t.u0, t.du0};
            const FinetuneResult ft = finetune_wout_gd(jb, icb, fn, ics, opt);
            worst_gap = std::max(worst_gap, analytic_loss - ft.final_loss);
            ++count;
        }
    }
    report(2, worst_gap <= tol,
           fmt("analytic loss - GD loss <= %.2e over %d equations (tol 1e-8)", worst_gap, count));
}

// ---- 3: first-order ODEs, 1000 test tuples -------------------------------------

TEST_CASE("criterion_3_first_order_transfer") {
    const MlpParams p = cached_checkpoint(Family::FirstOrder, 5000, 10, 0);
    const auto tests = sample_bundles(Family::FirstOrder, 1000, 777);
    const EvalReport rep = evaluate(Family::FirstOrder, p, tests, EvalOptions{});
    const bool ok = rep.mean_residual <= 1e-5 && rep.total_infer_s <= 0.1;
    report(3, ok,
           fmt("1000 tuples: mean residual MSE %.3e (tol 1e-5), batched solve %.4f s (tol 0.1 s)",
               rep.mean_residual, rep.total_infer_s));
}

// ---- 4: second-order ODEs -------------------------------------------------------

TEST_CASE("criterion_4_second_order_transfer") {
    const MlpParams p = cached_checkpoint(Family::SecondOrder, 10000, 10, 0);
    const auto tests = sample_bundles(Family::SecondOrder, 1000, 778);
    const EvalReport rep = evaluate(Family::SecondOrder, p, tests, EvalOptions{});
    report(4, rep.mean_residual <= 1e-4,
           fmt("1000 tuples: mean residual MSE %.3e (tol 1e-4)", rep.mean_residual));
}

// ---- 5: coupled oscillators + beats envelope ------------------------------------

TEST_CASE("criterion_5_coupled_oscillators") {
    const MlpParams p = cached_checkpoint(Family::CoupledOsc, 30000, 10, 0);
    const auto tests = sample_bundles(Family::CoupledOsc, 100, 779);
    const EvalReport rep = evaluate(Family::CoupledOsc, p, tests, EvalOptions{});

    // weak-coupling demo (artifact values): m=1, k1=4, k2=2 -> delta omega =
    // sqrt(k1+2 k2) - sqrt(k1); energy trades between the masses at that rate.
    CoupledParams demo{1.0, 4.0, 2.0, 1.0, 0.0, 0.0, 0.0};
    const CoupledForm form = build_coupled_form(demo);
    const Matrix grid = eval_grid_1d(Family::CoupledOsc);
    const JetBatch jb = eval_hidden(p, grid, DerivativeRequest::time_derivs(2));
    const AssembledSystem sys = assemble_coupled_ode(jb, form.A, form.psi0, form.dpsi0);
    const OneShotSolution sol = solve_wout_normal(sys, default_ridge(sys.gram()));
    const Matrix H = detail::with_bias(jb.H(), true, true);
    const Vector psi1 = H * sol.W.topRows(H.cols());
    const double w1 = std::sqrt(demo.k1 / demo.mass);
    const double w2 = std::sqrt((demo.k1 + 2.0 * demo.k2) / demo.mass);
    const double dw = w2 - w1;
    const double dt = grid(1, 0) - grid(0, 0);
    const Vector env = psi1.array().square();
    const double period = dominant_period(env, dt, 0.5 * dw, 1.5 * dw);
    const double period_err = std::abs(period - 2.0 * M_PI / dw) / (2.0 * M_PI / dw);

    const bool ok = rep.mean_residual <= 1e-6 && rep.mean_solution <= 1e-5 && period_err <= 0.10;
    report(5, ok,
           fmt("100 systems: residual MSE %.3e (tol 1e-6), solution MSE %.3e (tol 1e-5), "
               "beats period err %.1f%% (tol 10%%)",
               rep.mean_residual, rep.mean_solution, 100.0 * period_err));
}

// ---- 6: nonlinear oscillator via GD fine-tuning ----------------------------------

TEST_CASE("criterion_6_nonlinear_oscillator") {
    const MlpParams p = cached_checkpoint(Family::NonlinearOsc, 80000, 10, 0);
    const Matrix grid = eval_grid_1d(Family::NonlinearOsc);
    const JetBatch jb = eval_hidden(p, grid, DerivativeRequest::time_derivs(2));
    const JetBatch icb = eval_hidden(p, Matrix::Zero(1, 1), DerivativeRequest::time_derivs(1));
    const Matrix H = detail::with_bias(jb.H(), true, true);
    const Matrix Ht = detail::with_bias(jb.d(kD0), true, false);
    const Matrix Htt = detail::with_bias(jb.d(kD00), true, false);

    const ResidualFn fn = [](const Vector& u, const Vector&, const Vector& utt) {
        ResidualEval re;
        re.r = utt + u + u.array().cube().matrix();
        re.du = (1.0 + 3.0 * u.array().square()).matrix();
        re.dut = Vector::Zero(u.size());
        re.dutt = Vector::Ones(u.size());
        return re;
    };

    Rng rng(555);
    double mean_residual = 0.0, worst_drift = 0.0;
    const int n_ic = 30;
    for (int i = 0; i < n_ic; ++i) {
        const double u0 = rng.uniform(0.5, 2.0);
        FinetuneOptions opt;
        opt.epochs = 5000;
        opt.lr = 2e-2;
        opt.lr_min = 1e-5;
        opt.energy_weight = 1.0;
        opt.energy_u0 = u0;
        const FinetuneResult ft = finetune_wout_gd(jb, icb, fn, {u0, 0.0}, opt);
        const Vector u = H * ft.W;
        const Vector v = Ht * ft.W;
        const Vector r = Htt * ft.W + u + u.array().cube().matrix();
        mean_residual += r.squaredNorm() / static_cast<double>(grid.rows());
        const double e0 = nonlinear_hamiltonian(u0, 0.0);
        for (Index j = 0; j < grid.rows(); ++j)
            worst_drift = std::max(worst_drift, std::abs(nonlinear_hamiltonian(u[j], v[j]) - e0));
    }
    mean_residual /= static_cast<double>(n_ic);
    const bool ok = mean_residual <= 1e-3 && worst_drift <= 1e-2;
    report(6, ok,
           fmt("30 ICs: mean residual MSE %.3e (tol 1e-3), max energy drift %.3e (tol 1e-2)", mean_residual,
               worst_drift));
}

// ---- 7: Poisson k-sweep, rho_test superposition ----------------------------------

TEST_CASE("criterion_7_poisson") {
    const MlpParams p = cached_checkpoint(Family::Poisson, 40000, 4, 0);
    const auto tests = [&] {
        std::vector<Bundle> out;
        const auto ks = linspace(1.0, 4.0, 100);
        for (double k : ks) {
            Bundle b;
            b.family = Family::Poisson;
            b.params = PoissonParams{k};
            out.push_back(b);
        }
        return out;
    }();
    const EvalReport rep = evaluate(Family::Poisson, p, tests, EvalOptions{});

    const PoissonBasis pb = make_poisson_basis(p);
    // The linearity identity is a property of the solver map, checked on a
    // factor whose regularized Gram is numerically well-posed (larger ridge);
    // solution accuracy is measured at the production (default) ridge.
    AssembledSystem lin_sys = assemble_pde(pb.batches, build_poisson_operator(1.0));
    const double lin_ridge = 1e-6 * lin_sys.gram().trace() / static_cast<double>(lin_sys.cols);
    const OperatorFactor lin_factor = factorize_operator(lin_sys, lin_ridge);
    Matrix W_combo, W_combo_lin;
    std::vector<Matrix> combined;
    Vector truth = Vector::Zero(pb.grid.rows());
    for (int k = 1; k <= 4; ++k) {
        const double w = (k % 2 == 1 ? 1.0 : -1.0) * k / 2.0;
        auto targets = poisson_targets(pb, static_cast<double>(k));
        const OneShotSolution sk = apply_factor(pb.factor, targets, pb.batches.interior.grid_hash);
        const OneShotSolution sl = apply_factor(lin_factor, targets, pb.batches.interior.grid_hash);
        if (k == 1) {
            W_combo = w * sk.W;
            W_combo_lin = w * sl.W;
            combined = targets;
            for (auto& t : combined) t *= w;
        } else {
            W_combo += w * sk.W;
            W_combo_lin += w * sl.W;
            for (std::size_t i = 0; i < targets.size(); ++i) combined[i] += w * targets[i];
        }
        truth += w * poisson_analytic(static_cast<double>(k), pb.grid);
    }
    const OneShotSolution direct = apply_factor(pb.factor, combined, pb.batches.interior.grid_hash);
    const OneShotSolution direct_lin = apply_factor(lin_factor, combined, pb.batches.interior.grid_hash);
    const double linearity =
        (direct_lin.W - W_combo_lin).norm() / std::max(1.0, direct_lin.W.norm());
    const Matrix H = detail::with_bias(pb.batches.interior.H(), true, true);
    const double rho_mse = (H * direct.W - truth).squaredNorm() / static_cast<double>(pb.grid.rows());

    const bool ok = rep.mean_solution <= 1e-3 && rho_mse <= 1e-3 && linearity <= 1e-10;
    report(7, ok,
           fmt("k-sweep solution MSE %.3e (tol 1e-3), rho_test MSE %.3e (tol 1e-3), "
               "superposition identity %.2e (tol 1e-10)",
               rep.mean_solution, rho_mse, linearity));
}

// ---- 8: Schrodinger pairs + frequency trend --------------------------------------

TEST_CASE("criterion_8_schrodinger") {
    const MlpParams p = cached_checkpoint(Family::Schrodinger, 20000, 3, 0);
    const SchrodingerBasis sb = make_schrodinger_basis(p);

    double worst_train = 0.0;
    for (const auto& pr : kSchrodingerTrainPairs)
        worst_train = std::max(worst_train, schrodinger_eval_pair(sb, pr.sigma, pr.p0).solution_mse);
    const double near_mse = schrodinger_eval_pair(sb, 0.7, 1.0).solution_mse;

    // frequency trend over a (sigma, p0) grid: high p0 transfers worse
    double low = 0.0, high = 0.0;
    int nlow = 0, nhigh = 0;
    for (double sigma : {0.4, 0.5, 0.6, 0.7, 0.8}) {
        for (double p0 : {0.5, 1.0, 3.5, 4.0}) {
            const double e = schrodinger_eval_pair(sb, sigma, p0).solution_mse;
            if (p0 <= 1.0) {
                low += e;
                ++nlow;
            } else {
                high += e;
                ++nhigh;
            }
        }
    }
    low /= nlow;
    high /= nhigh;

    const bool ok = worst_train <= 1e-3 && near_mse <= 5e-3 && high > low;
    report(8, ok,
           fmt("train pairs max |psi|^2 MSE %.3e (tol 1e-3), (0.7,1) MSE %.3e (tol 5e-3), "
               "p0 trend high %.3e > low %.3e",
               worst_train, near_mse, high, low));
}

// ---- 9: solver path agreement ----------------------------------------------------

TEST_CASE("criterion_9_solver_path_agreement") {
    double worst_qr = 0.0, worst_factor = 0.0;
    int qr_checked = 0;

    auto check_sys = [&](const AssembledSystem& sys) {
        const double cond = condition_report(sys).condition;
        const double lam = default_ridge(sys.gram());
        const OneShotSolution direct = solve_wout_normal(sys, lam);
        const OperatorFactor factor = factorize_operator(sys, lam);
        std::vector<Matrix> targets;
        for (const auto& b : sys.blocks) targets.push_back(b.Y);
        const OneShotSolution reused = apply_factor(factor, targets, sys.grid_hash);
        worst_factor =
            std::max(worst_factor, (reused.W - direct.W).norm() / std::max(1e-30, direct.W.norm()));
        if (cond <= 1e8) {
            const OneShotSolution plain = solve_wout_normal(sys);
            const OneShotSolution qr = solve_wout_qr(sys);
            worst_qr = std::max(worst_qr, (plain.W - qr.W).norm() / std::max(1e-30, qr.W.norm()));
            ++qr_checked;
        }
    };

    // scalar ODE families
    for (Family family : {Family::FirstOrder, Family::SecondOrder}) {
        const MlpParams p = cached_checkpoint(family, family == Family::FirstOrder ? 5000 : 10000, 10, 0);
        const int order = family == Family::FirstOrder ? 1 : 2;
        const JetBatch jb = eval_hidden(p, grid_1d(0.0, 3.0, 201), DerivativeRequest::time_derivs(order));
        for (const Bundle& b : sample_bundles(family, 3, 60))
            check_sys(assemble_ode(jb, build_ode_operator(std::get<OdeTuple>(b.params))));
    }
    // coupled
    {
        const MlpParams p = cached_checkpoint(Family::CoupledOsc, 30000, 10, 0);
        const JetBatch jb =
            eval_hidden(p, grid_1d(0.0, 10.0, 201), DerivativeRequest::time_derivs(2));
        for (const Bundle& b : sample_bundles(Family::CoupledOsc, 2, 61)) {
            const CoupledForm f = build_coupled_form(std::get<CoupledParams>(b.params));
            check_sys(assemble_coupled_ode(jb, f.A, f.psi0, f.dpsi0));
        }
    }
    // Poisson and Schrodinger on reduced grids
    {
        const MlpParams p = cached_checkpoint(Family::Poisson, 40000, 4, 0);
        const PoissonBasis pb = make_poisson_basis(p, -1.0, true, 31);
        AssembledSystem sys = assemble_pde(pb.batches, build_poisson_operator(2.0));
        check_sys(sys);
    }
    {
        const MlpParams p = cached_checkpoint(Family::Schrodinger, 20000, 3, 0);
        const SchrodingerBasis sb = make_schrodinger_basis(p, -1.0, true, 21, 41);
        check_sys(assemble_schrodinger(sb.interior, sb.ic, sb.left, sb.right, WavePacketIc{0.5, 1.0, 0.0}));
    }

    const bool ok = worst_factor <= 1e-10 && worst_qr <= 1e-8;
    report(9, ok,
           fmt("factor-reuse vs direct rel %.2e (tol 1e-10, all families); QR vs normal rel %.2e "
               "(tol 1e-8, %d systems with cond <= 1e8)",
               worst_factor, worst_qr, qr_checked));
}

// ---- 10: bundle ablation trend -----------------------------------------------------

TEST_CASE("criterion_10_bundle_ablation") {
    const auto tests = sample_bundles(Family::FirstOrder, 200, 4242);
    auto median_mse = [&](int bundles) {
        std::vector<double> mses;
        for (std::uint64_t seed : {0, 1, 2}) {
            TrainConfig cfg = default_train_config(Family::FirstOrder, seed, bundles);
            cfg.iterations = 3000;
            const TrainResult tr = train_bundles(cfg);
            mses.push_back(evaluate(Family::FirstOrder, tr.params, tests, EvalOptions{}).mean_residual);
        }
        std::sort(mses.begin(), mses.end());
        return mses[1];
    };
    const double m1 = median_mse(1);
    const double m10 = median_mse(10);
    report(10, m10 <= m1,
           fmt("median test MSE over 3 seeds: 10 bundles %.3e <= 1 bundle %.3e", m10, m1));
}

// ---- 11: amortized factor reuse scales linearly in the RHS count -------------------

TEST_CASE("criterion_11_complexity_scaling") {
    const MlpParams p = cached_checkpoint(Family::FirstOrder, 5000, 10, 0);
    const JetBatch jb = eval_hidden(p, eval_grid_1d(Family::FirstOrder), DerivativeRequest::time_derivs(1));
    const OdeTuple proto{1, 0, 0, 0, 1.0, 0.0};
    const AssembledSystem sys = assemble_ode(jb, build_ode_operator(proto));
    const OperatorFactor factor = factorize_operator(sys, default_ridge(sys.gram()));
    const Index rows = jb.rows();

    Rng rng(31337);
    const std::vector<Index> ms{100, 1000, 10000};
    std::vector<double> times;
    for (Index m : ms) {
        Matrix F(rows, m), IC(1, m);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < m; ++j) F(i, j) = rng.uniform(-1.0, 1.0);
        for (Index j = 0; j < m; ++j) IC(0, j) = rng.uniform(-5.0, 5.0);
        double best = 1e300;
        for (int rep = 0; rep < 5; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            const OneShotSolution sol = apply_factor(factor, {F, IC}, jb.grid_hash);
            best = std::min(best,
                            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
            if (sol.W.cols() != m) break;  // keep the solve observable
        }
        times.push_back(best);
    }

    // least-squares line t = c0 + c1 m and its R^2
    const double n = static_cast<double>(ms.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < ms.size(); ++i) {
        sx += static_cast<double>(ms[i]);
        sy += times[i];
        sxx += static_cast<double>(ms[i]) * static_cast<double>(ms[i]);
        sxy += static_cast<double>(ms[i]) * times[i];
    }
    const double c1 = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double c0 = (sy - c1 * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double ybar = sy / n;
    for (std::size_t i = 0; i < ms.size(); ++i) {
        const double fit = c0 + c1 * static_cast<double>(ms[i]);
        ss_res += (times[i] - fit) * (times[i] - fit);
        ss_tot += (times[i] - ybar) * (times[i] - ybar);
    }
    const double r2 = 1.0 - ss_res / ss_tot;
    report(11, r2 >= 0.95 && c1 > 0.0,
           fmt("t(m) for m={100,1000,10000}: {%.2e, %.2e, %.2e} s, linear fit R^2 %.4f (tol 0.95)",
               times[0], times[1], times[2], r2));
}
