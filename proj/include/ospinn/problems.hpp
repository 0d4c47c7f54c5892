#pragma once

#include "ospinn/oneshot.hpp"
#include "ospinn/training.hpp"

#include <complex>
#include <map>
#include <numeric>

namespace ospinn {

// Appendix-style per-family configuration: evaluation domain/deltas and the
// reference training setup.
struct FamilyInfo {
    Family id;
    int input_dim;
    std::array<double, 2> lo, hi;
    std::array<double, 2> deltas;
    int train_collocation;
    int train_iterations;
    int train_bundle_count;
    ActivationSpec activation;
};

inline FamilyInfo family_info(Family f) {
    switch (f) {
        case Family::FirstOrder:
            return {f, 1, {0, 0}, {3, 0}, {0.1, 0}, 30, 10000, 10, ActivationSpec::tanh_()};
        case Family::SecondOrder:
            return {f, 1, {0, 0}, {3, 0}, {0.05, 0}, 30, 10000, 10, ActivationSpec::tanh_()};
        case Family::CoupledOsc:
            return {f, 1, {0, 0}, {10, 0}, {0.01, 0}, 50, 10000, 10, ActivationSpec::sin_()};
        case Family::NonlinearOsc:
            return {f, 1, {0, 0}, {3, 0}, {0.05, 0}, 60, 10000, 5, ActivationSpec::sin_()};
        case Family::Poisson:
            return {f, 2, {0, 0}, {1, 1}, {0.01, 0.01}, 1000, 40000, 4, ActivationSpec::sin_()};
        case Family::Schrodinger:
            return {f, 2, {0, -10}, {1, 10}, {0.01, 0.1}, 1000, 40000, 3, ActivationSpec::blend(0.5)};
    }
    throw ConfigError("unknown family");
}

inline TrainConfig default_train_config(Family f, std::uint64_t seed, int bundle_count = -1) {
    const FamilyInfo info = family_info(f);
    TrainConfig cfg;
    cfg.family = f;
    cfg.activation = info.activation;
    cfg.iterations = info.train_iterations;
    cfg.collocation = info.train_collocation;
    cfg.domain_lo = info.lo;
    cfg.domain_hi = info.hi;
    cfg.seed = seed;
    cfg.bundles = sample_bundles(f, bundle_count < 0 ? info.train_bundle_count : bundle_count, seed);
    return cfg;
}

// Evaluation grid at the family's deltas (1-D families; includes t=0).
inline Matrix eval_grid_1d(Family f) {
    const FamilyInfo info = family_info(f);
    const Index n = static_cast<Index>(std::llround((info.hi[0] - info.lo[0]) / info.deltas[0])) + 1;
    const auto ts = linspace(info.lo[0], info.hi[0], n);
    Matrix g(n, 1);
    for (Index i = 0; i < n; ++i) g(i, 0) = ts[static_cast<std::size_t>(i)];
    return g;
}

// ---- operator builders ---------------------------------------------------------

struct CoupledForm {
    Eigen::Matrix2d A;
    Eigen::Vector2d psi0, dpsi0;
};

inline LinearOdeOperatorSpec build_ode_operator(const OdeTuple& t) {
    LinearOdeOperatorSpec op;
    op.order = t.order;
    if (t.order == 1) {
        op.a0 = [id = t.a0_id](double x) { return first_order_a(id, x); };
        op.force = [id = t.f_id](double x) { return first_order_f(id, x); };
        op.ic = {t.u0};
    } else {
        op.a0 = [id = t.a0_id](double x) { return second_order_a0(id, x); };
        op.a1 = [id = t.a1_id](double x) { return second_order_a1(id, x); };
        op.force = [id = t.f_id](double x) { return second_order_f(id, x); };
        op.ic = {t.u0, t.du0};
    }
    return op;
}

inline CoupledForm build_coupled_form(const CoupledParams& c) {
    if (c.mass <= 0.0) throw ConfigError("coupled oscillator mass must be positive");
    CoupledForm form;
    const double d = -(c.k1 + c.k2) / c.mass, o = c.k2 / c.mass;
    form.A << d, o, o, d;
    form.psi0 << c.u10, c.u20;
    form.dpsi0 << c.v10, c.v20;
    return form;
}

inline LinearPdeOperatorSpec build_poisson_operator(double k) {
    if (k <= 0.0) throw ConfigError("poisson k must be positive");
    LinearPdeOperatorSpec op;
    op.a2 = [](double, double) { return 1.0; };
    op.b2 = [](double, double) { return 1.0; };
    op.force = [k](double x, double y) { return std::sin(k * M_PI * x) * std::sin(k * M_PI * y); };
    op.elliptic = true;
    return op;
}

// ---- oracles --------------------------------------------------------------------

using OdeRhs = std::function<void(double t, const Vector& y, Vector& dy)>;

// Classic RK4 at dt_fine, sampled onto the (sorted, t0-first) output grid.
inline Matrix rk4_integrate(const OdeRhs& rhs, const Vector& y0, const Matrix& grid, double dt_fine = 1e-4) {
    const Index m = grid.rows();
    Matrix out(m, y0.size());
    Vector y = y0, k1(y0.size()), k2(y0.size()), k3(y0.size()), k4(y0.size()), tmp(y0.size());
    double t = grid(0, 0);
    out.row(0) = y.transpose();
    for (Index i = 1; i < m; ++i) {
        const double t_target = grid(i, 0);
        const double span = t_target - t;
        const Index nstep = std::max<Index>(1, static_cast<Index>(std::ceil(span / dt_fine)));
        const double dt = span / static_cast<double>(nstep);
        for (Index s = 0; s < nstep; ++s) {
            rhs(t, y, k1);
            tmp = y + 0.5 * dt * k1;
            rhs(t + 0.5 * dt, tmp, k2);
            tmp = y + 0.5 * dt * k2;
            rhs(t + 0.5 * dt, tmp, k3);
            tmp = y + dt * k3;
            rhs(t + dt, tmp, k4);
            y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += dt;
            if (y.cwiseAbs().maxCoeff() > 1e8) throw NumericalError("rk4 oracle diverged (|y| > 1e8)");
        }
        t = t_target;
        out.row(i) = y.transpose();
    }
    return out;
}

// Trajectory columns: (u) for order 1, (u, u') for order 2.
inline Matrix rk4_oracle(const OdeTuple& tup, const Matrix& grid, double dt_fine = 1e-4) {
    if (tup.order == 1) {
        OdeRhs rhs = [&tup](double t, const Vector& y, Vector& dy) {
            dy[0] = first_order_f(tup.f_id, t) - first_order_a(tup.a0_id, t) * y[0];
        };
        Vector y0(1);
        y0 << tup.u0;
        return rk4_integrate(rhs, y0, grid, dt_fine);
    }
    OdeRhs rhs = [&tup](double t, const Vector& y, Vector& dy) {
        dy[0] = y[1];
        dy[1] = second_order_f(tup.f_id, t) - second_order_a1(tup.a1_id, t) * y[1] -
                second_order_a0(tup.a0_id, t) * y[0];
    };
    Vector y0(2);
    y0 << tup.u0, tup.du0;
    return rk4_integrate(rhs, y0, grid, dt_fine);
}

// Columns: (u1, u2, v1, v2).
inline Matrix rk4_oracle(const CoupledParams& cp, const Matrix& grid, double dt_fine = 1e-4) {
    const CoupledForm form = build_coupled_form(cp);
    OdeRhs rhs = [A = form.A](double, const Vector& y, Vector& dy) {
        dy[0] = y[2];
        dy[1] = y[3];
        dy[2] = A(0, 0) * y[0] + A(0, 1) * y[1];
        dy[3] = A(1, 0) * y[0] + A(1, 1) * y[1];
    };
    Vector y0(4);
    y0 << cp.u10, cp.u20, cp.v10, cp.v20;
    return rk4_integrate(rhs, y0, grid, dt_fine);
}

// Columns: (u, v) for u'' = -u - u^3.
inline Matrix rk4_oracle(const NonlinParams& np, const Matrix& grid, double dt_fine = 1e-4) {
    OdeRhs rhs = [](double, const Vector& y, Vector& dy) {
        dy[0] = y[1];
        dy[1] = -y[0] - y[0] * y[0] * y[0];
    };
    Vector y0(2);
    y0 << np.u0, 0.0;
    return rk4_integrate(rhs, y0, grid, dt_fine);
}

// psi(x,y) = -sin(k pi x) sin(k pi y) / (2 (k pi)^2)
inline double poisson_analytic(double k, double x, double y) {
    const double kp = k * M_PI;
    return -std::sin(kp * x) * std::sin(kp * y) / (2.0 * kp * kp);
}

inline Vector poisson_analytic(double k, const Matrix& pts) {
    Vector v(pts.rows());
    for (Index i = 0; i < pts.rows(); ++i) v[i] = poisson_analytic(k, pts(i, 0), pts(i, 1));
    return v;
}

// Free-particle Gaussian packet, hbar = m = 1, E = p0^2/2.
inline std::complex<double> schrodinger_analytic(double sigma, double p0, double x0, double x, double t) {
    using namespace std::complex_literals;
    const std::complex<double> spread = 1.0 + 1i * t / (sigma * sigma);
    const double xc = x0 + p0 * t;
    const double E = 0.5 * p0 * p0;
    const std::complex<double> num =
        std::exp(-(x - xc) * (x - xc) / (2.0 * sigma * sigma * spread)) *
        std::exp(1i * (p0 * x - E * t));
    return num / (std::pow(M_PI, 0.25) * std::sqrt(sigma * spread));
}

// ---- evaluation harness ----------------------------------------------------------

struct EvalRow {
    std::string desc;
    double residual_mse = 0.0;
    double ic_mse = 0.0;
    double solution_mse = std::numeric_limits<double>::quiet_NaN();
    double solve_ms = 0.0;
    std::string path;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_residual = 0.0, std_residual = 0.0;
    double mean_solution = 0.0, std_solution = 0.0;
    double total_infer_s = 0.0;  // solve time only; basis evaluation excluded
    bool timing_excludes_basis = true;

    void finalize() {
        auto stats = [&](auto getter, double& mean, double& sd) {
            std::vector<double> vals;
            for (const auto& r : rows) {
                const double v = getter(r);
                if (std::isfinite(v)) vals.push_back(v);
            }
            if (vals.empty()) {
                mean = sd = 0.0;
                return;
            }
            mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
            double acc = 0.0;
            for (double v : vals) acc += (v - mean) * (v - mean);
            sd = std::sqrt(acc / static_cast<double>(vals.size()));
        };
        stats([](const EvalRow& r) { return r.residual_mse; }, mean_residual, std_residual);
        stats([](const EvalRow& r) { return r.solution_mse; }, mean_solution, std_solution);
        total_infer_s = 0.0;
        for (const auto& r : rows) total_infer_s += r.solve_ms / 1e3;
    }
};

struct EvalOptions {
    double ridge = -1.0;      // <0: default_ridge(gram) on the factor path
    bool bias = true;
    int finetune_epochs = 5000;
    double finetune_lr = 1e-2;
    double finetune_energy_weight = 1.0;
    bool use_oracle = true;   // compute solution MSE against RK4/analytic
};

namespace detail {

inline double mse(const Vector& a, const Vector& b) {
    return (a - b).squaredNorm() / static_cast<double>(a.size());
}

// Scalar-ODE families share a handful of distinct operators; batch all RHS per
// operator behind one factorization.
inline EvalReport evaluate_scalar_odes(Family family, const MlpParams& params,
                                       const std::vector<Bundle>& tests, const EvalOptions& opt) {
    const Matrix grid = eval_grid_1d(family);
    const int order = family == Family::FirstOrder ? 1 : 2;
    const JetBatch jb = eval_hidden(params, grid, DerivativeRequest::time_derivs(order));
    const Index m = grid.rows();

    std::map<std::pair<int, int>, std::vector<std::size_t>> groups;  // (a0,a1) -> test indices
    for (std::size_t i = 0; i < tests.size(); ++i) {
        const auto& t = std::get<OdeTuple>(tests[i].params);
        groups[{t.a0_id, t.a1_id}].push_back(i);
    }

    EvalReport rep;
    rep.rows.resize(tests.size());
    for (const auto& [key, idxs] : groups) {
        OdeTuple proto = std::get<OdeTuple>(tests[idxs.front()].params);
        const LinearOdeOperatorSpec op = build_ode_operator(proto);
        const AssembledSystem sys = assemble_ode(jb, op, opt.bias);
        const double lam = opt.ridge >= 0.0 ? opt.ridge : default_ridge(sys.gram());
        const OperatorFactor factor = factorize_operator(sys, lam);

        Matrix F(m, static_cast<Index>(idxs.size()));
        Matrix IC(order, static_cast<Index>(idxs.size()));
        for (std::size_t j = 0; j < idxs.size(); ++j) {
            const auto& t = std::get<OdeTuple>(tests[idxs[j]].params);
            for (Index i = 0; i < m; ++i)
                F(i, static_cast<Index>(j)) = t.order == 1 ? first_order_f(t.f_id, grid(i, 0))
                                                           : second_order_f(t.f_id, grid(i, 0));
            IC(0, static_cast<Index>(j)) = t.u0;
            if (order == 2) IC(1, static_cast<Index>(j)) = t.du0;
        }
        const OneShotSolution sol = apply_factor(factor, {F, IC}, jb.grid_hash);
        const Matrix resid = factor.design[0] * sol.W - F;
        const Matrix ic_resid = factor.design[1] * sol.W - IC;
        for (std::size_t j = 0; j < idxs.size(); ++j) {
            EvalRow& row = rep.rows[idxs[j]];
            const auto& t = std::get<OdeTuple>(tests[idxs[j]].params);
            row.desc = "a0=" + std::to_string(t.a0_id) + (order == 2 ? ",a1=" + std::to_string(t.a1_id) : "") +
                       ",f=" + std::to_string(t.f_id) + ",u0=" + std::to_string(t.u0);
            row.residual_mse = resid.col(static_cast<Index>(j)).squaredNorm() / static_cast<double>(m);
            row.ic_mse = ic_resid.col(static_cast<Index>(j)).squaredNorm() / static_cast<double>(order);
            row.solve_ms = sol.wall_s * 1e3 / static_cast<double>(idxs.size());
            row.path = sol.path;
            if (opt.use_oracle) {
                const Matrix H = with_bias(jb.H(), opt.bias, true);
                const Vector pred = H * sol.W.col(static_cast<Index>(j));
                const Matrix truth = rk4_oracle(t, grid);
                row.solution_mse = mse(pred, truth.col(0));
            }
        }
    }
    rep.finalize();
    return rep;
}

inline EvalReport evaluate_coupled(const MlpParams& params, const std::vector<Bundle>& tests,
                                   const EvalOptions& opt) {
    const Matrix grid = eval_grid_1d(Family::CoupledOsc);
    const JetBatch jb = eval_hidden(params, grid, DerivativeRequest::time_derivs(2));
    const Index m = grid.rows();
    EvalReport rep;
    for (const Bundle& b : tests) {
        const auto& cp = std::get<CoupledParams>(b.params);
        const CoupledForm form = build_coupled_form(cp);
        const AssembledSystem sys = assemble_coupled_ode(jb, form.A, form.psi0, form.dpsi0, opt.bias);
        const double lam = opt.ridge >= 0.0 ? opt.ridge : default_ridge(sys.gram());
        const OneShotSolution sol = solve_wout_normal(sys, lam);
        EvalRow row;
        row.desc = "m=" + std::to_string(cp.mass) + ",k1=" + std::to_string(cp.k1) +
                   ",k2=" + std::to_string(cp.k2);
        row.residual_mse = (sys.blocks[0].A * sol.W - sys.blocks[0].Y).squaredNorm() /
                           static_cast<double>(2 * m);
        row.ic_mse = ((sys.blocks[1].A * sol.W - sys.blocks[1].Y).squaredNorm() +
                      (sys.blocks[2].A * sol.W - sys.blocks[2].Y).squaredNorm()) /
                     4.0;
        row.solve_ms = sol.wall_s * 1e3;
        row.path = sol.path;
        if (opt.use_oracle) {
            const Matrix H = with_bias(jb.H(), opt.bias, true);
            const Index hb = H.cols();
            const Vector u1 = H * sol.W.topRows(hb);
            const Vector u2 = H * sol.W.bottomRows(hb);
            const Matrix truth = rk4_oracle(cp, grid);
            row.solution_mse = 0.5 * (mse(u1, truth.col(0)) + mse(u2, truth.col(1)));
        }
        rep.rows.push_back(std::move(row));
    }
    rep.finalize();
    return rep;
}

inline EvalReport evaluate_nonlinear(const MlpParams& params, const std::vector<Bundle>& tests,
                                     const EvalOptions& opt) {
    const Matrix grid = eval_grid_1d(Family::NonlinearOsc);
    const JetBatch jb = eval_hidden(params, grid, DerivativeRequest::time_derivs(2));
    const JetBatch icb = eval_hidden(params, Matrix::Zero(1, 1), DerivativeRequest::time_derivs(1));
    const Index m = grid.rows();
    const ResidualFn fn = [](const Vector& u, const Vector&, const Vector& utt) {
        ResidualEval re;
        re.r = utt + u + u.array().cube().matrix();
        re.du = (1.0 + 3.0 * u.array().square()).matrix();
        re.dut = Vector::Zero(u.size());
        re.dutt = Vector::Ones(u.size());
        return re;
    };
    EvalReport rep;
    for (const Bundle& b : tests) {
        const auto& np = std::get<NonlinParams>(b.params);
        FinetuneOptions fo;
        fo.epochs = opt.finetune_epochs;
        fo.lr = opt.finetune_lr;
        fo.energy_weight = opt.finetune_energy_weight;
        fo.energy_u0 = np.u0;
        const auto t0 = std::chrono::steady_clock::now();
        const FinetuneResult ft = finetune_wout_gd(jb, icb, fn, {np.u0, 0.0}, fo, opt.bias);
        const double solve_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const Matrix H = with_bias(jb.H(), opt.bias, true);
        const Matrix Htt = with_bias(jb.d(kD00), opt.bias, false);
        const Vector u = H * ft.W;
        const Vector utt = Htt * ft.W;
        EvalRow row;
        row.desc = "u0=" + std::to_string(np.u0);
        row.residual_mse = (utt + u + u.array().cube().matrix()).squaredNorm() / static_cast<double>(m);
        row.solve_ms = solve_s * 1e3;
        row.path = "gd";
        if (opt.use_oracle) {
            const Matrix truth = rk4_oracle(np, grid);
            row.solution_mse = mse(u, truth.col(0));
        }
        rep.rows.push_back(std::move(row));
    }
    rep.finalize();
    return rep;
}

}  // namespace detail

// Basis batches for the Poisson evaluation grid (interior + 4 edges).
struct PoissonBasis {
    PdeBatches batches;
    OperatorFactor factor;
    Matrix grid;  // interior points
};

inline PoissonBasis make_poisson_basis(const MlpParams& params, double ridge = -1.0, bool bias = true,
                                       Index n = 101) {
    const FamilyInfo info = family_info(Family::Poisson);
    const auto xs = linspace(info.lo[0], info.hi[0], n), ys = linspace(info.lo[1], info.hi[1], n);
    Matrix interior(n * n, 2);
    Index r = 0;
    for (double x : xs)
        for (double y : ys) interior.row(r++) << x, y;
    DerivativeRequest req;
    req.add(kD00).add(kD11);
    PoissonBasis pb;
    pb.grid = interior;
    pb.batches.interior = eval_hidden(params, interior, req);
    auto edge = [&](bool xfixed, double v) {
        Matrix e(n, 2);
        for (Index i = 0; i < n; ++i) {
            const double s = xfixed ? ys[static_cast<std::size_t>(i)] : xs[static_cast<std::size_t>(i)];
            if (xfixed)
                e.row(i) << v, s;
            else
                e.row(i) << s, v;
        }
        return eval_hidden(params, e, DerivativeRequest::value_only());
    };
    pb.batches.left = edge(true, info.lo[0]);
    pb.batches.right = edge(true, info.hi[0]);
    pb.batches.bottom = edge(false, info.lo[1]);
    pb.batches.top = edge(false, info.hi[1]);
    const AssembledSystem sys = assemble_pde(pb.batches, build_poisson_operator(1.0), bias);
    pb.factor = factorize_operator(sys, ridge >= 0.0 ? ridge : default_ridge(sys.gram()),
                                   /*equalize_blocks=*/true);
    return pb;
}

inline std::vector<Matrix> poisson_targets(const PoissonBasis& pb, double k) {
    const Index m = pb.grid.rows();
    Matrix f(m, 1);
    for (Index i = 0; i < m; ++i)
        f(i, 0) = std::sin(k * M_PI * pb.grid(i, 0)) * std::sin(k * M_PI * pb.grid(i, 1));
    const Index nb = pb.batches.left->rows();
    return {f, Matrix::Zero(nb, 1), Matrix::Zero(nb, 1), Matrix::Zero(nb, 1), Matrix::Zero(nb, 1)};
}

inline EvalReport evaluate_poisson(const MlpParams& params, const std::vector<Bundle>& tests,
                                   const EvalOptions& opt) {
    const PoissonBasis pb = make_poisson_basis(params, opt.ridge, opt.bias);
    const Matrix H = detail::with_bias(pb.batches.interior.H(), opt.bias, true);
    EvalReport rep;
    for (const Bundle& b : tests) {
        const double k = std::get<PoissonParams>(b.params).k;
        const auto targets = poisson_targets(pb, k);
        const OneShotSolution sol = apply_factor(pb.factor, targets, pb.batches.interior.grid_hash);
        EvalRow row;
        row.desc = "k=" + std::to_string(k);
        row.residual_mse = (pb.factor.design[0] * sol.W - targets[0]).squaredNorm() /
                           static_cast<double>(pb.grid.rows());
        row.solve_ms = sol.wall_s * 1e3;
        row.path = sol.path;
        if (opt.use_oracle) row.solution_mse = detail::mse(H * sol.W, poisson_analytic(k, pb.grid));
        rep.rows.push_back(std::move(row));
    }
    rep.finalize();
    return rep;
}

struct SchrodingerBasis {
    JetBatch interior, ic, left, right;
    OperatorFactor factor;
    bool bias = true;
};

inline SchrodingerBasis make_schrodinger_basis(const MlpParams& params, double ridge = -1.0, bool bias = true,
                                               Index nt = 101, Index nx = 201) {
    const FamilyInfo info = family_info(Family::Schrodinger);
    const auto ts = linspace(info.lo[0], info.hi[0], nt);
    const auto xs = linspace(info.lo[1], info.hi[1], nx);
    Matrix interior(nt * nx, 2);
    Index r = 0;
    for (double t : ts)
        for (double x : xs) interior.row(r++) << t, x;
    DerivativeRequest req;
    req.add(kD0).add(kD11);
    DerivativeRequest edge_req;
    edge_req.add(kD1);
    SchrodingerBasis sb;
    sb.bias = bias;
    sb.interior = eval_hidden(params, interior, req);
    Matrix icg(nx, 2);
    for (Index i = 0; i < nx; ++i) icg.row(i) << 0.0, xs[static_cast<std::size_t>(i)];
    sb.ic = eval_hidden(params, icg, DerivativeRequest::value_only());
    Matrix lg(nt, 2), rg(nt, 2);
    for (Index i = 0; i < nt; ++i) {
        lg.row(i) << ts[static_cast<std::size_t>(i)], info.lo[1];
        rg.row(i) << ts[static_cast<std::size_t>(i)], info.hi[1];
    }
    sb.left = eval_hidden(params, lg, edge_req);
    sb.right = eval_hidden(params, rg, edge_req);
    const AssembledSystem sys = assemble_schrodinger(sb.interior, sb.ic, sb.left, sb.right, WavePacketIc{}, bias);
    sb.factor = factorize_operator(sys, ridge >= 0.0 ? ridge : default_ridge(sys.gram()),
                                   /*equalize_blocks=*/true);
    return sb;
}

inline std::vector<Matrix> schrodinger_targets(const SchrodingerBasis& sb, const WavePacketIc& wp) {
    const Index m = sb.interior.rows(), mi = sb.ic.rows(), mb = sb.left.rows();
    Matrix ic_y(2 * mi, 1);
    for (Index i = 0; i < mi; ++i) {
        const double x = sb.ic.points(i, 1);
        const double env = std::pow(M_PI, -0.25) / std::sqrt(wp.sigma) *
                           std::exp(-(x - wp.x0) * (x - wp.x0) / (2.0 * wp.sigma * wp.sigma));
        ic_y(i, 0) = env * std::cos(wp.p0 * x);
        ic_y(mi + i, 0) = env * std::sin(wp.p0 * x);
    }
    return {Matrix::Zero(2 * m, 1), ic_y, Matrix::Zero(4 * mb, 1)};
}

// MSE of |psi|^2 against the analytic free-particle evolution.
inline EvalRow schrodinger_eval_pair(const SchrodingerBasis& sb, double sigma, double p0) {
    const WavePacketIc wp{sigma, p0, 0.0};
    const auto targets = schrodinger_targets(sb, wp);
    const OneShotSolution sol = apply_factor(sb.factor, targets, sb.interior.grid_hash);
    const Matrix H = detail::with_bias(sb.interior.H(), sb.bias, true);
    const Index hb = H.cols();
    const Vector re = H * sol.W.topRows(hb);
    const Vector im = H * sol.W.bottomRows(hb);
    double acc = 0.0;
    for (Index i = 0; i < sb.interior.rows(); ++i) {
        const double t = sb.interior.points(i, 0), x = sb.interior.points(i, 1);
        const std::complex<double> truth = schrodinger_analytic(sigma, p0, 0.0, x, t);
        const double pred_density = re[i] * re[i] + im[i] * im[i];
        const double d = pred_density - std::norm(truth);
        acc += d * d;
    }
    EvalRow row;
    row.desc = "sigma=" + std::to_string(sigma) + ",p0=" + std::to_string(p0);
    row.residual_mse =
        (sb.factor.design[0] * sol.W).squaredNorm() / static_cast<double>(2 * sb.interior.rows());
    row.solution_mse = acc / static_cast<double>(sb.interior.rows());
    row.solve_ms = sol.wall_s * 1e3;
    row.path = sol.path;
    return row;
}

inline EvalReport evaluate_schrodinger(const MlpParams& params, const std::vector<Bundle>& tests,
                                       const EvalOptions& opt) {
    const SchrodingerBasis sb = make_schrodinger_basis(params, opt.ridge, opt.bias);
    EvalReport rep;
    for (const Bundle& b : tests) {
        const auto& sp = std::get<SchrodParams>(b.params);
        rep.rows.push_back(schrodinger_eval_pair(sb, sp.sigma, sp.p0));
    }
    rep.finalize();
    return rep;
}

inline EvalReport evaluate(Family family, const MlpParams& params, const std::vector<Bundle>& tests,
                           const EvalOptions& opt = {}) {
    if (params.input_dim != family_info(family).input_dim)
        throw UsageError("checkpoint input dimension does not match family");
    if (tests.empty()) return {};
    switch (family) {
        case Family::FirstOrder:
        case Family::SecondOrder: return detail::evaluate_scalar_odes(family, params, tests, opt);
        case Family::CoupledOsc: return detail::evaluate_coupled(params, tests, opt);
        case Family::NonlinearOsc: return detail::evaluate_nonlinear(params, tests, opt);
        case Family::Poisson: return evaluate_poisson(params, tests, opt);
        case Family::Schrodinger: return evaluate_schrodinger(params, tests, opt);
    }
    throw ConfigError("unknown family");
}

// Peak of |DFT| of the signal in a band around the expected angular frequency,
// refined by parabolic interpolation. Returns the period 2*pi/omega.
inline double dominant_period(const Vector& signal, double dt, double omega_lo, double omega_hi) {
    const Index n = signal.size();
    const Vector s = signal.array() - signal.mean();
    const Index nscan = 2000;
    double best_omega = omega_lo, best_mag = -1.0;
    for (Index k = 0; k < nscan; ++k) {
        const double omega = omega_lo + (omega_hi - omega_lo) * static_cast<double>(k) /
                                            static_cast<double>(nscan - 1);
        std::complex<double> acc = 0.0;
        for (Index i = 0; i < n; ++i)
            acc += s[i] * std::exp(std::complex<double>(0.0, -omega * dt * static_cast<double>(i)));
        const double mag = std::abs(acc);
        if (mag > best_mag) {
            best_mag = mag;
            best_omega = omega;
        }
    }
    return 2.0 * M_PI / best_omega;
}

}  // namespace ospinn
