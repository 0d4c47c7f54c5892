#pragma once

#include "ospinn/autodiff.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <variant>

namespace ospinn {

enum class Family { FirstOrder, SecondOrder, CoupledOsc, NonlinearOsc, Poisson, Schrodinger };

inline std::string family_name(Family f) {
    switch (f) {
        case Family::FirstOrder: return "first_order";
        case Family::SecondOrder: return "second_order";
        case Family::CoupledOsc: return "coupled_osc";
        case Family::NonlinearOsc: return "nonlinear_osc";
        case Family::Poisson: return "poisson";
        case Family::Schrodinger: return "schrodinger";
    }
    return "?";
}

inline Family family_from_name(const std::string& s) {
    for (Family f : {Family::FirstOrder, Family::SecondOrder, Family::CoupledOsc, Family::NonlinearOsc,
                     Family::Poisson, Family::Schrodinger})
        if (family_name(f) == s) return f;
    throw ConfigError("unknown family: " + s);
}

// u' + a(t) u = f(t)  /  u'' + a1(t) u' + a0(t) u = f(t)
struct OdeTuple {
    int order = 1;
    int a0_id = 0;
    int a1_id = 0;  // second order only
    int f_id = 0;
    double u0 = 0.0;
    double du0 = 0.0;  // second order only
};

struct CoupledParams {
    double mass = 1.0, k1 = 1.0, k2 = 1.0;
    double u10 = 0.0, u20 = 0.0, v10 = 0.0, v20 = 0.0;
};

struct NonlinParams {
    double u0 = 1.0;  // initial velocity fixed at 0
};

struct PoissonParams {
    double k = 1.0;  // rho = sin(k pi x) sin(k pi y)
};

struct SchrodParams {
    double sigma = 0.5, p0 = 1.0;
};

struct Bundle {
    Family family = Family::FirstOrder;
    int head = 0;  // first head column owned by this bundle
    std::variant<OdeTuple, CoupledParams, NonlinParams, PoissonParams, SchrodParams> params;
};

// heads owned by one bundle of this family
inline int heads_per_bundle(Family f) {
    return (f == Family::CoupledOsc || f == Family::Schrodinger) ? 2 : 1;
}

// ---- Appendix-style coefficient/force tables --------------------------------

inline double first_order_a(int id, double t) {
    switch (id) {
        case 0: return t;
        case 1: return t * t;
        case 2: return 1.0;
    }
    throw ConfigError("bad first-order a id");
}
inline double first_order_f(int id, double t) {
    switch (id) {
        case 0: return std::cos(t);
        case 1: return std::sin(t);
        case 2: return t;
    }
    throw ConfigError("bad first-order f id");
}
inline double second_order_a0(int id, double t) {
    switch (id) {
        case 0: return 1.0;
        case 1: return 3.0 * t;
        case 2: return t * t;
    }
    throw ConfigError("bad second-order a0 id");
}
inline double second_order_a1(int id, double t) {
    switch (id) {
        case 0: return 1.0;
        case 1: return t * t;
        case 2: return t * t * t;
    }
    throw ConfigError("bad second-order a1 id");
}
inline double second_order_f(int id, double t) {
    switch (id) {
        case 0: return 1.0;
        case 1: return t;
        case 2: return std::cos(t);
        case 3: return std::sin(t);
    }
    throw ConfigError("bad second-order f id");
}

inline const std::array<SchrodParams, 3> kSchrodingerTrainPairs{
    SchrodParams{0.5, 1.0}, SchrodParams{0.6, 2.0}, SchrodParams{0.6, 3.0}};

inline std::vector<Bundle> sample_bundles(Family family, int count, std::uint64_t seed) {
    if (count < 0) throw ConfigError("bundle count must be >= 0");
    Rng rng(seed);
    std::vector<Bundle> out;
    out.reserve(static_cast<std::size_t>(count));
    const int hpb = heads_per_bundle(family);
    for (int i = 0; i < count; ++i) {
        Bundle b;
        b.family = family;
        b.head = i * hpb;
        switch (family) {
            case Family::FirstOrder: {
                OdeTuple t;
                t.order = 1;
                t.a0_id = static_cast<int>(rng.index(3));
                t.f_id = static_cast<int>(rng.index(3));
                t.u0 = rng.uniform(-5.0, 5.0);
                b.params = t;
                break;
            }
            case Family::SecondOrder: {
                OdeTuple t;
                t.order = 2;
                t.a0_id = static_cast<int>(rng.index(3));
                t.a1_id = static_cast<int>(rng.index(3));
                t.f_id = static_cast<int>(rng.index(4));
                t.u0 = rng.uniform(-5.0, 5.0);
                t.du0 = rng.uniform(-5.0, 5.0);
                b.params = t;
                break;
            }
            case Family::CoupledOsc: {
                CoupledParams c;
                c.mass = rng.uniform(1.0, 2.0);
                c.k1 = rng.uniform(0.5, 4.5);
                c.k2 = rng.uniform(0.5, 4.5);
                c.u10 = rng.uniform(-1.5, 1.5);
                c.u20 = rng.uniform(-1.5, 1.5);
                c.v10 = rng.uniform(-1.5, 1.5);
                c.v20 = rng.uniform(-1.5, 1.5);
                b.params = c;
                break;
            }
            case Family::NonlinearOsc:
                b.params = NonlinParams{rng.uniform(0.5, 2.0)};
                break;
            case Family::Poisson:
                b.params = PoissonParams{static_cast<double>(i % 4 + 1)};
                break;
            case Family::Schrodinger:
                b.params = kSchrodingerTrainPairs[static_cast<std::size_t>(i % 3)];
                break;
        }
        out.push_back(std::move(b));
    }
    return out;
}

// ---- loss evaluation ---------------------------------------------------------

struct LossValue {
    double total = 0.0;
    double residual = 0.0;
    double ic = 0.0;
    double bc = 0.0;
    double energy = 0.0;
    LossGraph graph;
};

namespace detail {

inline Matrix& seed_chan(Channels& s, Chan c, Index m, Index q) {
    const int ci = static_cast<int>(c);
    if (!s.on[ci]) {
        s.m[ci] = Matrix::Zero(m, q);
        s.on[ci] = true;
    }
    return s.m[ci];
}

// mean((pred - target)^2) and its adjoint accumulated onto one head column
inline double mean_sq_term(const Vector& pred, const Vector& target, double weight, Matrix& seed_col_mat,
                           Index col) {
    const Index m = pred.size();
    const Vector r = pred - target;
    seed_col_mat.col(col) += (2.0 * weight / static_cast<double>(m)) * r;
    return weight * r.squaredNorm() / static_cast<double>(m);
}

}  // namespace detail

// Hamiltonian of the nonlinear oscillator (equation of motion u'' = -u - u^3).
inline double nonlinear_hamiltonian(double u, double v) {
    return 0.5 * v * v + 0.5 * u * u + 0.25 * u * u * u * u;
}

// Mean squared drift of the Hamiltonian from its initial value, as a training
// penalty. Seeds are accumulated onto the interior trace.
inline double energy_term(const ForwardTrace& tr, Channels& seeds, int head, double u0, double du0,
                          double weight) {
    const Matrix& psi = tr.psi.at(kVal);
    const Matrix& psit = tr.psi.at(kD0);
    const Index m = psi.rows();
    const double e0 = nonlinear_hamiltonian(u0, du0);
    Matrix& sv = detail::seed_chan(seeds, kVal, m, psi.cols());
    Matrix& st = detail::seed_chan(seeds, kD0, m, psi.cols());
    double term = 0.0;
    for (Index i = 0; i < m; ++i) {
        const double u = psi(i, head), v = psit(i, head);
        const double drift = nonlinear_hamiltonian(u, v) - e0;
        term += drift * drift;
        const double s = 2.0 * weight * drift / static_cast<double>(m);
        sv(i, head) += s * (u + u * u * u);
        st(i, head) += s * v;
    }
    return weight * term / static_cast<double>(m);
}

// Standalone energy penalty (nonlinear oscillator only).
inline LossValue energy_loss(const MlpParams& params, const Bundle& bundle, const Matrix& grid) {
    const auto* np = std::get_if<NonlinParams>(&bundle.params);
    if (np == nullptr) throw UsageError("energy_loss applies to the nonlinear oscillator family only");
    LossValue lv;
    SeededTrace part;
    part.trace = forward_trace(params, grid, DerivativeRequest::time_derivs(1));
    lv.energy = energy_term(part.trace, part.seeds, bundle.head, np->u0, 0.0, 1.0);
    lv.total = lv.energy;
    lv.graph.loss = lv.total;
    lv.graph.parts.push_back(std::move(part));
    return lv;
}

struct LossWeights {
    double residual = 1.0, ic = 1.0, bc = 1.0, energy = 1.0;
};

// Composite physics loss for the ODE families (first/second order, coupled,
// nonlinear). The grid is the collocation set; the IC point t=0 always gets a
// dedicated one-row trace.
inline LossValue ode_loss(const MlpParams& params, const std::vector<Bundle>& bundles, const Matrix& grid,
                          const LossWeights& w = {}) {
    if (bundles.empty()) throw UsageError("no bundles");
    const Family family = bundles.front().family;
    if (family == Family::Poisson || family == Family::Schrodinger)
        throw UsageError("ode_loss called with a PDE family");
    const int order = family == Family::FirstOrder ? 1 : 2;

    const DerivativeRequest req = DerivativeRequest::time_derivs(order);
    SeededTrace interior;
    interior.trace = forward_trace(params, grid, req);
    SeededTrace ic;
    ic.trace = forward_trace(params, Matrix::Zero(1, 1), req);

    const Index m = grid.rows();
    const Index q = params.heads;
    LossValue lv;

    for (const Bundle& b : bundles) {
        if (b.family != family) throw UsageError("mixed families in one loss");
        switch (family) {
            case Family::FirstOrder:
            case Family::SecondOrder: {
                const auto& t = std::get<OdeTuple>(b.params);
                Vector a0(m), a1(m), f(m);
                for (Index i = 0; i < m; ++i) {
                    const double ti = grid(i, 0);
                    if (t.order == 1) {
                        a0[i] = first_order_a(t.a0_id, ti);
                        f[i] = first_order_f(t.f_id, ti);
                    } else {
                        a0[i] = second_order_a0(t.a0_id, ti);
                        a1[i] = second_order_a1(t.a1_id, ti);
                        f[i] = second_order_f(t.f_id, ti);
                    }
                }
                const Index col = b.head;
                const Matrix& psi = interior.trace.psi.at(kVal);
                const Matrix& psit = interior.trace.psi.at(kD0);
                Vector r;
                if (t.order == 1)
                    r = psit.col(col) + a0.cwiseProduct(psi.col(col)) - f;
                else
                    r = interior.trace.psi.at(kD00).col(col) + a1.cwiseProduct(psit.col(col)) +
                        a0.cwiseProduct(psi.col(col)) - f;
                lv.residual += w.residual * r.squaredNorm() / static_cast<double>(m);
                const Vector gr = (2.0 * w.residual / static_cast<double>(m)) * r;
                detail::seed_chan(interior.seeds, kVal, m, q).col(col) += a0.cwiseProduct(gr);
                if (t.order == 1) {
                    detail::seed_chan(interior.seeds, kD0, m, q).col(col) += gr;
                } else {
                    detail::seed_chan(interior.seeds, kD0, m, q).col(col) += a1.cwiseProduct(gr);
                    detail::seed_chan(interior.seeds, kD00, m, q).col(col) += gr;
                }
                lv.ic += detail::mean_sq_term(ic.trace.psi.at(kVal).col(col), Vector::Constant(1, t.u0), w.ic,
                                              detail::seed_chan(ic.seeds, kVal, 1, q), col);
                if (t.order == 2)
                    lv.ic += detail::mean_sq_term(ic.trace.psi.at(kD0).col(col), Vector::Constant(1, t.du0),
                                                  w.ic, detail::seed_chan(ic.seeds, kD0, 1, q), col);
                break;
            }
            case Family::CoupledOsc: {
                const auto& c = std::get<CoupledParams>(b.params);
                // psi'' = A psi with A = (1/m)[[-(k1+k2), k2],[k2, -(k1+k2)]]
                const double a_diag = -(c.k1 + c.k2) / c.mass;
                const double a_off = c.k2 / c.mass;
                const Matrix& psi = interior.trace.psi.at(kVal);
                const Matrix& psitt = interior.trace.psi.at(kD00);
                const Index c1 = b.head, c2 = b.head + 1;
                const Vector r1 = psitt.col(c1) - a_diag * psi.col(c1) - a_off * psi.col(c2);
                const Vector r2 = psitt.col(c2) - a_off * psi.col(c1) - a_diag * psi.col(c2);
                lv.residual += w.residual * (r1.squaredNorm() + r2.squaredNorm()) / static_cast<double>(m);
                const double s = 2.0 * w.residual / static_cast<double>(m);
                Matrix& gv = detail::seed_chan(interior.seeds, kVal, m, q);
                Matrix& gtt = detail::seed_chan(interior.seeds, kD00, m, q);
                gtt.col(c1) += s * r1;
                gtt.col(c2) += s * r2;
                gv.col(c1) += s * (-a_diag * r1 - a_off * r2);
                gv.col(c2) += s * (-a_off * r1 - a_diag * r2);
                const double ic0[2] = {c.u10, c.u20}, icv[2] = {c.v10, c.v20};
                for (int j = 0; j < 2; ++j) {
                    lv.ic += detail::mean_sq_term(ic.trace.psi.at(kVal).col(b.head + j),
                                                  Vector::Constant(1, ic0[j]), w.ic,
                                                  detail::seed_chan(ic.seeds, kVal, 1, q), b.head + j);
                    lv.ic += detail::mean_sq_term(ic.trace.psi.at(kD0).col(b.head + j),
                                                  Vector::Constant(1, icv[j]), w.ic,
                                                  detail::seed_chan(ic.seeds, kD0, 1, q), b.head + j);
                }
                break;
            }
            case Family::NonlinearOsc: {
                const auto& np = std::get<NonlinParams>(b.params);
                const Index col = b.head;
                const Matrix& psi = interior.trace.psi.at(kVal);
                const Vector u = psi.col(col);
                const Vector r =
                    interior.trace.psi.at(kD00).col(col) + u + u.array().cube().matrix();
                lv.residual += w.residual * r.squaredNorm() / static_cast<double>(m);
                const Vector gr = (2.0 * w.residual / static_cast<double>(m)) * r;
                detail::seed_chan(interior.seeds, kD00, m, q).col(col) += gr;
                detail::seed_chan(interior.seeds, kVal, m, q).col(col) +=
                    gr.cwiseProduct((1.0 + 3.0 * u.array().square()).matrix());
                lv.ic += detail::mean_sq_term(ic.trace.psi.at(kVal).col(col), Vector::Constant(1, np.u0),
                                              w.ic, detail::seed_chan(ic.seeds, kVal, 1, q), col);
                lv.ic += detail::mean_sq_term(ic.trace.psi.at(kD0).col(col), Vector::Zero(1), w.ic,
                                              detail::seed_chan(ic.seeds, kD0, 1, q), col);
                lv.energy += energy_term(interior.trace, interior.seeds, static_cast<int>(col), np.u0, 0.0,
                                         w.energy);
                break;
            }
            default:
                break;
        }
    }
    lv.total = lv.residual + lv.ic + lv.bc + lv.energy;
    lv.graph.loss = lv.total;
    lv.graph.parts.push_back(std::move(interior));
    lv.graph.parts.push_back(std::move(ic));
    return lv;
}

// Collocation grids for a PDE family: interior points plus the constraint
// point sets (IC line for Schrodinger, four Dirichlet edges for Poisson).
struct PdeGrids {
    Matrix interior;             // m x 2
    Matrix ic;                   // Schrodinger: (t=0, x) rows
    Matrix left, right;          // x = xL / x = xR edges
    Matrix bottom, top;          // Poisson: y edges
};

inline LossValue pde_loss(const MlpParams& params, const std::vector<Bundle>& bundles, const PdeGrids& grids,
                          const LossWeights& w = {}) {
    if (bundles.empty()) throw UsageError("no bundles");
    const Family family = bundles.front().family;
    const Index q = params.heads;
    LossValue lv;

    if (family == Family::Poisson) {
        DerivativeRequest req;
        req.add(kD00).add(kD11);
        SeededTrace interior;
        interior.trace = forward_trace(params, grids.interior, req);
        const Index m = grids.interior.rows();
        std::vector<SeededTrace> edges;
        for (const Matrix* g : {&grids.left, &grids.right, &grids.bottom, &grids.top}) {
            if (g->rows() == 0) throw ConfigError("poisson loss requires all four boundary grids");
            SeededTrace e;
            e.trace = forward_trace(params, *g, DerivativeRequest::value_only());
            edges.push_back(std::move(e));
        }
        for (const Bundle& b : bundles) {
            const auto& pp = std::get<PoissonParams>(b.params);
            Vector rho(m);
            for (Index i = 0; i < m; ++i)
                rho[i] = std::sin(pp.k * M_PI * grids.interior(i, 0)) *
                         std::sin(pp.k * M_PI * grids.interior(i, 1));
            const Index col = b.head;
            const Vector r = interior.trace.psi.at(kD00).col(col) + interior.trace.psi.at(kD11).col(col) - rho;
            lv.residual += w.residual * r.squaredNorm() / static_cast<double>(m);
            const Vector gr = (2.0 * w.residual / static_cast<double>(m)) * r;
            detail::seed_chan(interior.seeds, kD00, m, q).col(col) += gr;
            detail::seed_chan(interior.seeds, kD11, m, q).col(col) += gr;
            for (auto& e : edges) {
                const Index me = e.trace.psi.at(kVal).rows();
                lv.bc += detail::mean_sq_term(e.trace.psi.at(kVal).col(col), Vector::Zero(me), w.bc,
                                              detail::seed_chan(e.seeds, kVal, me, q), col);
            }
        }
        lv.total = lv.residual + lv.ic + lv.bc;
        lv.graph.loss = lv.total;
        lv.graph.parts.push_back(std::move(interior));
        for (auto& e : edges) lv.graph.parts.push_back(std::move(e));
        return lv;
    }

    if (family == Family::Schrodinger) {
        if (grids.ic.rows() == 0 || grids.left.rows() == 0 || grids.right.rows() == 0)
            throw ConfigError("schrodinger loss requires IC and left/right edge grids");
        DerivativeRequest req;
        req.add(kD0).add(kD11);
        SeededTrace interior;
        interior.trace = forward_trace(params, grids.interior, req);
        SeededTrace icp;
        icp.trace = forward_trace(params, grids.ic, DerivativeRequest::value_only());
        DerivativeRequest edge_req;
        edge_req.add(kD1);
        SeededTrace lef, rig;
        lef.trace = forward_trace(params, grids.left, edge_req);
        rig.trace = forward_trace(params, grids.right, edge_req);

        const Index m = grids.interior.rows();
        const double half = 0.5;  // hbar / (2 m) with hbar = m = 1
        for (const Bundle& b : bundles) {
            const auto& sp = std::get<SchrodParams>(b.params);
            const Index cr = b.head, cim = b.head + 1;
            // psiR_t = -half * psiI_xx ; psiI_t = half * psiR_xx
            const Matrix& pt = interior.trace.psi.at(kD0);
            const Matrix& pxx = interior.trace.psi.at(kD11);
            const Vector r1 = pt.col(cr) + half * pxx.col(cim);
            const Vector r2 = pt.col(cim) - half * pxx.col(cr);
            lv.residual += w.residual * (r1.squaredNorm() + r2.squaredNorm()) / static_cast<double>(m);
            const double s = 2.0 * w.residual / static_cast<double>(m);
            Matrix& gt = detail::seed_chan(interior.seeds, kD0, m, q);
            Matrix& gxx = detail::seed_chan(interior.seeds, kD11, m, q);
            gt.col(cr) += s * r1;
            gt.col(cim) += s * r2;
            gxx.col(cim) += s * half * r1;
            gxx.col(cr) -= s * half * r2;

            // IC: Gaussian wave packet, Eq. of psi(x,0)
            const Index mi = grids.ic.rows();
            Vector ic_re(mi), ic_im(mi);
            for (Index i = 0; i < mi; ++i) {
                const double x = grids.ic(i, 1);
                const double env = std::pow(M_PI, -0.25) / std::sqrt(sp.sigma) *
                                   std::exp(-x * x / (2.0 * sp.sigma * sp.sigma));
                ic_re[i] = env * std::cos(sp.p0 * x);
                ic_im[i] = env * std::sin(sp.p0 * x);
            }
            lv.ic += detail::mean_sq_term(icp.trace.psi.at(kVal).col(cr), ic_re, w.ic,
                                          detail::seed_chan(icp.seeds, kVal, mi, q), cr);
            lv.ic += detail::mean_sq_term(icp.trace.psi.at(kVal).col(cim), ic_im, w.ic,
                                          detail::seed_chan(icp.seeds, kVal, mi, q), cim);

            // periodic-difference boundary terms: H_d and H_x difference -> 0
            const Index mb = grids.left.rows();
            for (Chan c : {kVal, kD1}) {
                for (Index col : {cr, cim}) {
                    const Vector diff = lef.trace.psi.at(c).col(col) - rig.trace.psi.at(c).col(col);
                    lv.bc += w.bc * diff.squaredNorm() / static_cast<double>(mb);
                    const Vector g = (2.0 * w.bc / static_cast<double>(mb)) * diff;
                    detail::seed_chan(lef.seeds, c, mb, q).col(col) += g;
                    detail::seed_chan(rig.seeds, c, mb, q).col(col) -= g;
                }
            }
        }
        lv.total = lv.residual + lv.ic + lv.bc;
        lv.graph.loss = lv.total;
        lv.graph.parts.push_back(std::move(interior));
        lv.graph.parts.push_back(std::move(icp));
        lv.graph.parts.push_back(std::move(lef));
        lv.graph.parts.push_back(std::move(rig));
        return lv;
    }

    throw UsageError("pde_loss called with an ODE family");
}

// ---- Adam + trainer ----------------------------------------------------------

struct AdamState {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Vector m, v;
    long step = 0;

    void init(Index n) {
        m = Vector::Zero(n);
        v = Vector::Zero(n);
        step = 0;
    }
    void update(Vector& theta, const Vector& grad) {
        ++step;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(beta1, step);
        const double bc2 = 1.0 - std::pow(beta2, step);
        theta.array() -=
            lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    }
};

struct TrainConfig {
    Family family = Family::FirstOrder;
    std::vector<int> hidden{100, 100};
    ActivationSpec activation = ActivationSpec::tanh_();
    double lr = 1e-3;
    int iterations = 10000;
    int collocation = 30;
    std::array<double, 2> domain_lo{0.0, 0.0};
    std::array<double, 2> domain_hi{3.0, 0.0};
    std::uint64_t seed = 0;
    std::vector<Bundle> bundles;
    LossWeights weights;
    int log_every = 100;
    bool resample_per_iter = false;  // default: fixed uniform grid
    double lr_min = -1.0;            // if >= 0, cosine-decay the step size from lr to lr_min
};

struct TrainLogRow {
    int iteration;
    double total, residual, ic, bc, energy, elapsed_s;
};

struct TrainResult {
    MlpParams params;
    std::vector<TrainLogRow> log;
};

struct TrainDivergence : std::runtime_error {
    int iteration;
    double lr;
    TrainDivergence(int it, double rate)
        : std::runtime_error("training loss became non-finite at iteration " + std::to_string(it) +
                             " (lr=" + std::to_string(rate) + ")"),
          iteration(it),
          lr(rate) {}
};

// Uniform collocation grid for an ODE family (always includes t=0).
inline Matrix ode_train_grid(const TrainConfig& cfg) {
    const auto ts = linspace(cfg.domain_lo[0], cfg.domain_hi[0], cfg.collocation);
    Matrix g(static_cast<Index>(ts.size()), 1);
    for (std::size_t i = 0; i < ts.size(); ++i) g(static_cast<Index>(i), 0) = ts[i];
    return g;
}

// Near-square uniform product grid with ~cfg.collocation interior points,
// plus the family's constraint grids.
inline PdeGrids pde_train_grids(const TrainConfig& cfg) {
    PdeGrids g;
    const double lo0 = cfg.domain_lo[0], hi0 = cfg.domain_hi[0];
    const double lo1 = cfg.domain_lo[1], hi1 = cfg.domain_hi[1];
    if (cfg.family == Family::Poisson) {
        const Index n = std::max<Index>(2, static_cast<Index>(std::llround(std::sqrt(cfg.collocation))));
        const auto xs = linspace(lo0, hi0, n), ys = linspace(lo1, hi1, n);
        g.interior.resize(n * n, 2);
        Index r = 0;
        for (double x : xs)
            for (double y : ys) g.interior.row(r++) << x, y;
        const Index nb = n;
        const auto es = linspace(lo1, hi1, nb);
        g.left.resize(nb, 2);
        g.right.resize(nb, 2);
        g.bottom.resize(nb, 2);
        g.top.resize(nb, 2);
        for (Index i = 0; i < nb; ++i) {
            g.left.row(i) << lo0, es[static_cast<std::size_t>(i)];
            g.right.row(i) << hi0, es[static_cast<std::size_t>(i)];
            g.bottom.row(i) << es[static_cast<std::size_t>(i)], lo1;
            g.top.row(i) << es[static_cast<std::size_t>(i)], hi1;
        }
    } else {  // Schrodinger: dim0 = t, dim1 = x
        const double aspect = (hi1 - lo1) / (hi0 - lo0);
        Index nt = std::max<Index>(2, static_cast<Index>(std::llround(std::sqrt(cfg.collocation / aspect))));
        Index nx = std::max<Index>(2, static_cast<Index>(std::llround(static_cast<double>(cfg.collocation) /
                                                                      static_cast<double>(nt))));
        const auto ts = linspace(lo0, hi0, nt), xs = linspace(lo1, hi1, nx);
        g.interior.resize(nt * nx, 2);
        Index r = 0;
        for (double t : ts)
            for (double x : xs) g.interior.row(r++) << t, x;
        g.ic.resize(nx, 2);
        for (Index i = 0; i < nx; ++i) g.ic.row(i) << 0.0, xs[static_cast<std::size_t>(i)];
        g.left.resize(nt, 2);
        g.right.resize(nt, 2);
        for (Index i = 0; i < nt; ++i) {
            g.left.row(i) << ts[static_cast<std::size_t>(i)], lo1;
            g.right.row(i) << ts[static_cast<std::size_t>(i)], hi1;
        }
    }
    return g;
}

inline bool is_pde(Family f) { return f == Family::Poisson || f == Family::Schrodinger; }

inline TrainResult train_bundles(const TrainConfig& cfg) {
    if (cfg.iterations < 1) throw ConfigError("iterations must be >= 1");
    if (cfg.collocation < 2) throw ConfigError("collocation must be >= 2");
    if (cfg.bundles.empty()) throw ConfigError("no training bundles");
    for (const auto& b : cfg.bundles)
        if (b.family != cfg.family) throw ConfigError("bundle family mismatch");

    ArchSpec arch;
    arch.input_dim = is_pde(cfg.family) ? 2 : 1;
    arch.hidden = cfg.hidden;
    arch.heads = static_cast<int>(cfg.bundles.size()) * heads_per_bundle(cfg.family);
    arch.activation = cfg.activation;
    MlpParams params = init_network(arch, cfg.seed);

    Matrix ode_grid = is_pde(cfg.family) ? Matrix() : ode_train_grid(cfg);
    PdeGrids pde_grids = is_pde(cfg.family) ? pde_train_grids(cfg) : PdeGrids{};
    Rng resampler(cfg.seed ^ 0xfeedfacecafebeefULL);

    Vector theta = params.to_vector();
    AdamState adam;
    adam.lr = cfg.lr;
    adam.init(theta.size());

    TrainResult result;
    const auto t0 = std::chrono::steady_clock::now();
    for (int it = 0; it < cfg.iterations; ++it) {
        if (cfg.resample_per_iter) {
            Matrix& interior = is_pde(cfg.family) ? pde_grids.interior : ode_grid;
            for (Index i = 0; i < interior.rows(); ++i)
                for (Index j = 0; j < interior.cols(); ++j)
                    interior(i, j) = resampler.uniform(cfg.domain_lo[static_cast<std::size_t>(j)],
                                                       cfg.domain_hi[static_cast<std::size_t>(j)]);
        }
        const LossValue lv = is_pde(cfg.family) ? pde_loss(params, cfg.bundles, pde_grids, cfg.weights)
                                                : ode_loss(params, cfg.bundles, ode_grid, cfg.weights);
        if (!std::isfinite(lv.total)) throw TrainDivergence(it, cfg.lr);
        if (it % cfg.log_every == 0 || it + 1 == cfg.iterations) {
            const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            result.log.push_back({it, lv.total, lv.residual, lv.ic, lv.bc, lv.energy, el});
        }
        if (cfg.lr_min >= 0.0 && cfg.iterations > 1) {
            const double phase = static_cast<double>(it) / static_cast<double>(cfg.iterations - 1);
            adam.lr = cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(M_PI * phase));
        }
        const Vector grad = grad_weights(params, lv.graph);
        adam.update(theta, grad);
        params.from_vector(theta);
    }
    params.frozen = true;
    params.provenance = "train:" + family_name(cfg.family) + ":seed" + std::to_string(cfg.seed) + ":iters" +
                        std::to_string(cfg.iterations);
    result.params = std::move(params);
    return result;
}

}  // namespace ospinn
