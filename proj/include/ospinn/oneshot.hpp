#pragma once

#include "ospinn/network.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>

#include "json.hpp"

namespace ospinn {

using ScalarFn = std::function<double(double)>;
using Scalar2Fn = std::function<double(double, double)>;

// sum_{i=0..n} a_i(t) psi^(i) = f(t), explicit form with a_n == 1.
struct LinearOdeOperatorSpec {
    int order = 1;
    ScalarFn a0;            // coefficient of psi
    ScalarFn a1;            // coefficient of psi' (order 2 only)
    ScalarFn force;
    std::vector<double> ic;  // [psi(0), psi'(0), ...], size == order
};

enum class BoundaryMode { Dirichlet, PeriodicDifference };

// (a1 d_t + a2 d_tt + b1 d_x + b2 d_xx + c d_xt + V) psi = f over dims
// (dim0, dim1). Null coefficient functions mean identically zero.
struct LinearPdeOperatorSpec {
    Scalar2Fn a1, a2;       // dim0 first/second derivative coefficients
    Scalar2Fn b1, b2;       // dim1 first/second derivative coefficients
    Scalar2Fn c;            // mixed dim0-dim1 coefficient
    Scalar2Fn potential;    // V
    Scalar2Fn force;        // f
    ScalarFn g;             // IC at dim0 = 0 (time-dependent problems)
    ScalarFn bc_left, bc_right;      // Dirichlet boundary values vs dim0
    BoundaryMode boundary_mode = BoundaryMode::Dirichlet;
    bool elliptic = false;  // four-edge Dirichlet, no IC line (Poisson-type)
};

struct SystemBlock {
    Matrix A;
    Matrix Y;  // one column per right-hand side
    std::string kind;
};

struct AssembledSystem {
    std::vector<SystemBlock> blocks;
    Index cols = 0;
    bool bias_column = true;
    std::uint64_t checkpoint_hash = 0;
    std::uint64_t grid_hash = 0;

    Index rows() const {
        Index r = 0;
        for (const auto& b : blocks) r += b.A.rows();
        return r;
    }
    Index rhs_count() const { return blocks.empty() ? 0 : blocks.front().Y.cols(); }

    Matrix stacked_design() const {
        Matrix A(rows(), cols);
        Index at = 0;
        for (const auto& b : blocks) {
            A.middleRows(at, b.A.rows()) = b.A;
            at += b.A.rows();
        }
        return A;
    }
    Matrix stacked_target() const {
        Matrix Y(rows(), rhs_count());
        Index at = 0;
        for (const auto& b : blocks) {
            Y.middleRows(at, b.Y.rows()) = b.Y;
            at += b.Y.rows();
        }
        return Y;
    }
    Matrix gram() const {
        Matrix G = Matrix::Zero(cols, cols);
        for (const auto& b : blocks) G.selfadjointView<Eigen::Lower>().rankUpdate(b.A.transpose());
        return Matrix(G.selfadjointView<Eigen::Lower>());
    }
    // squared-residual loss per right-hand side at W
    Vector loss_at(const Matrix& W) const {
        Vector l = Vector::Zero(rhs_count());
        for (const auto& b : blocks) l += (b.A * W - b.Y).colwise().squaredNorm().transpose();
        return l;
    }
};

namespace detail {

// basis matrix for one channel, with the constant column appended when the
// output bias is solved jointly (ones for values, zeros for derivatives)
inline Matrix with_bias(const Matrix& M, bool bias, bool value_channel) {
    if (!bias) return M;
    Matrix out(M.rows(), M.cols() + 1);
    out.leftCols(M.cols()) = M;
    out.col(M.cols()) = value_channel ? Vector::Ones(M.rows()) : Vector::Zero(M.rows());
    return out;
}

inline Index find_time_zero_row(const JetBatch& jb) {
    for (Index i = 0; i < jb.points.rows(); ++i)
        if (std::abs(jb.points(i, 0)) < 1e-12) return i;
    throw UsageError("grid does not include t=0; evaluate the IC point explicitly");
}

inline Vector eval_on_grid(const ScalarFn& fn, const Matrix& pts) {
    Vector v = Vector::Zero(pts.rows());
    if (fn)
        for (Index i = 0; i < pts.rows(); ++i) v[i] = fn(pts(i, 0));
    return v;
}

inline Vector eval_on_grid2(const Scalar2Fn& fn, const Matrix& pts) {
    Vector v = Vector::Zero(pts.rows());
    if (fn)
        for (Index i = 0; i < pts.rows(); ++i) v[i] = fn(pts(i, 0), pts(i, 1));
    return v;
}

}  // namespace detail

inline AssembledSystem assemble_ode(const JetBatch& jb, const LinearOdeOperatorSpec& op, bool bias = true) {
    if (op.order < 1 || op.order > 2) throw ConfigError("ODE order must be 1 or 2");
    if (static_cast<int>(op.ic.size()) != op.order) throw ConfigError("IC count must equal ODE order");
    if (!jb.has(kD0) || (op.order == 2 && !jb.has(kD00)))
        throw UsageError("JetBatch lacks a derivative order required by the operator");

    const Index m = jb.rows();
    const Vector a0 = detail::eval_on_grid(op.a0, jb.points);
    Matrix D = op.order == 1 ? Matrix(jb.d(kD0)) : Matrix(jb.d(kD00));
    if (op.order == 2 && op.a1) {
        const Vector a1 = detail::eval_on_grid(op.a1, jb.points);
        D += a1.asDiagonal() * jb.d(kD0);
    }
    if (op.a0) D += a0.asDiagonal() * jb.H();

    const Index i0 = detail::find_time_zero_row(jb);
    Matrix ic_rows(op.order, jb.width());
    ic_rows.row(0) = jb.H().row(i0);
    if (op.order == 2) ic_rows.row(1) = jb.d(kD0).row(i0);

    AssembledSystem sys;
    sys.bias_column = bias;
    sys.cols = jb.width() + (bias ? 1 : 0);
    sys.checkpoint_hash = jb.checkpoint_hash;
    sys.grid_hash = jb.grid_hash;
    sys.blocks.push_back({detail::with_bias(D, bias, false), detail::eval_on_grid(op.force, jb.points), "residual"});
    Matrix ic_y(op.order, 1);
    for (int i = 0; i < op.order; ++i) ic_y(i, 0) = op.ic[static_cast<std::size_t>(i)];
    sys.blocks.push_back({detail::with_bias(ic_rows, bias, true), ic_y, "ic"});
    (void)m;
    return sys;
}

struct PdeBatches {
    JetBatch interior;
    std::optional<JetBatch> ic;      // dim0 = 0 line
    std::optional<JetBatch> left, right;
    std::optional<JetBatch> bottom, top;  // elliptic problems
};

inline AssembledSystem assemble_pde(const PdeBatches& batches, const LinearPdeOperatorSpec& op,
                                    bool bias = true) {
    const JetBatch& jb = batches.interior;
    const Index m = jb.rows();
    auto coef_block = [&](const Scalar2Fn& fn, Chan c) -> Matrix {
        if (!fn) return Matrix::Zero(m, jb.width());
        if (!jb.has(c)) throw UsageError("interior JetBatch lacks a channel required by a nonzero coefficient");
        return detail::eval_on_grid2(fn, jb.points).asDiagonal() * jb.d(c);
    };
    Matrix D = Matrix::Zero(m, jb.width());
    D += coef_block(op.a1, kD0);
    D += coef_block(op.a2, kD00);
    D += coef_block(op.b1, kD1);
    D += coef_block(op.b2, kD11);
    D += coef_block(op.c, kD01);
    if (op.potential) D += detail::eval_on_grid2(op.potential, jb.points).asDiagonal() * jb.H();

    AssembledSystem sys;
    sys.bias_column = bias;
    sys.cols = jb.width() + (bias ? 1 : 0);
    sys.checkpoint_hash = jb.checkpoint_hash;
    sys.grid_hash = jb.grid_hash;
    sys.blocks.push_back({detail::with_bias(D, bias, false), detail::eval_on_grid2(op.force, jb.points), "residual"});

    auto dirichlet_edge = [&](const std::optional<JetBatch>& edge, const char* name, int coord_dim) {
        if (!edge) throw ConfigError(std::string("missing boundary batch: ") + name);
        Vector target = Vector::Zero(edge->rows());
        const ScalarFn& fn = std::string(name) == "left"     ? op.bc_left
                             : std::string(name) == "right"  ? op.bc_right
                                                             : ScalarFn{};
        if (fn)
            for (Index i = 0; i < edge->rows(); ++i) target[i] = fn(edge->points(i, coord_dim));
        sys.blocks.push_back({detail::with_bias(edge->H(), bias, true), target, name});
    };

    if (op.elliptic) {
        dirichlet_edge(batches.left, "left", 1);
        dirichlet_edge(batches.right, "right", 1);
        dirichlet_edge(batches.bottom, "bottom", 0);
        dirichlet_edge(batches.top, "top", 0);
        return sys;
    }

    if (!batches.ic) throw ConfigError("missing IC batch for a time-dependent PDE");
    Vector g = Vector::Zero(batches.ic->rows());
    if (op.g)
        for (Index i = 0; i < batches.ic->rows(); ++i) g[i] = op.g(batches.ic->points(i, 1));
    sys.blocks.push_back({detail::with_bias(batches.ic->H(), bias, true), g, "ic"});

    if (op.boundary_mode == BoundaryMode::Dirichlet) {
        dirichlet_edge(batches.left, "left", 0);
        dirichlet_edge(batches.right, "right", 0);
    } else {
        if (!batches.left || !batches.right) throw ConfigError("missing edge batches for periodic difference");
        if (!batches.left->has(kD1) || !batches.right->has(kD1))
            throw UsageError("periodic-difference boundaries require H_x on both edges");
        const Matrix hd = batches.left->H() - batches.right->H();
        const Matrix hxd = batches.left->d(kD1) - batches.right->d(kD1);
        sys.blocks.push_back(
            {detail::with_bias(hd, bias, false), Vector::Zero(hd.rows()), "periodic_value"});
        sys.blocks.push_back(
            {detail::with_bias(hxd, bias, false), Vector::Zero(hxd.rows()), "periodic_deriv"});
    }
    return sys;
}

// System of two coupled second-order components: psi'' = A psi, block layout
// over the stacked unknown [W1; W2].
inline AssembledSystem assemble_coupled_ode(const JetBatch& jb, const Eigen::Matrix2d& A,
                                            const Eigen::Vector2d& psi0, const Eigen::Vector2d& dpsi0,
                                            bool bias = true) {
    if (!jb.has(kD0) || !jb.has(kD00)) throw UsageError("coupled assembly requires first and second time derivatives");
    const Index m = jb.rows();
    const Index hb = jb.width() + (bias ? 1 : 0);
    const Matrix H = detail::with_bias(jb.H(), bias, true);
    const Matrix Htt = detail::with_bias(jb.d(kD00), bias, false);
    const Index i0 = detail::find_time_zero_row(jb);
    const Matrix H0 = detail::with_bias(jb.H().row(i0), bias, true);
    const Matrix H0d = detail::with_bias(jb.d(kD0).row(i0), bias, false);

    Matrix R = Matrix::Zero(2 * m, 2 * hb);
    R.block(0, 0, m, hb) = Htt - A(0, 0) * H;
    R.block(0, hb, m, hb) = -A(0, 1) * H;
    R.block(m, 0, m, hb) = -A(1, 0) * H;
    R.block(m, hb, m, hb) = Htt - A(1, 1) * H;

    Matrix IC0 = Matrix::Zero(2, 2 * hb), ICd = Matrix::Zero(2, 2 * hb);
    IC0.block(0, 0, 1, hb) = H0;
    IC0.block(1, hb, 1, hb) = H0;
    ICd.block(0, 0, 1, hb) = H0d;
    ICd.block(1, hb, 1, hb) = H0d;

    AssembledSystem sys;
    sys.bias_column = bias;
    sys.cols = 2 * hb;
    sys.checkpoint_hash = jb.checkpoint_hash;
    sys.grid_hash = jb.grid_hash;
    sys.blocks.push_back({std::move(R), Matrix::Zero(2 * m, 1), "residual"});
    sys.blocks.push_back({std::move(IC0), Matrix(psi0), "ic_value"});
    sys.blocks.push_back({std::move(ICd), Matrix(dpsi0), "ic_deriv"});
    return sys;
}

struct WavePacketIc {
    double sigma = 0.5, p0 = 1.0, x0 = 0.0;
};

// Free-particle Schrodinger split into real/imaginary parts (hbar = m = 1):
//   psiR_t = -1/2 psiI_xx,  psiI_t = 1/2 psiR_xx
// with Gaussian wave-packet IC and periodic-difference edge constraints.
inline AssembledSystem assemble_schrodinger(const JetBatch& interior, const JetBatch& ic_batch,
                                            const JetBatch& left, const JetBatch& right,
                                            const WavePacketIc& wp, bool bias = true) {
    if (!interior.has(kD0) || !interior.has(kD11))
        throw UsageError("schrodinger assembly requires H_t and H_xx on the interior");
    if (!left.has(kD1) || !right.has(kD1))
        throw UsageError("schrodinger assembly requires H_x on both edges");
    const double half = 0.5;
    const Index m = interior.rows();
    const Index hb = interior.width() + (bias ? 1 : 0);
    const Matrix Ht = detail::with_bias(interior.d(kD0), bias, false);
    const Matrix Hxx = detail::with_bias(interior.d(kD11), bias, false);

    Matrix R = Matrix::Zero(2 * m, 2 * hb);
    R.block(0, 0, m, hb) = Ht;
    R.block(0, hb, m, hb) = half * Hxx;
    R.block(m, 0, m, hb) = -half * Hxx;
    R.block(m, hb, m, hb) = Ht;

    const Index mi = ic_batch.rows();
    const Matrix H0 = detail::with_bias(ic_batch.H(), bias, true);
    Matrix IC = Matrix::Zero(2 * mi, 2 * hb);
    IC.block(0, 0, mi, hb) = H0;
    IC.block(mi, hb, mi, hb) = H0;
    Matrix ic_y(2 * mi, 1);
    for (Index i = 0; i < mi; ++i) {
        const double x = ic_batch.points(i, 1);
        const double env = std::pow(M_PI, -0.25) / std::sqrt(wp.sigma) *
                           std::exp(-(x - wp.x0) * (x - wp.x0) / (2.0 * wp.sigma * wp.sigma));
        ic_y(i, 0) = env * std::cos(wp.p0 * x);
        ic_y(mi + i, 0) = env * std::sin(wp.p0 * x);
    }

    const Index mb = left.rows();
    const Matrix hd = detail::with_bias(left.H() - right.H(), bias, false);
    const Matrix hxd = detail::with_bias(left.d(kD1) - right.d(kD1), bias, false);
    Matrix BD = Matrix::Zero(4 * mb, 2 * hb);
    BD.block(0, 0, mb, hb) = hd;
    BD.block(mb, hb, mb, hb) = hd;
    BD.block(2 * mb, 0, mb, hb) = hxd;
    BD.block(3 * mb, hb, mb, hb) = hxd;

    AssembledSystem sys;
    sys.bias_column = bias;
    sys.cols = 2 * hb;
    sys.checkpoint_hash = interior.checkpoint_hash;
    sys.grid_hash = interior.grid_hash;
    sys.blocks.push_back({std::move(R), Matrix::Zero(2 * m, 1), "residual"});
    sys.blocks.push_back({std::move(IC), std::move(ic_y), "ic"});
    sys.blocks.push_back({std::move(BD), Matrix::Zero(4 * mb, 1), "periodic"});
    return sys;
}

// ---- solvers -----------------------------------------------------------------

struct OneShotSolution {
    Matrix W;            // cols x n_rhs
    std::string path;    // normal | normal+ridge | qr
    double ridge = 0.0;
    double condition = 0.0;  // Gram condition estimate (normal path)
    Vector loss;             // squared-residual loss per RHS at the optimum
    double wall_s = 0.0;
};

inline nlohmann::json solution_report(const OneShotSolution& s) {
    return {{"path", s.path},
            {"ridge", s.ridge},
            {"condition", s.condition},
            {"loss", std::vector<double>(s.loss.data(), s.loss.data() + s.loss.size())},
            {"wall_s", s.wall_s}};
}

struct IllConditionedError : NumericalError {
    using NumericalError::NumericalError;
};

inline constexpr double kQrRoutingCondition = 1e12;   // normal -> qr threshold
inline constexpr double kSingularCondition = 1e15;

inline double default_ridge(const Matrix& gram) {
    return 1e-10 * gram.trace() / static_cast<double>(gram.cols());
}

namespace detail {
inline double gram_condition(const Matrix& gram, Index* rank = nullptr) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
    const Vector ev = es.eigenvalues();
    const double emax = ev.maxCoeff();
    if (emax <= 0.0) {
        if (rank) *rank = 0;
        return std::numeric_limits<double>::infinity();
    }
    if (rank) {
        const double tol = emax * 1e-12 * static_cast<double>(gram.cols());
        *rank = (ev.array() > tol).count();
    }
    const double emin = ev.minCoeff();
    return emin <= 0.0 ? std::numeric_limits<double>::infinity() : emax / emin;
}
}  // namespace detail

inline OneShotSolution solve_wout_normal(const AssembledSystem& sys, double ridge = 0.0) {
    const auto t0 = std::chrono::steady_clock::now();
    Matrix gram = sys.gram();
    const double cond = detail::gram_condition(gram);
    if (ridge <= 0.0 && (!std::isfinite(cond) || cond > kSingularCondition))
        throw IllConditionedError(
            "Gram matrix numerically singular (condition " + std::to_string(cond) +
            "); use the QR path or a ridge lambda > 0");
    if (ridge > 0.0) gram.diagonal().array() += ridge;
    Matrix rhs = Matrix::Zero(sys.cols, sys.rhs_count());
    for (const auto& b : sys.blocks) rhs.noalias() += b.A.transpose() * b.Y;
    OneShotSolution sol;
    // Same computation as factorize_operator + apply_factor (explicit inverse),
    // so the reuse path reproduces the direct solve exactly.
    const Matrix inv = Eigen::LDLT<Matrix>(gram).solve(Matrix::Identity(gram.rows(), gram.cols()));
    sol.W.noalias() = inv * rhs;
    sol.path = ridge > 0.0 ? "normal+ridge" : "normal";
    sol.ridge = ridge;
    sol.condition = cond;
    sol.loss = sys.loss_at(sol.W);
    sol.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return sol;
}

inline OneShotSolution solve_wout_qr(const AssembledSystem& sys) {
    const auto t0 = std::chrono::steady_clock::now();
    if (sys.rows() < sys.cols) throw UsageError("QR path needs at least as many rows as columns");
    const Matrix A = sys.stacked_design();
    Eigen::ColPivHouseholderQR<Matrix> qr(A);
    if (qr.rank() < sys.cols)
        throw NumericalError("rank-deficient system: numerical rank " + std::to_string(qr.rank()) + " < " +
                             std::to_string(sys.cols) + " columns");
    OneShotSolution sol;
    sol.W = qr.solve(sys.stacked_target());
    sol.path = "qr";
    sol.loss = sys.loss_at(sol.W);
    sol.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return sol;
}

// Cached factorization of the operator-dependent Gram matrix; new forces and
// ICs only cost matrix-vector work per solve.
struct OperatorFactor {
    Matrix inv;  // explicit (Gram + ridge I)^-1: applying it is one matmul per RHS
                 // and is numerically linear in the right-hand side
    std::vector<double> scales;  // per-block row weights (empty = unweighted)
    std::vector<Matrix> design;  // per-block design matrices (for RHS + loss)
    std::vector<std::string> kinds;
    Index cols = 0;
    double ridge = 0.0;
    double condition = 0.0;
    std::uint64_t checkpoint_hash = 0;
    std::uint64_t grid_hash = 0;
};

// equalize_blocks: weight each block by sqrt(rows(block0)/rows(block)), so a
// few IC/BC rows are not drowned out by tens of thousands of residual rows.
inline OperatorFactor factorize_operator(const AssembledSystem& sys, double ridge = 0.0,
                                         bool equalize_blocks = false) {
    OperatorFactor f;
    if (equalize_blocks) {
        const double m0 = static_cast<double>(sys.blocks.front().A.rows());
        for (const auto& b : sys.blocks)
            f.scales.push_back(std::sqrt(m0 / static_cast<double>(b.A.rows())));
    }
    Matrix gram;
    if (f.scales.empty()) {
        gram = sys.gram();
    } else {
        gram = Matrix::Zero(sys.cols, sys.cols);
        for (std::size_t i = 0; i < sys.blocks.size(); ++i) {
            const double s2 = f.scales[i] * f.scales[i];
            gram.noalias() += s2 * (sys.blocks[i].A.transpose() * sys.blocks[i].A);
        }
    }
    f.condition = detail::gram_condition(gram);
    if (ridge <= 0.0 && (!std::isfinite(f.condition) || f.condition > kSingularCondition))
        throw IllConditionedError("Gram matrix numerically singular; use QR or ridge > 0");
    if (ridge > 0.0) gram.diagonal().array() += ridge;
    f.inv = Eigen::LDLT<Matrix>(gram).solve(Matrix::Identity(gram.rows(), gram.cols()));
    for (const auto& b : sys.blocks) {
        f.design.push_back(b.A);
        f.kinds.push_back(b.kind);
    }
    f.cols = sys.cols;
    f.ridge = ridge;
    f.checkpoint_hash = sys.checkpoint_hash;
    f.grid_hash = sys.grid_hash;
    return f;
}

// targets must align with the factor's blocks (e.g. {f values, psi_ic}).
inline OneShotSolution apply_factor(const OperatorFactor& factor, const std::vector<Matrix>& targets,
                                    std::uint64_t grid_hash = 0, bool compute_loss = true) {
    if (grid_hash != 0 && grid_hash != factor.grid_hash)
        throw UsageError("operator factor reused with a different grid (provenance mismatch)");
    if (targets.size() != factor.design.size()) throw UsageError("target block count mismatch");
    const auto t0 = std::chrono::steady_clock::now();
    const Index nrhs = targets.front().cols();
    Matrix rhs = Matrix::Zero(factor.cols, nrhs);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double s2 = factor.scales.empty() ? 1.0 : factor.scales[i] * factor.scales[i];
        rhs.noalias() += s2 * (factor.design[i].transpose() * targets[i]);
    }
    OneShotSolution sol;
    sol.W.noalias() = factor.inv * rhs;
    sol.path = factor.ridge > 0.0 ? "normal+ridge" : "normal";
    sol.ridge = factor.ridge;
    sol.condition = factor.condition;
    if (compute_loss) {
        sol.loss = Vector::Zero(nrhs);
        for (std::size_t i = 0; i < targets.size(); ++i)
            sol.loss += (factor.design[i] * sol.W - targets[i]).colwise().squaredNorm().transpose();
    }
    sol.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return sol;
}

struct ConditionReport {
    double condition = 0.0;
    Index numerical_rank = 0;
    std::string recommended_path;
    double suggested_ridge = 0.0;
};

inline ConditionReport condition_report(const AssembledSystem& sys) {
    const Matrix gram = sys.gram();
    ConditionReport rep;
    rep.condition = detail::gram_condition(gram, &rep.numerical_rank);
    rep.suggested_ridge = default_ridge(gram);
    rep.recommended_path = rep.condition > kQrRoutingCondition ? "qr" : "normal";
    return rep;
}

// ---- gradient fine-tuning (nonlinear residuals) -------------------------------

// Pointwise residual and its partials w.r.t. psi, psi_t, psi_tt.
struct ResidualEval {
    Vector r, du, dut, dutt;
};
using ResidualFn = std::function<ResidualEval(const Vector& u, const Vector& ut, const Vector& utt)>;

struct FinetuneOptions {
    int epochs = 5000;
    double lr = 1e-3;
    double energy_weight = 0.0;  // nonlinear-oscillator Hamiltonian penalty
    double energy_u0 = 0.0, energy_v0 = 0.0;
    double lr_min = -1.0;  // if >= 0, cosine-decay the step size from lr to lr_min
    Vector warm_start;     // optional initial W (empty -> zeros)
};

struct FinetuneResult {
    Vector W;
    std::vector<double> loss_history;  // recorded every 100 epochs + final
    double final_loss = 0.0;
};

// Adam on W_out only, trunk frozen. Objective is the same squared-residual
// form the analytic solve minimizes, plus optional energy penalty.
inline FinetuneResult finetune_wout_gd(const JetBatch& jb, const JetBatch& ic_batch, const ResidualFn& fn,
                                       const std::vector<double>& ics, const FinetuneOptions& opt,
                                       bool bias = true) {
    const Matrix H = detail::with_bias(jb.H(), bias, true);
    const Matrix Ht = detail::with_bias(jb.d(kD0), bias, false);
    const Matrix Htt = jb.has(kD00) ? detail::with_bias(jb.d(kD00), bias, false) : Matrix();
    Matrix icA(static_cast<Index>(ics.size()), H.cols());
    icA.row(0) = detail::with_bias(ic_batch.H().row(0), bias, true);
    if (ics.size() > 1) icA.row(1) = detail::with_bias(ic_batch.d(kD0).row(0), bias, false);
    Vector icY(static_cast<Index>(ics.size()));
    for (std::size_t i = 0; i < ics.size(); ++i) icY[static_cast<Index>(i)] = ics[i];

    Vector W = Vector::Zero(H.cols());
    if (opt.warm_start.size() > 0) {
        if (opt.warm_start.size() != H.cols())
            throw UsageError("warm_start size does not match the basis column count");
        W = opt.warm_start;
    }
    Vector m = Vector::Zero(W.size()), v = Vector::Zero(W.size());
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    FinetuneResult out;
    const double e0 = 0.5 * opt.energy_v0 * opt.energy_v0 + 0.5 * opt.energy_u0 * opt.energy_u0 +
                      0.25 * std::pow(opt.energy_u0, 4);

    auto objective = [&](const Vector& Wc, Vector* grad) {
        const Vector u = H * Wc;
        const Vector ut = Ht * Wc;
        const Vector utt = Htt.size() > 0 ? Vector(Htt * Wc) : Vector::Zero(u.size());
        const ResidualEval re = fn(u, ut, utt);
        double loss = re.r.squaredNorm();
        const Vector icr = icA * Wc - icY;
        loss += icr.squaredNorm();
        if (grad) {
            *grad = 2.0 * (H.transpose() * re.r.cwiseProduct(re.du) +
                           Ht.transpose() * re.r.cwiseProduct(re.dut) + icA.transpose() * icr);
            if (Htt.size() > 0) *grad += 2.0 * Htt.transpose() * re.r.cwiseProduct(re.dutt);
        }
        if (opt.energy_weight > 0.0) {
            const Eigen::ArrayXd ua = u.array(), va = ut.array();
            const Eigen::ArrayXd drift = 0.5 * va.square() + 0.5 * ua.square() + 0.25 * ua.pow(4) - e0;
            loss += opt.energy_weight * drift.square().sum();
            if (grad) {
                const Vector gdu = (2.0 * opt.energy_weight * drift * (ua + ua.cube())).matrix();
                const Vector gdv = (2.0 * opt.energy_weight * drift * va).matrix();
                *grad += H.transpose() * gdu + Ht.transpose() * gdv;
            }
        }
        return loss;
    };

    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        Vector grad;
        const double loss = objective(W, &grad);
        if (!std::isfinite(loss)) {
            out.loss_history.push_back(loss);
            throw NumericalError("fine-tune loss became non-finite at epoch " + std::to_string(epoch));
        }
        if (epoch % 100 == 0) out.loss_history.push_back(loss);

        const double t = static_cast<double>(epoch + 1);
        double lr = opt.lr;
        if (opt.lr_min >= 0.0 && opt.epochs > 1) {
            const double phase = static_cast<double>(epoch) / static_cast<double>(opt.epochs - 1);
            lr = opt.lr_min + 0.5 * (opt.lr - opt.lr_min) * (1.0 + std::cos(M_PI * phase));
        }
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
        W.array() -= lr * (m.array() / (1.0 - std::pow(b1, t))) /
                     ((v.array() / (1.0 - std::pow(b2, t))).sqrt() + eps);
    }
    out.final_loss = objective(W, nullptr);
    out.loss_history.push_back(out.final_loss);
    out.W = W;
    return out;
}

}  // namespace ospinn
