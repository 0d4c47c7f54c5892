#include "ospinn/training.hpp"

#include "doctest.h"

#include <variant>

using namespace ospinn;

namespace {

Matrix grid_1d(double lo, double hi, Index n) {
    const auto ts = linspace(lo, hi, n);
    Matrix g(n, 1);
    for (Index i = 0; i < n; ++i) g(i, 0) = ts[static_cast<std::size_t>(i)];
    return g;
}

MlpParams zero_network(int hidden, int heads, ActivationSpec act = ActivationSpec::tanh_(), int input_dim = 1) {
    ArchSpec a;
    a.input_dim = input_dim;
    a.hidden = {hidden};
    a.heads = heads;
    a.activation = act;
    MlpParams p = init_network(a, 0);
    Vector z = Vector::Zero(p.param_count());
    p.from_vector(z);
    return p;
}

}  // namespace

TEST_CASE("sample_bundles: appendix sampling sets and determinism") {
    const auto fo = sample_bundles(Family::FirstOrder, 10, 0);
    REQUIRE(fo.size() == 10);
    for (const auto& b : fo) {
        const auto& t = std::get<OdeTuple>(b.params);
        CHECK(t.order == 1);
        CHECK(t.a0_id >= 0);
        CHECK(t.a0_id < 3);
        CHECK(t.f_id < 3);
        CHECK(t.u0 >= -5.0);
        CHECK(t.u0 <= 5.0);
    }
    const auto co = sample_bundles(Family::CoupledOsc, 10, 1);
    for (const auto& b : co) {
        const auto& c = std::get<CoupledParams>(b.params);
        CHECK(c.mass >= 1.0);
        CHECK(c.mass <= 2.0);
        CHECK(c.k1 >= 0.5);
        CHECK(c.k1 <= 4.5);
        CHECK(std::abs(c.u10) <= 1.5);
    }
    CHECK(sample_bundles(Family::SecondOrder, 0, 0).empty());

    // deterministic per seed; head indices contiguous
    const auto again = sample_bundles(Family::FirstOrder, 10, 0);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(std::get<OdeTuple>(again[i].params).u0 == std::get<OdeTuple>(fo[i].params).u0);
        CHECK(fo[i].head == static_cast<int>(i));
    }
    CHECK(co[3].head == 6);  // two heads per coupled bundle
}

TEST_CASE("ode_loss: zero network leaves only the IC term") {
    // psi' + psi = 0 with psi0 = 1 and psi == 0 -> loss = 1
    MlpParams p = zero_network(8, 1);
    Bundle b;
    b.family = Family::FirstOrder;
    b.params = OdeTuple{1, 2, 0, 0, 1.0, 0.0};  // a == 1, f = cos
    // pick f == 0? the table has no zero force; use a residual computed directly:
    // with psi == 0, residual = -f, so subtract the known force term.
    const Matrix grid = grid_1d(0.0, 3.0, 7);
    const LossValue lv = ode_loss(p, {b}, grid);
    double f2 = 0.0;
    for (Index i = 0; i < grid.rows(); ++i) {
        const double fv = first_order_f(0, grid(i, 0));
        f2 += fv * fv;
    }
    f2 /= static_cast<double>(grid.rows());
    CHECK(lv.ic == doctest::Approx(1.0));
    CHECK(lv.residual == doctest::Approx(f2));
    CHECK(lv.total == doctest::Approx(1.0 + f2));
}

TEST_CASE("ode_loss: exactly representable solution gives zero loss") {
    // u' + u = cos(t), u0 = 1/2 has solution (cos t + sin t)/2, which two sin
    // neurons represent exactly: sin(t) and sin(t + pi/2).
    ArchSpec a;
    a.input_dim = 1;
    a.hidden = {2};
    a.heads = 1;
    a.activation = ActivationSpec::sin_();
    MlpParams p = init_network(a, 0);
    p.trunk[0].W << 1.0, 1.0;
    p.trunk[0].b << 0.0, M_PI / 2.0;
    p.head.W << 0.5, 0.5;
    p.head.b[0] = 0.0;
    Bundle b;
    b.family = Family::FirstOrder;
    b.params = OdeTuple{1, 2, 0, 0, 0.5, 0.0};  // a=1, f=cos, u0=1/2
    const LossValue lv = ode_loss(p, {b}, grid_1d(0.0, 3.0, 31));
    CHECK(lv.total < 1e-20);
}

TEST_CASE("pde_loss: zero network Poisson loss is the mean squared source") {
    MlpParams p = zero_network(8, 1, ActivationSpec::sin_(), 2);
    TrainConfig cfg;
    cfg.family = Family::Poisson;
    cfg.collocation = 64;
    cfg.domain_hi = {1.0, 1.0};
    const PdeGrids grids = pde_train_grids(cfg);
    Bundle b;
    b.family = Family::Poisson;
    b.params = PoissonParams{1.0};
    const LossValue lv = pde_loss(p, {b}, grids);
    double rho2 = 0.0;
    for (Index i = 0; i < grids.interior.rows(); ++i) {
        const double r = std::sin(M_PI * grids.interior(i, 0)) * std::sin(M_PI * grids.interior(i, 1));
        rho2 += r * r;
    }
    rho2 /= static_cast<double>(grids.interior.rows());
    CHECK(lv.residual == doctest::Approx(rho2));
    CHECK(lv.bc == doctest::Approx(0.0));
}

TEST_CASE("pde_loss: analytic Poisson solution as synthetic head gives ~zero loss") {
    // -sin(pi x) sin(pi y) / (2 pi^2) = -(sin(pi(x-y)+pi/2) - sin(pi(x+y)+pi/2)) / (4 pi^2)
    ArchSpec a;
    a.input_dim = 2;
    a.hidden = {2};
    a.heads = 1;
    a.activation = ActivationSpec::sin_();
    MlpParams p = init_network(a, 0);
    p.trunk[0].W.col(0) << M_PI, -M_PI;
    p.trunk[0].W.col(1) << M_PI, M_PI;
    p.trunk[0].b << M_PI / 2.0, M_PI / 2.0;
    const double s = 1.0 / (4.0 * M_PI * M_PI);
    p.head.W << -s, s;
    p.head.b[0] = 0.0;

    TrainConfig cfg;
    cfg.family = Family::Poisson;
    cfg.collocation = 100;
    cfg.domain_hi = {1.0, 1.0};
    Bundle b;
    b.family = Family::Poisson;
    b.params = PoissonParams{1.0};
    const LossValue lv = pde_loss(p, {b}, pde_train_grids(cfg));
    CHECK(lv.total < 1e-20);
}

TEST_CASE("energy_loss: hand values") {
    Bundle b;
    b.family = Family::NonlinearOsc;
    const Matrix grid = grid_1d(0.0, 3.0, 11);

    // constant head psi == psi0: zero drift
    MlpParams p = zero_network(4, 1, ActivationSpec::sin_());
    p.head.b[0] = 2.0;
    b.params = NonlinParams{2.0};
    CHECK(energy_loss(p, b, grid).total == doctest::Approx(0.0));

    // psi == 0 with psi0 = 2: drift^2 = (0 - (2 + 4))^2 = 36
    p.head.b[0] = 0.0;
    CHECK(energy_loss(p, b, grid).total == doctest::Approx(36.0));

    Bundle wrong;
    wrong.family = Family::FirstOrder;
    wrong.params = OdeTuple{};
    CHECK_THROWS_AS(energy_loss(p, wrong, grid), UsageError);
}

TEST_CASE("adam: two hand-computed scalar steps") {
    AdamState adam;
    adam.lr = 0.1;
    adam.init(1);
    Vector theta = Vector::Zero(1);
    Vector g(1);
    g << 1.0;
    adam.update(theta, g);
    // m=0.1, v=0.001; bias-corrected both 1 -> step = lr / (1 + eps)
    CHECK(theta[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));

    const double t1 = theta[0];
    g << 2.0;
    adam.update(theta, g);
    const double m2 = 0.9 * 0.1 + 0.1 * 2.0;           // 0.29
    const double v2 = 0.999 * 0.001 + 0.001 * 4.0;     // 0.004999
    const double mhat = m2 / (1.0 - 0.9 * 0.9);
    const double vhat = v2 / (1.0 - 0.999 * 0.999);
    CHECK(theta[0] == doctest::Approx(t1 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8)).epsilon(1e-12));
}

TEST_CASE("train_bundles: config validation") {
    TrainConfig cfg;
    cfg.iterations = 0;
    cfg.bundles = sample_bundles(Family::FirstOrder, 1, 0);
    CHECK_THROWS_AS(train_bundles(cfg), ConfigError);
    cfg.iterations = 10;
    cfg.bundles.clear();
    CHECK_THROWS_AS(train_bundles(cfg), ConfigError);
}

TEST_CASE("train_bundles: deterministic, loss decreases, result frozen") {
    TrainConfig cfg;
    cfg.family = Family::FirstOrder;
    cfg.hidden = {24, 24};
    cfg.iterations = 400;
    cfg.collocation = 15;
    cfg.domain_hi = {3.0, 0.0};
    cfg.seed = 0;
    cfg.bundles = sample_bundles(Family::FirstOrder, 2, 0);
    cfg.log_every = 100;

    const TrainResult r1 = train_bundles(cfg);
    const TrainResult r2 = train_bundles(cfg);
    CHECK((r1.params.to_vector() - r2.params.to_vector()).norm() == 0.0);
    CHECK(r1.params.frozen);
    REQUIRE(r1.log.size() >= 2);
    CHECK(r1.log.back().total < r1.log.front().total);

    cfg.seed = 1;
    const TrainResult r3 = train_bundles(cfg);
    CHECK((r1.params.to_vector() - r3.params.to_vector()).norm() > 0.0);
}

TEST_CASE("loss is invariant to other heads' output weights (head isolation)") {
    MlpParams p = init_network(ArchSpec{1, {10}, 3, ActivationSpec::tanh_()}, 0);
    auto bundles = sample_bundles(Family::FirstOrder, 2, 0);  // uses heads 0,1
    const Matrix grid = grid_1d(0.0, 3.0, 9);
    const double before = ode_loss(p, bundles, grid).total;
    p.head.W.col(2).setConstant(42.0);  // unused head
    p.head.b[2] = -7.0;
    CHECK(ode_loss(p, bundles, grid).total == before);
}
