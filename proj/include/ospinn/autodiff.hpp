#pragma once

#include "ospinn/network.hpp"

namespace ospinn {

// A forward trace plus the adjoint of the scalar loss w.r.t. each head-output
// channel. Loss functions build one part per evaluation grid (interior, IC
// point, boundary edges); grad_weights sums the reverse sweeps.
struct SeededTrace {
    ForwardTrace trace;
    Channels seeds;  // dLoss/dPsi_c, each m x q
};

struct LossGraph {
    double loss = 0.0;
    std::vector<SeededTrace> parts;
};

namespace detail {

// Reverse of activate_channels: adjoints on post-activation channels become
// adjoints on pre-activation channels via the transposed chain rule.
inline Channels reverse_activation(const LayerTrace& lt, const Channels& ga) {
    const Matrix& s1 = lt.s1;
    const Matrix& s2 = lt.s2;
    const Matrix& s3 = lt.s3;
    auto z = [&](Chan c) { return lt.z.at(c).array(); };
    auto g = [&](Chan c) { return ga.m[static_cast<int>(c)].array(); };

    Channels gz;
    Eigen::ArrayXXd gval = Eigen::ArrayXXd::Zero(s1.rows(), s1.cols());
    if (ga.on[kVal]) gval += g(kVal) * s1.array();
    if (ga.on[kD0]) gval += g(kD0) * s2.array() * z(kD0);
    if (ga.on[kD1]) gval += g(kD1) * s2.array() * z(kD1);
    if (ga.on[kD00]) gval += g(kD00) * (s3.array() * z(kD0).square() + s2.array() * z(kD00));
    if (ga.on[kD11]) gval += g(kD11) * (s3.array() * z(kD1).square() + s2.array() * z(kD11));
    if (ga.on[kD01]) gval += g(kD01) * (s3.array() * z(kD0) * z(kD1) + s2.array() * z(kD01));
    gz.at(kVal) = gval;
    gz.on[kVal] = true;

    if (ga.on[kD0] || ga.on[kD00] || ga.on[kD01]) {
        Eigen::ArrayXXd a = Eigen::ArrayXXd::Zero(s1.rows(), s1.cols());
        if (ga.on[kD0]) a += g(kD0) * s1.array();
        if (ga.on[kD00]) a += 2.0 * g(kD00) * s2.array() * z(kD0);
        if (ga.on[kD01]) a += g(kD01) * s2.array() * z(kD1);
        gz.at(kD0) = a;
        gz.on[kD0] = true;
    }
    if (ga.on[kD1] || ga.on[kD11] || ga.on[kD01]) {
        Eigen::ArrayXXd a = Eigen::ArrayXXd::Zero(s1.rows(), s1.cols());
        if (ga.on[kD1]) a += g(kD1) * s1.array();
        if (ga.on[kD11]) a += 2.0 * g(kD11) * s2.array() * z(kD1);
        if (ga.on[kD01]) a += g(kD01) * s2.array() * z(kD0);
        gz.at(kD1) = a;
        gz.on[kD1] = true;
    }
    for (Chan c : {kD00, kD11, kD01}) {
        if (!ga.on[static_cast<int>(c)]) continue;
        gz.at(c) = ga.at(c).array() * s1.array();
        gz.on[static_cast<int>(c)] = true;
    }
    return gz;
}

inline void reverse_linear(const Channels& a_prev, const DenseLayer& layer, const Channels& gz, Matrix& gW,
                           Vector& gb, Channels& ga_prev) {
    for (int ci = 0; ci < kChanCount; ++ci) {
        if (!gz.on[ci]) continue;
        gW.noalias() += a_prev.m[ci].transpose() * gz.m[ci];
        if (ga_prev.on[ci])
            ga_prev.m[ci].noalias() += gz.m[ci] * layer.W.transpose();
        else {
            ga_prev.m[ci].noalias() = gz.m[ci] * layer.W.transpose();
            ga_prev.on[ci] = true;
        }
    }
    if (gz.on[kVal]) gb += gz.m[kVal].colwise().sum().transpose();
}

}  // namespace detail

// d(loss)/d(theta) over every trunk and head parameter, same flat layout as
// MlpParams::to_vector. Requires the graph's forward traces to be populated.
inline Vector grad_weights(const MlpParams& params, const LossGraph& graph) {
    std::vector<Matrix> gW(params.trunk.size() + 1);
    std::vector<Vector> gb(params.trunk.size() + 1);
    for (std::size_t i = 0; i < params.trunk.size(); ++i) {
        gW[i] = Matrix::Zero(params.trunk[i].W.rows(), params.trunk[i].W.cols());
        gb[i] = Vector::Zero(params.trunk[i].b.size());
    }
    gW.back() = Matrix::Zero(params.head.W.rows(), params.head.W.cols());
    gb.back() = Vector::Zero(params.head.b.size());

    for (const auto& part : graph.parts) {
        const ForwardTrace& tr = part.trace;
        if (tr.psi.m[kVal].size() == 0) throw UsageError("grad_weights: forward trace not evaluated");
        // head (linear) layer
        Channels ghidden;
        detail::reverse_linear(tr.hidden, params.head, part.seeds, gW.back(), gb.back(), ghidden);
        // trunk layers in reverse
        Channels ga = std::move(ghidden);
        for (std::size_t li = params.trunk.size(); li-- > 0;) {
            const Channels gz = detail::reverse_activation(tr.layers[li], ga);
            const Channels& a_prev = li == 0 ? tr.input : tr.layers[li - 1].a;
            Channels ga_prev;
            detail::reverse_linear(a_prev, params.trunk[li], gz, gW[li], gb[li], ga_prev);
            ga = std::move(ga_prev);
        }
    }

    Vector g(params.param_count());
    Index at = 0;
    for (std::size_t i = 0; i < gW.size(); ++i) {
        std::memcpy(g.data() + at, gW[i].data(), sizeof(double) * static_cast<std::size_t>(gW[i].size()));
        at += gW[i].size();
        std::memcpy(g.data() + at, gb[i].data(), sizeof(double) * static_cast<std::size_t>(gb[i].size()));
        at += gb[i].size();
    }
    return g;
}

}  // namespace ospinn
