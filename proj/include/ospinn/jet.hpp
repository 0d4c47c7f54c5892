#pragma once

#include "ospinn/common.hpp"

#include <array>
#include <cmath>
#include <cstdio>

namespace ospinn {

enum class ActKind { Tanh, Sin, Blend };

struct ActivationSpec {
    ActKind kind = ActKind::Tanh;
    double alpha = 0.0;  // blend only: alpha*sin + (1-alpha)*tanh

    static ActivationSpec tanh_() { return {ActKind::Tanh, 0.0}; }
    static ActivationSpec sin_() { return {ActKind::Sin, 0.0}; }
    static ActivationSpec blend(double alpha) {
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("blend alpha must be in [0,1]");
        return {ActKind::Blend, alpha};
    }

    std::string name() const {
        switch (kind) {
            case ActKind::Tanh: return "tanh";
            case ActKind::Sin: return "sin";
            case ActKind::Blend: {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "blend(%g)", alpha);
                return buf;
            }
        }
        return "?";
    }
};

// Value and first three derivatives of an activation at a point. The third
// derivative feeds the reverse sweep through second-order jet channels.
struct ActDerivs {
    double f0, f1, f2, f3;
};

inline ActDerivs act_derivs(const ActivationSpec& act, double z) {
    auto tanh_part = [](double v) {
        const double T = std::tanh(v);
        const double S = 1.0 - T * T;  // sech^2
        return ActDerivs{T, S, -2.0 * T * S, -2.0 * S * (1.0 - 3.0 * T * T)};
    };
    auto sin_part = [](double v) { return ActDerivs{std::sin(v), std::cos(v), -std::sin(v), -std::cos(v)}; };
    switch (act.kind) {
        case ActKind::Tanh: return tanh_part(z);
        case ActKind::Sin: return sin_part(z);
        case ActKind::Blend: {
            const ActDerivs s = sin_part(z), t = tanh_part(z);
            const double a = act.alpha, b = 1.0 - act.alpha;
            return {a * s.f0 + b * t.f0, a * s.f1 + b * t.f1, a * s.f2 + b * t.f2, a * s.f3 + b * t.f3};
        }
    }
    throw ConfigError("unknown activation");
}

// Truncated order-2 Taylor jet over at most two tracked input dims. Second
// partials are stored once: d2 = (d00, d11, d01) with d01 the mixed term.
struct Jet2 {
    double value = 0.0;
    std::array<double, 2> d1{0.0, 0.0};
    std::array<double, 3> d2{0.0, 0.0, 0.0};

    static Jet2 constant(double v) { return Jet2{v, {0, 0}, {0, 0, 0}}; }
    static Jet2 variable(double v, int dim) {
        Jet2 j = constant(v);
        j.d1[static_cast<std::size_t>(dim)] = 1.0;
        return j;
    }

    Jet2 operator+(const Jet2& o) const {
        return {value + o.value,
                {d1[0] + o.d1[0], d1[1] + o.d1[1]},
                {d2[0] + o.d2[0], d2[1] + o.d2[1], d2[2] + o.d2[2]}};
    }
    Jet2 operator-(const Jet2& o) const {
        return {value - o.value,
                {d1[0] - o.d1[0], d1[1] - o.d1[1]},
                {d2[0] - o.d2[0], d2[1] - o.d2[1], d2[2] - o.d2[2]}};
    }
    Jet2 operator*(const Jet2& o) const {
        Jet2 r;
        r.value = value * o.value;
        for (int i = 0; i < 2; ++i) r.d1[i] = d1[i] * o.value + value * o.d1[i];
        r.d2[0] = d2[0] * o.value + 2.0 * d1[0] * o.d1[0] + value * o.d2[0];
        r.d2[1] = d2[1] * o.value + 2.0 * d1[1] * o.d1[1] + value * o.d2[1];
        r.d2[2] = d2[2] * o.value + d1[0] * o.d1[1] + d1[1] * o.d1[0] + value * o.d2[2];
        return r;
    }
    Jet2 operator*(double s) const {
        return {value * s, {d1[0] * s, d1[1] * s}, {d2[0] * s, d2[1] * s, d2[2] * s}};
    }
    Jet2 operator+(double s) const { return {value + s, d1, d2}; }
};

inline Jet2 operator*(double s, const Jet2& j) { return j * s; }

// Chain rule through a scalar activation:
//   out.d1 = f'(v) in.d1
//   out.d2 = f''(v) in.d1 (x) in.d1 + f'(v) in.d2
inline Jet2 jet_apply(const ActivationSpec& act, const Jet2& in) {
    const ActDerivs d = act_derivs(act, in.value);
    Jet2 out;
    out.value = d.f0;
    out.d1 = {d.f1 * in.d1[0], d.f1 * in.d1[1]};
    out.d2[0] = d.f2 * in.d1[0] * in.d1[0] + d.f1 * in.d2[0];
    out.d2[1] = d.f2 * in.d1[1] * in.d1[1] + d.f1 * in.d2[1];
    out.d2[2] = d.f2 * in.d1[0] * in.d1[1] + d.f1 * in.d2[2];
    return out;
}

}  // namespace ospinn
