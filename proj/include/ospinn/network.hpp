#pragma once

#include "ospinn/jet.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <optional>
#include <vector>

#include "json.hpp"

namespace ospinn {

// Derivative channels carried alongside network values. D0/D1 are first
// partials w.r.t. input dims 0/1; D00/D11/D01 the second partials. For a
// time-only network dim0 is t; for PDEs dims are (t,x) or (x,y).
enum Chan : int { kVal = 0, kD0, kD1, kD00, kD11, kD01, kChanCount };

inline bool chan_needs_dim1(Chan c) { return c == kD1 || c == kD11 || c == kD01; }

struct DerivativeRequest {
    std::array<bool, kChanCount> want{};  // kVal implied

    DerivativeRequest() { want[kVal] = true; }
    DerivativeRequest& add(Chan c) {
        want[static_cast<int>(c)] = true;
        if (c == kD00) want[kD0] = true;
        if (c == kD11) want[kD1] = true;
        if (c == kD01) want[kD0] = want[kD1] = true;
        return *this;
    }
    bool has(Chan c) const { return want[static_cast<int>(c)]; }

    static DerivativeRequest value_only() { return {}; }
    static DerivativeRequest time_derivs(int order) {
        DerivativeRequest r;
        r.add(kD0);
        if (order >= 2) r.add(kD00);
        return r;
    }
    static DerivativeRequest all() {
        DerivativeRequest r;
        r.add(kD00).add(kD11).add(kD01);
        return r;
    }
};

// Per-channel matrix bundle (all active matrices share shape m x width).
struct Channels {
    std::array<Matrix, kChanCount> m;
    std::array<bool, kChanCount> on{};

    Matrix& at(Chan c) { return m[static_cast<int>(c)]; }
    const Matrix& at(Chan c) const {
        if (!on[static_cast<int>(c)]) throw UsageError("derivative channel not evaluated");
        return m[static_cast<int>(c)];
    }
};

struct ArchSpec {
    int input_dim = 1;
    std::vector<int> hidden{100, 100};
    int heads = 1;
    ActivationSpec activation = ActivationSpec::tanh_();
};

struct DenseLayer {
    Matrix W;  // fan_in x fan_out
    Vector b;
};

struct MlpParams {
    int input_dim = 1;
    int heads = 1;
    ActivationSpec activation;
    std::vector<DenseLayer> trunk;
    DenseLayer head;  // h x q
    bool frozen = false;
    std::uint64_t seed = 0;
    std::string provenance;

    Index hidden_dim() const { return trunk.empty() ? input_dim : trunk.back().W.cols(); }

    Index param_count() const {
        Index n = head.W.size() + head.b.size();
        for (const auto& l : trunk) n += l.W.size() + l.b.size();
        return n;
    }

    // Flat layout: trunk layers in order (W column-major, then b), head last.
    Vector to_vector() const {
        Vector v(param_count());
        Index at = 0;
        auto put = [&](const DenseLayer& l) {
            std::memcpy(v.data() + at, l.W.data(), sizeof(double) * static_cast<std::size_t>(l.W.size()));
            at += l.W.size();
            std::memcpy(v.data() + at, l.b.data(), sizeof(double) * static_cast<std::size_t>(l.b.size()));
            at += l.b.size();
        };
        for (const auto& l : trunk) put(l);
        put(head);
        return v;
    }

    void from_vector(const Vector& v) {
        if (v.size() != param_count()) throw UsageError("parameter vector size mismatch");
        Index at = 0;
        auto take = [&](DenseLayer& l) {
            std::memcpy(l.W.data(), v.data() + at, sizeof(double) * static_cast<std::size_t>(l.W.size()));
            at += l.W.size();
            std::memcpy(l.b.data(), v.data() + at, sizeof(double) * static_cast<std::size_t>(l.b.size()));
            at += l.b.size();
        };
        for (auto& l : trunk) take(l);
        take(head);
    }

    std::uint64_t hash() const {
        const Vector v = to_vector();
        std::uint64_t h = fnv1a(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
        h = fnv1a(&input_dim, sizeof(int), h);
        h = fnv1a(&heads, sizeof(int), h);
        return h;
    }
};

inline MlpParams init_network(const ArchSpec& arch, std::uint64_t seed) {
    if (arch.input_dim < 1 || arch.input_dim > 2) throw ConfigError("input_dim must be 1 or 2");
    if (arch.heads < 1) throw ConfigError("heads must be >= 1");
    for (int w : arch.hidden)
        if (w < 1) throw ConfigError("zero-width hidden layer");

    Rng rng(seed);
    auto xavier = [&](Index fan_in, Index fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix W(fan_in, fan_out);
        for (Index j = 0; j < fan_out; ++j)
            for (Index i = 0; i < fan_in; ++i) W(i, j) = rng.uniform(-limit, limit);
        return W;
    };

    MlpParams p;
    p.input_dim = arch.input_dim;
    p.heads = arch.heads;
    p.activation = arch.activation;
    p.seed = seed;
    Index fan_in = arch.input_dim;
    for (int w : arch.hidden) {
        p.trunk.push_back({xavier(fan_in, w), Vector::Zero(w)});
        fan_in = w;
    }
    p.head = {xavier(fan_in, arch.heads), Vector::Zero(arch.heads)};
    return p;
}

// Cached state of one trunk layer, kept for the reverse sweep.
struct LayerTrace {
    Channels z;                // pre-activation channels
    Channels a;                // post-activation channels
    Matrix s1, s2, s3;         // activation derivative tables at z.val
};

struct ForwardTrace {
    Channels input;
    std::vector<LayerTrace> layers;
    Channels hidden;  // alias of last layer's a (or input when no trunk)
    Channels psi;     // head outputs per channel, m x q
};

namespace detail {

inline Channels input_channels(const Matrix& points, int input_dim, const DerivativeRequest& req) {
    const Index m = points.rows();
    Channels c;
    c.at(kVal) = points;
    c.on[kVal] = true;
    for (int ci = kD0; ci < kChanCount; ++ci) {
        const Chan ch = static_cast<Chan>(ci);
        if (!req.has(ch)) continue;
        if (chan_needs_dim1(ch) && input_dim < 2)
            throw UsageError("requested spatial derivative on a 1-input network");
        Matrix d = Matrix::Zero(m, input_dim);
        if (ch == kD0) d.col(0).setOnes();
        if (ch == kD1) d.col(1).setOnes();
        c.at(ch) = std::move(d);
        c.on[ci] = true;
    }
    return c;
}

inline Channels linear_channels(const Channels& a, const DenseLayer& layer) {
    Channels z;
    for (int ci = 0; ci < kChanCount; ++ci) {
        if (!a.on[ci]) continue;
        z.m[ci].noalias() = a.m[ci] * layer.W;
        z.on[ci] = true;
    }
    z.at(kVal).rowwise() += layer.b.transpose();
    return z;
}

inline void activation_tables(const ActivationSpec& act, const Matrix& zval, Matrix& s1, Matrix& s2, Matrix& s3,
                              Matrix& val) {
    const Index m = zval.rows(), w = zval.cols();
    val.resize(m, w);
    s1.resize(m, w);
    s2.resize(m, w);
    s3.resize(m, w);
    for (Index j = 0; j < w; ++j)
        for (Index i = 0; i < m; ++i) {
            const ActDerivs d = act_derivs(act, zval(i, j));
            val(i, j) = d.f0;
            s1(i, j) = d.f1;
            s2(i, j) = d.f2;
            s3(i, j) = d.f3;
        }
}

// Chain rule per channel (matrix form of jet_apply).
inline Channels activate_channels(const Channels& z, const Matrix& s1, const Matrix& s2, const Matrix& val) {
    Channels a;
    a.at(kVal) = val;
    a.on[kVal] = true;
    auto arr = [&](Chan c) { return z.at(c).array(); };
    if (z.on[kD0]) {
        a.at(kD0) = s1.array() * arr(kD0);
        a.on[kD0] = true;
    }
    if (z.on[kD1]) {
        a.at(kD1) = s1.array() * arr(kD1);
        a.on[kD1] = true;
    }
    if (z.on[kD00]) {
        a.at(kD00) = s2.array() * arr(kD0).square() + s1.array() * arr(kD00);
        a.on[kD00] = true;
    }
    if (z.on[kD11]) {
        a.at(kD11) = s2.array() * arr(kD1).square() + s1.array() * arr(kD11);
        a.on[kD11] = true;
    }
    if (z.on[kD01]) {
        a.at(kD01) = s2.array() * arr(kD0) * arr(kD1) + s1.array() * arr(kD01);
        a.on[kD01] = true;
    }
    return a;
}

}  // namespace detail

// Trunk + head forward pass carrying all requested derivative channels.
// The trace holds everything the reverse sweep needs.
inline ForwardTrace forward_trace(const MlpParams& params, const Matrix& points, const DerivativeRequest& req) {
    if (points.cols() != params.input_dim) throw UsageError("point dimension mismatch");
    if (points.rows() == 0) throw UsageError("empty grid");
    ForwardTrace tr;
    tr.input = detail::input_channels(points, params.input_dim, req);
    const Channels* cur = &tr.input;
    tr.layers.reserve(params.trunk.size());
    for (const auto& layer : params.trunk) {
        LayerTrace lt;
        lt.z = detail::linear_channels(*cur, layer);
        Matrix val;
        detail::activation_tables(params.activation, lt.z.at(kVal), lt.s1, lt.s2, lt.s3, val);
        lt.a = detail::activate_channels(lt.z, lt.s1, lt.s2, val);
        tr.layers.push_back(std::move(lt));
        cur = &tr.layers.back().a;
    }
    tr.hidden = *cur;
    tr.psi = detail::linear_channels(*cur, params.head);
    return tr;
}

// Frozen hidden states H plus requested input-derivative matrices on a grid.
struct JetBatch {
    Matrix points;  // m x input_dim
    Channels chan;  // chan[kVal] = H, m x h
    std::uint64_t checkpoint_hash = 0;
    std::uint64_t grid_hash = 0;

    Index rows() const { return chan.m[kVal].rows(); }
    Index width() const { return chan.m[kVal].cols(); }
    const Matrix& H() const { return chan.m[kVal]; }
    const Matrix& d(Chan c) const { return chan.at(c); }
    bool has(Chan c) const { return chan.on[static_cast<int>(c)]; }
};

inline JetBatch eval_hidden(const MlpParams& params, const Matrix& grid, const DerivativeRequest& req) {
    ForwardTrace tr = forward_trace(params, grid, req);
    JetBatch jb;
    jb.points = grid;
    jb.chan = std::move(tr.hidden);
    jb.checkpoint_hash = params.hash();
    jb.grid_hash = hash_matrix(grid);
    return jb;
}

// Single-point variant: one row of H with its requested derivative rows.
inline JetBatch jet_forward(const MlpParams& params, const Vector& point, const DerivativeRequest& req) {
    return eval_hidden(params, point.transpose(), req);
}

// ---- checkpoint persistence ------------------------------------------------
//
// Layout: magic "OSPNCKPT" | u32 schema version | u64 header length |
// JSON header (architecture, activation, seed, provenance, array shapes) |
// raw little-endian 64-bit floats, column-major, in header order.

inline constexpr char kCheckpointMagic[8] = {'O', 'S', 'P', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void save_checkpoint(const MlpParams& params, const std::string& path) {
    nlohmann::json hdr;
    hdr["input_dim"] = params.input_dim;
    hdr["heads"] = params.heads;
    hdr["activation"] = {{"kind", static_cast<int>(params.activation.kind)}, {"alpha", params.activation.alpha}};
    hdr["seed"] = params.seed;
    hdr["frozen"] = params.frozen;
    hdr["provenance"] = params.provenance;
    auto shape = [](const DenseLayer& l) {
        return nlohmann::json{{"rows", l.W.rows()}, {"cols", l.W.cols()}};
    };
    hdr["trunk"] = nlohmann::json::array();
    for (const auto& l : params.trunk) hdr["trunk"].push_back(shape(l));
    hdr["head"] = shape(params.head);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
    const std::string htxt = hdr.dump();
    const std::uint64_t hlen = htxt.size();
    f.write(kCheckpointMagic, 8);
    f.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof(kCheckpointVersion));
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(htxt.data(), static_cast<std::streamsize>(hlen));
    auto put = [&](const DenseLayer& l) {
        f.write(reinterpret_cast<const char*>(l.W.data()), static_cast<std::streamsize>(sizeof(double) * l.W.size()));
        f.write(reinterpret_cast<const char*>(l.b.data()), static_cast<std::streamsize>(sizeof(double) * l.b.size()));
    };
    for (const auto& l : params.trunk) put(l);
    put(params.head);
    if (!f) throw CheckpointError("checkpoint write failed: " + path);
}

inline MlpParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("not a checkpoint file: " + path);
    std::uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!f || version != kCheckpointVersion)
        throw CheckpointError("checkpoint schema version mismatch in " + path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f || hlen > (1u << 20)) throw CheckpointError("corrupt checkpoint header: " + path);
    std::string htxt(hlen, '\0');
    f.read(htxt.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json hdr;
    try {
        hdr = nlohmann::json::parse(htxt);
    } catch (const nlohmann::json::exception&) {
        throw CheckpointError("corrupt checkpoint header: " + path);
    }

    MlpParams p;
    p.input_dim = hdr.at("input_dim").get<int>();
    p.heads = hdr.at("heads").get<int>();
    p.activation.kind = static_cast<ActKind>(hdr.at("activation").at("kind").get<int>());
    p.activation.alpha = hdr.at("activation").at("alpha").get<double>();
    p.seed = hdr.at("seed").get<std::uint64_t>();
    p.frozen = hdr.at("frozen").get<bool>();
    p.provenance = hdr.value("provenance", "");
    auto take = [&](DenseLayer& l, Index rows, Index cols) {
        l.W.resize(rows, cols);
        l.b.resize(cols);
        f.read(reinterpret_cast<char*>(l.W.data()), static_cast<std::streamsize>(sizeof(double) * l.W.size()));
        f.read(reinterpret_cast<char*>(l.b.data()), static_cast<std::streamsize>(sizeof(double) * l.b.size()));
        if (!f) throw CheckpointError("checkpoint truncated (shape mismatch): " + path);
    };
    Index fan_in = p.input_dim;
    for (const auto& s : hdr.at("trunk")) {
        DenseLayer l;
        const Index rows = s.at("rows").get<Index>(), cols = s.at("cols").get<Index>();
        if (rows != fan_in) throw CheckpointError("checkpoint layer shapes do not chain: " + path);
        take(l, rows, cols);
        p.trunk.push_back(std::move(l));
        fan_in = cols;
    }
    const auto& hs = hdr.at("head");
    if (hs.at("rows").get<Index>() != fan_in) throw CheckpointError("checkpoint head shape mismatch: " + path);
    take(p.head, fan_in, hs.at("cols").get<Index>());
    if (p.head.W.cols() != p.heads) throw CheckpointError("checkpoint head count mismatch: " + path);
    // must be at EOF
    f.peek();
    if (!f.eof()) throw CheckpointError("trailing bytes in checkpoint: " + path);
    return p;
}

}  // namespace ospinn
