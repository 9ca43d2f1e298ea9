#include "flowsync/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "flowsync/errors.hpp"

namespace flowsync {

namespace {

// Fills a rows x cols row-major matrix with a gain-scaled orthogonal block:
// Gaussian draws orthonormalised along the shorter dimension (Gram-Schmidt).
void orthogonal_fill(std::vector<double>& out, int rows, int cols, double gain, Rng& rng) {
    const int n = std::min(rows, cols);
    const int d = std::max(rows, cols);
    std::vector<std::vector<double>> v(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& vi = v[static_cast<size_t>(i)];
        vi.resize(static_cast<size_t>(d));
        double norm2 = 0.0;
        do {
            for (double& x : vi) x = rng.normal();
            for (int j = 0; j < i; ++j) {
                const auto& vj = v[static_cast<size_t>(j)];
                double proj = 0.0;
                for (int k = 0; k < d; ++k) proj += vi[static_cast<size_t>(k)] * vj[static_cast<size_t>(k)];
                for (int k = 0; k < d; ++k) vi[static_cast<size_t>(k)] -= proj * vj[static_cast<size_t>(k)];
            }
            norm2 = 0.0;
            for (double x : vi) norm2 += x * x;
        } while (norm2 < 1e-12);  // redraw on (vanishingly unlikely) degeneracy
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& x : vi) x *= inv;
    }
    out.assign(static_cast<size_t>(rows) * cols, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const double q = rows <= cols ? v[static_cast<size_t>(r)][static_cast<size_t>(c)]
                                          : v[static_cast<size_t>(c)][static_cast<size_t>(r)];
            out[static_cast<size_t>(r) * cols + c] = gain * q;
        }
}

void check_shapes(const Mlp& net, const MlpGrads& grads) {
    if (grads.w.size() != net.w.size() || grads.b.size() != net.b.size())
        throw UsageError("gradient layer count does not match the network");
    for (size_t l = 0; l < net.w.size(); ++l)
        if (grads.w[l].size() != net.w[l].size() || grads.b[l].size() != net.b[l].size())
            throw UsageError("gradient shape does not match the network");
}

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw IoError("truncated network checkpoint");
    return value;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::istream& in, std::vector<double>& v, size_t count) {
    v.resize(count);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw IoError("truncated network checkpoint");
}

constexpr uint32_t kNetMagic = 0x4e4e5346u;  // "FSNN"
constexpr uint32_t kNetVersion = 1;

}  // namespace

Mlp make_mlp(const std::vector<int>& sizes, bool softmax_output, Rng& rng, double hidden_gain,
             double output_gain) {
    if (sizes.size() < 2) throw UsageError("a network needs at least an input and an output layer");
    for (int s : sizes)
        if (s < 1) throw UsageError("layer sizes must be positive");
    Mlp net;
    net.sizes = sizes;
    net.softmax_output = softmax_output;
    const int L = net.layer_count();
    net.w.resize(static_cast<size_t>(L));
    net.b.resize(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        const int rows = sizes[static_cast<size_t>(l) + 1];
        const int cols = sizes[static_cast<size_t>(l)];
        const double gain = l == L - 1 ? output_gain : hidden_gain;
        orthogonal_fill(net.w[static_cast<size_t>(l)], rows, cols, gain, rng);
        net.b[static_cast<size_t>(l)].assign(static_cast<size_t>(rows), 0.0);
    }
    net.mw = net.w;
    net.mb = net.b;
    for (auto& m : net.mw) std::fill(m.begin(), m.end(), 0.0);
    for (auto& m : net.mb) std::fill(m.begin(), m.end(), 0.0);
    net.vw = net.mw;
    net.vb = net.mb;
    return net;
}

void MlpWorkspace::prepare(const Mlp& net) {
    const size_t L = static_cast<size_t>(net.layer_count());
    if (act.size() != L + 1) act.resize(L + 1);
    if (pre.size() != L) pre.resize(L);
    for (size_t l = 0; l <= L; ++l) act[l].resize(static_cast<size_t>(net.sizes[l]));
    for (size_t l = 0; l < L; ++l) pre[l].resize(static_cast<size_t>(net.sizes[l + 1]));
}

MlpGrads make_grads(const Mlp& net) {
    MlpGrads g;
    g.w = net.w;
    g.b = net.b;
    zero_grads(g);
    return g;
}

void zero_grads(MlpGrads& g) {
    for (auto& v : g.w) std::fill(v.begin(), v.end(), 0.0);
    for (auto& v : g.b) std::fill(v.begin(), v.end(), 0.0);
}

const std::vector<double>& mlp_forward(const Mlp& net, const std::vector<double>& input,
                                       MlpWorkspace& ws) {
    if (static_cast<int>(input.size()) != net.input_size())
        throw UsageError("input width does not match the network");
    ws.prepare(net);
    const int L = net.layer_count();
    std::copy(input.begin(), input.end(), ws.act[0].begin());
    for (int l = 0; l < L; ++l) {
        const int in_n = net.sizes[static_cast<size_t>(l)];
        const int out_n = net.sizes[static_cast<size_t>(l) + 1];
        const double* W = net.w[static_cast<size_t>(l)].data();
        const double* B = net.b[static_cast<size_t>(l)].data();
        const double* x = ws.act[static_cast<size_t>(l)].data();
        double* z = ws.pre[static_cast<size_t>(l)].data();
        for (int o = 0; o < out_n; ++o) {
            const double* row = W + static_cast<size_t>(o) * in_n;
            double s = B[o];
            for (int i = 0; i < in_n; ++i) s += row[i] * x[i];
            z[o] = s;
        }
        double* a = ws.act[static_cast<size_t>(l) + 1].data();
        if (l + 1 < L) {
            for (int o = 0; o < out_n; ++o) a[o] = std::tanh(z[o]);
        } else if (net.softmax_output) {
            double m = z[0];
            for (int o = 1; o < out_n; ++o) m = std::max(m, z[o]);
            double sum = 0.0;
            for (int o = 0; o < out_n; ++o) sum += std::exp(z[o] - m);
            const double lse = m + std::log(sum);
            for (int o = 0; o < out_n; ++o) a[o] = std::exp(z[o] - lse);
        } else {
            for (int o = 0; o < out_n; ++o) a[o] = z[o];
        }
    }
    const auto& out = ws.act[static_cast<size_t>(L)];
    for (double v : out)
        if (!std::isfinite(v)) throw NumericError("network produced a non-finite output");
    return out;
}

CategoricalDist policy_forward(const Mlp& net, const std::vector<uint8_t>& observation,
                               MlpWorkspace& ws) {
    if (!net.softmax_output) throw UsageError("policy_forward needs a softmax-headed network");
    ws.input.resize(observation.size());
    for (size_t i = 0; i < observation.size(); ++i) ws.input[i] = observation[i] ? 1.0 : 0.0;
    const auto& probs = mlp_forward(net, ws.input, ws);
    CategoricalDist dist;
    dist.probs = probs;
    const auto& z = ws.pre.back();
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    const double lse = m + std::log(sum);
    dist.log_probs.resize(z.size());
    for (size_t i = 0; i < z.size(); ++i) dist.log_probs[i] = z[i] - lse;
    return dist;
}

double value_forward(const Mlp& net, const std::vector<uint8_t>& observation, MlpWorkspace& ws) {
    if (net.softmax_output || net.output_size() != 1)
        throw UsageError("value_forward needs a scalar identity-headed network");
    ws.input.resize(observation.size());
    for (size_t i = 0; i < observation.size(); ++i) ws.input[i] = observation[i] ? 1.0 : 0.0;
    return mlp_forward(net, ws.input, ws)[0];
}

double entropy(const CategoricalDist& dist) {
    double h = 0.0;
    for (size_t i = 0; i < dist.probs.size(); ++i)
        if (dist.probs[i] > 0.0) h -= dist.probs[i] * dist.log_probs[i];
    return h;
}

void mlp_backward(const Mlp& net, MlpWorkspace& ws, const std::vector<double>& grad_logits,
                  MlpGrads& grads) {
    check_shapes(net, grads);
    if (static_cast<int>(grad_logits.size()) != net.output_size())
        throw UsageError("logit gradient width does not match the network");
    const int L = net.layer_count();
    ws.delta.assign(grad_logits.begin(), grad_logits.end());
    for (int l = L - 1; l >= 0; --l) {
        const int in_n = net.sizes[static_cast<size_t>(l)];
        const int out_n = net.sizes[static_cast<size_t>(l) + 1];
        const double* x = ws.act[static_cast<size_t>(l)].data();
        double* gw = grads.w[static_cast<size_t>(l)].data();
        double* gb = grads.b[static_cast<size_t>(l)].data();
        for (int o = 0; o < out_n; ++o) {
            const double d = ws.delta[static_cast<size_t>(o)];
            gb[o] += d;
            double* row = gw + static_cast<size_t>(o) * in_n;
            for (int i = 0; i < in_n; ++i) row[i] += d * x[i];
        }
        if (l == 0) break;
        const double* W = net.w[static_cast<size_t>(l)].data();
        ws.delta_prev.assign(static_cast<size_t>(in_n), 0.0);
        for (int o = 0; o < out_n; ++o) {
            const double d = ws.delta[static_cast<size_t>(o)];
            const double* row = W + static_cast<size_t>(o) * in_n;
            for (int i = 0; i < in_n; ++i) ws.delta_prev[static_cast<size_t>(i)] += d * row[i];
        }
        for (int i = 0; i < in_n; ++i) ws.delta_prev[static_cast<size_t>(i)] *= 1.0 - x[i] * x[i];
        std::swap(ws.delta, ws.delta_prev);
    }
}

ActionSample sample_action(const CategoricalDist& dist, Rng& rng) {
    if (dist.probs.empty() || dist.probs.size() != dist.log_probs.size())
        throw UsageError("cannot sample from an empty or inconsistent distribution");
    const double u = rng.uniform();
    double cum = 0.0;
    for (size_t i = 0; i < dist.probs.size(); ++i) {
        cum += dist.probs[i];
        if (u < cum) return {static_cast<int>(i), dist.log_probs[i]};
    }
    const size_t last = dist.probs.size() - 1;
    return {static_cast<int>(last), dist.log_probs[last]};
}

void adam_step(Mlp& net, const MlpGrads& grads, const AdamConfig& cfg) {
    check_shapes(net, grads);
    ++net.adam_steps;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(net.adam_steps));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(net.adam_steps));
    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            p[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
            if (!std::isfinite(p[i])) throw NumericError("optimizer produced a non-finite parameter");
        }
    };
    for (size_t l = 0; l < net.w.size(); ++l) {
        update(net.w[l], grads.w[l], net.mw[l], net.vw[l]);
        update(net.b[l], grads.b[l], net.mb[l], net.vb[l]);
    }
}

void save_mlp(std::ostream& out, const Mlp& net) {
    write_pod(out, kNetMagic);
    write_pod(out, kNetVersion);
    write_pod(out, static_cast<uint8_t>(net.softmax_output ? 1 : 0));
    write_pod(out, static_cast<uint32_t>(net.sizes.size()));
    for (int s : net.sizes) write_pod(out, static_cast<int32_t>(s));
    write_pod(out, net.adam_steps);
    for (size_t l = 0; l < net.w.size(); ++l) {
        write_doubles(out, net.w[l]);
        write_doubles(out, net.b[l]);
        write_doubles(out, net.mw[l]);
        write_doubles(out, net.vw[l]);
        write_doubles(out, net.mb[l]);
        write_doubles(out, net.vb[l]);
    }
    if (!out) throw IoError("failed to write network checkpoint");
}

Mlp load_mlp(std::istream& in) {
    if (read_pod<uint32_t>(in) != kNetMagic) throw IoError("not a network checkpoint");
    if (read_pod<uint32_t>(in) != kNetVersion) throw IoError("unsupported network checkpoint version");
    Mlp net;
    net.softmax_output = read_pod<uint8_t>(in) != 0;
    const uint32_t n_sizes = read_pod<uint32_t>(in);
    if (n_sizes < 2 || n_sizes > 64) throw IoError("corrupt network checkpoint: bad layer count");
    net.sizes.resize(n_sizes);
    for (auto& s : net.sizes) {
        s = read_pod<int32_t>(in);
        if (s < 1 || s > 1 << 20) throw IoError("corrupt network checkpoint: bad layer size");
    }
    net.adam_steps = read_pod<int64_t>(in);
    const size_t L = n_sizes - 1;
    net.w.resize(L);
    net.b.resize(L);
    net.mw.resize(L);
    net.vw.resize(L);
    net.mb.resize(L);
    net.vb.resize(L);
    for (size_t l = 0; l < L; ++l) {
        const size_t rows = static_cast<size_t>(net.sizes[l + 1]);
        const size_t cols = static_cast<size_t>(net.sizes[l]);
        read_doubles(in, net.w[l], rows * cols);
        read_doubles(in, net.b[l], rows);
        read_doubles(in, net.mw[l], rows * cols);
        read_doubles(in, net.vw[l], rows * cols);
        read_doubles(in, net.mb[l], rows);
        read_doubles(in, net.vb[l], rows);
    }
    return net;
}

}  // namespace flowsync
