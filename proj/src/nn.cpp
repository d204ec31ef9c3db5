#include "prefdrive/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "prefdrive/rng.hpp"

namespace prefdrive::nn {

namespace {

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

} // namespace

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(numel(shape), 0.0f) {}

const std::array<const char*, kNumParamTensors> kParamNames = {
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w",
    "conv3_b", "dense_w", "dense_b", "head_w",  "head_b"};

NetConfig NetConfig::paper() { return NetConfig{}; }

NetConfig NetConfig::desk() {
    NetConfig cfg;
    cfg.in_h = cfg.in_w = 32;
    cfg.conv = {{{16, 4, 2}, {32, 4, 2}, {32, 3, 1}}};
    cfg.dense_units = 256;
    return cfg;
}

NetConfig::Shapes NetConfig::shapes() const {
    if (in_channels < 1 || in_h < 1 || in_w < 1 || dense_units < 1 || outputs < 1)
        throw ConfigError("NetConfig: non-positive dimension");
    Shapes s;
    s.h[0] = in_h;
    s.w[0] = in_w;
    for (int i = 0; i < 3; ++i) {
        const auto& c = conv[static_cast<std::size_t>(i)];
        if (c.filters < 1 || c.kernel < 1 || c.stride < 1)
            throw ConfigError("NetConfig: bad conv spec");
        if (s.h[i] < c.kernel || s.w[i] < c.kernel)
            throw ConfigError("NetConfig: kernel larger than its input");
        s.h[i + 1] = (s.h[i] - c.kernel) / c.stride + 1;
        s.w[i + 1] = (s.w[i] - c.kernel) / c.stride + 1;
    }
    s.flatten = conv[2].filters * s.h[3] * s.w[3];
    return s;
}

QNetwork make_network(const NetConfig& cfg) {
    const auto s = cfg.shapes();
    QNetwork net;
    net.cfg = cfg;
    int in_c = cfg.in_channels;
    for (int i = 0; i < 3; ++i) {
        const auto& c = cfg.conv[static_cast<std::size_t>(i)];
        net.params.emplace_back(std::vector<int>{c.filters, in_c, c.kernel, c.kernel});
        net.params.emplace_back(std::vector<int>{c.filters});
        in_c = c.filters;
    }
    net.params.emplace_back(std::vector<int>{cfg.dense_units, s.flatten});
    net.params.emplace_back(std::vector<int>{cfg.dense_units});
    net.params.emplace_back(std::vector<int>{cfg.outputs, cfg.dense_units});
    net.params.emplace_back(std::vector<int>{cfg.outputs});
    return net;
}

QNetwork init_network(const NetConfig& cfg, std::uint64_t seed) {
    QNetwork net = make_network(cfg);
    for (int t = 0; t < kNumParamTensors; t += 2) { // weight tensors only
        auto& w = net.params[static_cast<std::size_t>(t)];
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < w.shape.size(); ++d)
            fan_in *= static_cast<std::size_t>(w.shape[d]);
        const bool rectified = t < 8; // head stays linear
        const double sd = std::sqrt((rectified ? 2.0 : 1.0) / static_cast<double>(fan_in));
        Rng rng = Rng(seed).derive(kParamNames[static_cast<std::size_t>(t)]);
        for (auto& x : w.data) x = static_cast<float>(sd * rng.normal());
    }
    return net;
}

namespace {

// valid convolution: out[f,oy,ox] = b[f] + sum in[c, oy*s+ky, ox*s+kx] w[f,c,ky,kx]
void conv_forward(const float* in, int c, int h, int w, const float* wgt, const float* bias,
                  int f, int k, int stride, int oh, int ow, float* out) {
    for (int fo = 0; fo < f; ++fo)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = bias[fo];
                const float* wf = wgt + static_cast<std::size_t>(fo) * c * k * k;
                for (int ci = 0; ci < c; ++ci) {
                    const float* plane = in + static_cast<std::size_t>(ci) * h * w;
                    const float* wc = wf + static_cast<std::size_t>(ci) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        const float* row = plane + static_cast<std::size_t>(oy * stride + ky) * w +
                                           ox * stride;
                        const float* wr = wc + static_cast<std::size_t>(ky) * k;
                        for (int kx = 0; kx < k; ++kx) acc += static_cast<double>(row[kx]) * wr[kx];
                    }
                }
                out[(static_cast<std::size_t>(fo) * oh + oy) * ow + ox] = static_cast<float>(acc);
            }
}

void conv_backward(const float* in, int c, int h, int w, const float* wgt, int f, int k,
                   int stride, int oh, int ow, const float* gout, double* gin, double* gwgt,
                   double* gbias) {
    for (int fo = 0; fo < f; ++fo) {
        const float* wf = wgt + static_cast<std::size_t>(fo) * c * k * k;
        double* gwf = gwgt + static_cast<std::size_t>(fo) * c * k * k;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const double g = gout[(static_cast<std::size_t>(fo) * oh + oy) * ow + ox];
                if (g == 0.0) continue;
                gbias[fo] += g;
                for (int ci = 0; ci < c; ++ci) {
                    const float* plane = in + static_cast<std::size_t>(ci) * h * w;
                    double* gplane = gin + static_cast<std::size_t>(ci) * h * w;
                    const float* wc = wf + static_cast<std::size_t>(ci) * k * k;
                    double* gwc = gwf + static_cast<std::size_t>(ci) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        const std::size_t row = static_cast<std::size_t>(oy * stride + ky) * w +
                                                static_cast<std::size_t>(ox * stride);
                        for (int kx = 0; kx < k; ++kx) {
                            gwc[ky * k + kx] += plane[row + kx] * g;
                            gplane[row + kx] += wc[ky * k + kx] * g;
                        }
                    }
                }
            }
    }
}

void relu_inplace(std::vector<float>& v) {
    for (auto& x : v)
        if (x < 0.0f) x = 0.0f;
}

} // namespace

ForwardCache forward_full(const QNetwork& net, const std::vector<float>& obs) {
    const auto s = net.cfg.shapes();
    const std::size_t in_size =
        static_cast<std::size_t>(net.cfg.in_channels) * s.h[0] * s.w[0];
    if (obs.size() != in_size)
        throw ConfigError("forward: input size " + std::to_string(obs.size()) + ", expected " +
                          std::to_string(in_size));

    ForwardCache cache;
    cache.input = obs;
    const float* cur = cache.input.data();
    int cur_c = net.cfg.in_channels;
    for (int i = 0; i < 3; ++i) {
        const auto& cs = net.cfg.conv[static_cast<std::size_t>(i)];
        auto& pre = cache.conv_pre[static_cast<std::size_t>(i)];
        pre.assign(static_cast<std::size_t>(cs.filters) * s.h[i + 1] * s.w[i + 1], 0.0f);
        conv_forward(cur, cur_c, s.h[i], s.w[i],
                     net.params[static_cast<std::size_t>(2 * i)].data.data(),
                     net.params[static_cast<std::size_t>(2 * i + 1)].data.data(), cs.filters,
                     cs.kernel, cs.stride, s.h[i + 1], s.w[i + 1], pre.data());
        cache.conv_post[static_cast<std::size_t>(i)] = pre;
        relu_inplace(cache.conv_post[static_cast<std::size_t>(i)]);
        cur = cache.conv_post[static_cast<std::size_t>(i)].data();
        cur_c = cs.filters;
    }

    const auto& dw = net.params[6];
    const auto& db = net.params[7];
    cache.dense_pre.resize(static_cast<std::size_t>(net.cfg.dense_units));
    for (int u = 0; u < net.cfg.dense_units; ++u) {
        double acc = db.data[static_cast<std::size_t>(u)];
        const float* row = dw.data.data() + static_cast<std::size_t>(u) * s.flatten;
        for (int i = 0; i < s.flatten; ++i) acc += static_cast<double>(row[i]) * cur[i];
        cache.dense_pre[static_cast<std::size_t>(u)] = static_cast<float>(acc);
    }
    cache.dense_post = cache.dense_pre;
    relu_inplace(cache.dense_post);

    const auto& hw = net.params[8];
    const auto& hb = net.params[9];
    cache.q.resize(static_cast<std::size_t>(net.cfg.outputs));
    for (int o = 0; o < net.cfg.outputs; ++o) {
        double acc = hb.data[static_cast<std::size_t>(o)];
        const float* row = hw.data.data() + static_cast<std::size_t>(o) * net.cfg.dense_units;
        for (int u = 0; u < net.cfg.dense_units; ++u)
            acc += static_cast<double>(row[u]) * cache.dense_post[static_cast<std::size_t>(u)];
        cache.q[static_cast<std::size_t>(o)] = static_cast<float>(acc);
    }
    return cache;
}

std::vector<float> forward(const QNetwork& net, const std::vector<float>& obs) {
    return forward_full(net, obs).q;
}

std::vector<Tensor> zero_gradients(const NetConfig& cfg) {
    return make_network(cfg).params;
}

std::vector<Tensor> backward(const QNetwork& net, const ForwardCache& cache,
                             const std::vector<float>& grad_q) {
    const auto s = net.cfg.shapes();
    if (grad_q.size() != static_cast<std::size_t>(net.cfg.outputs))
        throw ConfigError("backward: grad_q size mismatch");

    auto grads = zero_gradients(net.cfg);
    std::vector<std::vector<double>> acc(kNumParamTensors);
    for (int t = 0; t < kNumParamTensors; ++t)
        acc[static_cast<std::size_t>(t)].assign(grads[static_cast<std::size_t>(t)].size(), 0.0);

    // head
    std::vector<double> g_dense_post(static_cast<std::size_t>(net.cfg.dense_units), 0.0);
    const auto& hw = net.params[8];
    for (int o = 0; o < net.cfg.outputs; ++o) {
        const double g = grad_q[static_cast<std::size_t>(o)];
        acc[9][static_cast<std::size_t>(o)] += g;
        const float* row = hw.data.data() + static_cast<std::size_t>(o) * net.cfg.dense_units;
        for (int u = 0; u < net.cfg.dense_units; ++u) {
            acc[8][static_cast<std::size_t>(o) * net.cfg.dense_units + u] +=
                g * cache.dense_post[static_cast<std::size_t>(u)];
            g_dense_post[static_cast<std::size_t>(u)] += g * row[u];
        }
    }

    // dense (+ rectifier mask: gradient is zero where the pre-activation <= 0)
    std::vector<double> g_flat(static_cast<std::size_t>(s.flatten), 0.0);
    const auto& dw = net.params[6];
    const auto& flat_in = cache.conv_post[2];
    for (int u = 0; u < net.cfg.dense_units; ++u) {
        if (cache.dense_pre[static_cast<std::size_t>(u)] <= 0.0f) continue;
        const double g = g_dense_post[static_cast<std::size_t>(u)];
        acc[7][static_cast<std::size_t>(u)] += g;
        const float* row = dw.data.data() + static_cast<std::size_t>(u) * s.flatten;
        for (int i = 0; i < s.flatten; ++i) {
            acc[6][static_cast<std::size_t>(u) * s.flatten + i] += g * flat_in[static_cast<std::size_t>(i)];
            g_flat[static_cast<std::size_t>(i)] += g * row[i];
        }
    }

    // conv stack, walking backwards
    std::vector<double> g_out = std::move(g_flat);
    for (int i = 2; i >= 0; --i) {
        const auto& cs = net.cfg.conv[static_cast<std::size_t>(i)];
        // rectifier mask on this stage's pre-activations
        const auto& pre = cache.conv_pre[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < g_out.size(); ++j)
            if (pre[j] <= 0.0f) g_out[j] = 0.0;

        const float* in =
            i == 0 ? cache.input.data() : cache.conv_post[static_cast<std::size_t>(i - 1)].data();
        const int in_c = i == 0 ? net.cfg.in_channels
                                : net.cfg.conv[static_cast<std::size_t>(i - 1)].filters;
        std::vector<double> g_in(static_cast<std::size_t>(in_c) * s.h[i] * s.w[i], 0.0);
        std::vector<float> g_out_f(g_out.begin(), g_out.end());
        conv_backward(in, in_c, s.h[i], s.w[i],
                      net.params[static_cast<std::size_t>(2 * i)].data.data(), cs.filters,
                      cs.kernel, cs.stride, s.h[i + 1], s.w[i + 1], g_out_f.data(),
                      g_in.data(), acc[static_cast<std::size_t>(2 * i)].data(),
                      acc[static_cast<std::size_t>(2 * i + 1)].data());
        g_out = std::move(g_in);
    }

    for (int t = 0; t < kNumParamTensors; ++t) {
        auto& g = grads[static_cast<std::size_t>(t)];
        for (std::size_t j = 0; j < g.size(); ++j)
            g.data[j] = static_cast<float>(acc[static_cast<std::size_t>(t)][j]);
    }
    return grads;
}

void accumulate(std::vector<Tensor>& into, const std::vector<Tensor>& grads) {
    if (into.size() != grads.size()) throw ConfigError("accumulate: tensor count mismatch");
    for (std::size_t t = 0; t < into.size(); ++t) {
        if (into[t].size() != grads[t].size()) throw ConfigError("accumulate: shape mismatch");
        for (std::size_t j = 0; j < into[t].size(); ++j) into[t].data[j] += grads[t].data[j];
    }
}

void scale_gradients(std::vector<Tensor>& grads, float factor) {
    for (auto& t : grads)
        for (auto& x : t.data) x *= factor;
}

void apply_update(QNetwork& net, const std::vector<Tensor>& grads, OptimizerState& opt) {
    if (grads.size() != net.params.size()) throw ConfigError("apply_update: tensor count mismatch");
    if (!(opt.alpha > 0.0)) throw ConfigError("apply_update: alpha must be > 0");
    for (std::size_t t = 0; t < grads.size(); ++t) {
        if (grads[t].size() != net.params[t].size())
            throw ConfigError("apply_update: shape mismatch");
        for (float g : grads[t].data)
            if (!std::isfinite(g))
                throw std::runtime_error(std::string("apply_update: non-finite gradient in ") +
                                         kParamNames[t]);
    }

    opt.step += 1;
    if (opt.rule == UpdateRule::plain) {
        for (std::size_t t = 0; t < grads.size(); ++t)
            for (std::size_t j = 0; j < grads[t].size(); ++j)
                net.params[t].data[j] -= static_cast<float>(opt.alpha) * grads[t].data[j];
        return;
    }

    if (opt.m.empty()) {
        opt.m = zero_gradients(net.cfg);
        opt.v = zero_gradients(net.cfg);
    }
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t t = 0; t < grads.size(); ++t) {
        auto& m = opt.m[t].data;
        auto& v = opt.v[t].data;
        for (std::size_t j = 0; j < grads[t].size(); ++j) {
            const double g = grads[t].data[j];
            const double mj = opt.beta1 * m[j] + (1.0 - opt.beta1) * g;
            const double vj = opt.beta2 * v[j] + (1.0 - opt.beta2) * g * g;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double step = opt.alpha * (mj / bc1) / (std::sqrt(vj / bc2) + opt.eps);
            net.params[t].data[j] -= static_cast<float>(step);
        }
    }
}

std::string summary(const QNetwork& net) {
    std::ostringstream out;
    std::size_t total = 0;
    for (int t = 0; t < kNumParamTensors; ++t) {
        const auto& p = net.params[static_cast<std::size_t>(t)];
        out << kParamNames[static_cast<std::size_t>(t)] << " [";
        for (std::size_t d = 0; d < p.shape.size(); ++d) out << (d ? "," : "") << p.shape[d];
        out << "] " << p.size() << '\n';
        total += p.size();
    }
    out << "total " << total << '\n';
    return out.str();
}

namespace {

constexpr char kMagic[8] = {'Q', 'N', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

struct ByteReader {
    const std::string& bytes;
    std::size_t pos = 0;

    std::uint32_t u32() {
        if (pos + 4 > bytes.size()) throw ConfigError("load: truncated checkpoint");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)]);
        pos += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
};

} // namespace

void save(const QNetwork& net, const std::string& path) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    const auto& cfg = net.cfg;
    for (int v : {cfg.in_channels, cfg.in_h, cfg.in_w}) put_u32(out, static_cast<std::uint32_t>(v));
    for (const auto& c : cfg.conv)
        for (int v : {c.filters, c.kernel, c.stride}) put_u32(out, static_cast<std::uint32_t>(v));
    put_u32(out, static_cast<std::uint32_t>(cfg.dense_units));
    put_u32(out, static_cast<std::uint32_t>(cfg.outputs));

    for (const auto& p : net.params) {
        put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) put_u32(out, static_cast<std::uint32_t>(d));
        for (float f : p.data) put_f32(out, f);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("save: short write to " + path);
    f.close();

    std::ofstream sf(path + ".txt", std::ios::trunc);
    sf << summary(net);
}

QNetwork load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string bytes = ss.str();
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw ConfigError("load: bad magic in " + path);

    ByteReader r{bytes, sizeof(kMagic)};
    if (r.u32() != kVersion) throw ConfigError("load: unsupported checkpoint version");

    NetConfig cfg;
    cfg.in_channels = static_cast<int>(r.u32());
    cfg.in_h = static_cast<int>(r.u32());
    cfg.in_w = static_cast<int>(r.u32());
    for (auto& c : cfg.conv) {
        c.filters = static_cast<int>(r.u32());
        c.kernel = static_cast<int>(r.u32());
        c.stride = static_cast<int>(r.u32());
    }
    cfg.dense_units = static_cast<int>(r.u32());
    cfg.outputs = static_cast<int>(r.u32());

    QNetwork net = make_network(cfg);
    for (auto& p : net.params) {
        const auto rank = r.u32();
        if (rank != p.shape.size()) throw ConfigError("load: tensor rank mismatch");
        for (int d : p.shape)
            if (r.u32() != static_cast<std::uint32_t>(d))
                throw ConfigError("load: tensor shape mismatch");
        for (auto& x : p.data) x = r.f32();
    }
    if (r.pos != bytes.size()) throw ConfigError("load: trailing bytes in checkpoint");
    return net;
}

} // namespace prefdrive::nn
