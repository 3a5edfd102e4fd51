#include "cxrcf/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/rng.hpp"

namespace cxrcf::nn {

namespace {

constexpr char kMagic[8] = {'C', 'X', 'R', 'C', 'F', 'N', 'N', '1'};

struct Layout {
    std::size_t w1, b1, w2, b2, w3, b3, total;
    explicit Layout(const CnnConfig& c) {
        w1 = 0;
        b1 = w1 + static_cast<std::size_t>(c.c1) * c.k1 * c.k1;
        w2 = b1 + c.c1;
        b2 = w2 + static_cast<std::size_t>(c.c2) * c.c1 * c.k2 * c.k2;
        w3 = b2 + c.c2;
        b3 = w3 + static_cast<std::size_t>(c.outputs) * c.c2;
        total = b3 + c.outputs;
    }
};

} // namespace

void CnnConfig::validate() const {
    if (input <= 0 || c1 <= 0 || k1 <= 0 || c2 <= 0 || k2 <= 0 || outputs <= 0)
        throw ArgumentError("network dimensions must be positive");
    const int h1 = input - k1 + 1;
    if (h1 <= 0 || h1 % 2) throw ArgumentError("input - k1 + 1 must be positive and even");
    if (h1 / 2 - k2 + 1 <= 0) throw ArgumentError("second convolution does not fit");
    if (!(input_scale > 0)) throw ArgumentError("input_scale must be positive");
}

std::size_t CnnConfig::parameter_count() const { return Layout(*this).total; }

struct ToyCnn::Cache {
    std::vector<float> x;       // input, S*S
    std::vector<float> r1p;     // pooled ReLU(conv1), c1*P*P
    std::vector<int> pool_idx;  // index of each pooled value inside its conv1 plane
    std::vector<float> g;       // global max of conv2, c2
    std::vector<int> g_idx;     // position of that max in the conv2 plane
    std::vector<float> logits;
};

ToyCnn::ToyCnn(CnnConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const Layout L(config_);
    params_.assign(L.total, 0.0f);
    Rng rng(seed);
    auto fill = [&](std::size_t from, std::size_t to, double stddev) {
        for (std::size_t i = from; i < to; ++i) params_[i] = static_cast<float>(rng.normal() * stddev);
    };
    fill(L.w1, L.b1, std::sqrt(2.0 / (config_.k1 * config_.k1)));
    fill(L.w2, L.b2, std::sqrt(2.0 / (config_.c1 * config_.k2 * config_.k2)));
    fill(L.w3, L.b3, std::sqrt(1.0 / config_.c2));
    std::fill(params_.begin() + static_cast<std::ptrdiff_t>(L.b1), params_.begin() + static_cast<std::ptrdiff_t>(L.w2),
              0.01f);
    std::fill(params_.begin() + static_cast<std::ptrdiff_t>(L.b2), params_.begin() + static_cast<std::ptrdiff_t>(L.w3),
              0.01f);
}

void ToyCnn::forward(const Image& image, Cache& cache) const {
    const auto& c = config_;
    if (image.width != c.input || image.height != c.input)
        throw ArgumentError("network expects " + std::to_string(c.input) + "px input, got " +
                            std::to_string(image.width) + "x" + std::to_string(image.height));
    const Layout L(c);
    const int S = c.input, H1 = S - c.k1 + 1, P = H1 / 2, H2 = P - c.k2 + 1;
    const float* W = params_.data();

    cache.x.resize(static_cast<std::size_t>(S) * S);
    for (std::size_t i = 0; i < cache.x.size(); ++i) cache.x[i] = (image.pixels[i] - c.input_offset) * c.input_scale;

    std::vector<float> plane(static_cast<std::size_t>(H1) * H1);
    cache.r1p.assign(static_cast<std::size_t>(c.c1) * P * P, 0.0f);
    cache.pool_idx.assign(cache.r1p.size(), 0);
    for (int ch = 0; ch < c.c1; ++ch) {
        std::fill(plane.begin(), plane.end(), W[L.b1 + ch]);
        for (int i = 0; i < c.k1; ++i)
            for (int j = 0; j < c.k1; ++j) {
                const float w = W[L.w1 + (static_cast<std::size_t>(ch) * c.k1 + i) * c.k1 + j];
                for (int y = 0; y < H1; ++y) {
                    float* out = &plane[static_cast<std::size_t>(y) * H1];
                    const float* in = &cache.x[static_cast<std::size_t>(y + i) * S + j];
                    for (int x = 0; x < H1; ++x) out[x] += w * in[x];
                }
            }
        float* pooled = &cache.r1p[static_cast<std::size_t>(ch) * P * P];
        int* idx = &cache.pool_idx[static_cast<std::size_t>(ch) * P * P];
        for (int y = 0; y < P; ++y)
            for (int x = 0; x < P; ++x) {
                int best = (2 * y) * H1 + 2 * x;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int k = (2 * y + dy) * H1 + 2 * x + dx;
                        if (plane[k] > plane[best]) best = k;
                    }
                pooled[y * P + x] = std::max(0.0f, plane[best]);
                idx[y * P + x] = best;
            }
    }

    std::vector<float> plane2(static_cast<std::size_t>(H2) * H2);
    cache.g.assign(c.c2, 0.0f);
    cache.g_idx.assign(c.c2, -1);
    for (int d = 0; d < c.c2; ++d) {
        std::fill(plane2.begin(), plane2.end(), W[L.b2 + d]);
        for (int ch = 0; ch < c.c1; ++ch) {
            const float* src = &cache.r1p[static_cast<std::size_t>(ch) * P * P];
            for (int i = 0; i < c.k2; ++i)
                for (int j = 0; j < c.k2; ++j) {
                    const float w = W[L.w2 + ((static_cast<std::size_t>(d) * c.c1 + ch) * c.k2 + i) * c.k2 + j];
                    for (int y = 0; y < H2; ++y) {
                        float* out = &plane2[static_cast<std::size_t>(y) * H2];
                        const float* in = &src[(y + i) * P + j];
                        for (int x = 0; x < H2; ++x) out[x] += w * in[x];
                    }
                }
        }
        const auto it = std::max_element(plane2.begin(), plane2.end());
        cache.g[d] = *it;
        cache.g_idx[d] = static_cast<int>(it - plane2.begin());
    }

    cache.logits.assign(c.outputs, 0.0f);
    for (int o = 0; o < c.outputs; ++o) {
        float s = W[L.b3 + o];
        for (int d = 0; d < c.c2; ++d) s += W[L.w3 + static_cast<std::size_t>(o) * c.c2 + d] * cache.g[d];
        cache.logits[o] = s;
    }
}

std::vector<float> ToyCnn::logits(const Image& image) const {
    Cache cache;
    forward(image, cache);
    return cache.logits;
}

std::vector<float> ToyCnn::probabilities(const Image& image) const {
    auto z = logits(image);
    for (auto& v : z) v = 1.0f / (1.0f + std::exp(-v));
    return z;
}

void ToyCnn::backward(const Image& image, std::span<const float> dlogits, std::span<float> grad) const {
    Cache cache;
    forward(image, cache);
    backprop(cache, dlogits, grad);
}

double ToyCnn::loss_and_grad(const Image& image, std::span<const float> targets, std::span<const std::uint8_t> mask,
                             std::span<float> grad, std::size_t& count) const {
    Cache cache;
    forward(image, cache);
    std::vector<float> dl(cache.logits.size());
    const double loss = masked_bce(cache.logits, targets, mask, dl, count);
    if (count) backprop(cache, dl, grad);
    return loss;
}

void ToyCnn::backprop(const Cache& cache, std::span<const float> dlogits, std::span<float> grad) const {
    const auto& c = config_;
    const Layout L(c);
    if (grad.size() != L.total) throw ArgumentError("gradient buffer has the wrong size");
    if (dlogits.size() != static_cast<std::size_t>(c.outputs)) throw ArgumentError("dlogits has the wrong size");
    const int S = c.input, H1 = S - c.k1 + 1, P = H1 / 2, H2 = P - c.k2 + 1;
    const float* W = params_.data();

    std::vector<float> dg(c.c2, 0.0f);
    for (int o = 0; o < c.outputs; ++o) {
        const float dl = dlogits[o];
        if (dl == 0.0f) continue;
        grad[L.b3 + o] += dl;
        for (int d = 0; d < c.c2; ++d) {
            grad[L.w3 + static_cast<std::size_t>(o) * c.c2 + d] += dl * cache.g[d];
            dg[d] += dl * W[L.w3 + static_cast<std::size_t>(o) * c.c2 + d];
        }
    }

    std::vector<float> dr1p(cache.r1p.size(), 0.0f);
    for (int d = 0; d < c.c2; ++d) {
        if (cache.g_idx[d] < 0 || dg[d] == 0.0f) continue;
        const float delta = dg[d];
        const int y2 = cache.g_idx[d] / H2, x2 = cache.g_idx[d] % H2;
        grad[L.b2 + d] += delta;
        for (int ch = 0; ch < c.c1; ++ch) {
            const std::size_t base = static_cast<std::size_t>(ch) * P * P;
            for (int i = 0; i < c.k2; ++i)
                for (int j = 0; j < c.k2; ++j) {
                    const std::size_t w = L.w2 + ((static_cast<std::size_t>(d) * c.c1 + ch) * c.k2 + i) * c.k2 + j;
                    const std::size_t at = base + static_cast<std::size_t>(y2 + i) * P + x2 + j;
                    grad[w] += delta * cache.r1p[at];
                    dr1p[at] += delta * W[w];
                }
        }
    }

    for (int ch = 0; ch < c.c1; ++ch) {
        const std::size_t base = static_cast<std::size_t>(ch) * P * P;
        for (int k = 0; k < P * P; ++k) {
            const float v = dr1p[base + k];
            if (v == 0.0f || cache.r1p[base + k] <= 0.0f) continue;
            const int idx = cache.pool_idx[base + k];
            const int y1 = idx / H1, x1 = idx % H1;
            grad[L.b1 + ch] += v;
            for (int i = 0; i < c.k1; ++i)
                for (int j = 0; j < c.k1; ++j)
                    grad[L.w1 + (static_cast<std::size_t>(ch) * c.k1 + i) * c.k1 + j] +=
                        v * cache.x[static_cast<std::size_t>(y1 + i) * S + x1 + j];
        }
    }
}

void ToyCnn::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    const std::int32_t dims[6] = {config_.input, config_.c1, config_.k1, config_.c2, config_.k2, config_.outputs};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    const float norm[2] = {config_.input_offset, config_.input_scale};
    out.write(reinterpret_cast<const char*>(norm), sizeof norm);
    const std::uint64_t n = params_.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(params_.data()), static_cast<std::streamsize>(n * sizeof(float)));
}

ToyCnn ToyCnn::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("checkpoint not found: " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ValidationError(path.string() + " is not a checkpoint");
    std::int32_t dims[6];
    float norm[2];
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    in.read(reinterpret_cast<char*>(norm), sizeof norm);
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in) throw ValidationError(path.string() + ": truncated checkpoint header");
    ToyCnn net;
    net.config_ = {dims[0], dims[1], dims[2], dims[3], dims[4], dims[5], norm[0], norm[1]};
    net.config_.validate();
    if (n != net.config_.parameter_count()) throw ValidationError(path.string() + ": parameter count mismatch");
    net.params_.resize(n);
    in.read(reinterpret_cast<char*>(net.params_.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw ValidationError(path.string() + ": truncated checkpoint");
    return net;
}

double masked_bce(std::span<const float> logits, std::span<const float> targets, std::span<const std::uint8_t> mask,
                  std::span<float> dlogits, std::size_t& count) {
    if (targets.size() != logits.size() || mask.size() != logits.size())
        throw ArgumentError("logits, targets and mask differ in size");
    double loss = 0.0;
    count = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!dlogits.empty()) dlogits[i] = 0.0f;
        if (!mask[i]) continue;
        const double z = logits[i], t = targets[i];
        // log(1 + e^z) - t z, written to stay finite for large |z|
        loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
        if (!dlogits.empty()) dlogits[i] = static_cast<float>(1.0 / (1.0 + std::exp(-z)) - t);
        ++count;
    }
    return loss;
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<float> params, std::span<const float> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw ArgumentError("optimizer size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
        params[i] -= static_cast<float>(lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_));
    }
}

} // namespace cxrcf::nn
