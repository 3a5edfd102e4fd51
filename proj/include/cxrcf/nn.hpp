#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cxrcf/core/image.hpp"

namespace cxrcf::nn {

/// conv(k1) -> ReLU -> maxpool 2 -> conv(k2) -> global max -> dense.
/// No ReLU before the global max: an all-negative plane would tie every
/// finding-free image at the same logit.
/// Convolutions are "valid"; (input - k1 + 1) must be even.
struct CnnConfig {
    int input = 28;
    int c1 = 6;
    int k1 = 5;
    int c2 = 12;
    int k2 = 3;
    int outputs = 2;
    float input_offset = 0.3f;  ///< x = (pixel - offset) * scale
    float input_scale = 4.0f;

    void validate() const;  ///< throws ArgumentError
    std::size_t parameter_count() const;
    friend bool operator==(const CnnConfig&, const CnnConfig&) = default;
};

class ToyCnn {
public:
    ToyCnn() = default;
    ToyCnn(CnnConfig config, std::uint64_t seed);

    const CnnConfig& config() const { return config_; }
    std::vector<float>& parameters() { return params_; }
    const std::vector<float>& parameters() const { return params_; }

    /// Image must already be config().input square.
    std::vector<float> logits(const Image& image) const;
    std::vector<float> probabilities(const Image& image) const;

    /// Adds d(loss)/d(params) for one image given d(loss)/d(logits) into `grad`
    /// (same layout as parameters()).
    void backward(const Image& image, std::span<const float> dlogits, std::span<float> grad) const;

    /// One forward pass: masked_bce on the logits, then its gradient added into
    /// `grad`. Returns the summed loss over the `count` kept entries.
    double loss_and_grad(const Image& image, std::span<const float> targets, std::span<const std::uint8_t> mask,
                         std::span<float> grad, std::size_t& count) const;

    void save(const std::filesystem::path& path) const;
    static ToyCnn load(const std::filesystem::path& path);

private:
    struct Cache;
    void forward(const Image& image, Cache& cache) const;
    void backprop(const Cache& cache, std::span<const float> dlogits, std::span<float> grad) const;

    CnnConfig config_;
    std::vector<float> params_;
};

/// Per-finding binary cross-entropy on logits with soft targets in [0, 1].
/// Entries with mask == 0 are dropped from the mean. Writes d(loss)/d(logit)
/// into `dlogits` when non-empty; returns the loss over `count` kept entries
/// (sum, not mean) so batches can be averaged by the caller.
double masked_bce(std::span<const float> logits, std::span<const float> targets, std::span<const std::uint8_t> mask,
                  std::span<float> dlogits, std::size_t& count);

class Adam {
public:
    explicit Adam(std::size_t n, double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(std::span<float> params, std::span<const float> grad);

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    long long t_ = 0;
};

} // namespace cxrcf::nn
