#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cxrcf/augtrain.hpp"
#include "cxrcf/core/cooccurrence.hpp"
#include "cxrcf/stress.hpp"
#include "cxrcf/toy_shapes.hpp"

namespace cxrcf::toy {

/// Shape world with two findings: "square" (A) and "circle" (B, fainter).
struct DemoConfig {
    std::uint64_t seed = 1;
    int image_size = 28;
    std::size_t n_train = 1600;
    std::size_t n_heldout = 800;
    double disease_rate = 0.5;   ///< P(any finding)
    double confounding = 0.9;    ///< P(both | any); the rest splits evenly
    float background_level = 0.3f;
    float background_sigma = 0.06f;
    StampStyle square{Shape::Square, 0.12, 0.18, 0.5f};
    StampStyle circle{Shape::Circle, 0.12, 0.18, 0.3f};
    /// Real scans draw each stamp's intensity from [1 - jitter, 1] x style intensity.
    double square_jitter = 0.0;
    double circle_jitter = 0.0;
    /// Unlabelled clutter shapes per scan (uniform 0..max), real and synthetic alike.
    int max_clutter = 0;
    double clutter_min_half = 0.06;
    double clutter_max_half = 0.12;
    float clutter_min_intensity = 0.1f;
    float clutter_max_intensity = 0.4f;
    /// Training labels flip with this probability; held-out labels stay exact.
    double label_noise = 0.0;
    std::size_t n_synthetic_baselines = 1200;  ///< each edited once per finding
    double edit_strength = 0.4;
    TrainingConfig training = default_training();

    double min_shortcut = 15.0;
    double max_residual = 5.0;
    double max_auc_drop = 0.02;

    static TrainingConfig default_training();
    static std::vector<std::string> findings() { return {"square", "circle"}; }
};

struct DemoResult {
    PercentileChangeMatrix before;
    PercentileChangeMatrix after;
    CooccurrenceMatrix oracle_reads;
    AucRow auc_before;
    AucRow auc_after;
    TrainingResult confounded_model;
    TrainingResult retrained_model;
    double seconds = 0.0;

    double shortcut_before() const { return before.at("square", "circle"); }
    double shortcut_after() const { return after.at("square", "circle"); }
    double b_auc_drop() const;
};

/// Background, clutter, then the requested stamps, placed without overlap.
Image make_scan(const DemoConfig& c, bool square, bool circle, std::uint64_t seed);

/// Confounded labelled cohort written as PNGs under `dir`.
std::vector<LabeledScan> make_cohort(const DemoConfig& c, std::size_t n, const std::string& prefix,
                                     const std::filesystem::path& dir, double label_noise = 0.0);

/// Oracle reader: detects the added shape in every OK edit of `manifest` and
/// tabulates prompted vs seen as a co-occurrence matrix.
CooccurrenceMatrix oracle_reads(const Manifest& manifest, const std::filesystem::path& manifest_dir,
                                const std::vector<SourceScan>& sources, const std::vector<std::string>& keys);

/// Full experiment: train on confounded data, stress test, retrain with
/// counterfactuals under the co-occurrence scheme, stress test again. Writes
/// matrices, heatmaps, AUCs, training logs and summary.json into `work_dir`.
DemoResult run_demo(const DemoConfig& config, const std::filesystem::path& work_dir);

} // namespace cxrcf::toy
