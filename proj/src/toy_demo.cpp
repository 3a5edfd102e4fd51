#include "cxrcf/toy_demo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/hash.hpp"
#include "cxrcf/core/heatmap.hpp"
#include "cxrcf/core/parallel.hpp"
#include "cxrcf/core/rng.hpp"
#include "cxrcf/editor.hpp"

namespace cxrcf::toy {
namespace fs = std::filesystem;
using nlohmann::json;

TrainingConfig DemoConfig::default_training() {
    TrainingConfig t;
    t.findings = findings();
    t.architecture.outputs = 2;
    t.learning_rate = 1e-3;
    t.epochs = 60;
    t.batch_size = 32;
    t.patience = 15;
    t.label_smoothing = 0.1;
    t.architecture.c1 = 8;
    t.architecture.c2 = 16;
    t.scheme = LabelingScheme::ABSENT;
    return t;
}

double DemoResult::b_auc_drop() const {
    const auto& a = auc_before.auc.at(1);
    const auto& b = auc_after.auc.at(1);
    if (!a || !b) return std::numeric_limits<double>::quiet_NaN();
    return *a - *b;
}

namespace {

struct Placement {
    double cx, cy, half;
};

Placement place(const StampStyle& s, int size, Rng& rng) {
    const double half = rng.uniform(s.min_half, s.max_half) * size;
    const double margin = half + 1.0;
    return {rng.uniform(margin, std::max(margin, size - margin)), rng.uniform(margin, std::max(margin, size - margin)),
            half};
}

bool overlaps(const Placement& a, const Placement& b) {
    return std::abs(a.cx - b.cx) < a.half + b.half + 1.0 && std::abs(a.cy - b.cy) < a.half + b.half + 1.0;
}

PromptSpec toy_prompt(const std::string& key) { return {key, "toy " + key, PromptStatus::FINAL}; }

// Finding-free scans from the same world as the real ones.
class SceneGenerator final : public GeneratorBackend {
public:
    explicit SceneGenerator(const DemoConfig& c) : c_(c) {}
    std::string name() const override { return "toy-scene"; }
    Image generate(const std::string&, const EditorParams& params, std::uint64_t seed) const override {
        params.validate();
        auto c = c_;
        c.image_size = params.image_size;
        return make_scan(c, false, false, seed);
    }

private:
    DemoConfig c_;
};

MockBackend toy_editor(const DemoConfig& c) {
    return MockBackend({{toy_prompt("square").prompt_text, c.square}, {toy_prompt("circle").prompt_text, c.circle}});
}

std::vector<PredictItem> items(const std::vector<LabeledScan>& scans, PredictionSource source) {
    std::vector<PredictItem> out;
    for (const auto& s : scans) out.push_back({s.scan.scan_id, s.scan.image_path, source, "", ""});
    return out;
}

void write_matrix(const PercentileChangeMatrix& m, const std::string& title, const fs::path& stem) {
    std::ofstream out(stem.string() + ".csv", std::ios::trunc);
    m.write_csv(out);
    write_heatmap_png({title, m.row_keys, m.col_keys, m.values}, stem.string() + ".png");
}

json auc_json(const AucRow& r) {
    json j = json::object();
    for (std::size_t i = 0; i < r.findings.size(); ++i) j[r.findings[i]] = r.auc[i] ? json(*r.auc[i]) : json(nullptr);
    return j;
}

} // namespace

Image make_scan(const DemoConfig& c, bool square, bool circle, std::uint64_t seed) {
    Image img = background(c.image_size, c.background_level, c.background_sigma, seed);
    Rng rng(stable_hash64({"toy-place", std::to_string(seed)}));
    std::vector<Placement> taken;
    auto free_spot = [&](double lo, double hi) {
        const StampStyle s{Shape::Square, lo, hi, 0.0f};
        Placement p = place(s, c.image_size, rng);
        for (int tries = 0; tries < 200; ++tries) {
            if (std::none_of(taken.begin(), taken.end(), [&](const Placement& t) { return overlaps(t, p); })) break;
            p = place(s, c.image_size, rng);
        }
        taken.push_back(p);
        return p;
    };
    const auto n_clutter = c.max_clutter > 0 ? rng.below(static_cast<std::uint64_t>(c.max_clutter) + 1) : 0;
    for (std::uint64_t k = 0; k < n_clutter; ++k) {
        // anything but the two labelled shapes
        const auto shape = static_cast<Shape>(2 + rng.below(kShapeCount - 2));
        const auto p = free_spot(c.clutter_min_half, c.clutter_max_half);
        stamp(img, shape, p.cx, p.cy, p.half,
              static_cast<float>(rng.uniform(c.clutter_min_intensity, c.clutter_max_intensity)));
    }
    if (square) {
        const auto p = free_spot(c.square.min_half, c.square.max_half);
        stamp(img, c.square.shape, p.cx, p.cy, p.half,
              c.square.intensity * static_cast<float>(1.0 - c.square_jitter * rng.uniform()));
    }
    if (circle) {
        const auto p = free_spot(c.circle.min_half, c.circle.max_half);
        stamp(img, c.circle.shape, p.cx, p.cy, p.half,
              c.circle.intensity * static_cast<float>(1.0 - c.circle_jitter * rng.uniform()));
    }
    return img;
}

std::vector<LabeledScan> make_cohort(const DemoConfig& c, std::size_t n, const std::string& prefix,
                                     const fs::path& dir, double label_noise) {
    fs::create_directories(dir);
    const auto vocab = make_vocabulary(DemoConfig::findings());
    Rng rng(stable_hash64({"toy-cohort", prefix, std::to_string(c.seed)}));
    std::vector<LabeledScan> scans(n);
    std::vector<std::uint64_t> seeds(n);
    std::vector<std::pair<bool, bool>> truth(n);
    for (std::size_t i = 0; i < n; ++i) {
        bool a = false, b = false;
        if (rng.bernoulli(c.disease_rate)) {
            if (rng.bernoulli(c.confounding)) a = b = true;
            else (rng.bernoulli(0.5) ? a : b) = true;
        }
        char id[64];
        std::snprintf(id, sizeof id, "%s-%05zu", prefix.c_str(), i);
        auto& s = scans[i];
        s.scan.scan_id = id;
        s.scan.patient_id = id;
        s.scan.cohort = Cohort::SYNTHETIC;
        s.scan.image_path = (dir / (std::string(id) + ".png")).string();
        s.labels = LabelVector(vocab);
        seeds[i] = rng.next();
        const bool flip_a = rng.bernoulli(label_noise), flip_b = rng.bernoulli(label_noise);
        s.labels.set("square", LabelValue::of(a != flip_a));
        s.labels.set("circle", LabelValue::of(b != flip_b));
        truth[i] = {a, b};
    }
    parallel_for(n, [&](std::size_t i) {
        save_png(make_scan(c, truth[i].first, truth[i].second, seeds[i]), scans[i].scan.image_path);
    });
    return scans;
}

CooccurrenceMatrix oracle_reads(const Manifest& manifest, const fs::path& manifest_dir,
                                const std::vector<SourceScan>& sources, const std::vector<std::string>& keys) {
    std::map<std::string, std::string> source_path;
    for (const auto& s : sources) source_path[s.scan_id] = s.image_path;
    CooccurrenceMatrix m;
    m.row_keys = keys;
    m.col_keys = keys;
    m.fractions.assign(keys.size(), std::vector<double>(keys.size(), 0.0));
    m.row_counts.assign(keys.size(), 0);
    m.note = "oracle reader (stamp detection)";
    for (const auto& r : manifest.records) {
        if (r.kind != RecordKind::EDIT || r.status != RecordStatus::OK) continue;
        const auto row = std::find(keys.begin(), keys.end(), r.prompt.pathology_key);
        if (row == keys.end()) continue;
        const auto ri = static_cast<std::size_t>(row - keys.begin());
        const auto src = source_path.find(r.source_scan_id);
        if (src == source_path.end()) throw NotFoundError("no source image for " + r.source_scan_id);
        const auto seen = detect_stamp(load_image(src->second), load_image(manifest_dir / r.output_path));
        ++m.row_counts[ri];
        if (!seen) continue;
        const auto col = std::find(keys.begin(), keys.end(), to_string(seen->shape));
        if (col != keys.end()) m.fractions[ri][static_cast<std::size_t>(col - keys.begin())] += 1.0;
    }
    for (std::size_t i = 0; i < keys.size(); ++i)
        for (auto& v : m.fractions[i])
            v = m.row_counts[i] ? v / static_cast<double>(m.row_counts[i]) : std::numeric_limits<double>::quiet_NaN();
    m.cell_counts.assign(keys.size(), {});
    for (std::size_t i = 0; i < keys.size(); ++i) m.cell_counts[i].assign(keys.size(), m.row_counts[i]);
    return m;
}

DemoResult run_demo(const DemoConfig& c, const fs::path& work) {
    const auto start = std::chrono::steady_clock::now();
    const auto keys = DemoConfig::findings();
    fs::create_directories(work);
    DemoResult result;

    spdlog::info("toy-demo: building cohorts ({} train, {} held out)", c.n_train, c.n_heldout);
    const auto train_scans = make_cohort(c, c.n_train, "toy-train", work / "scans" / "train", c.label_noise);
    const auto heldout = make_cohort(c, c.n_heldout, "toy-heldout", work / "scans" / "heldout");

    std::vector<LabeledScan> no_finding;
    for (const auto& s : heldout)
        if (!s.labels.get("square").positive() && !s.labels.get("circle").positive()) no_finding.push_back(s);
    std::vector<SourceScan> sources;
    for (const auto& s : no_finding) sources.push_back({s.scan.scan_id, s.scan.image_path});

    const auto editor = toy_editor(c);
    EditorParams params;
    params.image_size = c.image_size;
    params.strength = c.edit_strength;
    const std::vector<PromptSpec> prompts{toy_prompt("square"), toy_prompt("circle")};

    const auto eval_dir = work / "eval_counterfactuals";
    GenerationContext eval_ctx;
    eval_ctx.out_dir = eval_dir;
    const auto eval_manifest = generate_eval_cohort(editor, sources, prompts, params, c.seed, eval_ctx);
    eval_manifest.write(eval_dir / "manifest.jsonl");
    result.oracle_reads = oracle_reads(eval_manifest, eval_dir, sources, keys);
    {
        std::ofstream out(work / "oracle_cooccurrence.csv", std::ios::trunc);
        result.oracle_reads.write_csv(out);
    }

    const auto heldout_examples = real_examples(heldout);
    const auto baseline_items = items(no_finding, PredictionSource::BASELINE);
    const auto reference_items = items(heldout, PredictionSource::REFERENCE);

    auto stress = [&](const TrainingResult& model, const std::string& tag) {
        ModelAdapter adapter(model.model, keys, "toy-" + tag);
        auto run = change_matrix(adapter, baseline_items, eval_manifest, eval_dir, reference_items, keys, keys);
        write_matrix(run.matrix, "Percentile change (" + tag + ")", work / ("change_matrix_" + tag));
        return std::make_pair(run.matrix, evaluate_examples(adapter, "heldout", heldout_examples, keys, disk_loader()));
    };

    spdlog::info("toy-demo: training on confounded data");
    auto cfg = c.training;
    cfg.findings = keys;
    cfg.architecture.outputs = static_cast<int>(keys.size());
    cfg.architecture.input = c.image_size;
    cfg.seed = c.seed;
    cfg.scheme = LabelingScheme::ABSENT;
    const auto real = real_examples(train_scans);
    result.confounded_model =
        train(assemble_training_set(real, {}, c.seed), cfg, disk_loader(), nullptr, work / "train_confounded.jsonl");
    std::tie(result.before, result.auc_before) = stress(result.confounded_model, "confounded");

    spdlog::info("toy-demo: generating {} synthetic baselines and their edits", c.n_synthetic_baselines);
    const auto synth_dir = work / "training_counterfactuals";
    GenerationContext synth_ctx;
    synth_ctx.out_dir = synth_dir;
    const SceneGenerator generator(c);
    const auto synth_manifest =
        generate_training_cohort(generator, editor, c.n_synthetic_baselines, prompts, 1, params, c.seed, synth_ctx);
    synth_manifest.write(synth_dir / "manifest.jsonl");
    const auto synthetic = synthetic_examples(synth_manifest, synth_dir, keys);

    spdlog::info("toy-demo: retraining with counterfactuals ({})", to_string(LabelingScheme::COOCCURRENCE));
    cfg.scheme = LabelingScheme::COOCCURRENCE;
    result.retrained_model = train(assemble_training_set(real, synthetic, c.seed), cfg, disk_loader(),
                                   &result.oracle_reads, work / "train_counterfactual.jsonl");
    std::tie(result.after, result.auc_after) = stress(result.retrained_model, "counterfactual");

    {
        std::ofstream out(work / "auc.csv", std::ios::trunc);
        auto before = result.auc_before, after = result.auc_after;
        before.cohort = "heldout/confounded";
        after.cohort = "heldout/counterfactual";
        write_auc_table({before, after}, out);
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const bool a = result.shortcut_before() >= c.min_shortcut;
    const bool b = std::abs(result.shortcut_after()) < c.max_residual;
    const bool drop = result.b_auc_drop() <= c.max_auc_drop;
    std::ofstream summary(work / "summary.json", std::ios::trunc);
    summary << json{{"seed", c.seed},
                    {"n_train", c.n_train},
                    {"n_heldout", c.n_heldout},
                    {"n_baselines", no_finding.size()},
                    {"n_synthetic", synthetic.size()},
                    {"confounding", c.confounding},
                    {"shortcut_before", result.shortcut_before()},
                    {"shortcut_after", result.shortcut_after()},
                    {"auc_before", auc_json(result.auc_before)},
                    {"auc_after", auc_json(result.auc_after)},
                    {"circle_auc_drop", result.b_auc_drop()},
                    {"checks",
                     {{"shortcut_detected", a}, {"shortcut_removed", b}, {"circle_auc_kept", drop}}},
                    {"best_epoch", {result.confounded_model.best_epoch, result.retrained_model.best_epoch}},
                    {"seconds", result.seconds}}
                   .dump(2)
            << '\n';
    spdlog::info("toy-demo: cell[square][circle] {:.1f} -> {:.1f}, circle AUC drop {:.4f}, {:.0f} s",
                 result.shortcut_before(), result.shortcut_after(), result.b_auc_drop(), result.seconds);
    return result;
}

} // namespace cxrcf::toy
