#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cxrcf/augtrain.hpp"
#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"
#include "cxrcf/toy_demo.hpp"
#include "fixtures.hpp"

using namespace cxrcf;
namespace fs = std::filesystem;

namespace {

CooccurrenceMatrix study_matrix() {
    CooccurrenceMatrix m;
    m.row_keys = m.col_keys = findings::study();
    const auto n = m.row_keys.size();
    m.fractions.assign(n, std::vector<double>(n, 0.05));
    for (std::size_t i = 0; i < n; ++i) m.fractions[i][i] = 0.9;
    m.fractions[0][1] = 0.46;  // cardiomegaly -> edema
    m.row_counts.assign(n, 100);
    m.cell_counts.assign(n, std::vector<std::size_t>(n, 100));
    return m;
}

TrainingExample counterfactual(const std::string& prompted) {
    TrainingExample e;
    e.id = "cf-" + prompted;
    e.kind = ExampleKind::COUNTERFACTUAL;
    e.prompted = prompted;
    return e;
}

// Small toy world for training tests.
struct ToyData {
    fixtures::TempDir tmp;
    toy::DemoConfig cfg;
    std::vector<LabeledScan> scans;
    Manifest synthetic;

    explicit ToyData(std::size_t n_real, std::size_t n_baselines = 0) {
        cfg.seed = 3;
        scans = toy::make_cohort(cfg, n_real, "t", tmp / "real");
        if (n_baselines) {
            EditorParams p;
            p.image_size = cfg.image_size;
            MockBackend mock;
            ToyGenerator gen;
            GenerationContext ctx{tmp / "syn"};
            synthetic = generate_training_cohort(gen, mock, n_baselines, final_prompts(), 1, p, 3, ctx);
        }
    }
};

TrainingConfig toy_config(int epochs) {
    auto c = toy::DemoConfig::default_training();
    c.epochs = epochs;
    c.patience = epochs;
    c.seed = 5;
    return c;
}

} // namespace

TEST(Targets, CooccurrenceReproducesMatrixRow) {
    const auto m = study_matrix();
    const auto& f = findings::study();
    const auto t = make_targets(counterfactual("cardiomegaly"), LabelingScheme::COOCCURRENCE, f, &m);
    EXPECT_EQ(t.values[0], 1.0f);
    EXPECT_EQ(t.values[1], 0.46f);
    for (std::size_t i = 1; i < f.size(); ++i) EXPECT_EQ(t.values[i], static_cast<float>(m.fractions[0][i]));
    EXPECT_EQ(t.mask, std::vector<std::uint8_t>(f.size(), 1));
}

TEST(Targets, AbsentMaskedAndBaseline) {
    const auto& f = findings::study();
    const auto absent = make_targets(counterfactual("cardiomegaly"), LabelingScheme::ABSENT, f);
    EXPECT_EQ(absent.values, (std::vector<float>{1, 0, 0, 0, 0, 0}));
    const auto masked = make_targets(counterfactual("edema"), LabelingScheme::MASKED, f);
    EXPECT_EQ(masked.mask, (std::vector<std::uint8_t>{0, 1, 0, 0, 0, 0}));
    TrainingExample base;
    base.kind = ExampleKind::SYNTHETIC_BASELINE;
    for (auto s : {LabelingScheme::ABSENT, LabelingScheme::MASKED, LabelingScheme::COOCCURRENCE}) {
        const auto m = study_matrix();
        const auto t = make_targets(base, s, f, &m);
        EXPECT_EQ(t.values, std::vector<float>(6, 0.0f));
    }
    EXPECT_THROW(make_targets(counterfactual("edema"), LabelingScheme::COOCCURRENCE, f), ConfigError);
}

TEST(Targets, RealScanAliasesAndMasks) {
    LabeledScan s;
    s.scan.cohort = Cohort::MIMIC;
    s.labels = LabelVector(vocabulary(Cohort::MIMIC));
    s.labels.set("lung_lesion", LabelValue::of(1.0));
    s.labels.set("edema", LabelValue::unsure());
    s.labels.set("cardiomegaly", LabelValue::masked());
    const auto ex = real_examples({s});
    const auto t = make_targets(ex[0], LabelingScheme::ABSENT, findings::study());
    // cardiomegaly masked, edema unsure -> 0, hernia absent from MIMIC -> masked, mass via lung lesion
    EXPECT_EQ(t.mask[0], 0);
    EXPECT_EQ(t.values[1], 0.0f);
    EXPECT_EQ(t.mask[1], 1);
    EXPECT_EQ(t.mask[4], 0);
    EXPECT_EQ(t.values[5], 1.0f);
}

TEST(Loss, MaskedEntriesHaveZeroGradient) {
    nn::CnnConfig cfg;
    cfg.outputs = 3;
    nn::ToyCnn net(cfg, 9);
    const auto img = resize(fixtures::gradient(40), 28, 28);
    const auto probs = net.probabilities(img);

    // entry 1 masked vs entry 1 targeted at the model's own output
    const std::vector<float> t_masked{1.0f, 0.0f, 0.0f};
    const std::vector<float> t_matched{1.0f, probs[1], 0.0f};
    const std::vector<std::uint8_t> m_masked{1, 0, 1}, all{1, 1, 1};
    std::vector<float> g1(net.parameters().size()), g2(net.parameters().size());
    std::size_t n1 = 0, n2 = 0;
    net.loss_and_grad(img, t_masked, m_masked, g1, n1);
    net.loss_and_grad(img, t_matched, all, g2, n2);
    EXPECT_EQ(n1, 2u);
    double worst = 0;
    for (std::size_t i = 0; i < g1.size(); ++i) worst = std::max(worst, std::abs(double(g1[i]) - g2[i]));
    EXPECT_LT(worst, 1e-6);

    const std::vector<float> logits = net.logits(img);
    std::vector<float> d(3);
    std::size_t n = 0;
    nn::masked_bce(logits, t_masked, m_masked, d, n);
    EXPECT_EQ(d[1], 0.0f);
}

TEST(Assemble, ToyThreeHundredPlusThreeFifty) {
    ToyData data(300, 50);
    ASSERT_EQ(data.synthetic.records.size(), 350u);
    const auto real = real_examples(data.scans);
    const auto syn = synthetic_examples(data.synthetic, data.tmp / "syn", findings::study());
    const auto a = assemble_training_set(real, syn, 7);
    const auto b = assemble_training_set(real, syn, 7);
    EXPECT_EQ(a.items.size(), 650u);
    EXPECT_EQ(a.n_real, 300u);
    EXPECT_EQ(a.n_synthetic, 350u);
    for (std::size_t i = 0; i < a.items.size(); ++i) EXPECT_EQ(a.items[i].id, b.items[i].id);
    const auto c = assemble_training_set(real, syn, 8);
    bool differs = false;
    for (std::size_t i = 0; i < a.items.size(); ++i) differs |= a.items[i].id != c.items[i].id;
    EXPECT_TRUE(differs);
    EXPECT_EQ(assemble_training_set(real, {}, 1).items.size(), 300u);
    EXPECT_THROW(assemble_training_set(real, {real[0]}, 1), IntegrityError);
}

TEST(SyntheticSplit, PatientLevelEightyTwenty) {
    ToyData data(0, 10);
    const auto syn = synthetic_examples(data.synthetic, data.tmp / "syn", findings::study());
    const auto s = split_synthetic(syn, 0.8, 1);
    EXPECT_EQ(s.train.size(), 8u * 7u);
    EXPECT_EQ(s.test.size(), 2u * 7u);
    std::set<std::string> train_patients;
    for (const auto& e : s.train) train_patients.insert(e.patient_id);
    for (const auto& e : s.test) EXPECT_FALSE(train_patients.count(e.patient_id));
}

TEST(Training, FiveEpochLossFallsAndCheckpointSaves) {
    ToyData data(240);
    const auto set = assemble_training_set(real_examples(data.scans), {}, 1);
    const auto cfg = toy_config(5);
    const auto r = train(set, cfg, disk_loader(), nullptr, data.tmp / "log.jsonl");
    ASSERT_EQ(r.log.size(), 5u);
    double first_half = r.log[0].train_loss + r.log[1].train_loss, second_half = r.log[3].train_loss + r.log[4].train_loss;
    EXPECT_LT(second_half, first_half);
    EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);

    save_model(r, cfg, data.tmp / "model");
    EXPECT_TRUE(fs::exists(data.tmp / "model" / "model.bin"));
    const auto adapter = ModelAdapter::load(data.tmp / "model");
    const auto img = load_image(data.scans[0].scan.image_path);
    const auto p = adapter.predict(img);
    const auto direct = r.model.probabilities(img);
    EXPECT_FLOAT_EQ(static_cast<float>(p.at("square")), direct[0]);

    // tampering with the checkpoint is caught
    auto bytes = fixtures::slurp(data.tmp / "model" / "model.bin");
    bytes[bytes.size() / 2] ^= 0x5a;
    fixtures::spit(data.tmp / "model" / "model.bin", bytes);
    EXPECT_THROW(ModelAdapter::load(data.tmp / "model"), IntegrityError);
}

TEST(Training, ReplaysByteIdentically) {
    ToyData data(120);
    const auto set = assemble_training_set(real_examples(data.scans), {}, 1);
    const auto cfg = toy_config(3);
    train(set, cfg, disk_loader(), nullptr, data.tmp / "a.jsonl");
    train(set, cfg, disk_loader(), nullptr, data.tmp / "b.jsonl");
    EXPECT_EQ(fixtures::slurp(data.tmp / "a.jsonl"), fixtures::slurp(data.tmp / "b.jsonl"));
    const auto first = nlohmann::json::parse(fixtures::slurp(data.tmp / "a.jsonl").substr(0, fixtures::slurp(data.tmp / "a.jsonl").find('\n')));
    EXPECT_TRUE(first.contains("config"));
}

TEST(Training, PatienceZeroStopsAtFirstStall) {
    ToyData data(120);
    const auto set = assemble_training_set(real_examples(data.scans), {}, 1);
    auto cfg = toy_config(40);
    cfg.patience = 0;
    const auto r = train(set, cfg, disk_loader());
    // stops right after the first epoch that does not improve
    ASSERT_FALSE(r.log.back().improved);
    for (std::size_t i = 0; i + 1 < r.log.size(); ++i) EXPECT_TRUE(r.log[i].improved);
    EXPECT_LT(r.stop_epoch, 40);
}

TEST(Training, ConfigValidation) {
    TrainingConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.findings, findings::study());
    EXPECT_EQ(c.learning_rate, 1e-4);
    c.label_smoothing = 0.6;
    EXPECT_THROW(c.validate(), ConfigError);
    const auto kv = TrainingConfig::from_kv(KvConfig::parse("epochs = 3\nscheme = masked\nfindings = edema, mass\n"));
    EXPECT_EQ(kv.epochs, 3);
    EXPECT_EQ(kv.scheme, LabelingScheme::MASKED);
    EXPECT_EQ(kv.architecture.outputs, 2);
}

TEST(Auc, HandExamples) {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(*roc_auc(s, y), 0.75);
    EXPECT_DOUBLE_EQ(*roc_auc(std::vector<double>{0.1, 0.2, 0.9}, std::vector<int>{0, 0, 1}), 1.0);
    EXPECT_DOUBLE_EQ(*roc_auc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}), 0.5);
    EXPECT_FALSE(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());
}

TEST(Auc, TableLeavesUndefinedCellsBlank) {
    AucRow row;
    row.cohort = "x";
    row.findings = {"edema", "hernia"};
    row.auc = {0.91234, std::nullopt};
    row.positives = {3, 0};
    row.negatives = {5, 8};
    row.notes = {"", "no positives"};
    std::stringstream ss;
    write_auc_table({row}, ss);
    EXPECT_NE(ss.str().find("0.9123"), std::string::npos) << ss.str();
    EXPECT_NE(ss.str().find("0.9123,\n"), std::string::npos) << ss.str();
}

TEST(Sweep, TwelveCellsAndReplay) {
    ToyData data(60);
    MockBackend editor({{"square", data.cfg.square}, {"circle", data.cfg.circle}});
    EditorParams p;
    p.image_size = data.cfg.image_size;
    const std::vector<PromptSpec> prompts{{"square", "toy square", PromptStatus::FINAL},
                                          {"circle", "toy circle", PromptStatus::FINAL}};
    GenerationContext ctx{data.tmp / "syn"};
    const auto manifest = generate_training_cohort(ToyGenerator{}, editor, 6, prompts, 1, p, 3, ctx);
    const auto syn = synthetic_examples(manifest, data.tmp / "syn", {"square", "circle"});
    ASSERT_EQ(syn.size(), 18u);
    auto inputs = [&](std::size_t n) {
        SweepInputs in;
        std::vector<TrainingExample> s(syn.begin(), syn.begin() + static_cast<std::ptrdiff_t>(std::min(n, syn.size())));
        in.train = assemble_training_set(real_examples(data.scans), s, 1);
        in.test = real_examples(data.scans);
        CooccurrenceMatrix m;
        m.row_keys = m.col_keys = {"square", "circle"};
        m.fractions = {{1.0, 0.1}, {0.1, 1.0}};
        m.row_counts = {10, 10};
        m.cell_counts = {{10, 10}, {10, 10}};
        in.matrix = m;
        return in;
    };
    auto cfg = toy_config(1);
    const auto cells = small_scale_sweep(inputs, cfg, disk_loader(), {0, 5});
    ASSERT_EQ(cells.size(), 12u);
    for (const auto& c : cells) EXPECT_TRUE(c.error.empty()) << c.error;
    const auto again = small_scale_sweep(inputs, cfg, disk_loader(), {0, 5});
    for (std::size_t i = 0; i < cells.size(); ++i) EXPECT_EQ(cells[i].auc.auc, again[i].auc.auc);
    std::stringstream report;
    write_sweep_report(cells, report);
    EXPECT_NE(report.str().find("cooccurrence"), std::string::npos);
}
