#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"
#include "cxrcf/core/rng.hpp"
#include "cxrcf/core/stats.hpp"
#include "cxrcf/stress.hpp"
#include "fixtures.hpp"

using namespace cxrcf;

namespace {

// Images whose first pixel carries the "edema" probability and second the "mass" one.
Image coded(float edema, float mass) {
    Image i(2, 1);
    i.pixels = {edema, mass};
    return i;
}

FunctionAdapter coded_adapter() {
    AdapterInfo info{"coded", {"edema", "mass"}, 0, Invocation::IN_PROCESS, ""};
    return FunctionAdapter(info, [](const Image& img) {
        return Predictions{{"edema", img.pixels[0]}, {"mass", img.pixels[1]}};
    });
}

PredictItem item(const std::string& id, PredictionSource src, const std::string& added = "",
                 const std::string& base = "") {
    return {id, id, src, added, base};
}

} // namespace

TEST(Percentile, Midrank) {
    const std::vector<double> ref{0.1, 0.2, 0.3, 0.4};
    EXPECT_DOUBLE_EQ(to_percentile(0.3, ref), 62.5);
    EXPECT_DOUBLE_EQ(to_percentile(0.7, std::vector<double>{0.7}), 50.0);
    EXPECT_DOUBLE_EQ(to_percentile(1.0, ref), 100.0);
    EXPECT_DOUBLE_EQ(to_percentile(0.0, ref), 0.0);
    EXPECT_THROW(to_percentile(0.5, std::vector<double>{}), ArgumentError);
    PercentileReference pr({0.4, 0.1, 0.3, 0.2, 0.3});
    EXPECT_DOUBLE_EQ(pr(0.3), 100.0 * (2 + 0.5 * 2) / 5);
}

TEST(Adapters, ConstantCohortAllHalf) {
    ConstantAdapter a(findings::study(), 0.5);
    std::vector<PredictItem> items;
    for (int i = 0; i < 10; ++i) items.push_back(item("s" + std::to_string(i), PredictionSource::BASELINE));
    const auto t = predict_cohort(a, items, findings::study(), [](const std::string&) { return coded(0, 0); });
    ASSERT_EQ(t.rows.size(), 10u);
    for (const auto& r : t.rows)
        for (const auto& [k, v] : r.probabilities) EXPECT_EQ(v, 0.5);
}

TEST(Adapters, UnsupportedFindingRejected) {
    ConstantAdapter a({"edema", "mass"}, 0.5);
    EXPECT_THROW(predict_cohort(a, {}, {"hernia"}), ArgumentError);
    EXPECT_THROW(check_predictions(a.info(), {{"edema", 1.2}, {"mass", 0.1}}, {"edema"}), ValidationError);
}

TEST(Adapters, FromConfig) {
    const auto a = adapter_from_config(KvConfig::parse("name = c\nfindings = edema, mass\ninvocation = IN_PROCESS\n"
                                                       "builtin = constant\nvalue = 0.25\n"));
    EXPECT_EQ(a->info().supported_findings, (std::vector<std::string>{"edema", "mass"}));
    EXPECT_EQ(a->predict(coded(0, 0)).at("mass"), 0.25);
    EXPECT_THROW(adapter_from_config(KvConfig::parse("name = x\nfindings = edema\ninvocation = SUBPROCESS\n")),
                 ConfigError);
    register_builtin_adapter("seven", [](const KvConfig& kv) {
        return std::make_unique<ConstantAdapter>(std::vector<std::string>{kv.require("findings")}, 0.7);
    });
    EXPECT_EQ(adapter_from_config(KvConfig::parse("name = s\nfindings = edema\nbuiltin = seven\n"))
                  ->predict(coded(0, 0))
                  .at("edema"),
              0.7);
}

TEST(Adapters, SubprocessContract) {
    fixtures::TempDir tmp;
    fixtures::spit(tmp / "adapter.sh", "#!/bin/sh\necho '{\"edema\": 0.125, \"mass\": 0.5}'\n");
    std::filesystem::permissions(tmp / "adapter.sh", std::filesystem::perms::owner_all);
    SubprocessAdapter a({"sh", {"edema", "mass"}, 8, Invocation::SUBPROCESS, ""}, (tmp / "adapter.sh").string(),
                        tmp.path());
    const auto p = a.predict(fixtures::gradient(12));
    EXPECT_EQ(p.at("edema"), 0.125);
}

TEST(ChangeMatrix, IdenticalPredictionsGiveZero) {
    ConstantAdapter a({"edema", "mass"}, 0.3);
    ProbabilityTable base, cf;
    auto loader = [](const std::string&) { return coded(0, 0); };
    std::vector<PredictItem> b, c;
    for (int i = 0; i < 5; ++i) {
        b.push_back(item("b" + std::to_string(i), PredictionSource::BASELINE));
        c.push_back(item("c" + std::to_string(i), PredictionSource::COUNTERFACTUAL, "edema", "b" + std::to_string(i)));
    }
    base = predict_cohort(a, b, {"edema", "mass"}, loader);
    cf = predict_cohort(a, c, {"edema", "mass"}, loader);
    const auto m = compute_change_matrix(base, cf, build_reference(base, {"edema", "mass"}), {"edema"}, {"edema", "mass"});
    EXPECT_EQ(m.at("edema", "edema"), 0.0);
    EXPECT_EQ(m.at("edema", "mass"), 0.0);
}

TEST(ChangeMatrix, BruteForcePerPatient) {
    Rng rng(5);
    std::map<std::string, Image> images;
    std::vector<PredictItem> b, c, ref;
    for (int i = 0; i < 20; ++i) {
        const auto id = "b" + std::to_string(i);
        const float e = static_cast<float>(rng.uniform() * 0.5), m = static_cast<float>(rng.uniform() * 0.5);
        images[id] = coded(e, m);
        b.push_back(item(id, PredictionSource::BASELINE));
        ref.push_back(item(id, PredictionSource::REFERENCE));
        // mass edit raises mass strongly and edema a little
        images["cm" + std::to_string(i)] = coded(e + 0.1f * static_cast<float>(rng.uniform()), m + 0.4f);
        c.push_back(item("cm" + std::to_string(i), PredictionSource::COUNTERFACTUAL, "mass", id));
    }
    for (int i = 0; i < 30; ++i) {
        const auto id = "r" + std::to_string(i);
        images[id] = coded(static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()));
        ref.push_back(item(id, PredictionSource::REFERENCE));
    }
    auto loader = [&](const std::string& p) { return images.at(p); };
    const auto a = coded_adapter();
    const std::vector<std::string> f{"edema", "mass"};
    const auto tb = predict_cohort(a, b, f, loader), tc = predict_cohort(a, c, f, loader),
               tr = predict_cohort(a, ref, f, loader);
    const auto m = compute_change_matrix(tb, tc, build_reference(tr, f), {"mass"}, f);

    for (const auto& finding : f) {
        std::vector<double> refcol;
        for (const auto& it : ref) refcol.push_back(finding == "edema" ? images[it.scan_id].pixels[0]
                                                                        : images[it.scan_id].pixels[1]);
        auto pct = [&](double p) {
            double below = 0, tie = 0;
            for (double r : refcol) {
                below += r < p;
                tie += r == p;
            }
            return 100.0 * (below + 0.5 * tie) / static_cast<double>(refcol.size());
        };
        std::vector<double> deltas;
        for (int i = 0; i < 20; ++i) {
            const int k = finding == "edema" ? 0 : 1;
            deltas.push_back(pct(images["cm" + std::to_string(i)].pixels[k]) - pct(images["b" + std::to_string(i)].pixels[k]));
        }
        EXPECT_DOUBLE_EQ(m.at("mass", finding), stats::median(deltas)) << finding;
    }
    EXPECT_GT(m.at("mass", "mass"), 0.0);
    EXPECT_EQ(m.row_counts[0], 20u);

    std::stringstream ss;
    m.write_csv(ss);
    const auto back = PercentileChangeMatrix::read_csv(ss);
    EXPECT_DOUBLE_EQ(back.at("mass", "edema"), m.at("mass", "edema"));
}

TEST(ChangeMatrix, MissingCounterfactualExcluded) {
    const auto a = coded_adapter();
    std::map<std::string, Image> images{{"b0", coded(0.1f, 0.1f)}, {"b1", coded(0.2f, 0.2f)}, {"c0", coded(0.9f, 0.1f)}};
    auto loader = [&](const std::string& p) { return images.at(p); };
    const std::vector<std::string> f{"edema", "mass"};
    const auto tb = predict_cohort(a, {item("b0", PredictionSource::BASELINE), item("b1", PredictionSource::BASELINE)},
                                   f, loader);
    const auto tc = predict_cohort(a, {item("c0", PredictionSource::COUNTERFACTUAL, "edema", "b0")}, f, loader);
    const auto m = compute_change_matrix(tb, tc, build_reference(tb, f), {"edema", "mass"}, f);
    EXPECT_EQ(m.row_counts[0], 1u);
    EXPECT_EQ(m.row_excluded[0], 1u);
    EXPECT_TRUE(std::isnan(m.at("mass", "edema")));
}

TEST(ProbabilityReport, ConstantAdapterEqualMedians) {
    ConstantAdapter a({"edema"}, 0.4);
    auto loader = [](const std::string&) { return coded(0, 0); };
    const auto tb = predict_cohort(a, {item("b", PredictionSource::BASELINE)}, {"edema"}, loader);
    const auto tc = predict_cohort(a, {item("c", PredictionSource::COUNTERFACTUAL, "edema", "b")}, {"edema"}, loader);
    const auto rows = probability_reference_report(tb, tc, nullptr, {"edema"}, {"edema"});
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].baseline_median, rows[0].modified_median);
    EXPECT_FALSE(rows[0].reader_cooccurrence.has_value());
}

TEST(ProbabilityTable, CsvRoundTrip) {
    const auto a = coded_adapter();
    auto loader = [](const std::string&) { return coded(0.25f, 0.75f); };
    const auto t = predict_cohort(a, {item("c", PredictionSource::COUNTERFACTUAL, "mass", "b")}, {"edema", "mass"}, loader);
    std::stringstream ss;
    t.write_csv(ss);
    const auto back = ProbabilityTable::read_csv(ss);
    ASSERT_EQ(back.rows.size(), 1u);
    EXPECT_EQ(back.rows[0].item.baseline_id, "b");
    EXPECT_EQ(back.rows[0].probabilities.at("mass"), 0.75);
}
