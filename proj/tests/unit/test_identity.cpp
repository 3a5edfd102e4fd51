#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <set>
#include <sstream>

#include "cxrcf/core/csv.hpp"
#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/rng.hpp"
#include "cxrcf/identity.hpp"
#include "cxrcf/toy_shapes.hpp"
#include "fixtures.hpp"
#include "reads_fixture.hpp"

using namespace cxrcf;

namespace {

// Frechet distance between two Gaussian fits, through explicit matrix square roots.
double frechet_general(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& xb) {
    auto fit = [](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
        mu = x.colwise().mean();
        const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
        cov = (c.transpose() * c) / static_cast<double>(x.rows());
    };
    Eigen::VectorXd ma, mb;
    Eigen::MatrixXd ca, cb;
    fit(xa, ma, ca);
    fit(xb, mb, cb);
    auto sqrtm = [](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        return Eigen::MatrixXd(es.eigenvectors() * es.eigenvalues().cwiseMax(0).cwiseSqrt().asDiagonal() *
                               es.eigenvectors().transpose());
    };
    const Eigen::MatrixXd sa = sqrtm(ca);
    const Eigen::MatrixXd cross = sqrtm(sa * cb * sa);
    return (ma - mb).squaredNorm() + (ca + cb - 2 * cross).trace();
}

std::vector<LabeledScan> nih(const std::string& rows) {
    std::stringstream in(std::string(fixtures::kNihHeader) + rows);
    return ingest_cohort(in, Cohort::NIH).records;
}

} // namespace

TEST(Pfid, AnalyticValues) {
    const std::vector<double> a{3, 0}, b{0, 4};
    EXPECT_DOUBLE_EQ(pfid(a, b), 25.0);
    EXPECT_DOUBLE_EQ(pfid(a, a), 0.0);
    EXPECT_THROW(pfid(a, std::vector<double>{1, 2, 3}), ArgumentError);
}

TEST(Pfid, MatchesGeneralFrechetOnSingletons) {
    Rng rng(11);
    for (int dim : {2, 17, 128}) {
        std::vector<double> a(dim), b(dim);
        for (int i = 0; i < dim; ++i) {
            a[i] = rng.normal();
            b[i] = rng.normal() * 3;
        }
        const Eigen::MatrixXd xa = Eigen::Map<Eigen::RowVectorXd>(a.data(), dim);
        const Eigen::MatrixXd xb = Eigen::Map<Eigen::RowVectorXd>(b.data(), dim);
        EXPECT_NEAR(pfid(a, b), frechet_general(xa, xb), 1e-9);
    }
}

TEST(ToyEmbedder, DeterministicAndDimensioned) {
    ToyEmbedder e(32);
    const auto img = toy::background(40, 0.3f, 0.05f, 1);
    EXPECT_EQ(e.embed(img), ToyEmbedder(32).embed(img));
    EXPECT_EQ(e.embed(img).size(), 32u);
    EXPECT_NE(e.embed(img), ToyEmbedder(32, 16, 99).embed(img));
}

TEST(Cache, HitsOnSecondLookup) {
    fixtures::TempDir tmp;
    EmbeddingCache cache(tmp.path());
    ToyEmbedder e;
    const auto img = fixtures::gradient(20);
    const auto a = cache.get_or_compute(e, img);
    const auto b = cache.get_or_compute(e, img);
    EXPECT_EQ(a, b);
    EXPECT_EQ(cache.hits(), 1u);
    EXPECT_EQ(cache.misses(), 1u);
    EmbeddingCache fresh(tmp.path());
    EXPECT_EQ(fresh.get_or_compute(e, img), a);
    EXPECT_EQ(fresh.hits(), 1u);
}

TEST(Pairing, OnePairPerPatient) {
    const auto scans = nih("b.png,No Finding,0,p1,50,M,PA\n"
                           "f1.png,Cardiomegaly,1,p1,50,M,PA\n"
                           "f2.png,Cardiomegaly,2,p1,51,M,PA\n"
                           "f3.png,Cardiomegaly|Edema,3,p1,52,M,PA\n"
                           "late.png,Cardiomegaly,4,p1,55,M,PA\n"
                           "q.png,No Finding,0,p2,40,F,PA\n"
                           "q1.png,Edema,1,p2,41,F,PA\n");
    PairingInputs in;
    in.scans = &scans;
    const auto pairs = build_pairings(in, "cardiomegaly", PairKind::REAL, 3);
    ASSERT_EQ(pairs.size(), 1u);
    EXPECT_EQ(pairs[0].baseline_id, "b.png");
    EXPECT_NE(pairs[0].comparison_id, "late.png");
    const auto again = build_pairings(in, "cardiomegaly", PairKind::REAL, 3);
    EXPECT_EQ(again[0].comparison_id, pairs[0].comparison_id);
    EXPECT_EQ(build_pairings(in, "edema", PairKind::REAL, 3).size(), 2u);
    EXPECT_TRUE(build_pairings(in, "hernia", PairKind::REAL, 3).empty());
}

TEST(Pairing, ControlIsCrossPatient) {
    const auto m = fixtures::eval_manifest(5);
    std::vector<LabeledScan> sources(5);
    for (int i = 0; i < 5; ++i) {
        sources[i].scan.scan_id = "nf" + std::to_string(i);
        sources[i].scan.patient_id = "p" + std::to_string(i);
        sources[i].scan.image_path = "src/nf" + std::to_string(i) + ".png";
    }
    PairingInputs in;
    in.scans = &sources;
    in.manifest = &m;
    // without the source scans there is nothing to pair against
    EXPECT_TRUE(build_pairings(PairingInputs{nullptr, &m, {}, 2}, "edema", PairKind::MODEL, 1).empty());
    const auto model = build_pairings(in, "edema", PairKind::MODEL, 1);
    ASSERT_EQ(model.size(), 5u);
    for (const auto& p : model) {
        EXPECT_EQ(p.baseline_patient, p.comparison_patient);
        EXPECT_EQ(p.baseline_path, "src/" + p.baseline_id + ".png");
    }
    const auto control = build_pairings(in, "edema", PairKind::CONTROL, 1);
    ASSERT_EQ(control.size(), 5u);
    std::set<std::string> used;
    for (const auto& p : control) {
        EXPECT_NE(p.baseline_patient, p.comparison_patient);
        used.insert(p.comparison_id);
    }
    EXPECT_EQ(used.size(), 5u);
}

TEST(Scoring, HandComputedMedians) {
    // embedder reading the first two pixels, so the embedding is known exactly
    struct Corner final : Embedder {
        EmbedderTag tag() const override { return {"corner", 2}; }
        std::vector<double> embed(const Image& img) const override { return {img.pixels[0], img.pixels[1]}; }
    };
    std::map<std::string, Image> images;
    auto put = [&](const std::string& id, float x, float y) {
        Image i(2, 1);
        i.pixels = {x, y};
        images[id] = i;
    };
    std::vector<ImagePair> pairs;
    const float d[5] = {0.0f, 0.25f, 0.5f, 0.125f, 1.0f};
    for (int k = 0; k < 5; ++k) {
        put("b" + std::to_string(k), 0.0f, 0.0f);
        put("c" + std::to_string(k), d[k], 0.0f);
        pairs.push_back({PairKind::MODEL, "edema", "b" + std::to_string(k), "b" + std::to_string(k), "p",
                         "c" + std::to_string(k), "c" + std::to_string(k), "p"});
    }
    pairs.push_back({PairKind::MODEL, "edema", "b0", "b0", "p", "gone", "gone", "p"});
    const auto r = score_pairings(pairs, Corner{}, [&](const std::string& path) {
        if (!images.count(path)) throw NotFoundError(path);
        return images.at(path);
    });
    ASSERT_EQ(r.summaries.size(), 1u);
    // squared distances 0, 1/16, 1/4, 1/64, 1 -> median 1/16; Q1 1/64, Q3 1/4
    EXPECT_DOUBLE_EQ(r.summaries[0].median, 0.0625);
    EXPECT_DOUBLE_EQ(r.summaries[0].iqr, 0.25 - 0.015625);
    EXPECT_EQ(r.summaries[0].n, 5u);
    EXPECT_EQ(r.summaries[0].skipped, 1u);

    std::stringstream table;
    write_summary_table(r.summaries, table);
    EXPECT_NE(table.str().find("N=5"), std::string::npos) << table.str();
}

TEST(Scoring, IdenticalImagesScoreZero) {
    const auto img = fixtures::gradient(16);
    std::vector<ImagePair> pairs(4, ImagePair{PairKind::MODEL, "mass", "a", "a", "p", "a", "a", "p"});
    const auto r = score_pairings(pairs, ToyEmbedder{}, [&](const std::string&) { return img; });
    EXPECT_EQ(r.summaries[0].median, 0.0);
    EXPECT_EQ(r.summaries[0].iqr, 0.0);
}
