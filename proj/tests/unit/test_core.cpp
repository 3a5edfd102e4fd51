#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "cxrcf/core/cooccurrence.hpp"
#include "cxrcf/core/csv.hpp"
#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"
#include "cxrcf/core/hash.hpp"
#include "cxrcf/core/heatmap.hpp"
#include "cxrcf/core/image.hpp"
#include "cxrcf/core/kvconfig.hpp"
#include "cxrcf/core/parallel.hpp"
#include "cxrcf/core/rng.hpp"
#include "cxrcf/core/stats.hpp"
#include "fixtures.hpp"

using namespace cxrcf;

TEST(Csv, QuotedFieldsRoundTrip) {
    const csv::Row row{"plain", "with,comma", "with \"quote\"", "multi\nline", ""};
    std::stringstream ss;
    csv::write_row(ss, row);
    csv::write_row(ss, {"a", "b", "c", "d", "e"});
    const auto rows = csv::parse(ss.str());
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0], row);
}

TEST(Csv, TableRequireNamesEveryMissingColumn) {
    std::stringstream in("a,b\n1,2\n");
    const auto t = csv::Table::read(in);
    EXPECT_EQ(t.column("b"), 1u);
    try {
        t.require({"a", "x", "y"});
        FAIL();
    } catch (const SchemaError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("x"), std::string::npos);
        EXPECT_NE(msg.find("y"), std::string::npos);
    }
}

TEST(Csv, LineNumbersFollowPhysicalLines) {
    std::stringstream in("h\n\"two\nlines\"\nthird\n");
    std::vector<std::size_t> lines;
    const auto rows = csv::parse(in, &lines);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(lines[1], 2u);
    EXPECT_EQ(lines[2], 4u);
}

TEST(Hash, Sha256KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Hash, StableHashDependsOnPartBoundaries) {
    EXPECT_EQ(stable_hash64({"a", "bc"}), stable_hash64({"a", "bc"}));
    EXPECT_NE(stable_hash64({"a", "bc"}), stable_hash64({"ab", "c"}));
    // first 8 bytes of sha256("abc") big-endian
    EXPECT_EQ(stable_hash64({"abc"}), 0xba7816bf8f01cfeaULL);
}

TEST(Rng, ReplaysAndStaysInRange) {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        const auto x = a.below(7);
        EXPECT_EQ(x, b.below(7));
        EXPECT_LT(x, 7u);
        const double u = a.uniform();
        EXPECT_EQ(u, b.uniform());
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    Rng(3).shuffle(std::span<int>(v));
    Rng(3).shuffle(std::span<int>(w));
    EXPECT_EQ(v, w);
    std::sort(w.begin(), w.end());
    for (int i = 0; i < 50; ++i) EXPECT_EQ(w[i], i);
}

TEST(Stats, Type7Quantiles) {
    // numpy.quantile([1, 2, 3, 4], [0.25, 0.5, 0.75]) = 1.75, 2.5, 3.25
    EXPECT_DOUBLE_EQ(stats::quantile({4, 1, 3, 2}, 0.25), 1.75);
    const std::vector<double> v{1, 2, 3, 4};
    EXPECT_DOUBLE_EQ(stats::median(v), 2.5);
    EXPECT_DOUBLE_EQ(stats::iqr(v), 1.5);
    EXPECT_DOUBLE_EQ(stats::mean(v), 2.5);
    EXPECT_TRUE(std::isnan(stats::quantile({}, 0.5)));
}

TEST(KvConfig, CommentsAndTypedLookups) {
    const auto kv = KvConfig::parse("# comment\nname = x\n; other\nrate = 0.25\nn = 7\n");
    EXPECT_EQ(kv.require("name"), "x");
    EXPECT_DOUBLE_EQ(kv.get_double("rate", 0), 0.25);
    EXPECT_EQ(kv.get_int("n", 0), 7);
    EXPECT_EQ(kv.get_or("missing", "d"), "d");
    EXPECT_THROW(kv.require("missing"), ConfigError);
}

TEST(Image, PngRoundTripIsQuantized) {
    fixtures::TempDir tmp;
    const auto img = fixtures::gradient(17);
    save_png(img, tmp / "a.png");
    const auto back = load_image(tmp / "a.png");
    EXPECT_EQ(back, quantize8(img));
    EXPECT_EQ(encode_png(img), encode_png(img));
}

TEST(Image, ResizeSameSizeIsIdentity) {
    const auto img = fixtures::gradient(12);
    EXPECT_EQ(resize(img, 12, 12), img);
    const auto small = downsample(img, 4, 4);
    EXPECT_EQ(small.width, 4);
    // block mean of the top-left 3x3 block
    double sum = 0;
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) sum += img.at(x, y);
    EXPECT_NEAR(small.at(0, 0), sum / 9.0, 1e-6);
}

TEST(Cooccurrence, CsvRoundTripKeepsNaN) {
    CooccurrenceMatrix m;
    m.row_keys = {"edema", "mass"};
    m.col_keys = {"edema", "mass"};
    m.fractions = {{0.9, 0.1}, {std::nan(""), std::nan("")}};
    m.row_counts = {10, 0};
    m.cell_counts = {{10, 10}, {0, 0}};
    std::stringstream ss;
    m.write_csv(ss);
    const auto back = CooccurrenceMatrix::read_csv(ss);
    EXPECT_DOUBLE_EQ(back.at("edema", "edema"), 0.9);
    EXPECT_TRUE(std::isnan(back.at("mass", "edema")));
    EXPECT_EQ(back.row_counts, m.row_counts);
    EXPECT_THROW(back.row_index("hernia"), NotFoundError);
}

TEST(Findings, DisplayNamesRoundTrip) {
    EXPECT_EQ(findings::study().size(), 6u);
    EXPECT_EQ(findings::reader().size(), 8u);
    EXPECT_EQ(findings::display_name("pleural_effusion"), "Pleural Effusion");
    for (const auto& k : findings::reader()) EXPECT_EQ(findings::key_from_display(findings::display_name(k)), k);
}

TEST(Parallel, RethrowsFirstFailure) {
    std::vector<int> hit(100, 0);
    parallel_for(100, [&](std::size_t i) { hit[i] = 1; }, 4);
    EXPECT_EQ(std::accumulate(hit.begin(), hit.end(), 0), 100);
    EXPECT_THROW(parallel_for(10, [](std::size_t i) { if (i == 5) throw ValidationError("x"); }, 3),
                 ValidationError);
}

TEST(Heatmap, WritesPng) {
    fixtures::TempDir tmp;
    HeatmapSpec spec{"t", {"a", "b"}, {"c", "d"}, {{10, -20}, {std::nan(""), 0}}};
    write_heatmap_png(spec, tmp / "h.png");
    const auto img = load_image(tmp / "h.png");
    EXPECT_GT(img.width, 0);
    write_heatmap_panels({spec, spec}, tmp / "p.png");
    EXPECT_GT(load_image(tmp / "p.png").width, img.width);
}
