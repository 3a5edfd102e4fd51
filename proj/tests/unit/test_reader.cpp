#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"
#include "cxrcf/core/image.hpp"
#include "cxrcf/reader_server.hpp"
#include "cxrcf/reader_study.hpp"
#include "fixtures.hpp"
#include "reads_fixture.hpp"

using namespace cxrcf;
using nlohmann::json;
namespace fs = std::filesystem;

TEST(Assign, TwoDisjointSessionsOf400) {
    const auto m = fixtures::eval_manifest(100);
    const auto s = assign_reads(m, {"r1", "r2"}, 400, 5);
    ASSERT_EQ(s.size(), 2u);
    std::set<std::string> ids;
    std::set<int> displays;
    for (const auto& sess : s) {
        EXPECT_EQ(sess.items.size(), 400u);
        for (const auto& it : sess.items) {
            ids.insert(it.output_id);
            displays.insert(it.display_id);
        }
    }
    EXPECT_EQ(ids.size(), 800u);
    EXPECT_EQ(*displays.begin(), 1);
    EXPECT_EQ(*displays.rbegin(), 800);
    const auto again = assign_reads(m, {"r1", "r2"}, 400, 5);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < 400; ++k) EXPECT_EQ(again[i].items[k].output_id, s[i].items[k].output_id);
    EXPECT_THROW(assign_reads(m, {"r1", "r2", "r3"}, 400, 5), ArgumentError);
}

TEST(Assign, SingleItem) {
    const auto m = fixtures::eval_manifest(1);
    const auto s = assign_reads(m, {"r"}, 1, 1);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].items.size(), 1u);
}

TEST(Cooccurrence, PlantedRatesExact) {
    const auto m = fixtures::eval_manifest(100);
    const auto reads = fixtures::planted_reads(m);
    const auto mat = compute_read_cooccurrence(reads, m);
    const auto& keys = findings::reader();
    for (std::size_t r = 0; r < keys.size(); ++r)
        for (std::size_t c = 0; c < keys.size(); ++c)
            EXPECT_EQ(mat.at(keys[r], keys[c]), fixtures::planted(r, c) / 100.0) << keys[r] << "/" << keys[c];
    EXPECT_DOUBLE_EQ(mat.at("hernia", "hernia"), 0.99);
    EXPECT_DOUBLE_EQ(mat.at("pneumonia", "pneumonia"), 0.89);
    const auto per = cooccurrence_by_reader(reads, m);
    EXPECT_EQ(per.size(), 2u);
}

TEST(Cooccurrence, TenEdemaReadsNinePresent) {
    const auto m = fixtures::eval_manifest(10);
    std::vector<ReadRecord> reads;
    int k = 0;
    for (const auto& r : m.records) {
        if (r.prompt.pathology_key != "edema") continue;
        ReadRecord rd;
        rd.reader_id = "r";
        rd.display_id = ++k;
        rd.output_id = r.output_id;
        rd.labels[1] = k <= 9 ? kReadPresent : kReadAbsent;
        reads.push_back(rd);
    }
    const auto mat = compute_read_cooccurrence(reads, m);
    EXPECT_DOUBLE_EQ(mat.at("edema", "edema"), 0.9);
    EXPECT_TRUE(std::isnan(mat.at("mass", "mass")));
}

TEST(Cooccurrence, UnsurePolicies) {
    const auto m = fixtures::eval_manifest(2);
    std::vector<ReadRecord> reads;
    int k = 0;
    for (const auto& r : m.records) {
        ReadRecord rd;
        rd.display_id = ++k;
        rd.reader_id = "r";
        rd.output_id = r.output_id;
        rd.labels.fill(kReadUnsure);
        reads.push_back(rd);
    }
    const auto absent = compute_read_cooccurrence(reads, m, UnsurePolicy::AS_ABSENT);
    const auto present = compute_read_cooccurrence(reads, m, UnsurePolicy::AS_PRESENT);
    const auto excluded = compute_read_cooccurrence(reads, m, UnsurePolicy::EXCLUDE);
    for (const auto& row : absent.fractions)
        for (double v : row) EXPECT_EQ(v, 0.0);
    for (const auto& row : present.fractions)
        for (double v : row) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(excluded.cell_counts[0][0], 0u);
}

TEST(Cooccurrence, UnknownOutputIdRejected) {
    const auto m = fixtures::eval_manifest(1);
    ReadRecord rd;
    rd.output_id = "cf-unknown";
    EXPECT_THROW(compute_read_cooccurrence({rd}, m), ValidationError);
}

TEST(Realism, ExactFractions) {
    std::vector<ReadRecord> reads(800);
    for (std::size_t i = 0; i < reads.size(); ++i) {
        reads[i].reader_id = i < 400 ? "r1" : "r2";
        reads[i].display_id = static_cast<int>(i) + 1;
        reads[i].artificial_flag = i < 55 ? 1 : 0;
        reads[i].extra_anomaly_flag = i >= 780 ? 1 : 0;
    }
    const auto s = realism_summary(reads);
    EXPECT_DOUBLE_EQ(s.realistic_fraction, 0.93125);
    EXPECT_DOUBLE_EQ(s.extra_anomaly_fraction, 0.025);
    EXPECT_EQ(s.per_reader.at("r1").artificial, 55u);
    EXPECT_THROW(realism_summary({}), ValidationError);
    reads[3].artificial_flag.reset();
    EXPECT_THROW(realism_summary(reads), ValidationError);
}

TEST(Spreadsheet, ExportImportExportIsByteIdentical) {
    const auto m = fixtures::eval_manifest(100);
    const auto sessions = assign_reads(m, {"r1", "r2"}, 400, 3);
    const auto map = display_map(sessions);
    std::vector<ReadRecord> reads;
    for (const auto& s : sessions)
        for (const auto& it : s.items) {
            ReadRecord rd;
            rd.reader_id = s.reader_id;
            rd.session_id = s.session_id;
            rd.display_id = it.display_id;
            rd.output_id = it.output_id;
            rd.labels[it.display_id % 8] = it.display_id % 3;
            rd.notes = it.display_id % 50 == 0 ? "odd, \"quoted\" note" : "";
            reads.push_back(rd);
        }
    std::stringstream first;
    export_reads(reads, first);
    std::stringstream map_csv;
    write_display_map(map, map_csv);
    const auto map_back = read_display_map(map_csv);
    std::stringstream in(first.str());
    const auto imported = import_reads(in, map_back);
    EXPECT_EQ(imported.size(), 800u);
    std::stringstream second;
    export_reads(imported, second);
    EXPECT_EQ(first.str(), second.str());
    const auto text = first.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 801);
}

TEST(Spreadsheet, BlankCellsReadAsZeroAndUnknownIdsFail) {
    DisplayMap map{{1, {"s", "r", "cf-a"}}};
    std::string header = "display_id";
    for (const auto& k : findings::reader()) header += "," + findings::display_name(k);
    header += ",Notes\n";
    std::stringstream ok(header + "1,1,,,,,,,,\n");
    const auto reads = import_reads(ok, map);
    ASSERT_EQ(reads.size(), 1u);
    EXPECT_EQ(reads[0].labels[0], 1);
    EXPECT_EQ(reads[0].labels[1], 0);
    std::stringstream bad(header + "2,1,,,,,,,,\n");
    EXPECT_THROW(import_reads(bad, map), NotFoundError);
}

TEST(Labels, OutOfRangeRejected) {
    ReadLabels l{};
    l[2] = 3;
    EXPECT_THROW(validate_labels(l), ValidationError);
}

class StoreTest : public ::testing::Test {
protected:
    void SetUp() override {
        manifest = fixtures::eval_manifest(2);
        for (const auto& r : manifest.records) save_png(fixtures::gradient(8), tmp / r.output_path);
        sessions = assign_reads(manifest, {"alice"}, 10, 4);
        store = std::make_unique<ReaderStore>(tmp / "reader.db");
        tokens = store->create_sessions(sessions, manifest, tmp.path());
    }
    fixtures::TempDir tmp;
    Manifest manifest;
    std::vector<ReaderSession> sessions;
    std::unique_ptr<ReaderStore> store;
    std::vector<std::string> tokens;
};

TEST_F(StoreTest, ProgressAndConflicts) {
    const auto sid = store->session_for_token(tokens[0]);
    EXPECT_EQ(store->progress(sid).total, 10u);
    const auto next = store->next(sid);
    ASSERT_TRUE(next.has_value());
    ReadLabels l{};
    l[0] = 1;
    store->record_read(sid, next->display_id, l, "");
    EXPECT_EQ(store->progress(sid).completed, 1u);
    EXPECT_THROW(store->record_read(sid, next->display_id, l, ""), ConflictError);
    EXPECT_EQ(store->record_read(sid, next->display_id, l, "", true).revision, 1);
    l[0] = 3;
    EXPECT_THROW(store->record_read(sid, store->next(sid)->display_id, l, ""), ValidationError);
    EXPECT_THROW(store->create_sessions(sessions, manifest, tmp.path()), ConflictError);
    EXPECT_THROW(store->session_for_token("deadbeef"), NotFoundError);
}

TEST_F(StoreTest, NotesQueueForHumanAdjudication) {
    const auto sid = store->session_for_token(tokens[0]);
    const int id = store->next(sid)->display_id;
    store->record_read(sid, id, ReadLabels{}, "looks artificial, extra device");
    const auto q = store->adjudication_queue();
    ASSERT_EQ(q.size(), 1u);
    EXPECT_FALSE(q[0].highlights.empty());
    EXPECT_FALSE(store->reads()[0].artificial_flag.has_value());
    EXPECT_THROW(realism_summary(store->reads()), ValidationError);
    store->adjudicate(id, 1, 1, "admin");
    EXPECT_EQ(store->reads()[0].artificial_flag, 1);
    EXPECT_TRUE(store->adjudication_queue().empty());
    EXPECT_TRUE(fs::exists(tmp.path() / "reader.db.audit.jsonl"));
}

TEST_F(StoreTest, HttpSessionIsBlindAndRoundTrips) {
    ReaderServer server(*store, {"127.0.0.1", 0, "secret"});
    const int port = server.start();
    httplib::Client cli("127.0.0.1", port);
    const std::string base = "/session/" + tokens[0];

    std::set<std::string> secrets;
    for (const auto& r : manifest.records) {
        secrets.insert(r.output_id);
        secrets.insert(r.source_scan_id);
        secrets.insert(r.prompt.prompt_text);
        secrets.insert(r.output_path);
    }
    auto check_blind = [&](const std::string& payload) {
        for (const auto& s : secrets) EXPECT_EQ(payload.find(s), std::string::npos) << "leaked " << s;
    };

    std::vector<std::string> name_lists;
    for (int step = 0; step < 10; ++step) {
        auto res = cli.Get((base + "/next").c_str());
        ASSERT_TRUE(res);
        ASSERT_EQ(res->status, 200);
        check_blind(res->body);
        auto body = json::parse(res->body);
        ASSERT_FALSE(body.contains("done"));
        // the only finding names shown are the fixed column list, identical for every scan
        name_lists.push_back(body["finding_names"].dump());
        body.erase("finding_names");
        for (const auto& k : findings::reader()) EXPECT_EQ(body.dump().find(k), std::string::npos);
        const int id = body["display_id"].get<int>();
        auto img = cli.Get(body["image_url"].get<std::string>().c_str());
        ASSERT_TRUE(img);
        EXPECT_EQ(img->status, 200);
        check_blind(img->body);

        json read{{"display_id", id}, {"labels", {{"Cardiomegaly", step % 2}, {"Edema", nullptr}}}, {"notes", ""}};
        auto post = cli.Post((base + "/read").c_str(), read.dump(), "application/json");
        ASSERT_TRUE(post);
        ASSERT_EQ(post->status, 200);
        check_blind(post->body);
        EXPECT_EQ(json::parse(post->body)["completed"].get<int>(), step + 1);
        if (step == 0) {
            auto again = cli.Post((base + "/read").c_str(), read.dump(), "application/json");
            ASSERT_TRUE(again);
            EXPECT_EQ(again->status, 409);
        }
        auto prog = cli.Get((base + "/progress").c_str());
        EXPECT_EQ(json::parse(prog->body)["completed"].get<int>(), step + 1);
    }
    EXPECT_EQ(std::set<std::string>(name_lists.begin(), name_lists.end()).size(), 1u);
    auto done = cli.Get((base + "/next").c_str());
    EXPECT_TRUE(json::parse(done->body).value("done", false));

    auto bad = cli.Post((base + "/read").c_str(), R"({"display_id": 1, "labels": {"Edema": 7}})", "application/json");
    EXPECT_EQ(bad->status, 400);
    EXPECT_EQ(cli.Get("/session/00ff/next")->status, 404);
    EXPECT_EQ(cli.Get("/admin/export.csv")->status, 403);

    httplib::Headers h{{"X-Admin-Token", "secret"}};
    auto exported = cli.Get("/admin/export.csv", h);
    ASSERT_EQ(exported->status, 200);
    std::stringstream csv(exported->body);
    const auto reads = import_reads(csv, store->mapping());
    ASSERT_EQ(reads.size(), 10u);
    const auto direct = compute_read_cooccurrence(store->reads(), manifest);
    const auto via_csv = compute_read_cooccurrence(reads, manifest);
    for (std::size_t r = 0; r < direct.fractions.size(); ++r)
        for (std::size_t c = 0; c < direct.fractions[r].size(); ++c) {
            const double a = direct.fractions[r][c], b = via_csv.fractions[r][c];
            EXPECT_TRUE((std::isnan(a) && std::isnan(b)) || a == b);
        }
    server.stop();
}
