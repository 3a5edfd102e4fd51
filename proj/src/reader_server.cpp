#include "cxrcf/reader_server.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

#include <httplib.h>
#include <json.hpp>
#include <openssl/rand.h>
#include <spdlog/spdlog.h>
#include <sqlite3.h>

#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"

namespace cxrcf {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Stmt {
public:
    Stmt(sqlite3* db, const char* sql) : db_(db) {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
            throw Error(std::string("sqlite prepare failed: ") + sqlite3_errmsg(db));
    }
    ~Stmt() { sqlite3_finalize(stmt_); }
    Stmt(const Stmt&) = delete;
    Stmt& operator=(const Stmt&) = delete;

    Stmt& bind(int i, const std::string& v) {
        sqlite3_bind_text(stmt_, i, v.c_str(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
        return *this;
    }
    Stmt& bind(int i, long long v) {
        sqlite3_bind_int64(stmt_, i, v);
        return *this;
    }
    Stmt& bind(int i, int v) { return bind(i, static_cast<long long>(v)); }
    Stmt& bind_null(int i) {
        sqlite3_bind_null(stmt_, i);
        return *this;
    }

    /// True while rows remain.
    bool step() {
        const int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        if (rc == SQLITE_CONSTRAINT) throw ConflictError(std::string("constraint violated: ") + sqlite3_errmsg(db_));
        throw Error(std::string("sqlite step failed: ") + sqlite3_errmsg(db_));
    }

    std::string text(int col) const {
        const auto* p = sqlite3_column_text(stmt_, col);
        return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col)))
                 : std::string();
    }
    long long integer(int col) const { return sqlite3_column_int64(stmt_, col); }
    bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }

private:
    sqlite3* db_;
    sqlite3_stmt* stmt_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "unknown error";
        sqlite3_free(err);
        throw Error("sqlite: " + msg);
    }
}

std::string random_token() {
    unsigned char bytes[16];
    if (RAND_bytes(bytes, sizeof bytes) != 1) throw Error("could not draw a session token");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned char b : bytes) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 15]);
    }
    return out;
}

json labels_to_json(const ReadLabels& labels) { return json(std::vector<int>(labels.begin(), labels.end())); }

ReadLabels labels_from_json(const std::string& text) {
    const auto j = json::parse(text);
    ReadLabels l{};
    for (std::size_t i = 0; i < l.size() && i < j.size(); ++i) l[i] = j[i].get<int>();
    return l;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS sessions (
  session_id TEXT PRIMARY KEY,
  reader_id TEXT NOT NULL,
  token TEXT NOT NULL UNIQUE
);
CREATE TABLE IF NOT EXISTS assignments (
  display_id INTEGER PRIMARY KEY,
  session_id TEXT NOT NULL REFERENCES sessions(session_id),
  position INTEGER NOT NULL,
  output_id TEXT NOT NULL,
  image_path TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS reads (
  display_id INTEGER PRIMARY KEY REFERENCES assignments(display_id),
  labels TEXT NOT NULL,
  notes TEXT NOT NULL,
  revision INTEGER NOT NULL,
  artificial INTEGER,
  extra_anomaly INTEGER,
  adjudicator TEXT
);
)sql";

} // namespace

ReaderStore::ReaderStore(const fs::path& db_path) : audit_path_(db_path.string() + ".audit.jsonl") {
    if (db_path.has_parent_path()) fs::create_directories(db_path.parent_path());
    if (sqlite3_open(db_path.string().c_str(), &db_) != SQLITE_OK) {
        std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
        sqlite3_close(db_);
        throw Error("cannot open reader database " + db_path.string() + ": " + msg);
    }
    exec(db_, "PRAGMA journal_mode=WAL; PRAGMA foreign_keys=ON;");
    exec(db_, kSchema);
}

ReaderStore::~ReaderStore() { sqlite3_close(db_); }

void ReaderStore::audit(const std::string& event, const std::string& payload_json) {
    const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    std::ofstream out(audit_path_, std::ios::app);
    out << json{{"ts_ms", now}, {"event", event}, {"data", json::parse(payload_json)}}.dump() << '\n';
}

std::vector<std::string> ReaderStore::create_sessions(const std::vector<ReaderSession>& sessions,
                                                      const Manifest& manifest, const fs::path& manifest_dir) {
    std::map<std::string, std::string> paths;
    for (const auto& r : manifest.records) paths[r.output_id] = (manifest_dir / r.output_path).string();
    std::lock_guard lock(mutex_);
    std::vector<std::string> tokens;
    exec(db_, "BEGIN");
    try {
        for (const auto& s : sessions) {
            const auto token = random_token();
            Stmt(db_, "INSERT INTO sessions(session_id, reader_id, token) VALUES(?,?,?)")
                .bind(1, s.session_id)
                .bind(2, s.reader_id)
                .bind(3, token)
                .step();
            for (std::size_t i = 0; i < s.items.size(); ++i) {
                auto it = paths.find(s.items[i].output_id);
                if (it == paths.end()) throw NotFoundError("assigned scan " + s.items[i].output_id + " is not in the manifest");
                Stmt(db_, "INSERT INTO assignments(display_id, session_id, position, output_id, image_path) "
                          "VALUES(?,?,?,?,?)")
                    .bind(1, s.items[i].display_id)
                    .bind(2, s.session_id)
                    .bind(3, static_cast<long long>(i))
                    .bind(4, s.items[i].output_id)
                    .bind(5, it->second)
                    .step();
            }
            tokens.push_back(token);
        }
        exec(db_, "COMMIT");
    } catch (...) {
        exec(db_, "ROLLBACK");
        throw;
    }
    for (const auto& s : sessions)
        audit("create_session",
              json{{"session_id", s.session_id}, {"reader_id", s.reader_id}, {"n", s.items.size()}}.dump());
    return tokens;
}

std::string ReaderStore::session_for_token(const std::string& token) const {
    std::lock_guard lock(mutex_);
    Stmt q(db_, "SELECT session_id FROM sessions WHERE token = ?");
    q.bind(1, token);
    if (!q.step()) throw NotFoundError("unknown session");
    return q.text(0);
}

std::optional<NextScan> ReaderStore::next(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    Stmt q(db_, "SELECT a.display_id, a.image_path FROM assignments a LEFT JOIN reads r ON r.display_id = a.display_id "
                "WHERE a.session_id = ? AND r.display_id IS NULL ORDER BY a.position LIMIT 1");
    q.bind(1, session_id);
    if (!q.step()) return std::nullopt;
    return NextScan{static_cast<int>(q.integer(0)), q.text(1)};
}

Progress ReaderStore::progress(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    Stmt q(db_, "SELECT COUNT(a.display_id), COUNT(r.display_id) FROM assignments a "
                "LEFT JOIN reads r ON r.display_id = a.display_id WHERE a.session_id = ?");
    q.bind(1, session_id);
    q.step();
    return {static_cast<std::size_t>(q.integer(1)), static_cast<std::size_t>(q.integer(0))};
}

std::string ReaderStore::image_path(const std::string& session_id, int display_id) const {
    std::lock_guard lock(mutex_);
    Stmt q(db_, "SELECT image_path FROM assignments WHERE session_id = ? AND display_id = ?");
    q.bind(1, session_id).bind(2, display_id);
    if (!q.step()) throw NotFoundError("scan " + std::to_string(display_id) + " is not in this session");
    return q.text(0);
}

ReadRecord ReaderStore::record_read(const std::string& session_id, int display_id, const ReadLabels& labels,
                                    const std::string& notes, bool revise) {
    validate_labels(labels);
    std::lock_guard lock(mutex_);
    ReadRecord rec;
    {
        Stmt q(db_, "SELECT a.output_id, s.reader_id FROM assignments a JOIN sessions s ON s.session_id = a.session_id "
                    "WHERE a.session_id = ? AND a.display_id = ?");
        q.bind(1, session_id).bind(2, display_id);
        if (!q.step()) throw NotFoundError("scan " + std::to_string(display_id) + " is not in this session");
        rec.output_id = q.text(0);
        rec.reader_id = q.text(1);
    }
    rec.session_id = session_id;
    rec.display_id = display_id;
    rec.labels = labels;
    rec.notes = notes;

    std::optional<std::string> old_notes;
    {
        Stmt q(db_, "SELECT revision, notes FROM reads WHERE display_id = ?");
        q.bind(1, display_id);
        if (q.step()) {
            if (!revise) throw ConflictError("scan " + std::to_string(display_id) + " was already read");
            rec.revision = static_cast<int>(q.integer(0)) + 1;
            old_notes = q.text(1);
        }
    }
    if (blank(notes)) {
        rec.artificial_flag = 0;
        rec.extra_anomaly_flag = 0;
    }
    Stmt w(db_, "INSERT INTO reads(display_id, labels, notes, revision, artificial, extra_anomaly) VALUES(?,?,?,?,?,?) "
                "ON CONFLICT(display_id) DO UPDATE SET labels = excluded.labels, notes = excluded.notes, "
                "revision = excluded.revision, "
                "artificial = CASE WHEN reads.notes = excluded.notes THEN reads.artificial ELSE excluded.artificial END, "
                "extra_anomaly = CASE WHEN reads.notes = excluded.notes THEN reads.extra_anomaly "
                "ELSE excluded.extra_anomaly END");
    w.bind(1, display_id).bind(2, labels_to_json(labels).dump()).bind(3, notes).bind(4, rec.revision);
    if (rec.artificial_flag) {
        w.bind(5, *rec.artificial_flag).bind(6, *rec.extra_anomaly_flag);
    } else {
        w.bind_null(5).bind_null(6);
    }
    w.step();
    audit(rec.revision ? "revise_read" : "record_read",
          json{{"session_id", session_id},
               {"display_id", display_id},
               {"labels", labels_to_json(labels)},
               {"notes", notes},
               {"revision", rec.revision}}
              .dump());
    return rec;
}

std::vector<AdjudicationItem> ReaderStore::adjudication_queue() const {
    std::lock_guard lock(mutex_);
    Stmt q(db_, "SELECT r.display_id, s.reader_id, r.notes FROM reads r JOIN assignments a ON a.display_id = r.display_id "
                "JOIN sessions s ON s.session_id = a.session_id WHERE r.artificial IS NULL OR r.extra_anomaly IS NULL "
                "ORDER BY r.display_id");
    std::vector<AdjudicationItem> out;
    while (q.step()) {
        AdjudicationItem item{static_cast<int>(q.integer(0)), q.text(1), q.text(2), {}};
        item.highlights = highlight_keywords(item.notes);
        out.push_back(std::move(item));
    }
    return out;
}

void ReaderStore::adjudicate(int display_id, int artificial, int extra_anomaly, const std::string& adjudicator) {
    if ((artificial != 0 && artificial != 1) || (extra_anomaly != 0 && extra_anomaly != 1))
        throw ValidationError("adjudication flags must be 0 or 1");
    std::lock_guard lock(mutex_);
    Stmt w(db_, "UPDATE reads SET artificial = ?, extra_anomaly = ?, adjudicator = ? WHERE display_id = ?");
    w.bind(1, artificial).bind(2, extra_anomaly).bind(3, adjudicator).bind(4, display_id);
    w.step();
    if (sqlite3_changes(db_) == 0) throw NotFoundError("no read for scan " + std::to_string(display_id));
    audit("adjudicate", json{{"display_id", display_id},
                             {"artificial", artificial},
                             {"extra_anomaly", extra_anomaly},
                             {"adjudicator", adjudicator}}
                            .dump());
}

std::vector<ReadRecord> ReaderStore::reads(const std::optional<std::string>& session_id) const {
    std::lock_guard lock(mutex_);
    Stmt q(db_, "SELECT r.display_id, a.output_id, a.session_id, s.reader_id, r.labels, r.notes, r.revision, "
                "r.artificial, r.extra_anomaly FROM reads r JOIN assignments a ON a.display_id = r.display_id "
                "JOIN sessions s ON s.session_id = a.session_id WHERE ?1 IS NULL OR a.session_id = ?1 "
                "ORDER BY r.display_id");
    if (session_id) q.bind(1, *session_id);
    else q.bind_null(1);
    std::vector<ReadRecord> out;
    while (q.step()) {
        ReadRecord r;
        r.display_id = static_cast<int>(q.integer(0));
        r.output_id = q.text(1);
        r.session_id = q.text(2);
        r.reader_id = q.text(3);
        r.labels = labels_from_json(q.text(4));
        r.notes = q.text(5);
        r.revision = static_cast<int>(q.integer(6));
        if (!q.is_null(7)) r.artificial_flag = static_cast<int>(q.integer(7));
        if (!q.is_null(8)) r.extra_anomaly_flag = static_cast<int>(q.integer(8));
        out.push_back(std::move(r));
    }
    return out;
}

DisplayMap ReaderStore::mapping() const {
    std::lock_guard lock(mutex_);
    Stmt q(db_, "SELECT a.display_id, a.session_id, s.reader_id, a.output_id FROM assignments a "
                "JOIN sessions s ON s.session_id = a.session_id ORDER BY a.display_id");
    DisplayMap m;
    while (q.step()) m[static_cast<int>(q.integer(0))] = {q.text(1), q.text(2), q.text(3)};
    return m;
}

struct ReaderServer::Impl {
    ReaderStore& store;
    ServerOptions options;
    httplib::Server server;
    std::thread thread;

    Impl(ReaderStore& s, ServerOptions o) : store(s), options(std::move(o)) {}

    static void send_error(httplib::Response& res, int status, const std::string& message) {
        res.status = status;
        res.set_content(json{{"error", message}}.dump(), "application/json");
    }

    template <typename Fn>
    auto guarded(Fn fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const NotFoundError& e) {
                send_error(res, 404, e.what());
            } catch (const ConflictError& e) {
                send_error(res, 409, e.what());
            } catch (const ValidationError& e) {
                send_error(res, 400, e.what());
            } catch (const json::exception& e) {
                send_error(res, 400, std::string("malformed request: ") + e.what());
            } catch (const std::exception& e) {
                spdlog::error("reader server: {}", e.what());
                send_error(res, 500, "internal error");
            }
        };
    }

    bool admin_ok(const httplib::Request& req, httplib::Response& res) const {
        if (options.admin_token.empty() || req.get_header_value("X-Admin-Token") == options.admin_token) return true;
        send_error(res, 403, "admin token required");
        return false;
    }

    static ReadLabels parse_labels(const json& j) {
        ReadLabels labels{};
        if (j.is_null()) return labels;
        if (!j.is_object()) throw ValidationError("labels must be an object");
        const auto& keys = findings::reader();
        for (const auto& [name, v] : j.items()) {
            const auto key = findings::key_from_display(name);
            auto it = std::find(keys.begin(), keys.end(), key);
            if (it == keys.end()) throw ValidationError("unknown finding '" + name + "'");
            if (v.is_null() || (v.is_string() && v.get<std::string>().empty())) continue;
            if (!v.is_number_integer()) throw ValidationError("label for " + name + " must be 0, 1 or 2");
            labels[static_cast<std::size_t>(it - keys.begin())] = v.get<int>();
        }
        return labels;
    }

    void routes() {
        server.Get(R"(/session/([0-9a-f]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const auto token = req.matches[1].str();
                       const auto session = store.session_for_token(token);
                       auto next = store.next(session);
                       json body;
                       if (!next) {
                           body = {{"done", true}};
                       } else {
                           std::vector<std::string> names;
                           for (const auto& k : findings::reader()) names.push_back(findings::display_name(k));
                           body = {{"display_id", next->display_id},
                                   {"image_url", "/session/" + token + "/image/" + std::to_string(next->display_id)},
                                   {"finding_names", names}};
                       }
                       res.set_content(body.dump(), "application/json");
                   }));
        server.Post(R"(/session/([0-9a-f]+)/read)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const auto session = store.session_for_token(req.matches[1].str());
                        const auto body = json::parse(req.body);
                        if (!body.contains("display_id") || !body["display_id"].is_number_integer())
                            throw ValidationError("display_id is required");
                        const auto labels = parse_labels(body.value("labels", json()));
                        const auto rec = store.record_read(session, body["display_id"].get<int>(), labels,
                                                           body.value("notes", std::string()),
                                                           body.value("revise", false));
                        const auto p = store.progress(session);
                        res.set_content(json{{"display_id", rec.display_id},
                                             {"revision", rec.revision},
                                             {"completed", p.completed},
                                             {"total", p.total}}
                                            .dump(),
                                        "application/json");
                    }));
        server.Get(R"(/session/([0-9a-f]+)/progress)",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const auto p = store.progress(store.session_for_token(req.matches[1].str()));
                       res.set_content(json{{"completed", p.completed}, {"total", p.total}}.dump(), "application/json");
                   }));
        server.Get(R"(/session/([0-9a-f]+)/image/(\d+))",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const auto session = store.session_for_token(req.matches[1].str());
                       const auto path = store.image_path(session, std::stoi(req.matches[2].str()));
                       std::ifstream in(path, std::ios::binary);
                       if (!in) throw Error("image missing on disk for scan " + req.matches[2].str());
                       std::ostringstream bytes;
                       bytes << in.rdbuf();
                       const auto ext = fs::path(path).extension().string();
                       res.set_content(bytes.str(), ext == ".jpg" || ext == ".jpeg" ? "image/jpeg" : "image/png");
                   }));
        server.Get("/admin/export.csv", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       if (!admin_ok(req, res)) return;
                       std::ostringstream out;
                       export_reads(store.reads(), out);
                       res.set_content(out.str(), "text/csv");
                   }));
        server.Get("/admin/adjudication", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       if (!admin_ok(req, res)) return;
                       json items = json::array();
                       for (const auto& a : store.adjudication_queue())
                           items.push_back({{"display_id", a.display_id},
                                            {"reader_id", a.reader_id},
                                            {"notes", a.notes},
                                            {"highlights", a.highlights}});
                       res.set_content(items.dump(), "application/json");
                   }));
        server.Post("/admin/adjudicate", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        if (!admin_ok(req, res)) return;
                        const auto body = json::parse(req.body);
                        store.adjudicate(body.at("display_id").get<int>(), body.at("artificial").get<int>(),
                                         body.at("extra_anomaly").get<int>(), body.value("adjudicator", "admin"));
                        res.set_content(json{{"ok", true}}.dump(), "application/json");
                    }));
    }
};

ReaderServer::ReaderServer(ReaderStore& store, ServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {
    impl_->routes();
}

ReaderServer::~ReaderServer() { stop(); }

int ReaderServer::start() {
    int port = impl_->options.port;
    if (port == 0) {
        port = impl_->server.bind_to_any_port(impl_->options.host);
    } else if (!impl_->server.bind_to_port(impl_->options.host, port)) {
        port = -1;
    }
    if (port < 0) throw Error("cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port;
}

void ReaderServer::run() {
    spdlog::info("reader server listening on {}:{}", impl_->options.host, impl_->options.port);
    if (!impl_->server.listen(impl_->options.host, impl_->options.port))
        throw Error("cannot listen on " + impl_->options.host + ":" + std::to_string(impl_->options.port));
}

void ReaderServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

} // namespace cxrcf
