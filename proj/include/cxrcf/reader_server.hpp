#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cxrcf/reader_study.hpp"

struct sqlite3;

namespace cxrcf {

struct Progress {
    std::size_t completed = 0;
    std::size_t total = 0;
};

struct NextScan {
    int display_id = 0;
    std::string image_path;  ///< server-side; never sent to clients
};

struct AdjudicationItem {
    int display_id = 0;
    std::string reader_id;
    std::string notes;
    std::vector<std::string> highlights;
};

/// SQLite-backed study state plus an append-only JSONL audit log. All calls
/// are serialized through one mutex.
class ReaderStore {
public:
    /// Opens (creating when absent) the database; the audit log sits next to it
    /// as <db>.audit.jsonl.
    explicit ReaderStore(const std::filesystem::path& db_path);
    ~ReaderStore();
    ReaderStore(const ReaderStore&) = delete;
    ReaderStore& operator=(const ReaderStore&) = delete;

    /// Persists sessions with their image paths and returns one fresh random
    /// token per session (same order). Throws ConflictError if a display id or
    /// session id already exists.
    std::vector<std::string> create_sessions(const std::vector<ReaderSession>& sessions, const Manifest& manifest,
                                             const std::filesystem::path& manifest_dir);

    /// Session id for a token; NotFoundError when unknown.
    std::string session_for_token(const std::string& token) const;

    std::optional<NextScan> next(const std::string& session_id) const;
    Progress progress(const std::string& session_id) const;
    /// Image path of a display id that belongs to the session; NotFoundError otherwise.
    std::string image_path(const std::string& session_id, int display_id) const;

    /// Validates and stores a read. Re-reading a scan needs `revise`
    /// (ConflictError otherwise); unknown display ids raise NotFoundError.
    ReadRecord record_read(const std::string& session_id, int display_id, const ReadLabels& labels,
                           const std::string& notes, bool revise = false);

    std::vector<AdjudicationItem> adjudication_queue() const;
    void adjudicate(int display_id, int artificial, int extra_anomaly, const std::string& adjudicator);

    /// All stored reads (optionally one session), ordered by display id.
    std::vector<ReadRecord> reads(const std::optional<std::string>& session_id = {}) const;
    DisplayMap mapping() const;

private:
    void audit(const std::string& event, const std::string& payload_json);

    sqlite3* db_ = nullptr;
    std::filesystem::path audit_path_;
    mutable std::mutex mutex_;
};

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    /// When non-empty, /admin/* needs the header X-Admin-Token with this value.
    std::string admin_token;
};

/// HTTP front end:
///   GET  /session/{token}/next          {display_id, image_url, finding_names} or {done: true}
///   POST /session/{token}/read          {display_id, labels: {name: 0|1|2|null}, notes, revise}
///   GET  /session/{token}/progress      {completed, total}
///   GET  /session/{token}/image/{id}    image bytes
///   GET  /admin/export.csv              reader spreadsheet of every read
///   GET  /admin/adjudication            notes awaiting flags
///   POST /admin/adjudicate              {display_id, artificial, extra_anomaly, adjudicator}
class ReaderServer {
public:
    ReaderServer(ReaderStore& store, ServerOptions options);
    ~ReaderServer();

    /// Binds and serves on a background thread; returns the bound port.
    int start();
    /// Blocks serving on the calling thread.
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace cxrcf
