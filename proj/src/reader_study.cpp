#include "cxrcf/reader_study.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include "cxrcf/core/csv.hpp"
#include "cxrcf/core/errors.hpp"
#include "cxrcf/core/findings.hpp"
#include "cxrcf/core/hash.hpp"
#include "cxrcf/core/rng.hpp"

namespace cxrcf {

void validate_labels(const ReadLabels& labels) {
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < kReadAbsent || labels[i] > kReadUnsure)
            throw ValidationError("label for " + findings::display_name(findings::reader()[i]) + " must be 0, 1 or 2, got " +
                                  std::to_string(labels[i]));
}

std::vector<ReaderSession> assign_reads(const Manifest& manifest, const std::vector<std::string>& readers,
                                        std::size_t per_reader, std::uint64_t seed, bool disjoint) {
    if (readers.empty()) throw ArgumentError("no readers given");
    std::vector<std::string> ids;
    for (const auto& r : manifest.records)
        if (r.kind == RecordKind::EDIT && r.status == RecordStatus::OK) ids.push_back(r.output_id);
    const std::size_t needed = disjoint ? per_reader * readers.size() : per_reader;
    if (needed > ids.size())
        throw ArgumentError("assignment needs " + std::to_string(needed) + " scans, manifest has " +
                            std::to_string(ids.size()));
    std::set<std::string> seen;
    for (const auto& r : readers)
        if (!seen.insert(r).second) throw ArgumentError("reader '" + r + "' listed twice");

    std::vector<ReaderSession> sessions;
    int display = 1;
    std::vector<std::string> order = ids;
    Rng shared(stable_hash64({"assign-reads", std::to_string(seed)}));
    if (disjoint) shared.shuffle(std::span<std::string>(order));
    for (std::size_t r = 0; r < readers.size(); ++r) {
        ReaderSession s;
        s.reader_id = readers[r];
        s.session_id = "session-" + std::to_string(r + 1);
        if (!disjoint) {
            order = ids;
            Rng rng(stable_hash64({"assign-reads", std::to_string(seed), readers[r]}));
            rng.shuffle(std::span<std::string>(order));
        }
        const std::size_t offset = disjoint ? r * per_reader : 0;
        for (std::size_t i = 0; i < per_reader; ++i) s.items.push_back({display++, order[offset + i]});
        sessions.push_back(std::move(s));
    }
    return sessions;
}

std::string to_string(UnsurePolicy p) {
    switch (p) {
    case UnsurePolicy::AS_ABSENT: return "as-absent";
    case UnsurePolicy::AS_PRESENT: return "as-present";
    case UnsurePolicy::EXCLUDE: return "exclude";
    }
    return "?";
}

UnsurePolicy parse_unsure_policy(const std::string& s) {
    if (s == "as-absent") return UnsurePolicy::AS_ABSENT;
    if (s == "as-present") return UnsurePolicy::AS_PRESENT;
    if (s == "exclude") return UnsurePolicy::EXCLUDE;
    throw ArgumentError("unknown unsure policy '" + s + "' (as-absent, as-present, exclude)");
}

CooccurrenceMatrix compute_read_cooccurrence(const std::vector<ReadRecord>& reads, const Manifest& manifest,
                                             UnsurePolicy policy, const std::vector<std::string>& keys_in) {
    const auto& reader_keys = findings::reader();
    const auto keys = keys_in.empty() ? reader_keys : keys_in;
    std::vector<std::size_t> col_slot;
    for (const auto& k : keys) {
        auto it = std::find(reader_keys.begin(), reader_keys.end(), k);
        if (it == reader_keys.end()) throw ArgumentError("'" + k + "' is not a reader finding");
        col_slot.push_back(static_cast<std::size_t>(it - reader_keys.begin()));
    }

    std::map<std::string, std::string> prompted;
    for (const auto& r : manifest.records)
        if (r.kind == RecordKind::EDIT) prompted[r.output_id] = r.prompt.pathology_key;
    std::vector<std::string> orphans;
    for (const auto& r : reads)
        if (!prompted.count(r.output_id)) orphans.push_back(r.output_id.empty() ? "#" + std::to_string(r.display_id)
                                                                                : r.output_id);
    if (!orphans.empty()) {
        std::string list;
        for (std::size_t i = 0; i < orphans.size(); ++i) list += (i ? ", " : "") + orphans[i];
        throw ValidationError(std::to_string(orphans.size()) + " reads do not match a manifest edit: " + list);
    }

    const std::size_t n = keys.size();
    std::vector<std::size_t> rows(n, 0);
    std::vector<std::vector<std::size_t>> present(n, std::vector<std::size_t>(n, 0));
    std::vector<std::vector<std::size_t>> denom(n, std::vector<std::size_t>(n, 0));
    for (const auto& r : reads) {
        auto it = std::find(keys.begin(), keys.end(), prompted.at(r.output_id));
        if (it == keys.end()) continue;
        const auto row = static_cast<std::size_t>(it - keys.begin());
        ++rows[row];
        for (std::size_t c = 0; c < n; ++c) {
            const int v = r.labels[col_slot[c]];
            if (v == kReadUnsure && policy == UnsurePolicy::EXCLUDE) continue;
            ++denom[row][c];
            if (v == kReadPresent || (v == kReadUnsure && policy == UnsurePolicy::AS_PRESENT)) ++present[row][c];
        }
    }

    CooccurrenceMatrix m;
    m.row_keys = keys;
    m.col_keys = keys;
    m.row_counts = rows;
    m.cell_counts = denom;
    m.note = "unsure=" + to_string(policy);
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<double> fr(n);
        for (std::size_t c = 0; c < n; ++c)
            fr[c] = denom[r][c] ? static_cast<double>(present[r][c]) / static_cast<double>(denom[r][c])
                                : std::numeric_limits<double>::quiet_NaN();
        m.fractions.push_back(std::move(fr));
    }
    return m;
}

std::map<std::string, CooccurrenceMatrix> cooccurrence_by_reader(const std::vector<ReadRecord>& reads,
                                                                 const Manifest& manifest, UnsurePolicy policy,
                                                                 const std::vector<std::string>& keys) {
    std::map<std::string, std::vector<ReadRecord>> split;
    for (const auto& r : reads) split[r.reader_id].push_back(r);
    std::map<std::string, CooccurrenceMatrix> out;
    for (const auto& [reader, rs] : split) out[reader] = compute_read_cooccurrence(rs, manifest, policy, keys);
    return out;
}

RealismSummary realism_summary(const std::vector<ReadRecord>& reads) {
    if (reads.empty()) throw ValidationError("no reads to summarise");
    std::size_t pending = 0;
    for (const auto& r : reads) pending += !r.artificial_flag || !r.extra_anomaly_flag;
    if (pending) throw ValidationError(std::to_string(pending) + " reads still await adjudication");
    RealismSummary s;
    for (const auto& r : reads) {
        for (auto* c : {&s.overall, &s.per_reader[r.reader_id]}) {
            ++c->total;
            c->artificial += *r.artificial_flag != 0;
            c->extra_anomaly += *r.extra_anomaly_flag != 0;
        }
    }
    const auto total = static_cast<double>(s.overall.total);
    s.realistic_fraction = 1.0 - static_cast<double>(s.overall.artificial) / total;
    s.extra_anomaly_fraction = static_cast<double>(s.overall.extra_anomaly) / total;
    return s;
}

void write_realism_csv(const RealismSummary& summary, std::ostream& out) {
    csv::write_row(out, {"reader", "total", "artificial", "extra_anomaly", "realistic_fraction",
                         "extra_anomaly_fraction"});
    auto row = [&](const std::string& who, const RealismCounts& c) {
        const double t = static_cast<double>(c.total);
        csv::write_row(out, {who, std::to_string(c.total), std::to_string(c.artificial),
                             std::to_string(c.extra_anomaly),
                             std::to_string(1.0 - static_cast<double>(c.artificial) / t),
                             std::to_string(static_cast<double>(c.extra_anomaly) / t)});
    };
    for (const auto& [reader, c] : summary.per_reader) row(reader, c);
    row("all", summary.overall);
}

void export_reads(const std::vector<ReadRecord>& reads, std::ostream& out) {
    csv::Row header{"display_id"};
    for (const auto& k : findings::reader()) header.push_back(findings::display_name(k));
    header.emplace_back("Notes");
    csv::write_row(out, header);
    std::vector<const ReadRecord*> sorted;
    for (const auto& r : reads) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const ReadRecord* a, const ReadRecord* b) { return a->display_id < b->display_id; });
    for (const auto* r : sorted) {
        csv::Row row{std::to_string(r->display_id)};
        for (int v : r->labels) row.push_back(std::to_string(v));
        row.push_back(r->notes);
        csv::write_row(out, row);
    }
}

DisplayMap display_map(const std::vector<ReaderSession>& sessions) {
    DisplayMap m;
    for (const auto& s : sessions)
        for (const auto& item : s.items) m[item.display_id] = {s.session_id, s.reader_id, item.output_id};
    return m;
}

void write_display_map(const DisplayMap& map, std::ostream& out) {
    csv::write_row(out, {"display_id", "session_id", "reader_id", "output_id"});
    for (const auto& [id, m] : map) csv::write_row(out, {std::to_string(id), m.session_id, m.reader_id, m.output_id});
}

namespace {

int parse_int_field(const std::string& s, const std::string& what, std::size_t line) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size())
        throw ValidationError("line " + std::to_string(line) + ": " + what + " '" + s + "' is not an integer");
    return v;
}

} // namespace

DisplayMap read_display_map(std::istream& in) {
    const auto table = csv::Table::read(in);
    table.require({"display_id", "session_id", "reader_id", "output_id"});
    const auto c_id = *table.column("display_id"), c_s = *table.column("session_id"),
               c_r = *table.column("reader_id"), c_o = *table.column("output_id");
    DisplayMap m;
    for (std::size_t i = 0; i < table.rows().size(); ++i) {
        const auto& row = table.rows()[i];
        if (row.size() != table.header().size())
            throw ValidationError("line " + std::to_string(table.line_of(i)) + ": wrong number of fields");
        m[parse_int_field(row[c_id], "display_id", table.line_of(i))] = {row[c_s], row[c_r], row[c_o]};
    }
    return m;
}

std::vector<ReadRecord> import_reads(std::istream& in, const DisplayMap& map) {
    const auto table = csv::Table::read(in);
    std::vector<std::string> required{"display_id"};
    for (const auto& k : findings::reader()) required.push_back(findings::display_name(k));
    table.require(required);
    const auto c_id = *table.column("display_id");
    const auto c_notes = table.column("Notes");
    std::vector<std::size_t> c_label;
    for (const auto& k : findings::reader()) c_label.push_back(*table.column(findings::display_name(k)));

    std::vector<ReadRecord> out;
    std::set<int> seen;
    for (std::size_t i = 0; i < table.rows().size(); ++i) {
        const auto& row = table.rows()[i];
        const auto line = table.line_of(i);
        auto field = [&](std::size_t c) -> std::string { return c < row.size() ? row[c] : std::string(); };
        ReadRecord r;
        r.display_id = parse_int_field(field(c_id), "display_id", line);
        if (!seen.insert(r.display_id).second)
            throw ConflictError("line " + std::to_string(line) + ": display id " + std::to_string(r.display_id) +
                                " appears twice");
        auto it = map.find(r.display_id);
        if (it == map.end())
            throw NotFoundError("line " + std::to_string(line) + ": unknown display id " + std::to_string(r.display_id));
        r.session_id = it->second.session_id;
        r.reader_id = it->second.reader_id;
        r.output_id = it->second.output_id;
        for (std::size_t k = 0; k < c_label.size(); ++k) {
            const auto v = field(c_label[k]);
            r.labels[k] = v.empty() ? kReadAbsent : parse_int_field(v, "label", line);
        }
        try {
            validate_labels(r.labels);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(line) + ": " + e.what());
        }
        if (c_notes) r.notes = field(*c_notes);
        if (r.notes.find_first_not_of(" \t\r\n") == std::string::npos) {
            r.artificial_flag = 0;
            r.extra_anomaly_flag = 0;
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<std::string> highlight_keywords(const std::string& notes) {
    static const std::vector<std::string> kKeywords{
        "artificial", "artifact", "unrealistic", "fake",    "synthetic", "blurry", "blurred",
        "distorted",  "smudge",   "extra",       "anomaly", "device",    "tube",   "line",
        "pacemaker",  "wire",     "fracture",    "foreign", "odd",       "weird",  "strange"};
    std::string lower;
    for (char c : notes) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    std::vector<std::string> hits;
    for (const auto& k : kKeywords)
        if (lower.find(k) != std::string::npos) hits.push_back(k);
    return hits;
}

} // namespace cxrcf
