#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "benchkit/config.hpp"
#include "benchkit/executor.hpp"

namespace benchkit {

struct StoredDoc {
    std::uint64_t seq = 0;
    std::string written_at;
    std::optional<std::uint64_t> amends;  // set on amendment entries
    json doc;
};

/// Store file line: {"seq", "written_at", ["amends",] "doc"}.
json stored_doc_to_json(const StoredDoc &d);

struct StoreContents {
    std::vector<StoredDoc> docs;  // file order
    std::size_t corrupt_lines = 0;
    std::vector<std::string> warnings;
};

/// Append-only newline-delimited document file. Single writer.
class ResultStore {
  public:
    explicit ResultStore(std::string path);

    /// `<out_dir>/results/<study_id>.ndjson`
    static std::string path_for(const std::string &out_dir, const std::string &study_id);

    std::uint64_t append(const ResultDoc &doc);
    std::uint64_t append_json(const json &doc);
    /// Appends a merge patch for the entry `seq` (e.g. metrics computed after the fact).
    std::uint64_t amend(std::uint64_t seq, const json &patch);

    [[nodiscard]] StoreContents read() const;
    [[nodiscard]] const std::string &path() const noexcept { return path_; }
    [[nodiscard]] std::uint64_t next_seq() const noexcept { return next_seq_; }

  private:
    std::uint64_t write_line(const StoredDoc &d);

    std::string path_;
    std::uint64_t next_seq_ = 0;
};

/// Throws Error when the file cannot be opened.
StoreContents read_store(const std::string &path);

/// Folds amendment entries into their targets (RFC 7386 merge patch) and drops them.
std::vector<StoredDoc> resolve_amendments(std::vector<StoredDoc> docs, std::vector<std::string> *warnings = nullptr);

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

enum class FilterOp { eq, lt, gt, contains };

struct FilterClause {
    std::string path;  // dotted, relative to the result doc
    FilterOp op = FilterOp::eq;
    json value;
};

using QueryFilter = std::vector<FilterClause>;

/// Top-level result doc fields a path may start with.
const std::vector<std::string> &result_doc_fields();

/// `path=value`, `path<value`, `path>value`, `path~value`; value parsed as JSON, else taken as a string.
FilterClause parse_filter_clause(std::string_view expr);
/// Throws Error for a path outside the doc schema.
void validate_filter(const QueryFilter &filter);
bool matches_filter(const json &doc, const QueryFilter &filter);

/// Amendments resolved, then every clause applied; sequence order.
StoreContents query_store(const std::string &path, const QueryFilter &filter);

// ---------------------------------------------------------------------------
// Publishing
// ---------------------------------------------------------------------------

struct PublishOutcome {
    std::size_t doc_index = 0;
    bool ok = false;
    int attempts = 0;
    int http_status = 0;  // 0: no response
    std::string error;
};

using Sleeper = std::function<void(double seconds)>;
using EnvLookup = std::function<std::optional<std::string>(const std::string &name)>;

std::optional<std::string> process_env(const std::string &name);
void real_sleep(double seconds);

/// Exact request body sent for `doc`.
std::string publish_body(const json &doc);
/// Delay before retry k (0-based): 0.5 * 2^k seconds.
double retry_delay_s(int k);

/// One POST per doc to `{base_url}/{index}/_doc`. Per-doc failures are reported, never thrown;
/// a missing auth variable throws Error before any request.
std::vector<PublishOutcome> publish(const std::vector<json> &docs, const PublishTarget &target,
                                    const Sleeper &sleeper = real_sleep, const EnvLookup &env = process_env);

// ---------------------------------------------------------------------------
// Snapshot export
// ---------------------------------------------------------------------------

struct ExperimentSelector {
    std::optional<std::string> study_id;
    std::string model_id;
    std::string dataset_id;
};

/// Rebuilds an experiment snapshot from stored docs; the latest entry per trial wins.
/// Throws Error when nothing matches or trial indices are missing.
ExperimentSnapshot export_snapshot(const std::vector<StoredDoc> &docs, const ExperimentSelector &sel);

/// Lists the distinct (study, model, dataset) experiments present in `docs`, sorted.
std::vector<ExperimentSelector> stored_experiments(const std::vector<StoredDoc> &docs);

}  // namespace benchkit
