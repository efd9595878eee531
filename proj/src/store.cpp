#include "benchkit/store.hpp"

#include <httplib.h>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <thread>
#include <tuple>

namespace benchkit {

namespace fs = std::filesystem;

json stored_doc_to_json(const StoredDoc &d) {
    json j = {{"seq", d.seq}, {"written_at", d.written_at}, {"doc", d.doc}};
    if (d.amends) {
        j["amends"] = *d.amends;
    }
    return j;
}

namespace {

std::optional<StoredDoc> parse_line(const std::string &line) {
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("seq") || !j["seq"].is_number_unsigned() ||
        !j.contains("doc") || !j["doc"].is_object()) {
        return std::nullopt;
    }
    StoredDoc d;
    d.seq = j["seq"].get<std::uint64_t>();
    d.written_at = j.value("written_at", "");
    if (j.contains("amends")) {
        if (!j["amends"].is_number_unsigned()) {
            return std::nullopt;
        }
        d.amends = j["amends"].get<std::uint64_t>();
    }
    d.doc = j["doc"];
    return d;
}

}  // namespace

StoreContents read_store(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(fmt::format("cannot read result store '{}'", path));
    }
    StoreContents out;
    std::string line;
    std::size_t line_no = 0;
    std::optional<std::uint64_t> last_seq;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        auto d = parse_line(line);
        if (!d || (last_seq && d->seq <= *last_seq)) {
            ++out.corrupt_lines;
            out.warnings.push_back(fmt::format("{}:{}: skipped corrupt store line", path, line_no));
            continue;
        }
        last_seq = d->seq;
        out.docs.push_back(std::move(*d));
    }
    return out;
}

ResultStore::ResultStore(std::string path) : path_(std::move(path)) {
    if (fs::exists(path_)) {
        const auto contents = read_store(path_);
        if (!contents.docs.empty()) {
            next_seq_ = contents.docs.back().seq + 1;
        }
    } else if (const auto parent = fs::path(path_).parent_path(); !parent.empty()) {
        fs::create_directories(parent);
    }
}

std::string ResultStore::path_for(const std::string &out_dir, const std::string &study_id) {
    return (fs::path(out_dir) / "results" / (safe_file_stem(study_id) + ".ndjson")).string();
}

std::uint64_t ResultStore::write_line(const StoredDoc &d) {
    // A torn final line from an earlier crash must not swallow the new entry.
    bool need_newline = false;
    if (fs::exists(path_) && fs::file_size(path_) > 0) {
        std::ifstream in(path_, std::ios::binary);
        in.seekg(-1, std::ios::end);
        char last = '\n';
        in.get(last);
        need_newline = last != '\n';
    }
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) {
        throw Error(fmt::format("cannot open result store '{}' for writing", path_));
    }
    if (need_newline) {
        out << '\n';
    }
    out << stored_doc_to_json(d).dump() << '\n';
    out.flush();
    if (!out) {
        throw Error(fmt::format("write to result store '{}' failed", path_));
    }
    return d.seq;
}

std::uint64_t ResultStore::append(const ResultDoc &doc) { return append_json(result_doc_to_json(doc)); }

std::uint64_t ResultStore::append_json(const json &doc) {
    if (!doc.is_object()) {
        throw Error("stored documents must be JSON objects");
    }
    StoredDoc d{next_seq_, utc_timestamp(), std::nullopt, doc};
    write_line(d);
    return next_seq_++;
}

std::uint64_t ResultStore::amend(std::uint64_t seq, const json &patch) {
    if (seq >= next_seq_) {
        throw Error(fmt::format("cannot amend unknown entry {}", seq));
    }
    if (!patch.is_object()) {
        throw Error("amendment must be a JSON object");
    }
    StoredDoc d{next_seq_, utc_timestamp(), seq, patch};
    write_line(d);
    return next_seq_++;
}

StoreContents ResultStore::read() const { return read_store(path_); }

std::vector<StoredDoc> resolve_amendments(std::vector<StoredDoc> docs, std::vector<std::string> *warnings) {
    std::map<std::uint64_t, std::size_t> index;
    std::vector<StoredDoc> out;
    for (auto &d : docs) {
        if (!d.amends) {
            index[d.seq] = out.size();
            out.push_back(std::move(d));
            continue;
        }
        const auto it = index.find(*d.amends);
        if (it == index.end()) {
            if (warnings) {
                warnings->push_back(fmt::format("amendment {} targets unknown entry {}", d.seq, *d.amends));
            }
            continue;
        }
        out[it->second].doc.merge_patch(d.doc);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

const std::vector<std::string> &result_doc_fields() {
    static const std::vector<std::string> fields = {
        "study_id",   "model_id",       "dataset_id", "config_hash",  "toolkit_version", "hardware",
        "started_at", "finished_at",    "nondeterministic", "num_trials", "experiment_config", "trial_index",
        "params",     "seed",           "status",     "failure_reason", "stderr",        "epoch_history",
        "best_epoch", "objective",      "test_metrics", "accounting"};
    return fields;
}

FilterClause parse_filter_clause(std::string_view expr) {
    const auto pos = expr.find_first_of("=<>~");
    if (pos == std::string_view::npos || pos == 0) {
        throw Error(fmt::format("filter '{}' must look like path=value, path<value, path>value or path~value", expr));
    }
    FilterClause c;
    c.path = std::string(expr.substr(0, pos));
    switch (expr[pos]) {
        case '=': c.op = FilterOp::eq; break;
        case '<': c.op = FilterOp::lt; break;
        case '>': c.op = FilterOp::gt; break;
        default: c.op = FilterOp::contains; break;
    }
    const std::string raw(expr.substr(pos + 1));
    const json parsed = json::parse(raw, nullptr, false);
    c.value = parsed.is_discarded() ? json(raw) : parsed;
    return c;
}

void validate_filter(const QueryFilter &filter) {
    const auto &fields = result_doc_fields();
    for (const auto &c : filter) {
        const std::string head = c.path.substr(0, c.path.find('.'));
        if (std::find(fields.begin(), fields.end(), head) == fields.end()) {
            throw Error(fmt::format("unknown field '{}' in filter; valid fields: {}", head, fmt::join(fields, ", ")));
        }
        if ((c.op == FilterOp::lt || c.op == FilterOp::gt) && !c.value.is_number() && !c.value.is_string()) {
            throw Error(fmt::format("ordering filter on '{}' needs a number or string", c.path));
        }
    }
}

namespace {

const json *lookup(const json &doc, const std::string &path) {
    const json *cur = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (cur->is_object()) {
            const auto it = cur->find(key);
            if (it == cur->end()) {
                return nullptr;
            }
            cur = &*it;
        } else if (cur->is_array()) {
            std::size_t i = 0;
            const auto res = std::from_chars(key.data(), key.data() + key.size(), i);
            if (res.ec != std::errc() || res.ptr != key.data() + key.size() || i >= cur->size()) {
                return nullptr;
            }
            cur = &(*cur)[i];
        } else {
            return nullptr;
        }
        if (dot == std::string::npos) {
            return cur;
        }
        start = dot + 1;
    }
}

bool clause_holds(const json &field, const FilterClause &c) {
    switch (c.op) {
        case FilterOp::eq:
            if (field.is_number() && c.value.is_number()) {
                return field.get<double>() == c.value.get<double>();
            }
            return field == c.value;
        case FilterOp::lt:
        case FilterOp::gt: {
            int cmp = 0;
            if (field.is_number() && c.value.is_number()) {
                const double a = field.get<double>();
                const double b = c.value.get<double>();
                cmp = a < b ? -1 : (a > b ? 1 : 0);
            } else if (field.is_string() && c.value.is_string()) {
                cmp = field.get<std::string>().compare(c.value.get<std::string>());
            } else {
                return false;
            }
            return c.op == FilterOp::lt ? cmp < 0 : cmp > 0;
        }
        case FilterOp::contains:
            if (field.is_string()) {
                const std::string needle = c.value.is_string() ? c.value.get<std::string>() : c.value.dump();
                return field.get<std::string>().find(needle) != std::string::npos;
            }
            if (field.is_array()) {
                return std::any_of(field.begin(), field.end(), [&](const json &e) {
                    return e == c.value || (e.is_number() && c.value.is_number() && e.get<double>() == c.value.get<double>());
                });
            }
            if (field.is_object() && c.value.is_string()) {
                return field.contains(c.value.get<std::string>());
            }
            return false;
    }
    return false;
}

}  // namespace

bool matches_filter(const json &doc, const QueryFilter &filter) {
    for (const auto &c : filter) {
        const json *field = lookup(doc, c.path);
        if (field == nullptr || !clause_holds(*field, c)) {
            return false;
        }
    }
    return true;
}

StoreContents query_store(const std::string &path, const QueryFilter &filter) {
    validate_filter(filter);
    StoreContents contents = read_store(path);
    auto resolved = resolve_amendments(std::move(contents.docs), &contents.warnings);
    contents.docs.clear();
    for (auto &d : resolved) {
        if (matches_filter(d.doc, filter)) {
            contents.docs.push_back(std::move(d));
        }
    }
    return contents;
}

// ---------------------------------------------------------------------------
// Publishing
// ---------------------------------------------------------------------------

std::optional<std::string> process_env(const std::string &name) {
    if (const char *v = std::getenv(name.c_str()); v != nullptr) {
        return std::string(v);
    }
    return std::nullopt;
}

void real_sleep(double seconds) {
    std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

std::string publish_body(const json &doc) { return doc.dump(); }

double retry_delay_s(int k) { return 0.5 * std::ldexp(1.0, k); }

namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path without trailing slash
};

ParsedUrl split_url(const std::string &url) {
    static const std::regex re(R"(^(https?://[^/?#]+)(/[^?#]*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) {
        throw Error(fmt::format("malformed base_url '{}'", url));
    }
    ParsedUrl p{m[1].str(), m[2].str()};
    while (!p.prefix.empty() && p.prefix.back() == '/') {
        p.prefix.pop_back();
    }
    return p;
}

bool retryable(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

}  // namespace

std::vector<PublishOutcome> publish(const std::vector<json> &docs, const PublishTarget &target,
                                    const Sleeper &sleeper, const EnvLookup &env) {
    target.validate();
    httplib::Headers headers;
    if (target.auth_env) {
        const auto token = env(*target.auth_env);
        if (!token || token->empty()) {
            throw Error(fmt::format("publish auth variable '{}' is not set; no documents were sent", *target.auth_env));
        }
        headers.emplace("Authorization", "Bearer " + *token);
    }
    const ParsedUrl url = split_url(target.base_url);
    const std::string path = fmt::format("{}/{}/_doc", url.prefix, target.index);

    httplib::Client client(url.origin);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(target.timeout_s));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    std::vector<PublishOutcome> outcomes;
    outcomes.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        PublishOutcome o;
        o.doc_index = i;
        const std::string body = publish_body(docs[i]);
        for (int attempt = 0; attempt <= target.retry_count; ++attempt) {
            if (attempt > 0) {
                sleeper(retry_delay_s(attempt - 1));
            }
            ++o.attempts;
            auto res = client.Post(path, headers, body, "application/json");
            if (!res) {
                o.http_status = 0;
                o.error = httplib::to_string(res.error());
            } else {
                o.http_status = res->status;
                if (res->status >= 200 && res->status < 300) {
                    o.ok = true;
                    o.error.clear();
                    break;
                }
                o.error = fmt::format("HTTP {}", res->status);
            }
            if (!retryable(o.http_status)) {
                break;
            }
        }
        outcomes.push_back(std::move(o));
    }
    return outcomes;
}

// ---------------------------------------------------------------------------
// Snapshot export
// ---------------------------------------------------------------------------

namespace {

json strip_nulls(const json &j) {
    if (j.is_object()) {
        json out = json::object();
        for (const auto &[k, v] : j.items()) {
            if (!v.is_null()) {
                out[k] = strip_nulls(v);
            }
        }
        return out;
    }
    if (j.is_array()) {
        json out = json::array();
        for (const auto &v : j) {
            out.push_back(strip_nulls(v));
        }
        return out;
    }
    return j;
}

// JSON is flow-style YAML, so the stored config goes back through the strict parsers.
std::string as_yaml(const json &j) { return strip_nulls(j).dump(); }

bool selected(const json &doc, const ExperimentSelector &sel) {
    return doc.value("model_id", "") == sel.model_id && doc.value("dataset_id", "") == sel.dataset_id &&
           (!sel.study_id || doc.value("study_id", "") == *sel.study_id);
}

}  // namespace

ExperimentSnapshot export_snapshot(const std::vector<StoredDoc> &docs, const ExperimentSelector &sel) {
    const std::string label = fmt::format("{}__{}", sel.model_id, sel.dataset_id);
    std::map<std::size_t, const json *> trials;
    const json *first = nullptr;
    for (const auto &d : docs) {
        if (d.amends || !selected(d.doc, sel)) {
            continue;
        }
        if (first == nullptr) {
            first = &d.doc;
        } else if (d.doc.value("study_id", "") != first->value("study_id", "")) {
            throw Error(fmt::format("experiment {} appears in several studies; select one", label));
        }
        trials[d.doc.at("trial_index").get<std::size_t>()] = &d.doc;
    }
    if (first == nullptr) {
        throw Error(fmt::format("no stored documents for experiment {}", label));
    }
    const auto total = first->at("num_trials").get<std::size_t>();
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < total; ++i) {
        if (!trials.count(i)) {
            missing.push_back(i);
        }
    }
    if (!missing.empty()) {
        throw Error(fmt::format("experiment {} is incomplete: missing trial(s) {}", label, fmt::join(missing, ", ")));
    }
    const json &cfg = first->at("experiment_config");
    const std::string src = "<store:" + label + ">";
    ExperimentSnapshot s;
    s.study_id = first->at("study_id").get<std::string>();
    s.model_id = sel.model_id;
    s.dataset_id = sel.dataset_id;
    s.config_hash = first->at("config_hash").get<std::string>();
    s.toolkit_version = first->at("toolkit_version").get<std::string>();
    s.suggestion_mode = cfg.value("suggestion_mode", "batch");
    s.task = parse_task_config(as_yaml(cfg.at("task")), src);
    s.model = parse_model_config(as_yaml(cfg.at("model")), src);
    s.hyperopt = parse_hyperopt_config(as_yaml(cfg.at("hyperopt")), src);
    for (const auto &[idx, doc] : trials) {
        if (idx >= total) {
            continue;
        }
        s.trials.push_back({idx, params_from_json(doc->at("params")), doc->at("seed").get<std::uint64_t>()});
    }
    return s;
}

std::vector<ExperimentSelector> stored_experiments(const std::vector<StoredDoc> &docs) {
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto &d : docs) {
        if (!d.amends && d.doc.contains("model_id") && d.doc.contains("dataset_id")) {
            seen.emplace(d.doc.value("study_id", ""), d.doc.value("model_id", ""), d.doc.value("dataset_id", ""));
        }
    }
    std::vector<ExperimentSelector> out;
    for (const auto &[study, model, dataset] : seen) {
        out.push_back({study, model, dataset});
    }
    return out;
}

}  // namespace benchkit
