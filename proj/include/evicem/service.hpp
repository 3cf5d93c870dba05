#pragma once

// HTTP facade for interactive intervention. CaseStore holds one session per
// case; Service maps (method, path, body) to a JSON response so the routing
// can be exercised without a socket; register_routes() binds it to cpp-httplib.

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "evicem/checkpoint.hpp"
#include "evicem/data.hpp"
#include "evicem/errors.hpp"
#include "evicem/intervention.hpp"
#include "evicem/losses.hpp"

namespace evicem {

struct CaseSession {
    std::string id;
    std::vector<double> x;
    InterventionState state;
    unsigned long long revision = 0;
    mutable std::mutex mutex;
};

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

class CaseStore {
public:
    CaseStore(Checkpoint checkpoint, const Dataset& cases) : ck_(std::move(checkpoint)) {
        require_dims(cases.feature_dim == ck_.params.dims().feature_dim,
                     "service: dataset feature_dim does not match the checkpoint");
        for (const auto& s : cases.samples) {
            auto session = std::make_unique<CaseSession>();
            session->id = s.id;
            session->x = s.x;
            session->state = start_intervention(ck_.params, s.x, ck_.mode);
            if (!sessions_.emplace(s.id, std::move(session)).second) {
                throw DataError("service: duplicate case id " + s.id);
            }
            order_.push_back(s.id);
        }
    }

    const Checkpoint& checkpoint() const noexcept { return ck_; }
    const std::vector<std::string>& ids() const noexcept { return order_; }

    /// nullptr for an unknown id. The map itself is immutable after
    /// construction, so lookups need no lock.
    CaseSession* find(const std::string& id) const {
        const auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : it->second.get();
    }

    /// Case view; the caller must hold session.mutex.
    nlohmann::json view(const CaseSession& s) const {
        const auto& trace = s.state.trace;
        const auto p = concept_probabilities(trace);
        const auto u = concept_uncertainties(trace);
        nlohmann::json concepts = nlohmann::json::array();
        for (std::size_t k = 0; k < p.size(); ++k) {
            nlohmann::json c = {{"index", k},
                                {"name", ck_.concept_names.at(k)},
                                {"probability", p[k]},
                                {"uncertainty", u[k]},
                                {"intervened", s.state.intervened.count(k) > 0}};
            c["value"] = s.state.intervened.count(k) ? nlohmann::json(s.state.intervened.at(k))
                                                     : nlohmann::json(nullptr);
            concepts.push_back(std::move(c));
        }
        const auto probs = softmax(trace.logits);
        const auto best = static_cast<std::size_t>(
            std::max_element(probs.begin(), probs.end()) - probs.begin());
        return {{"id", s.id},
                {"revision", s.revision},
                {"concepts", std::move(concepts)},
                {"logits", trace.logits},
                {"class_probabilities", probs},
                {"predicted_class", best},
                {"confidence", probs[best]}};
    }

private:
    Checkpoint ck_;
    std::map<std::string, std::unique_ptr<CaseSession>> sessions_;
    std::vector<std::string> order_;
};

class Service {
public:
    explicit Service(CaseStore& store) : store_(store) {}

    ApiResponse handle(const std::string& method, const std::string& path,
                       const std::string& body = {}) const {
        static const std::regex case_re(R"(^/api/cases/([^/]+)(/(suggest|intervene|reset))?$)");
        if (path == "/api/cases") {
            if (method != "GET") return error(405, "method not allowed");
            return list();
        }
        std::smatch m;
        if (!std::regex_match(path, m, case_re)) return error(404, "no such endpoint");
        CaseSession* s = store_.find(m[1].str());
        if (!s) return error(404, "unknown case '" + m[1].str() + "'");
        const std::string action = m[3].str();
        if (action.empty()) {
            if (method != "GET") return error(405, "method not allowed");
            std::lock_guard lock(s->mutex);
            return {200, store_.view(*s)};
        }
        if (action == "suggest") {
            if (method != "GET") return error(405, "method not allowed");
            return suggest(*s);
        }
        if (method != "POST") return error(405, "method not allowed");
        if (action == "reset") return reset(*s);
        return intervene(*s, body);
    }

private:
    static ApiResponse error(int status, const std::string& message) {
        return {status, {{"error", message}}};
    }

    ApiResponse list() const {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& id : store_.ids()) {
            const CaseSession* s = store_.find(id);
            std::lock_guard lock(s->mutex);
            const auto v = store_.view(*s);
            out.push_back({{"id", id},
                           {"predicted_class", v["predicted_class"]},
                           {"confidence", v["confidence"]},
                           {"revision", s->revision}});
        }
        return {200, {{"cases", std::move(out)}}};
    }

    ApiResponse suggest(const CaseSession& s) const {
        std::lock_guard lock(s.mutex);
        const auto u = concept_uncertainties(s.state.trace);
        const auto done = intervened_set(s.state);
        if (done.size() == u.size()) return error(400, "every concept has already been intervened");
        const auto k = select_concept(u, done);
        return {200,
                {{"concept", k},
                 {"name", store_.checkpoint().concept_names.at(k)},
                 {"uncertainty", u[k]},
                 {"revision", s.revision}}};
    }

    ApiResponse reset(CaseSession& s) const {
        std::lock_guard lock(s.mutex);
        s.state = start_intervention(store_.checkpoint().params, s.x, store_.checkpoint().mode);
        ++s.revision;
        return {200, store_.view(s)};
    }

    ApiResponse intervene(CaseSession& s, const std::string& body) const {
        std::size_t k = 0;
        int value = 0;
        unsigned long long revision = 0;
        try {
            const auto j = nlohmann::json::parse(body);
            const auto& jc = j.at("concept");
            const auto& jv = j.at("value");
            const auto& jr = j.at("revision");
            if (!jc.is_number_unsigned() || !jr.is_number_unsigned()) {
                return error(400, "concept and revision must be non-negative integers");
            }
            if (!jv.is_number_integer() || (jv.get<long long>() != 0 && jv.get<long long>() != 1)) {
                return error(400, "value must be 0 or 1");
            }
            k = jc.get<std::size_t>();
            value = jv.get<int>();
            revision = jr.get<unsigned long long>();
        } catch (const nlohmann::json::exception& e) {
            return error(400, std::string("malformed request body: ") + e.what());
        }
        std::lock_guard lock(s.mutex);
        if (revision != s.revision) {
            return {409, {{"error", "stale revision"}, {"revision", s.revision}}};
        }
        if (k >= s.state.trace.concepts.size()) return error(400, "concept index out of range");
        if (s.state.intervened.count(k)) return error(400, "concept already intervened");
        apply_intervention(store_.checkpoint().params, s.state, k, value);
        ++s.revision;
        return {200, store_.view(s)};
    }

    CaseStore& store_;
};

/// Registers the API (and, if given, a static asset directory at "/") on an
/// httplib server. Handler exceptions map to 500.
inline void register_routes(httplib::Server& server, const Service& service,
                            const std::optional<std::filesystem::path>& static_dir = {}) {
    auto dispatch = [&service](const httplib::Request& req, httplib::Response& res) {
        ApiResponse r;
        try {
            r = service.handle(req.method, req.path, req.body);
        } catch (const std::exception& e) {
            r = {500, {{"error", std::string("internal error: ") + e.what()}}};
        }
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server.Get(R"(/api/.*)", dispatch);
    server.Post(R"(/api/.*)", dispatch);
    if (static_dir && std::filesystem::is_directory(*static_dir)) {
        server.set_mount_point("/", static_dir->string());
    }
}

}  // namespace evicem
