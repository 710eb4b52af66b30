#include "storyreel/remote_backend.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <fstream>

namespace storyreel {

void to_json(json& j, const EndpointConfig& e) {
    j = json{{"url", e.url}, {"authEnv", e.auth_env}, {"timeoutMs", e.timeout.count()}};
}

void from_json(const json& j, EndpointConfig& e) {
    e.url = get_field<std::string>(j, "url");
    e.auth_env = get_field_or<std::string>(j, "authEnv", "");
    e.timeout = std::chrono::milliseconds(get_field_or<std::int64_t>(j, "timeoutMs", e.timeout.count()));
    if (e.timeout.count() <= 0) {
        throw SchemaError("timeoutMs", "must be positive");
    }
    if (e.url.find("://") == std::string::npos) {
        throw SchemaError("url", "expected scheme://host[:port]");
    }
}

const EndpointConfig& BackendsConfig::endpoint(const std::string& name) const {
    auto it = endpoints.find(name);
    if (it == endpoints.end()) {
        throw Error("no backend endpoint named '" + name + "'");
    }
    return it->second;
}

void from_json(const json& j, BackendsConfig& c) {
    const json endpoints = get_field<json>(j, "endpoints");
    if (!endpoints.is_object()) {
        throw SchemaError("endpoints", "expected an object");
    }
    for (const auto& [name, value] : endpoints.items()) {
        EndpointConfig e;
        try {
            e = value.get<EndpointConfig>();
        } catch (const SchemaError& err) {
            throw err.under("endpoints." + name);
        }
        e.name = name;
        c.endpoints[name] = e;
    }
    c.audit_log = get_field_or<std::string>(j, "auditLog", "");
}

BackendsConfig load_backends(const std::filesystem::path& path) { return read_json_file(path).get<BackendsConfig>(); }

void AuditLog::record(const std::string& endpoint, const std::string& route, const json& request,
                      const json& response) {
    const json line{{"endpoint", endpoint}, {"route", route}, {"request", request}, {"response", response}};
    std::lock_guard lock(mutex_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) {
        throw Error("cannot open audit log " + path_.string());
    }
    out << line.dump() << "\n";
}

// ServiceClient -----------------------------------------------------------------

namespace {

struct SplitUrl {
    std::string base;    // scheme://host:port
    std::string prefix;  // path prefix without trailing slash
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    const auto slash = url.find('/', scheme_end + 3);
    if (slash == std::string::npos) {
        return {url, ""};
    }
    std::string prefix = url.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') {
        prefix.pop_back();
    }
    return {url.substr(0, slash), prefix};
}

httplib::Client make_client(const EndpointConfig& e) {
    httplib::Client client(split_url(e.url).base);
    const auto seconds = e.timeout.count() / 1000;
    const auto micros = (e.timeout.count() % 1000) * 1000;
    client.set_connection_timeout(seconds, micros);
    client.set_read_timeout(seconds, micros);
    client.set_write_timeout(seconds, micros);
    if (!e.auth_env.empty()) {
        if (const char* token = std::getenv(e.auth_env.c_str()); token != nullptr && *token != '\0') {
            client.set_bearer_token_auth(token);
        }
    }
    return client;
}

[[noreturn]] void throw_transport(const EndpointConfig& e, httplib::Error err) {
    const std::string msg = e.name + " (" + e.url + "): " + httplib::to_string(err);
    switch (err) {
        case httplib::Error::Read:
        case httplib::Error::Write:
        case httplib::Error::ConnectionTimeout:
            throw Timeout(msg);
        case httplib::Error::Connection:
            throw BackendUnreachable(msg);
        default:
            throw BackendError(msg);
    }
}

std::string error_message(const json& body) {
    const json& err = body.at("error");
    if (err.is_string()) {
        return err.get<std::string>();
    }
    if (err.is_object() && err.contains("message") && err.at("message").is_string()) {
        return err.at("message").get<std::string>();
    }
    return err.dump();
}

}  // namespace

ServiceClient::ServiceClient(EndpointConfig endpoint, std::shared_ptr<AuditLog> audit)
    : endpoint_(std::move(endpoint)), audit_(std::move(audit)) {}

json ServiceClient::post(const std::string& route, json body) const {
    body["v"] = kProtocolVersion;
    auto client = make_client(endpoint_);
    auto res = client.Post(split_url(endpoint_.url).prefix + route, body.dump(), "application/json");
    if (!res) {
        if (audit_) {
            audit_->record(endpoint_.name, route, body, json{{"transportError", httplib::to_string(res.error())}});
        }
        throw_transport(endpoint_, res.error());
    }
    json reply = json::parse(res->body, nullptr, false);
    if (audit_) {
        audit_->record(endpoint_.name, route, body,
                       json{{"status", res->status}, {"body", reply.is_discarded() ? json(res->body) : reply}});
    }
    if (!reply.is_discarded() && reply.is_object() && reply.contains("error")) {
        throw ServiceError(res->status, error_message(reply));
    }
    if (res->status < 200 || res->status >= 300) {
        throw ServiceError(res->status, res->body.substr(0, 500));
    }
    if (reply.is_discarded() || !reply.is_object()) {
        throw ProtocolError(endpoint_.name + route + ": response is not a JSON object");
    }
    if (!reply.contains("v") || reply.at("v") != kProtocolVersion) {
        throw ProtocolError(endpoint_.name + route + ": missing or unsupported protocol version");
    }
    return reply;
}

void ServiceClient::health() const {
    auto client = make_client(endpoint_);
    auto res = client.Get(split_url(endpoint_.url).prefix + "/health");
    if (!res) {
        throw BackendUnreachable(endpoint_.name + " (" + endpoint_.url + "): " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw BackendUnreachable(endpoint_.name + " (" + endpoint_.url + "): health returned " +
                                 std::to_string(res->status));
    }
}

// Media ---------------------------------------------------------------------------

namespace {

struct Media {
    std::string uri;
    std::string bytes;
    std::string ext;
    bool inline_payload = false;
};

Media decode_media(const json& field, const std::string& path) {
    Media m;
    if (field.is_string()) {
        m.uri = field.get<std::string>();
        if (m.uri.empty()) {
            throw ProtocolError(path + ": empty media url");
        }
        return m;
    }
    if (!field.is_object() || !field.contains("base64") || !field.at("base64").is_string()) {
        throw ProtocolError(path + ": expected a url string or {\"base64\", \"ext\"}");
    }
    const auto& text = field.at("base64").get_ref<const std::string&>();
    if (text.size() / 4 * 3 > kMaxInlineMediaBytes + 3) {
        throw ProtocolError(path + ": inline media exceeds 32 MiB");
    }
    try {
        m.bytes = base64_decode(text);
    } catch (const Error& e) {
        throw ProtocolError(path + ": " + e.what());
    }
    if (m.bytes.size() > kMaxInlineMediaBytes) {
        throw ProtocolError(path + ": inline media exceeds 32 MiB");
    }
    m.ext = field.value("ext", std::string("bin"));
    m.inline_payload = true;
    return m;
}

const json& require(const json& reply, const std::string& key, const std::string& route) {
    if (!reply.contains(key) || reply.at(key).is_null()) {
        throw ProtocolError(route + ": response lacks '" + key + "'");
    }
    return reply.at(key);
}

}  // namespace

AssetRef read_media(const json& field, const std::string& path, AssetStore* store) {
    Media m = decode_media(field, path);
    if (!m.inline_payload) {
        return m.uri;
    }
    if (store == nullptr) {
        throw ProtocolError(path + ": inline media received but no asset store is configured");
    }
    return store->put(m.bytes, m.ext);
}

// Adapters ------------------------------------------------------------------------

void to_json(json& j, const GeneratorRequest& r) {
    j = json{{"shot", r.shot},
             {"conditioning", r.conditioning},
             {"seed", r.seed},
             {"candidateIndex", r.candidate_index},
             {"nodeId", r.node_id},
             {"generatorParams", r.generator_params}};
}

ClipAsset RemoteGenerator::generate(const GeneratorRequest& request) {
    const json reply = client_.post("/generate", json(request));
    ClipAsset clip;
    clip.shot_index = request.shot.index;
    clip.uri = read_media(require(reply, "clip", "/generate"), "clip", store_);
    if (!reply.contains("lastFrame") || reply.at("lastFrame").is_null()) {
        throw ProtocolError("/generate: response lacks 'lastFrame' and no frame extractor is available");
    }
    clip.last_frame = read_media(reply.at("lastFrame"), "lastFrame", store_);
    const json& duration = require(reply, "durationMs", "/generate");
    if (!duration.is_number_integer() || duration.get<std::int64_t>() <= 0) {
        throw ProtocolError("/generate: durationMs must be a positive integer");
    }
    clip.duration_ms = duration.get<std::int64_t>();
    clip.id = reply.value("id", std::string("n") + std::to_string(request.node_id));
    return clip;
}

json context_to_json(const EvalContext& c) {
    return json{{"shot", c.shot},
                {"previousClip", optional_json(c.previous_clip)},
                {"candidateClip", c.candidate_clip},
                {"nextShotDescription", optional_json(c.next_shot_description)},
                {"nextClip", optional_json(c.next_clip)},
                {"storyText", c.story_text}};
}

MetricScores parse_metric_scores(const json& metrics) {
    if (!metrics.is_object()) {
        throw ProtocolError("metrics: expected an object");
    }
    MetricScores scores;
    for (Metric m : kAllMetrics) {
        const std::string name(metric_name(m));
        if (!metrics.contains(name)) {
            throw MissingMetric(name);
        }
        const json& entry = metrics.at(name);
        const json& value = entry.is_object() ? (entry.contains("value") ? entry.at("value") : json()) : entry;
        if (!value.is_number()) {
            throw ProtocolError("metrics." + name + ": expected a number or {\"value\": number}");
        }
        const double v = value.get<double>();
        if (!std::isfinite(v) || v < 0.0 || v > 100.0) {
            throw ProtocolError("metrics." + name + ": value " + value.dump() + " outside [0, 100]");
        }
        scores[m] = v;
    }
    return scores;
}

MetricScores RemoteScorer::score(const EvalContext& context) {
    const json reply = client_.post("/score", json{{"context", context_to_json(context)}});
    return parse_metric_scores(require(reply, "metrics", "/score"));
}

std::string RemoteCompletion::complete(const json& request) {
    const json reply = client_.post("/complete", json{{"request", request}});
    const json& text = require(reply, "text", "/complete");
    if (!text.is_string()) {
        throw ProtocolError("/complete: 'text' must be a string");
    }
    return text.get<std::string>();
}

ImageResult RemoteImage::generate(const ImageRequest& request) {
    const json reply = client_.post("/image", json{{"kind", request.kind},
                                                   {"id", request.id},
                                                   {"prompt", request.prompt},
                                                   {"references", request.references}});
    Media m = decode_media(require(reply, "image", "/image"), "image");
    ImageResult out;
    if (m.inline_payload) {
        out.bytes = std::move(m.bytes);
        out.ext = m.ext;
    } else {
        out.uri = m.uri;
    }
    return out;
}

AudioResult RemoteTts::synthesize(const TtsRequest& request) {
    const json reply = client_.post(
        "/tts", json{{"text", request.text}, {"voiceProfile", request.voice_profile}, {"attempt", request.attempt}});
    Media m = decode_media(require(reply, "audio", "/tts"), "audio");
    const json& duration = require(reply, "durationMs", "/tts");
    if (!duration.is_number_integer() || duration.get<std::int64_t>() < 0) {
        throw ProtocolError("/tts: durationMs must be a non-negative integer");
    }
    AudioResult out;
    out.duration_ms = duration.get<std::int64_t>();
    if (m.inline_payload) {
        out.bytes = std::move(m.bytes);
        out.ext = m.ext;
    } else {
        out.uri = m.uri;
    }
    return out;
}

}  // namespace storyreel
