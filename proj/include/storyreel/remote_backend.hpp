#pragma once

#include "storyreel/assets.hpp"
#include "storyreel/ports.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace storyreel {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxInlineMediaBytes = 32u << 20;

/// One service slot from `backends.json`.
struct EndpointConfig {
    std::string name;
    std::string url;       // scheme://host[:port][/prefix]
    std::string auth_env;  // name of the env var holding a bearer token; never the token itself
    std::chrono::milliseconds timeout{60000};
};

void to_json(json& j, const EndpointConfig& e);
void from_json(const json& j, EndpointConfig& e);

struct BackendsConfig {
    std::map<std::string, EndpointConfig> endpoints;
    /// Optional JSON-lines file receiving every request and response.
    std::filesystem::path audit_log;

    const EndpointConfig& endpoint(const std::string& name) const;
};

/// Reads `{"endpoints": {"<name>": {"url": ..., "authEnv": ..., "timeoutMs": ...}}, "auditLog": ...}`.
BackendsConfig load_backends(const std::filesystem::path& path);
void from_json(const json& j, BackendsConfig& c);

/// Appends request/response pairs as JSON lines. Thread-safe.
class AuditLog {
public:
    explicit AuditLog(std::filesystem::path path) : path_(std::move(path)) {}
    void record(const std::string& endpoint, const std::string& route, const json& request, const json& response);

private:
    std::filesystem::path path_;
    std::mutex mutex_;
};

/// JSON-over-HTTP client for one endpoint speaking protocol v1.
class ServiceClient {
public:
    explicit ServiceClient(EndpointConfig endpoint, std::shared_ptr<AuditLog> audit = nullptr);

    /// POSTs `{"v":1, ...body}` to `route` and returns the validated response
    /// envelope. Maps transport failures to BackendUnreachable / Timeout, error
    /// payloads and non-2xx statuses to ServiceError, and malformed bodies to
    /// ProtocolError.
    json post(const std::string& route, json body) const;
    /// GET /health; throws BackendUnreachable unless it answers 200.
    void health() const;

    const EndpointConfig& endpoint() const { return endpoint_; }

private:
    EndpointConfig endpoint_;
    std::shared_ptr<AuditLog> audit_;
};

/// Media field: a URL string, or `{"base64": ..., "ext": ...}`. Inline
/// payloads are decoded into `store`; without a store they are rejected.
AssetRef read_media(const json& field, const std::string& path, AssetStore* store);

class RemoteGenerator : public GeneratorPort {
public:
    RemoteGenerator(ServiceClient client, AssetStore* store = nullptr) : client_(std::move(client)), store_(store) {}
    ClipAsset generate(const GeneratorRequest& request) override;

private:
    ServiceClient client_;
    AssetStore* store_;
};

json context_to_json(const EvalContext& context);
/// Parses the `metrics` object of a /score response.
MetricScores parse_metric_scores(const json& metrics);

class RemoteScorer : public ScorerPort {
public:
    explicit RemoteScorer(ServiceClient client) : client_(std::move(client)) {}
    MetricScores score(const EvalContext& context) override;

private:
    ServiceClient client_;
};

class RemoteCompletion : public CompletionPort {
public:
    explicit RemoteCompletion(ServiceClient client) : client_(std::move(client)) {}
    std::string complete(const json& request) override;

private:
    ServiceClient client_;
};

class RemoteImage : public ImagePort {
public:
    explicit RemoteImage(ServiceClient client) : client_(std::move(client)) {}
    ImageResult generate(const ImageRequest& request) override;

private:
    ServiceClient client_;
};

class RemoteTts : public TtsPort {
public:
    explicit RemoteTts(ServiceClient client) : client_(std::move(client)) {}
    AudioResult synthesize(const TtsRequest& request) override;

private:
    ServiceClient client_;
};

}  // namespace storyreel
