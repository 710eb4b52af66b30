#pragma once

#include "storyreel/eval.hpp"
#include "storyreel/story.hpp"

#include <chrono>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

namespace storyreel {

// Backend errors --------------------------------------------------------------

class BackendError : public Error {
public:
    using Error::Error;
};

class BackendUnreachable : public BackendError {
public:
    using BackendError::BackendError;
};

class Timeout : public BackendError {
public:
    using BackendError::BackendError;
};

/// Malformed or contract-violating response.
class ProtocolError : public BackendError {
public:
    using BackendError::BackendError;
};

/// Upstream reported a failure; `what()` carries its message.
class ServiceError : public BackendError {
public:
    ServiceError(int status, const std::string& message)
        : BackendError("service error " + std::to_string(status) + ": " + message), status_(status) {}

    int status() const noexcept { return status_; }

private:
    int status_;
};

// Ports -----------------------------------------------------------------------

struct GeneratorRequest {
    Shot shot;
    Conditioning conditioning;
    std::uint64_t seed = 0;
    int candidate_index = 0;  // slot among the parent's children
    std::int64_t node_id = 0;
    json generator_params = json::object();
};

void to_json(json& j, const GeneratorRequest& r);

class GeneratorPort {
public:
    virtual ~GeneratorPort() = default;
    /// Produces a clip with `last_frame` already extracted.
    virtual ClipAsset generate(const GeneratorRequest& request) = 0;
};

/// Text completion (script and voiceover planning). Requests and responses
/// are JSON documents; the response is returned as raw text for the caller
/// to parse and validate.
class CompletionPort {
public:
    virtual ~CompletionPort() = default;
    virtual std::string complete(const json& request) = 0;
};

struct ImageRequest {
    std::string kind;  // character | background | keyframe
    std::string id;
    std::string prompt;
    std::vector<AssetRef> references;
};

struct ImageResult {
    std::string bytes;  // empty when `uri` is set
    std::string ext = "png";
    std::string uri;
};

class ImagePort {
public:
    virtual ~ImagePort() = default;
    virtual ImageResult generate(const ImageRequest& request) = 0;
};

struct TtsRequest {
    std::string text;
    std::string voice_profile;
    int attempt = 0;
};

struct AudioResult {
    std::string bytes;
    std::string ext = "wav";
    std::string uri;
    std::int64_t duration_ms = 0;
};

class TtsPort {
public:
    virtual ~TtsPort() = default;
    virtual AudioResult synthesize(const TtsRequest& request) = 0;
};

// Retry -----------------------------------------------------------------------

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_backoff{200};
};

/// Calls `fn` up to `policy.attempts` times, sleeping base, 2*base, ... between
/// attempts. Only BackendError and its subclasses are retried; the last one is
/// rethrown once attempts run out.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
    const int attempts = policy.attempts < 1 ? 1 : policy.attempts;
    for (int attempt = 1;; ++attempt) {
        try {
            return fn();
        } catch (const BackendError&) {
            if (attempt >= attempts) {
                throw;
            }
        } catch (const MissingMetric&) {
            if (attempt >= attempts) {
                throw;
            }
        }
        if (policy.base_backoff.count() > 0) {
            std::this_thread::sleep_for(policy.base_backoff * (1 << (attempt - 1)));
        }
    }
}

}  // namespace storyreel
