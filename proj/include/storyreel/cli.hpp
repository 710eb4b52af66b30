#pragma once

#include "storyreel/eval.hpp"
#include "storyreel/pipeline.hpp"
#include "storyreel/remote_backend.hpp"
#include "storyreel/search.hpp"
#include "storyreel/sim_backend.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace storyreel {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kBackendUnreachable = 2;
inline constexpr int kBadInput = 3;  // schema errors, missing project or files
inline constexpr int kRefused = 4;   // cost guard declined
inline constexpr int kUsage = 64;
}  // namespace exit_code

/// Port slots that can be bound to `sim` or `remote:<endpoint>`.
inline constexpr const char* kPortSlots[] = {"llm", "images", "keyframes", "generator", "scorer", "tts"};

struct RunConfig {
    SearchParams search;
    std::uint64_t seed = 0;
    SimWorldConfig world;
    WeightConfig weights = WeightConfig::uniform();
    PostConfig post;
    std::map<std::string, std::string> backends;  // slot -> "sim" | "remote:<name>"
    std::filesystem::path backends_file;          // required when any slot is remote

    std::string backend(const std::string& slot) const;
    bool any_remote() const;
};

/// Reads a config document; relative paths resolve against `base_dir`.
RunConfig load_run_config(const json& j, const std::filesystem::path& base_dir);

/// Owns the concrete adapters a run needs.
class BackendSet {
public:
    BackendSet(const RunConfig& config, const std::filesystem::path& project_dir);

    /// GET /health on every remote endpoint in use.
    void preflight() const;
    Backends ports();

    SimWorld& world() { return *world_; }

private:
    std::unique_ptr<SimWorld> world_;
    std::unique_ptr<SimGenerator> sim_generator_;
    std::vector<ServiceClient> clients_;
    std::unique_ptr<AssetStore> store_;
    std::unique_ptr<CompletionPort> llm_;
    std::unique_ptr<ImagePort> images_;
    std::unique_ptr<ImagePort> keyframes_;
    std::unique_ptr<GeneratorPort> remote_generator_;
    std::unique_ptr<ScorerPort> scorer_;
    std::unique_ptr<Reviewer> reviewer_;
    std::unique_ptr<TtsPort> tts_;
};

/// Human-readable project summary; `as_json` gives the same content as JSON.
json inspect_project(const std::filesystem::path& project_dir);
std::string format_inspection(const json& summary);

/// Entry point behind the `storyreel` executable.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err, std::istream& in);

}  // namespace storyreel
