#pragma once

#include "storyreel/ports.hpp"
#include "storyreel/rng.hpp"

#include <map>
#include <mutex>
#include <optional>
#include <string>

namespace storyreel {

/// Parameters of the latent-quality world behind the simulated generator.
///
/// A clip's hidden quality follows a one-step Markov update from its
/// conditioning source:
///
///     latent = clamp(rho * parent + (1 - rho) * mu + sigma_g * z - cut * [keyframe], 0, 100)
///
/// Keyframe-conditioned clips have no parent clip; they start from `mu`.
/// The scorer observes each metric as `clamp(latent + sigma_o * z, 0, 100)`.
struct SimWorldConfig {
    double continuity = 0.6;         // rho
    double base_quality = 55.0;      // mu
    double process_noise = 12.0;     // sigma_g
    double observation_noise = 4.0;  // sigma_o
    double cut_penalty = 5.0;

    void validate() const;

    friend bool operator==(const SimWorldConfig&, const SimWorldConfig&) = default;
};

void to_json(json& j, const SimWorldConfig& c);
/// Every field is optional and overrides the default.
void from_json(const json& j, SimWorldConfig& c);

/// The latent update for a single generation given one standard-normal draw.
double sim_latent(const SimWorldConfig& config, std::optional<double> parent_latent, bool keyframe,
                  double standard_normal);

/// Fourteen noisy observations of `latent`, all metrics in canonical order.
MetricScores sim_score(double latent, double observation_noise, Stream& rng);

/// Shared registry of hidden clip qualities. Thread-safe.
class SimWorld {
public:
    explicit SimWorld(SimWorldConfig config = {}) : config_(config) { config_.validate(); }

    const SimWorldConfig& config() const { return config_; }

    void record(const ClipAsset& clip, double latent);
    std::optional<double> latent_of_uri(const std::string& uri) const;
    std::optional<double> latent_of_frame(const AssetRef& frame) const;
    /// Throws Error for clips this world never produced.
    double latent(const ClipAsset& clip) const;

private:
    SimWorldConfig config_;
    mutable std::mutex mutex_;
    std::map<std::string, double> by_uri_;
    std::map<std::string, double> by_frame_;
};

/// Simulated clip generator.
///
/// Generation noise is keyed by (seed, shot, candidate slot), not by node, so
/// the k-th candidate of a shot sees the same draw under every search
/// configuration. Paired runs are coupled through these common random numbers.
class SimGenerator : public GeneratorPort {
public:
    explicit SimGenerator(SimWorld& world) : world_(world) {}

    ClipAsset generate(const GeneratorRequest& request) override;

    int calls() const { return calls_; }

private:
    SimWorld& world_;
    std::mutex mutex_;
    int calls_ = 0;
};

/// Noisy observer of the hidden quality; with zero observation noise it is a
/// perfect oracle.
class SimScorer : public ScorerPort {
public:
    SimScorer(SimWorld& world, std::uint64_t seed) : world_(world), seed_(seed) {}

    MetricScores score(const EvalContext& context) override;

private:
    SimWorld& world_;
    std::uint64_t seed_;
};

/// Deterministic stand-in for the planning LLM. Understands the `script`
/// and `voiceover` tasks; see docs/protocol.md.
class SimCompletion : public CompletionPort {
public:
    std::string complete(const json& request) override;
};

/// Deterministic placeholder images: the bytes are a small text document
/// describing the request.
class SimImage : public ImagePort {
public:
    ImageResult generate(const ImageRequest& request) override;
};

/// Deterministic speech: duration follows a speaking rate with a bounded
/// per-text jitter.
class SimTts : public TtsPort {
public:
    explicit SimTts(double chars_per_second = 14.0, double jitter = 0.1)
        : chars_per_second_(chars_per_second), jitter_(jitter) {}

    AudioResult synthesize(const TtsRequest& request) override;

private:
    double chars_per_second_;
    double jitter_;
};

/// Random but reproducible script and matching storyboard for search
/// experiments. Shot 1 is always a cut; later shots cut with probability 1/4.
struct SimStory {
    Script script;
    Storyboard storyboard;
};

SimStory make_sim_story(int shots, std::uint64_t seed);

/// Splits free text into a script: one shot per sentence, capitalised
/// words outside quotes (minus common function words) as characters, "in/at/to the X" as background, a cut
/// wherever the background changes.
Script plan_script_from_text(const std::string& story);

}  // namespace storyreel
