#pragma once

#include "storyreel/story.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace storyreel {

enum class Domain { OverallVideoQuality, TextVideoAlignment, VideoConsistency, MotionQuality };

// Declaration order is the canonical metric order used everywhere
// (aggregation sums, report serialization, wire protocol).
enum class Metric {
    VQA_A,
    VQA_T,
    MusIQ,
    TextVideoConsistency,
    TextStoryConsistency,
    DetectionScore,
    CountScore,
    DreamSim,
    FaceConsistency,
    WarpingError,
    SemanticConsistency,
    ActionRecognition,
    ActionStrength,
    MotionACScore,
};

inline constexpr std::size_t kMetricCount = 14;
inline constexpr std::array<Domain, 4> kAllDomains = {Domain::OverallVideoQuality, Domain::TextVideoAlignment,
                                                      Domain::VideoConsistency, Domain::MotionQuality};
extern const std::array<Metric, kMetricCount> kAllMetrics;

Domain domain_of(Metric metric);
std::string_view metric_name(Metric metric);
std::optional<Metric> metric_from_name(std::string_view name);
std::string_view domain_name(Domain domain);
/// Column abbreviation used in summary tables (O.V.Q., T.V.A., V.C., M.Q.).
std::string_view domain_abbrev(Domain domain);
std::optional<Domain> domain_from_name(std::string_view name);

using MetricScores = std::map<Metric, double>;
using DomainScores = std::map<Domain, double>;

class MissingMetric : public Error {
public:
    explicit MissingMetric(std::string_view name)
        : Error("metric '" + std::string(name) + "' missing from score map"), metric_(name) {}

    const std::string& metric() const noexcept { return metric_; }

private:
    std::string metric_;
};

class ScorerFailure : public Error {
public:
    using Error::Error;
};

/// Per-metric non-negative weights. Normalisation happens at aggregation time,
/// so only ratios matter.
struct WeightConfig {
    std::map<Metric, double> weights;
    std::string ref = "uniform";  // provenance, stored in every report

    static WeightConfig uniform();
    double weight(Metric m) const;
    /// Throws Error unless every weight is finite and non-negative and every
    /// domain has at least one positive weight.
    void validate() const;
};

WeightConfig load_weights(const std::filesystem::path& path);
void to_json(json& j, const WeightConfig& w);
void from_json(const json& j, WeightConfig& w);

struct Aggregate {
    DomainScores domain_scores;
    double total = 0.0;
};

/// Weight-normalised mean over each domain's members and over all fourteen
/// metrics. Throws MissingMetric when any metric is absent.
Aggregate aggregate(const MetricScores& scores, const WeightConfig& weights);

/// What a scorer sees when judging one candidate clip.
struct EvalContext {
    std::optional<ClipAsset> previous_clip;
    ClipAsset candidate_clip;
    std::optional<std::string> next_shot_description;
    /// Only set for post-hoc re-evaluation of a finished path.
    std::optional<ClipAsset> next_clip;
    Shot shot;
    std::string story_text;
};

/// Builds the evaluation window for `candidate` at `shot_index`. `lineage`
/// holds the clips already fixed for shots 1..shot_index-1, in order.
EvalContext assemble_context(int shot_index, const Script& script, std::span<const ClipAsset> lineage,
                             const ClipAsset& candidate, std::string story_text = {});

struct ContextSummary {
    int shot_index = 0;
    std::optional<std::string> previous_clip;
    std::string candidate_clip;
    std::optional<std::string> next_shot_description;
    std::optional<std::string> next_clip;

    friend bool operator==(const ContextSummary&, const ContextSummary&) = default;
};

ContextSummary summarize(const EvalContext& context);

struct EvalReport {
    MetricScores metric_scores;
    DomainScores domain_scores;
    double total = 0.0;
    ContextSummary context_used;
    std::string weights;
};

void to_json(json& j, const EvalReport& r);
void from_json(const json& j, EvalReport& r);
json metric_scores_to_json(const MetricScores& scores);

/// Source of raw metric values for a candidate. Implementations return
/// values already normalised to [0, 100], higher is better.
class ScorerPort {
public:
    virtual ~ScorerPort() = default;
    virtual MetricScores score(const EvalContext& context) = 0;
};

/// Scores one candidate and aggregates. Every metric must be present, finite
/// and within [0, 100]; anything else raises (MissingMetric / ScorerFailure).
EvalReport evaluate(const EvalContext& context, ScorerPort& scorer, const WeightConfig& weights);

using CandidateTotal = std::pair<std::int64_t, double>;
using CandidateRank = std::pair<std::int64_t, int>;

/// Rank 1 is the highest total; ties go to the lower node id. Output is in
/// rank order.
std::vector<CandidateRank> rank_candidates(std::span<const CandidateTotal> totals);
std::vector<CandidateRank> rank_candidates(std::span<const std::pair<std::int64_t, EvalReport>> reports);

/// The reviewer seen by the search engine: scorer plus weights.
class ReviewerPort {
public:
    virtual ~ReviewerPort() = default;
    virtual EvalReport review(const EvalContext& context) = 0;
};

class Reviewer : public ReviewerPort {
public:
    Reviewer(ScorerPort& scorer, WeightConfig weights) : scorer_(scorer), weights_(std::move(weights)) {
        weights_.validate();
    }

    EvalReport review(const EvalContext& context) override { return evaluate(context, scorer_, weights_); }

    const WeightConfig& weights() const { return weights_; }

private:
    ScorerPort& scorer_;
    WeightConfig weights_;
};

}  // namespace storyreel
