#include "storyreel/eval.hpp"

#include <algorithm>
#include <cmath>

namespace storyreel {

const std::array<Metric, kMetricCount> kAllMetrics = {
    Metric::VQA_A,           Metric::VQA_T,          Metric::MusIQ,
    Metric::TextVideoConsistency, Metric::TextStoryConsistency, Metric::DetectionScore,
    Metric::CountScore,      Metric::DreamSim,       Metric::FaceConsistency,
    Metric::WarpingError,    Metric::SemanticConsistency, Metric::ActionRecognition,
    Metric::ActionStrength,  Metric::MotionACScore,
};

namespace {

struct MetricInfo {
    Metric metric;
    std::string_view name;
    Domain domain;
};

constexpr std::array<MetricInfo, kMetricCount> kMetricTable = {{
    {Metric::VQA_A, "VQA_A", Domain::OverallVideoQuality},
    {Metric::VQA_T, "VQA_T", Domain::OverallVideoQuality},
    {Metric::MusIQ, "MusIQ", Domain::OverallVideoQuality},
    {Metric::TextVideoConsistency, "TextVideoConsistency", Domain::TextVideoAlignment},
    {Metric::TextStoryConsistency, "TextStoryConsistency", Domain::TextVideoAlignment},
    {Metric::DetectionScore, "DetectionScore", Domain::TextVideoAlignment},
    {Metric::CountScore, "CountScore", Domain::TextVideoAlignment},
    {Metric::DreamSim, "DreamSim", Domain::VideoConsistency},
    {Metric::FaceConsistency, "FaceConsistency", Domain::VideoConsistency},
    {Metric::WarpingError, "WarpingError", Domain::VideoConsistency},
    {Metric::SemanticConsistency, "SemanticConsistency", Domain::VideoConsistency},
    {Metric::ActionRecognition, "ActionRecognition", Domain::MotionQuality},
    {Metric::ActionStrength, "ActionStrength", Domain::MotionQuality},
    {Metric::MotionACScore, "MotionACScore", Domain::MotionQuality},
}};

const MetricInfo& info(Metric m) { return kMetricTable[static_cast<std::size_t>(m)]; }

void require_finite_range(std::string_view name, double v) {
    if (!std::isfinite(v) || v < 0.0 || v > 100.0) {
        throw ScorerFailure("metric '" + std::string(name) + "' value " + std::to_string(v) +
                            " is outside [0, 100]");
    }
}

}  // namespace

Domain domain_of(Metric metric) { return info(metric).domain; }
std::string_view metric_name(Metric metric) { return info(metric).name; }

std::optional<Metric> metric_from_name(std::string_view name) {
    for (const auto& mi : kMetricTable) {
        if (mi.name == name) {
            return mi.metric;
        }
    }
    return std::nullopt;
}

std::string_view domain_name(Domain domain) {
    switch (domain) {
        case Domain::OverallVideoQuality: return "OverallVideoQuality";
        case Domain::TextVideoAlignment: return "TextVideoAlignment";
        case Domain::VideoConsistency: return "VideoConsistency";
        case Domain::MotionQuality: return "MotionQuality";
    }
    return "?";
}

std::string_view domain_abbrev(Domain domain) {
    switch (domain) {
        case Domain::OverallVideoQuality: return "O.V.Q.";
        case Domain::TextVideoAlignment: return "T.V.A.";
        case Domain::VideoConsistency: return "V.C.";
        case Domain::MotionQuality: return "M.Q.";
    }
    return "?";
}

std::optional<Domain> domain_from_name(std::string_view name) {
    for (Domain d : kAllDomains) {
        if (domain_name(d) == name) {
            return d;
        }
    }
    return std::nullopt;
}

// Weights -----------------------------------------------------------------

WeightConfig WeightConfig::uniform() {
    WeightConfig w;
    for (Metric m : kAllMetrics) {
        w.weights[m] = 1.0;
    }
    return w;
}

double WeightConfig::weight(Metric m) const {
    auto it = weights.find(m);
    return it == weights.end() ? 0.0 : it->second;
}

void WeightConfig::validate() const {
    std::map<Domain, double> per_domain;
    for (Metric m : kAllMetrics) {
        const double w = weight(m);
        if (!std::isfinite(w) || w < 0.0) {
            throw Error("weight for '" + std::string(metric_name(m)) + "' must be finite and non-negative");
        }
        per_domain[domain_of(m)] += w;
    }
    for (Domain d : kAllDomains) {
        if (!(per_domain[d] > 0.0)) {
            throw Error("domain '" + std::string(domain_name(d)) + "' has no positive weight");
        }
    }
}

void to_json(json& j, const WeightConfig& w) {
    json weights = json::object();
    for (Metric m : kAllMetrics) {
        weights[std::string(metric_name(m))] = w.weight(m);
    }
    j = json{{"metricWeights", weights}};
}

void from_json(const json& j, WeightConfig& w) {
    const auto raw = get_field<std::map<std::string, double>>(j, "metricWeights");
    w.weights.clear();
    for (const auto& [name, value] : raw) {
        auto m = metric_from_name(name);
        if (!m) {
            throw SchemaError("metricWeights." + name, "unknown metric");
        }
        w.weights[*m] = value;
    }
}

WeightConfig load_weights(const std::filesystem::path& path) {
    WeightConfig w = read_json_file(path).get<WeightConfig>();
    w.ref = path.filename().string();
    w.validate();
    return w;
}

// Aggregation ---------------------------------------------------------------

Aggregate aggregate(const MetricScores& scores, const WeightConfig& weights) {
    std::map<Domain, double> num;
    std::map<Domain, double> den;
    double total_num = 0.0;
    double total_den = 0.0;
    // Fixed metric order keeps the floating-point reduction reproducible.
    for (Metric m : kAllMetrics) {
        auto it = scores.find(m);
        if (it == scores.end()) {
            throw MissingMetric(metric_name(m));
        }
        const double w = weights.weight(m);
        num[domain_of(m)] += w * it->second;
        den[domain_of(m)] += w;
        total_num += w * it->second;
        total_den += w;
    }
    Aggregate out;
    for (Domain d : kAllDomains) {
        if (!(den[d] > 0.0)) {
            throw Error("domain '" + std::string(domain_name(d)) + "' has no positive weight");
        }
        out.domain_scores[d] = num[d] / den[d];
    }
    out.total = total_num / total_den;
    return out;
}

// Context -------------------------------------------------------------------

EvalContext assemble_context(int shot_index, const Script& script, std::span<const ClipAsset> lineage,
                             const ClipAsset& candidate, std::string story_text) {
    if (candidate.shot_index != shot_index) {
        throw Error("candidate clip belongs to shot " + std::to_string(candidate.shot_index) + ", not " +
                    std::to_string(shot_index));
    }
    EvalContext ctx;
    ctx.shot = script.shot(shot_index);
    ctx.candidate_clip = candidate;
    ctx.story_text = std::move(story_text);
    if (shot_index > 1) {
        if (lineage.size() < static_cast<std::size_t>(shot_index - 1)) {
            throw Error("lineage is shorter than the shots preceding " + std::to_string(shot_index));
        }
        ctx.previous_clip = lineage[static_cast<std::size_t>(shot_index - 2)];
    }
    if (const Shot* next = script.find_shot(shot_index + 1)) {
        ctx.next_shot_description = next->description;
    }
    return ctx;
}

ContextSummary summarize(const EvalContext& context) {
    ContextSummary s;
    s.shot_index = context.shot.index;
    if (context.previous_clip) {
        s.previous_clip = context.previous_clip->id;
    }
    s.candidate_clip = context.candidate_clip.id;
    s.next_shot_description = context.next_shot_description;
    if (context.next_clip) {
        s.next_clip = context.next_clip->id;
    }
    return s;
}

// Reports -------------------------------------------------------------------

json metric_scores_to_json(const MetricScores& scores) {
    json out = json::object();
    for (const auto& [m, v] : scores) {
        out[std::string(metric_name(m))] = v;
    }
    return out;
}

void to_json(json& j, const EvalReport& r) {
    json domains = json::object();
    for (const auto& [d, v] : r.domain_scores) {
        domains[std::string(domain_name(d))] = v;
    }
    j = json{{"metricScores", metric_scores_to_json(r.metric_scores)},
             {"domainScores", domains},
             {"total", r.total},
             {"contextUsed",
              {{"shotIndex", r.context_used.shot_index},
               {"previousClip", optional_json(r.context_used.previous_clip)},
               {"candidateClip", r.context_used.candidate_clip},
               {"nextShotDescription", optional_json(r.context_used.next_shot_description)},
               {"nextClip", optional_json(r.context_used.next_clip)}}},
             {"weights", r.weights}};
}

void from_json(const json& j, EvalReport& r) {
    r.metric_scores.clear();
    for (const auto& [name, v] : get_field<std::map<std::string, double>>(j, "metricScores")) {
        auto m = metric_from_name(name);
        if (!m) {
            throw SchemaError("metricScores." + name, "unknown metric");
        }
        r.metric_scores[*m] = v;
    }
    r.domain_scores.clear();
    for (const auto& [name, v] : get_field<std::map<std::string, double>>(j, "domainScores")) {
        auto d = domain_from_name(name);
        if (!d) {
            throw SchemaError("domainScores." + name, "unknown domain");
        }
        r.domain_scores[*d] = v;
    }
    r.total = get_field<double>(j, "total");
    const json ctx = get_field<json>(j, "contextUsed");
    r.context_used.shot_index = get_field<int>(ctx, "shotIndex", "contextUsed");
    r.context_used.previous_clip = get_optional<std::string>(ctx, "previousClip", "contextUsed");
    r.context_used.candidate_clip = get_field<std::string>(ctx, "candidateClip", "contextUsed");
    r.context_used.next_shot_description =
        get_optional<std::string>(ctx, "nextShotDescription", "contextUsed");
    r.context_used.next_clip = get_optional<std::string>(ctx, "nextClip", "contextUsed");
    r.weights = get_field<std::string>(j, "weights");
}

EvalReport evaluate(const EvalContext& context, ScorerPort& scorer, const WeightConfig& weights) {
    MetricScores scores = scorer.score(context);
    for (Metric m : kAllMetrics) {
        auto it = scores.find(m);
        if (it == scores.end()) {
            throw MissingMetric(metric_name(m));
        }
        require_finite_range(metric_name(m), it->second);
    }
    Aggregate agg = aggregate(scores, weights);
    EvalReport report;
    report.metric_scores = std::move(scores);
    report.domain_scores = std::move(agg.domain_scores);
    report.total = agg.total;
    report.context_used = summarize(context);
    report.weights = weights.ref;
    return report;
}

// Ranking -------------------------------------------------------------------

std::vector<CandidateRank> rank_candidates(std::span<const CandidateTotal> totals) {
    std::vector<CandidateTotal> order(totals.begin(), totals.end());
    std::sort(order.begin(), order.end(), [](const CandidateTotal& a, const CandidateTotal& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    std::vector<CandidateRank> out;
    out.reserve(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        out.emplace_back(order[i].first, static_cast<int>(i + 1));
    }
    return out;
}

std::vector<CandidateRank> rank_candidates(std::span<const std::pair<std::int64_t, EvalReport>> reports) {
    std::vector<CandidateTotal> totals;
    totals.reserve(reports.size());
    for (const auto& [id, report] : reports) {
        totals.emplace_back(id, report.total);
    }
    return rank_candidates(totals);
}

}  // namespace storyreel
