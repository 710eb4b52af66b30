#pragma once

#include "storyreel/eval.hpp"
#include "storyreel/ports.hpp"
#include "storyreel/rng.hpp"
#include "storyreel/search.hpp"
#include "storyreel/sim_backend.hpp"

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>

#include <unistd.h>

namespace storyreel::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("storyreel-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline MetricScores uniform_scores(double v) {
    MetricScores s;
    for (Metric m : kAllMetrics) {
        s[m] = v;
    }
    return s;
}

/// Scorer returning whatever `fn` says for a candidate.
class FnScorer : public ScorerPort {
public:
    explicit FnScorer(std::function<MetricScores(const EvalContext&)> fn) : fn_(std::move(fn)) {}
    MetricScores score(const EvalContext& context) override {
        ++calls;
        return fn_(context);
    }
    int calls = 0;

private:
    std::function<MetricScores(const EvalContext&)> fn_;
};

/// Script with `n` shots and cuts at the given indices (1 is always added),
/// plus a storyboard that satisfies it.
inline SimStory simple_story(int n, std::set<int> cuts = {}) {
    SimStory s;
    cuts.insert(1);
    for (int k = 1; k <= n; ++k) {
        Shot shot;
        shot.index = k;
        shot.description = "shot " + std::to_string(k);
        shot.background = "bg";
        s.script.shots.push_back(shot);
        if (cuts.count(k) != 0) {
            s.script.cuts.indices.insert(k);
            s.storyboard.keyframes[k] = "sim://keyframe/" + std::to_string(k);
        }
    }
    s.storyboard.background_bank["bg"] = "sim://bg";
    return s;
}

/// A complete sim stack around one world.
struct SimStack {
    explicit SimStack(SimWorldConfig config = {}, std::uint64_t seed = 1)
        : world(config), generator(world), scorer(world, seed), reviewer(scorer, WeightConfig::uniform()) {}

    SimWorld world;
    SimGenerator generator;
    SimScorer scorer;
    Reviewer reviewer;
};

inline SearchParams params(int w1, int w2, double alpha = 1.0, SearchMode mode = SearchMode::MctsGen) {
    SearchParams p;
    p.w1 = w1;
    p.w2 = w2;
    p.alpha = alpha;
    p.mode = mode;
    p.retry.base_backoff = std::chrono::milliseconds(0);
    return p;
}

inline double mean_path_latent(const SimWorld& world, const SearchTree& tree) {
    double sum = 0.0;
    for (const auto& c : tree.chosen_clips()) {
        sum += world.latent(c);
    }
    return sum / static_cast<double>(tree.chosen_path.size());
}

}  // namespace storyreel::test
