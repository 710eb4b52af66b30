#include "storyreel/search.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <functional>
#include <random>
#include <set>

using namespace storyreel;
using namespace storyreel::test;

namespace {

/// Fails the first `failures` calls, then delegates.
class FlakyGenerator : public GeneratorPort {
public:
    FlakyGenerator(GeneratorPort& inner, int failures) : inner_(inner), failures_(failures) {}
    ClipAsset generate(const GeneratorRequest& r) override {
        ++calls;
        if (failures_ > 0) {
            --failures_;
            throw Timeout("simulated timeout");
        }
        return inner_.generate(r);
    }
    void set_failures(int n) { failures_ = n; }
    int calls = 0;

private:
    GeneratorPort& inner_;
    int failures_;
};

/// Breaks permanently after `budget` successful calls.
class DyingGenerator : public GeneratorPort {
public:
    DyingGenerator(GeneratorPort& inner, int budget) : inner_(inner), budget_(budget) {}
    ClipAsset generate(const GeneratorRequest& r) override {
        if (budget_-- <= 0) {
            throw BackendUnreachable("gone");
        }
        return inner_.generate(r);
    }

private:
    GeneratorPort& inner_;
    int budget_;
};

std::string tree_bytes(const SearchState& s) { return canonical_dump(tree_to_json(s)); }

}  // namespace

TEST_CASE("uct hand-evaluated values") {
    CHECK(uct_score(1, 0, 1.0) == doctest::Approx(2.414214).epsilon(1e-6));
    CHECK(uct_score(3, 0, 0.0) == doctest::Approx(0.5));
    CHECK(uct_score(2, 1, 1.0) == doctest::Approx(1.666667).epsilon(1e-6));
}

TEST_CASE("uct is decreasing in rank and child count") {
    for (double alpha : {0.5, 1.0, 2.0}) {
        for (int r = 1; r < 10; ++r) {
            for (int c = 0; c < 10; ++c) {
                CHECK(uct_score(r + 1, c, alpha) < uct_score(r, c, alpha));
                CHECK(uct_score(r, c + 1, alpha) < uct_score(r, c, alpha));
            }
        }
    }
}

TEST_CASE("backpropagation examples") {
    SearchTree t = SearchTree::with_root();
    auto add = [&](NodeId id, NodeId parent, double score) {
        ClipNode n;
        n.id = id;
        n.parent_id = parent;
        n.initial_score = score;
        n.current_score = score;
        t.nodes[id] = n;
        t.node(parent).children.push_back(id);
        t.node(parent).child_count = static_cast<int>(t.node(parent).children.size());
    };
    add(1, 0, 80.0);
    add(2, 1, 50.0);
    add(3, 1, 70.0);
    add(4, 0, 55.0);
    CHECK(backpropagate(t, 1) == 140.0);
    CHECK(t.node(1).current_score == 140.0);
    CHECK(backpropagate(t, 4) == 55.0);
    // Children contribute their initial score, not an updated one.
    t.node(2).current_score = 999.0;
    CHECK(backpropagate(t, 1) == 140.0);
}

TEST_CASE("alpha zero sends every simulation to the rank-one candidate") {
    SimStack stack;
    const auto story = simple_story(4);
    ClipSearch search(story.script, story.storyboard, params(3, 5, 0.0), stack.generator, stack.reviewer, 3);
    const auto candidates = search.expand();
    NodeId top = 0;
    for (NodeId id : candidates) {
        if (search.tree().node(id).rank == 1) {
            top = id;
        }
    }
    for (int i = 0; i < 5; ++i) {
        const auto child = search.simulate_step();
        REQUIRE(child.has_value());
        CHECK(search.tree().node(*child).parent_id == top);
    }
}

TEST_CASE("large alpha spreads simulations round robin") {
    SimStack stack;
    const auto story = simple_story(4);
    ClipSearch search(story.script, story.storyboard, params(3, 7, 1e6), stack.generator, stack.reviewer, 4);
    search.expand();
    for (int i = 0; i < 7; ++i) {
        search.simulate_step();
    }
    std::vector<int> counts;
    for (NodeId id : search.tree().candidates()) {
        counts.push_back(search.tree().node(id).child_count);
    }
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    CHECK(*hi - *lo <= 1);
    CHECK(std::accumulate(counts.begin(), counts.end(), 0) == 7);
}

TEST_CASE("expansion reuses existing children") {
    SimStack stack;
    const auto story = simple_story(3);
    ClipSearch search(story.script, story.storyboard, params(1, 4, 1.0), stack.generator, stack.reviewer, 2);
    search.run_iteration();
    // w1=1: the single candidate collected all four simulations and keeps them.
    CHECK(search.tree().candidates().size() == 4);
    const auto before = search.ledger().generations;
    search.expand();
    CHECK(search.ledger().generations == before);
    std::set<int> ranks;
    for (NodeId id : search.tree().candidates()) {
        ranks.insert(search.tree().node(id).rank);
    }
    CHECK(ranks == std::set<int>{1, 2, 3, 4});
}

TEST_CASE("selection freezes siblings and picks the best current score") {
    SimStack stack;
    const auto story = simple_story(3);
    ClipSearch search(story.script, story.storyboard, params(3, 3), stack.generator, stack.reviewer, 9);
    search.expand();
    for (int i = 0; i < 3; ++i) {
        search.simulate_step();
    }
    const auto scores = search.backpropagate_candidates();
    const auto candidates = search.tree().candidates();
    const NodeId chosen = search.select_next();
    double best = -1.0;
    NodeId expect = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (scores[i] > best) {
            best = scores[i];
            expect = candidates[i];
        }
    }
    CHECK(chosen == expect);
    for (NodeId id : candidates) {
        CHECK(search.tree().node(id).frozen == (id != chosen));
    }
    CHECK(search.tree().node(chosen).on_chosen_path);
    CHECK(search.tree().node(chosen).child_count >= 3);
}

TEST_CASE("budget identities hold") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        for (auto p : {params(3, 3), params(2, 5), params(1, 0), params(3, 0, 1.0, SearchMode::Exhaustive)}) {
            const auto story = make_sim_story(8, seed);
            SimStack stack({}, seed);
            const auto s = run_search(story.script, story.storyboard, p, stack.generator, stack.reviewer, seed);
            std::int64_t sum = 0;
            for (auto g : s.ledger.per_chosen_node) {
                sum += g;
            }
            CHECK(s.ledger.generations == sum);
            CHECK(s.ledger.generations == s.ledger.evaluations);
            CHECK(static_cast<std::size_t>(s.ledger.generations) == s.tree.clip_count());
            CHECK(s.ledger.generations == stack.generator.calls());
            CHECK(s.ledger.per_chosen_node.size() == 8);
            CHECK(s.ledger.pending_frontier == 0);
            CHECK(check_tree(s.tree, story.script).empty());
        }
    }
}

TEST_CASE("exhaustive mode spends w1 squared per interior extension") {
    for (int w1 : {1, 2, 3, 4}) {
        const auto story = make_sim_story(6, 3);
        SimStack stack({}, 3);
        const auto s = run_search(story.script, story.storyboard, params(w1, 0, 1.0, SearchMode::Exhaustive),
                                  stack.generator, stack.reviewer, 3);
        const auto& per = s.ledger.per_chosen_node;
        CHECK(per.front() == w1 + w1 * w1);
        for (std::size_t k = 1; k + 1 < per.size(); ++k) {
            CHECK(per[k] == w1 * w1);
        }
        CHECK(per.back() == 0);
        CHECK(s.ledger.generations == w1 + 5 * w1 * w1);
    }
}

TEST_CASE("generations per node on an empty path") {
    CHECK_THROWS_AS(generations_per_node(BudgetLedger{}), EmptyPath);
}

TEST_CASE("search is deterministic and independent of concurrency") {
    const auto story = make_sim_story(10, 77);
    auto run = [&](int concurrency) {
        SimStack stack({}, 77);
        auto p = params(3, 3);
        p.max_concurrency = concurrency;
        return tree_bytes(run_search(story.script, story.storyboard, p, stack.generator, stack.reviewer, 77));
    };
    const std::string a = run(1);
    CHECK(a == run(1));
    CHECK(a == run(4));
}

TEST_CASE("tree and checkpoint JSON round-trip") {
    const auto story = make_sim_story(6, 12);
    SimStack stack({}, 12);
    const auto s = run_search(story.script, story.storyboard, params(3, 3), stack.generator, stack.reviewer, 12);
    const json t = tree_to_json(s);
    CHECK(tree_to_json(tree_from_json(t)) == t);
    const json c = checkpoint_to_json(s, 7);
    CHECK(checkpoint_to_json(checkpoint_from_json(c), 7) == c);
    CHECK(c["rngState"]["nextNodeId"] == s.tree.next_id);
}

TEST_CASE("tree schema errors name the field") {
    const auto story = make_sim_story(3, 2);
    SimStack stack({}, 2);
    const auto s = run_search(story.script, story.storyboard, params(2, 1), stack.generator, stack.reviewer, 2);
    json t = tree_to_json(s);
    t["nodes"][2]["initialScore"] = "high";
    try {
        (void)tree_from_json(t);
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        CHECK(e.field() == "nodes[2].initialScore");
    }
    json u = tree_to_json(s);
    u["edges"][0][1] = 9999;
    CHECK_THROWS_AS(tree_from_json(u), SchemaError);
}

TEST_CASE("conditioning structure on random scripts") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        const auto story = make_sim_story(7, seed);
        SimStack stack({}, seed);
        const auto s = run_search(story.script, story.storyboard, params(2, 2), stack.generator, stack.reviewer, seed);
        NodeId prev = kRootId;
        for (NodeId id : s.tree.chosen_path) {
            const ClipNode& n = s.tree.node(id);
            if (story.script.cuts.contains(n.shot_index)) {
                CHECK(n.conditioning->kind == ConditioningKind::Keyframe);
                CHECK(n.conditioning->source == story.storyboard.keyframes.at(n.shot_index));
            } else {
                CHECK(n.conditioning->kind == ConditioningKind::PriorLastFrame);
                CHECK(n.conditioning->source == s.tree.node(prev).clip->last_frame);
            }
            prev = id;
        }
    }
}

TEST_CASE("greedy search picks the best candidate under an oracle scorer") {
    SimWorldConfig cfg;
    cfg.observation_noise = 0.0;
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        const auto story = make_sim_story(6, seed);
        SimStack stack(cfg, seed);
        const auto s = run_search(story.script, story.storyboard, params(4, 0), stack.generator, stack.reviewer, seed);
        NodeId parent = kRootId;
        for (NodeId id : s.tree.chosen_path) {
            double best = -1.0;
            for (NodeId sib : s.tree.node(parent).children) {
                best = std::max(best, stack.world.latent(*s.tree.node(sib).clip));
            }
            CHECK(stack.world.latent(*s.tree.node(id).clip) == best);
            parent = id;
        }
    }
}

namespace {

struct SmallInstance {
    double single = 0.0;
    double searched = 0.0;
};

/// Runs one small search under an oracle scorer and recomputes both the
/// searched path and the single-sample path (slot 0 throughout) from the
/// stream oracle, enumerating over slot sequences.
SmallInstance small_instance(int n, int w1, int w2, std::uint64_t seed) {
    SimWorldConfig cfg;
    cfg.observation_noise = 0.0;
    const auto story = make_sim_story(n, seed);
    auto latent_of = [&](const std::vector<int>& slots) {
        std::optional<double> parent;
        double sum = 0.0;
        for (std::size_t k = 0; k < slots.size(); ++k) {
            const int shot = static_cast<int>(k + 1);
            const bool cut = story.script.cuts.contains(shot);
            Stream z(mix_key(seed, 0x67656e65ull, shot, slots[k]));
            const double l = sim_latent(cfg, cut ? std::nullopt : parent, cut, z.normal());
            sum += l;
            parent = l;
        }
        return sum;
    };
    SimStack stack(cfg, seed);
    const auto s = run_search(story.script, story.storyboard, params(w1, w2), stack.generator, stack.reviewer, seed);
    std::vector<int> slots;
    for (NodeId id : s.tree.chosen_path) {
        slots.push_back(s.tree.node(id).slot);
    }
    SmallInstance out{latent_of(std::vector<int>(static_cast<std::size_t>(n), 0)), latent_of(slots)};
    CHECK(out.searched == doctest::Approx(mean_path_latent(stack.world, s.tree) * n));
    return out;
}

}  // namespace

TEST_CASE("greedy search never loses to a single sample on small instances") {
    int strict_wins = 0;
    for (int n = 1; n <= 3; ++n) {
        for (int w1 = 1; w1 <= 3; ++w1) {
            for (std::uint64_t seed = 1; seed <= 40; ++seed) {
                const auto r = small_instance(n, w1, 0, seed);
                CHECK(r.searched >= r.single - 1e-9);
                strict_wins += r.searched > r.single + 1e-9 ? 1 : 0;
            }
        }
    }
    CHECK(strict_wins > 0);
}

TEST_CASE("single-shot searches pick the best candidate whatever w2 is") {
    for (int w1 = 1; w1 <= 3; ++w1) {
        for (int w2 = 0; w2 <= 3; ++w2) {
            for (std::uint64_t seed = 1; seed <= 40; ++seed) {
                const auto r = small_instance(1, w1, w2, seed);
                CHECK(r.searched >= r.single - 1e-9);
            }
        }
    }
}

TEST_CASE("lookahead search rarely loses to a single sample on small instances") {
    // Uneven simulation counts make the lookahead mean noisy, so a handful of
    // instances lose; see the acceptance report for the exact count.
    int losses = 0;
    int total = 0;
    double single_sum = 0.0;
    double searched_sum = 0.0;
    for (int n = 2; n <= 3; ++n) {
        for (int w1 = 1; w1 <= 3; ++w1) {
            for (int w2 = 1; w2 <= w1; ++w2) {
                for (std::uint64_t seed = 1; seed <= 40; ++seed) {
                    const auto r = small_instance(n, w1, w2, seed);
                    losses += r.searched < r.single - 1e-9 ? 1 : 0;
                    ++total;
                    single_sum += r.single;
                    searched_sum += r.searched;
                }
            }
        }
    }
    CHECK(losses * 100 <= total);
    CHECK(searched_sum > single_sum);
}

TEST_CASE("transient generator failures are retried") {
    const auto story = make_sim_story(4, 5);
    SimStack clean({}, 5);
    const auto expected =
        tree_bytes(run_search(story.script, story.storyboard, params(3, 3), clean.generator, clean.reviewer, 5));

    SimStack stack({}, 5);
    FlakyGenerator flaky(stack.generator, 2);
    const auto s = run_search(story.script, story.storyboard, params(3, 3), flaky, stack.reviewer, 5);
    CHECK(tree_bytes(s) == expected);
    CHECK(flaky.calls == s.ledger.generations + 2);
}

TEST_CASE("missing last frame is a protocol error that aborts after retries") {
    class NoFrame : public GeneratorPort {
    public:
        ClipAsset generate(const GeneratorRequest& r) override {
            ++calls;
            return ClipAsset{"x", r.shot.index, "u", "", 3000};
        }
        int calls = 0;
    } gen;
    SimStack stack;
    const auto story = simple_story(2);
    CHECK_THROWS_AS(run_search(story.script, story.storyboard, params(2, 1), gen, stack.reviewer, 1), SearchAborted);
    CHECK(gen.calls == 3);
}

TEST_CASE("abort writes a checkpoint and resuming matches an uninterrupted run") {
    TempDir dir("abort");
    const auto story = make_sim_story(8, 31);
    SimStack clean({}, 31);
    const auto expected =
        tree_bytes(run_search(story.script, story.storyboard, params(3, 3), clean.generator, clean.reviewer, 31));

    for (int budget : {4, 11, 23, 30}) {
        const auto ckpt = dir / ("ckpt-" + std::to_string(budget) + ".json");
        SimStack first({}, 31);
        DyingGenerator dying(first.generator, budget);
        SearchOptions opts;
        opts.checkpoint = ckpt;
        auto p = params(3, 3);
        p.retry.attempts = 2;
        std::optional<SearchAborted> abort;
        try {
            run_search(story.script, story.storyboard, p, dying, first.reviewer, 31, opts);
        } catch (const SearchAborted& e) {
            abort = e;
        }
        REQUIRE(abort.has_value());
        CHECK(abort->checkpoint() == ckpt);
        const SearchState saved = checkpoint_from_json(read_json_file(ckpt));
        CHECK(saved.ledger.pending_frontier == 0);
        CHECK(check_tree(saved.tree, story.script).empty());

        // A new process: rebuild the simulated world from the saved tree.
        SimStack second({}, 31);
        for (const auto& r : replay_requests(saved, story.script)) {
            second.generator.generate(r);
        }
        SearchOptions resume;
        resume.resume = saved;
        const auto s =
            run_search(story.script, story.storyboard, params(3, 3), second.generator, second.reviewer, 31, resume);
        CHECK(tree_bytes(s) == expected);
    }
}

TEST_CASE("resume refuses different parameters") {
    const auto story = make_sim_story(3, 1);
    SimStack stack({}, 1);
    const auto s = run_search(story.script, story.storyboard, params(2, 2), stack.generator, stack.reviewer, 1);
    SearchOptions opts;
    opts.resume = s;
    CHECK_THROWS(run_search(story.script, story.storyboard, params(3, 2), stack.generator, stack.reviewer, 1, opts));
    CHECK_THROWS(run_search(story.script, story.storyboard, params(2, 2), stack.generator, stack.reviewer, 2, opts));
}

TEST_CASE("invalid scripts are rejected before any generation") {
    auto story = simple_story(3);
    story.script.cuts.indices.erase(1);
    SimStack stack;
    CHECK_THROWS_AS(run_search(story.script, story.storyboard, params(2, 2), stack.generator, stack.reviewer, 1),
                    InvalidScript);
    CHECK(stack.generator.calls() == 0);
}

TEST_CASE("recursive backpropagation only touches chosen-path ancestors") {
    const auto story = make_sim_story(5, 8);
    SimStack a({}, 8);
    SimStack b({}, 8);
    auto flat = params(3, 3);
    auto deep = params(3, 3);
    deep.recursive_backprop = true;
    const auto s1 = run_search(story.script, story.storyboard, flat, a.generator, a.reviewer, 8);
    const auto s2 = run_search(story.script, story.storyboard, deep, b.generator, b.reviewer, 8);
    CHECK(s1.tree.chosen_path == s2.tree.chosen_path);
    CHECK(s1.ledger == s2.ledger);
    bool differs = false;
    for (NodeId id : s2.tree.chosen_path) {
        const ClipNode& n = s2.tree.node(id);
        if (n.children.empty()) {
            continue;
        }
        if (n.current_score != s1.tree.node(id).current_score) {
            differs = true;
        }
    }
    CHECK(differs);
}

TEST_CASE("search params validation and JSON") {
    CHECK_THROWS(params(0, 1).validate());
    CHECK_THROWS(params(1, -1).validate());
    CHECK_THROWS(params(1, 1, -0.5).validate());
    const auto p = params(2, 5, 0.25, SearchMode::Exhaustive);
    const auto back = json(p).get<SearchParams>();
    CHECK(back.w1 == 2);
    CHECK(back.w2 == 5);
    CHECK(back.alpha == 0.25);
    CHECK(back.mode == SearchMode::Exhaustive);
}
