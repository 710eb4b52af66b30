#include "storyreel/search.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <set>

namespace storyreel {

std::string to_string(SearchMode mode) { return mode == SearchMode::MctsGen ? "mcts" : "exhaustive"; }

SearchMode search_mode_from_string(const std::string& text) {
    if (text == "mcts") {
        return SearchMode::MctsGen;
    }
    if (text == "exhaustive") {
        return SearchMode::Exhaustive;
    }
    throw SchemaError("mode", "expected 'mcts' or 'exhaustive', got '" + text + "'");
}

void SearchParams::validate() const {
    if (w1 < 1) {
        throw Error("w1 must be at least 1");
    }
    if (w2 < 0) {
        throw Error("w2 must be non-negative");
    }
    if (!std::isfinite(alpha) || alpha < 0.0) {
        throw Error("alpha must be finite and non-negative");
    }
    if (max_concurrency < 1) {
        throw Error("max_concurrency must be at least 1");
    }
}

void to_json(json& j, const SearchParams& p) {
    j = json{{"w1", p.w1},
             {"w2", p.w2},
             {"alpha", p.alpha},
             {"mode", to_string(p.mode)},
             {"recursiveBackprop", p.recursive_backprop}};
}

void from_json(const json& j, SearchParams& p) {
    p.w1 = get_field_or(j, "w1", p.w1);
    p.w2 = get_field_or(j, "w2", p.w2);
    p.alpha = get_field_or(j, "alpha", p.alpha);
    p.mode = search_mode_from_string(get_field_or<std::string>(j, "mode", to_string(p.mode)));
    p.recursive_backprop = get_field_or(j, "recursiveBackprop", p.recursive_backprop);
    p.max_concurrency = get_field_or(j, "maxConcurrency", p.max_concurrency);
    p.retry.attempts = get_field_or(j, "retryAttempts", p.retry.attempts);
    p.retry.base_backoff = std::chrono::milliseconds(
        get_field_or<std::int64_t>(j, "retryBackoffMs", p.retry.base_backoff.count()));
}

void to_json(json& j, const BudgetLedger& l) {
    j = json{{"generations", l.generations},
             {"evaluations", l.evaluations},
             {"perChosenNode", l.per_chosen_node},
             {"pendingFrontier", l.pending_frontier}};
}

void from_json(const json& j, BudgetLedger& l) {
    l.generations = get_field<std::int64_t>(j, "generations");
    l.evaluations = get_field<std::int64_t>(j, "evaluations");
    l.per_chosen_node = get_field<std::vector<std::int64_t>>(j, "perChosenNode");
    l.pending_frontier = get_field<std::int64_t>(j, "pendingFrontier");
}

double generations_per_node(const BudgetLedger& ledger) {
    if (ledger.per_chosen_node.empty()) {
        throw EmptyPath();
    }
    return static_cast<double>(ledger.generations) / static_cast<double>(ledger.per_chosen_node.size());
}

// Tree ------------------------------------------------------------------------

SearchTree SearchTree::with_root() {
    SearchTree tree;
    ClipNode root;
    root.id = kRootId;
    root.rank = 1;
    root.on_chosen_path = true;
    tree.nodes.emplace(kRootId, root);
    return tree;
}

const ClipNode& SearchTree::node(NodeId id) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) {
        throw Error("no node " + std::to_string(id));
    }
    return it->second;
}

ClipNode& SearchTree::node(NodeId id) {
    auto it = nodes.find(id);
    if (it == nodes.end()) {
        throw Error("no node " + std::to_string(id));
    }
    return it->second;
}

std::vector<ClipAsset> SearchTree::lineage(NodeId id) const {
    std::vector<ClipAsset> out;
    for (const ClipNode* n = &node(id); n->clip; n = &node(*n->parent_id)) {
        out.push_back(*n->clip);
    }
    std::reverse(out.begin(), out.end());
    return out;
}

std::vector<ClipAsset> SearchTree::chosen_clips() const {
    std::vector<ClipAsset> out;
    for (NodeId id : chosen_path) {
        out.push_back(*node(id).clip);
    }
    return out;
}

void to_json(json& j, const ClipNode& n) {
    j = json{{"id", n.id},
             {"parentId", optional_json(n.parent_id)},
             {"shotIndex", n.shot_index},
             {"slot", n.slot},
             {"clip", n.clip ? json(*n.clip) : json(nullptr)},
             {"conditioning", n.conditioning ? json(*n.conditioning) : json(nullptr)},
             {"initialScore", n.initial_score},
             {"currentScore", n.current_score},
             {"rank", n.rank},
             {"childCount", n.child_count},
             {"onChosenPath", n.on_chosen_path},
             {"frozen", n.frozen}};
}

void from_json(const json& j, ClipNode& n) {
    n.id = get_field<NodeId>(j, "id");
    n.parent_id = get_optional<NodeId>(j, "parentId");
    n.shot_index = get_field<int>(j, "shotIndex");
    n.slot = get_field<int>(j, "slot");
    n.clip = get_optional<ClipAsset>(j, "clip");
    n.conditioning = get_optional<Conditioning>(j, "conditioning");
    n.initial_score = get_field<double>(j, "initialScore");
    n.current_score = get_field<double>(j, "currentScore");
    n.rank = get_field<int>(j, "rank");
    n.child_count = get_field<int>(j, "childCount");
    n.on_chosen_path = get_field<bool>(j, "onChosenPath");
    n.frozen = get_field<bool>(j, "frozen");
    n.children.clear();
}

// Scoring rules -----------------------------------------------------------------

double uct_score(int rank, int child_count, double alpha) {
    const double exploit = 2.0 / (static_cast<double>(rank) + 1.0);
    const double explore = std::sqrt(2.0 / (static_cast<double>(child_count) + 1.0));
    return exploit + alpha * explore;
}

double backpropagate(SearchTree& tree, NodeId parent_id) {
    ClipNode& parent = tree.node(parent_id);
    if (parent.children.empty()) {
        parent.current_score = parent.initial_score;
        return parent.current_score;
    }
    double sum = 0.0;
    for (NodeId c : parent.children) {
        sum += tree.node(c).initial_score;
    }
    parent.current_score = parent.initial_score + sum / static_cast<double>(parent.children.size());
    return parent.current_score;
}

InvalidScript::InvalidScript(ValidationReport report)
    : Error([&] {
          std::string msg = "script failed validation:";
          for (const auto& v : report.violations) {
              msg += " [shot " + std::to_string(v.shot_index) + " " + v.rule + "]";
          }
          return msg;
      }()),
      report_(std::move(report)) {}

// Persistence -------------------------------------------------------------------

json tree_to_json(const SearchState& state) {
    json nodes = json::array();
    json edges = json::array();
    for (const auto& [id, n] : state.tree.nodes) {
        nodes.push_back(n);
        for (NodeId c : n.children) {
            edges.push_back(json::array({id, c}));
        }
    }
    return json{{"version", 1},
                {"seed", state.seed},
                {"params", state.params},
                {"root", kRootId},
                {"nodes", nodes},
                {"edges", edges},
                {"chosenPath", state.tree.chosen_path},
                {"nextNodeId", state.tree.next_id},
                {"ledger", state.ledger}};
}

SearchState tree_from_json(const json& j) {
    SearchState state;
    const int version = get_field<int>(j, "version");
    if (version != 1) {
        throw SchemaError("version", "unsupported tree version " + std::to_string(version));
    }
    state.seed = get_field<std::uint64_t>(j, "seed");
    state.params = get_field<SearchParams>(j, "params");
    state.tree.nodes.clear();
    for (auto& n : get_array<ClipNode>(j, "nodes")) {
        const NodeId id = n.id;
        if (!state.tree.nodes.emplace(id, std::move(n)).second) {
            throw SchemaError("nodes", "duplicate node id " + std::to_string(id));
        }
    }
    if (!state.tree.contains(kRootId)) {
        throw SchemaError("nodes", "root node 0 is missing");
    }
    const auto edges = get_array<std::vector<NodeId>>(j, "edges");
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const auto& e = edges[i];
        const std::string where = "edges[" + std::to_string(i) + "]";
        if (e.size() != 2 || !state.tree.contains(e[0]) || !state.tree.contains(e[1])) {
            throw SchemaError(where, "edge must join two existing nodes");
        }
        if (state.tree.node(e[1]).parent_id != e[0]) {
            throw SchemaError(where, "edge disagrees with the child's parentId");
        }
        state.tree.node(e[0]).children.push_back(e[1]);
    }
    state.tree.chosen_path = get_field<std::vector<NodeId>>(j, "chosenPath");
    for (std::size_t i = 0; i < state.tree.chosen_path.size(); ++i) {
        if (!state.tree.contains(state.tree.chosen_path[i])) {
            throw SchemaError("chosenPath[" + std::to_string(i) + "]", "unknown node");
        }
    }
    state.tree.next_id = get_field<NodeId>(j, "nextNodeId");
    state.ledger = get_field<BudgetLedger>(j, "ledger");
    return state;
}

json checkpoint_to_json(const SearchState& state, int pending_shot) {
    json reports = json::object();
    for (const auto& [id, r] : state.reports) {
        reports[std::to_string(id)] = r;
    }
    return json{{"version", 1},
                {"tree", tree_to_json(state)},
                {"rngState", {{"seed", state.seed}, {"nextNodeId", state.tree.next_id}}},
                {"pendingShot", pending_shot},
                {"reports", reports}};
}

SearchState checkpoint_from_json(const json& j) {
    SearchState state = get_field<json>(j, "tree").is_object() ? tree_from_json(j.at("tree")) : SearchState{};
    const json rng = get_field<json>(j, "rngState");
    if (get_field<std::uint64_t>(rng, "seed", "rngState") != state.seed ||
        get_field<NodeId>(rng, "nextNodeId", "rngState") != state.tree.next_id) {
        throw SchemaError("rngState", "does not match the embedded tree");
    }
    const json reports = get_field<json>(j, "reports");
    for (const auto& [key, value] : reports.items()) {
        try {
            state.reports[std::stoll(key)] = value.get<EvalReport>();
        } catch (const SchemaError& e) {
            throw e.under("reports." + key);
        } catch (const std::exception& e) {
            throw SchemaError("reports." + key, e.what());
        }
    }
    return state;
}

// ClipSearch --------------------------------------------------------------------

ClipSearch::ClipSearch(const Script& script, const Storyboard& storyboard, SearchParams params,
                       GeneratorPort& generator, ReviewerPort& reviewer, std::uint64_t seed, std::string story_text)
    : script_(script),
      storyboard_(storyboard),
      generator_(generator),
      reviewer_(reviewer),
      story_text_(std::move(story_text)) {
    params.validate();
    state_.params = params;
    state_.seed = seed;
}

void ClipSearch::restore(SearchState state) {
    state.params.max_concurrency = state_.params.max_concurrency;
    state.params.retry = state_.params.retry;
    state_ = std::move(state);
}

std::pair<ClipAsset, EvalReport> ClipSearch::produce(const Pending& p) {
    GeneratorRequest request;
    request.shot = script_.shot(p.shot);
    request.conditioning = p.conditioning;
    request.seed = state_.seed;
    request.candidate_index = p.slot;
    request.node_id = p.id;

    ClipAsset clip;
    try {
        clip = with_retry(state_.params.retry, [&] {
            ClipAsset c = generator_.generate(request);
            if (c.last_frame.empty()) {
                throw ProtocolError("generated clip has no last frame");
            }
            if (c.duration_ms <= 0) {
                throw ProtocolError("generated clip has non-positive duration");
            }
            return c;
        });
    } catch (const Error& e) {
        throw GeneratorFailure("generation for node " + std::to_string(p.id) + " failed: " + e.what());
    }
    clip.id = "n" + std::to_string(p.id);
    clip.shot_index = p.shot;

    std::vector<ClipAsset> lineage = state_.tree.lineage(p.parent);
    const EvalContext context = assemble_context(p.shot, script_, lineage, clip, story_text_);
    try {
        EvalReport report = with_retry(state_.params.retry, [&] { return reviewer_.review(context); });
        return {std::move(clip), std::move(report)};
    } catch (const Error& e) {
        throw ReviewerFailure("review of node " + std::to_string(p.id) + " failed: " + e.what());
    }
}

std::vector<NodeId> ClipSearch::spawn(NodeId parent_id, int count) {
    std::vector<Pending> batch;
    {
        const ClipNode& parent = state_.tree.node(parent_id);
        const int shot = parent.shot_index + 1;
        const Conditioning conditioning =
            conditioning_for(shot, script_, storyboard_, parent.clip ? &*parent.clip : nullptr);
        for (int i = 0; i < count; ++i) {
            batch.push_back(Pending{state_.tree.next_id + i, parent_id, parent.child_count + i, shot, conditioning});
        }
    }

    std::vector<std::pair<ClipAsset, EvalReport>> results;
    results.reserve(batch.size());
    const auto width = static_cast<std::size_t>(state_.params.max_concurrency);
    if (width <= 1) {
        for (const auto& p : batch) {
            results.push_back(produce(p));
        }
    } else {
        for (std::size_t start = 0; start < batch.size(); start += width) {
            const std::size_t end = std::min(batch.size(), start + width);
            std::vector<std::future<std::pair<ClipAsset, EvalReport>>> inflight;
            for (std::size_t i = start; i < end; ++i) {
                inflight.push_back(std::async(std::launch::async, [this, &batch, i] { return produce(batch[i]); }));
            }
            // Join everything before rethrowing so no task outlives the batch.
            std::exception_ptr first_error;
            for (auto& f : inflight) {
                try {
                    results.push_back(f.get());
                } catch (...) {
                    if (!first_error) {
                        first_error = std::current_exception();
                    }
                }
            }
            if (first_error) {
                std::rethrow_exception(first_error);
            }
        }
    }

    std::vector<NodeId> ids;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Pending& p = batch[i];
        ClipNode n;
        n.id = p.id;
        n.parent_id = p.parent;
        n.shot_index = p.shot;
        n.slot = p.slot;
        n.clip = std::move(results[i].first);
        n.conditioning = p.conditioning;
        n.initial_score = results[i].second.total;
        n.current_score = n.initial_score;
        state_.reports[p.id] = std::move(results[i].second);
        state_.tree.nodes.emplace(p.id, std::move(n));

        ClipNode& parent = state_.tree.node(p.parent);
        parent.children.push_back(p.id);
        parent.child_count = static_cast<int>(parent.children.size());

        ++state_.tree.next_id;
        ++state_.ledger.generations;
        ++state_.ledger.evaluations;
        ++state_.ledger.pending_frontier;
        ids.push_back(p.id);
    }
    return ids;
}

void ClipSearch::rank_group(NodeId parent_id) {
    const ClipNode& parent = state_.tree.node(parent_id);
    std::vector<CandidateTotal> totals;
    for (NodeId c : parent.children) {
        totals.emplace_back(c, state_.tree.node(c).initial_score);
    }
    for (const auto& [id, rank] : rank_candidates(totals)) {
        state_.tree.node(id).rank = rank;
    }
}

std::vector<NodeId> ClipSearch::expand() {
    if (finished()) {
        throw Error("expand called on a finished search");
    }
    const NodeId terminal = state_.tree.terminal();
    const int existing = state_.tree.node(terminal).child_count;
    if (existing < state_.params.w1) {
        spawn(terminal, state_.params.w1 - existing);
    }
    rank_group(terminal);
    return state_.tree.node(terminal).children;
}

std::optional<NodeId> ClipSearch::simulate_step() {
    const int shot = pending_shot();
    if (shot >= script_.clip_count()) {
        return std::nullopt;
    }
    const auto& candidates = state_.tree.candidates();
    if (candidates.empty()) {
        throw Error("simulate_step needs an expanded candidate set");
    }
    NodeId best = candidates.front();
    double best_uct = -1.0;
    for (NodeId id : candidates) {
        const ClipNode& n = state_.tree.node(id);
        const double u = uct_score(n.rank, n.child_count, state_.params.alpha);
        if (u > best_uct || (u == best_uct && id < best)) {
            best = id;
            best_uct = u;
        }
    }
    return spawn(best, 1).front();
}

void ClipSearch::exhaustive_lookahead() {
    if (pending_shot() >= script_.clip_count()) {
        return;
    }
    const std::vector<NodeId> candidates = state_.tree.candidates();
    for (NodeId id : candidates) {
        const int have = state_.tree.node(id).child_count;
        if (have < state_.params.w1) {
            spawn(id, state_.params.w1 - have);
        }
    }
}

std::vector<double> ClipSearch::backpropagate_candidates() {
    std::vector<double> scores;
    const std::vector<NodeId> candidates = state_.tree.candidates();
    for (NodeId id : candidates) {
        scores.push_back(backpropagate(state_.tree, id));
    }
    if (state_.params.recursive_backprop) {
        refresh_ancestors();
    }
    return scores;
}

void ClipSearch::refresh_ancestors() {
    for (auto it = state_.tree.chosen_path.rbegin(); it != state_.tree.chosen_path.rend(); ++it) {
        ClipNode& n = state_.tree.node(*it);
        if (n.children.empty()) {
            continue;
        }
        double sum = 0.0;
        for (NodeId c : n.children) {
            sum += state_.tree.node(c).current_score;
        }
        n.current_score = n.initial_score + sum / static_cast<double>(n.children.size());
    }
}

NodeId ClipSearch::select_next() {
    const std::vector<NodeId> candidates = state_.tree.candidates();
    if (candidates.empty()) {
        throw Error("select_next needs an expanded candidate set");
    }
    NodeId chosen = candidates.front();
    for (NodeId id : candidates) {
        const double s = state_.tree.node(id).current_score;
        const double b = state_.tree.node(chosen).current_score;
        if (s > b || (s == b && id < chosen)) {
            chosen = id;
        }
    }
    for (NodeId id : candidates) {
        ClipNode& n = state_.tree.node(id);
        if (id == chosen) {
            n.on_chosen_path = true;
        } else {
            n.frozen = true;
            // Lookahead children under a frozen sibling are final; rank them now.
            if (!n.children.empty()) {
                rank_group(id);
            }
        }
    }
    state_.tree.chosen_path.push_back(chosen);

    const int shot = state_.tree.node(chosen).shot_index;
    if (shot < script_.clip_count()) {
        const int have = state_.tree.node(chosen).child_count;
        if (have < state_.params.w1) {
            spawn(chosen, state_.params.w1 - have);
        }
    }
    state_.ledger.per_chosen_node.push_back(state_.ledger.pending_frontier);
    state_.ledger.pending_frontier = 0;
    return chosen;
}

NodeId ClipSearch::run_iteration() {
    expand();
    if (pending_shot() < script_.clip_count()) {
        if (state_.params.mode == SearchMode::MctsGen) {
            for (int i = 0; i < state_.params.w2; ++i) {
                simulate_step();
            }
        } else {
            exhaustive_lookahead();
        }
        backpropagate_candidates();
    }
    return select_next();
}

// Driver ------------------------------------------------------------------------

namespace {

void write_checkpoint(const std::filesystem::path& path, const ClipSearch& search) {
    if (!path.empty()) {
        write_json_file(path, checkpoint_to_json(search.state(), search.pending_shot()));
    }
}

}  // namespace

SearchState run_search(const Script& script, const Storyboard& storyboard, const SearchParams& params,
                       GeneratorPort& generator, ReviewerPort& reviewer, std::uint64_t seed,
                       const SearchOptions& options) {
    ValidationReport report = validate_script(script, storyboard);
    if (!report.ok()) {
        throw InvalidScript(std::move(report));
    }
    ClipSearch search(script, storyboard, params, generator, reviewer, seed, options.story_text);
    if (options.resume) {
        const SearchParams& saved = options.resume->params;
        if (saved.w1 != params.w1 || saved.w2 != params.w2 || saved.alpha != params.alpha ||
            saved.mode != params.mode || saved.recursive_backprop != params.recursive_backprop ||
            options.resume->seed != seed) {
            throw Error("checkpoint was written with different search parameters or seed");
        }
        search.restore(*options.resume);
    }
    while (!search.finished()) {
        SearchState before = search.state();
        NodeId chosen = kRootId;
        try {
            chosen = search.run_iteration();
        } catch (const GeneratorFailure& e) {
            search.restore(std::move(before));
            write_checkpoint(options.checkpoint, search);
            throw SearchAborted(options.checkpoint, e.what());
        } catch (const ReviewerFailure& e) {
            search.restore(std::move(before));
            write_checkpoint(options.checkpoint, search);
            throw SearchAborted(options.checkpoint, e.what());
        }
        write_checkpoint(options.checkpoint, search);
        if (options.on_extension) {
            options.on_extension(search, chosen);
        }
    }
    return search.state();
}

std::vector<GeneratorRequest> replay_requests(const SearchState& state, const Script& script) {
    std::vector<GeneratorRequest> out;
    for (const auto& [id, n] : state.tree.nodes) {
        if (id == kRootId) {
            continue;
        }
        GeneratorRequest r;
        r.shot = script.shot(n.shot_index);
        r.conditioning = *n.conditioning;
        r.seed = state.seed;
        r.candidate_index = n.slot;
        r.node_id = id;
        out.push_back(std::move(r));
    }
    return out;
}

// Invariants --------------------------------------------------------------------

std::vector<std::string> check_tree(const SearchTree& tree, const Script& script) {
    std::vector<std::string> problems;
    auto fail = [&](const std::string& msg) { problems.push_back(msg); };
    if (!tree.contains(kRootId)) {
        fail("root missing");
        return problems;
    }
    for (const auto& [id, n] : tree.nodes) {
        if (id != kRootId) {
            if (!n.parent_id || !tree.contains(*n.parent_id)) {
                fail("node " + std::to_string(id) + " has no valid parent");
                continue;
            }
            const ClipNode& p = tree.node(*n.parent_id);
            if (std::count(p.children.begin(), p.children.end(), id) != 1) {
                fail("node " + std::to_string(id) + " not listed exactly once under its parent");
            }
            if (n.shot_index != p.shot_index + 1) {
                fail("node " + std::to_string(id) + " shot index does not follow its parent");
            }
            if (!n.clip || !n.conditioning) {
                fail("node " + std::to_string(id) + " lacks clip or conditioning");
            } else {
                const bool cut = script.cuts.contains(n.shot_index);
                if (cut != (n.conditioning->kind == ConditioningKind::Keyframe)) {
                    fail("node " + std::to_string(id) + " conditioning kind disagrees with the cut set");
                }
                if (!cut && p.clip && n.conditioning->source != p.clip->last_frame) {
                    fail("node " + std::to_string(id) + " is not conditioned on its parent's last frame");
                }
            }
        }
        if (n.child_count != static_cast<int>(n.children.size())) {
            fail("node " + std::to_string(id) + " childCount mismatch");
        }
        if (!n.children.empty()) {
            std::set<int> ranks;
            for (NodeId c : n.children) {
                ranks.insert(tree.node(c).rank);
            }
            const bool ranked = std::all_of(n.children.begin(), n.children.end(),
                                            [&](NodeId c) { return tree.node(c).rank > 0; });
            if (ranked && (ranks.size() != n.children.size() || *ranks.begin() != 1 ||
                           *ranks.rbegin() != static_cast<int>(n.children.size()))) {
                fail("children of node " + std::to_string(id) + " are not ranked 1..n");
            }
        }
    }
    NodeId prev = kRootId;
    for (std::size_t k = 0; k < tree.chosen_path.size(); ++k) {
        const NodeId id = tree.chosen_path[k];
        if (!tree.contains(id)) {
            fail("chosen path references unknown node");
            break;
        }
        const ClipNode& n = tree.node(id);
        if (n.parent_id != prev) {
            fail("chosen path is not a parent-child chain at position " + std::to_string(k + 1));
        }
        if (n.shot_index != static_cast<int>(k + 1)) {
            fail("chosen path position " + std::to_string(k + 1) + " has the wrong shot index");
        }
        if (!n.on_chosen_path) {
            fail("chosen node " + std::to_string(id) + " not flagged onChosenPath");
        }
        prev = id;
    }
    return problems;
}

}  // namespace storyreel
