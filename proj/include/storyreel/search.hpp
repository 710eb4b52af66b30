#pragma once

#include "storyreel/eval.hpp"
#include "storyreel/ports.hpp"
#include "storyreel/story.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace storyreel {

using NodeId = std::int64_t;
inline constexpr NodeId kRootId = 0;

enum class SearchMode {
    /// Expansion, UCT-guided simulation, one-level backpropagation, selection.
    MctsGen,
    /// Baseline: every candidate receives w1 lookahead children (the full
    /// w1 x w1 grid below the terminal node) before selection.
    Exhaustive,
};

std::string to_string(SearchMode mode);
SearchMode search_mode_from_string(const std::string& text);

struct SearchParams {
    int w1 = 3;          // initial candidates per node
    int w2 = 3;          // UCT-guided simulation expansions per iteration
    double alpha = 1.0;  // exploration weight
    SearchMode mode = SearchMode::MctsGen;
    /// After the candidate update, also refresh every chosen-path ancestor
    /// from its children's current scores. Off by default.
    bool recursive_backprop = false;
    /// Upper bound on concurrent generate+review requests within one batch.
    /// Results are committed in request order regardless.
    int max_concurrency = 1;
    RetryPolicy retry;

    void validate() const;
};

void to_json(json& j, const SearchParams& p);
void from_json(const json& j, SearchParams& p);

struct ClipNode {
    NodeId id = kRootId;
    std::optional<NodeId> parent_id;
    int shot_index = 0;
    int slot = 0;  // position among the parent's children
    std::optional<ClipAsset> clip;
    std::optional<Conditioning> conditioning;
    double initial_score = 0.0;
    double current_score = 0.0;
    int rank = 0;  // 0 until the sibling group is ranked
    int child_count = 0;
    bool on_chosen_path = false;
    bool frozen = false;
    std::vector<NodeId> children;
};

struct BudgetLedger {
    std::int64_t generations = 0;
    std::int64_t evaluations = 0;
    /// Generations spent during each completed chosen-path extension.
    std::vector<std::int64_t> per_chosen_node;
    /// Generations of the extension currently in progress.
    std::int64_t pending_frontier = 0;

    friend bool operator==(const BudgetLedger&, const BudgetLedger&) = default;
};

void to_json(json& j, const BudgetLedger& l);
void from_json(const json& j, BudgetLedger& l);

class EmptyPath : public Error {
public:
    EmptyPath() : Error("ledger has no chosen-path extensions") {}
};

/// Total generations divided by chosen-path length.
double generations_per_node(const BudgetLedger& ledger);

struct SearchTree {
    std::map<NodeId, ClipNode> nodes;
    std::vector<NodeId> chosen_path;  // shot 1 first; the virtual root is implicit
    NodeId next_id = 1;

    static SearchTree with_root();

    const ClipNode& node(NodeId id) const;
    ClipNode& node(NodeId id);
    bool contains(NodeId id) const { return nodes.count(id) != 0; }
    /// Last chosen node, or the root before the first selection.
    NodeId terminal() const { return chosen_path.empty() ? kRootId : chosen_path.back(); }
    /// Children of the terminal node: the current candidate set.
    const std::vector<NodeId>& candidates() const { return node(terminal()).children; }
    /// Clip nodes (everything but the root).
    std::size_t clip_count() const { return nodes.empty() ? 0 : nodes.size() - 1; }
    /// Clips of `id` and its ancestors, shot 1 first. Empty for the root.
    std::vector<ClipAsset> lineage(NodeId id) const;
    std::vector<ClipAsset> chosen_clips() const;
};

void to_json(json& j, const ClipNode& n);
void from_json(const json& j, ClipNode& n);

/// Exploitation term 2/(rank+1) plus exploration term alpha*sqrt(2/(childCount+1)).
double uct_score(int rank, int child_count, double alpha);

/// Sets the node's current score to its initial score plus the mean of its
/// children's initial scores (unchanged when it has no children) and returns it.
double backpropagate(SearchTree& tree, NodeId parent_id);

class GeneratorFailure : public Error {
public:
    using Error::Error;
};

class ReviewerFailure : public Error {
public:
    using Error::Error;
};

class InvalidScript : public Error {
public:
    explicit InvalidScript(ValidationReport report);
    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

/// Unrecoverable backend failure. The search state as of the last completed
/// extension was written to `checkpoint()` (when a path was configured).
class SearchAborted : public Error {
public:
    SearchAborted(std::filesystem::path checkpoint, const std::string& cause)
        : Error("search aborted: " + cause), checkpoint_(std::move(checkpoint)) {}

    const std::filesystem::path& checkpoint() const { return checkpoint_; }

private:
    std::filesystem::path checkpoint_;
};

/// Everything needed to continue a search exactly where it stopped. The
/// simulated backends derive all randomness from (seed, node), so the seed
/// and the next node id are the whole RNG state.
struct SearchState {
    SearchParams params;
    std::uint64_t seed = 0;
    SearchTree tree = SearchTree::with_root();
    BudgetLedger ledger;
    std::map<NodeId, EvalReport> reports;
};

/// Persisted tree document (`tree.json`): nodes, edges, scores, ledger.
json tree_to_json(const SearchState& state);
/// Parses a tree document. Schema errors name the offending field.
SearchState tree_from_json(const json& j);

json checkpoint_to_json(const SearchState& state, int pending_shot);
SearchState checkpoint_from_json(const json& j);

/// One search over a fixed script. The four phases are exposed individually
/// so they can be driven and inspected step by step; run() drives them all.
class ClipSearch {
public:
    ClipSearch(const Script& script, const Storyboard& storyboard, SearchParams params, GeneratorPort& generator,
               ReviewerPort& reviewer, std::uint64_t seed, std::string story_text = {});

    /// Continue from a saved state instead of an empty tree.
    void restore(SearchState state);

    /// Next shot to be added to the chosen path (N+1 when finished).
    int pending_shot() const { return static_cast<int>(state_.tree.chosen_path.size()) + 1; }
    bool finished() const { return pending_shot() > script_.clip_count(); }

    /// Tops the terminal node up to w1 children for the pending shot (reusing
    /// any already there) and ranks the whole group by initial score.
    std::vector<NodeId> expand();

    /// Generates one lookahead child under the candidate with the highest UCT
    /// score (ties to the lower id). Returns the new child, or nothing when
    /// the pending shot is the last one.
    std::optional<NodeId> simulate_step();

    /// Exhaustive-mode lookahead: tops every candidate up to w1 children.
    void exhaustive_lookahead();

    /// Backpropagates into every candidate; returns their updated scores.
    std::vector<double> backpropagate_candidates();

    /// Appends the best candidate by current score (ties to the lower id) to
    /// the chosen path, freezes its siblings and tops its children up to w1
    /// when a following shot exists.
    NodeId select_next();

    /// expand, simulate (or exhaustive lookahead), backpropagate, select.
    NodeId run_iteration();

    const SearchState& state() const { return state_; }
    const SearchTree& tree() const { return state_.tree; }
    const BudgetLedger& ledger() const { return state_.ledger; }
    const Script& script() const { return script_; }

private:
    struct Pending {
        NodeId id;
        NodeId parent;
        int slot;
        int shot;
        Conditioning conditioning;
    };

    std::vector<NodeId> spawn(NodeId parent, int count);
    std::pair<ClipAsset, EvalReport> produce(const Pending& p);
    void rank_group(NodeId parent);
    void refresh_ancestors();

    const Script& script_;
    const Storyboard& storyboard_;
    GeneratorPort& generator_;
    ReviewerPort& reviewer_;
    std::string story_text_;
    SearchState state_;
};

struct SearchOptions {
    std::string story_text;
    /// Where to write `search.ckpt.json`-style checkpoints after every
    /// extension and on abort. Empty disables checkpointing.
    std::filesystem::path checkpoint;
    /// Resume from this state instead of starting fresh.
    std::optional<SearchState> resume;
    /// Called after each completed extension with the chosen node.
    std::function<void(const ClipSearch&, NodeId)> on_extension;
};

/// Runs the search to completion. Throws InvalidScript when the script does
/// not validate against the storyboard, SearchAborted on unrecoverable
/// backend failure.
SearchState run_search(const Script& script, const Storyboard& storyboard, const SearchParams& params,
                       GeneratorPort& generator, ReviewerPort& reviewer, std::uint64_t seed,
                       const SearchOptions& options = {});

/// Generator requests that reproduce every clip node of `state`, in id order.
std::vector<GeneratorRequest> replay_requests(const SearchState& state, const Script& script);

/// Structural invariant violations of a finished or in-progress tree; empty
/// when the tree is well formed.
std::vector<std::string> check_tree(const SearchTree& tree, const Script& script);

}  // namespace storyreel
