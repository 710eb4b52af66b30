#include "storyreel/cli.hpp"

#include "storyreel/sweep.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

namespace storyreel {

// Config ----------------------------------------------------------------------------

std::string RunConfig::backend(const std::string& slot) const {
    auto it = backends.find(slot);
    return it == backends.end() ? "sim" : it->second;
}

bool RunConfig::any_remote() const {
    for (const char* slot : kPortSlots) {
        if (backend(slot) != "sim") {
            return true;
        }
    }
    return false;
}

RunConfig load_run_config(const json& j, const std::filesystem::path& base_dir) {
    RunConfig c;
    if (j.contains("search")) {
        c.search = get_field<SearchParams>(j, "search");
    }
    c.search.validate();
    c.seed = get_field_or<std::uint64_t>(j, "seed", c.seed);
    if (j.contains("simWorld")) {
        c.world = get_field<SimWorldConfig>(j, "simWorld");
        try {
            c.world.validate();
        } catch (const Error& e) {
            throw SchemaError("simWorld", e.what());
        }
    }
    if (j.contains("weights")) {
        const json& w = j.at("weights");
        if (w.is_string()) {
            c.weights = load_weights(base_dir / w.get<std::string>());
        } else {
            c.weights = get_field<WeightConfig>(j, "weights");
        }
        try {
            c.weights.validate();
        } catch (const Error& e) {
            throw SchemaError("weights", e.what());
        }
    }
    if (j.contains("post")) {
        c.post = get_field<PostConfig>(j, "post");
    }
    if (j.contains("voices")) {
        c.post.voices = get_field<VoiceTable>(j, "voices");
    }
    c.backends = get_field_or<std::map<std::string, std::string>>(j, "backends", {});
    for (const auto& [slot, value] : c.backends) {
        const bool known =
            std::find_if(std::begin(kPortSlots), std::end(kPortSlots), [&](const char* s) { return slot == s; }) !=
            std::end(kPortSlots);
        if (!known) {
            throw SchemaError("backends." + slot, "unknown port slot");
        }
        if (value != "sim" && value.rfind("remote:", 0) != 0) {
            throw SchemaError("backends." + slot, "expected 'sim' or 'remote:<endpoint>'");
        }
    }
    if (j.contains("backendsFile")) {
        c.backends_file = base_dir / get_field<std::string>(j, "backendsFile");
    }
    return c;
}

// Backends --------------------------------------------------------------------------

BackendSet::BackendSet(const RunConfig& config, const std::filesystem::path& project_dir) {
    world_ = std::make_unique<SimWorld>(config.world);
    sim_generator_ = std::make_unique<SimGenerator>(*world_);
    store_ = std::make_unique<AssetStore>(project_dir);

    std::optional<BackendsConfig> remote;
    std::shared_ptr<AuditLog> audit;
    auto client_for = [&](const std::string& slot) -> std::optional<ServiceClient> {
        const std::string binding = config.backend(slot);
        if (binding == "sim") {
            return std::nullopt;
        }
        if (!remote) {
            if (config.backends_file.empty()) {
                throw SchemaError("backendsFile", "required when a port is bound to a remote endpoint");
            }
            remote = load_backends(config.backends_file);
            if (!remote->audit_log.empty()) {
                const auto path = remote->audit_log.is_absolute()
                                      ? remote->audit_log
                                      : config.backends_file.parent_path() / remote->audit_log;
                audit = std::make_shared<AuditLog>(path);
            }
        }
        ServiceClient client(remote->endpoint(binding.substr(7)), audit);
        clients_.push_back(client);
        return client;
    };

    if (auto c = client_for("llm")) {
        llm_ = std::make_unique<RemoteCompletion>(*c);
    } else {
        llm_ = std::make_unique<SimCompletion>();
    }
    if (auto c = client_for("images")) {
        images_ = std::make_unique<RemoteImage>(*c);
    } else {
        images_ = std::make_unique<SimImage>();
    }
    if (auto c = client_for("keyframes")) {
        keyframes_ = std::make_unique<RemoteImage>(*c);
    } else {
        keyframes_ = std::make_unique<SimImage>();
    }
    if (auto c = client_for("generator")) {
        remote_generator_ = std::make_unique<RemoteGenerator>(*c, store_.get());
    }
    if (auto c = client_for("scorer")) {
        scorer_ = std::make_unique<RemoteScorer>(*c);
    } else {
        scorer_ = std::make_unique<SimScorer>(*world_, config.seed);
    }
    reviewer_ = std::make_unique<Reviewer>(*scorer_, config.weights);
    if (auto c = client_for("tts")) {
        tts_ = std::make_unique<RemoteTts>(*c);
    } else {
        tts_ = std::make_unique<SimTts>(config.post.chars_per_second);
    }
}

void BackendSet::preflight() const {
    for (const auto& c : clients_) {
        c.health();
    }
}

Backends BackendSet::ports() {
    Backends b;
    b.llm = llm_.get();
    b.bank_images = images_.get();
    b.keyframe_images = keyframes_.get();
    b.generator = remote_generator_ ? remote_generator_.get() : static_cast<GeneratorPort*>(sim_generator_.get());
    b.reviewer = reviewer_.get();
    b.tts = tts_.get();
    if (!remote_generator_) {
        // The simulated world lives in memory; rebuild it from the saved tree.
        SimGenerator* gen = sim_generator_.get();
        b.on_resume = [gen](const SearchState& state, const Script& script) {
            for (const auto& request : replay_requests(state, script)) {
                gen->generate(request);
            }
        };
    }
    return b;
}

// Inspect ---------------------------------------------------------------------------

json inspect_project(const std::filesystem::path& project_dir) {
    const ProjectPaths paths{project_dir};
    if (!std::filesystem::exists(paths.story())) {
        throw MissingProject("no project at " + project_dir.string() + " (story.txt missing)");
    }
    PipelineState state;
    if (std::filesystem::exists(paths.state())) {
        state = read_json_file(paths.state()).get<PipelineState>();
    }
    json summary{{"stage", to_string(state.stage)}};
    if (std::filesystem::exists(paths.script())) {
        const Script script = read_json_file(paths.script()).get<Script>();
        summary["shots"] = script.clip_count();
        summary["cuts"] = script.cuts.indices;
    }
    if (state.stage >= Stage::Shot) {
        const SearchState search = tree_from_json(read_json_file(paths.tree()));
        json path = json::array();
        for (NodeId id : search.tree.chosen_path) {
            const ClipNode& n = search.tree.node(id);
            path.push_back(json{{"shotIndex", n.shot_index},
                                {"nodeId", n.id},
                                {"clipId", n.clip->id},
                                {"initialScore", n.initial_score},
                                {"currentScore", n.current_score},
                                {"rank", n.rank},
                                {"childCount", n.child_count},
                                {"conditioning", to_string(n.conditioning->kind)}});
        }
        summary["chosenPath"] = path;
        summary["treeSize"] = search.tree.clip_count();
        summary["params"] = search.params;
        summary["ledger"] = json{{"generations", search.ledger.generations},
                                 {"evaluations", search.ledger.evaluations},
                                 {"generationsPerNode", generations_per_node(search.ledger)},
                                 {"perChosenNode", search.ledger.per_chosen_node}};
        if (std::filesystem::exists(paths.final_report())) {
            const json report = read_json_file(paths.final_report());
            json rows = json::array();
            for (const auto& shot : get_array<json>(report, "shots")) {
                const json r = get_field<json>(shot, "report");
                rows.push_back(json{{"shotIndex", shot.at("shotIndex")},
                                    {"domainScores", get_field<json>(r, "domainScores")},
                                    {"total", get_field<double>(r, "total")}});
            }
            summary["finalReview"] = json{{"shots", rows},
                                          {"meanTotal", get_field<double>(report, "meanTotal")},
                                          {"domainMeans", get_field<json>(report, "domainMeans")}};
        }
    }
    if (state.stage >= Stage::Assembled) {
        const EditDecisionList edl = read_json_file(paths.edl()).get<EditDecisionList>();
        summary["edl"] = json{{"items", edl.items.size()}, {"totalMs", edl.total_ms()}};
    }
    return summary;
}

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

std::string format_inspection(const json& s) {
    std::ostringstream out;
    out << "stage: " << s.at("stage").get<std::string>() << "\n";
    if (s.contains("shots")) {
        out << "shots: " << s.at("shots") << ", cuts at " << s.at("cuts").dump() << "\n";
    }
    if (s.contains("chosenPath")) {
        out << "\nchosen path (" << s.at("treeSize") << " clips in tree)\n";
        out << "shot   node  clip     initial   current  rank  children  conditioning\n";
        for (const auto& r : s.at("chosenPath")) {
            char line[160];
            std::snprintf(line, sizeof line, "%4d  %5lld  %-6s  %8.3f  %8.3f  %4d  %8d  %s\n",
                          r.at("shotIndex").get<int>(), r.at("nodeId").get<long long>(),
                          r.at("clipId").get<std::string>().c_str(), r.at("initialScore").get<double>(),
                          r.at("currentScore").get<double>(), r.at("rank").get<int>(), r.at("childCount").get<int>(),
                          r.at("conditioning").get<std::string>().c_str());
            out << line;
        }
        const json& l = s.at("ledger");
        out << "\nledger: " << l.at("generations") << " generations, " << l.at("evaluations") << " evaluations, "
            << fmt("%.3f", l.at("generationsPerNode").get<double>()) << " per chosen node\n";
        out << "per extension:";
        for (const auto& g : l.at("perChosenNode")) {
            out << " " << g;
        }
        out << "\n";
    }
    if (s.contains("finalReview")) {
        const json& f = s.at("finalReview");
        out << "\nfinal review\nshot";
        for (Domain d : kAllDomains) {
            char h[16];
            std::snprintf(h, sizeof h, "  %7s", std::string(domain_abbrev(d)).c_str());
            out << h;
        }
        out << "    total\n";
        for (const auto& r : f.at("shots")) {
            char h[16];
            std::snprintf(h, sizeof h, "%4d", r.at("shotIndex").get<int>());
            out << h;
            for (Domain d : kAllDomains) {
                out << fmt("  %7.2f", r.at("domainScores").at(std::string(domain_name(d))).get<double>());
            }
            out << fmt("  %7.2f", r.at("total").get<double>()) << "\n";
        }
        out << "mean";
        for (Domain d : kAllDomains) {
            out << fmt("  %7.2f", f.at("domainMeans").at(std::string(domain_name(d))).get<double>());
        }
        out << fmt("  %7.2f", f.at("meanTotal").get<double>()) << "\n";
    }
    if (s.contains("edl")) {
        out << "\nedit decision list: " << s.at("edl").at("items") << " items, " << s.at("edl").at("totalMs")
            << " ms\n";
    }
    return out.str();
}

// Commands --------------------------------------------------------------------------

namespace {

struct Globals {
    std::string project;
    std::optional<std::uint64_t> seed;
    std::string config;
    bool as_json = false;
};

RunConfig resolve_config(const Globals& g) {
    RunConfig c;
    if (!g.config.empty()) {
        const std::filesystem::path path(g.config);
        c = load_run_config(read_json_file(path), path.parent_path());
    }
    if (g.seed) {
        c.seed = *g.seed;
    }
    return c;
}

std::filesystem::path require_project(const Globals& g) {
    if (g.project.empty()) {
        throw MissingProject("--project is required");
    }
    return g.project;
}

int run_stage(const Globals& g, const std::string& story_file, Stage target, std::ostream& out) {
    const auto dir = require_project(g);
    const RunConfig config = resolve_config(g);
    if (!story_file.empty()) {
        Pipeline::init(dir, read_text_file(story_file));
    }
    BackendSet backends(config, dir);
    backends.preflight();
    PipelineConfig pc;
    pc.search = config.search;
    pc.seed = config.seed;
    pc.post = config.post;
    pc.retry = config.search.retry;
    Pipeline pipeline(dir, pc, backends.ports());
    const Stage before = pipeline.state().stage;
    pipeline.run_until(target);
    const Stage after = pipeline.state().stage;
    if (g.as_json) {
        out << json{{"project", dir.string()}, {"from", to_string(before)}, {"stage", to_string(after)}}.dump()
            << "\n";
    } else if (before == after) {
        out << "nothing to do: " << dir.string() << " is already at " << to_string(after) << "\n";
    } else {
        out << dir.string() << ": " << to_string(before) << " -> " << to_string(after) << "\n";
    }
    return exit_code::kOk;
}

std::vector<int> parse_ints(const std::string& text) {
    std::vector<int> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        out.push_back(std::stoi(item));
    }
    return out;
}

struct SweepArgs {
    std::string grid;
    std::string w1s = "1,2,3";
    std::string w2s = "0,1,3,5";
    double alpha = 1.0;
    int seeds = 50;
    int shots = 20;
    int jobs = 1;
    std::string out_dir = "sweep";
    bool allow_remote = false;
    bool yes = false;
};

int run_sweep_command(const Globals& g, const SweepArgs& a, std::ostream& out, std::ostream& err, std::istream& in) {
    const RunConfig config = resolve_config(g);
    SweepConfig sc;
    sc.grid = a.grid.empty() ? product_grid(parse_ints(a.w1s), parse_ints(a.w2s), a.alpha) : parse_grid(a.grid, a.alpha);
    for (const auto& cell : sc.grid) {
        SearchParams p;
        p.w1 = cell.w1;
        p.w2 = cell.w2;
        p.alpha = cell.alpha;
        p.validate();
    }
    sc.seeds = a.seeds;
    sc.shots = a.shots;
    sc.jobs = a.jobs;
    sc.world = config.world;
    sc.first_seed = g.seed.value_or(1);
    if (sc.seeds < 1 || sc.shots < 1) {
        throw Error("--seeds and --shots must be positive");
    }

    std::unique_ptr<BackendSet> remote;
    if (config.backend("generator") != "sim" || config.backend("scorer") != "sim") {
        if (!a.allow_remote) {
            err << "sweep refuses remote backends (each cell issues many paid generations); pass --allow-remote\n";
            return exit_code::kRefused;
        }
        std::int64_t estimate = 0;
        for (const auto& cell : sc.grid) {
            estimate += static_cast<std::int64_t>(sc.seeds) * sc.shots * (cell.w1 + cell.w2);
        }
        err << "estimated cost: up to " << estimate << " generate and " << estimate << " score requests\n";
        if (!a.yes) {
            err << "continue? [y/N] ";
            std::string answer;
            std::getline(in, answer);
            if (answer != "y" && answer != "yes") {
                err << "aborted\n";
                return exit_code::kRefused;
            }
        }
        const auto dir = std::filesystem::path(a.out_dir);
        std::filesystem::create_directories(dir);
        remote = std::make_unique<BackendSet>(config, dir);
        remote->preflight();
        Backends ports = remote->ports();
        sc.jobs = 1;
        sc.trial = [ports](const GridCell& cell, int shots, std::uint64_t seed) {
            // Without hidden quality, the reviewer's mean total is the outcome.
            const SimStory story = make_sim_story(shots, seed);
            SearchParams p;
            p.w1 = cell.w1;
            p.w2 = cell.w2;
            p.alpha = cell.alpha;
            const SearchState s = run_search(story.script, story.storyboard, p, *ports.generator, *ports.reviewer, seed);
            TrialResult r;
            for (NodeId id : s.tree.chosen_path) {
                r.mean_latent += s.reports.at(id).total;
            }
            r.mean_latent /= static_cast<double>(s.tree.chosen_path.size());
            r.gens_per_node = generations_per_node(s.ledger);
            r.generations = s.ledger.generations;
            return r;
        };
    }

    const auto cells = run_sweep(sc);
    const std::filesystem::path dir(a.out_dir);
    std::filesystem::create_directories(dir);
    write_text_file(dir / "sweep.csv", sweep_csv(cells));
    write_text_file(dir / "sweep.svg", sweep_svg(cells));
    if (g.as_json) {
        json rows = json::array();
        for (const auto& c : cells) {
            rows.push_back(json{{"w1", c.cell.w1},
                                {"w2", c.cell.w2},
                                {"alpha", c.cell.alpha},
                                {"seeds", c.seeds},
                                {"meanQuality", c.mean_quality},
                                {"seQuality", c.se_quality},
                                {"meanGenerationsPerNode", c.mean_gens_per_node}});
        }
        out << json{{"cells", rows}, {"csv", (dir / "sweep.csv").string()}, {"plot", (dir / "sweep.svg").string()}}
                   .dump()
            << "\n";
    } else {
        out << sweep_csv(cells) << "wrote " << (dir / "sweep.csv").string() << " and " << (dir / "sweep.svg").string()
            << "\n";
    }
    return exit_code::kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err, std::istream& in) {
    CLI::App app{"Story-to-animation orchestration with tree-searched clip generation", "storyreel"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed_value = 0;
    app.add_option("--project", g.project, "Project directory");
    auto* seed_opt = app.add_option("--seed", seed_value, "Seed overriding the config");
    app.add_option("--config", g.config, "Run configuration (JSON)");
    app.add_flag("--json", g.as_json, "Machine-readable output");

    std::string story_file;
    auto* run = app.add_subcommand("run", "Plan, storyboard, shoot and assemble");
    run->add_option("--story", story_file, "Story text file (required for a new project)");
    auto* plan_cmd = app.add_subcommand("plan", "Write script.json");
    plan_cmd->add_option("--story", story_file, "Story text file (required for a new project)");
    auto* board_cmd = app.add_subcommand("storyboard", "Build the visual bank and keyframes");
    auto* shoot_cmd = app.add_subcommand("shoot", "Search clips for every shot");
    auto* assemble_cmd = app.add_subcommand("assemble", "Voiceover, sync check and edit decision list");
    for (auto* stage_cmd : {board_cmd, shoot_cmd, assemble_cmd}) {
        stage_cmd->add_option("--story", story_file, "Story text file (required for a new project)");
    }
    auto* inspect_cmd = app.add_subcommand("inspect", "Summarise a project");

    SweepArgs sweep_args;
    auto* sweep_cmd = app.add_subcommand("sweep", "Grid of (w1, w2) settings on simulated stories");
    sweep_cmd->add_option("--grid", sweep_args.grid, "Cells as w1xw2[@alpha], comma separated");
    sweep_cmd->add_option("--w1", sweep_args.w1s, "w1 values when --grid is absent")->capture_default_str();
    sweep_cmd->add_option("--w2", sweep_args.w2s, "w2 values when --grid is absent")->capture_default_str();
    sweep_cmd->add_option("--alpha", sweep_args.alpha, "Exploration weight")->capture_default_str();
    sweep_cmd->add_option("--seeds", sweep_args.seeds, "Seeds per cell")->capture_default_str();
    sweep_cmd->add_option("--shots", sweep_args.shots, "Shots per story")->capture_default_str();
    sweep_cmd->add_option("--jobs", sweep_args.jobs, "Cells run concurrently")->capture_default_str();
    sweep_cmd->add_option("--out", sweep_args.out_dir, "Output directory")->capture_default_str();
    sweep_cmd->add_flag("--allow-remote", sweep_args.allow_remote, "Permit remote generator/scorer");
    sweep_cmd->add_flag("--yes", sweep_args.yes, "Skip the cost prompt");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? exit_code::kOk : exit_code::kUsage;
    }
    if (*seed_opt) {
        g.seed = seed_value;
    }

    std::string stage = "setup";
    try {
        if (run->parsed()) {
            stage = "run";
            return run_stage(g, story_file, Stage::Assembled, out);
        }
        if (plan_cmd->parsed()) {
            stage = "plan";
            return run_stage(g, story_file, Stage::Planned, out);
        }
        if (board_cmd->parsed()) {
            stage = "storyboard";
            return run_stage(g, story_file, Stage::Storyboarded, out);
        }
        if (shoot_cmd->parsed()) {
            stage = "shoot";
            return run_stage(g, story_file, Stage::Shot, out);
        }
        if (assemble_cmd->parsed()) {
            stage = "assemble";
            return run_stage(g, story_file, Stage::Assembled, out);
        }
        if (inspect_cmd->parsed()) {
            stage = "inspect";
            const json summary = inspect_project(require_project(g));
            out << (g.as_json ? summary.dump(2) + "\n" : format_inspection(summary));
            return exit_code::kOk;
        }
        if (sweep_cmd->parsed()) {
            stage = "sweep";
            return run_sweep_command(g, sweep_args, out, err, in);
        }
    } catch (const BackendUnreachable& e) {
        err << "error [" << stage << "]: backend unreachable: " << e.what() << "\n";
        return exit_code::kBackendUnreachable;
    } catch (const SchemaError& e) {
        err << "error [" << stage << "]: " << e.what() << "\n";
        return exit_code::kBadInput;
    } catch (const MissingProject& e) {
        err << "error [" << stage << "]: " << e.what() << "\n";
        return exit_code::kBadInput;
    } catch (const Error& e) {
        err << "error [" << stage << "]: " << e.what() << "\n";
        return exit_code::kFailure;
    } catch (const std::exception& e) {
        err << "error [" << stage << "]: " << e.what() << "\n";
        return exit_code::kFailure;
    }
    return exit_code::kUsage;
}

}  // namespace storyreel
