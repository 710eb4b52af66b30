#include "storyreel/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace storyreel {

TrialResult run_sim_trial(const GridCell& cell, int shots, std::uint64_t seed, const SimWorldConfig& world_config) {
    const SimStory story = make_sim_story(shots, seed);
    SimWorld world(world_config);
    SimGenerator generator(world);
    SimScorer scorer(world, seed);
    Reviewer reviewer(scorer, WeightConfig::uniform());
    SearchParams params;
    params.w1 = cell.w1;
    params.w2 = cell.w2;
    params.alpha = cell.alpha;
    params.mode = cell.mode;
    params.retry.attempts = 1;
    const SearchState state = run_search(story.script, story.storyboard, params, generator, reviewer, seed);

    TrialResult r;
    double sum = 0.0;
    for (const auto& clip : state.tree.chosen_clips()) {
        sum += world.latent(clip);
    }
    r.mean_latent = sum / static_cast<double>(state.tree.chosen_path.size());
    r.gens_per_node = generations_per_node(state.ledger);
    r.generations = state.ledger.generations;
    return r;
}

std::pair<double, double> mean_and_se(const std::vector<double>& xs) {
    if (xs.empty()) {
        return {0.0, 0.0};
    }
    const double n = static_cast<double>(xs.size());
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    if (xs.size() < 2) {
        return {mean, 0.0};
    }
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - mean) * (x - mean);
    }
    return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

std::vector<CellSummary> run_sweep(const SweepConfig& config) {
    auto run_cell = [&config](const GridCell& cell) {
        CellSummary s;
        s.cell = cell;
        s.seeds = config.seeds;
        std::vector<double> gens;
        for (int i = 0; i < config.seeds; ++i) {
            const std::uint64_t seed = config.first_seed + static_cast<std::uint64_t>(i);
            const TrialResult r = config.trial ? config.trial(cell, config.shots, seed)
                                               : run_sim_trial(cell, config.shots, seed, config.world);
            s.qualities.push_back(r.mean_latent);
            gens.push_back(r.gens_per_node);
        }
        std::tie(s.mean_quality, s.se_quality) = mean_and_se(s.qualities);
        std::tie(s.mean_gens_per_node, s.se_gens_per_node) = mean_and_se(gens);
        return s;
    };

    std::vector<CellSummary> out;
    const std::size_t width = static_cast<std::size_t>(std::max(1, config.jobs));
    for (std::size_t start = 0; start < config.grid.size(); start += width) {
        const std::size_t end = std::min(config.grid.size(), start + width);
        if (width == 1) {
            out.push_back(run_cell(config.grid[start]));
            continue;
        }
        std::vector<std::future<CellSummary>> inflight;
        for (std::size_t i = start; i < end; ++i) {
            inflight.push_back(std::async(std::launch::async, run_cell, config.grid[i]));
        }
        for (auto& f : inflight) {
            out.push_back(f.get());
        }
    }
    return out;
}

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, sep)) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

std::vector<GridCell> parse_grid(const std::string& text, double default_alpha) {
    std::vector<GridCell> grid;
    for (const auto& item : split(text, ',')) {
        GridCell cell;
        cell.alpha = default_alpha;
        std::string body = item;
        if (auto at = body.find('@'); at != std::string::npos) {
            cell.alpha = std::stod(body.substr(at + 1));
            body = body.substr(0, at);
        }
        const auto x = body.find('x');
        if (x == std::string::npos) {
            throw Error("grid cell '" + item + "' is not of the form <w1>x<w2>[@alpha]");
        }
        try {
            cell.w1 = std::stoi(body.substr(0, x));
            cell.w2 = std::stoi(body.substr(x + 1));
        } catch (const std::exception&) {
            throw Error("grid cell '" + item + "' is not of the form <w1>x<w2>[@alpha]");
        }
        grid.push_back(cell);
    }
    if (grid.empty()) {
        throw Error("empty sweep grid");
    }
    return grid;
}

std::vector<GridCell> product_grid(const std::vector<int>& w1s, const std::vector<int>& w2s, double alpha) {
    std::vector<GridCell> grid;
    for (int w1 : w1s) {
        for (int w2 : w2s) {
            grid.push_back(GridCell{w1, w2, alpha, SearchMode::MctsGen});
        }
    }
    return grid;
}

std::string sweep_csv(const std::vector<CellSummary>& cells) {
    std::ostringstream out;
    out << "w1,w2,alpha,mode,seeds,mean_quality,se_quality,mean_gens_per_node,se_gens_per_node\n";
    for (const auto& c : cells) {
        out << c.cell.w1 << "," << c.cell.w2 << "," << fixed(c.cell.alpha, 3) << "," << to_string(c.cell.mode) << ","
            << c.seeds << "," << fixed(c.mean_quality, 6) << "," << fixed(c.se_quality, 6) << ","
            << fixed(c.mean_gens_per_node, 6) << "," << fixed(c.se_gens_per_node, 6) << "\n";
    }
    return out.str();
}

std::string sweep_svg(const std::vector<CellSummary>& cells) {
    constexpr double W = 640;
    constexpr double H = 400;
    constexpr double L = 60;
    constexpr double R = 140;
    constexpr double T = 30;
    constexpr double B = 50;
    static const char* kColours[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};

    double lo = 100.0;
    double hi = 0.0;
    int max_w2 = 1;
    std::map<int, std::vector<const CellSummary*>> by_w1;
    for (const auto& c : cells) {
        lo = std::min(lo, c.mean_quality - c.se_quality);
        hi = std::max(hi, c.mean_quality + c.se_quality);
        max_w2 = std::max(max_w2, c.cell.w2);
        by_w1[c.cell.w1].push_back(&c);
    }
    if (cells.empty()) {
        lo = 0.0;
        hi = 100.0;
    }
    lo = std::floor(lo) - 1.0;
    hi = std::ceil(hi) + 1.0;
    auto x_of = [&](int w2) { return L + (W - L - R) * static_cast<double>(w2) / static_cast<double>(max_w2); };
    auto y_of = [&](double q) { return T + (H - T - B) * (hi - q) / (hi - lo); };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
        << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int w2 = 0; w2 <= max_w2; ++w2) {
        out << "<text x=\"" << fixed(x_of(w2), 1) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << w2
            << "</text>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        const double q = lo + (hi - lo) * i / 4.0;
        out << "<text x=\"" << L - 8 << "\" y=\"" << fixed(y_of(q) + 4, 1) << "\" text-anchor=\"end\">" << fixed(q, 1)
            << "</text>\n";
    }
    out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">w2</text>\n";
    out << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (T + H - B) / 2
        << ")\" text-anchor=\"middle\">mean chosen-path quality</text>\n";
    std::size_t colour = 0;
    for (auto& [w1, group] : by_w1) {
        std::sort(group.begin(), group.end(),
                  [](const CellSummary* a, const CellSummary* b) { return a->cell.w2 < b->cell.w2; });
        const char* c = kColours[colour++ % std::size(kColours)];
        out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < group.size(); ++i) {
            out << (i == 0 ? "" : " ") << fixed(x_of(group[i]->cell.w2), 1) << ","
                << fixed(y_of(group[i]->mean_quality), 1);
        }
        out << "\"/>\n";
        for (const auto* g : group) {
            const double x = x_of(g->cell.w2);
            out << "<line x1=\"" << fixed(x, 1) << "\" y1=\"" << fixed(y_of(g->mean_quality - g->se_quality), 1)
                << "\" x2=\"" << fixed(x, 1) << "\" y2=\"" << fixed(y_of(g->mean_quality + g->se_quality), 1)
                << "\" stroke=\"" << c << "\"/>\n";
            out << "<circle cx=\"" << fixed(x, 1) << "\" cy=\"" << fixed(y_of(g->mean_quality), 1)
                << "\" r=\"3\" fill=\"" << c << "\"/>\n";
        }
        const double ly = T + 20.0 * static_cast<double>(colour);
        out << "<line x1=\"" << W - R + 15 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 35 << "\" y2=\"" << ly
            << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << W - R + 40 << "\" y=\"" << ly + 4 << "\">w1 = " << w1 << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace storyreel
