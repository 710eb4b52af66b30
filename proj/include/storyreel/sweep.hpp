#pragma once

#include "storyreel/search.hpp"
#include "storyreel/sim_backend.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace storyreel {

struct GridCell {
    int w1 = 3;
    int w2 = 3;
    double alpha = 1.0;
    SearchMode mode = SearchMode::MctsGen;
};

/// Outcome of one simulated search.
struct TrialResult {
    double mean_latent = 0.0;  // mean hidden quality over the chosen path
    double gens_per_node = 0.0;
    std::int64_t generations = 0;
};

/// Builds the seed's random story, searches it with sim backends and reads
/// back the chosen path's hidden quality. Story and backend noise depend only
/// on `seed`, so every cell sees the same stories and candidate draws.
TrialResult run_sim_trial(const GridCell& cell, int shots, std::uint64_t seed, const SimWorldConfig& world);

struct CellSummary {
    GridCell cell;
    int seeds = 0;
    double mean_quality = 0.0;
    double se_quality = 0.0;
    double mean_gens_per_node = 0.0;
    double se_gens_per_node = 0.0;
    std::vector<double> qualities;  // per seed, in seed order
};

struct SweepConfig {
    std::vector<GridCell> grid;
    int seeds = 50;
    std::uint64_t first_seed = 1;
    int shots = 20;
    SimWorldConfig world;
    int jobs = 1;
    /// Replaces the simulated trial (used for remote sweeps).
    std::function<TrialResult(const GridCell&, int shots, std::uint64_t seed)> trial;
};

/// Mean and standard error of the mean (sample standard deviation / sqrt(n)).
std::pair<double, double> mean_and_se(const std::vector<double>& xs);

/// Cells are reported in grid order whatever `jobs` is.
std::vector<CellSummary> run_sweep(const SweepConfig& config);

/// Parses "1x0,3x3,3x5" or "1x0@0.5" style grids; `all` expands w1 x w2 lists.
std::vector<GridCell> parse_grid(const std::string& text, double default_alpha);
std::vector<GridCell> product_grid(const std::vector<int>& w1s, const std::vector<int>& w2s, double alpha);

std::string sweep_csv(const std::vector<CellSummary>& cells);
/// Mean quality against w2, one polyline per w1, with one-SE error bars.
std::string sweep_svg(const std::vector<CellSummary>& cells);

}  // namespace storyreel
