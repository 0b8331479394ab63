#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "paodp/dataset.hpp"
#include "paodp/diffusion.hpp"
#include "paodp/envs.hpp"
#include "paodp/rng.hpp"
#include "paodp/trainer.hpp"

namespace paodp::eval {

/// Maps a batch of raw observations (d_s x n) to actions (d_a x n).
using BatchPolicy = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& raw_obs, Rng& rng)>;

/// Normalizes observations with the dataset statistics and samples from
/// a snapshot of `policy`.
BatchPolicy diffusion_actor(const diffusion::DiffusionPolicy<float>& policy, const OfflineDataset& ds);
BatchPolicy constant_actor(Eigen::VectorXd action);

/// Episodes are simulated in lockstep chunks of this size, each chunk with
/// its own stream, so results do not depend on the worker count.
inline constexpr int kRolloutChunk = 16;

/// Undiscounted return of each episode.
std::vector<double> episode_returns(
    const BatchPolicy& policy, const envs::Environment& env, int episodes, std::uint64_t seed, int threads = 0);

/// Mean undiscounted return over `episodes` episodes.
double rollout_score(
    const BatchPolicy& policy, const envs::Environment& env, int episodes, std::uint64_t seed, int threads = 0);

/// 100 (raw - random) / (expert - random). ConfigError unless expert > random.
double normalize_score(double raw, double ref_random, double ref_expert);

inline constexpr int kRatWindow = 10;

/// Mean of the last min(10, n) scores.
double rat(const std::vector<double>& scores);
/// Best score.
double oms(const std::vector<double>& scores);

struct EvalReport {
    std::vector<int> epochs;
    std::vector<double> raw;
    std::vector<double> normalized;
    double rat = 0.0;
    double oms = 0.0;
};

EvalReport make_report(std::vector<int> epochs, std::vector<double> raw, std::vector<double> normalized);

struct SweepRow {
    std::string run_id;
    std::string axis;
    std::string value;
    std::uint64_t seed = 0;
    int checkpoint = 0;  // epoch
    double raw = 0.0;
    double normalized = 0.0;
};

struct SweepSummary {
    std::string axis;
    std::string value;
    int seeds = 0;
    double rat_mean = 0.0;
    double rat_std = 0.0;  // sample std across seeds (0 for one seed)
    double oms_mean = 0.0;
    double oms_std = 0.0;
};

struct SweepRun {
    std::string run_id;
    std::string value;
    std::uint64_t seed = 0;
    EvalReport report;
};

struct SweepResult {
    std::vector<SweepRun> runs;
    std::vector<SweepRow> rows;
    std::vector<SweepSummary> summary;
};

/// Trains and evaluates every (value, seed) pair. `axis` is any config key
/// (typically strategy, lambda, xi or method). With a non-empty `out`, each
/// run gets its own directory and results.csv / summary.csv are written.
SweepResult ablation_sweep(
    const trainer::TrainConfig& base, const OfflineDataset& ds, const std::string& axis,
    const std::vector<std::string>& values, const std::vector<std::uint64_t>& seeds,
    const std::filesystem::path& out = {}, bool quiet = true);

void write_results_csv(const SweepResult& result, const std::filesystem::path& path);
void write_summary_csv(const SweepResult& result, const std::filesystem::path& path);

double mean(const std::vector<double>& v);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_std(const std::vector<double>& v);

}  // namespace paodp::eval
