#include "paodp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace paodp::eval {

BatchPolicy diffusion_actor(const diffusion::DiffusionPolicy<float>& policy, const OfflineDataset& ds)
{
    const Eigen::VectorXd mean = ds.normalized ? ds.state_mean : Eigen::VectorXd::Zero(ds.state_dim());
    const Eigen::VectorXd std = ds.normalized ? ds.state_std : Eigen::VectorXd::Ones(ds.state_dim());
    return [policy, mean, std](const Eigen::MatrixXd& raw, Rng& rng) -> Eigen::MatrixXd {
        Eigen::MatrixXd z = raw.colwise() - mean;
        z.array().colwise() /= std.array();
        const nn::Matrix<float> states = z.cast<float>();
        return diffusion::sample_actions(policy, states, rng).cast<double>();
    };
}

BatchPolicy constant_actor(Eigen::VectorXd action)
{
    return [action](const Eigen::MatrixXd& raw, Rng&) -> Eigen::MatrixXd { return action.replicate(1, raw.cols()); };
}

namespace {

void run_chunk(
    const BatchPolicy& policy, const envs::Environment& env, int first, int count, std::uint64_t seed,
    std::vector<double>& returns)
{
    Rng rng = Rng::stream(seed, "rollout/" + std::to_string(first / kRolloutChunk));
    std::vector<envs::EnvState> states;
    states.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        states.push_back(env.reset(rng));
    std::vector<int> active(static_cast<std::size_t>(count));
    std::iota(active.begin(), active.end(), 0);
    const int d_s = env.spec().state_dim;
    while (!active.empty()) {
        Eigen::MatrixXd obs(d_s, static_cast<Eigen::Index>(active.size()));
        for (std::size_t j = 0; j < active.size(); ++j)
            obs.col(static_cast<Eigen::Index>(j)) = states[static_cast<std::size_t>(active[j])].obs;
        const Eigen::MatrixXd actions = policy(obs, rng);
        std::vector<int> still;
        for (std::size_t j = 0; j < active.size(); ++j) {
            const auto e = static_cast<std::size_t>(active[j]);
            const auto r = env.step(states[e], actions.col(static_cast<Eigen::Index>(j)));
            returns[static_cast<std::size_t>(first) + e] += r.reward;
            states[e] = r.next;
            if (!r.done)
                still.push_back(active[j]);
        }
        active.swap(still);
    }
}

}  // namespace

std::vector<double> episode_returns(
    const BatchPolicy& policy, const envs::Environment& env, int episodes, std::uint64_t seed, int threads)
{
    if (episodes < 1)
        throw std::invalid_argument("episodes must be >= 1");
    std::vector<double> returns(static_cast<std::size_t>(episodes), 0.0);
    const int chunks = (episodes + kRolloutChunk - 1) / kRolloutChunk;
    if (threads <= 0)
        threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, chunks);
    auto work = [&](int worker) {
        for (int c = worker; c < chunks; c += threads) {
            const int first = c * kRolloutChunk;
            run_chunk(policy, env, first, std::min(kRolloutChunk, episodes - first), seed, returns);
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w)
            pool.emplace_back(work, w);
        for (auto& t : pool)
            t.join();
    }
    return returns;
}

double rollout_score(
    const BatchPolicy& policy, const envs::Environment& env, int episodes, std::uint64_t seed, int threads)
{
    return mean(episode_returns(policy, env, episodes, seed, threads));
}

double normalize_score(double raw, double ref_random, double ref_expert)
{
    if (!(ref_expert > ref_random) || !std::isfinite(ref_expert) || !std::isfinite(ref_random))
        throw ConfigError("reference scores must satisfy ref_expert > ref_random");
    return 100.0 * (raw - ref_random) / (ref_expert - ref_random);
}

double rat(const std::vector<double>& scores)
{
    if (scores.empty())
        throw std::invalid_argument("rat: no scores");
    const std::size_t n = std::min<std::size_t>(kRatWindow, scores.size());
    return std::accumulate(scores.end() - static_cast<std::ptrdiff_t>(n), scores.end(), 0.0) / static_cast<double>(n);
}

double oms(const std::vector<double>& scores)
{
    if (scores.empty())
        throw std::invalid_argument("oms: no scores");
    return *std::max_element(scores.begin(), scores.end());
}

EvalReport make_report(std::vector<int> epochs, std::vector<double> raw, std::vector<double> normalized)
{
    EvalReport r{std::move(epochs), std::move(raw), std::move(normalized), 0.0, 0.0};
    if (!r.normalized.empty()) {
        r.rat = rat(r.normalized);
        r.oms = oms(r.normalized);
    }
    return r;
}

double mean(const std::vector<double>& v)
{
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v)
{
    if (v.size() < 2)
        return 0.0;
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v)
        ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

SweepResult ablation_sweep(
    const trainer::TrainConfig& base, const OfflineDataset& ds, const std::string& axis,
    const std::vector<std::string>& values, const std::vector<std::uint64_t>& seeds,
    const std::filesystem::path& out, bool quiet)
{
    if (values.empty() || seeds.empty())
        throw ConfigError("ablation needs at least one value and one seed");
    // Validate every configuration before spending time on training.
    std::vector<trainer::TrainConfig> configs;
    for (const auto& value : values) {
        auto c = base;
        trainer::set_config_value(c, axis, value);
        c.validate();
        configs.push_back(c);
    }

    SweepResult result;
    for (std::size_t vi = 0; vi < values.size(); ++vi) {
        std::vector<double> rats, omss;
        for (const auto seed : seeds) {
            auto c = configs[vi];
            c.seed = seed;
            const std::string run_id = axis + "=" + values[vi] + "_seed=" + std::to_string(seed);
            trainer::RunOptions opts;
            if (!out.empty()) {
                opts.out = out / run_id;
                std::filesystem::create_directories(opts.out);
                std::ofstream(opts.out / "config.txt") << c.to_text();
            }
            opts.quiet = quiet;
            const auto run = trainer::run(c, ds, opts);
            SweepRun sr{run_id, values[vi], seed,
                make_report(run.state.eval_epochs, run.state.eval_raw, run.state.eval_history)};
            for (std::size_t i = 0; i < sr.report.epochs.size(); ++i)
                result.rows.push_back(
                    {run_id, axis, values[vi], seed, sr.report.epochs[i], sr.report.raw[i], sr.report.normalized[i]});
            if (!sr.report.normalized.empty()) {
                rats.push_back(sr.report.rat);
                omss.push_back(sr.report.oms);
            }
            if (!quiet)
                std::cerr << run_id << " rat " << sr.report.rat << " oms " << sr.report.oms << '\n';
            result.runs.push_back(std::move(sr));
        }
        result.summary.push_back(
            {axis, values[vi], static_cast<int>(seeds.size()), mean(rats), sample_std(rats), mean(omss), sample_std(omss)});
    }
    if (!out.empty()) {
        write_results_csv(result, out / "results.csv");
        write_summary_csv(result, out / "summary.csv");
    }
    return result;
}

namespace {

std::string csv_double(double v)
{
    std::ostringstream s;
    s.precision(9);
    s << v;
    return s.str();
}

}  // namespace

void write_results_csv(const SweepResult& result, const std::filesystem::path& path)
{
    std::ofstream out(path);
    out << "run_id,axis,value,seed,checkpoint,raw,normalized\n";
    for (const auto& r : result.rows)
        out << r.run_id << ',' << r.axis << ',' << r.value << ',' << r.seed << ',' << r.checkpoint << ','
            << csv_double(r.raw) << ',' << csv_double(r.normalized) << '\n';
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
}

void write_summary_csv(const SweepResult& result, const std::filesystem::path& path)
{
    std::ofstream out(path);
    out << "axis,value,seeds,rat_mean,rat_std,oms_mean,oms_std\n";
    for (const auto& s : result.summary)
        out << s.axis << ',' << s.value << ',' << s.seeds << ',' << csv_double(s.rat_mean) << ','
            << csv_double(s.rat_std) << ',' << csv_double(s.oms_mean) << ',' << csv_double(s.oms_std) << '\n';
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
}

}  // namespace paodp::eval
