#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "paodp/dataset.hpp"
#include "paodp/envs.hpp"
#include "paodp/eval.hpp"
#include "paodp/plot.hpp"
#include "paodp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace paodp;

namespace {

constexpr const char* kVersion = "paodp 0.1.0";

// Usage problems detected after argument parsing.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

OfflineDataset load_dataset(const fs::path& path)
{
    if (!fs::exists(path))
        throw UsageError("dataset not found: " + path.string());
    return read_dataset(path);
}

void write_json(const fs::path& path, const json& j)
{
    std::ofstream out(path);
    if (!(out << j.dump(2) << '\n'))
        throw std::runtime_error("cannot write " + path.string());
}

struct Overrides {
    std::optional<double> eta, lambda, xi;
    std::optional<int> n_actions, epochs;
    std::optional<std::string> strategy;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> set;  // key=value
};

void add_override_flags(CLI::App* cmd, Overrides& o)
{
    cmd->add_option("--seed", o.seed, "Master seed");
    cmd->add_option("--eta", o.eta, "Preference temperature");
    cmd->add_option("--lambda", o.lambda, "Label flip probability in [0, 0.5)");
    cmd->add_option("--xi", o.xi, "Improvement weight");
    cmd->add_option("--n-actions", o.n_actions, "Candidates per state");
    cmd->add_option("--strategy", o.strategy, "importance | max | min | mean");
    cmd->add_option("--epochs", o.epochs, "Training epochs");
    cmd->add_option("--set", o.set, "Extra key=value config override (repeatable)");
}

/// Config file, then flags. Returns notes for flags that replaced a value
/// the file set explicitly.
trainer::TrainConfig resolve_config(const std::string& config_path, const Overrides& o, std::vector<std::string>& notes)
{
    trainer::TrainConfig c;
    std::map<std::string, std::string> from_file;
    if (!config_path.empty()) {
        if (!fs::exists(config_path))
            throw UsageError("config not found: " + config_path);
        c = trainer::load_config(config_path);
        std::ifstream in(config_path);
        std::string line;
        while (std::getline(in, line)) {
            if (const auto h = line.find('#'); h != std::string::npos)
                line.erase(h);
            if (const auto eq = line.find('='); eq != std::string::npos) {
                auto key = line.substr(0, eq);
                key.erase(0, key.find_first_not_of(" \t"));
                key.erase(key.find_last_not_of(" \t\r") + 1);
                from_file[key] = line.substr(eq + 1);
            }
        }
    }
    auto apply = [&](const std::string& key, const std::string& value) {
        if (from_file.count(key))
            notes.push_back("flag --" + key + "=" + value + " overrides config value '" + from_file[key] + "'");
        trainer::set_config_value(c, key, value);
    };
    auto num = [](double v) { return json(v).dump(); };
    if (o.seed) apply("seed", std::to_string(*o.seed));
    if (o.eta) apply("eta", num(*o.eta));
    if (o.lambda) apply("lambda", num(*o.lambda));
    if (o.xi) apply("xi", num(*o.xi));
    if (o.n_actions) apply("n_actions", std::to_string(*o.n_actions));
    if (o.strategy) apply("strategy", *o.strategy);
    if (o.epochs) apply("epochs", std::to_string(*o.epochs));
    for (const auto& kv : o.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw UsageError("--set expects key=value, got '" + kv + "'");
        apply(kv.substr(0, eq), kv.substr(eq + 1));
    }
    c.validate();
    return c;
}

int cmd_gen_data(const std::string& env_id, const std::string& quality, int n, std::uint64_t seed, const fs::path& out)
{
    if (n < 1)
        throw ConfigError("--n must be positive");
    const auto env = envs::make_env(env_id);
    const auto ds = envs::generate_dataset(*env, envs::parse_quality(quality), n, seed);
    if (out.has_parent_path())
        fs::create_directories(out.parent_path());
    write_dataset(ds, out);
    std::cout << "wrote " << ds.size() << " transitions to " << out.string() << " (hash " << file_hash(out) << ")\n";
    return 0;
}

int cmd_train(const fs::path& dataset, const std::string& config_path, const Overrides& o, const fs::path& out, bool resume)
{
    std::vector<std::string> notes;
    const auto config = resolve_config(config_path, o, notes);
    const auto ds = load_dataset(dataset);
    fs::create_directories(out);

    json manifest{
        {"version", kVersion},
        {"config", config.to_json()},
        {"dataset", {{"path", fs::absolute(dataset).string()}, {"hash", file_hash(dataset)}}},
        {"seed", config.seed},
        {"started", timestamp()},
        {"resume", resume},
        {"notes", notes}};
    write_json(out / "manifest.json", manifest);
    std::ofstream(out / "config.txt") << config.to_text();

    trainer::RunOptions opts;
    opts.out = out;
    opts.resume = resume;
    opts.quiet = false;
    const auto result = trainer::run(config, ds, opts);

    manifest["finished"] = timestamp();
    if (!result.state.eval_history.empty()) {
        manifest["final_rat"] = eval::rat(result.state.eval_history);
        manifest["final_oms"] = eval::oms(result.state.eval_history);
        std::cout << "rat " << eval::rat(result.state.eval_history) << " oms "
                  << eval::oms(result.state.eval_history) << '\n';
    }
    write_json(out / "manifest.json", manifest);
    return 0;
}

json read_manifest(const fs::path& run)
{
    std::ifstream in(run / "manifest.json");
    if (!in)
        throw UsageError("no manifest.json in " + run.string());
    return json::parse(in);
}

int cmd_eval(const fs::path& run, const std::string& checkpoint, int episodes, std::uint64_t seed, const std::string& which)
{
    const auto manifest = read_manifest(run);
    const auto config = trainer::config_from_json(manifest.at("config"));
    fs::path ckpt;
    if (checkpoint.empty()) {
        const auto latest = trainer::latest_checkpoint(run);
        if (!latest)
            throw UsageError("no checkpoints in " + run.string());
        ckpt = *latest;
    } else if (fs::exists(checkpoint)) {
        ckpt = checkpoint;
    } else {
        ckpt = run / ("ckpt_" + checkpoint + ".paoc");
    }
    if (!fs::exists(ckpt))
        throw UsageError("checkpoint not found: " + ckpt.string());
    if (which != "psi" && which != "theta")
        throw UsageError("--policy must be psi or theta");

    const auto ds = normalize_states(load_dataset(manifest.at("dataset").at("path").get<std::string>()));
    const auto state = trainer::load_checkpoint(ckpt, config, ds);
    const auto env = envs::make_env(ds.env_id);
    const auto actor = eval::diffusion_actor(which == "psi" ? state.psi : state.theta, ds);
    const double raw = eval::rollout_score(actor, *env, episodes, seed);
    const double normalized = eval::normalize_score(raw, ds.ref_random_score, ds.ref_expert_score);
    std::cout << json{{"checkpoint", ckpt.string()}, {"policy", which}, {"episodes", episodes}, {"seed", seed},
                      {"raw", raw}, {"normalized", normalized}}.dump()
              << '\n';
    return 0;
}

std::vector<std::string> split(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty())
            out.push_back(item);
    return out;
}

int cmd_ablate(
    const fs::path& dataset, const std::string& config_path, const Overrides& o, const std::string& axis,
    const std::string& values, const std::string& seeds, const fs::path& out)
{
    std::vector<std::string> notes;
    const auto config = resolve_config(config_path, o, notes);
    std::vector<std::uint64_t> seed_list;
    for (const auto& s : split(seeds)) {
        try {
            seed_list.push_back(std::stoull(s));
        } catch (const std::exception&) {
            throw UsageError("bad seed '" + s + "'");
        }
    }
    const auto ds = load_dataset(dataset);
    fs::create_directories(out);
    write_json(out / "manifest.json",
        {{"version", kVersion}, {"config", config.to_json()}, {"axis", axis}, {"values", split(values)},
         {"seeds", seed_list}, {"dataset", {{"path", fs::absolute(dataset).string()}, {"hash", file_hash(dataset)}}},
         {"started", timestamp()}, {"notes", notes}});
    const auto result = eval::ablation_sweep(config, ds, axis, split(values), seed_list, out, false);
    for (const auto& s : result.summary)
        std::cout << s.axis << '=' << s.value << " rat " << s.rat_mean << " +- " << s.rat_std << " oms " << s.oms_mean
                  << " +- " << s.oms_std << '\n';
    return 0;
}

/// Reads (epoch, eval_score) pairs from a run's metrics CSV.
plot::Series read_eval_series(const fs::path& run, const std::string& label_key)
{
    std::ifstream in(run / "metrics.csv");
    if (!in)
        throw UsageError("no metrics.csv in " + run.string());
    plot::Series s;
    s.label = run.filename().string();
    if (!label_key.empty()) {
        std::ifstream cfg(run / "config.txt");
        if (!cfg)
            throw UsageError("no config.txt in " + run.string());
        std::stringstream text;
        text << cfg.rdbuf();
        const auto c = trainer::parse_config(text.str()).to_json();
        if (!c.contains(label_key))
            throw UsageError("unknown label key " + label_key);
        const auto& v = c.at(label_key);
        s.label = v.is_string() ? v.get<std::string>() : v.dump();
    }
    std::string line;
    std::getline(in, line);
    std::vector<double> scores;
    while (std::getline(in, line)) {
        std::vector<std::string> all;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ','))
            all.push_back(cell);
        if (all.size() < 10 || all[9].empty())
            continue;
        s.x.push_back(std::stod(all[1]));
        scores.push_back(std::stod(all[9]));
    }
    s.y = plot::running_average(scores);
    return s;
}

int cmd_plot(const std::vector<std::string>& runs, const std::string& label_key, const fs::path& out, const std::string& title)
{
    std::vector<plot::Series> series;
    for (const auto& r : runs)
        series.push_back(read_eval_series(r, label_key));
    std::ofstream svg(out);
    if (!(svg << plot::render_svg(series, title, "epoch", "RAT (normalized score)")))
        throw std::runtime_error("cannot write " + out.string());
    std::cout << "wrote " << out.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    nn::tune_allocator();
    CLI::App app{"Preference-optimized diffusion policies for offline RL"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::string env_id, quality = "mixed";
    int n = 20000;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "Generate an offline dataset from a scripted behavior policy");
    gen->add_option("--env", env_id, "Environment id")->required();
    gen->add_option("--quality", quality, "expert | medium | mixed | random");
    gen->add_option("--n", n, "Number of transitions");
    gen->add_option("--seed", gen_seed, "Seed");
    gen->add_option("--out", gen_out, "Output file")->required();

    std::string dataset, config_path, out;
    bool resume = false;
    Overrides overrides;
    auto* train = app.add_subcommand("train", "Train behavior, critic and surrogate policies");
    train->add_option("--dataset", dataset, "Dataset file")->required();
    train->add_option("--config", config_path, "key=value config file");
    train->add_option("--out", out, "Run directory")->required();
    train->add_flag("--resume", resume, "Continue from the latest checkpoint in --out");
    add_override_flags(train, overrides);

    std::string run_dir, checkpoint, policy = "psi";
    int episodes = 50;
    std::uint64_t eval_seed = 0;
    auto* ev = app.add_subcommand("eval", "Evaluate a saved checkpoint");
    ev->add_option("--run", run_dir, "Run directory")->required();
    ev->add_option("--checkpoint", checkpoint, "Epoch number or checkpoint path (default: latest)");
    ev->add_option("--episodes", episodes, "Rollout episodes");
    ev->add_option("--seed", eval_seed, "Rollout seed");
    ev->add_option("--policy", policy, "psi | theta");

    std::string axis, values, seeds = "0,1,2";
    Overrides ablate_overrides;
    std::string ablate_dataset, ablate_config, ablate_out;
    auto* ablate = app.add_subcommand("ablate", "Sweep one config key across values and seeds");
    ablate->add_option("--dataset", ablate_dataset, "Dataset file")->required();
    ablate->add_option("--config", ablate_config, "key=value base config");
    ablate->add_option("--axis", axis, "Config key to vary (strategy, lambda, xi, method, ...)")->required();
    ablate->add_option("--values", values, "Comma-separated values")->required();
    ablate->add_option("--seeds", seeds, "Comma-separated seeds");
    ablate->add_option("--out", ablate_out, "Sweep directory")->required();
    add_override_flags(ablate, ablate_overrides);

    std::vector<std::string> runs;
    std::string plot_out, label_key, title = "RAT";
    auto* pl = app.add_subcommand("plot", "Render RAT curves of runs as SVG");
    pl->add_option("--runs", runs, "Run directories")->required();
    pl->add_option("--out", plot_out, "SVG file")->required();
    pl->add_option("--label-key", label_key, "Config key whose value labels each curve");
    pl->add_option("--title", title, "Chart title");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen)
            return cmd_gen_data(env_id, quality, n, gen_seed, gen_out);
        if (*train)
            return cmd_train(dataset, config_path, overrides, out, resume);
        if (*ev)
            return cmd_eval(run_dir, checkpoint, episodes, eval_seed, policy);
        if (*ablate)
            return cmd_ablate(ablate_dataset, ablate_config, ablate_overrides, axis, values, seeds, ablate_out);
        if (*pl)
            return cmd_plot(runs, label_key, plot_out, title);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const trainer::NonFiniteLoss& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
