#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "paodp/envs.hpp"
#include "paodp/trainer.hpp"

namespace paodp::trainer {

namespace {

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text)
{
    T value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end)
        throw ConfigError("invalid value '" + text + "' for " + key);
    return value;
}

}  // namespace

Method parse_method(const std::string& name)
{
    if (name == "paodp")
        return Method::paodp;
    if (name == "wr")
        return Method::wr;
    if (name == "bc")
        return Method::bc;
    throw ConfigError("unknown method '" + name + "' (valid: paodp, wr, bc)");
}

std::string to_string(Method m)
{
    switch (m) {
    case Method::paodp: return "paodp";
    case Method::wr: return "wr";
    case Method::bc: return "bc";
    }
    return "?";
}

void TrainConfig::validate() const
{
    if (epochs < 0)
        throw ConfigError("epochs must be >= 0");
    if (steps_per_epoch < 1 || batch_size < 1 || n_actions < 1 || K < 1 || eval_episodes < 1)
        throw ConfigError("steps_per_epoch, batch_size, n_actions, K and eval_episodes must be positive");
    if (checkpoint_every < 0 || eval_every < 0)
        throw ConfigError("checkpoint_every and eval_every must be >= 0");
    if (hidden < 1 || layers < 1)
        throw ConfigError("hidden and layers must be positive");
    if (!(learning_rate > 0.0))
        throw ConfigError("learning_rate must be positive");
    if (!(eta_wr > 0.0))
        throw ConfigError("eta_wr must be positive");
    if (!(label_noise >= 0.0 && label_noise <= 1.0))
        throw ConfigError("label_noise must lie in [0, 1]");
    if (pref_warmup < 0 || pref_batch < 0)
        throw ConfigError("pref_warmup and pref_batch must be >= 0");
    prefopt::PrefLossConfig{eta, lambda, xi}.validate();
    prefgen::SamplingStrategy{prefgen::parse_strategy(strategy), eta, n_actions}.validate();
    critic::validate(critic::CriticOptions{tau, gamma, rho, {}});
    parse_method(method);
}

nlohmann::json TrainConfig::to_json() const
{
    return {
        {"epochs", epochs},   {"steps_per_epoch", steps_per_epoch}, {"batch_size", batch_size},
        {"learning_rate", learning_rate}, {"eta", eta}, {"lambda", lambda}, {"xi", xi},
        {"n_actions", n_actions}, {"K", K}, {"strategy", strategy}, {"tau", tau}, {"gamma", gamma},
        {"rho", rho}, {"seed", seed}, {"checkpoint_every", checkpoint_every}, {"eval_every", eval_every},
        {"eval_episodes", eval_episodes}, {"method", method}, {"eta_wr", eta_wr},
        {"label_noise", label_noise}, {"pref_warmup", pref_warmup}, {"pref_batch", pref_batch},
        {"hidden", hidden}, {"layers", layers}};
}

std::string TrainConfig::to_text() const
{
    // json's number output is the shortest text that round-trips.
    std::ostringstream out;
    const auto j = to_json();
    for (const auto& [key, value] : j.items())
        out << key << '=' << (value.is_string() ? value.get<std::string>() : value.dump()) << '\n';
    return out.str();
}

void set_config_value(TrainConfig& c, const std::string& key, const std::string& raw)
{
    const std::string v = trim(raw);
    if (key == "epochs") c.epochs = parse_number<int>(key, v);
    else if (key == "steps_per_epoch") c.steps_per_epoch = parse_number<int>(key, v);
    else if (key == "batch_size") c.batch_size = parse_number<int>(key, v);
    else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, v);
    else if (key == "eta") c.eta = parse_number<double>(key, v);
    else if (key == "lambda") c.lambda = parse_number<double>(key, v);
    else if (key == "xi") c.xi = parse_number<double>(key, v);
    else if (key == "n_actions") c.n_actions = parse_number<int>(key, v);
    else if (key == "K") c.K = parse_number<int>(key, v);
    else if (key == "strategy") c.strategy = (prefgen::parse_strategy(v), v);
    else if (key == "tau") c.tau = parse_number<double>(key, v);
    else if (key == "gamma") c.gamma = parse_number<double>(key, v);
    else if (key == "rho") c.rho = parse_number<double>(key, v);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "checkpoint_every") c.checkpoint_every = parse_number<int>(key, v);
    else if (key == "eval_every") c.eval_every = parse_number<int>(key, v);
    else if (key == "eval_episodes") c.eval_episodes = parse_number<int>(key, v);
    else if (key == "method") c.method = (parse_method(v), v);
    else if (key == "eta_wr") c.eta_wr = parse_number<double>(key, v);
    else if (key == "label_noise") c.label_noise = parse_number<double>(key, v);
    else if (key == "pref_warmup") c.pref_warmup = parse_number<long long>(key, v);
    else if (key == "pref_batch") c.pref_batch = parse_number<int>(key, v);
    else if (key == "hidden") c.hidden = parse_number<int>(key, v);
    else if (key == "layers") c.layers = parse_number<int>(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text, TrainConfig base)
{
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), std::move(base));
}

TrainConfig config_from_json(const nlohmann::json& j)
{
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        if (value.is_string())
            set_config_value(c, key, value.get<std::string>());
        else
            set_config_value(c, key, value.dump());
    }
    return c;
}

}  // namespace paodp::trainer
