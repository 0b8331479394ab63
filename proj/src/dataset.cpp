#include "paodp/dataset.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "paodp/binary_format.hpp"
#include "paodp/rng.hpp"

namespace paodp {

namespace {

const std::array<std::string, 5> kDefaultFieldOrder{"states", "actions", "rewards", "next_states", "terminals"};

nlohmann::json to_json(const Eigen::VectorXd& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j)
{
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::size_t expected_floats(const nlohmann::json& meta)
{
    return dataset_payload_floats(meta.at("n").get<int>(), meta.at("d_s").get<int>(), meta.at("d_a").get<int>());
}

}  // namespace

Transition OfflineDataset::transition(int i) const
{
    return Transition{states.col(i), actions.col(i), rewards(i), next_states.col(i), terminals(i) != 0.0f};
}

void OfflineDataset::validate() const
{
    const int n = size();
    if (n == 0)
        throw std::invalid_argument("dataset is empty");
    if (state_dim() <= 0 || action_dim() <= 0)
        throw std::invalid_argument("dataset dimensions must be positive");
    if (next_states.rows() != states.rows() || next_states.cols() != n)
        throw std::invalid_argument("next_states shape differs from states");
    if (actions.cols() != n || rewards.size() != n || terminals.size() != n)
        throw std::invalid_argument("transition arrays have inconsistent lengths");
    if (action_low.size() != action_dim() || action_high.size() != action_dim())
        throw std::invalid_argument("action bounds have wrong dimension");
    if (state_mean.size() != state_dim() || state_std.size() != state_dim())
        throw std::invalid_argument("state statistics have wrong dimension");
    if ((state_std.array() <= 0.0).any())
        throw std::invalid_argument("state_std must be strictly positive");
    if (!(ref_expert_score > ref_random_score))
        throw std::invalid_argument("ref_expert_score must exceed ref_random_score");
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < action_dim(); ++d)
            if (actions(d, i) < action_low(d) || actions(d, i) > action_high(d))
                throw std::invalid_argument("action outside declared bounds at transition " + std::to_string(i));
    for (int i = 0; i < n; ++i)
        if (terminals(i) != 0.0f && terminals(i) != 1.0f)
            throw std::invalid_argument("terminal flags must be 0 or 1");
}

OfflineDataset make_dataset(
    std::string env_id, const std::vector<Transition>& transitions,
    Eigen::VectorXd action_low, Eigen::VectorXd action_high,
    double ref_random_score, double ref_expert_score)
{
    if (transitions.empty())
        throw std::invalid_argument("dataset is empty");
    const auto n = static_cast<Eigen::Index>(transitions.size());
    const auto d_s = transitions.front().state.size();
    const auto d_a = transitions.front().action.size();

    OfflineDataset ds;
    ds.env_id = std::move(env_id);
    ds.states.resize(d_s, n);
    ds.actions.resize(d_a, n);
    ds.rewards.resize(n);
    ds.next_states.resize(d_s, n);
    ds.terminals.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& t = transitions[static_cast<std::size_t>(i)];
        if (t.state.size() != d_s || t.next_state.size() != d_s || t.action.size() != d_a)
            throw std::invalid_argument("transitions do not share dimensions");
        ds.states.col(i) = t.state;
        ds.actions.col(i) = t.action;
        ds.rewards(i) = t.reward;
        ds.next_states.col(i) = t.next_state;
        ds.terminals(i) = t.terminal ? 1.0f : 0.0f;
    }
    ds.action_low = std::move(action_low);
    ds.action_high = std::move(action_high);
    ds.ref_random_score = ref_random_score;
    ds.ref_expert_score = ref_expert_score;
    compute_state_stats(ds.states, ds.state_mean, ds.state_std);
    ds.validate();
    return ds;
}

void compute_state_stats(
    const Eigen::MatrixXf& states, Eigen::VectorXd& mean, Eigen::VectorXd& std, std::vector<int>* floored)
{
    const Eigen::MatrixXd s = states.cast<double>();
    const double n = static_cast<double>(s.cols());
    mean = s.rowwise().sum() / n;
    std = ((s.colwise() - mean).array().square().rowwise().sum() / n).sqrt();
    for (Eigen::Index d = 0; d < std.size(); ++d) {
        if (std(d) < kStdFloor) {
            std(d) = kStdFloor;
            if (floored)
                floored->push_back(static_cast<int>(d));
        }
    }
}

OfflineDataset normalize_states(const OfflineDataset& ds, std::vector<std::string>* warnings)
{
    if (ds.normalized)
        throw std::logic_error("dataset states are already normalized");
    OfflineDataset out = ds;
    std::vector<int> floored;
    compute_state_stats(ds.states, out.state_mean, out.state_std, &floored);
    for (int d : floored) {
        const std::string msg = "state dimension " + std::to_string(d) + " has near-zero variance; std floored at 1e-3";
        std::cerr << "warning: " << msg << '\n';
        if (warnings)
            warnings->push_back(msg);
    }
    out.states = normalize_observations(out, ds.states);
    out.next_states = normalize_observations(out, ds.next_states);
    out.normalized = true;
    return out;
}

OfflineDataset denormalize_states(const OfflineDataset& ds)
{
    if (!ds.normalized)
        throw std::logic_error("dataset states are not normalized");
    OfflineDataset out = ds;
    const Eigen::VectorXd mean = ds.state_mean, std = ds.state_std;
    auto restore = [&](const Eigen::MatrixXf& z) -> Eigen::MatrixXf {
        return ((z.cast<double>().array().colwise() * std.array()).colwise() + mean.array()).cast<float>();
    };
    out.states = restore(ds.states);
    out.next_states = restore(ds.next_states);
    out.normalized = false;
    return out;
}

Eigen::MatrixXf normalize_observations(const OfflineDataset& ds, const Eigen::MatrixXf& raw)
{
    return ((raw.cast<double>().colwise() - ds.state_mean).array().colwise() / ds.state_std.array())
        .cast<float>()
        .matrix();
}

std::size_t dataset_payload_floats(int n, int d_s, int d_a)
{
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(2 * d_s + d_a + 2);
}

void write_dataset(const OfflineDataset& ds, const std::filesystem::path& path)
{
    if (ds.normalized)
        throw std::logic_error("refusing to write a dataset with normalized states");
    ds.validate();

    nlohmann::json meta;
    meta["env_id"] = ds.env_id;
    meta["d_s"] = ds.state_dim();
    meta["d_a"] = ds.action_dim();
    meta["n"] = ds.size();
    meta["action_low"] = to_json(ds.action_low);
    meta["action_high"] = to_json(ds.action_high);
    meta["state_mean"] = to_json(ds.state_mean);
    meta["state_std"] = to_json(ds.state_std);
    meta["ref_random_score"] = ds.ref_random_score;
    meta["ref_expert_score"] = ds.ref_expert_score;
    meta["field_order"] = kDefaultFieldOrder;

    std::vector<float> payload;
    payload.reserve(dataset_payload_floats(ds.size(), ds.state_dim(), ds.action_dim()));
    auto append = [&](const float* p, Eigen::Index count) { payload.insert(payload.end(), p, p + count); };
    append(ds.states.data(), ds.states.size());
    append(ds.actions.data(), ds.actions.size());
    append(ds.rewards.data(), ds.rewards.size());
    append(ds.next_states.data(), ds.next_states.size());
    append(ds.terminals.data(), ds.terminals.size());

    write_container(path, std::string_view(kDatasetMagic, 4), kDatasetVersion, meta, payload);
}

OfflineDataset read_dataset(const std::filesystem::path& path)
{
    const Container c = read_container(path, std::string_view(kDatasetMagic, 4), kDatasetVersion, &expected_floats);
    const auto& meta = c.meta;

    OfflineDataset ds;
    try {
        ds.env_id = meta.at("env_id").get<std::string>();
        const int n = meta.at("n").get<int>();
        const int d_s = meta.at("d_s").get<int>();
        const int d_a = meta.at("d_a").get<int>();
        ds.action_low = vector_from_json(meta.at("action_low"));
        ds.action_high = vector_from_json(meta.at("action_high"));
        ds.state_mean = vector_from_json(meta.at("state_mean"));
        ds.state_std = vector_from_json(meta.at("state_std"));
        ds.ref_random_score = meta.at("ref_random_score").get<double>();
        ds.ref_expert_score = meta.at("ref_expert_score").get<double>();

        ds.states.resize(d_s, n);
        ds.actions.resize(d_a, n);
        ds.rewards.resize(n);
        ds.next_states.resize(d_s, n);
        ds.terminals.resize(n);

        const auto order = meta.contains("field_order")
            ? meta.at("field_order").get<std::vector<std::string>>()
            : std::vector<std::string>(kDefaultFieldOrder.begin(), kDefaultFieldOrder.end());
        if (order.size() != kDefaultFieldOrder.size())
            throw FormatError(FormatError::Kind::malformed, "field_order must list five fields");
        std::size_t offset = 0;
        for (const auto& field : order) {
            float* dst = nullptr;
            Eigen::Index count = 0;
            if (field == "states") { dst = ds.states.data(); count = ds.states.size(); }
            else if (field == "actions") { dst = ds.actions.data(); count = ds.actions.size(); }
            else if (field == "rewards") { dst = ds.rewards.data(); count = ds.rewards.size(); }
            else if (field == "next_states") { dst = ds.next_states.data(); count = ds.next_states.size(); }
            else if (field == "terminals") { dst = ds.terminals.data(); count = ds.terminals.size(); }
            else throw FormatError(FormatError::Kind::malformed, "unknown field in field_order: " + field);
            std::copy_n(c.payload.begin() + static_cast<std::ptrdiff_t>(offset), count, dst);
            offset += static_cast<std::size_t>(count);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::malformed, std::string("bad dataset metadata: ") + e.what());
    }
    try {
        ds.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(FormatError::Kind::malformed, std::string("dataset invariant violated: ") + e.what());
    }
    return ds;
}

std::string file_hash(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::ostringstream out;
    out << std::hex << fnv1a(bytes);
    return out.str();
}

}  // namespace paodp
