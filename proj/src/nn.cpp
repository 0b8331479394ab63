#include "paodp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "paodp/binary_format.hpp"

namespace paodp::nn {

namespace {

template <typename Scalar>
Scalar softplus(Scalar x)
{
    if (x > Scalar(20))
        return x;
    return std::log1p(std::exp(x));
}

}  // namespace

template <typename Scalar>
Scalar mish(Scalar x)
{
    return x * std::tanh(softplus(x));
}

template <typename Scalar>
Scalar mish_derivative(Scalar x)
{
    const Scalar t = std::tanh(softplus(x));
    const Scalar sigmoid = Scalar(1) / (Scalar(1) + std::exp(-x));
    return t + x * sigmoid * (Scalar(1) - t * t);
}

namespace {

// mish(x) = x tanh(softplus(x)) = x n / (n + 2) with n = e^x (e^x + 2).
// tanh(softplus(x)) = ((1 + e^x)^2 - 1) / ((1 + e^x)^2 + 1). Written as single
// expressions so Eigen fuses them without large temporaries.
template <typename Scalar, typename Derived>
auto tanh_softplus(const Eigen::MatrixBase<Derived>& z)
{
    const auto p = (z.array().min(Scalar(20)).exp() + Scalar(1)).square();
    return (p - Scalar(1)) / (p + Scalar(1));
}

template <typename Scalar, typename Derived>
Matrix<Scalar> mish_matrix(const Eigen::MatrixBase<Derived>& z)
{
    return (z.array() * tanh_softplus<Scalar>(z)).matrix();
}

template <typename Scalar>
Matrix<Scalar> mish_derivative_matrix(const Matrix<Scalar>& z)
{
    Matrix<Scalar> t = tanh_softplus<Scalar>(z).matrix();
    const auto sigmoid = Scalar(1) / (Scalar(1) + (-z.array()).exp());
    return (t.array() + z.array() * sigmoid * (Scalar(1) - t.array().square())).matrix();
}

}  // namespace

void tune_allocator()
{
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

template float mish<float>(float);
template double mish<double>(double);
template float mish_derivative<float>(float);
template double mish_derivative<double>(double);

template <typename Scalar>
Mlp<Scalar>::Mlp(std::vector<int> widths) : widths_(std::move(widths))
{
    if (widths_.size() < 2)
        throw std::invalid_argument("Mlp needs at least an input and an output width");
    for (int w : widths_)
        if (w <= 0)
            throw std::invalid_argument("Mlp layer widths must be positive");
    Eigen::Index total = 0;
    for (int l = 0; l < num_layers(); ++l) {
        offsets_.push_back(total);
        total += static_cast<Eigen::Index>(widths_[l + 1]) * (widths_[l] + 1);
    }
    params_ = Vector<Scalar>::Zero(total);
}

template <typename Scalar>
Eigen::Index Mlp<Scalar>::bias_offset(int layer) const
{
    return weight_offset(layer) + static_cast<Eigen::Index>(widths_[layer + 1]) * widths_[layer];
}

template <typename Scalar>
void Mlp<Scalar>::init_uniform(Rng& rng)
{
    for (int l = 0; l < num_layers(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
        const Eigen::Index begin = weight_offset(l);
        const Eigen::Index end = bias_offset(l) + widths_[l + 1];
        for (Eigen::Index i = begin; i < end; ++i)
            params_(i) = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
}

template <typename Scalar>
Eigen::Map<Matrix<Scalar>> Mlp<Scalar>::weight(int layer)
{
    return {params_.data() + weight_offset(layer), widths_[layer + 1], widths_[layer]};
}

template <typename Scalar>
Eigen::Map<const Matrix<Scalar>> Mlp<Scalar>::weight(int layer) const
{
    return {params_.data() + weight_offset(layer), widths_[layer + 1], widths_[layer]};
}

template <typename Scalar>
Eigen::Map<Vector<Scalar>> Mlp<Scalar>::bias(int layer)
{
    return {params_.data() + bias_offset(layer), widths_[layer + 1]};
}

template <typename Scalar>
Eigen::Map<const Vector<Scalar>> Mlp<Scalar>::bias(int layer) const
{
    return {params_.data() + bias_offset(layer), widths_[layer + 1]};
}

template <typename Scalar>
Matrix<Scalar> Mlp<Scalar>::forward(const Matrix<Scalar>& input) const
{
    if (input.rows() != input_dim())
        throw std::invalid_argument(
            "Mlp input has " + std::to_string(input.rows()) + " rows, expected " + std::to_string(input_dim()));
    Matrix<Scalar> pre = weight(0) * input;
    pre.colwise() += bias(0);
    return forward_from_first(pre);
}

template <typename Scalar>
Matrix<Scalar> Mlp<Scalar>::forward_from_first(const Matrix<Scalar>& first_pre) const
{
    if (first_pre.rows() != widths_[1])
        throw std::invalid_argument("first-layer pre-activation has the wrong height");
    if (num_layers() == 1)
        return first_pre;
    // Column blocks keep every intermediate in cache.
    constexpr Eigen::Index kBlock = 256;
    const Eigen::Index n = first_pre.cols();
    Matrix<Scalar> out(output_dim(), n);
    Matrix<Scalar> a, z;
    for (Eigen::Index c0 = 0; c0 < n; c0 += kBlock) {
        const Eigen::Index w = std::min(kBlock, n - c0);
        a = mish_matrix<Scalar>(first_pre.middleCols(c0, w));
        for (int l = 1; l < num_layers(); ++l) {
            z.noalias() = weight(l) * a;
            z.colwise() += bias(l);
            if (l + 1 < num_layers())
                a = mish_matrix<Scalar>(z);
            else
                out.middleCols(c0, w) = z;
        }
    }
    return out;
}

template <typename Scalar>
Matrix<Scalar> Mlp<Scalar>::forward(const Matrix<Scalar>& input, Tape& tape) const
{
    if (input.rows() != input_dim())
        throw std::invalid_argument(
            "Mlp input has " + std::to_string(input.rows()) + " rows, expected " + std::to_string(input_dim()));
    tape.inputs.clear();
    tape.pre.clear();
    Matrix<Scalar> a = input;
    for (int l = 0; l < num_layers(); ++l) {
        tape.inputs.push_back(a);
        Matrix<Scalar> z = weight(l) * a;
        z.colwise() += bias(l);
        if (l + 1 < num_layers()) {
            a = mish_matrix<Scalar>(z);
            tape.pre.push_back(std::move(z));
        } else {
            a = std::move(z);
        }
    }
    return a;
}

template <typename Scalar>
Vector<Scalar> Mlp<Scalar>::backward(const Tape& tape, const Matrix<Scalar>& grad_output) const
{
    if (tape.empty())
        throw std::logic_error("Mlp::backward called without a recorded forward pass");
    if (grad_output.rows() != output_dim() || grad_output.cols() != tape.inputs.front().cols())
        throw std::invalid_argument("gradient shape does not match the recorded forward pass");

    Vector<Scalar> grad = Vector<Scalar>::Zero(num_params());
    Matrix<Scalar> g = grad_output;
    for (int l = num_layers() - 1; l >= 0; --l) {
        const auto& a = tape.inputs[static_cast<std::size_t>(l)];
        Eigen::Map<Matrix<Scalar>>(grad.data() + weight_offset(l), widths_[l + 1], widths_[l]).noalias() =
            g * a.transpose();
        Eigen::Map<Vector<Scalar>>(grad.data() + bias_offset(l), widths_[l + 1]) = g.rowwise().sum();
        if (l > 0) {
            Matrix<Scalar> upstream = weight(l).transpose() * g;
            const auto& z = tape.pre[static_cast<std::size_t>(l - 1)];
            g = upstream.cwiseProduct(mish_derivative_matrix(z));
        }
    }
    return grad;
}

Eigen::VectorXd embed_time(int k, int dim, double base)
{
    if (dim <= 0 || dim % 2 != 0)
        throw std::invalid_argument("time embedding dimension must be positive and even");
    Eigen::VectorXd out(dim);
    for (int i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(base, -2.0 * i / dim);
        out(2 * i) = std::sin(k * freq);
        out(2 * i + 1) = std::cos(k * freq);
    }
    return out;
}

template <typename Scalar>
Adam<Scalar>::Adam(Eigen::Index num_params, AdamConfig config)
    : config_(config), m_(Vector<Scalar>::Zero(num_params)), v_(Vector<Scalar>::Zero(num_params))
{
    if (!(config.learning_rate > 0.0))
        throw std::invalid_argument("learning rate must be positive");
}

template <typename Scalar>
void Adam<Scalar>::step(Vector<Scalar>& params, const Vector<Scalar>& grad)
{
    if (params.size() != m_.size() || grad.size() != m_.size())
        throw std::invalid_argument("Adam buffers do not match the parameter vector");
    ++step_;
    const auto b1 = static_cast<Scalar>(config_.beta1);
    const auto b2 = static_cast<Scalar>(config_.beta2);
    const auto bias1 = static_cast<Scalar>(1.0 - std::pow(config_.beta1, static_cast<double>(step_)));
    const auto bias2 = static_cast<Scalar>(1.0 - std::pow(config_.beta2, static_cast<double>(step_)));
    const auto lr = static_cast<Scalar>(config_.learning_rate);
    const auto eps = static_cast<Scalar>(config_.epsilon);

    m_ = b1 * m_ + (Scalar(1) - b1) * grad;
    v_ = b2 * v_ + (Scalar(1) - b2) * grad.cwiseProduct(grad);
    params.array() -= lr * (m_.array() / bias1) / ((v_.array() / bias2).sqrt() + eps);
    if (config_.weight_decay != 0.0)
        params *= static_cast<Scalar>(1.0 - config_.learning_rate * config_.weight_decay);
}

Eigen::VectorXd finite_difference_gradient(
    const std::function<double(const Eigen::VectorXd&)>& loss, const Eigen::VectorXd& params, double h)
{
    Eigen::VectorXd grad(params.size());
    Eigen::VectorXd x = params;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        x(i) = params(i) + h;
        const double up = loss(x);
        x(i) = params(i) - h;
        const double down = loss(x);
        x(i) = params(i);
        grad(i) = (up - down) / (2.0 * h);
    }
    return grad;
}

double max_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric, double floor)
{
    if (analytic.size() != numeric.size())
        throw std::invalid_argument("gradient sizes differ");
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double scale = std::max({std::abs(analytic(i)), std::abs(numeric(i)), floor});
        worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / scale);
    }
    return worst;
}

void Checkpoint::put(const std::string& name, const Eigen::VectorXf& v)
{
    tensors[name] = Tensor{{v.size()}, std::vector<float>(v.data(), v.data() + v.size())};
}

Eigen::VectorXf Checkpoint::get(const std::string& name) const
{
    const auto it = tensors.find(name);
    if (it == tensors.end())
        throw std::runtime_error("checkpoint has no tensor named " + name);
    return Eigen::Map<const Eigen::VectorXf>(it->second.values.data(), static_cast<Eigen::Index>(it->second.values.size()));
}

namespace {

std::size_t checkpoint_floats(const nlohmann::json& meta)
{
    std::size_t total = 0;
    for (const auto& t : meta.at("tensors")) {
        std::size_t count = 1;
        for (const auto& d : t.at("shape"))
            count *= d.get<std::size_t>();
        total += count;
    }
    return total;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    nlohmann::json meta;
    meta["tensors"] = nlohmann::json::array();
    meta["meta"] = ckpt.meta;
    std::vector<float> payload;
    for (const auto& [name, tensor] : ckpt.tensors) {
        meta["tensors"].push_back({{"name", name}, {"shape", tensor.shape}});
        payload.insert(payload.end(), tensor.values.begin(), tensor.values.end());
    }
    write_container(path, std::string_view(kCheckpointMagic, 4), kCheckpointVersion, meta, payload);
}

Checkpoint read_checkpoint(const std::filesystem::path& path)
{
    const Container c =
        read_container(path, std::string_view(kCheckpointMagic, 4), kCheckpointVersion, &checkpoint_floats);
    Checkpoint ckpt;
    ckpt.meta = c.meta.value("meta", nlohmann::json::object());
    std::size_t offset = 0;
    for (const auto& t : c.meta.at("tensors")) {
        Tensor tensor;
        tensor.shape = t.at("shape").get<std::vector<Eigen::Index>>();
        std::size_t count = 1;
        for (auto d : tensor.shape)
            count *= static_cast<std::size_t>(d);
        tensor.values.assign(
            c.payload.begin() + static_cast<std::ptrdiff_t>(offset),
            c.payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
        offset += count;
        ckpt.tensors[t.at("name").get<std::string>()] = std::move(tensor);
    }
    return ckpt;
}

template class Mlp<float>;
template class Mlp<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace paodp::nn
