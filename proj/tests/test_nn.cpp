#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "paodp/binary_format.hpp"
#include "paodp/nn.hpp"
#include "test_support.hpp"

using namespace paodp;
using namespace paodp::nn;

namespace {

// Scalar-loop reimplementation of the forward pass.
Eigen::VectorXd scalar_forward(const Mlp<double>& net, const Eigen::VectorXd& x)
{
    std::vector<double> a(x.data(), x.data() + x.size());
    for (int l = 0; l < net.num_layers(); ++l) {
        const auto w = net.weight(l);
        const auto b = net.bias(l);
        std::vector<double> z(static_cast<std::size_t>(w.rows()));
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            double acc = b(i);
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                acc += w(i, j) * a[static_cast<std::size_t>(j)];
            const bool hidden = l + 1 < net.num_layers();
            z[static_cast<std::size_t>(i)] = hidden ? acc * std::tanh(std::log1p(std::exp(acc))) : acc;
        }
        a = std::move(z);
    }
    return Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
}

}  // namespace

TEST_CASE("mish matches its definition and derivative")
{
    for (double x : {-30.0, -5.0, -1.0, -0.1, 0.0, 0.3, 2.0, 10.0, 40.0}) {
        CHECK(mish(x) == doctest::Approx(x * std::tanh(std::log1p(std::exp(x)))).epsilon(1e-12));
        const double h = 1e-6;
        CHECK(mish_derivative(x) == doctest::Approx((mish(x + h) - mish(x - h)) / (2 * h)).epsilon(1e-6));
    }
    CHECK(mish(0.0) == 0.0);
}

TEST_CASE("forward: zero net, identity net, scalar oracle")
{
    Mlp<double> zero({3, 5, 2});
    Matrix<double> x = Matrix<double>::Random(3, 4);
    CHECK(zero.forward(x).isZero(0.0));

    Mlp<double> id({3, 3});
    id.weight(0) = Eigen::MatrixXd::Identity(3, 3);
    CHECK(id.forward(x) == x);

    Mlp<double> net({2, 16, 16, 2});
    Rng rng(42);
    net.init_uniform(rng);
    const Matrix<double> in = rng.normal_matrix<double>(2, 7);
    const auto out = net.forward(in);
    for (Eigen::Index j = 0; j < in.cols(); ++j)
        CHECK((out.col(j) - scalar_forward(net, in.col(j))).cwiseAbs().maxCoeff() < 1e-12);

    Mlp<double>::Tape tape;
    CHECK(net.forward(in, tape) == out);
    CHECK(net.forward(in) == out);
    CHECK_THROWS_AS(net.forward(Matrix<double>::Zero(3, 1)), std::invalid_argument);
}

TEST_CASE("init bounds follow fan-in")
{
    Mlp<double> net({4, 64, 3});
    Rng rng(1);
    net.init_uniform(rng);
    CHECK(net.weight(0).cwiseAbs().maxCoeff() <= 0.5);
    CHECK(net.weight(1).cwiseAbs().maxCoeff() <= 0.125);
    CHECK(net.bias(1).cwiseAbs().maxCoeff() <= 0.125);
    CHECK(net.num_params() == 4 * 64 + 64 + 64 * 3 + 3);
}

TEST_CASE("backward matches finite differences and is linear")
{
    Mlp<double> net({3, 10, 10, 2});
    Rng rng(3);
    net.init_uniform(rng);
    CHECK(net.num_params() <= 500);
    const Matrix<double> x = rng.normal_matrix<double>(3, 6);
    const Matrix<double> target = rng.normal_matrix<double>(2, 6);
    auto loss = [&] { return 0.5 * (net.forward(x) - target).squaredNorm(); };
    Mlp<double>::Tape tape;
    const Matrix<double> y = net.forward(x, tape);
    const Vector<double> g = net.backward(tape, y - target);
    CHECK(testing::gradient_error(net.params(), g, loss) < testing::kFdTolerance);

    const Matrix<double> g1 = rng.normal_matrix<double>(2, 6), g2 = rng.normal_matrix<double>(2, 6);
    const Vector<double> sum = net.backward(tape, g1) + net.backward(tape, g2);
    CHECK((net.backward(tape, g1 + g2) - sum).cwiseAbs().maxCoeff() < 1e-12);

    Mlp<double>::Tape empty;
    CHECK_THROWS_AS(net.backward(empty, y), std::logic_error);
}

TEST_CASE("zero network: only the output bias receives gradient")
{
    Mlp<double> net({3, 4, 2});
    const Matrix<double> x = Matrix<double>::Random(3, 5);
    Mlp<double>::Tape tape;
    net.forward(x, tape);
    Matrix<double> grad_out = Matrix<double>::Ones(2, 5);
    const auto g = net.backward(tape, grad_out);
    const Eigen::Index out_bias = net.num_params() - 2;
    CHECK(g.head(out_bias).isZero(0.0));
    CHECK(g.tail(2).isApprox(Eigen::Vector2d(5, 5)));
}

TEST_CASE("time embedding")
{
    const auto e5 = embed_time(5, 16);
    for (int i = 0; i < 8; ++i) {
        const double w = std::pow(10000.0, -2.0 * i / 16.0);
        CHECK(e5(2 * i) == doctest::Approx(std::sin(5 * w)).epsilon(1e-15));
        CHECK(e5(2 * i + 1) == doctest::Approx(std::cos(5 * w)).epsilon(1e-15));
    }
    for (int k = 1; k <= 50; ++k)
        CHECK(embed_time(k, 16).cwiseAbs().maxCoeff() <= 1.0);
    CHECK((embed_time(1, 16) - embed_time(2, 16)).norm() > 0.1);
    CHECK_THROWS(embed_time(1, 7));
}

TEST_CASE("Adam: first step moves each parameter by lr against the gradient sign")
{
    Vector<double> p = Vector<double>::Zero(3);
    Adam<double> adam(3, AdamConfig{0.01});
    Vector<double> g(3);
    g << 2.0, -0.5, 0.0;
    adam.step(p, g);
    CHECK(p(0) == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p(1) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(p(2) == 0.0);
    CHECK(adam.steps() == 1);

    // Hand-computed second step.
    Vector<double> g2(3);
    g2 << 1.0, 1.0, 0.0;
    const double m = 0.9 * 0.1 * 2.0 + 0.1 * 1.0, v = 0.999 * 0.001 * 4.0 + 0.001 * 1.0;
    const double p1 = -0.01 * 2.0 / (2.0 + 1e-8);
    const double expected = p1 - 0.01 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
    adam.step(p, g2);
    CHECK(p(0) == doctest::Approx(expected).epsilon(1e-12));

    Vector<double> q = Vector<double>::Ones(3);
    Adam<double> idle(3, AdamConfig{});
    idle.step(q, Vector<double>::Zero(3));
    CHECK(q == Vector<double>::Ones(3));
}

TEST_CASE("checkpoint round trip and format errors")
{
    const auto dir = std::filesystem::temp_directory_path() / "paodp_test_nn";
    std::filesystem::create_directories(dir);
    Checkpoint c;
    c.put("a", Eigen::VectorXf::LinSpaced(7, -1.0f, 2.0f));
    c.put("b", Eigen::VectorXf::Constant(3, 0.1f));
    c.meta["step"] = 12;
    write_checkpoint(c, dir / "x.paoc");
    const auto r = read_checkpoint(dir / "x.paoc");
    CHECK(r.get("a") == c.get("a"));
    CHECK(r.get("b") == c.get("b"));
    CHECK(r.meta.at("step") == 12);
    CHECK_THROWS(r.get("missing"));

    {
        std::fstream f(dir / "x.paoc", std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    try {
        read_checkpoint(dir / "x.paoc");
        FAIL("expected bad magic");
    } catch (const FormatError& e) {
        CHECK(e.kind() == FormatError::Kind::bad_magic);
    }
    std::filesystem::remove_all(dir);
}
