#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vchgcl/gradcheck.hpp"
#include "vchgcl/ops.hpp"
#include "vchgcl/snapshot.hpp"

using namespace vchgcl;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = u(rng);
    return Tensor(std::move(shape), std::move(v), grad);
}

oracle::Mat to_mat(const Tensor& t) {
    oracle::Mat m(t.dim(0), oracle::Vec(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
    return m;
}

void expect_values(const Tensor& t, const std::vector<double>& want, double tol = 0.0) {
    ASSERT_EQ(t.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t[i], want[i], tol) << "index " << i;
}

} // namespace

TEST(Matmul, IdentityOnTheRight) {
    auto a = Tensor::matrix({{1, 2}, {3, 4}});
    auto out = matmul(a, Tensor::identity(2));
    expect_values(out, {1, 2, 3, 4});
}

TEST(Matmul, IdentityOnTheLeft) {
    auto out = matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{5}, {7}}));
    EXPECT_EQ(out.shape(), (Shape{2, 1}));
    expect_values(out, {5, 7});
}

TEST(Matmul, AllOnes) {
    auto out = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1, 1}, {1, 1}}));
    expect_values(out, {3, 3, 7, 7});
}

TEST(Matmul, MismatchNamesBothShapes) {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2 x 3]"), std::string::npos) << msg;
    }
}

TEST(Matmul, MatchesLoopOracle) {
    std::mt19937_64 rng(3);
    for (std::size_t trial = 0; trial < 20; ++trial) {
        auto a = random_tensor({1 + trial % 4, 3 + trial % 5}, rng);
        auto b = random_tensor({3 + trial % 5, 2 + trial % 3}, rng);
        auto want = oracle::matmul(to_mat(a), to_mat(b));
        auto got = matmul(a, b);
        for (std::size_t i = 0; i < want.size(); ++i)
            for (std::size_t j = 0; j < want[i].size(); ++j) EXPECT_NEAR(got.at(i, j), want[i][j], 1e-12);
    }
}

TEST(Softmax, UniformOnZeros) { expect_values(softmax(Tensor::vector({0, 0, 0})), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15); }

TEST(Softmax, SingleEntryIsOne) { expect_values(softmax(Tensor::vector({-42.0})), {1.0}); }

TEST(Softmax, OneTwoThree) { expect_values(softmax(Tensor::vector({1, 2, 3})), {0.09003, 0.24473, 0.66524}, 5e-6); }

TEST(Softmax, NonFiniteInputIsNumericError) {
    EXPECT_THROW(softmax(Tensor::vector({0, NAN})), NumericError);
    EXPECT_THROW(softmax(Tensor::vector({INFINITY, 0})), NumericError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    std::mt19937_64 rng(11);
    for (int seed = 0; seed < 100; ++seed) {
        auto x = random_tensor({3, 5}, rng, -20, 20, false);
        std::vector<double> moved = x.to_vector();
        for (double& v : moved) v += 123.456;
        for (std::size_t axis : {0u, 1u}) {
            auto s = softmax(x, axis);
            auto t = softmax(Tensor(x.shape(), moved), axis);
            auto sums = sum(s, axis);
            for (double v : sums.data()) EXPECT_NEAR(v, 1.0, 1e-9);
            for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], t[i], 1e-9);
        }
    }
}

TEST(Softmax, MatchesOracle) {
    std::mt19937_64 rng(5);
    auto x = random_tensor({6}, rng, -3, 3, false);
    auto want = oracle::softmax(x.to_vector());
    expect_values(softmax(x), want, 1e-15);
}

TEST(LayerNorm, ConstantVectorNormalizesToZero) {
    expect_values(layer_norm(Tensor::full({4}, 2.5), Tensor::ones({4}), Tensor::zeros({4}), 1e-5), {0, 0, 0, 0});
}

TEST(LayerNorm, ZeroGainGivesShift) {
    std::mt19937_64 rng(1);
    auto x = random_tensor({5}, rng, -1, 1, false);
    expect_values(layer_norm(x, Tensor::zeros({5}), Tensor::full({5}, 0.7), 1e-5), {0.7, 0.7, 0.7, 0.7, 0.7});
}

TEST(LayerNorm, OneThreeHandCase) {
    expect_values(layer_norm(Tensor::vector({1, 3}), Tensor::ones({2}), Tensor::zeros({2}), 0.0), {-1, 1}, 1e-15);
}

TEST(LayerNorm, UnitMomentsAsEpsVanishes) {
    std::mt19937_64 rng(2);
    for (int seed = 0; seed < 100; ++seed) {
        auto x = random_tensor({7}, rng, -5, 5, false);
        auto y = layer_norm(x, Tensor::ones({7}), Tensor::zeros({7}), 1e-12).to_vector();
        double m = 0.0, v = 0.0;
        for (double e : y) m += e / 7.0;
        for (double e : y) v += (e - m) * (e - m) / 7.0;
        EXPECT_LT(std::abs(m), 1e-9);
        EXPECT_NEAR(v, 1.0, 1e-6);
    }
}

TEST(Cosine, SelfSimilarityIsOne) {
    auto x = Tensor::vector({0.3, -2.0, 4.0});
    EXPECT_NEAR(cosine_similarity(x, x).item(), 1.0, 1e-15);
}

TEST(Cosine, Orthogonal) { EXPECT_NEAR(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({0, 1})).item(), 0.0, 1e-15); }

TEST(Cosine, HalfRootTwo) {
    EXPECT_NEAR(cosine_similarity(Tensor::vector({1, 1}), Tensor::vector({1, 0})).item(), 0.70711, 5e-6);
}

TEST(Cosine, ZeroNormIsDegenerate) {
    EXPECT_THROW(cosine_similarity(Tensor::vector({0, 0}), Tensor::vector({1, 0})), DegenerateInputError);
}

TEST(Cosine, ScaleInvariantAndMatchesOracle) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> scale_dist(0.01, 100.0);
    for (int seed = 0; seed < 100; ++seed) {
        auto x = random_tensor({6}, rng, -1, 1, false), y = random_tensor({6}, rng, -1, 1, false);
        const double a = scale_dist(rng), b = scale_dist(rng);
        const double base = cosine_similarity(x, y).item();
        EXPECT_NEAR(cosine_similarity(scale(x, a), scale(y, b)).item(), base, 1e-9);
        EXPECT_NEAR(base, oracle::cosine(x.to_vector(), y.to_vector()), 1e-12);
        EXPECT_LE(std::abs(base), 1.0 + 1e-12);
    }
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
    auto x = Tensor::vector({0.5, -1.0, 2.0}, true);
    backward(sum(softmax(x)));
    for (double g : x.grad()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Backward, SumGivesOnes) {
    auto x = Tensor({2, 2}, {1, 2, 3, 4}, true);
    backward(sum(x));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceX) {
    auto x = Tensor::vector({1, 2, 3}, true);
    backward(sum(mul(x, x)));
    expect_values(Tensor::vector(std::vector<double>(x.grad().begin(), x.grad().end())), {2, 4, 6});
}

TEST(Backward, NonScalarRootIsContractError) {
    auto x = Tensor::vector({1, 2}, true);
    EXPECT_THROW(backward(mul(x, x)), ContractError);
}

TEST(Backward, TwoSweepsDoubleTheGradientExactly) {
    std::mt19937_64 rng(4);
    auto w = random_tensor({3, 3}, rng);
    auto x = random_tensor({2, 3}, rng);
    auto loss = sum(tanh(matmul(x, w)));
    backward(loss);
    auto once = std::vector<double>(w.grad().begin(), w.grad().end());
    backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(w.grad()[i], 2.0 * once[i]);
}

TEST(Backward, ReusedInputAccumulates) {
    auto x = Tensor::vector({3.0}, true);
    backward(add(mul(x, x), scale(x, 2.0))); // x^2 + 2x
    EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    auto x = Tensor::vector({1.0, 2.0}, true);
    const auto before = tape_op_count();
    {
        NoGradGuard guard;
        auto y = sum(mul(x, x));
        EXPECT_FALSE(y.requires_grad());
    }
    EXPECT_EQ(tape_op_count(), before);
}

TEST(GradientCheck, LinearIsExact) {
    std::mt19937_64 rng(6);
    auto x = random_tensor({5}, rng);
    EXPECT_LT(gradient_check([](const Tensor& t) { return sum(t); }, x, 1e-5), 1e-10);
}

TEST(GradientCheck, QuadraticIsExactToRounding) {
    auto x = Tensor::vector({1, 2, 3}, true);
    EXPECT_LT(gradient_check([](const Tensor& t) { return sum(mul(t, t)); }, x, 1e-5), 1e-7);
}

TEST(GradientCheck, DetectsAWrongGradient) {
    // exp(x) - x has the same value as exp(x) - detach(x) but not the same gradient.
    auto x = Tensor::vector({0.3, -0.2}, true);
    auto err = gradient_check([](const Tensor& t) { return sum(sub(exp(t), t.detach())); }, x, 1e-5);
    EXPECT_GT(err, 1e-2);
}

// Every differentiable op on randomized small inputs, 100 seeds each.
TEST(GradientCheck, EveryOperationOverOneHundredSeeds) {
    using Fn = std::function<Tensor(const std::vector<Tensor>&)>;
    struct Case {
        const char* name;
        std::vector<Shape> shapes;
        Fn f;
        double lo = -1.0, hi = 1.0;
    };
    auto w34 = Tensor({3, 4}, {0.3, -0.1, 0.7, 0.2, -0.5, 0.9, 0.4, -0.8, 0.6, 0.1, -0.3, 0.5});
    auto readout = [&](const Tensor& y) { return sum(mul(reshape(y, {3, 4}), w34)); };
    const std::vector<Case> cases = {
        {"matmul", {{3, 2}, {2, 4}}, [&](auto& in) { return readout(matmul(in[0], in[1])); }},
        {"add", {{3, 4}, {3, 4}}, [&](auto& in) { return readout(add(in[0], in[1])); }},
        {"sub", {{3, 4}, {3, 4}}, [&](auto& in) { return readout(sub(in[0], in[1])); }},
        {"mul", {{3, 4}, {3, 4}}, [&](auto& in) { return readout(mul(in[0], in[1])); }},
        {"add_bias", {{3, 4}, {4}}, [&](auto& in) { return readout(add_bias(in[0], in[1])); }},
        {"tanh", {{3, 4}}, [&](auto& in) { return readout(tanh(in[0])); }},
        {"sigmoid", {{3, 4}}, [&](auto& in) { return readout(sigmoid(in[0])); }},
        {"relu", {{3, 4}}, [&](auto& in) { return readout(relu(in[0])); }, 0.1, 1.0},
        {"exp", {{3, 4}}, [&](auto& in) { return readout(exp(in[0])); }},
        {"log", {{3, 4}}, [&](auto& in) { return readout(log(in[0])); }, 0.2, 2.0},
        {"transpose", {{4, 3}}, [&](auto& in) { return readout(transpose(in[0])); }},
        {"concat", {{1, 4}, {2, 4}}, [&](auto& in) { return readout(concat({in[0], in[1]}, 0)); }},
        {"slice", {{3, 6}}, [&](auto& in) { return readout(slice(in[0], 1, 1, 5)); }},
        {"sum axis", {{3, 4, 2}}, [&](auto& in) { return readout(sum(in[0], 2)); }},
        {"mean axis", {{3, 2, 4}}, [&](auto& in) { return readout(mean(in[0], 1)); }},
        {"mean", {{3, 4}}, [&](auto& in) { return mul(mean(in[0]), sum(in[0])); }},
        {"softmax", {{3, 4}}, [&](auto& in) { return readout(softmax(in[0], 1)); }},
        {"layer_norm", {{3, 4}, {4}, {4}}, [&](auto& in) { return readout(layer_norm(in[0], in[1], in[2], 1e-5)); }},
        {"cosine", {{5}, {5}}, [&](auto& in) { return cosine_similarity(in[0], in[1]); }},
    };
    for (const auto& c : cases) {
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            std::mt19937_64 rng(seed);
            std::vector<Tensor> inputs;
            for (const auto& s : c.shapes) {
                auto t = random_tensor(s, rng, c.lo, c.hi);
                if (std::string(c.name) == "relu") {
                    std::bernoulli_distribution flip(0.5);
                    for (double& v : t.mutable_data()) v = flip(rng) ? -v : v;
                }
                inputs.push_back(t);
            }
            auto r = gradient_check_all([&] { return c.f(inputs); }, inputs, 1e-5);
            worst = std::max(worst, r.max_relative_error);
        }
        EXPECT_LT(worst, 1e-4) << c.name;
    }
}

TEST(Shapes, ReshapeRejectsSizeChange) { EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4, 2}), ShapeError); }

TEST(Shapes, SliceOutOfRange) { EXPECT_THROW(slice(Tensor::zeros({2, 3}), 1, 2, 4), ShapeError); }

TEST(Shapes, ConcatChecksOtherAxes) {
    EXPECT_THROW(concat({Tensor::zeros({2, 3}), Tensor::zeros({2, 4})}, 0), ShapeError);
    EXPECT_EQ(concat({Tensor::zeros({2, 3}), Tensor::zeros({2, 4})}, 1).shape(), (Shape{2, 7}));
}

TEST(Shapes, LogOfNonPositiveIsNumericError) { EXPECT_THROW(log(Tensor::vector({1.0, 0.0})), NumericError); }

TEST(Snapshot, RoundTripIsBitwise) {
    ParameterStore store(9);
    store.create("a.weight", {3, 2}, 3);
    store.create("b", {4}, 4);
    std::stringstream buf;
    std::vector<NamedTensor> tensors;
    for (const auto& p : store.all()) tensors.push_back({p.name, p.tensor});
    write_snapshot(buf, tensors);
    auto back = read_snapshot(buf);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].name, tensors[i].name);
        EXPECT_EQ(back[i].tensor.shape(), tensors[i].tensor.shape());
        EXPECT_EQ(back[i].tensor.to_vector(), tensors[i].tensor.to_vector());
    }
}

TEST(Snapshot, HeaderLayout) {
    std::stringstream buf;
    std::vector<NamedTensor> tensors = {{"x", Tensor::vector({1.0})}};
    write_snapshot(buf, tensors);
    const std::string bytes = buf.str();
    ASSERT_EQ(bytes.size(), 4u + 1u + 4u + 1u + 4u + 8u + 8u);
    EXPECT_EQ(bytes.substr(0, 4), "VCHG");
    EXPECT_EQ(static_cast<int>(bytes[4]), 1);
    EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 1u); // name length, little endian
    EXPECT_EQ(bytes[9], 'x');
    double v;
    std::memcpy(&v, bytes.data() + bytes.size() - 8, 8);
    EXPECT_EQ(v, 1.0);
}

TEST(Snapshot, RejectsBadMagic) {
    std::stringstream buf("NOPE\x01");
    EXPECT_THROW(read_snapshot(buf), ContractError);
}

TEST(Parameters, InitIsDeterministicAndBounded) {
    ParameterStore a(5), b(5), c(6);
    auto wa = a.create("layer.weight", {8, 4}, 8);
    auto wb = b.create("layer.weight", {8, 4}, 8);
    auto wc = c.create("layer.weight", {8, 4}, 8);
    EXPECT_EQ(wa.to_vector(), wb.to_vector());
    EXPECT_NE(wa.to_vector(), wc.to_vector());
    const double bound = 1.0 / std::sqrt(8.0);
    for (double v : wa.data()) EXPECT_LE(std::abs(v), bound);
    EXPECT_TRUE(wa.requires_grad());
}

TEST(Parameters, NamesAreUnique) {
    ParameterStore s(1);
    s.create("w", {2}, 2);
    EXPECT_THROW(s.create("w", {2}, 2), ContractError);
}

TEST(Parameters, InitDependsOnNameNotCreationOrder) {
    ParameterStore a(3), b(3);
    a.create("first", {4}, 4);
    auto wa = a.create("second", {4}, 4);
    auto wb = b.create("second", {4}, 4);
    EXPECT_EQ(wa.to_vector(), wb.to_vector());
}
