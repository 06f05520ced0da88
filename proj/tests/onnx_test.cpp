#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "anomex/onnx.hpp"
#include "anomex/raster_io.hpp"
#include "test_support.hpp"

#ifndef ANOMEX_TEST_DATA
#define ANOMEX_TEST_DATA "tests/data"
#endif

using namespace anomex;
using namespace anomex::onnx;
using Attr = ModelBuilder::Attr;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t;
  t.shape = std::move(shape);
  t.data.resize(t.numel());
  for (double& v : t.data) v = static_cast<float>(u(rng));
  return t;
}

Tensor run_single(const ModelBuilder& b, const std::string& in, const Tensor& x) {
  const Interpreter interp(parse_model(b.serialize()));
  return interp.run({{in, x}}).front();
}

}  // namespace

TEST(Onnx, BuilderRoundTripPreservesInterface) {
  ModelBuilder b;
  b.input("x", {-1, 3, 8, 8}).output("y", {-1, 3, 8, 8}).node("Identity", {"x"}, {"y"});
  const Model m = parse_model(b.serialize());
  ASSERT_EQ(m.graph.inputs.size(), 1u);
  EXPECT_EQ(m.graph.inputs[0].name, "x");
  EXPECT_EQ(m.graph.inputs[0].dims, (std::vector<std::int64_t>{-1, 3, 8, 8}));
  EXPECT_EQ(m.graph.nodes.at(0).op_type, "Identity");
  EXPECT_EQ(m.opset, 13);
}

TEST(Onnx, RejectsUnsupportedOperator) {
  ModelBuilder b;
  b.input("x", {1}).output("y", {1}).node("Softmax", {"x"}, {"y"});
  EXPECT_THROW(Interpreter(parse_model(b.serialize())), ModelError);
}

TEST(Onnx, RejectsGarbage) {
  EXPECT_THROW(parse_model(std::string("\xff\xff\xff\xff\xff", 5)), ModelError);
}

TEST(Onnx, ConvMatchesDirectSum) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({1, 2, 7, 6}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor bias = random_tensor({3}, rng);
  ModelBuilder b;
  b.input("x", {1, 2, 7, 6}).output("y", {1, 3, 4, 3});
  b.initializer("w", w.shape, w.data).initializer("b", bias.shape, bias.data);
  b.node("Conv", {"x", "w", "b"}, {"y"},
         {Attr{"strides", std::vector<std::int64_t>{2, 2}}, Attr{"pads", std::vector<std::int64_t>{1, 1, 1, 1}}});
  const Tensor y = run_single(b, "x", x);
  ASSERT_EQ(y.shape, (std::vector<std::int64_t>{1, 3, 4, 3}));
  for (int m = 0; m < 3; ++m) {
    for (int oy = 0; oy < 4; ++oy) {
      for (int ox = 0; ox < 3; ++ox) {
        double acc = bias.data[m];
        for (int c = 0; c < 2; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
              acc += x.data[(c * 7 + iy) * 6 + ix] * w.data[((m * 2 + c) * 3 + ky) * 3 + kx];
            }
          }
        }
        EXPECT_NEAR(y.data[(m * 4 + oy) * 3 + ox], acc, 1e-12);
      }
    }
  }
}

TEST(Onnx, ConvTransposeIsAdjointOfConv) {
  // <conv(x), y> == <x, convT(y)> for matching geometry and no bias.
  std::mt19937_64 rng(2);
  const Tensor w = random_tensor({2, 3, 4, 4}, rng);  // conv: 3 -> 2 ; convT: 2 -> 3
  const Tensor x = random_tensor({1, 3, 8, 8}, rng);
  const Tensor y = random_tensor({1, 2, 4, 4}, rng);
  const std::vector<Attr> geo{Attr{"strides", std::vector<std::int64_t>{2, 2}},
                              Attr{"pads", std::vector<std::int64_t>{1, 1, 1, 1}}};
  ModelBuilder fwd;
  fwd.input("x", {1, 3, 8, 8}).output("y", {1, 2, 4, 4}).initializer("w", w.shape, w.data);
  fwd.node("Conv", {"x", "w"}, {"y"}, geo);
  ModelBuilder adj;
  adj.input("y", {1, 2, 4, 4}).output("x", {1, 3, 8, 8}).initializer("w", w.shape, w.data);
  adj.node("ConvTranspose", {"y", "w"}, {"x"}, geo);
  const Tensor cx = run_single(fwd, "x", x);
  const Tensor ty = run_single(adj, "y", y);
  ASSERT_EQ(ty.shape, x.shape);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.data.size(); ++i) lhs += cx.data[i] * y.data[i];
  for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * ty.data[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Onnx, GemmAndActivations) {
  ModelBuilder b;
  b.input("x", {1, 3}).output("y", {1, 2});
  b.initializer("w", {2, 3}, {1, 2, 3, -1, 0, 1}).initializer("c", {2}, {0.5, -0.5});
  b.node("Gemm", {"x", "w", "c"}, {"h"}, {Attr{"transB", std::int64_t{1}}, Attr{"alpha", 2.0}});
  b.node("LeakyRelu", {"h"}, {"y"}, {Attr{"alpha", 0.1}});
  const Tensor y = run_single(b, "x", Tensor{{1, 3}, {1, 1, 1}});
  // h = 2 * [6, 0] + [0.5, -0.5] = [12.5, -0.5]
  EXPECT_NEAR(y.data[0], 12.5, 1e-12);
  EXPECT_NEAR(y.data[1], -0.05, 1e-7);
}

TEST(Onnx, ReshapeTransposeConcat) {
  ModelBuilder b;
  b.input("x", {2, 3}).output("y", {3, 4});
  b.initializer("s", {2}, {3, 2}, DataType::int64);
  b.node("Transpose", {"x"}, {"t"}, {Attr{"perm", std::vector<std::int64_t>{1, 0}}});
  b.node("Reshape", {"x", "s"}, {"r"});
  b.node("Concat", {"t", "r"}, {"y"}, {Attr{"axis", std::int64_t{1}}});
  const Tensor y = run_single(b, "x", Tensor{{2, 3}, {1, 2, 3, 4, 5, 6}});
  EXPECT_EQ(y.shape, (std::vector<std::int64_t>{3, 4}));
  EXPECT_EQ(y.data, (std::vector<double>{1, 4, 1, 2, 2, 5, 3, 4, 3, 6, 5, 6}));
}

TEST(Onnx, BatchNormFormula) {
  ModelBuilder b;
  b.input("x", {1, 2, 1, 2}).output("y", {1, 2, 1, 2});
  b.initializer("g", {2}, {2, 1}).initializer("b", {2}, {0, 1});
  b.initializer("m", {2}, {1, 0}).initializer("v", {2}, {4, 1});
  b.node("BatchNormalization", {"x", "g", "b", "m", "v"}, {"y"}, {Attr{"epsilon", 0.0}});
  const Tensor y = run_single(b, "x", Tensor{{1, 2, 1, 2}, {3, 5, 2, -2}});
  EXPECT_EQ(y.data, (std::vector<double>{2, 4, 3, -1}));
}

TEST(Onnx, PytorchExportParity) {
  const std::string dir = ANOMEX_TEST_DATA;
  const Interpreter interp(load_model(dir + "/tiny_autoencoder.onnx"));
  const auto x = load_f32<RgbImage>(dir + "/tiny_autoencoder_input.f32");
  const auto expected = load_f32<RgbImage>(dir + "/tiny_autoencoder_output.f32");
  Tensor t;
  t.shape = {1, 3, 16, 16};
  t.data.resize(768);
  for (std::size_t p = 0; p < 256; ++p) {
    for (std::size_t c = 0; c < 3; ++c) t.data[c * 256 + p] = x.at_pixel(p, c);
  }
  const auto inputs = interp.runtime_inputs();
  ASSERT_EQ(inputs.size(), 1u);
  const Tensor y = interp.run({{inputs[0].name, t}}).front();
  ASSERT_EQ(y.shape, (std::vector<std::int64_t>{1, 3, 16, 16}));
  double worst = 0;
  for (std::size_t p = 0; p < 256; ++p) {
    for (std::size_t c = 0; c < 3; ++c) worst = std::max(worst, std::abs(y.data[c * 256 + p] - expected.at_pixel(p, c)));
  }
  EXPECT_LT(worst, 1e-5);
}
