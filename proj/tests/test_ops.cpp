#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace gmae;
using testutil::random_tensor;

namespace {

constexpr double kTol = 1e-4;

double check(const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
  return grad_check(f, std::move(inputs)).max_rel_error;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Matmul, Identity) {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor id = Tensor::from_rows({{1, 0}, {0, 1}});
  EXPECT_EQ(values(matmul(a, id)), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(matmul(Tensor::scalar(2), Tensor::scalar(3)).item(), 6.0);
}

TEST(Matmul, ShapeErrorListsShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, Gradient) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  EXPECT_LT(check([&] { return sum(matmul(a, b)); }, {a, b}), 1e-6);
}

TEST(Linear, Gradient) {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({5, 3}, rng), w = random_tensor({3, 4}, rng), b = random_tensor({1, 4}, rng);
  const Tensor r = random_tensor({5, 4}, rng);
  EXPECT_LT(check([&] { return loss_mse(linear(x, w, b), r); }, {x, w, b}), kTol);
}

TEST(Softmax, Basics) {
  EXPECT_EQ(values(softmax_lastdim(Tensor({1, 2}, {0.0, 0.0}))), (std::vector<double>{0.5, 0.5}));
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({4, 7}, rng, 3.0);
  Tensor shifted = x.clone();
  for (auto& v : shifted.data()) v += 123.25;
  const Tensor a = softmax_lastdim(x), b = softmax_lastdim(shifted);
  EXPECT_LT(testutil::max_abs_diff(a.data(), b.data()), 1e-12);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) s += a.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, Gradient) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({1, 7}, rng);
  const Tensor w = random_tensor({1, 7}, rng);
  EXPECT_LT(check([&] { return weighted_sum(softmax_lastdim(x), std::vector<double>(w.data().begin(), w.data().end())); }, {x}),
            1e-6);
}

TEST(Softmax, NonFiniteInputIsNumericError) {
  EXPECT_THROW(softmax_lastdim(Tensor({1, 2}, {0.0, std::nan("")})), NumericError);
  EXPECT_THROW(softmax_lastdim(Tensor({1, 2}, {0.0, std::numeric_limits<double>::infinity()})), NumericError);
}

TEST(Softmax, FullyMaskedRowIsZero) {
  const double ninf = -std::numeric_limits<double>::infinity();
  EXPECT_EQ(values(softmax_lastdim(Tensor({1, 2}, {ninf, ninf}))), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(values(softmax_lastdim(Tensor({1, 2}, {ninf, 1.0}))), (std::vector<double>{0.0, 1.0}));
}

TEST(Relu, ValuesAndGradient) {
  EXPECT_EQ(values(relu(Tensor({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({4, 5}, rng);
  const Tensor r = random_tensor({4, 5}, rng);
  EXPECT_LT(check([&] { return loss_mse(relu(x), r); }, {x}), kTol);
}

TEST(Add, BroadcastGradient) {
  std::mt19937_64 rng(6);
  Tensor a = random_tensor({4, 3}, rng), b = random_tensor({1, 3}, rng), c = random_tensor({4, 3}, rng);
  const Tensor r = random_tensor({4, 3}, rng);
  EXPECT_LT(check([&] { return loss_mse(add(add(a, b), c), r); }, {a, b, c}), kTol);
  EXPECT_THROW(add(Tensor({2, 3}), Tensor({3, 2})), ShapeError);
}

TEST(Scale, Gradient) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({3, 3}, rng);
  const Tensor r = random_tensor({3, 3}, rng);
  EXPECT_LT(check([&] { return loss_mse(scale(x, -1.7), r); }, {x}), kTol);
}

TEST(LayerNorm, ConstantRowGivesZero) {
  const Tensor out = layer_norm(Tensor({1, 4}, 3.0), Tensor({1, 4}, 1.0), Tensor({1, 4}, 0.0));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, Gradient) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({4, 6}, rng), g = random_tensor({1, 6}, rng), b = random_tensor({1, 6}, rng);
  const Tensor r = random_tensor({4, 6}, rng);
  EXPECT_LT(check([&] { return loss_mse(layer_norm(x, g, b), r); }, {x, g, b}), kTol);
}

TEST(Embedding, LookupAndScatteredGradient) {
  const Tensor table = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const std::vector<std::size_t> ids{2, 0, 2};
  EXPECT_EQ(values(embedding_lookup(table, ids)), (std::vector<double>{5, 6, 1, 2, 5, 6}));
  EXPECT_THROW(embedding_lookup(table, std::vector<std::size_t>{3}), IndexError);
  std::mt19937_64 rng(9);
  Tensor t = random_tensor({3, 2}, rng);
  const Tensor r = random_tensor({3, 2}, rng);
  EXPECT_LT(check([&] { return loss_mse(embedding_lookup(t, ids), r); }, {t}), kTol);
}

TEST(GatherRows, Gradient) {
  std::mt19937_64 rng(10);
  Tensor x = random_tensor({5, 3}, rng);
  const std::vector<std::size_t> ids{4, 1, 1};
  const Tensor r = random_tensor({3, 3}, rng);
  EXPECT_LT(check([&] { return loss_mse(gather_rows(x, ids), r); }, {x}), kTol);
}

TEST(ScatterRows, PlacesAndZeroFills) {
  const Tensor x = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor out = scatter_rows(x, std::vector<std::size_t>{2, 0}, 3);
  EXPECT_EQ(values(out), (std::vector<double>{3, 4, 0, 0, 1, 2}));
  std::mt19937_64 rng(11);
  Tensor y = random_tensor({2, 3}, rng);
  const Tensor r = random_tensor({4, 3}, rng);
  EXPECT_LT(check([&] { return loss_mse(scatter_rows(y, std::vector<std::size_t>{3, 1}, 4), r); }, {y}), kTol);
}

TEST(ComposeRows, TokenAndZeroRows) {
  const Tensor x = Tensor::from_rows({{1, 1}, {2, 2}});
  const Tensor tok = Tensor::from_rows({{9, 8}});
  const std::vector<std::int64_t> src{1, kTokenRow, kZeroRow, 0, kTokenRow};
  EXPECT_EQ(values(compose_rows(x, tok, src)), (std::vector<double>{2, 2, 9, 8, 0, 0, 1, 1, 9, 8}));
  std::mt19937_64 rng(12);
  Tensor a = random_tensor({2, 3}, rng), t = random_tensor({1, 3}, rng);
  const Tensor r = random_tensor({5, 3}, rng);
  EXPECT_LT(check([&] { return loss_mse(compose_rows(a, t, src), r); }, {a, t}), kTol);
}

TEST(MeanRows, ValuesAndGradient) {
  EXPECT_EQ(values(mean_rows(Tensor::from_rows({{1, 2}, {3, 4}}))), (std::vector<double>{2, 3}));
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({4, 3}, rng);
  const Tensor r = random_tensor({1, 3}, rng);
  EXPECT_LT(check([&] { return loss_mse(mean_rows(x), r); }, {x}), kTol);
}

TEST(SegmentMean, IgnoresPadding) {
  const Tensor x = Tensor::from_rows({{1, 1}, {3, 3}, {100, 100}, {5, 7}, {50, 50}, {60, 60}});
  const std::vector<std::size_t> counts{2, 1};
  EXPECT_EQ(values(segment_mean(x, 3, counts)), (std::vector<double>{2, 2, 5, 7}));
  std::mt19937_64 rng(14);
  Tensor y = random_tensor({6, 2}, rng);
  const Tensor r = random_tensor({2, 2}, rng);
  EXPECT_LT(check([&] { return loss_mse(segment_mean(y, 3, counts), r); }, {y}), kTol);
}

TEST(Dropout, RateZeroIsIdentityAndGradientMatchesMask) {
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor({3, 4}, rng);
  EXPECT_EQ(values(dropout(x, 0.0, rng)), values(x));
  Tensor y = random_tensor({3, 4}, rng);
  const Tensor r = random_tensor({3, 4}, rng);
  const std::uint64_t seed = rng();
  EXPECT_LT(check(
                [&] {
                  std::mt19937_64 local(seed);
                  return loss_mse(dropout(y, 0.5, local), r);
                },
                {y}),
            kTol);
}

TEST(Losses, Values) {
  const Tensor x = Tensor::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(loss_mse(x, x).item(), 0.0);
  EXPECT_EQ(loss_l1(x, x).item(), 0.0);
  EXPECT_NEAR(loss_cross_entropy(Tensor::from_rows({{0, 0}}), std::vector<std::size_t>{0}).item(), std::log(2.0), 1e-15);
  EXPECT_THROW(loss_cross_entropy(Tensor::from_rows({{0, 0}}), std::vector<std::size_t>{2}), IndexError);
  const Tensor shifted = Tensor::from_rows({{2, 3}, {4, 5}});
  EXPECT_DOUBLE_EQ(loss_l1(shifted, x).item(), 1.0);
  EXPECT_DOUBLE_EQ(loss_mse(shifted, x).item(), 1.0);
}

TEST(Losses, Gradients) {
  std::mt19937_64 rng(16);
  Tensor p = random_tensor({4, 3}, rng);
  const Tensor t = random_tensor({4, 3}, rng);
  EXPECT_LT(check([&] { return loss_mse(p, t); }, {p}), 1e-5);
  EXPECT_LT(check([&] { return loss_l1(p, t); }, {p}), 1e-5);
  const std::vector<std::size_t> labels{0, 2, 1, 2};
  EXPECT_LT(check([&] { return loss_cross_entropy(p, labels); }, {p}), 1e-5);
  EXPECT_LT(check([&] { return loss_cross_entropy(p, labels, {0.1, 0.0, 0.5, 0.4}); }, {p}), 1e-5);
}

TEST(Attention, NaiveLoopOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 6, heads = 1 + rng() % 3, dh = 1 + rng() % 3, d = heads * dh;
    const Tensor q = random_tensor({n, d}, rng), k = random_tensor({n, d}, rng), v = random_tensor({n, d}, rng);
    const Tensor bias = random_tensor({1, heads, n, n}, rng);
    const Tensor out = attention_core(q, k, v, bias, heads);
    for (std::size_t a = 0; a < heads; ++a)
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> logits(n);
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q.at(i, a * dh + c) * k.at(j, a * dh + c);
          logits[j] = s / std::sqrt(double(dh)) + bias[(a * n + i) * n + j];
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (auto& l : logits) z += (l = std::exp(l - mx));
        for (std::size_t c = 0; c < dh; ++c) {
          double o = 0.0;
          for (std::size_t j = 0; j < n; ++j) o += logits[j] / z * v.at(j, a * dh + c);
          EXPECT_NEAR(out.at(i, a * dh + c), o, 1e-12);
        }
      }
  }
}

TEST(Attention, Gradient) {
  std::mt19937_64 rng(18);
  Tensor q = random_tensor({4, 6}, rng), k = random_tensor({4, 6}, rng), v = random_tensor({4, 6}, rng);
  Tensor bias = random_tensor({1, 2, 4, 4}, rng);
  const Tensor r = random_tensor({4, 6}, rng);
  EXPECT_LT(check([&] { return loss_mse(attention_core(q, k, v, bias, 2), r); }, {q, k, v, bias}), kTol);
}

TEST(Attention, PaddedBatchGradient) {
  std::mt19937_64 rng(19);
  const double ninf = -std::numeric_limits<double>::infinity();
  Tensor q = random_tensor({6, 4}, rng), k = random_tensor({6, 4}, rng), v = random_tensor({6, 4}, rng);
  Tensor bias = random_tensor({2, 2, 3, 3}, rng);
  // second graph has 2 real rows; row/col 2 of block 1 is padding
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t i = 0; i < 3; ++i) {
      bias[((2 + a) * 3 + i) * 3 + 2] = ninf;
      bias[((2 + a) * 3 + 2) * 3 + i] = ninf;
    }
  const Tensor r = random_tensor({6, 4}, rng);
  const Tensor out = attention_core(q, k, v, bias, 2);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out.at(5, c), 0.0);
  std::vector<double> w(24, 1.0);
  for (std::size_t c = 0; c < 4; ++c) w[5 * 4 + c] = 0.0;
  EXPECT_LT(check([&] { return weighted_sum(attention_core(q, k, v, bias, 2), w); }, {q, k, v}), kTol);
}
