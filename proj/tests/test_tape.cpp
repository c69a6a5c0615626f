#include "vmr/policy/tape.hpp"

#include <gtest/gtest.h>

#include "vmr/util/rng.hpp"

namespace vmr {
namespace {

using Tp = Tape<double>;
using Mat = Tp::Mat;

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = (uniform_real(rng) - 0.5) * scale;
  return m;
}

// Central finite differences of f against the analytic gradient of a
// scalar-valued graph built by `build`, perturbing every input entry.
void check_gradients(
    const std::vector<Mat>& inputs,
    const std::function<Tp::Var(Tp&, const std::vector<Tp::Var>&)>& build,
    double h = 1e-6, double tol = 1e-5) {
  Tp tape;
  std::vector<Tp::Var> vars;
  for (const Mat& m : inputs) vars.push_back(tape.leaf(m));
  Tp::Var out = build(tape, vars);
  tape.backward(out);

  auto eval = [&](const std::vector<Mat>& xs) {
    Tp t2;
    std::vector<Tp::Var> vs;
    for (const Mat& m : xs) vs.push_back(t2.leaf(m));
    return t2.value(build(t2, vs))(0, 0);
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (int r = 0; r < inputs[k].rows(); ++r) {
      for (int c = 0; c < inputs[k].cols(); ++c) {
        auto plus = inputs;
        auto minus = inputs;
        plus[k](r, c) += h;
        minus[k](r, c) -= h;
        const double fd = (eval(plus) - eval(minus)) / (2 * h);
        const double an = tape.grad(vars[k])(r, c);
        EXPECT_NEAR(an, fd, tol * std::max(1.0, std::abs(fd)))
            << "input " << k << " entry (" << r << "," << c << ")";
      }
    }
  }
}

TEST(TapeOps, MatmulChainGradient) {
  Rng rng = make_rng(1);
  std::vector<Mat> inputs = {random_mat(rng, 3, 4), random_mat(rng, 4, 2),
                             random_mat(rng, 1, 2)};
  check_gradients(inputs, [](Tp& t, const std::vector<Tp::Var>& v) {
    auto y = t.add_rowvec(t.matmul(v[0], v[1]), v[2]);
    auto r = t.relu(y);
    return t.pick(t.matmul(t.mean_rows(r), t.transpose(t.mean_rows(r))), 0, 0);
  });
}

TEST(TapeOps, SoftmaxGradient) {
  Rng rng = make_rng(2);
  std::vector<Mat> inputs = {random_mat(rng, 3, 5, 2.0)};
  check_gradients(inputs, [](Tp& t, const std::vector<Tp::Var>& v) {
    auto p = t.softmax_rows(v[0]);
    return t.pick(t.log(p), 1, 2);
  });
}

TEST(TapeOps, MaskedSoftmaxGradientAndExactZeros) {
  Rng rng = make_rng(3);
  Mat mask(2, 4);
  mask << 1, 0, 1, 1, 0, 1, 1, 0;
  {
    Tp tape;
    auto s = tape.leaf(random_mat(rng, 2, 4, 2.0));
    auto p = tape.softmax_rows(s, &mask);
    EXPECT_EQ(tape.value(p)(0, 1), 0.0);
    EXPECT_EQ(tape.value(p)(1, 0), 0.0);
    EXPECT_EQ(tape.value(p)(1, 3), 0.0);
    EXPECT_NEAR(tape.value(p).row(0).sum(), 1.0, 1e-12);
    EXPECT_NEAR(tape.value(p).row(1).sum(), 1.0, 1e-12);
  }
  std::vector<Mat> inputs = {random_mat(rng, 2, 4, 2.0)};
  check_gradients(inputs, [mask](Tp& t, const std::vector<Tp::Var>& v) {
    auto p = t.softmax_rows(v[0], &mask);
    return t.pick(t.log(p), 0, 2);
  });
}

TEST(TapeOps, LayerNormGradient) {
  Rng rng = make_rng(4);
  std::vector<Mat> inputs = {random_mat(rng, 3, 6, 2.0), random_mat(rng, 1, 6),
                             random_mat(rng, 1, 6)};
  check_gradients(
      inputs,
      [](Tp& t, const std::vector<Tp::Var>& v) {
        auto y = t.layer_norm(v[0], v[1], v[2]);
        return t.pick(t.matmul(t.mean_rows(y), t.transpose(t.mean_rows(y))), 0,
                      0);
      },
      1e-6, 1e-4);
}

TEST(TapeOps, EntropyGradient) {
  Rng rng = make_rng(5);
  std::vector<Mat> inputs = {random_mat(rng, 1, 6, 2.0)};
  check_gradients(inputs, [](Tp& t, const std::vector<Tp::Var>& v) {
    auto p = t.softmax_rows(v[0]);
    return t.entropy_row(p);
  });
}

TEST(TapeOps, ClampMinExpGradients) {
  Rng rng = make_rng(6);
  std::vector<Mat> inputs = {random_mat(rng, 1, 1), random_mat(rng, 1, 1)};
  check_gradients(inputs, [](Tp& t, const std::vector<Tp::Var>& v) {
    auto r = t.exp(t.sub(v[0], v[1]));
    auto clipped = t.clamp(r, 0.8, 1.2);
    return t.min_elem(t.scale(r, 0.7), t.mul_elem(clipped, v[1]));
  });
}

TEST(TapeOps, ConcatSliceGradients) {
  Rng rng = make_rng(7);
  std::vector<Mat> inputs = {random_mat(rng, 2, 3), random_mat(rng, 2, 3),
                             random_mat(rng, 3, 3)};
  check_gradients(inputs, [](Tp& t, const std::vector<Tp::Var>& v) {
    auto h = t.hconcat({v[0], v[1]});
    auto stacked = t.vconcat(h, t.hconcat({v[2], t.scale(v[2], 2.0)}));
    auto part = t.slice_cols(t.slice_rows(stacked, 1, 3), 2, 3);
    auto pooled = t.mean_rows(part);
    return t.pick(t.matmul(pooled, t.transpose(pooled)), 0, 0);
  });
}

TEST(TapeOps, SelectRowGradient) {
  Rng rng = make_rng(8);
  std::vector<Mat> inputs = {random_mat(rng, 4, 3)};
  check_gradients(inputs, [](Tp& t, const std::vector<Tp::Var>& v) {
    auto row = t.select_row(v[0], 2);
    return t.pick(t.matmul(row, t.transpose(row)), 0, 0);
  });
}

TEST(TapeOps, BackwardRejectsNonScalar) {
  Tp tape;
  auto a = tape.leaf(Mat::Ones(2, 2));
  EXPECT_THROW(tape.backward(a), InvalidParameter);
}

}  // namespace
}  // namespace vmr
