#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "vmr/util/errors.hpp"

namespace vmr {

// Reverse-mode autodiff over dense matrices. A graph is built forward by
// value; backward() walks nodes in reverse creation order (a valid
// topological order by construction). Graphs are per-sample and cheap to
// rebuild, which keeps the engine free of retain/release bookkeeping.
template <typename T>
class Tape {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

  struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
  };

  const Mat& value(Var v) const { return nodes_[v.i].value; }
  const Mat& grad(Var v) const { return nodes_[v.i].grad; }

  Var constant(Mat m) { return push(std::move(m), false, {}); }

  // Leaf with gradient tracking (model parameters, inputs under test).
  Var leaf(Mat m) { return push(std::move(m), true, {}); }

  Var matmul(Var a, Var b) {
    Mat out = nodes_[a.i].value * nodes_[b.i].value;
    return push(std::move(out), needs(a, b), [this, a, b](const Mat& g) {
      if (nodes_[a.i].needs_grad)
        nodes_[a.i].grad.noalias() += g * nodes_[b.i].value.transpose();
      if (nodes_[b.i].needs_grad)
        nodes_[b.i].grad.noalias() += nodes_[a.i].value.transpose() * g;
    });
  }

  Var transpose(Var a) {
    return push(nodes_[a.i].value.transpose(), needs(a),
                [this, a](const Mat& g) {
                  if (nodes_[a.i].needs_grad)
                    nodes_[a.i].grad += g.transpose();
                });
  }

  Var add(Var a, Var b) {
    return push(nodes_[a.i].value + nodes_[b.i].value, needs(a, b),
                [this, a, b](const Mat& g) {
                  if (nodes_[a.i].needs_grad) nodes_[a.i].grad += g;
                  if (nodes_[b.i].needs_grad) nodes_[b.i].grad += g;
                });
  }

  Var sub(Var a, Var b) {
    return push(nodes_[a.i].value - nodes_[b.i].value, needs(a, b),
                [this, a, b](const Mat& g) {
                  if (nodes_[a.i].needs_grad) nodes_[a.i].grad += g;
                  if (nodes_[b.i].needs_grad) nodes_[b.i].grad -= g;
                });
  }

  // Broadcast a 1 x d row vector over every row of a.
  Var add_rowvec(Var a, Var bias) {
    Mat out = nodes_[a.i].value.rowwise() + nodes_[bias.i].value.row(0);
    return push(std::move(out), needs(a, bias), [this, a, bias](const Mat& g) {
      if (nodes_[a.i].needs_grad) nodes_[a.i].grad += g;
      if (nodes_[bias.i].needs_grad)
        nodes_[bias.i].grad.row(0) += g.colwise().sum();
    });
  }

  Var scale(Var a, T s) {
    return push(nodes_[a.i].value * s, needs(a), [this, a, s](const Mat& g) {
      if (nodes_[a.i].needs_grad) nodes_[a.i].grad += g * s;
    });
  }

  Var mul_elem(Var a, Var b) {
    Mat out = nodes_[a.i].value.cwiseProduct(nodes_[b.i].value);
    return push(std::move(out), needs(a, b), [this, a, b](const Mat& g) {
      if (nodes_[a.i].needs_grad)
        nodes_[a.i].grad += g.cwiseProduct(nodes_[b.i].value);
      if (nodes_[b.i].needs_grad)
        nodes_[b.i].grad += g.cwiseProduct(nodes_[a.i].value);
    });
  }

  Var relu(Var a) {
    relu_margin_ = std::min(relu_margin_,
                            nodes_[a.i].value.cwiseAbs().minCoeff());
    Mat out = nodes_[a.i].value.cwiseMax(T(0));
    return push(std::move(out), needs(a), [this, a](const Mat& g) {
      if (!nodes_[a.i].needs_grad) return;
      nodes_[a.i].grad += g.cwiseProduct(
          (nodes_[a.i].value.array() > T(0)).template cast<T>().matrix());
    });
  }

  // Smallest |x| ever fed to a relu on this tape. Finite-difference
  // checks are ill-posed when a perturbation can cross the kink; callers
  // use this to reject such draws.
  T relu_input_min_abs() const { return relu_margin_; }

  Var exp(Var a) {
    Mat out = nodes_[a.i].value.array().exp().matrix();
    const int self = next_index();
    return push(std::move(out), needs(a), [this, a, self](const Mat& g) {
      if (nodes_[a.i].needs_grad)
        nodes_[a.i].grad += g.cwiseProduct(nodes_[self].value);
    });
  }

  Var log(Var a) {
    Mat out = nodes_[a.i].value.array().log().matrix();
    return push(std::move(out), needs(a), [this, a](const Mat& g) {
      if (!nodes_[a.i].needs_grad) return;
      // Zero upstream entries stay zero even when the input is zero
      // (exact-zero masked probabilities would otherwise yield 0/0).
      nodes_[a.i].grad += g.binaryExpr(
          nodes_[a.i].value,
          [](T gv, T v) { return gv == T(0) ? T(0) : gv / v; });
    });
  }

  Var clamp(Var a, T lo, T hi) {
    Mat out = nodes_[a.i].value.cwiseMax(lo).cwiseMin(hi);
    return push(std::move(out), needs(a), [this, a, lo, hi](const Mat& g) {
      if (!nodes_[a.i].needs_grad) return;
      const auto& v = nodes_[a.i].value.array();
      nodes_[a.i].grad +=
          g.cwiseProduct(((v >= lo) && (v <= hi)).template cast<T>().matrix());
    });
  }

  // Elementwise minimum; gradient follows the smaller side (ties: a).
  Var min_elem(Var a, Var b) {
    Mat out = nodes_[a.i].value.cwiseMin(nodes_[b.i].value);
    return push(std::move(out), needs(a, b), [this, a, b](const Mat& g) {
      Mat pick_a = (nodes_[a.i].value.array() <= nodes_[b.i].value.array())
                       .template cast<T>()
                       .matrix();
      if (nodes_[a.i].needs_grad) nodes_[a.i].grad += g.cwiseProduct(pick_a);
      if (nodes_[b.i].needs_grad)
        nodes_[b.i].grad +=
            g.cwiseProduct((Mat::Ones(pick_a.rows(), pick_a.cols()) - pick_a));
    });
  }

  Var slice_cols(Var a, int c0, int n) {
    Mat out = nodes_[a.i].value.middleCols(c0, n);
    return push(std::move(out), needs(a), [this, a, c0, n](const Mat& g) {
      if (nodes_[a.i].needs_grad)
        nodes_[a.i].grad.middleCols(c0, n) += g;
    });
  }

  Var slice_rows(Var a, int r0, int n) {
    Mat out = nodes_[a.i].value.middleRows(r0, n);
    return push(std::move(out), needs(a), [this, a, r0, n](const Mat& g) {
      if (nodes_[a.i].needs_grad)
        nodes_[a.i].grad.middleRows(r0, n) += g;
    });
  }

  Var vconcat(Var a, Var b) {
    const Mat& va = nodes_[a.i].value;
    const Mat& vb = nodes_[b.i].value;
    Mat out(va.rows() + vb.rows(), va.cols());
    out.topRows(va.rows()) = va;
    out.bottomRows(vb.rows()) = vb;
    const int ra = static_cast<int>(va.rows());
    return push(std::move(out), needs(a, b), [this, a, b, ra](const Mat& g) {
      if (nodes_[a.i].needs_grad) nodes_[a.i].grad += g.topRows(ra);
      if (nodes_[b.i].needs_grad)
        nodes_[b.i].grad += g.bottomRows(g.rows() - ra);
    });
  }

  Var hconcat(const std::vector<Var>& parts) {
    int cols = 0;
    const int rows = static_cast<int>(nodes_[parts[0].i].value.rows());
    for (Var p : parts) cols += static_cast<int>(nodes_[p.i].value.cols());
    Mat out(rows, cols);
    int at = 0;
    bool any = false;
    for (Var p : parts) {
      const int c = static_cast<int>(nodes_[p.i].value.cols());
      out.middleCols(at, c) = nodes_[p.i].value;
      at += c;
      any = any || nodes_[p.i].needs_grad;
    }
    auto parts_copy = parts;
    return push(std::move(out), any, [this, parts_copy](const Mat& g) {
      int at = 0;
      for (Var p : parts_copy) {
        const int c = static_cast<int>(nodes_[p.i].value.cols());
        if (nodes_[p.i].needs_grad)
          nodes_[p.i].grad += g.middleCols(at, c);
        at += c;
      }
    });
  }

  Var mean_rows(Var a) {
    const Mat& v = nodes_[a.i].value;
    Mat out = v.colwise().mean();
    const T inv = T(1) / static_cast<T>(v.rows());
    return push(std::move(out), needs(a), [this, a, inv](const Mat& g) {
      if (nodes_[a.i].needs_grad)
        nodes_[a.i].grad += (Mat::Ones(nodes_[a.i].value.rows(), 1) *
                             g.row(0)) *
                            inv;
    });
  }

  Var select_row(Var a, int r) {
    Mat out = nodes_[a.i].value.row(r);
    return push(std::move(out), needs(a), [this, a, r](const Mat& g) {
      if (nodes_[a.i].needs_grad) nodes_[a.i].grad.row(r) += g.row(0);
    });
  }

  Var pick(Var a, int r, int c) {
    Mat out(1, 1);
    out(0, 0) = nodes_[a.i].value(r, c);
    return push(std::move(out), needs(a), [this, a, r, c](const Mat& g) {
      if (nodes_[a.i].needs_grad) nodes_[a.i].grad(r, c) += g(0, 0);
    });
  }

  // Row-wise layer normalization with learnable gain/offset (1 x d each).
  Var layer_norm(Var a, Var gamma, Var beta, T eps = T(1e-5)) {
    const Mat& x = nodes_[a.i].value;
    const int rows = static_cast<int>(x.rows());
    const int cols = static_cast<int>(x.cols());
    auto cache = std::make_shared<std::pair<Mat, Mat>>();  // xhat, inv_sigma
    cache->first.resize(rows, cols);
    cache->second.resize(rows, 1);
    Mat out(rows, cols);
    for (int r = 0; r < rows; ++r) {
      const T mu = x.row(r).mean();
      const T var = (x.row(r).array() - mu).square().mean();
      const T inv_sigma = T(1) / std::sqrt(var + eps);
      cache->second(r, 0) = inv_sigma;
      cache->first.row(r) = ((x.row(r).array() - mu) * inv_sigma).matrix();
      out.row(r) =
          cache->first.row(r).cwiseProduct(nodes_[gamma.i].value.row(0)) +
          nodes_[beta.i].value.row(0);
    }
    return push(std::move(out), needs(a, gamma) || nodes_[beta.i].needs_grad,
                [this, a, gamma, beta, cache](const Mat& g) {
                  const Mat& xhat = cache->first;
                  const int rows = static_cast<int>(g.rows());
                  const int cols = static_cast<int>(g.cols());
                  if (nodes_[gamma.i].needs_grad)
                    nodes_[gamma.i].grad.row(0) +=
                        g.cwiseProduct(xhat).colwise().sum();
                  if (nodes_[beta.i].needs_grad)
                    nodes_[beta.i].grad.row(0) += g.colwise().sum();
                  if (!nodes_[a.i].needs_grad) return;
                  for (int r = 0; r < rows; ++r) {
                    Eigen::Matrix<T, 1, Eigen::Dynamic> gy =
                        g.row(r).cwiseProduct(nodes_[gamma.i].value.row(0));
                    const T mean_gy = gy.mean();
                    const T mean_gy_xhat =
                        gy.cwiseProduct(xhat.row(r)).mean();
                    nodes_[a.i].grad.row(r) +=
                        ((gy.array() - mean_gy -
                          xhat.row(r).array() * mean_gy_xhat) *
                         cache->second(r, 0))
                            .matrix();
                  }
                  (void)cols;
                });
  }

  // Row-wise softmax restricted to mask != 0 entries; masked outputs are
  // exactly zero. The mask is a constant (not differentiated through).
  Var softmax_rows(Var scores, const Mat* mask = nullptr) {
    const Mat& s = nodes_[scores.i].value;
    const int rows = static_cast<int>(s.rows());
    const int cols = static_cast<int>(s.cols());
    Mat out = Mat::Zero(rows, cols);
    for (int r = 0; r < rows; ++r) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < cols; ++c)
        if (!mask || (*mask)(r, c) != T(0)) mx = std::max(mx, s(r, c));
      if (mx == -std::numeric_limits<T>::infinity()) continue;  // empty row
      T sum = T(0);
      for (int c = 0; c < cols; ++c) {
        if (mask && (*mask)(r, c) == T(0)) continue;
        const T e = std::exp(s(r, c) - mx);
        out(r, c) = e;
        sum += e;
      }
      out.row(r) /= sum;
    }
    const int self = next_index();
    return push(std::move(out), needs(scores), [this, scores, self](const Mat& g) {
      if (!nodes_[scores.i].needs_grad) return;
      const Mat& p = nodes_[self].value;
      for (int r = 0; r < g.rows(); ++r) {
        const T dot = g.row(r).cwiseProduct(p.row(r)).sum();
        nodes_[scores.i].grad.row(r) +=
            p.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
      }
    });
  }

  // Entropy of a probability row vector, skipping exact-zero entries.
  Var entropy_row(Var probs) {
    const Mat& p = nodes_[probs.i].value;
    T h = T(0);
    for (int c = 0; c < p.cols(); ++c)
      if (p(0, c) > T(0)) h -= p(0, c) * std::log(p(0, c));
    Mat out(1, 1);
    out(0, 0) = h;
    return push(std::move(out), needs(probs), [this, probs](const Mat& g) {
      if (!nodes_[probs.i].needs_grad) return;
      const Mat& p = nodes_[probs.i].value;
      for (int c = 0; c < p.cols(); ++c)
        if (p(0, c) > T(0))
          nodes_[probs.i].grad(0, c) -= g(0, 0) * (std::log(p(0, c)) + T(1));
    });
  }

  // Seeds d(out)/d(out) = 1 and accumulates gradients into every node.
  void backward(Var out) {
    if (nodes_[out.i].value.size() != 1)
      throw InvalidParameter("backward expects a scalar output");
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad.setZero(n.value.rows(), n.value.cols());
    nodes_[out.i].grad.setZero(1, 1);
    nodes_[out.i].grad(0, 0) = T(1);
    for (int i = out.i; i >= 0; --i) {
      if (!nodes_[i].needs_grad || !nodes_[i].backward) continue;
      if (nodes_[i].grad.size() == 0) continue;
      nodes_[i].backward(nodes_[i].grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(const Mat&)> backward;
    bool needs_grad = false;
  };

  bool needs(Var a) const { return nodes_[a.i].needs_grad; }
  bool needs(Var a, Var b) const {
    return nodes_[a.i].needs_grad || nodes_[b.i].needs_grad;
  }

  int next_index() const { return static_cast<int>(nodes_.size()); }

  Var push(Mat value, bool needs_grad,
           std::function<void(const Mat&)> backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(backward);
    if (needs_grad) n.grad.setZero(n.value.rows(), n.value.cols());
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  T relu_margin_ = std::numeric_limits<T>::infinity();
};

}  // namespace vmr
