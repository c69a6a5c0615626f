#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "vmr/policy/features.hpp"
#include "vmr/policy/model.hpp"

namespace vmr {

// Inference-only forward pass. Same math as the tape path, organized for
// throughput: the quadratic VM self-attention runs fused over key-major
// tiles, and stage-1 tree attention runs block-sparse per PM tree instead
// of dense-masked. Buffers persist across calls so per-step allocation
// settles after the first evaluation.
template <typename T>
class FastPolicy {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  explicit FastPolicy(const PolicyParams<T>& params) : p_(params) {}

  const PolicyParams<T>& params() const { return p_; }

  struct Output {
    Vec vm_probs;       // M, masked entries exactly zero
    Mat vm_embeds;      // M x d
    Mat pm_embeds;      // N x d
    Mat cross_scores;   // M x N head-averaged scaled scores (last block)
    Mat stage1_last;    // (N+M) x d stage-1 sublayer output, last block
    T value = T(0);
    bool any_selectable = false;
  };

  // Full VM-actor pass plus critic value. pm_probs_for() reuses the
  // embeddings cached here.
  const Output& eval(const FeatureTensor<T>& f,
                     const std::vector<std::uint8_t>& vm_mask) {
    const int n = static_cast<int>(f.pm.rows());
    const int m = static_cast<int>(f.vm.rows());
    n_ = n;
    m_ = m;

    build_trees(f.tree, n, m);

    // Shared embedding networks.
    mlp2(f.pm, p_.pm_embed1, p_.pm_embed2, pm_e_);
    mlp2(f.vm, p_.vm_embed1, p_.vm_embed2, vm_e_);

    for (int bi = 0; bi < p_.dims.blocks; ++bi) {
      const BlockP<T>& b = p_.blocks[bi];
      const bool last = bi == p_.dims.blocks - 1;

      // Stage 1: block-sparse attention within each PM tree.
      x_.resize(n + m, p_.dims.embed);
      x_.topRows(n) = pm_e_;
      x_.bottomRows(m) = vm_e_;
      tree_attention(x_, b.tree, s1_);
      s1_ += x_;
      layer_norm_rows(s1_, b.ln_tree);
      if (last) out_.stage1_last = s1_;
      pm_e_ = s1_.topRows(n);
      vm_e_ = s1_.bottomRows(m);

      // Stage 2: self-attention per machine kind.
      vm_self_attention(vm_e_, b.vm_self, t0_);
      t0_ += vm_e_;
      layer_norm_rows(t0_, b.ln_vm);
      vm_e_.swap(t0_);
      plain_attention(pm_e_, pm_e_, b.pm_self, t1_, nullptr);
      t1_ += pm_e_;
      layer_norm_rows(t1_, b.ln_pm);
      pm_e_.swap(t1_);

      // Stage 3: VMs attend to PMs; keep the scores of the last block.
      cross_attention(vm_e_, pm_e_, b.cross, t0_, last ? &out_.cross_scores
                                                       : nullptr);
      t0_ += vm_e_;
      layer_norm_rows(t0_, b.ln_cross);
      vm_e_.swap(t0_);

      // Shared dense head over all machines.
      x_.topRows(n) = pm_e_;
      x_.bottomRows(m) = vm_e_;
      ff(x_, b.ff1, b.ff2, t2_);
      t2_ += x_;
      layer_norm_rows(t2_, b.ln_ff);
      pm_e_ = t2_.topRows(n);
      vm_e_ = t2_.bottomRows(m);
    }

    out_.vm_embeds = vm_e_;
    out_.pm_embeds = pm_e_;

    // VM logits -> masked softmax.
    Vec logits = (vm_e_ * p_.vm_logit.w).col(0);
    logits.array() += p_.vm_logit.b(0, 0);
    out_.any_selectable = masked_softmax(logits, vm_mask, out_.vm_probs);

    // Critic on mean-pooled embeddings.
    Mat pooled(1, 2 * p_.dims.embed);
    pooled.leftCols(p_.dims.embed) = vm_e_.colwise().mean();
    pooled.rightCols(p_.dims.embed) = pm_e_.colwise().mean();
    Mat h = pooled * p_.critic1.w + p_.critic1.b;
    h = h.cwiseMax(T(0));
    out_.value = (h * p_.critic2.w + p_.critic2.b)(0, 0);
    return out_;
  }

  // Destination distribution for the selected VM, reusing cached embeds.
  Vec pm_probs_for(int vm_index, const std::vector<std::uint8_t>& pm_mask) {
    // One-token encoder over the selected VM embedding.
    Mat e = out_.vm_embeds.row(vm_index);
    Mat h;
    plain_attention(e, e, p_.enc_self, h, nullptr);
    h += e;
    layer_norm_rows(h, p_.enc_ln1);
    Mat h2;
    ff(h, p_.enc_ff1, p_.enc_ff2, h2);
    h2 += h;
    layer_norm_rows(h2, p_.enc_ln2);

    // Decoder over PM embeddings with cross attention to the encoder token.
    Mat d = out_.pm_embeds;
    Mat tmp;
    plain_attention(d, d, p_.dec_self, tmp, nullptr);
    tmp += d;
    layer_norm_rows(tmp, p_.dec_ln1);
    d.swap(tmp);
    plain_attention(d, h2, p_.dec_cross, tmp, nullptr);
    tmp += d;
    layer_norm_rows(tmp, p_.dec_ln2);
    d.swap(tmp);
    ff(d, p_.dec_ff1, p_.dec_ff2, tmp);
    tmp += d;
    layer_norm_rows(tmp, p_.dec_ln3);
    d.swap(tmp);

    Vec logits = (d * p_.pm_logit.w).col(0);
    logits.array() += p_.pm_logit.b(0, 0);
    logits += p_.inject_scale(0, 0) *
              out_.cross_scores.row(vm_index).transpose();
    Vec probs;
    masked_softmax(logits, pm_mask, probs);
    return probs;
  }

  const Output& last_output() const { return out_; }
  Output& last_output() { return out_; }

 private:
  void mlp2(const Mat& x, const LinearP<T>& l1, const LinearP<T>& l2,
            Mat& out) const {
    Mat h = x * l1.w;
    h.rowwise() += l1.b.row(0);
    h = h.cwiseMax(T(0));
    out.noalias() = h * l2.w;
    out.rowwise() += l2.b.row(0);
  }

  void ff(const Mat& x, const LinearP<T>& l1, const LinearP<T>& l2,
          Mat& out) const {
    mlp2(x, l1, l2, out);
  }

  void layer_norm_rows(Mat& x, const LayerNormP<T>& ln) const {
    const T eps = T(1e-5);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      auto row = x.row(r).array();
      const T mu = row.mean();
      const T var = (row - mu).square().mean();
      const T inv = T(1) / std::sqrt(var + eps);
      x.row(r) = (((row - mu) * inv) * ln.gamma.row(0).array() +
                  ln.beta.row(0).array())
                     .matrix();
    }
  }

  static void softmax_inplace_col(Eigen::Ref<Vec> col) {
    const T mx = col.maxCoeff();
    col = (col.array() - mx).exp().matrix();
    col /= col.sum();
  }

  // Dense attention for small token counts (PM self, encoder, decoder).
  void plain_attention(const Mat& xq, const Mat& xkv, const AttnP<T>& a,
                       Mat& out, Mat* scores_avg) const {
    const int dh = p_.dims.head_dim();
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    Mat q = xq * a.q.w;
    q.rowwise() += a.q.b.row(0);
    Mat k = xkv * a.k.w;
    k.rowwise() += a.k.b.row(0);
    Mat v = xkv * a.v.w;
    v.rowwise() += a.v.b.row(0);
    Mat concat(xq.rows(), p_.dims.embed);
    if (scores_avg) scores_avg->setZero(xq.rows(), xkv.rows());
    Mat s;
    for (int h = 0; h < p_.dims.heads; ++h) {
      s.noalias() = q.middleCols(h * dh, dh) *
                    k.middleCols(h * dh, dh).transpose() * inv_sqrt;
      if (scores_avg) *scores_avg += s;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        auto row = s.row(r).array();
        const T mx = row.maxCoeff();
        s.row(r) = (row - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      concat.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    }
    if (scores_avg) *scores_avg /= static_cast<T>(p_.dims.heads);
    out.noalias() = concat * a.o.w;
    out.rowwise() += a.o.b.row(0);
  }

  void build_trees(const std::vector<int>& tree, int n, int m) {
    trees_.assign(n, {});
    for (int i = 0; i < n; ++i) trees_[i].push_back(i);  // the PM itself
    for (int i = 0; i < m; ++i) trees_[tree[i]].push_back(n + i);
  }

  // Stage 1: attention restricted to each PM tree, computed per tree on
  // gathered rows. Equals dense attention with an off-tree mask.
  void tree_attention(const Mat& x, const AttnP<T>& a, Mat& out) const {
    const int dh = p_.dims.head_dim();
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    Mat q = x * a.q.w;
    q.rowwise() += a.q.b.row(0);
    Mat k = x * a.k.w;
    k.rowwise() += a.k.b.row(0);
    Mat v = x * a.v.w;
    v.rowwise() += a.v.b.row(0);
    Mat concat(x.rows(), p_.dims.embed);
    Mat qt, kt, vt, s;
    for (const auto& idx : trees_) {
      const int t = static_cast<int>(idx.size());
      qt.resize(t, p_.dims.embed);
      kt.resize(t, p_.dims.embed);
      vt.resize(t, p_.dims.embed);
      for (int r = 0; r < t; ++r) {
        qt.row(r) = q.row(idx[r]);
        kt.row(r) = k.row(idx[r]);
        vt.row(r) = v.row(idx[r]);
      }
      for (int h = 0; h < p_.dims.heads; ++h) {
        s.noalias() = qt.middleCols(h * dh, dh) *
                      kt.middleCols(h * dh, dh).transpose() * inv_sqrt;
        for (int r = 0; r < t; ++r) {
          auto row = s.row(r).array();
          const T mx = row.maxCoeff();
          s.row(r) = (row - mx).exp().matrix();
          s.row(r) /= s.row(r).sum();
        }
        qt.middleCols(h * dh, dh).noalias() =
            s * vt.middleCols(h * dh, dh);  // reuse qt as the head output
      }
      for (int r = 0; r < t; ++r) concat.row(idx[r]) = qt.row(r);
    }
    out.noalias() = concat * a.o.w;
    out.rowwise() += a.o.b.row(0);
  }

  // Stage 2 for VMs: fused key-major tiles keep the softmax contiguous
  // and avoid materializing the full M x M score matrix per head.
  void vm_self_attention(const Mat& x, const AttnP<T>& a, Mat& out) {
    const int dh = p_.dims.head_dim();
    const int m = static_cast<int>(x.rows());
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    qbuf_.noalias() = x * a.q.w;
    qbuf_.rowwise() += a.q.b.row(0);
    kbuf_.noalias() = x * a.k.w;
    kbuf_.rowwise() += a.k.b.row(0);
    vbuf_.noalias() = x * a.v.w;
    vbuf_.rowwise() += a.v.b.row(0);
    concat_.resize(m, p_.dims.embed);
    constexpr int kTile = 512;
    for (int h = 0; h < p_.dims.heads; ++h) {
      auto qh = qbuf_.middleCols(h * dh, dh);
      auto kh = kbuf_.middleCols(h * dh, dh);
      auto vh = vbuf_.middleCols(h * dh, dh);
      for (int q0 = 0; q0 < m; q0 += kTile) {
        const int nq = std::min(kTile, m - q0);
        scoresT_.resize(m, nq);
        scoresT_.noalias() = kh * (qh.middleRows(q0, nq).transpose() * inv_sqrt);
        for (int c = 0; c < nq; ++c) softmax_inplace_col(scoresT_.col(c));
        concat_.block(q0, h * dh, nq, dh).noalias() =
            scoresT_.transpose() * vh;
      }
    }
    out.noalias() = concat_ * a.o.w;
    out.rowwise() += a.o.b.row(0);
  }

  // Stage 3: every VM attends over the PMs (keys are few).
  void cross_attention(const Mat& vm, const Mat& pm, const AttnP<T>& a,
                       Mat& out, Mat* scores_avg) {
    const int dh = p_.dims.head_dim();
    const int m = static_cast<int>(vm.rows());
    const int n = static_cast<int>(pm.rows());
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    qbuf_.noalias() = vm * a.q.w;
    qbuf_.rowwise() += a.q.b.row(0);
    kbuf2_.noalias() = pm * a.k.w;
    kbuf2_.rowwise() += a.k.b.row(0);
    vbuf2_.noalias() = pm * a.v.w;
    vbuf2_.rowwise() += a.v.b.row(0);
    concat_.resize(m, p_.dims.embed);
    if (scores_avg) scores_avg->setZero(m, n);
    for (int h = 0; h < p_.dims.heads; ++h) {
      auto qh = qbuf_.middleCols(h * dh, dh);
      auto kh = kbuf2_.middleCols(h * dh, dh);
      auto vh = vbuf2_.middleCols(h * dh, dh);
      scoresT_.resize(n, m);
      scoresT_.noalias() = kh * (qh.transpose() * inv_sqrt);
      if (scores_avg) *scores_avg += scoresT_.transpose();
      for (int c = 0; c < m; ++c) softmax_inplace_col(scoresT_.col(c));
      concat_.middleCols(h * dh, dh).noalias() = scoresT_.transpose() * vh;
    }
    if (scores_avg) *scores_avg /= static_cast<T>(p_.dims.heads);
    out.noalias() = concat_ * a.o.w;
    out.rowwise() += a.o.b.row(0);
  }

  // Softmax over unmasked entries only; masked outputs are exactly zero.
  static bool masked_softmax(const Vec& logits,
                             const std::vector<std::uint8_t>& mask,
                             Vec& probs) {
    const int n = static_cast<int>(logits.size());
    probs.setZero(n);
    T mx = -std::numeric_limits<T>::infinity();
    for (int i = 0; i < n; ++i)
      if (mask[i] && logits(i) > mx) mx = logits(i);
    if (mx == -std::numeric_limits<T>::infinity()) return false;
    T sum = T(0);
    for (int i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      probs(i) = std::exp(logits(i) - mx);
      sum += probs(i);
    }
    probs /= sum;
    return true;
  }

  const PolicyParams<T>& p_;
  Output out_;
  int n_ = 0, m_ = 0;
  std::vector<std::vector<int>> trees_;
  Mat pm_e_, vm_e_, x_, s1_, t0_, t1_, t2_;
  Mat qbuf_, kbuf_, vbuf_, kbuf2_, vbuf2_, concat_, scoresT_;
};

}  // namespace vmr
