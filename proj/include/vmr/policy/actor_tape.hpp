#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "vmr/policy/features.hpp"
#include "vmr/policy/model.hpp"
#include "vmr/policy/tape.hpp"

namespace vmr {

// Reference forward pass on the autodiff tape. Stage-1 tree attention is
// computed densely with an off-tree mask; the inference path implements
// the block-sparse equivalent, and the two are held equal by tests.
template <typename T>
class TapePolicy {
 public:
  using Tp = Tape<T>;
  using Var = typename Tp::Var;
  using Mat = typename Tp::Mat;

  explicit TapePolicy(PolicyParams<T>& params) : params_(params) {
    params_.visit([&](const std::string& name, Mat& m) {
      vars_[name] = tape_.leaf(m);
    });
  }

  Tp& tape() { return tape_; }
  Var param(const std::string& name) const { return vars_.at(name); }
  const Mat& grad_of(const std::string& name) const {
    return tape_.grad(vars_.at(name));
  }

  struct ActorOut {
    Var vm_probs;      // 1 x M, masked entries exactly zero
    Var vm_logits;     // 1 x M (pre-mask logits)
    Var vm_embeds;     // M x d
    Var pm_embeds;     // N x d
    Var cross_scores;  // M x N, head-averaged scaled scores, last block
    Var stage1_last;   // (N+M) x d output of the last block's stage 1
    int n = 0, m = 0;
  };

  ActorOut vm_actor(const FeatureTensor<T>& f,
                    const std::vector<std::uint8_t>& vm_mask) {
    const int n = static_cast<int>(f.pm.rows());
    const int m = static_cast<int>(f.vm.rows());
    bool any = false;
    for (auto b : vm_mask) any = any || b;
    if (!any) throw Error("no selectable vm: every candidate is masked");

    Var pm_x = tape_.constant(f.pm);
    Var vm_x = tape_.constant(f.vm);
    Var pm_e = mlp2(pm_x, "pm_embed1", "pm_embed2");
    Var vm_e = mlp2(vm_x, "vm_embed1", "vm_embed2");

    // Same-tree token mask over [PM rows; VM rows].
    Mat tree_mask = Mat::Zero(n + m, n + m);
    {
      std::vector<int> tree(n + m);
      for (int i = 0; i < n; ++i) tree[i] = i;
      for (int i = 0; i < m; ++i) tree[n + i] = f.tree[i];
      for (int a = 0; a < n + m; ++a)
        for (int b = 0; b < n + m; ++b)
          if (tree[a] == tree[b]) tree_mask(a, b) = T(1);
    }

    ActorOut out;
    out.n = n;
    out.m = m;
    Var p = pm_e, v = vm_e;
    for (int bi = 0; bi < params_.dims.blocks; ++bi) {
      const std::string bp = "block" + std::to_string(bi);
      Var x = tape_.vconcat(p, v);
      Var s1 = attention(x, x, bp + ".tree", &tree_mask, nullptr);
      x = layer_norm(tape_.add(x, s1), bp + ".ln_tree");
      if (bi == params_.dims.blocks - 1) out.stage1_last = x;
      p = tape_.slice_rows(x, 0, n);
      v = tape_.slice_rows(x, n, m);
      v = layer_norm(tape_.add(v, attention(v, v, bp + ".vm_self", nullptr,
                                            nullptr)),
                     bp + ".ln_vm");
      p = layer_norm(tape_.add(p, attention(p, p, bp + ".pm_self", nullptr,
                                            nullptr)),
                     bp + ".ln_pm");
      Var scores;
      v = layer_norm(
          tape_.add(v, attention(v, p, bp + ".cross", nullptr, &scores)),
          bp + ".ln_cross");
      if (bi == params_.dims.blocks - 1) out.cross_scores = scores;
      Var all = tape_.vconcat(p, v);
      all = layer_norm(tape_.add(all, ff(all, bp + ".ff1", bp + ".ff2")),
                       bp + ".ln_ff");
      p = tape_.slice_rows(all, 0, n);
      v = tape_.slice_rows(all, n, m);
    }
    out.pm_embeds = p;
    out.vm_embeds = v;

    Var logits = tape_.transpose(linear(v, "vm_logit"));  // 1 x M
    Mat mask_row(1, m);
    for (int i = 0; i < m; ++i) mask_row(0, i) = vm_mask[i] ? T(1) : T(0);
    mask_store_.push_back(mask_row);
    out.vm_logits = logits;
    out.vm_probs = tape_.softmax_rows(logits, &mask_store_.back());
    return out;
  }

  // Destination distribution for one selected VM.
  Var pm_actor(const ActorOut& actor, int vm_index,
               const std::vector<std::uint8_t>& pm_mask) {
    Var e = tape_.select_row(actor.vm_embeds, vm_index);  // 1 x d
    Var h = layer_norm(
        tape_.add(e, attention(e, e, "enc_self", nullptr, nullptr)),
        "enc_ln1");
    h = layer_norm(tape_.add(h, ff(h, "enc_ff1", "enc_ff2")), "enc_ln2");

    Var dcd = actor.pm_embeds;
    dcd = layer_norm(
        tape_.add(dcd, attention(dcd, dcd, "dec_self", nullptr, nullptr)),
        "dec_ln1");
    dcd = layer_norm(
        tape_.add(dcd, attention(dcd, h, "dec_cross", nullptr, nullptr)),
        "dec_ln2");
    dcd = layer_norm(tape_.add(dcd, ff(dcd, "dec_ff1", "dec_ff2")), "dec_ln3");

    Var logits = tape_.transpose(linear(dcd, "pm_logit"));  // 1 x N
    Var inject = tape_.matmul(param("inject_scale"),
                              tape_.select_row(actor.cross_scores, vm_index));
    logits = tape_.add(logits, inject);

    Mat mask_row(1, actor.n);
    for (int i = 0; i < actor.n; ++i)
      mask_row(0, i) = pm_mask[i] ? T(1) : T(0);
    mask_store_.push_back(mask_row);
    return tape_.softmax_rows(logits, &mask_store_.back());
  }

  // Scalar state value from mean-pooled final embeddings.
  Var critic(const ActorOut& actor) {
    Var pooled = tape_.hconcat(
        {tape_.mean_rows(actor.vm_embeds), tape_.mean_rows(actor.pm_embeds)});
    Var h = tape_.relu(linear(pooled, "critic1"));
    return linear(h, "critic2");
  }

  Var log_prob(const ActorOut& actor, Var pm_probs, int vm_index,
               int pm_index) {
    return tape_.add(tape_.log(tape_.pick(actor.vm_probs, 0, vm_index)),
                     tape_.log(tape_.pick(pm_probs, 0, pm_index)));
  }

  Var entropy(const ActorOut& actor, Var pm_probs) {
    return tape_.add(tape_.entropy_row(actor.vm_probs),
                     tape_.entropy_row(pm_probs));
  }

 private:
  Var linear(Var x, const std::string& name) {
    return tape_.add_rowvec(tape_.matmul(x, param(name + ".w")),
                            param(name + ".b"));
  }

  Var mlp2(Var x, const std::string& l1, const std::string& l2) {
    return linear(tape_.relu(linear(x, l1)), l2);
  }

  Var ff(Var x, const std::string& l1, const std::string& l2) {
    return linear(tape_.relu(linear(x, l1)), l2);
  }

  Var layer_norm(Var x, const std::string& name) {
    return tape_.layer_norm(x, param(name + ".gamma"), param(name + ".beta"));
  }

  // Multi-head scaled dot-product attention. `mask` restricts key access
  // (1 = attend); `scores_avg` receives the head-averaged scaled scores.
  Var attention(Var xq, Var xkv, const std::string& name, const Mat* mask,
                Var* scores_avg) {
    const int dh = params_.dims.head_dim();
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    Var q = linear(xq, name + ".q");
    Var k = linear(xkv, name + ".k");
    Var v = linear(xkv, name + ".v");
    std::vector<Var> heads;
    Var score_sum;
    for (int h = 0; h < params_.dims.heads; ++h) {
      Var qh = tape_.slice_cols(q, h * dh, dh);
      Var kh = tape_.slice_cols(k, h * dh, dh);
      Var vh = tape_.slice_cols(v, h * dh, dh);
      Var s = tape_.scale(tape_.matmul(qh, tape_.transpose(kh)), inv_sqrt);
      if (scores_avg)
        score_sum = h == 0 ? s : tape_.add(score_sum, s);
      Var probs = tape_.softmax_rows(s, mask);
      heads.push_back(tape_.matmul(probs, vh));
    }
    if (scores_avg)
      *scores_avg =
          tape_.scale(score_sum, T(1) / static_cast<T>(params_.dims.heads));
    return linear(tape_.hconcat(heads), name + ".o");
  }

  PolicyParams<T>& params_;
  Tp tape_;
  std::unordered_map<std::string, Var> vars_;
  // Masks must outlive the tape's backward pass.
  std::deque<Mat> mask_store_;
};

}  // namespace vmr
