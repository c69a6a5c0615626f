#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vmr/policy/model.hpp"

namespace vmr {

// Adam with bias correction over the policy's parameter groups. Moment
// matrices live here and can be exported into checkpoints for exact
// training resumption.
template <typename T>
class Adam {
 public:
  using Mat = typename PolicyParams<T>::Mat;

  explicit Adam(PolicyParams<T>& params, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
    params_.visit([&](const std::string& name, Mat& m) {
      names_.push_back(name);
      m_.push_back(Mat::Zero(m.rows(), m.cols()));
      v_.push_back(Mat::Zero(m.rows(), m.cols()));
    });
  }

  // Applies one update from gradients keyed by group name. Gradients are
  // rescaled if their global norm exceeds max_grad_norm (<= 0 disables).
  void step(std::map<std::string, Mat>& grads, double lr,
            double max_grad_norm = 0.5) {
    double sq = 0;
    for (auto& [name, g] : grads) sq += static_cast<double>(g.squaredNorm());
    const double norm = std::sqrt(sq);
    T scale = T(1);
    if (max_grad_norm > 0 && norm > max_grad_norm)
      scale = static_cast<T>(max_grad_norm / (norm + 1e-12));

    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    std::size_t i = 0;
    params_.visit([&](const std::string& name, Mat& p) {
      auto it = grads.find(name);
      if (it != grads.end()) {
        Mat g = it->second * scale;
        m_[i] = static_cast<T>(beta1_) * m_[i] + static_cast<T>(1 - beta1_) * g;
        v_[i] = static_cast<T>(beta2_) * v_[i] +
                static_cast<T>(1 - beta2_) * g.cwiseProduct(g);
        Mat mhat = m_[i] / static_cast<T>(bc1);
        Mat vhat = v_[i] / static_cast<T>(bc2);
        p -= (static_cast<T>(lr) * mhat.array() /
              (vhat.array().sqrt() + static_cast<T>(eps_)))
                 .matrix();
      }
      ++i;
    });
  }

  long long step_count() const { return t_; }

  // Checkpoint round trip.
  void export_state(std::vector<Mat>& m, std::vector<Mat>& v,
                    long long& t) const {
    m = m_;
    v = v_;
    t = t_;
  }
  void import_state(const std::vector<Mat>& m, const std::vector<Mat>& v,
                    long long t) {
    if (m.size() != m_.size() || v.size() != v_.size())
      throw InvalidParameter("optimizer state does not match the model");
    m_ = m;
    v_ = v;
    t_ = t;
  }

 private:
  PolicyParams<T>& params_;
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<std::string> names_;
  std::vector<Mat> m_, v_;
};

}  // namespace vmr
