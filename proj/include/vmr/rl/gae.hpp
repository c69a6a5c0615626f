#pragma once

#include <cstddef>
#include <vector>

#include "vmr/util/errors.hpp"

namespace vmr {

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Generalized advantage estimation over whole-episode sequences laid out
// back to back. done[t] marks transitions into a terminal state, whose
// value is zero by definition (finite-horizon episodes).
inline GaeResult compute_gae(const std::vector<double>& rewards,
                             const std::vector<double>& values,
                             const std::vector<std::uint8_t>& dones,
                             double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n)
    throw InvalidParameter("gae inputs must have equal lengths");
  GaeResult out;
  out.advantages.resize(n);
  out.returns.resize(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double nonterminal = dones[i] ? 0.0 : 1.0;
    const double next_value =
        (i + 1 < n && !dones[i]) ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + gamma * lambda * nonterminal * running;
    out.advantages[i] = running;
    out.returns[i] = out.advantages[i] + values[i];
  }
  return out;
}

}  // namespace vmr
