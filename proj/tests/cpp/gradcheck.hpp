#pragma once

// Independent gradient oracle: central finite differences over every element
// of every checked parameter, compared against reverse-mode results with
// err = |analytic - numeric| / max(1, |numeric|).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "multipath/autograd.hpp"

namespace gradcheck {

struct Report {
  double max_err = 0.0;
  std::int64_t checked = 0;
};

// loss_fn must rebuild its graph from the current parameter values on every
// call; it is invoked 2*numel times for the numeric side.
inline Report run(std::vector<multipath::Tensor> params,
                  const std::function<multipath::Tensor()>& loss_fn,
                  double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  multipath::Tensor loss = loss_fn();
  multipath::backward(loss);

  Report rep;
  for (auto& p : params) {
    const std::vector<double> analytic = p.grad();
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const double keep = p.data()[i];
      p.data()[i] = keep + h;
      const double up = loss_fn().item();
      p.data()[i] = keep - h;
      const double dn = loss_fn().item();
      p.data()[i] = keep;
      const double numeric = (up - dn) / (2.0 * h);
      const double err =
          std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      rep.max_err = std::max(rep.max_err, err);
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace gradcheck
