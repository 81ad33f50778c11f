#include "multipath/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace multipath {

namespace detail {

struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const std::vector<double>&)> backward_fn;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

namespace {

std::atomic<std::uint64_t> g_seq{0};

std::shared_ptr<Node> make_node(std::vector<int> shape,
                                std::vector<double> value,
                                bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->seq = ++g_seq;
  if (static_cast<std::int64_t>(n->value.size()) != n->numel()) {
    throw std::invalid_argument("tensor: data length does not match shape");
  }
  return n;
}

}  // namespace

}  // namespace detail

using detail::Node;

namespace {

void require_defined(const Tensor& t, const char* who) {
  if (!t.defined()) {
    throw std::invalid_argument(std::string(who) + ": undefined tensor");
  }
}

std::int64_t numel_of(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

}  // namespace

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  std::vector<double> data(numel_of(shape), 0.0);
  return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  std::vector<double> data(numel_of(shape), value);
  return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data,
                    bool requires_grad) {
  Tensor t;
  t.node_ = detail::make_node(std::move(shape), std::move(data), requires_grad);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::int64_t Tensor::numel() const {
  require_defined(*this, "numel");
  return node_->numel();
}

bool Tensor::requires_grad() const {
  return node_ != nullptr && node_->requires_grad;
}

std::vector<double>& Tensor::data() {
  require_defined(*this, "data");
  return node_->value;
}

const std::vector<double>& Tensor::data() const {
  require_defined(*this, "data");
  return node_->value;
}

std::vector<double>& Tensor::grad() {
  require_defined(*this, "grad");
  if (node_->grad.empty()) node_->grad.assign(node_->numel(), 0.0);
  return node_->grad;
}

bool Tensor::has_grad() const {
  return node_ != nullptr && !node_->grad.empty();
}

void Tensor::zero_grad() {
  require_defined(*this, "zero_grad");
  node_->grad.assign(node_->numel(), 0.0);
}

double Tensor::item() const {
  require_defined(*this, "item");
  if (node_->numel() != 1) {
    throw std::invalid_argument("item: tensor is not a single element");
  }
  return node_->value[0];
}

// --- graph ------------------------------------------------------------------

Tensor custom_op(std::vector<int> shape, std::vector<double> value,
                 std::vector<Tensor> inputs,
                 std::function<void(const std::vector<double>&)> backward_fn) {
  bool req = false;
  for (const auto& in : inputs) req = req || in.requires_grad();
  auto n = detail::make_node(std::move(shape), std::move(value), req);
  if (req) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node_);
    n->backward_fn = std::move(backward_fn);
  }
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar");
  }
  Node* root = loss.node_.get();
  if (!root->requires_grad) return;

  // Collect the subgraph that needs gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) {
        stack.push_back(in.get());
      }
    }
  }
  // Visit in reverse construction order so every node's output gradient is
  // complete before its backward callback runs.
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  // Interior grads are scratch per pass; leaf grads persist and accumulate.
  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->numel(), 0.0);
  }
  if (root->grad.empty()) root->grad.assign(root->numel(), 0.0);
  root->grad[0] += 1.0;
  for (Node* n : order) {
    if (n->backward_fn) n->backward_fn(n->grad);
  }
}

// --- elementwise ------------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  Tensor av = a, bv = b;
  return custom_op(a.shape(), std::move(out), {a, b},
                   [av, bv](const std::vector<double>& g) mutable {
                     if (av.requires_grad()) {
                       auto& ga = av.grad();
                       for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     }
                     if (bv.requires_grad()) {
                       auto& gb = bv.grad();
                       for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                     }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  Tensor av = a, bv = b;
  return custom_op(a.shape(), std::move(out), {a, b},
                   [av, bv](const std::vector<double>& g) mutable {
                     if (av.requires_grad()) {
                       auto& ga = av.grad();
                       for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     }
                     if (bv.requires_grad()) {
                       auto& gb = bv.grad();
                       for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                     }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  Tensor av = a, bv = b;
  return custom_op(a.shape(), std::move(out), {a, b},
                   [av, bv](const std::vector<double>& g) mutable {
                     if (av.requires_grad()) {
                       auto& ga = av.grad();
                       const auto& bvd = bv.data();
                       for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bvd[i];
                     }
                     if (bv.requires_grad()) {
                       auto& gb = bv.grad();
                       const auto& avd = av.data();
                       for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * avd[i];
                     }
                   });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.data());
  for (auto& v : out) v *= c;
  Tensor xv = x;
  return custom_op(x.shape(), std::move(out), {x},
                   [xv, c](const std::vector<double>& g) mutable {
                     if (!xv.requires_grad()) return;
                     auto& gx = xv.grad();
                     for (size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
                   });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    throw std::invalid_argument("scale_by: scale must be a single element");
  }
  const double sv = s.data()[0];
  std::vector<double> out(x.data());
  for (auto& v : out) v *= sv;
  Tensor xv = x, st = s;
  return custom_op(x.shape(), std::move(out), {x, s},
                   [xv, st, sv](const std::vector<double>& g) mutable {
                     if (xv.requires_grad()) {
                       auto& gx = xv.grad();
                       for (size_t i = 0; i < g.size(); ++i) gx[i] += sv * g[i];
                     }
                     if (st.requires_grad()) {
                       const auto& xd = xv.data();
                       double acc = 0.0;
                       for (size_t i = 0; i < g.size(); ++i) acc += g[i] * xd[i];
                       st.grad()[0] += acc;
                     }
                   });
}

Tensor add_many(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_many: no inputs");
  for (const auto& x : xs) check_same_shape(xs[0], x, "add_many");
  std::vector<double> out(xs[0].data());
  for (size_t t = 1; t < xs.size(); ++t) {
    const auto& d = xs[t].data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  std::vector<Tensor> copies(xs);
  return custom_op(xs[0].shape(), std::move(out), xs,
                   [copies](const std::vector<double>& g) mutable {
                     for (auto& x : copies) {
                       if (!x.requires_grad()) continue;
                       auto& gx = x.grad();
                       for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     }
                   });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor xv = x;
  return custom_op({1}, {acc}, {x},
                   [xv](const std::vector<double>& g) mutable {
                     if (!xv.requires_grad()) return;
                     auto& gx = xv.grad();
                     for (auto& v : gx) v += g[0];
                   });
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor xv = x;
  return custom_op({1}, {acc * inv}, {x},
                   [xv, inv](const std::vector<double>& g) mutable {
                     if (!xv.requires_grad()) return;
                     auto& gx = xv.grad();
                     for (auto& v : gx) v += g[0] * inv;
                   });
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (numel_of(shape) != x.numel()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  Tensor xv = x;
  return custom_op(std::move(shape), x.data(), {x},
                   [xv](const std::vector<double>& g) mutable {
                     if (!xv.requires_grad()) return;
                     auto& gx = xv.grad();
                     for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                   });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const auto& base = xs[0].shape();
  const int rank = static_cast<int>(base.size());
  if (axis < 0 || axis >= rank) {
    throw std::invalid_argument("concat: axis out of range");
  }
  int axis_total = 0;
  for (const auto& x : xs) {
    const auto& s = x.shape();
    if (static_cast<int>(s.size()) != rank) {
      throw std::invalid_argument("concat: rank mismatch");
    }
    for (int d = 0; d < rank; ++d) {
      if (d != axis && s[d] != base[d]) {
        throw std::invalid_argument("concat: non-concat axis mismatch");
      }
    }
    axis_total += s[axis];
  }
  std::vector<int> out_shape(base);
  out_shape[axis] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= base[d];
  for (int d = axis + 1; d < rank; ++d) inner *= base[d];

  std::vector<double> out(numel_of(out_shape));
  const std::int64_t out_row = static_cast<std::int64_t>(axis_total) * inner;
  std::int64_t off = 0;
  for (const auto& x : xs) {
    const auto& d = x.data();
    const std::int64_t in_row = static_cast<std::int64_t>(x.shape()[axis]) * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(d.begin() + o * in_row, d.begin() + (o + 1) * in_row,
                out.begin() + o * out_row + off);
    }
    off += in_row;
  }

  std::vector<Tensor> copies(xs);
  return custom_op(
      std::move(out_shape), std::move(out), xs,
      [copies, outer, inner, out_row, axis](const std::vector<double>& g) mutable {
        std::int64_t off2 = 0;
        for (auto& x : copies) {
          const std::int64_t in_row =
              static_cast<std::int64_t>(x.shape()[axis]) * inner;
          if (x.requires_grad()) {
            auto& gx = x.grad();
            for (std::int64_t o = 0; o < outer; ++o) {
              const double* src = g.data() + o * out_row + off2;
              double* dst = gx.data() + o * in_row;
              for (std::int64_t i = 0; i < in_row; ++i) dst[i] += src[i];
            }
          }
          off2 += in_row;
        }
      });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  Tensor xv = x;
  return custom_op(x.shape(), std::move(out), {x},
                   [xv](const std::vector<double>& g) mutable {
                     if (!xv.requires_grad()) return;
                     auto& gx = xv.grad();
                     const auto& xd = xv.data();
                     for (size_t i = 0; i < g.size(); ++i) {
                       if (xd[i] > 0.0) gx[i] += g[i];
                     }
                   });
}

// --- conv2d -----------------------------------------------------------------

namespace {

// Output positions o with 0 <= o*stride + k_off - pad < extent.
void conv_out_range(int k_off, int extent, int stride, int pad, int& lo,
                    int& hi) {
  const int first = pad - k_off;
  lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  const int last = extent - 1 - k_off + pad;
  hi = last < 0 ? -1 : last / stride;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || bias.shape().size() != 1) {
    throw std::invalid_argument("conv2d: expected x[N,C,H,W], w[K,C,kh,kw], b[K]");
  }
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int K = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != C) {
    throw std::invalid_argument("conv2d: input channels do not match weight channels");
  }
  if (bias.shape()[0] != K) {
    throw std::invalid_argument("conv2d: bias length does not match output channels");
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0");
  if (kh > H + 2 * pad || kw > W + 2 * pad) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;

  const auto& xd = x.data();
  const auto& wd = weight.data();
  const auto& bd = bias.data();
  std::vector<double> out(static_cast<size_t>(N) * K * OH * OW);

  for (int n = 0; n < N; ++n) {
    for (int k = 0; k < K; ++k) {
      double* oplane = out.data() + (static_cast<size_t>(n) * K + k) * OH * OW;
      std::fill(oplane, oplane + static_cast<size_t>(OH) * OW, bd[k]);
      for (int c = 0; c < C; ++c) {
        const double* iplane = xd.data() + (static_cast<size_t>(n) * C + c) * H * W;
        for (int r = 0; r < kh; ++r) {
          int oh_lo, oh_hi;
          conv_out_range(r, H, stride, pad, oh_lo, oh_hi);
          oh_hi = std::min(oh_hi, OH - 1);
          for (int s = 0; s < kw; ++s) {
            const double wv = wd[((static_cast<size_t>(k) * C + c) * kh + r) * kw + s];
            int ow_lo, ow_hi;
            conv_out_range(s, W, stride, pad, ow_lo, ow_hi);
            ow_hi = std::min(ow_hi, OW - 1);
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              const double* irow =
                  iplane + static_cast<size_t>(oh * stride + r - pad) * W;
              double* orow = oplane + static_cast<size_t>(oh) * OW;
              if (stride == 1) {
                const double* ir = irow + s - pad;
                for (int ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wv * ir[ow];
              } else {
                for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                  orow[ow] += wv * irow[ow * stride + s - pad];
                }
              }
            }
          }
        }
      }
    }
  }

  Tensor xv = x, wt = weight, bv = bias;
  return custom_op(
      {N, K, OH, OW}, std::move(out), {x, weight, bias},
      [xv, wt, bv, N, C, H, W, K, kh, kw, OH, OW, stride,
       pad](const std::vector<double>& g) mutable {
        const auto& xd2 = xv.data();
        const auto& wd2 = wt.data();
        const bool need_x = xv.requires_grad();
        const bool need_w = wt.requires_grad();
        if (bv.requires_grad()) {
          auto& gb = bv.grad();
          for (int n = 0; n < N; ++n) {
            for (int k = 0; k < K; ++k) {
              const double* gp = g.data() + (static_cast<size_t>(n) * K + k) * OH * OW;
              double acc = 0.0;
              for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) {
                acc += gp[i];
              }
              gb[k] += acc;
            }
          }
        }
        if (!need_x && !need_w) return;
        double* gx = need_x ? xv.grad().data() : nullptr;
        double* gw = need_w ? wt.grad().data() : nullptr;
        for (int n = 0; n < N; ++n) {
          for (int k = 0; k < K; ++k) {
            const double* gplane = g.data() + (static_cast<size_t>(n) * K + k) * OH * OW;
            for (int c = 0; c < C; ++c) {
              const size_t plane_off = (static_cast<size_t>(n) * C + c) * H * W;
              const double* iplane = xd2.data() + plane_off;
              double* giplane = need_x ? gx + plane_off : nullptr;
              for (int r = 0; r < kh; ++r) {
                int oh_lo, oh_hi;
                conv_out_range(r, H, stride, pad, oh_lo, oh_hi);
                oh_hi = std::min(oh_hi, OH - 1);
                for (int s = 0; s < kw; ++s) {
                  const size_t widx =
                      ((static_cast<size_t>(k) * C + c) * kh + r) * kw + s;
                  const double wval = wd2[widx];
                  int ow_lo, ow_hi;
                  conv_out_range(s, W, stride, pad, ow_lo, ow_hi);
                  ow_hi = std::min(ow_hi, OW - 1);
                  double wacc = 0.0;
                  for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                    const double* grow = gplane + static_cast<size_t>(oh) * OW;
                    const size_t ibase =
                        static_cast<size_t>(oh * stride + r - pad) * W;
                    if (stride == 1) {
                      const size_t col = ibase + s - pad;
                      if (need_w) {
                        const double* ir = iplane + col;
                        for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                          wacc += grow[ow] * ir[ow];
                        }
                      }
                      if (need_x) {
                        double* gr = giplane + col;
                        for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                          gr[ow] += wval * grow[ow];
                        }
                      }
                    } else {
                      for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                        const size_t ii = ibase + ow * stride + s - pad;
                        if (need_w) wacc += grow[ow] * iplane[ii];
                        if (need_x) giplane[ii] += wval * grow[ow];
                      }
                    }
                  }
                  if (need_w) gw[widx] += wacc;
                }
              }
            }
          }
        }
      });
}

// --- pooling ----------------------------------------------------------------

Tensor max_pool2d(const Tensor& x) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw std::invalid_argument("max_pool2d: expected [N,C,H,W]");
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int OH = H / 2, OW = W / 2;
  if (OH < 1 || OW < 1) throw std::invalid_argument("max_pool2d: input too small");

  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(N) * C * OH * OW);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const double* plane = xd.data() + static_cast<size_t>(nc) * H * W;
    const std::int64_t base = static_cast<std::int64_t>(nc) * H * W;
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow, ++o) {
        std::int64_t best = static_cast<std::int64_t>(2 * oh) * W + 2 * ow;
        double bv = plane[best];
        const std::int64_t cands[3] = {best + 1, best + W, best + W + 1};
        for (std::int64_t ci : cands) {
          if (plane[ci] > bv) {
            bv = plane[ci];
            best = ci;
          }
        }
        out[o] = bv;
        (*argmax)[o] = base + best;
      }
    }
  }

  Tensor xv = x;
  return custom_op({N, C, OH, OW}, std::move(out), {x},
                   [xv, argmax](const std::vector<double>& g) mutable {
                     if (!xv.requires_grad()) return;
                     auto& gx = xv.grad();
                     for (size_t i = 0; i < g.size(); ++i) {
                       gx[(*argmax)[i]] += g[i];
                     }
                   });
}

// --- linear -----------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws.size() != 2 || bias.shape().size() != 1 || bias.shape()[0] != ws[0]) {
    throw std::invalid_argument("linear: expected w[M,D], b[M]");
  }
  const int M = ws[0], D = ws[1];
  int N;
  bool vec_input;
  if (xs.size() == 1) {
    N = 1;
    vec_input = true;
  } else if (xs.size() == 2) {
    N = xs[0];
    vec_input = false;
  } else {
    throw std::invalid_argument("linear: expected x[D] or x[N,D]");
  }
  if (xs.back() != D) {
    throw std::invalid_argument("linear: input dim does not match weight");
  }

  const auto& xd = x.data();
  const auto& wd = weight.data();
  const auto& bd = bias.data();
  std::vector<double> out(static_cast<size_t>(N) * M);
  for (int n = 0; n < N; ++n) {
    const double* xr = xd.data() + static_cast<size_t>(n) * D;
    double* orow = out.data() + static_cast<size_t>(n) * M;
    for (int m = 0; m < M; ++m) {
      const double* wr = wd.data() + static_cast<size_t>(m) * D;
      double acc = bd[m];
      for (int d = 0; d < D; ++d) acc += xr[d] * wr[d];
      orow[m] = acc;
    }
  }

  std::vector<int> out_shape =
      vec_input ? std::vector<int>{M} : std::vector<int>{N, M};
  Tensor xv = x, wv = weight, bv = bias;
  return custom_op(
      std::move(out_shape), std::move(out), {x, weight, bias},
      [xv, wv, bv, N, M, D](const std::vector<double>& g) mutable {
        const auto& xd2 = xv.data();
        const auto& wd2 = wv.data();
        if (bv.requires_grad()) {
          auto& gb = bv.grad();
          for (int n = 0; n < N; ++n) {
            const double* gr = g.data() + static_cast<size_t>(n) * M;
            for (int m = 0; m < M; ++m) gb[m] += gr[m];
          }
        }
        if (xv.requires_grad()) {
          auto& gx = xv.grad();
          for (int n = 0; n < N; ++n) {
            const double* gr = g.data() + static_cast<size_t>(n) * M;
            double* gxr = gx.data() + static_cast<size_t>(n) * D;
            for (int m = 0; m < M; ++m) {
              const double gm = gr[m];
              if (gm == 0.0) continue;
              const double* wr = wd2.data() + static_cast<size_t>(m) * D;
              for (int d = 0; d < D; ++d) gxr[d] += gm * wr[d];
            }
          }
        }
        if (wv.requires_grad()) {
          auto& gw = wv.grad();
          for (int n = 0; n < N; ++n) {
            const double* gr = g.data() + static_cast<size_t>(n) * M;
            const double* xr = xd2.data() + static_cast<size_t>(n) * D;
            for (int m = 0; m < M; ++m) {
              const double gm = gr[m];
              if (gm == 0.0) continue;
              double* gwr = gw.data() + static_cast<size_t>(m) * D;
              for (int d = 0; d < D; ++d) gwr[d] += gm * xr[d];
            }
          }
        }
      });
}

// --- softmax ----------------------------------------------------------------

Tensor softmax(const Tensor& x) {
  const auto& xs = x.shape();
  if (xs.empty()) throw std::invalid_argument("softmax: rank-0 input");
  const int C = xs.back();
  const std::int64_t rows = x.numel() / C;
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * C;
    double* o = out.data() + r * C;
    double mx = in[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, in[c]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    const double inv = 1.0 / z;
    for (int c = 0; c < C; ++c) o[c] *= inv;
  }

  auto probs = std::make_shared<std::vector<double>>(out);
  Tensor xv = x;
  return custom_op(x.shape(), std::move(out), {x},
                   [xv, probs, rows, C](const std::vector<double>& g) mutable {
                     if (!xv.requires_grad()) return;
                     auto& gx = xv.grad();
                     for (std::int64_t r = 0; r < rows; ++r) {
                       const double* p = probs->data() + r * C;
                       const double* gr = g.data() + r * C;
                       double dot = 0.0;
                       for (int c = 0; c < C; ++c) dot += gr[c] * p[c];
                       double* gxr = gx.data() + r * C;
                       for (int c = 0; c < C; ++c) gxr[c] += p[c] * (gr[c] - dot);
                     }
                   });
}

// --- normalization ----------------------------------------------------------

Tensor l2_normalize_scaled(const Tensor& x, const Tensor& gamma, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("l2_normalize_scaled: eps must be > 0");
  if (gamma.numel() != 1) {
    throw std::invalid_argument("l2_normalize_scaled: gamma must be a single element");
  }
  const auto& xd = x.data();
  double sq = 0.0;
  for (double v : xd) sq += v * v;
  const double norm = std::sqrt(sq);
  const double denom = std::max(norm, eps);
  const double gv = gamma.data()[0];
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = gv * xd[i] / denom;

  Tensor xv = x, gt = gamma;
  return custom_op(
      x.shape(), std::move(out), {x, gamma},
      [xv, gt, gv, norm, denom, eps](const std::vector<double>& g) mutable {
        const auto& xd2 = xv.data();
        if (gt.requires_grad()) {
          double acc = 0.0;
          for (size_t i = 0; i < g.size(); ++i) acc += g[i] * xd2[i];
          gt.grad()[0] += acc / denom;
        }
        if (xv.requires_grad()) {
          auto& gx = xv.grad();
          if (norm > eps) {
            // d/dx of x/||x||: (I - x x^T / ||x||^2) / ||x||.
            double dot = 0.0;
            for (size_t i = 0; i < g.size(); ++i) dot += g[i] * xd2[i];
            const double n3 = denom * denom * denom;
            for (size_t i = 0; i < g.size(); ++i) {
              gx[i] += gv * (g[i] / denom - xd2[i] * dot / n3);
            }
          } else {
            // Below eps the denominator is constant, so the map is linear.
            for (size_t i = 0; i < g.size(); ++i) gx[i] += gv * g[i] / eps;
          }
        }
      });
}

// --- losses -----------------------------------------------------------------

Tensor nll(const Tensor& p, int k) {
  if (p.shape().size() != 1) throw std::invalid_argument("nll: expected a vector");
  if (k < 0 || k >= p.shape()[0]) throw std::invalid_argument("nll: class out of range");
  constexpr double kClamp = 1e-12;
  const double pk = p.data()[k];
  const double clamped = std::max(pk, kClamp);
  Tensor pv = p;
  return custom_op({1}, {-std::log(clamped)}, {p},
                   [pv, k, pk, clamped](const std::vector<double>& g) mutable {
                     if (!pv.requires_grad()) return;
                     // Below the clamp the loss is flat in p[k].
                     if (pk >= kClamp) pv.grad()[k] += -g[0] / clamped;
                   });
}

Tensor smooth_l1(const Tensor& pred, const std::vector<double>& target,
                 double delta) {
  if (delta <= 0.0) throw std::invalid_argument("smooth_l1: delta must be > 0");
  if (pred.numel() != static_cast<std::int64_t>(target.size())) {
    throw std::invalid_argument("smooth_l1: length mismatch");
  }
  const auto& pd = pred.data();
  double loss = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    const double r = pd[i] - target[i];
    const double a = std::abs(r);
    loss += a < delta ? 0.5 * r * r / delta : a - 0.5 * delta;
  }
  Tensor pv = pred;
  auto tgt = std::make_shared<std::vector<double>>(target);
  return custom_op({1}, {loss}, {pred},
                   [pv, tgt, delta](const std::vector<double>& g) mutable {
                     if (!pv.requires_grad()) return;
                     auto& gp = pv.grad();
                     const auto& pd2 = pv.data();
                     for (size_t i = 0; i < tgt->size(); ++i) {
                       const double r = pd2[i] - (*tgt)[i];
                       const double d =
                           std::abs(r) < delta ? r / delta : (r > 0 ? 1.0 : -1.0);
                       gp[i] += g[0] * d;
                     }
                   });
}

}  // namespace multipath
