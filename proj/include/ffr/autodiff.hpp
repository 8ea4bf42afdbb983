#pragma once

// Define-by-run reverse-mode differentiation over channels x length tensors.
// A Tape records one forward pass; Tape::backward pushes the gradient of a
// scalar node back through every recorded op and accumulates into the
// Parameters that were read.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ffr::ad {

struct Tensor {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t c, std::size_t l, double fill = 0.0) : channels(c), length(l), data(c * l, fill) {}

  static Tensor row(std::vector<double> v) {
    Tensor t;
    t.channels = 1;
    t.length = v.size();
    t.data = std::move(v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  double& operator()(std::size_t c, std::size_t i) { return data[c * length + i]; }
  double operator()(std::size_t c, std::size_t i) const { return data[c * length + i]; }
  double* channel(std::size_t c) { return data.data() + c * length; }
  const double* channel(std::size_t c) const { return data.data() + c * length; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return channels == o.channels && length == o.length; }
  double item() const {
    if (data.size() != 1) throw std::logic_error("item() on non-scalar tensor");
    return data[0];
  }
  std::span<const double> values() const { return data; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_string(const Tensor& t) {
  return std::to_string(t.channels) + "x" + std::to_string(t.length);
}

class Parameter {
 public:
  Parameter(std::string name, Tensor value)
      : name_(std::move(name)), value_(std::move(value)), grad_(value_.channels, value_.length) {}

  const std::string& name() const { return name_; }
  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }
  Tensor& grad() { return grad_; }
  const Tensor& grad() const { return grad_; }
  void zero_grad() { std::fill(grad_.data.begin(), grad_.data.end(), 0.0); }

 private:
  std::string name_;
  Tensor value_;
  Tensor grad_;
};

class Tape;

// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t channels() const { return value().channels; }
  std::size_t length() const { return value().length; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() { nodes_.reserve(128); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t) { return push(std::move(t), false, nullptr); }

  // Differentiable leaf whose gradient is read back through Var::grad().
  Var input(Tensor t) { return push(std::move(t), true, [](Tape&, const Tensor&) {}); }

  Var parameter(Parameter& p) {
    return push(p.value(), true, [&p](Tape&, const Tensor& g) {
      auto& dst = p.grad().data;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g.data[k];
    });
  }

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  // Seeds d(loss)/d(loss) = 1 and visits every node once, newest first.
  // Node gradients are reset on each call; Parameter gradients accumulate.
  void backward(Var loss) {
    if (&loss.tape() != this) throw std::logic_error("backward on a node from another tape");
    const Tensor& lv = nodes_[loss.id()].value;
    if (lv.size() != 1) throw std::invalid_argument("backward requires a scalar node, got " + shape_string(lv));
    for (auto& n : nodes_) {
      if (n.requires_grad) {
        n.grad.channels = n.value.channels;
        n.grad.length = n.value.length;
        n.grad.data.assign(n.value.size(), 0.0);
      }
    }
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad.data[0] = 1.0;
    for (std::size_t k = loss.id() + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (n.requires_grad && n.backward) n.backward(*this, n.grad);
    }
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  Tensor& grad_buffer(std::size_t id) { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("operands live on different tapes");
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

// Applies fn(parent_grad_buffer) only when the parent takes gradients.
template <typename Fn>
void accumulate(Tape& t, const Var& parent, Fn&& fn) {
  if (t.requires_grad(parent.id())) fn(t.grad_buffer(parent.id()));
}

// Dot product with four independent partial sums (fixed order, so results
// are reproducible).
inline double dot2(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// y[i] += w0 x[i - d] + w1 x[i] + w2 x[i + d], zero outside [0, n).
inline void conv3_accumulate(double* y, const double* x, double w0, double w1, double w2, std::size_t d, std::size_t n) {
  if (d >= n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += w1 * x[i];
    return;
  }
  const std::size_t lo = d, hi = n - d;  // both outer taps in range for i in [lo, hi)
  auto edge = [&](std::size_t i) {
    double v = w1 * x[i];
    if (i >= d) v += w0 * x[i - d];
    if (i + d < n) v += w2 * x[i + d];
    y[i] += v;
  };
  for (std::size_t i = 0; i < std::min(lo, n); ++i) edge(i);
  for (std::size_t i = lo; i < hi; ++i) y[i] += w0 * x[i - d] + w1 * x[i] + w2 * x[i + d];
  for (std::size_t i = std::max(lo, hi); i < n; ++i) edge(i);
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] += bv[k];
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape().push(std::move(out), rg, [a, b](Tape& t, const Tensor& g) {
    for (const Var& p : {a, b}) {
      detail::accumulate(t, p, [&](Tensor& dst) {
        for (std::size_t k = 0; k < g.size(); ++k) dst.data[k] += g.data[k];
      });
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] -= bv[k];
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape().push(std::move(out), rg, [a, b](Tape& t, const Tensor& g) {
    detail::accumulate(t, a, [&](Tensor& dst) {
      for (std::size_t k = 0; k < g.size(); ++k) dst.data[k] += g.data[k];
    });
    detail::accumulate(t, b, [&](Tensor& dst) {
      for (std::size_t k = 0; k < g.size(); ++k) dst.data[k] -= g.data[k];
    });
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& x : out.data) x *= s;
  return a.tape().push(std::move(out), a.requires_grad(), [a, s](Tape& t, const Tensor& g) {
    detail::accumulate(t, a, [&](Tensor& dst) {
      for (std::size_t k = 0; k < g.size(); ++k) dst.data[k] += s * g.data[k];
    });
  });
}

// Elementwise product with a constant tensor of the same shape.
inline Var mul_const(const Var& a, Tensor w) {
  detail::require_same_shape(a.value(), w, "mul_const");
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] *= w.data[k];
  return a.tape().push(std::move(out), a.requires_grad(), [a, w = std::move(w)](Tape& t, const Tensor& g) {
    detail::accumulate(t, a, [&](Tensor& dst) {
      for (std::size_t k = 0; k < g.size(); ++k) dst.data[k] += w.data[k] * g.data[k];
    });
  });
}

// |x| with subgradient 0 at exactly zero.
inline Var abs(const Var& a) {
  Tensor out = a.value();
  for (double& x : out.data) x = std::abs(x);
  return a.tape().push(std::move(out), a.requires_grad(), [a](Tape& t, const Tensor& g) {
    const auto& x = a.value().data;
    detail::accumulate(t, a, [&](Tensor& dst) {
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double s = x[k] > 0.0 ? 1.0 : (x[k] < 0.0 ? -1.0 : 0.0);
        dst.data[k] += s * g.data[k];
      }
    });
  });
}

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& x : out.data) x = x > 0.0 ? x : 0.0;
  return a.tape().push(std::move(out), a.requires_grad(), [a](Tape& t, const Tensor& g) {
    const auto& x = a.value().data;
    detail::accumulate(t, a, [&](Tensor& dst) {
      for (std::size_t k = 0; k < g.size(); ++k) dst.data[k] += x[k] > 0.0 ? g.data[k] : 0.0;
    });
  });
}

// min(x, 0) elementwise.
inline Var neg_part(const Var& a) {
  Tensor out = a.value();
  for (double& x : out.data) x = x < 0.0 ? x : 0.0;
  return a.tape().push(std::move(out), a.requires_grad(), [a](Tape& t, const Tensor& g) {
    const auto& x = a.value().data;
    detail::accumulate(t, a, [&](Tensor& dst) {
      for (std::size_t k = 0; k < g.size(); ++k) dst.data[k] += x[k] < 0.0 ? g.data[k] : 0.0;
    });
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data) s += x;
  return a.tape().push(Tensor::scalar(s), a.requires_grad(), [a](Tape& t, const Tensor& g) {
    const double gv = g.data[0];
    detail::accumulate(t, a, [&](Tensor& dst) {
      for (double& d : dst.data) d += gv;
    });
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// Running sum along the length axis, per channel. The adjoint is the
// reversed running sum of the upstream gradient.
inline Var cumsum(const Var& a) {
  Tensor out = a.value();
  for (std::size_t c = 0; c < out.channels; ++c) {
    double* row = out.channel(c);
    for (std::size_t i = 1; i < out.length; ++i) row[i] += row[i - 1];
  }
  return a.tape().push(std::move(out), a.requires_grad(), [a](Tape& t, const Tensor& g) {
    detail::accumulate(t, a, [&](Tensor& dst) {
      for (std::size_t c = 0; c < g.channels; ++c) {
        const double* gr = g.channel(c);
        double* dr = dst.channel(c);
        double acc = 0.0;
        for (std::size_t i = g.length; i-- > 0;) {
          acc += gr[i];
          dr[i] += acc;
        }
      }
    });
  });
}

// Reverses the length axis.
inline Var reverse(const Var& a) {
  Tensor out = a.value();
  for (std::size_t c = 0; c < out.channels; ++c) std::reverse(out.channel(c), out.channel(c) + out.length);
  return a.tape().push(std::move(out), a.requires_grad(), [a](Tape& t, const Tensor& g) {
    detail::accumulate(t, a, [&](Tensor& dst) {
      const std::size_t n = g.length;
      for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t i = 0; i < n; ++i) dst(c, i) += g(c, n - 1 - i);
      }
    });
  });
}

// Size-3 cross-correlation along length with the given dilation and zero
// padding of `dilation` on both sides (output length == input length).
// weight: out_channels x (in_channels * 3), tap-minor; bias: out_channels x 1.
inline Var conv1d(const Var& x, const Var& weight, const Var& bias, std::size_t dilation) {
  constexpr std::size_t K = 3;
  detail::require_same_tape(x, weight);
  detail::require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  const std::size_t cin = xv.channels, n = xv.length, cout = wv.channels;
  if (dilation == 0) throw std::invalid_argument("conv1d: dilation must be >= 1");
  if (wv.length != cin * K) {
    throw std::invalid_argument("conv1d: weight " + shape_string(wv) + " does not fit " + std::to_string(cin) +
                                " input channels");
  }
  if (bv.channels != cout || bv.length != 1) throw std::invalid_argument("conv1d: bias shape " + shape_string(bv));

  Tensor out(cout, n);
  for (std::size_t o = 0; o < cout; ++o) {
    double* y = out.channel(o);
    std::fill(y, y + n, bv.data[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const double* w = wv.data.data() + o * wv.length + c * K;
      detail::conv3_accumulate(y, xv.channel(c), w[0], w[1], w[2], dilation, n);
    }
  }
  const bool rg = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  return x.tape().push(std::move(out), rg, [x, weight, bias, dilation, cin, cout, n](Tape& t, const Tensor& g) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    detail::accumulate(t, bias, [&](Tensor& db) {
      for (std::size_t o = 0; o < cout; ++o) {
        const double* gr = g.channel(o);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += gr[i];
        db.data[o] += sum;
      }
    });
    detail::accumulate(t, weight, [&](Tensor& dw) {
      const std::size_t d = std::min(dilation, n);
      for (std::size_t o = 0; o < cout; ++o) {
        const double* gr = g.channel(o);
        for (std::size_t c = 0; c < cin; ++c) {
          const double* xr = xv.channel(c);
          double* w = &dw(o, c * K);
          // Tap 0 pairs g[i] with x[i - d], tap 1 with x[i], tap 2 with x[i + d].
          w[0] += detail::dot2(gr + d, xr, n - d);
          w[1] += detail::dot2(gr, xr, n);
          w[2] += detail::dot2(gr, xr + d, n - d);
        }
      }
    });
    detail::accumulate(t, x, [&](Tensor& dx) {
      for (std::size_t o = 0; o < cout; ++o) {
        const double* gr = g.channel(o);
        for (std::size_t c = 0; c < cin; ++c) {
          const double* w = wv.data.data() + o * wv.length + c * K;
          // Adjoint: the same stencil with the outer taps swapped.
          detail::conv3_accumulate(dx.channel(c), gr, w[2], w[1], w[0], dilation, n);
        }
      }
    });
  });
}

inline Var instance_norm(const Var& x, double eps = 1e-5) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.length;
  if (n < 2) throw std::invalid_argument("instance_norm needs length >= 2, got " + std::to_string(n));
  Tensor out(xv.channels, n);
  std::vector<double> inv_std(xv.channels);
  for (std::size_t c = 0; c < xv.channels; ++c) {
    const double* xr = xv.channel(c);
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += xr[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[c] = is;
    double* y = out.channel(c);
    for (std::size_t i = 0; i < n; ++i) y[i] = (xr[i] - mu) * is;
  }
  // The adjoint reads the normalized output back from this node.
  const std::size_t self = x.tape().size();
  return x.tape().push(std::move(out), x.requires_grad(), [x, self, inv_std = std::move(inv_std), n](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    detail::accumulate(t, x, [&](Tensor& dx) {
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t c = 0; c < g.channels; ++c) {
        const double* gr = g.channel(c);
        const double* yr = y.channel(c);
        double gm = 0.0, gym = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          gm += gr[i];
          gym += gr[i] * yr[i];
        }
        gm *= inv_n;
        gym *= inv_n;
        double* dr = dx.channel(c);
        for (std::size_t i = 0; i < n; ++i) dr[i] += inv_std[c] * (gr[i] - gm - yr[i] * gym);
      }
    });
  });
}

// Inverted dropout: kept activations are divided by the keep probability, so
// evaluation mode is the identity and draws nothing from the generator.
// `whole_channels` drops entire feature maps instead of single values.
inline Var dropout(const Var& x, double p, std::mt19937_64& rng, bool train, bool whole_channels = false) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must lie in [0, 1)");
  if (!train || p == 0.0) return x;
  const double keep = 1.0 - p;
  std::bernoulli_distribution draw(keep);
  Tensor mask(x.channels(), x.length());
  if (whole_channels) {
    for (std::size_t c = 0; c < mask.channels; ++c) {
      const double m = draw(rng) ? 1.0 / keep : 0.0;
      std::fill(mask.channel(c), mask.channel(c) + mask.length, m);
    }
  } else {
    for (double& m : mask.data) m = draw(rng) ? 1.0 / keep : 0.0;
  }
  return mul_const(x, std::move(mask));
}

inline Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels of nothing");
  const std::size_t n = parts.front().length();
  std::size_t total = 0;
  bool rg = false;
  for (const Var& v : parts) {
    detail::require_same_tape(parts.front(), v);
    if (v.length() != n) {
      throw std::invalid_argument("concat_channels: length " + std::to_string(v.length()) + " vs " + std::to_string(n));
    }
    total += v.channels();
    rg = rg || v.requires_grad();
  }
  Tensor out(total, n);
  std::size_t off = 0;
  for (const Var& v : parts) {
    std::copy(v.value().data.begin(), v.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off * n));
    off += v.channels();
  }
  return parts.front().tape().push(std::move(out), rg, [ps = std::vector<Var>(parts.begin(), parts.end()), n](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& v : ps) {
      detail::accumulate(t, v, [&](Tensor& dst) {
        for (std::size_t k = 0; k < dst.size(); ++k) dst.data[k] += g.data[off * n + k];
      });
      off += v.channels();
    }
  });
}

inline Var concat_channels(std::initializer_list<Var> parts) {
  return concat_channels(std::span<const Var>(parts.begin(), parts.size()));
}

// Non-overlapping mean pooling along length; a trailing partial window is
// averaged over its actual size.
inline Var avg_pool1d(const Var& x, std::size_t kernel) {
  if (kernel == 0) throw std::invalid_argument("avg_pool1d: kernel must be >= 1");
  const Tensor& xv = x.value();
  const std::size_t n = xv.length, m = (n + kernel - 1) / kernel;
  Tensor out(xv.channels, m);
  for (std::size_t c = 0; c < xv.channels; ++c) {
    const double* xr = xv.channel(c);
    for (std::size_t w = 0; w < m; ++w) {
      const std::size_t lo = w * kernel, hi = std::min(lo + kernel, n);
      double s = 0.0;
      for (std::size_t i = lo; i < hi; ++i) s += xr[i];
      out(c, w) = s / static_cast<double>(hi - lo);
    }
  }
  return x.tape().push(std::move(out), x.requires_grad(), [x, kernel, n, m](Tape& t, const Tensor& g) {
    detail::accumulate(t, x, [&](Tensor& dx) {
      for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t w = 0; w < m; ++w) {
          const std::size_t lo = w * kernel, hi = std::min(lo + kernel, n);
          const double gw = g(c, w) / static_cast<double>(hi - lo);
          for (std::size_t i = lo; i < hi; ++i) dx(c, i) += gw;
        }
      }
    });
  });
}

// Parzen-window histogram of a single-channel tensor:
// h[b] = sum_i exp(-(x_i - centers[b])^2 / (2 sigma^2)), returned as 1 x B.
inline Var soft_histogram(const Var& x, std::span<const double> centers, double sigma) {
  if (x.channels() != 1) throw std::invalid_argument("soft_histogram expects a single channel");
  if (!(sigma > 0.0)) throw std::invalid_argument("soft_histogram: sigma must be positive");
  const std::size_t nb = centers.size(), n = x.length();
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  // kernel(b, i) is kept for the adjoint.
  Tensor kernel(nb, n);
  Tensor out(1, nb);
  const auto& xv = x.value().data;
  for (std::size_t b = 0; b < nb; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = xv[i] - centers[b];
      const double k = std::exp(-d * d * inv2s2);
      kernel(b, i) = k;
      s += k;
    }
    out.data[b] = s;
  }
  std::vector<double> c(centers.begin(), centers.end());
  return x.tape().push(std::move(out), x.requires_grad(),
                       [x, kernel = std::move(kernel), c = std::move(c), sigma](Tape& t, const Tensor& g) {
    const auto& xv = x.value().data;
    const double inv_s2 = 1.0 / (sigma * sigma);
    detail::accumulate(t, x, [&](Tensor& dx) {
      for (std::size_t b = 0; b < c.size(); ++b) {
        const double gb = g.data[b];
        if (gb == 0.0) continue;
        for (std::size_t i = 0; i < dx.length; ++i) dx.data[i] -= gb * kernel(b, i) * (xv[i] - c[b]) * inv_s2;
      }
    });
  });
}

}  // namespace ffr::ad
