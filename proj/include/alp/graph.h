#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "alp/tensor.h"

namespace alp::nncore {

// Named trainable tensor with a persistent gradient buffer.
template <class S>
struct ParamT {
  std::string name;
  TensorT<S> value;
  TensorT<S> grad;
  bool trainable = true;
};

template <class S>
class ParamStoreT {
 public:
  ParamT<S>& create(const std::string& name, std::vector<int64_t> shape) {
    if (index_.count(name)) throw std::invalid_argument("duplicate param: " + name);
    auto p = std::make_unique<ParamT<S>>();
    p->name = name;
    p->value = TensorT<S>(std::move(shape));
    p->grad = p->value;
    index_[name] = items_.size();
    items_.push_back(std::move(p));
    return *items_.back();
  }

  ParamT<S>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no such param: " + name);
    return *items_[it->second];
  }
  const ParamT<S>& get(const std::string& name) const {
    return const_cast<ParamStoreT*>(this)->get(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<ParamT<S>*> all() {
    std::vector<ParamT<S>*> out;
    for (auto& p : items_) out.push_back(p.get());
    return out;
  }
  std::vector<const ParamT<S>*> all() const {
    std::vector<const ParamT<S>*> out;
    for (auto& p : items_) out.push_back(p.get());
    return out;
  }
  std::vector<ParamT<S>*> with_prefix(const std::string& prefix) {
    std::vector<ParamT<S>*> out;
    for (auto& p : items_)
      if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
    return out;
  }

  void zero_grads() {
    for (auto& p : items_) p->grad.zero();
  }
  int64_t total_scalars() const {
    int64_t n = 0;
    for (auto& p : items_) n += p->value.numel();
    return n;
  }

 private:
  std::vector<std::unique_ptr<ParamT<S>>> items_;
  std::unordered_map<std::string, size_t> index_;
};

// Reverse-mode tape. One tape is built per training step and discarded.
// Backward lambdas refer to nodes by id only: the node vector may reallocate
// while the graph is being built.
template <class S>
class TapeT {
 public:
  struct Node {
    TensorT<S> value;
    TensorT<S> grad;
    bool needs_grad = false;
    std::function<void(TapeT&, int)> backward;
  };

  bool training = false;
  Rng* rng = nullptr;           // dropout noise
  bool check_finite = false;    // debug-mode NaN tripwire

  int add_node(TensorT<S> value, bool needs_grad, std::function<void(TapeT&, int)> bw) {
    if (check_finite && !value.all_finite())
      throw std::runtime_error("non-finite value produced at node " + std::to_string(nodes_.size()));
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  Node& node(int id) { return nodes_[size_t(id)]; }
  const TensorT<S>& value(int id) const { return nodes_[size_t(id)].value; }

  TensorT<S>& grad(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.shape.empty() && !n.value.shape.empty()) {
      n.grad = TensorT<S>(n.value.shape);
    }
    return n.grad;
  }

  void bind_param(int id, ParamT<S>* p) { bindings_.emplace_back(id, p); }

  // Backpropagate from a scalar node and accumulate into bound param grads.
  void backward(int loss_id) {
    Node& loss = nodes_[size_t(loss_id)];
    if (loss.value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    grad(loss_id).fill(S(1));
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[size_t(id)];
      if (!n.needs_grad || !n.backward || n.grad.shape.empty()) continue;
      n.backward(*this, id);
    }
    for (auto& [id, p] : bindings_) {
      Node& n = nodes_[size_t(id)];
      if (!n.grad.shape.empty()) p->grad.add_scaled(n.grad, S(1));
    }
    if (check_finite) {
      for (auto& [id, p] : bindings_)
        if (!p->grad.all_finite()) throw std::runtime_error("non-finite gradient: " + p->name);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<int, ParamT<S>*>> bindings_;
};

template <class S>
struct VarT {
  TapeT<S>* tape = nullptr;
  int id = -1;

  const TensorT<S>& value() const { return tape->value(id); }
  int64_t rows() const { return value().rows(); }
  int64_t cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr; }
};

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

template <class S>
VarT<S> leaf(TapeT<S>& t, TensorT<S> v) {
  int id = t.add_node(std::move(v), false, nullptr);
  return {&t, id};
}

// Leaf whose gradient is wanted but which is not a registered Param (used by
// grad checks on inputs).
template <class S>
VarT<S> leaf_param(TapeT<S>& t, ParamT<S>& p) {
  int id = t.add_node(p.value, p.trainable, nullptr);
  if (p.trainable) t.bind_param(id, &p);
  return {&t, id};
}

namespace detail {
template <class S>
void add_grad(TapeT<S>& t, int id, const TensorT<S>& g) {
  if (!t.node(id).needs_grad) return;
  t.grad(id).add_scaled(g, S(1));
}
}  // namespace detail

template <class S>
VarT<S> matmul(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.rows())
    throw std::invalid_argument("matmul: " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  TensorT<S> out(av.rows(), bv.cols());
  matmul_acc(av.data.data(), bv.data.data(), out.data.data(), av.rows(), av.cols(), bv.cols());
  bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
  int aid = a.id, bid = b.id;
  int id = t.add_node(std::move(out), ng, [aid, bid](TapeT<S>& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& avv = tp.value(aid);
    const auto& bvv = tp.value(bid);
    if (tp.node(aid).needs_grad) {
      auto& ga = tp.grad(aid);
      matmul_a_bt_acc(g.data.data(), bvv.data.data(), ga.data.data(), g.rows(), g.cols(), bvv.rows());
    }
    if (tp.node(bid).needs_grad) {
      auto& gb = tp.grad(bid);
      matmul_at_b_acc(avv.data.data(), g.data.data(), gb.data.data(), avv.rows(), avv.cols(), g.cols());
    }
  });
  return {&t, id};
}

template <class S>
VarT<S> add(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = *a.tape;
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.value().shape) + " vs " +
                                shape_str(b.value().shape));
  TensorT<S> out = a.value();
  out.add_scaled(b.value(), S(1));
  bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
  int aid = a.id, bid = b.id;
  int id = t.add_node(std::move(out), ng, [aid, bid](TapeT<S>& tp, int self) {
    const auto& g = tp.grad(self);
    detail::add_grad(tp, aid, g);
    detail::add_grad(tp, bid, g);
  });
  return {&t, id};
}

template <class S>
VarT<S> sub(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = *a.tape;
  if (!a.value().same_shape(b.value())) throw std::invalid_argument("sub: shape mismatch");
  TensorT<S> out = a.value();
  out.add_scaled(b.value(), S(-1));
  bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
  int aid = a.id, bid = b.id;
  int id = t.add_node(std::move(out), ng, [aid, bid](TapeT<S>& tp, int self) {
    const auto& g = tp.grad(self);
    detail::add_grad(tp, aid, g);
    if (tp.node(bid).needs_grad) tp.grad(bid).add_scaled(g, S(-1));
  });
  return {&t, id};
}

// matrix plus row vector broadcast over rows
template <class S>
VarT<S> add_rowvec(VarT<S> m, VarT<S> v) {
  TapeT<S>& t = *m.tape;
  const auto& mv = m.value();
  const auto& vv = v.value();
  if (vv.numel() != mv.cols()) throw std::invalid_argument("add_rowvec: width mismatch");
  TensorT<S> out = mv;
  for (int64_t r = 0; r < mv.rows(); ++r)
    for (int64_t c = 0; c < mv.cols(); ++c) out.at(r, c) += vv.data[size_t(c)];
  bool ng = t.node(m.id).needs_grad || t.node(v.id).needs_grad;
  int mid = m.id, vid = v.id;
  int id = t.add_node(std::move(out), ng, [mid, vid](TapeT<S>& tp, int self) {
    const auto& g = tp.grad(self);
    detail::add_grad(tp, mid, g);
    if (tp.node(vid).needs_grad) {
      auto& gv = tp.grad(vid);
      for (int64_t r = 0; r < g.rows(); ++r)
        for (int64_t c = 0; c < g.cols(); ++c) gv.data[size_t(c)] += g.at(r, c);
    }
  });
  return {&t, id};
}

template <class S>
VarT<S> mul(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = *a.tape;
  if (!a.value().same_shape(b.value())) throw std::invalid_argument("mul: shape mismatch");
  TensorT<S> out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.value().data[i];
  bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
  int aid = a.id, bid = b.id;
  int id = t.add_node(std::move(out), ng, [aid, bid](TapeT<S>& tp, int self) {
    const auto& g = tp.grad(self);
    if (tp.node(aid).needs_grad) {
      auto& ga = tp.grad(aid);
      const auto& bv = tp.value(bid);
      for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
    }
    if (tp.node(bid).needs_grad) {
      auto& gb = tp.grad(bid);
      const auto& av = tp.value(aid);
      for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
    }
  });
  return {&t, id};
}

template <class S>
VarT<S> scale(VarT<S> a, double k) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out = a.value();
  for (S& v : out.data) v *= S(k);
  int aid = a.id;
  int id = t.add_node(std::move(out), t.node(a.id).needs_grad, [aid, k](TapeT<S>& tp, int self) {
    if (tp.node(aid).needs_grad) tp.grad(aid).add_scaled(tp.grad(self), S(k));
  });
  return {&t, id};
}

// exact GeLU: x * Phi(x)
template <class S>
VarT<S> gelu(VarT<S> a) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out = a.value();
  for (S& v : out.data) {
    double x = double(v);
    v = S(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))));
  }
  int aid = a.id;
  int id = t.add_node(std::move(out), t.node(a.id).needs_grad, [aid](TapeT<S>& tp, int self) {
    if (!tp.node(aid).needs_grad) return;
    const auto& g = tp.grad(self);
    const auto& x = tp.value(aid);
    auto& ga = tp.grad(aid);
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    for (size_t i = 0; i < g.data.size(); ++i) {
      double xv = double(x.data[i]);
      double phi = 0.5 * (1.0 + std::erf(xv / std::sqrt(2.0)));
      double d = phi + xv * inv_sqrt2pi * std::exp(-0.5 * xv * xv);
      ga.data[i] += g.data[i] * S(d);
    }
  });
  return {&t, id};
}

// row-wise layer norm with affine; gamma/beta are [1 x d]
template <class S>
VarT<S> layernorm_rows(VarT<S> x, VarT<S> gamma, VarT<S> beta, double eps = 1e-5) {
  TapeT<S>& t = *x.tape;
  const auto& xv = x.value();
  int64_t R = xv.rows(), C = xv.cols();
  if (gamma.value().numel() != C || beta.value().numel() != C)
    throw std::invalid_argument("layernorm: affine width mismatch");
  TensorT<S> out(R, C);
  TensorT<S> xhat(R, C);
  TensorT<S> inv_std(R, 1);
  for (int64_t r = 0; r < R; ++r) {
    double mu = 0;
    for (int64_t c = 0; c < C; ++c) mu += double(xv.at(r, c));
    mu /= double(C);
    double var = 0;
    for (int64_t c = 0; c < C; ++c) {
      double d = double(xv.at(r, c)) - mu;
      var += d * d;
    }
    var /= double(C);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std.at(r, 0) = S(is);
    for (int64_t c = 0; c < C; ++c) {
      double h = (double(xv.at(r, c)) - mu) * is;
      xhat.at(r, c) = S(h);
      out.at(r, c) = S(h) * gamma.value().data[size_t(c)] + beta.value().data[size_t(c)];
    }
  }
  bool ng = t.node(x.id).needs_grad || t.node(gamma.id).needs_grad || t.node(beta.id).needs_grad;
  int xid = x.id, gid = gamma.id, bid = beta.id;
  // xhat and inv_std are captured by value: node storage may reallocate.
  int id = t.add_node(std::move(out), ng,
                      [xid, gid, bid, xhat, inv_std](TapeT<S>& tp, int self) {
    const auto& g = tp.grad(self);
    int64_t R = g.rows(), C = g.cols();
    const auto& gam = tp.value(gid);
    if (tp.node(gid).needs_grad) {
      auto& gg = tp.grad(gid);
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) gg.data[size_t(c)] += g.at(r, c) * xhat.at(r, c);
    }
    if (tp.node(bid).needs_grad) {
      auto& gb = tp.grad(bid);
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) gb.data[size_t(c)] += g.at(r, c);
    }
    if (tp.node(xid).needs_grad) {
      auto& gx = tp.grad(xid);
      for (int64_t r = 0; r < R; ++r) {
        double mean_dh = 0, mean_dh_h = 0;
        for (int64_t c = 0; c < C; ++c) {
          double dh = double(g.at(r, c)) * double(gam.data[size_t(c)]);
          mean_dh += dh;
          mean_dh_h += dh * double(xhat.at(r, c));
        }
        mean_dh /= double(C);
        mean_dh_h /= double(C);
        double is = double(inv_std.at(r, 0));
        for (int64_t c = 0; c < C; ++c) {
          double dh = double(g.at(r, c)) * double(gam.data[size_t(c)]);
          gx.at(r, c) += S(is * (dh - mean_dh - double(xhat.at(r, c)) * mean_dh_h));
        }
      }
    }
  });
  return {&t, id};
}

template <class S>
VarT<S> softmax_rows(VarT<S> x) {
  TapeT<S>& t = *x.tape;
  TensorT<S> out = x.value();
  int64_t R = out.rows(), C = out.cols();
  for (int64_t r = 0; r < R; ++r) {
    double mx = -1e300;
    for (int64_t c = 0; c < C; ++c) mx = std::max(mx, double(out.at(r, c)));
    double sum = 0;
    for (int64_t c = 0; c < C; ++c) {
      double e = std::exp(double(out.at(r, c)) - mx);
      out.at(r, c) = S(e);
      sum += e;
    }
    for (int64_t c = 0; c < C; ++c) out.at(r, c) = S(double(out.at(r, c)) / sum);
  }
  int xid = x.id;
  int id = t.add_node(std::move(out), t.node(x.id).needs_grad, [xid](TapeT<S>& tp, int self) {
    if (!tp.node(xid).needs_grad) return;
    const auto& g = tp.grad(self);
    const auto& p = tp.value(self);
    auto& gx = tp.grad(xid);
    for (int64_t r = 0; r < g.rows(); ++r) {
      double dot = 0;
      for (int64_t c = 0; c < g.cols(); ++c) dot += double(g.at(r, c)) * double(p.at(r, c));
      for (int64_t c = 0; c < g.cols(); ++c)
        gx.at(r, c) += S(double(p.at(r, c)) * (double(g.at(r, c)) - dot));
    }
  });
  return {&t, id};
}

template <class S>
VarT<S> transpose(VarT<S> x) {
  TapeT<S>& t = *x.tape;
  const auto& xv = x.value();
  TensorT<S> out(xv.cols(), xv.rows());
  for (int64_t r = 0; r < xv.rows(); ++r)
    for (int64_t c = 0; c < xv.cols(); ++c) out.at(c, r) = xv.at(r, c);
  int xid = x.id;
  int id = t.add_node(std::move(out), t.node(x.id).needs_grad, [xid](TapeT<S>& tp, int self) {
    if (!tp.node(xid).needs_grad) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    for (int64_t r = 0; r < g.rows(); ++r)
      for (int64_t c = 0; c < g.cols(); ++c) gx.at(c, r) += g.at(r, c);
  });
  return {&t, id};
}

template <class S>
VarT<S> slice_cols(VarT<S> x, int64_t c0, int64_t w) {
  TapeT<S>& t = *x.tape;
  const auto& xv = x.value();
  if (c0 < 0 || c0 + w > xv.cols()) throw std::invalid_argument("slice_cols: out of range");
  TensorT<S> out(xv.rows(), w);
  for (int64_t r = 0; r < xv.rows(); ++r)
    for (int64_t c = 0; c < w; ++c) out.at(r, c) = xv.at(r, c0 + c);
  int xid = x.id;
  int id = t.add_node(std::move(out), t.node(x.id).needs_grad, [xid, c0, w](TapeT<S>& tp, int self) {
    if (!tp.node(xid).needs_grad) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    for (int64_t r = 0; r < g.rows(); ++r)
      for (int64_t c = 0; c < w; ++c) gx.at(r, c0 + c) += g.at(r, c);
  });
  return {&t, id};
}

template <class S>
VarT<S> concat_cols(const std::vector<VarT<S>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty");
  TapeT<S>& t = *xs[0].tape;
  int64_t R = xs[0].rows(), C = 0;
  bool ng = false;
  std::vector<int> ids;
  std::vector<int64_t> offs;
  for (const auto& x : xs) {
    if (x.rows() != R) throw std::invalid_argument("concat_cols: row mismatch");
    offs.push_back(C);
    C += x.cols();
    ng = ng || t.node(x.id).needs_grad;
    ids.push_back(x.id);
  }
  TensorT<S> out(R, C);
  for (size_t i = 0; i < xs.size(); ++i) {
    const auto& v = xs[i].value();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < v.cols(); ++c) out.at(r, offs[i] + c) = v.at(r, c);
  }
  int id = t.add_node(std::move(out), ng, [ids, offs](TapeT<S>& tp, int self) {
    const auto& g = tp.grad(self);
    for (size_t i = 0; i < ids.size(); ++i) {
      if (!tp.node(ids[i]).needs_grad) continue;
      auto& gx = tp.grad(ids[i]);
      for (int64_t r = 0; r < g.rows(); ++r)
        for (int64_t c = 0; c < gx.cols(); ++c) gx.at(r, c) += g.at(r, offs[i] + c);
    }
  });
  return {&t, id};
}

template <class S>
VarT<S> concat_rows(const std::vector<VarT<S>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty");
  TapeT<S>& t = *xs[0].tape;
  int64_t C = xs[0].cols(), R = 0;
  bool ng = false;
  std::vector<int> ids;
  std::vector<int64_t> offs;
  for (const auto& x : xs) {
    if (x.cols() != C) throw std::invalid_argument("concat_rows: col mismatch");
    offs.push_back(R);
    R += x.rows();
    ng = ng || t.node(x.id).needs_grad;
    ids.push_back(x.id);
  }
  TensorT<S> out(R, C);
  for (size_t i = 0; i < xs.size(); ++i) {
    const auto& v = xs[i].value();
    for (int64_t r = 0; r < v.rows(); ++r)
      for (int64_t c = 0; c < C; ++c) out.at(offs[i] + r, c) = v.at(r, c);
  }
  int id = t.add_node(std::move(out), ng, [ids, offs](TapeT<S>& tp, int self) {
    const auto& g = tp.grad(self);
    for (size_t i = 0; i < ids.size(); ++i) {
      if (!tp.node(ids[i]).needs_grad) continue;
      auto& gx = tp.grad(ids[i]);
      for (int64_t r = 0; r < gx.rows(); ++r)
        for (int64_t c = 0; c < g.cols(); ++c) gx.at(r, c) += g.at(offs[i] + r, c);
    }
  });
  return {&t, id};
}

// gather rows by index (embedding lookup); backward scatter-adds
template <class S>
VarT<S> select_rows(VarT<S> x, std::vector<int64_t> idx) {
  TapeT<S>& t = *x.tape;
  const auto& xv = x.value();
  TensorT<S> out(int64_t(idx.size()), xv.cols());
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= xv.rows()) throw std::out_of_range("select_rows: bad index");
    for (int64_t c = 0; c < xv.cols(); ++c) out.at(int64_t(r), c) = xv.at(idx[r], c);
  }
  int xid = x.id;
  int id = t.add_node(std::move(out), t.node(x.id).needs_grad,
                      [xid, idx = std::move(idx)](TapeT<S>& tp, int self) {
    if (!tp.node(xid).needs_grad) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int64_t c = 0; c < g.cols(); ++c) gx.at(idx[r], c) += g.at(int64_t(r), c);
  });
  return {&t, id};
}

// rows in idx become zero; used for masked acoustic content
template <class S>
VarT<S> zero_rows(VarT<S> x, const std::vector<int64_t>& idx) {
  TapeT<S>& t = *x.tape;
  TensorT<S> out = x.value();
  for (int64_t r : idx) {
    if (r < 0 || r >= out.rows()) throw std::out_of_range("zero_rows: bad index");
    for (int64_t c = 0; c < out.cols(); ++c) out.at(r, c) = S(0);
  }
  int xid = x.id;
  std::vector<int64_t> idx_copy = idx;
  int id = t.add_node(std::move(out), t.node(x.id).needs_grad,
                      [xid, idx = std::move(idx_copy)](TapeT<S>& tp, int self) {
    if (!tp.node(xid).needs_grad) return;
    TensorT<S> g = tp.grad(self);
    for (int64_t r : idx)
      for (int64_t c = 0; c < g.cols(); ++c) g.at(r, c) = S(0);
    tp.grad(xid).add_scaled(g, S(1));
  });
  return {&t, id};
}

template <class S>
VarT<S> mean_rows(VarT<S> x) {
  TapeT<S>& t = *x.tape;
  const auto& xv = x.value();
  TensorT<S> out(1, xv.cols());
  for (int64_t r = 0; r < xv.rows(); ++r)
    for (int64_t c = 0; c < xv.cols(); ++c) out.at(0, c) += xv.at(r, c);
  for (int64_t c = 0; c < xv.cols(); ++c) out.at(0, c) /= S(double(xv.rows()));
  int xid = x.id;
  int64_t R = xv.rows();
  int id = t.add_node(std::move(out), t.node(x.id).needs_grad, [xid, R](TapeT<S>& tp, int self) {
    if (!tp.node(xid).needs_grad) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < g.cols(); ++c) gx.at(r, c) += g.at(0, c) / S(double(R));
  });
  return {&t, id};
}

template <class S>
VarT<S> mean_all(VarT<S> x) {
  TapeT<S>& t = *x.tape;
  const auto& xv = x.value();
  double s = 0;
  for (S v : xv.data) s += double(v);
  TensorT<S> out(1, 1);
  out.data[0] = S(s / double(xv.numel()));
  int xid = x.id;
  int64_t n = xv.numel();
  int id = t.add_node(std::move(out), t.node(x.id).needs_grad, [xid, n](TapeT<S>& tp, int self) {
    if (!tp.node(xid).needs_grad) return;
    S g = tp.grad(self).data[0] / S(double(n));
    auto& gx = tp.grad(xid);
    for (S& v : gx.data) v += g;
  });
  return {&t, id};
}

// mean squared error against a constant target, averaged over all elements
template <class S>
VarT<S> mse_vs(VarT<S> x, const TensorT<S>& target) {
  TapeT<S>& t = *x.tape;
  const auto& xv = x.value();
  if (!xv.same_shape(target)) throw std::invalid_argument("mse_vs: shape mismatch");
  double s = 0;
  for (size_t i = 0; i < xv.data.size(); ++i) {
    double d = double(xv.data[i]) - double(target.data[i]);
    s += d * d;
  }
  TensorT<S> out(1, 1);
  out.data[0] = S(s / double(xv.numel()));
  int xid = x.id;
  int id = t.add_node(std::move(out), t.node(x.id).needs_grad,
                      [xid, target](TapeT<S>& tp, int self) {
    if (!tp.node(xid).needs_grad) return;
    S g = tp.grad(self).data[0];
    const auto& xvv = tp.value(xid);
    auto& gx = tp.grad(xid);
    S k = S(2.0 / double(xvv.numel()));
    for (size_t i = 0; i < gx.data.size(); ++i)
      gx.data[i] += g * k * (xvv.data[i] - target.data[i]);
  });
  return {&t, id};
}

// mean cross entropy of softmax(logits) against integer targets
template <class S>
VarT<S> ce_mean(VarT<S> logits, std::vector<int64_t> targets) {
  TapeT<S>& t = *logits.tape;
  const auto& z = logits.value();
  if (int64_t(targets.size()) != z.rows()) throw std::invalid_argument("ce_mean: target count");
  double total = 0;
  for (int64_t r = 0; r < z.rows(); ++r) {
    if (targets[size_t(r)] < 0 || targets[size_t(r)] >= z.cols())
      throw std::out_of_range("ce_mean: target id out of vocab");
    double mx = -1e300;
    for (int64_t c = 0; c < z.cols(); ++c) mx = std::max(mx, double(z.at(r, c)));
    double lse = 0;
    for (int64_t c = 0; c < z.cols(); ++c) lse += std::exp(double(z.at(r, c)) - mx);
    lse = mx + std::log(lse);
    total += lse - double(z.at(r, targets[size_t(r)]));
  }
  TensorT<S> out(1, 1);
  out.data[0] = S(total / double(z.rows()));
  int zid = logits.id;
  int id = t.add_node(std::move(out), t.node(logits.id).needs_grad,
                      [zid, targets = std::move(targets)](TapeT<S>& tp, int self) {
    if (!tp.node(zid).needs_grad) return;
    S g = tp.grad(self).data[0];
    const auto& zv = tp.value(zid);
    auto& gz = tp.grad(zid);
    S invn = S(1.0 / double(zv.rows()));
    for (int64_t r = 0; r < zv.rows(); ++r) {
      double mx = -1e300;
      for (int64_t c = 0; c < zv.cols(); ++c) mx = std::max(mx, double(zv.at(r, c)));
      double sum = 0;
      for (int64_t c = 0; c < zv.cols(); ++c) sum += std::exp(double(zv.at(r, c)) - mx);
      for (int64_t c = 0; c < zv.cols(); ++c) {
        double p = std::exp(double(zv.at(r, c)) - mx) / sum;
        double y = (c == targets[size_t(r)]) ? 1.0 : 0.0;
        gz.at(r, c) += g * invn * S(p - y);
      }
    }
  });
  return {&t, id};
}

// mean binary cross entropy with logits; labels in {0,1}, same shape
template <class S>
VarT<S> bce_mean(VarT<S> logits, const TensorT<S>& labels) {
  TapeT<S>& t = *logits.tape;
  const auto& z = logits.value();
  if (!z.same_shape(labels)) throw std::invalid_argument("bce_mean: shape mismatch");
  for (S y : labels.data)
    if (y != S(0) && y != S(1)) throw std::invalid_argument("bce_mean: labels must be 0/1");
  double total = 0;
  for (size_t i = 0; i < z.data.size(); ++i) {
    double zi = double(z.data[i]), y = double(labels.data[i]);
    total += std::max(zi, 0.0) - zi * y + std::log1p(std::exp(-std::fabs(zi)));
  }
  TensorT<S> out(1, 1);
  out.data[0] = S(total / double(z.numel()));
  int zid = logits.id;
  int id = t.add_node(std::move(out), t.node(logits.id).needs_grad,
                      [zid, labels](TapeT<S>& tp, int self) {
    if (!tp.node(zid).needs_grad) return;
    S g = tp.grad(self).data[0];
    const auto& zv = tp.value(zid);
    auto& gz = tp.grad(zid);
    S invn = S(1.0 / double(zv.numel()));
    for (size_t i = 0; i < zv.data.size(); ++i) {
      double sig = 1.0 / (1.0 + std::exp(-double(zv.data[i])));
      gz.data[i] += g * invn * S(sig - double(labels.data[i]));
    }
  });
  return {&t, id};
}

// row-wise L2 normalization
template <class S>
VarT<S> l2norm_rows(VarT<S> x) {
  TapeT<S>& t = *x.tape;
  const auto& xv = x.value();
  TensorT<S> out = xv;
  for (int64_t r = 0; r < xv.rows(); ++r) {
    double n2 = 0;
    for (int64_t c = 0; c < xv.cols(); ++c) n2 += double(xv.at(r, c)) * double(xv.at(r, c));
    double n = std::sqrt(n2);
    if (n < 1e-8) throw std::runtime_error("l2norm_rows: near-zero row norm");
    for (int64_t c = 0; c < xv.cols(); ++c) out.at(r, c) = S(double(xv.at(r, c)) / n);
  }
  int xid = x.id;
  int id = t.add_node(std::move(out), t.node(x.id).needs_grad, [xid](TapeT<S>& tp, int self) {
    if (!tp.node(xid).needs_grad) return;
    const auto& g = tp.grad(self);
    const auto& xvv = tp.value(xid);
    auto& gx = tp.grad(xid);
    for (int64_t r = 0; r < xvv.rows(); ++r) {
      double n2 = 0, dot = 0;
      for (int64_t c = 0; c < xvv.cols(); ++c) {
        n2 += double(xvv.at(r, c)) * double(xvv.at(r, c));
      }
      double n = std::sqrt(n2);
      for (int64_t c = 0; c < xvv.cols(); ++c) dot += double(g.at(r, c)) * double(xvv.at(r, c));
      for (int64_t c = 0; c < xvv.cols(); ++c)
        gx.at(r, c) += S(double(g.at(r, c)) / n - double(xvv.at(r, c)) * dot / (n * n2));
    }
  });
  return {&t, id};
}

// Per-row normalized-temperature cross entropy on a similarity matrix:
//   L_i = -sim[i,i]/tau + log sum_{j in D_i} exp(sim[i,j]/tau)
// where D_i excludes j=i unless include_positive is set. Returns [M x 1].
template <class S>
VarT<S> ntxent_rows(VarT<S> sim, double tau, bool include_positive) {
  TapeT<S>& t = *sim.tape;
  const auto& s = sim.value();
  int64_t M = s.rows();
  if (s.cols() != M) throw std::invalid_argument("ntxent_rows: similarity matrix must be square");
  if (M < 2) throw std::invalid_argument("ntxent_rows: batch size must be >= 2");
  if (!(tau > 0)) throw std::invalid_argument("ntxent_rows: tau must be positive");
  TensorT<S> out(M, 1);
  for (int64_t i = 0; i < M; ++i) {
    double mx = -1e300;
    for (int64_t j = 0; j < M; ++j) {
      if (!include_positive && j == i) continue;
      mx = std::max(mx, double(s.at(i, j)) / tau);
    }
    double lse = 0;
    for (int64_t j = 0; j < M; ++j) {
      if (!include_positive && j == i) continue;
      lse += std::exp(double(s.at(i, j)) / tau - mx);
    }
    out.at(i, 0) = S(-double(s.at(i, i)) / tau + mx + std::log(lse));
  }
  int sid = sim.id;
  int id = t.add_node(std::move(out), t.node(sim.id).needs_grad,
                      [sid, tau, include_positive](TapeT<S>& tp, int self) {
    if (!tp.node(sid).needs_grad) return;
    const auto& g = tp.grad(self);
    const auto& s = tp.value(sid);
    auto& gs = tp.grad(sid);
    int64_t M = s.rows();
    for (int64_t i = 0; i < M; ++i) {
      double gi = double(g.at(i, 0));
      if (gi == 0) continue;
      double mx = -1e300;
      for (int64_t j = 0; j < M; ++j) {
        if (!include_positive && j == i) continue;
        mx = std::max(mx, double(s.at(i, j)) / tau);
      }
      double denom = 0;
      for (int64_t j = 0; j < M; ++j) {
        if (!include_positive && j == i) continue;
        denom += std::exp(double(s.at(i, j)) / tau - mx);
      }
      for (int64_t j = 0; j < M; ++j) {
        double p = 0;
        if (include_positive || j != i) p = std::exp(double(s.at(i, j)) / tau - mx) / denom;
        double d = (p - (j == i ? 1.0 : 0.0)) / tau;
        gs.at(i, j) += S(gi * d);
      }
    }
  });
  return {&t, id};
}

// inverted dropout; identity when not training or p == 0
template <class S>
VarT<S> dropout(VarT<S> x, double p) {
  TapeT<S>& t = *x.tape;
  if (!t.training || p <= 0.0) return x;
  if (!t.rng) throw std::runtime_error("dropout: tape has no rng");
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  TensorT<S> mask(x.value().shape);
  double keep = 1.0 - p;
  for (S& m : mask.data) m = (t.rng->uniform() < p) ? S(0) : S(1.0 / keep);
  TensorT<S> out = x.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
  int xid = x.id;
  int id = t.add_node(std::move(out), t.node(x.id).needs_grad,
                      [xid, mask = std::move(mask)](TapeT<S>& tp, int self) {
    if (!tp.node(xid).needs_grad) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * mask.data[i];
  });
  return {&t, id};
}

}  // namespace alp::nncore
