#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "flyt/dual.hpp"

namespace flyt {

// Minimal reverse-mode tape. Scalar type S is double for plain
// gradients and Dual for forward-over-reverse (Hessian-vector style)
// computations. Every recorded node has at most two parents.
template <class S>
class Tape {
 public:
  struct Node {
    S w0{}, w1{};
    std::int32_t p0 = -1, p1 = -1;
  };

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  std::int32_t leaf() {
    nodes_.push_back(Node{});
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  std::int32_t push1(std::int32_t p0, S w0) {
    nodes_.push_back(Node{w0, S{}, p0, -1});
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  std::int32_t push2(std::int32_t p0, S w0, std::int32_t p1, S w1) {
    nodes_.push_back(Node{w0, w1, p0, p1});
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  // Adjoints of every node w.r.t. the node `output`, seeded with `seed`.
  std::vector<S> adjoints(std::int32_t output, S seed = S{1.0}) const {
    std::vector<S> adj(nodes_.size(), S{});
    adj[output] = seed;
    backward(adj);
    return adj;
  }

  // Backward pass with several seeded outputs (vector-Jacobian product).
  std::vector<S> adjoints_seeded(const std::vector<std::pair<std::int32_t, S>>& seeds) const {
    std::vector<S> adj(nodes_.size(), S{});
    for (const auto& [idx, s] : seeds) adj[idx] += s;
    backward(adj);
    return adj;
  }

 private:
  void backward(std::vector<S>& adj) const {
    for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
      const Node& n = nodes_[i];
      const S a = adj[i];
      if (n.p0 >= 0) adj[n.p0] += n.w0 * a;
      if (n.p1 >= 0) adj[n.p1] += n.w1 * a;
    }
  }

  std::vector<Node> nodes_;
};

// Value on a tape. Lightweight handle; arithmetic records nodes.
template <class S>
struct Rev {
  Tape<S>* tape = nullptr;
  std::int32_t idx = -1;
  S val{};

  // += treats a default-constructed Rev as zero so accumulators can
  // start from T{} in code shared with double/Dual.
  Rev& operator+=(const Rev& o);
};

template <class S>
Rev<S> make_leaf(Tape<S>& t, S v) {
  return Rev<S>{&t, t.leaf(), v};
}

template <class S>
Rev<S> make_const(Tape<S>& t, S v) {
  // constants are leaves whose adjoints are simply ignored
  return Rev<S>{&t, t.leaf(), v};
}

template <class S>
Rev<S> operator+(const Rev<S>& a, const Rev<S>& b) {
  return {a.tape, a.tape->push2(a.idx, S{1.0}, b.idx, S{1.0}), a.val + b.val};
}
template <class S>
Rev<S> operator-(const Rev<S>& a, const Rev<S>& b) {
  return {a.tape, a.tape->push2(a.idx, S{1.0}, b.idx, S{-1.0}), a.val - b.val};
}
template <class S>
Rev<S> operator-(const Rev<S>& a) {
  return {a.tape, a.tape->push1(a.idx, S{-1.0}), -a.val};
}
template <class S>
Rev<S> operator*(const Rev<S>& a, const Rev<S>& b) {
  return {a.tape, a.tape->push2(a.idx, b.val, b.idx, a.val), a.val * b.val};
}
template <class S>
Rev<S> operator/(const Rev<S>& a, const Rev<S>& b) {
  const S q = a.val / b.val;
  return {a.tape, a.tape->push2(a.idx, S{1.0} / b.val, b.idx, -q / b.val), q};
}

template <class S>
Rev<S> operator+(const Rev<S>& a, double c) {
  return {a.tape, a.tape->push1(a.idx, S{1.0}), a.val + S{c}};
}
template <class S>
Rev<S> operator-(const Rev<S>& a, double c) {
  return {a.tape, a.tape->push1(a.idx, S{1.0}), a.val - S{c}};
}
template <class S>
Rev<S> operator*(const Rev<S>& a, double c) {
  return {a.tape, a.tape->push1(a.idx, S{c}), a.val * S{c}};
}
template <class S>
Rev<S> operator*(double c, const Rev<S>& a) {
  return a * c;
}

template <class S>
Rev<S> exp(const Rev<S>& a) {
  using std::exp;
  const S e = exp(a.val);
  return {a.tape, a.tape->push1(a.idx, e), e};
}
template <class S>
Rev<S> log(const Rev<S>& a) {
  using std::log;
  return {a.tape, a.tape->push1(a.idx, S{1.0} / a.val), log(a.val)};
}
template <class S>
Rev<S> sqrt(const Rev<S>& a) {
  using std::sqrt;
  const S s = sqrt(a.val);
  return {a.tape, a.tape->push1(a.idx, S{0.5} / s), s};
}
template <class S>
Rev<S> tanh(const Rev<S>& a) {
  using std::tanh;
  const S t = tanh(a.val);
  return {a.tape, a.tape->push1(a.idx, S{1.0} - t * t), t};
}

template <class S>
bool operator<(const Rev<S>& a, const Rev<S>& b) {
  return a.val < b.val;
}

template <class S>
Rev<S>& Rev<S>::operator+=(const Rev<S>& o) {
  *this = (idx < 0) ? o : (*this + o);
  return *this;
}

template <class S>
double value_of(const Rev<S>& x) {
  return value_of(x.val);
}

}  // namespace flyt
