#include "uimer/autograd.hpp"

#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace uimer::ag {
namespace {

thread_local bool g_grad_enabled = true;

using BackwardFn = std::function<std::vector<Var>(const Var&, const Var&)>;

Var make(Matrix value, std::vector<Var> parents, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
    node->requires_grad = true;
    node->is_leaf = false;
  }
  return Var(std::move(node));
}

Eigen::Index broadcast_dim(Eigen::Index a, Eigen::Index b, const char* op) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw std::invalid_argument(std::string("ag::") + op + ": incompatible shapes");
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
  if (m.rows() == 1 && m.cols() == cols) return m.replicate(rows, 1);
  if (m.cols() == 1 && m.rows() == rows) return m.replicate(1, cols);
  throw std::invalid_argument("ag: cannot broadcast operand");
}

// Sums a broadcast gradient back down to the operand's shape.
Var reduce_to(Var g, Eigen::Index rows, Eigen::Index cols) {
  if (rows == 1 && g.rows() != 1) g = sum_rows(g);
  if (cols == 1 && g.cols() != 1) g = sum_cols(g);
  return g;
}

std::vector<int> iota(int start, int count) {
  std::vector<int> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = start + i;
  return out;
}

}  // namespace

double Var::item() const {
  if (node_->value.size() != 1) throw std::logic_error("ag::Var::item on non-scalar");
  return node_->value(0, 0);
}

void Var::zero_grad() { node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols()); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
  return Var(std::move(node));
}

Var detach(const Var& x) { return constant(x.value()); }

Var add(const Var& a, const Var& b) {
  const auto r = broadcast_dim(a.rows(), b.rows(), "add");
  const auto c = broadcast_dim(a.cols(), b.cols(), "add");
  Matrix v = expand(a.value(), r, c) + expand(b.value(), r, c);
  return make(std::move(v), {a, b}, [](const Var& out, const Var& g) {
    const auto& p = out.node()->parents;
    return std::vector<Var>{reduce_to(g, p[0].rows(), p[0].cols()),
                            reduce_to(g, p[1].rows(), p[1].cols())};
  });
}

Var sub(const Var& a, const Var& b) { return add(a, neg(b)); }

Var mul(const Var& a, const Var& b) {
  const auto r = broadcast_dim(a.rows(), b.rows(), "mul");
  const auto c = broadcast_dim(a.cols(), b.cols(), "mul");
  Matrix v = expand(a.value(), r, c).cwiseProduct(expand(b.value(), r, c));
  return make(std::move(v), {a, b}, [](const Var& out, const Var& g) {
    const auto& p = out.node()->parents;
    std::vector<Var> grads(2);
    if (p[0].requires_grad()) grads[0] = reduce_to(mul(g, p[1]), p[0].rows(), p[0].cols());
    if (p[1].requires_grad()) grads[1] = reduce_to(mul(g, p[0]), p[1].rows(), p[1].cols());
    return grads;
  });
}

Var div(const Var& a, const Var& b) { return mul(a, recip(b)); }

Var scale(const Var& a, double c) {
  return make(a.value() * c, {a}, [c](const Var&, const Var& g) {
    return std::vector<Var>{scale(g, c)};
  });
}

Var add_scalar(const Var& a, double c) {
  return make(a.value().array() + c, {a}, [](const Var&, const Var& g) {
    return std::vector<Var>{g};
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("ag::matmul: inner dimensions differ");
  return make(a.value() * b.value(), {a, b}, [](const Var& out, const Var& g) {
    const auto& p = out.node()->parents;
    std::vector<Var> grads(2);
    if (p[0].requires_grad()) grads[0] = matmul(g, transpose(p[1]));
    if (p[1].requires_grad()) grads[1] = matmul(transpose(p[0]), g);
    return grads;
  });
}

Var transpose(const Var& a) {
  return make(a.value().transpose(), {a}, [](const Var&, const Var& g) {
    return std::vector<Var>{transpose(g)};
  });
}

Var exp(const Var& a) {
  return make(a.value().array().exp(), {a}, [](const Var& out, const Var& g) {
    return std::vector<Var>{mul(g, out)};
  });
}

Var log(const Var& a) {
  return make(a.value().array().log(), {a}, [](const Var& out, const Var& g) {
    return std::vector<Var>{mul(g, recip(out.node()->parents[0]))};
  });
}

Var log2(const Var& a) { return scale(log(a), 1.0 / std::numbers::ln2); }

Var recip(const Var& a) {
  return make(a.value().array().inverse(), {a}, [](const Var& out, const Var& g) {
    return std::vector<Var>{neg(mul(g, square(out)))};
  });
}

Var tanh(const Var& a) {
  return make(a.value().array().tanh(), {a}, [](const Var& out, const Var& g) {
    return std::vector<Var>{mul(g, add_scalar(neg(square(out)), 1.0))};
  });
}

Var sigmoid(const Var& a) {
  Matrix v = (1.0 + (-a.value().array()).exp()).inverse();
  return make(std::move(v), {a}, [](const Var& out, const Var& g) {
    return std::vector<Var>{mul(g, mul(out, add_scalar(neg(out), 1.0)))};
  });
}

Var abs(const Var& a) {
  return make(a.value().cwiseAbs(), {a}, [](const Var& out, const Var& g) {
    Matrix sign = out.node()->parents[0].value().unaryExpr(
        [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    return std::vector<Var>{mul(g, constant(std::move(sign)))};
  });
}

Var relu(const Var& a) {
  return make(a.value().cwiseMax(0.0), {a}, [](const Var& out, const Var& g) {
    Matrix mask = out.node()->parents[0].value().unaryExpr(
        [](double x) { return x > 0.0 ? 1.0 : 0.0; });
    return std::vector<Var>{mul(g, constant(std::move(mask)))};
  });
}

Var square(const Var& a) { return mul(a, a); }

Var clamp(const Var& a, double lo, double hi) {
  return make(a.value().cwiseMax(lo).cwiseMin(hi), {a}, [lo, hi](const Var& out, const Var& g) {
    Matrix mask = out.node()->parents[0].value().unaryExpr(
        [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
    return std::vector<Var>{mul(g, constant(std::move(mask)))};
  });
}

Var sum_rows(const Var& a) {
  return make(a.value().colwise().sum(), {a}, [](const Var& out, const Var& g) {
    const auto& p = out.node()->parents[0];
    return std::vector<Var>{add(constant(Matrix::Zero(p.rows(), p.cols())), g)};
  });
}

Var sum_cols(const Var& a) {
  return make(a.value().rowwise().sum(), {a}, [](const Var& out, const Var& g) {
    const auto& p = out.node()->parents[0];
    return std::vector<Var>{add(constant(Matrix::Zero(p.rows(), p.cols())), g)};
  });
}

Var sum(const Var& a) { return sum_cols(sum_rows(a)); }

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var gather_rows(const Var& a, std::span<const int> rows) {
  Matrix v(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("ag::gather_rows: index");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return make(std::move(v), {a}, [idx = std::move(idx)](const Var& out, const Var& g) {
    return std::vector<Var>{scatter_rows(g, idx, out.node()->parents[0].rows())};
  });
}

Var scatter_rows(const Var& a, std::span<const int> rows, Eigen::Index out_rows) {
  if (static_cast<Eigen::Index>(rows.size()) != a.rows()) {
    throw std::invalid_argument("ag::scatter_rows: index count");
  }
  Matrix v = Matrix::Zero(out_rows, a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    v.row(rows[i]) += a.value().row(static_cast<Eigen::Index>(i));
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return make(std::move(v), {a}, [idx = std::move(idx)](const Var&, const Var& g) {
    return std::vector<Var>{gather_rows(g, idx)};
  });
}

Var gather_cols(const Var& a, std::span<const int> cols) {
  return transpose(gather_rows(transpose(a), cols));
}

Var row(const Var& a, int r) {
  const int idx[1] = {r};
  return gather_rows(a, idx);
}

Var at(const Var& a, int r, int c) {
  const int idx[1] = {c};
  return gather_cols(row(a, r), idx);
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("ag::concat_rows: empty");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw std::invalid_argument("ag::concat_rows: cols");
    total += p.rows();
  }
  Matrix v(total, parts.front().cols());
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    v.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return make(std::move(v), {parts.begin(), parts.end()}, [](const Var& out, const Var& g) {
    std::vector<Var> grads;
    int offset = 0;
    for (const auto& p : out.node()->parents) {
      const int n = static_cast<int>(p.rows());
      grads.push_back(p.requires_grad() ? gather_rows(g, iota(offset, n)) : Var());
      offset += n;
    }
    return grads;
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("ag::concat_cols: empty");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw std::invalid_argument("ag::concat_cols: rows");
    total += p.cols();
  }
  Matrix v(parts.front().rows(), total);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    v.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return make(std::move(v), {parts.begin(), parts.end()}, [](const Var& out, const Var& g) {
    std::vector<Var> grads;
    int offset = 0;
    for (const auto& p : out.node()->parents) {
      const int n = static_cast<int>(p.cols());
      grads.push_back(p.requires_grad() ? gather_cols(g, iota(offset, n)) : Var());
      offset += n;
    }
    return grads;
  });
}

Var log_softmax_rows(const Var& a) {
  // The row max is a constant shift; it cancels in value and gradient.
  Var shift = constant(a.value().rowwise().maxCoeff());
  Var shifted = sub(a, shift);
  Var lse = log(sum_cols(exp(shifted)));
  return sub(shifted, lse);
}

Var softmax_rows(const Var& a) { return exp(log_softmax_rows(a)); }

namespace {

std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_map<Node*, bool> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited[root] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* child = node->parents[next++].node();
      if (child->requires_grad && !visited[child]) {
        visited[child] = true;
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

std::unordered_map<Node*, Var> propagate(const Var& y, bool create_graph) {
  std::unordered_map<Node*, Var> grads;
  if (!y.requires_grad()) return grads;
  if (y.value().size() != 1) throw std::invalid_argument("ag::grad: output must be scalar");
  grads[y.node()] = constant(Matrix::Ones(1, 1));

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  const auto order = topo_order(y.node());
  // Keep every node alive while walking; the map holds Vars of gradients only.
  std::unordered_map<Node*, Var> self;
  self[y.node()] = y;
  for (auto* n : order) {
    for (const auto& p : n->parents) self.emplace(p.node(), p);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf) continue;
    auto g = grads.find(n);
    if (g == grads.end()) continue;
    auto parent_grads = n->backward(self.at(n), g->second);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      const Var& p = n->parents[i];
      if (!p.requires_grad() || !parent_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(p.node(), parent_grads[i]);
      if (!inserted) slot->second = add(slot->second, parent_grads[i]);
    }
  }
  return grads;
}

}  // namespace

std::vector<Var> grad(const Var& y, std::span<const Var> xs, bool create_graph) {
  auto grads = propagate(y, create_graph);
  std::vector<Var> out;
  out.reserve(xs.size());
  for (const auto& x : xs) {
    auto it = grads.find(x.node());
    if (it != grads.end()) {
      out.push_back(it->second);
    } else {
      out.push_back(constant(Matrix::Zero(x.rows(), x.cols())));
    }
  }
  return out;
}

void backward(const Var& y) {
  auto grads = propagate(y, false);
  for (auto& [node, g] : grads) {
    if (!node->is_leaf) continue;
    if (node->grad.size() == 0) node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
    node->grad += g.value();
  }
}

}  // namespace uimer::ag
