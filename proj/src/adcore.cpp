#include "musefm/adcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <Eigen/Dense>

#include "musefm/common.hpp"

namespace musefm::ad {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

struct RC {
  std::size_t r, c;
};

RC rc(const Shape& s) {
  switch (s.size()) {
    case 0: return {1, 1};
    case 1: return {1, s[0]};
    case 2: return {s[0], s[1]};
    default: throw ValidationError("adcore: tensors of rank > 2 are not supported (" + shape_str(s) + ")");
  }
}

CMap cmap(const std::vector<double>& v, RC d) {
  return CMap(v.data(), static_cast<Eigen::Index>(d.r), static_cast<Eigen::Index>(d.c));
}
MMap mmap(std::vector<double>& v, RC d) {
  return MMap(v.data(), static_cast<Eigen::Index>(d.r), static_cast<Eigen::Index>(d.c));
}

void require_finite(const char* op, const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw ValidationError(std::string("adcore: non-finite value produced by ") + op);
}

Tensor make(const char* op, Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs) {
  require_finite(op, value);
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool rg = false;
  if (g_grad_enabled)
    for (const Tensor* t : inputs) rg = rg || t->requires_grad();
  node->requires_grad = rg;
  if (rg) {
    for (const Tensor* t : inputs) node->parents.push_back(t->node());
    node->grad.assign(node->value.size(), 0.0);
  }
  return Tensor(std::move(node));
}

Tensor make_multi(const char* op, Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs) {
  require_finite(op, value);
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool rg = false;
  if (g_grad_enabled)
    for (const auto& t : inputs) rg = rg || t.requires_grad();
  node->requires_grad = rg;
  if (rg) {
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->grad.assign(node->value.size(), 0.0);
  }
  return Tensor(std::move(node));
}

enum class Bcast { Same, Row, Scalar };

Bcast bcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (b.size() == 1) return Bcast::Scalar;
  const RC da = rc(a.shape()), db = rc(b.shape());
  if (db.r == 1 && db.c == da.c) return Bcast::Row;
  throw ValidationError(std::string("adcore: ") + op + " shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

inline std::size_t bidx(Bcast k, std::size_t i, std::size_t cols) {
  switch (k) {
    case Bcast::Same: return i;
    case Bcast::Row: return i % cols;
    default: return 0;
  }
}

template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  const Bcast k = bcast_kind(op, a, b);
  const std::size_t cols = rc(a.shape()).c;
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[bidx(k, i, cols)]);
  Tensor t = make(op, a.shape(), std::move(out), {&a, &b});
  if (t.requires_grad()) {
    t.node()->backward_fn = [k, cols, dfa, dfb](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const std::size_t j = bidx(k, i, cols);
        const double g = self.grad[i];
        if (pa.requires_grad) pa.grad[i] += g * dfa(pa.value[i], pb.value[j], self.value[i]);
        if (pb.requires_grad) pb.grad[j] += g * dfb(pa.value[i], pb.value[j], self.value[i]);
      }
    };
  }
  return t;
}

template <class F, class D>
Tensor unary(const char* op, const Tensor& a, F f, D df) {
  const auto& av = a.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  Tensor t = make(op, a.shape(), std::move(out), {&a});
  if (t.requires_grad()) {
    t.node()->backward_fn = [df](Node& self) {
      Node& p = *self.parents[0];
      if (!p.requires_grad) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * df(p.value[i], self.value[i]);
    };
  }
  return t;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size())
    throw ValidationError("adcore: value count does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

Tensor Tensor::leaf(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->grad.assign(t.node_->value.size(), 0.0);
  return t;
}

std::size_t Tensor::rows() const { return rc(shape()).r; }
std::size_t Tensor::cols() const { return rc(shape()).c; }

double Tensor::item() const {
  if (size() != 1) throw ValidationError("adcore: item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  const RC da = rc(a.shape()), db = rc(b.shape());
  if (a.shape().size() != 2 || b.shape().size() != 2 || da.c != db.r)
    throw ValidationError("adcore: matmul shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(da.r * db.c);
  mmap(out, {da.r, db.c}).noalias() = cmap(a.node()->value, da) * cmap(b.node()->value, db);
  Tensor t = make("matmul", {da.r, db.c}, std::move(out), {&a, &b});
  if (t.requires_grad()) {
    t.node()->backward_fn = [da, db](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      const auto g = cmap(self.grad, {da.r, db.c});
      if (pa.requires_grad) mmap(pa.grad, da).noalias() += g * cmap(pb.value, db).transpose();
      if (pb.requires_grad) mmap(pb.grad, db).noalias() += cmap(pa.value, da).transpose() * g;
    };
  }
  return t;
}

Tensor transpose(const Tensor& a) {
  const RC d = rc(a.shape());
  std::vector<double> out(d.r * d.c);
  mmap(out, {d.c, d.r}) = cmap(a.node()->value, d).transpose();
  Tensor t = make("transpose", {d.c, d.r}, std::move(out), {&a});
  if (t.requires_grad()) {
    t.node()->backward_fn = [d](Node& self) {
      Node& p = *self.parents[0];
      if (p.requires_grad) mmap(p.grad, d) += cmap(self.grad, {d.c, d.r}).transpose();
    };
  }
  return t;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ValidationError("adcore: reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  rc(shape);
  Tensor t = make("reshape", std::move(shape), a.node()->value, {&a});
  if (t.requires_grad()) {
    t.node()->backward_fn = [](Node& self) {
      Node& p = *self.parents[0];
      if (!p.requires_grad) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    };
  }
  return t;
}

Tensor slice(const Tensor& a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  const RC d = rc(a.shape());
  if (r0 >= r1 || c0 >= c1 || r1 > d.r || c1 > d.c)
    throw ValidationError("adcore: slice out of range for " + shape_str(a.shape()));
  const RC o{r1 - r0, c1 - c0};
  std::vector<double> out(o.r * o.c);
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < o.r; ++i)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((r0 + i) * d.c + c0), o.c,
                out.begin() + static_cast<std::ptrdiff_t>(i * o.c));
  Tensor t = make("slice", {o.r, o.c}, std::move(out), {&a});
  if (t.requires_grad()) {
    t.node()->backward_fn = [d, o, r0, c0](Node& self) {
      Node& p = *self.parents[0];
      if (!p.requires_grad) return;
      for (std::size_t i = 0; i < o.r; ++i)
        for (std::size_t j = 0; j < o.c; ++j) p.grad[(r0 + i) * d.c + c0 + j] += self.grad[i * o.c + j];
    };
  }
  return t;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ValidationError("adcore: concat of nothing");
  if (axis != 0 && axis != 1) throw ValidationError("adcore: concat axis must be 0 or 1");
  std::vector<RC> dims;
  for (const auto& p : parts) dims.push_back(rc(p.shape()));
  RC o = dims[0];
  for (std::size_t i = 1; i < dims.size(); ++i) {
    if (axis == 0) {
      if (dims[i].c != o.c) throw ValidationError("adcore: concat axis 0 column mismatch");
      o.r += dims[i].r;
    } else {
      if (dims[i].r != o.r) throw ValidationError("adcore: concat axis 1 row mismatch");
      o.c += dims[i].c;
    }
  }
  std::vector<double> out(o.r * o.c);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].node()->value;
    const RC d = dims[p];
    for (std::size_t i = 0; i < d.r; ++i)
      for (std::size_t j = 0; j < d.c; ++j) {
        const std::size_t dst = axis == 0 ? (off + i) * o.c + j : i * o.c + off + j;
        out[dst] = v[i * d.c + j];
      }
    off += axis == 0 ? d.r : d.c;
  }
  Tensor t = make_multi("concat", {o.r, o.c}, std::move(out), parts);
  if (t.requires_grad()) {
    t.node()->backward_fn = [dims, o, axis](Node& self) {
      std::size_t off = 0;
      for (std::size_t p = 0; p < dims.size(); ++p) {
        Node& par = *self.parents[p];
        const RC d = dims[p];
        if (par.requires_grad)
          for (std::size_t i = 0; i < d.r; ++i)
            for (std::size_t j = 0; j < d.c; ++j) {
              const std::size_t src = axis == 0 ? (off + i) * o.c + j : i * o.c + off + j;
              par.grad[i * d.c + j] += self.grad[src];
            }
        off += axis == 0 ? d.r : d.c;
      }
    };
  }
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Tensor scale(const Tensor& a, double c) {
  return unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor sum(const Tensor& a) {
  const auto& av = a.node()->value;
  Tensor t = make("sum", {}, {std::accumulate(av.begin(), av.end(), 0.0)}, {&a});
  if (t.requires_grad()) {
    t.node()->backward_fn = [](Node& self) {
      Node& p = *self.parents[0];
      if (!p.requires_grad) return;
      for (double& g : p.grad) g += self.grad[0];
    };
  }
  return t;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_axis(const Tensor& a, int axis) {
  const RC d = rc(a.shape());
  if (axis != 0 && axis != 1) throw ValidationError("adcore: sum_axis axis must be 0 or 1");
  const auto& av = a.node()->value;
  const RC o = axis == 0 ? RC{1, d.c} : RC{d.r, 1};
  std::vector<double> out(o.r * o.c, 0.0);
  for (std::size_t i = 0; i < d.r; ++i)
    for (std::size_t j = 0; j < d.c; ++j) out[axis == 0 ? j : i] += av[i * d.c + j];
  Tensor t = make("sum_axis", {o.r, o.c}, std::move(out), {&a});
  if (t.requires_grad()) {
    t.node()->backward_fn = [d, axis](Node& self) {
      Node& p = *self.parents[0];
      if (!p.requires_grad) return;
      for (std::size_t i = 0; i < d.r; ++i)
        for (std::size_t j = 0; j < d.c; ++j) p.grad[i * d.c + j] += self.grad[axis == 0 ? j : i];
    };
  }
  return t;
}

Tensor mean_rows(const Tensor& a) { return scale(sum_axis(a, 0), 1.0 / static_cast<double>(a.rows())); }

Tensor softmax(const Tensor& a) {
  const RC d = rc(a.shape());
  const auto& av = a.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < d.r; ++i) {
    const double* x = av.data() + i * d.c;
    double* y = out.data() + i * d.c;
    const double mx = *std::max_element(x, x + d.c);
    double s = 0.0;
    for (std::size_t j = 0; j < d.c; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < d.c; ++j) y[j] /= s;
  }
  Tensor t = make("softmax", a.shape(), std::move(out), {&a});
  if (t.requires_grad()) {
    t.node()->backward_fn = [d](Node& self) {
      Node& p = *self.parents[0];
      if (!p.requires_grad) return;
      for (std::size_t i = 0; i < d.r; ++i) {
        const double* y = self.value.data() + i * d.c;
        const double* g = self.grad.data() + i * d.c;
        double dot = 0.0;
        for (std::size_t j = 0; j < d.c; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < d.c; ++j) p.grad[i * d.c + j] += y[j] * (g[j] - dot);
      }
    };
  }
  return t;
}

Tensor layer_norm(const Tensor& a, double eps) {
  const RC d = rc(a.shape());
  const auto& av = a.node()->value;
  std::vector<double> out(av.size());
  std::vector<double> inv_std(d.r);
  const double n = static_cast<double>(d.c);
  for (std::size_t i = 0; i < d.r; ++i) {
    const double* x = av.data() + i * d.c;
    double mu = 0.0;
    for (std::size_t j = 0; j < d.c; ++j) mu += x[j];
    mu /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < d.c; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= n;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d.c; ++j) out[i * d.c + j] = (x[j] - mu) * inv_std[i];
  }
  Tensor t = make("layer_norm", a.shape(), std::move(out), {&a});
  if (t.requires_grad()) {
    t.node()->backward_fn = [d, inv_std = std::move(inv_std)](Node& self) {
      Node& p = *self.parents[0];
      if (!p.requires_grad) return;
      const double n = static_cast<double>(d.c);
      for (std::size_t i = 0; i < d.r; ++i) {
        const double* xh = self.value.data() + i * d.c;
        const double* g = self.grad.data() + i * d.c;
        double mg = 0.0, mgx = 0.0;
        for (std::size_t j = 0; j < d.c; ++j) {
          mg += g[j];
          mgx += g[j] * xh[j];
        }
        mg /= n;
        mgx /= n;
        for (std::size_t j = 0; j < d.c; ++j) p.grad[i * d.c + j] += inv_std[i] * (g[j] - mg - xh[j] * mgx);
      }
    };
  }
  return t;
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  const RC d = rc(table.shape());
  if (ids.empty()) throw ValidationError("adcore: embedding_lookup with no ids");
  std::vector<double> out(ids.size() * d.c);
  const auto& tv = table.node()->value;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= d.r)
      throw ValidationError("adcore: embedding id out of range");
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * d.c), d.c,
                out.begin() + static_cast<std::ptrdiff_t>(i * d.c));
  }
  Tensor t = make("embedding_lookup", {ids.size(), d.c}, std::move(out), {&table});
  if (t.requires_grad()) {
    t.node()->backward_fn = [d, idv = std::vector<int>(ids.begin(), ids.end())](Node& self) {
      Node& p = *self.parents[0];
      if (!p.requires_grad) return;
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < d.c; ++j) p.grad[idv[i] * d.c + j] += self.grad[i * d.c + j];
    };
  }
  return t;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ValidationError("adcore: mse_loss shape mismatch " + shape_str(pred.shape()) + " vs " +
                          shape_str(target.shape()));
  const auto& pv = pred.node()->value;
  const auto& tv = target.node()->value;
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) s += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  const double n = static_cast<double>(pv.size());
  Tensor t = make("mse_loss", {}, {s / n}, {&pred, &target});
  if (t.requires_grad()) {
    t.node()->backward_fn = [n](Node& self) {
      Node& p = *self.parents[0];
      Node& q = *self.parents[1];
      const double g = self.grad[0] * 2.0 / n;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double diff = p.value[i] - q.value[i];
        if (p.requires_grad) p.grad[i] += g * diff;
        if (q.requires_grad) q.grad[i] -= g * diff;
      }
    };
  }
  return t;
}

Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& targets) {
  if (logits.size() != targets.size()) throw ValidationError("adcore: bce_with_logits_loss shape mismatch");
  const auto& xv = logits.node()->value;
  const auto& tv = targets.node()->value;
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double x = xv[i];
    s += std::max(x, 0.0) - x * tv[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const double n = static_cast<double>(xv.size());
  Tensor t = make("bce_with_logits_loss", {}, {s / n}, {&logits, &targets});
  if (t.requires_grad()) {
    t.node()->backward_fn = [n](Node& self) {
      Node& p = *self.parents[0];
      Node& q = *self.parents[1];
      const double g = self.grad[0] / n;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double x = p.value[i];
        const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        if (p.requires_grad) p.grad[i] += g * (sig - q.value[i]);
        if (q.requires_grad) q.grad[i] -= g * x;
      }
    };
  }
  return t;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) throw ValidationError("adcore: backward requires a scalar loss");
  if (!std::isfinite(loss.item())) throw ValidationError("adcore: backward on non-finite loss");
  if (!loss.requires_grad()) return;

  // iterative post-order DFS
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (n->backward_fn) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

}  // namespace musefm::ad
