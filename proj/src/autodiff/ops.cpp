#include "masksurf/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "masksurf/autodiff/choices.hpp"

namespace masksurf::ad {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

const NodePtr& need(const Tensor& t, const char* op) {
  if (!t.defined()) {
    throw InvalidArgument(std::string(op) + ": undefined input");
  }
  return t.node();
}

Tensor make_result(Op op, Shape shape, std::shared_ptr<std::vector<Real>> data,
                   std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  node->requires_grad = std::any_of(parents.begin(), parents.end(),
                                    [](const NodePtr& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

Tensor make_result(Op op, Shape shape, std::vector<Real> data,
                   std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  return make_result(op, std::move(shape),
                     std::make_shared<std::vector<Real>>(std::move(data)),
                     std::move(parents), std::move(backward_fn));
}

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
  enum class Kind { same, a_mod, b_mod, general };
  Kind kind = Kind::same;
  Shape out;
  std::size_t na = 0;
  std::size_t nb = 0;
  std::vector<std::size_t> ia, ib;  // general case only

  std::size_t index_a(std::size_t i) const {
    switch (kind) {
      case Kind::same: case Kind::b_mod: return i;
      case Kind::a_mod: return i % na;
      default: return ia[i];
    }
  }
  std::size_t index_b(std::size_t i) const {
    switch (kind) {
      case Kind::same: case Kind::a_mod: return i;
      case Kind::b_mod: return i % nb;
      default: return ib[i];
    }
  }
};

Shape strip_leading_ones(const Shape& s) {
  auto it = std::find_if(s.begin(), s.end(), [](std::size_t d) { return d != 1; });
  return Shape(it, s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - small.size());
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  const std::size_t rank = std::max(a.size(), b.size());
  bc.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw InvalidArgument(std::string(op) + ": cannot broadcast " +
                            to_string(a) + " with " + to_string(b));
    }
    bc.out[i] = (da == 1) ? db : da;
  }
  bc.na = numel(a);
  bc.nb = numel(b);
  const std::size_t n = numel(bc.out);
  if (bc.na == n && bc.nb == n) {
    bc.kind = Broadcast::Kind::same;
  } else if (bc.nb == n && is_suffix(strip_leading_ones(a), bc.out)) {
    bc.kind = Broadcast::Kind::a_mod;
  } else if (bc.na == n && is_suffix(strip_leading_ones(b), bc.out)) {
    bc.kind = Broadcast::Kind::b_mod;
  } else {
    bc.kind = Broadcast::Kind::general;
    auto strides_for = [&](const Shape& s) {
      std::vector<std::size_t> st(rank, 0);
      std::size_t acc = 1;
      for (std::size_t k = 0; k < s.size(); ++k) {
        const std::size_t axis = rank - 1 - k;
        const std::size_t d = s[s.size() - 1 - k];
        st[axis] = (d == 1) ? 0 : acc;
        acc *= d;
      }
      return st;
    };
    const auto sa = strides_for(a);
    const auto sb = strides_for(b);
    bc.ia.resize(n);
    bc.ib.resize(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bc.ia[i] = oa;
      bc.ib[i] = ob;
      for (std::size_t ax = rank; ax-- > 0;) {
        ++idx[ax];
        oa += sa[ax];
        ob += sb[ax];
        if (idx[ax] < bc.out[ax]) break;
        oa -= sa[ax] * idx[ax];
        ob -= sb[ax] * idx[ax];
        idx[ax] = 0;
      }
    }
  }
  return bc;
}

enum class Binary { add, subtract, multiply };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind) {
  static constexpr const char* names[] = {"add", "subtract", "multiply"};
  const char* name = names[static_cast<int>(kind)];
  const auto& na = need(a, name);
  const auto& nb = need(b, name);
  auto bc = std::make_shared<Broadcast>(plan_broadcast(na->shape, nb->shape, name));
  const auto& av = *na->data;
  const auto& bv = *nb->data;
  const std::size_t n = numel(bc->out);
  std::vector<Real> out(n);
  switch (kind) {
    case Binary::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[bc->index_a(i)] + bv[bc->index_b(i)];
      break;
    case Binary::subtract:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[bc->index_a(i)] - bv[bc->index_b(i)];
      break;
    case Binary::multiply:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[bc->index_a(i)] * bv[bc->index_b(i)];
      break;
  }
  const Op op = kind == Binary::add ? Op::add
                : kind == Binary::subtract ? Op::subtract : Op::multiply;
  return make_result(op, bc->out, std::move(out), {na, nb}, [bc, kind](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& g = self.grad;
    const std::size_t n = g.size();
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      if (kind == Binary::multiply) {
        const auto& bv = *pb.data;
        for (std::size_t i = 0; i < n; ++i) ga[bc->index_a(i)] += g[i] * bv[bc->index_b(i)];
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[bc->index_a(i)] += g[i];
      }
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      if (kind == Binary::multiply) {
        const auto& av = *pa.data;
        for (std::size_t i = 0; i < n; ++i) gb[bc->index_b(i)] += g[i] * av[bc->index_a(i)];
      } else if (kind == Binary::subtract) {
        for (std::size_t i = 0; i < n; ++i) gb[bc->index_b(i)] -= g[i];
      } else {
        for (std::size_t i = 0; i < n; ++i) gb[bc->index_b(i)] += g[i];
      }
    }
  });
}

// outer x axis x inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void check_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw InvalidArgument(std::string(op) + ": axis " + std::to_string(axis) +
                          " out of range for shape " + to_string(s));
  }
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape r = s;
  r.erase(r.begin() + static_cast<std::ptrdiff_t>(axis));
  return r;
}

template <class F, class D>
Tensor unary(const Tensor& x, Op op, const char* name, F forward, D derivative) {
  const auto& nx = need(x, name);
  const auto& xv = *nx->data;
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward(xv[i]);
  return make_result(op, nx->shape, std::move(out), {nx}, [derivative](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.ensure_grad();
    const auto& xv = *p.data;
    const auto& yv = *self.data;
    for (std::size_t i = 0; i < gp.size(); ++i) {
      gp[i] += self.grad[i] * derivative(xv[i], yv[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add); }
Tensor subtract(const Tensor& a, const Tensor& b) {
  return binary(a, b, Binary::subtract);
}
Tensor multiply(const Tensor& a, const Tensor& b) {
  return binary(a, b, Binary::multiply);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& na = need(a, "matmul");
  const auto& nb = need(b, "matmul");
  const Shape& sa = na->shape;
  const Shape& sb = nb->shape;
  const bool batched = sa.size() == 3 && sb.size() == 3;
  if (!(batched || (sa.size() == 2 && sb.size() == 2)) ||
      sa[sa.size() - 1] != sb[sb.size() - 2] || (batched && sa[0] != sb[0])) {
    throw InvalidArgument("matmul: incompatible shapes " + to_string(sa) +
                          " and " + to_string(sb));
  }
  const std::size_t batch = batched ? sa[0] : 1;
  const auto m = static_cast<Eigen::Index>(sa[sa.size() - 2]);
  const auto k = static_cast<Eigen::Index>(sa[sa.size() - 1]);
  const auto n = static_cast<Eigen::Index>(sb[sb.size() - 1]);
  Shape out_shape = batched ? Shape{batch, std::size_t(m), std::size_t(n)}
                            : Shape{std::size_t(m), std::size_t(n)};
  std::vector<Real> out(batch * m * n);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    MapR(out.data() + bi * m * n, m, n).noalias() =
        CMapR(na->data->data() + bi * m * k, m, k) *
        CMapR(nb->data->data() + bi * k * n, k, n);
  }
  return make_result(Op::matmul, std::move(out_shape), std::move(out), {na, nb},
                     [batch, m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t bi = 0; bi < batch; ++bi) {
      CMapR g(self.grad.data() + bi * m * n, m, n);
      if (pa.requires_grad) {
        MapR(pa.ensure_grad().data() + bi * m * k, m, k).noalias() +=
            g * CMapR(pb.data->data() + bi * k * n, k, n).transpose();
      }
      if (pb.requires_grad) {
        MapR(pb.ensure_grad().data() + bi * k * n, k, n).noalias() +=
            CMapR(pa.data->data() + bi * m * k, m, k).transpose() * g;
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  const auto& nx = need(x, "reshape");
  if (numel(shape) != nx->data->size()) {
    throw InvalidArgument("reshape: cannot view " + to_string(nx->shape) +
                          " as " + to_string(shape));
  }
  return make_result(Op::reshape, std::move(shape), nx->data, {nx}, [](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm) {
  const auto& nx = need(x, "transpose");
  const Shape& s = nx->shape;
  const std::size_t rank = s.size();
  {
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(rank);
    std::iota(iota.begin(), iota.end(), 0);
    if (sorted != iota) {
      throw InvalidArgument("transpose: invalid permutation for shape " + to_string(s));
    }
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = s[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  // map[i] = source flat index of output element i
  const std::size_t n = nx->data->size();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
      (*map)[i] = off;
      for (std::size_t ax = rank; ax-- > 0;) {
        ++idx[ax];
        off += src_strides[ax];
        if (idx[ax] < out_shape[ax]) break;
        off -= src_strides[ax] * idx[ax];
        idx[ax] = 0;
      }
    }
  }
  const auto& xv = *nx->data;
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*map)[i]];
  return make_result(Op::transpose, std::move(out_shape), std::move(out), {nx},
                     [map](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < map->size(); ++i) gp[(*map)[i]] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  const std::size_t rank = x.dim();
  if (rank < 2) throw InvalidArgument("transpose: need at least 2 axes");
  std::vector<std::size_t> perm(rank);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[rank - 1], perm[rank - 2]);
  return transpose(x, perm);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(need(p, "concat"));
  const Shape& s0 = nodes[0]->shape;
  check_axis(s0, axis, "concat");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& nd : nodes) {
    const Shape& s = nd->shape;
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) ok = false;
    }
    if (!ok) {
      throw InvalidArgument("concat: shape " + to_string(s) +
                            " incompatible with " + to_string(s0));
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_at(out_shape, axis);
  std::vector<Real> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
    const auto& src = *nodes[pi]->data;
    const std::size_t chunk = extents[pi] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src.data() + o * chunk, chunk,
                  out.data() + o * sp.extent * sp.inner + offset * sp.inner);
    }
    offset += extents[pi];
  }
  return make_result(Op::concat, std::move(out_shape), std::move(out), nodes,
                     [sp, extents](Node& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      Node& p = *self.parents[pi];
      const std::size_t chunk = extents[pi] * sp.inner;
      if (p.requires_grad) {
        auto& gp = p.ensure_grad();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const Real* g = self.grad.data() + o * sp.extent * sp.inner + offset * sp.inner;
          Real* dst = gp.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
        }
      }
      offset += extents[pi];
    }
  });
}

Tensor gather(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices) {
  const auto& nx = need(x, "gather");
  check_axis(nx->shape, axis, "gather");
  const AxisSplit sp = split_at(nx->shape, axis);
  for (auto i : indices) {
    if (i >= sp.extent) {
      throw InvalidArgument("gather: index " + std::to_string(i) +
                            " out of range for axis of size " + std::to_string(sp.extent));
    }
  }
  Shape out_shape = nx->shape;
  out_shape[axis] = indices.size();
  const std::size_t m = indices.size();
  std::vector<Real> out(sp.outer * m * sp.inner);
  const auto& xv = *nx->data;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < m; ++j) {
      std::copy_n(xv.data() + (o * sp.extent + indices[j]) * sp.inner, sp.inner,
                  out.data() + (o * m + j) * sp.inner);
    }
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(indices);
  return make_result(Op::gather, std::move(out_shape), std::move(out), {nx},
                     [sp, idx](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    const std::size_t m = idx->size();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t j = 0; j < m; ++j) {
        const Real* g = self.grad.data() + (o * m + j) * sp.inner;
        Real* dst = gp.data() + (o * sp.extent + (*idx)[j]) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += g[i];
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  const auto& nx = need(x, "softmax");
  if (nx->shape.empty() || nx->shape.back() == 0) {
    throw InvalidArgument("softmax: empty last axis in shape " + to_string(nx->shape));
  }
  const std::size_t d = nx->shape.back();
  const std::size_t rows = nx->data->size() / d;
  const auto& xv = *nx->data;
  std::vector<Real> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = xv.data() + r * d;
    Real* yr = out.data() + r * d;
    const Real mx = *std::max_element(xr, xr + d);
    Real sum = 0;
    for (std::size_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < d; ++j) yr[j] /= sum;
  }
  return make_result(Op::softmax, nx->shape, std::move(out), {nx}, [rows, d](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    const auto& y = *self.data;
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* yr = y.data() + r * d;
      const Real* gr = self.grad.data() + r * d;
      Real dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
      Real* dst = gp.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  const auto& nx = need(x, "layer_norm");
  const auto& ng = need(gamma, "layer_norm");
  const auto& nb = need(beta, "layer_norm");
  if (nx->shape.empty() || nx->shape.back() == 0) {
    throw InvalidArgument("layer_norm: empty feature axis");
  }
  const std::size_t d = nx->shape.back();
  if (ng->shape != Shape{d} || nb->shape != Shape{d}) {
    throw InvalidArgument("layer_norm: gamma/beta must have shape [" +
                          std::to_string(d) + "]");
  }
  const std::size_t rows = nx->data->size() / d;
  const auto& xv = *nx->data;
  const auto& gv = *ng->data;
  const auto& bv = *nb->data;
  auto xhat = std::make_shared<std::vector<Real>>(xv.size());
  auto rstd = std::make_shared<std::vector<Real>>(rows);
  std::vector<Real> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = xv.data() + r * d;
    Real mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= Real(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= Real(d);
    const Real rs = Real(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const Real h = (xr[j] - mean) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(Op::layer_norm, nx->shape, std::move(out), {nx, ng, nb},
                     [rows, d, xhat, rstd](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const auto& g = self.grad;
    if (pg.requires_grad) {
      auto& gg = pg.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
    }
    if (px.requires_grad) {
      auto& gx = px.ensure_grad();
      const auto& gamma = *pg.data;
      for (std::size_t r = 0; r < rows; ++r) {
        Real mean_dh = 0, mean_dh_h = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const Real dh = g[r * d + j] * gamma[j];
          mean_dh += dh;
          mean_dh_h += dh * (*xhat)[r * d + j];
        }
        mean_dh /= Real(d);
        mean_dh_h /= Real(d);
        const Real rs = (*rstd)[r];
        for (std::size_t j = 0; j < d; ++j) {
          const Real dh = g[r * d + j] * gamma[j];
          gx[r * d + j] += rs * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
        }
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr Real c = Real(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real a = Real(0.044715);
  return unary(
      x, Op::gelu, "gelu",
      [](Real v) { return Real(0.5) * v * (Real(1) + std::tanh(c * (v + a * v * v * v))); },
      [](Real v, Real) {
        const Real t = std::tanh(c * (v + a * v * v * v));
        return Real(0.5) * (Real(1) + t) +
               Real(0.5) * v * (Real(1) - t * t) * c * (Real(1) + Real(3) * a * v * v);
      });
}

Tensor max_reduce(const Tensor& x, std::size_t axis) {
  const auto& nx = need(x, "max_reduce");
  check_axis(nx->shape, axis, "max_reduce");
  const AxisSplit sp = split_at(nx->shape, axis);
  if (sp.extent == 0) throw InvalidArgument("max_reduce: empty axis");
  const auto& xv = *nx->data;
  std::vector<std::size_t> winners(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      Real bv = xv[o * sp.extent * sp.inner + i];
      for (std::size_t e = 1; e < sp.extent; ++e) {
        const Real v = xv[(o * sp.extent + e) * sp.inner + i];
        if (v > bv) {
          bv = v;
          best = e;
        }
      }
      winners[o * sp.inner + i] = best;
    }
  }
  winners = hold_choice(std::move(winners));
  std::vector<Real> out(winners.size());
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t src = (o * sp.extent + winners[o * sp.inner + i]) * sp.inner + i;
      out[o * sp.inner + i] = xv[src];
      (*arg)[o * sp.inner + i] = src;
    }
  }
  return make_result(Op::max_reduce, drop_axis(nx->shape, axis), std::move(out), {nx},
                     [arg](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < arg->size(); ++i) gp[(*arg)[i]] += self.grad[i];
  });
}

namespace {

Tensor sum_like(const Tensor& x, std::size_t axis, bool mean, const char* name) {
  const auto& nx = need(x, name);
  check_axis(nx->shape, axis, name);
  const AxisSplit sp = split_at(nx->shape, axis);
  if (mean && sp.extent == 0) throw InvalidArgument(std::string(name) + ": empty axis");
  const Real factor = mean ? Real(1) / Real(sp.extent) : Real(1);
  const auto& xv = *nx->data;
  std::vector<Real> out(sp.outer * sp.inner, Real(0));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t e = 0; e < sp.extent; ++e) {
      const Real* src = xv.data() + (o * sp.extent + e) * sp.inner;
      Real* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  if (mean) {
    for (auto& v : out) v /= Real(sp.extent);
  }
  return make_result(mean ? Op::mean_reduce : Op::sum_reduce, drop_axis(nx->shape, axis),
                     std::move(out), {nx}, [sp, factor](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const Real* g = self.grad.data() + o * sp.inner;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        Real* dst = gp.data() + (o * sp.extent + e) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += g[i] * factor;
      }
    }
  });
}

}  // namespace

Tensor mean_reduce(const Tensor& x, std::size_t axis) {
  return sum_like(x, axis, true, "mean_reduce");
}
Tensor sum_reduce(const Tensor& x, std::size_t axis) {
  return sum_like(x, axis, false, "sum_reduce");
}
Tensor mean_all(const Tensor& x) { return mean_reduce(reshape(x, {x.numel()}), 0); }
Tensor sum_all(const Tensor& x) { return sum_reduce(reshape(x, {x.numel()}), 0); }

Tensor power(const Tensor& x, Real exponent) {
  return unary(
      x, Op::power, "power", [exponent](Real v) { return std::pow(v, exponent); },
      [exponent](Real v, Real) { return exponent * std::pow(v, exponent - Real(1)); });
}

Tensor abs(const Tensor& x) {
  const auto& nx = need(x, "abs");
  const auto& xv = *nx->data;
  // Sign codes 0, 1, 2 stand for -1, 0, +1.
  std::vector<std::size_t> code(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) code[i] = xv[i] > 0 ? 2 : (xv[i] < 0 ? 0 : 1);
  code = hold_choice(std::move(code));
  auto sign = std::make_shared<std::vector<Real>>(xv.size());
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*sign)[i] = Real(static_cast<int>(code[i]) - 1);
    out[i] = (*sign)[i] * xv[i];
  }
  return make_result(Op::abs, nx->shape, std::move(out), {nx}, [sign](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] * (*sign)[i];
  });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, Op::sqrt, "sqrt", [](Real v) { return std::sqrt(v); },
      [](Real, Real y) { return Real(0.5) / y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, Op::log, "log", [](Real v) { return std::log(v); },
      [](Real v, Real) { return Real(1) / v; });
}

Tensor scale(const Tensor& x, Real factor) {
  return multiply(x, Tensor::scalar(factor));
}

Tensor add_scalar(const Tensor& x, Real value) {
  return add(x, Tensor::scalar(value));
}

Tensor linear(const Tensor& x, const Tensor& weight) {
  if (weight.dim() != 2 || x.dim() == 0 || x.shape().back() != weight.size(0)) {
    throw InvalidArgument("linear: input " + to_string(x.shape()) +
                          " incompatible with weight " + to_string(weight.shape()));
  }
  const std::size_t in = weight.size(0);
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = weight.size(1);
  Tensor flat = x.dim() == 2 ? x : reshape(x, {rows, in});
  Tensor y = matmul(flat, weight);
  return x.dim() == 2 ? y : reshape(y, std::move(out_shape));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add(linear(x, weight), bias);
}

}  // namespace masksurf::ad
