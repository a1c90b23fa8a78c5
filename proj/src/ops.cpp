#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "lfts/tensor.hpp"

namespace lfts::tensor {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap cmap(const std::vector<double>& v, Shape s) {
  return CMap(v.data(), static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}
MMap mmap(std::vector<double>& v, Shape s) {
  return MMap(v.data(), static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}

Graph& graph_of(Var a, Var b, const char* op) {
  if (!a.graph || a.graph != b.graph) throw ContractError(std::string(op) + ": operands belong to different graphs");
  return *a.graph;
}

[[noreturn]] void mismatch(const char* op, Shape a, Shape b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

enum class Bcast { Same, Row, Scalar };

Bcast broadcast_kind(const char* op, Shape a, Shape b) {
  if (a == b) return Bcast::Same;
  if (b.rows == 1 && b.cols == a.cols) return Bcast::Row;
  if (b.size() == 1) return Bcast::Scalar;
  mismatch(op, a, b);
}

std::size_t bindex(Bcast k, std::size_t i, std::size_t cols) {
  switch (k) {
    case Bcast::Same: return i;
    case Bcast::Row: return i % cols;
    default: return 0;
  }
}

// Shared body of add/sub: out = a + sign * b.
Var additive(Var a, Var b, double sign, const char* op) {
  Graph& g = graph_of(a, b, op);
  const Shape sa = a.shape();
  const Bcast kind = broadcast_kind(op, sa, b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + sign * bv[bindex(kind, i, sa.cols)];
  const std::size_t ia = a.id, ib = b.id;
  return g.emit(sa, std::move(out), {ia, ib}, [ia, ib, kind, sign, sa](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    if (gr.needs_grad(ia)) {
      auto& ga = gr.grad_of(ia);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (gr.needs_grad(ib)) {
      auto& gb = gr.grad_of(ib);
      for (std::size_t i = 0; i < go.size(); ++i) gb[bindex(kind, i, sa.cols)] += sign * go[i];
    }
  });
}

template <class F, class D>
Var unary(Var a, F f, D df) {
  Graph& g = *a.graph;
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id;
  return g.emit(a.shape(), std::move(out), {ia}, [ia, df](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    const auto& x = gr.node(ia).value;
    const auto& y = gr.node(self).value;
    auto& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * df(x[i], y[i]);
  });
}

// Iterates the "lines" of a matrix along an axis: axis 1 walks rows, axis 0 columns.
struct Lines {
  std::size_t count, length, stride_line, stride_elem;
  std::size_t at(std::size_t line, std::size_t k) const { return line * stride_line + k * stride_elem; }
};

Lines lines_of(Shape s, int axis, const char* op) {
  if (axis == 1) return {s.rows, s.cols, s.cols, 1};
  if (axis == 0) return {s.cols, s.rows, 1, s.cols};
  throw ShapeError(std::string(op) + ": axis must be 0 or 1, got " + std::to_string(axis));
}

Shape reduced_shape(Shape s, int axis) { return axis == 1 ? Shape{s.rows, 1} : Shape{1, s.cols}; }

}  // namespace

Var add(Var a, Var b) { return additive(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return additive(a, b, -1.0, "sub"); }

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b, "mul");
  const Shape sa = a.shape();
  const Bcast kind = broadcast_kind("mul", sa, b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[bindex(kind, i, sa.cols)];
  const std::size_t ia = a.id, ib = b.id;
  return g.emit(sa, std::move(out), {ia, ib}, [ia, ib, kind, sa](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    const auto& x = gr.node(ia).value;
    const auto& y = gr.node(ib).value;
    if (gr.needs_grad(ia)) {
      auto& ga = gr.grad_of(ia);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[bindex(kind, i, sa.cols)];
    }
    if (gr.needs_grad(ib)) {
      auto& gb = gr.grad_of(ib);
      for (std::size_t i = 0; i < go.size(); ++i) gb[bindex(kind, i, sa.cols)] += go[i] * x[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}
Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}
Var neg(Var a) { return scale(a, -1.0); }
Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
Var ln(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}
Var power(Var a, double p) {
  return unary(a, [p](double x) { return std::pow(x, p); },
               [p](double x, double) { return p * std::pow(x, p - 1.0); });
}
Var elu(Var a, double alpha) {
  return unary(a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
               [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b, "matmul");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) mismatch("matmul", sa, sb);
  const Shape so{sa.rows, sb.cols};
  std::vector<double> out(so.size());
  mmap(out, so).noalias() = cmap(a.value(), sa) * cmap(b.value(), sb);
  const std::size_t ia = a.id, ib = b.id;
  return g.emit(so, std::move(out), {ia, ib}, [ia, ib, sa, sb, so](Graph& gr, std::size_t self) {
    const auto go = cmap(gr.node(self).grad, so);
    if (gr.needs_grad(ia)) mmap(gr.grad_of(ia), sa).noalias() += go * cmap(gr.node(ib).value, sb).transpose();
    if (gr.needs_grad(ib)) mmap(gr.grad_of(ib), sb).noalias() += cmap(gr.node(ia).value, sa).transpose() * go;
  });
}

Var matmul_t(Var a, Var b) {
  Graph& g = graph_of(a, b, "matmul_t");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.cols) mismatch("matmul_t", sa, sb);
  const Shape so{sa.rows, sb.rows};
  std::vector<double> out(so.size());
  mmap(out, so).noalias() = cmap(a.value(), sa) * cmap(b.value(), sb).transpose();
  const std::size_t ia = a.id, ib = b.id;
  return g.emit(so, std::move(out), {ia, ib}, [ia, ib, sa, sb, so](Graph& gr, std::size_t self) {
    const auto go = cmap(gr.node(self).grad, so);
    if (gr.needs_grad(ia)) mmap(gr.grad_of(ia), sa).noalias() += go * cmap(gr.node(ib).value, sb);
    if (gr.needs_grad(ib)) mmap(gr.grad_of(ib), sb).noalias() += go.transpose() * cmap(gr.node(ia).value, sa);
  });
}

Var transpose(Var a) {
  const Shape sa = a.shape();
  const Shape so{sa.cols, sa.rows};
  std::vector<double> out(so.size());
  mmap(out, so) = cmap(a.value(), sa).transpose();
  const std::size_t ia = a.id;
  return a.graph->emit(so, std::move(out), {ia}, [ia, sa, so](Graph& gr, std::size_t self) {
    mmap(gr.grad_of(ia), sa) += cmap(gr.node(self).grad, so).transpose();
  });
}

Var reshape(Var a, Shape s) {
  if (s.size() != a.shape().size()) mismatch("reshape", a.shape(), s);
  const std::size_t ia = a.id;
  return a.graph->emit(s, a.value(), {ia}, [ia](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    auto& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Shape sa = a.shape();
  if (begin > end || end > sa.rows)
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " + sa.str());
  const Shape so{end - begin, sa.cols};
  const auto& av = a.value();
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(begin * sa.cols),
                          av.begin() + static_cast<std::ptrdiff_t>(end * sa.cols));
  const std::size_t ia = a.id;
  return a.graph->emit(so, std::move(out), {ia}, [ia, begin, sa](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    auto& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[begin * sa.cols + i] += go[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Shape sa = a.shape();
  if (begin > end || end > sa.cols)
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " + sa.str());
  const std::size_t w = end - begin;
  const Shape so{sa.rows, w};
  const auto& av = a.value();
  std::vector<double> out(so.size());
  for (std::size_t r = 0; r < sa.rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = av[r * sa.cols + begin + c];
  const std::size_t ia = a.id;
  return a.graph->emit(so, std::move(out), {ia}, [ia, begin, sa, w](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    auto& ga = gr.grad_of(ia);
    for (std::size_t r = 0; r < sa.rows; ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * sa.cols + begin + c] += go[r * w + c];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Graph& g = *parts[0].graph;
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.graph != &g) throw ContractError("concat_rows: operands belong to different graphs");
    if (p.cols() != cols) mismatch("concat_rows", parts[0].shape(), p.shape());
    rows += p.rows();
    ids.push_back(p.id);
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const Var& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return g.emit({rows, cols}, std::move(out), ids, [ids](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    std::size_t offset = 0;
    for (auto id : ids) {
      const std::size_t n = gr.node(id).value.size();
      if (gr.needs_grad(id)) {
        auto& gi = gr.grad_of(id);
        for (std::size_t i = 0; i < n; ++i) gi[i] += go[offset + i];
      }
      offset += n;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Graph& g = *parts[0].graph;
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.graph != &g) throw ContractError("concat_cols: operands belong to different graphs");
    if (p.rows() != rows) mismatch("concat_cols", parts[0].shape(), p.shape());
    cols += p.cols();
    ids.push_back(p.id);
  }
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) out[r * cols + offset + c] = p.value()[r * w + c];
    offset += w;
  }
  return g.emit({rows, cols}, std::move(out), ids, [ids, rows, cols](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t w = gr.node(id).shape.cols;
      if (gr.needs_grad(id)) {
        auto& gi = gr.grad_of(id);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gi[r * w + c] += go[r * cols + off + c];
      }
      off += w;
    }
  });
}

Var softmax(Var a, int axis) {
  const Shape sa = a.shape();
  const Lines ln = lines_of(sa, axis, "softmax");
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t l = 0; l < ln.count; ++l) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < ln.length; ++k) mx = std::max(mx, av[ln.at(l, k)]);
    double total = 0.0;
    for (std::size_t k = 0; k < ln.length; ++k) {
      const double e = std::exp(av[ln.at(l, k)] - mx);
      out[ln.at(l, k)] = e;
      total += e;
    }
    for (std::size_t k = 0; k < ln.length; ++k) out[ln.at(l, k)] /= total;
  }
  const std::size_t ia = a.id;
  return a.graph->emit(sa, std::move(out), {ia}, [ia, ln](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    const auto& y = gr.node(self).value;
    auto& ga = gr.grad_of(ia);
    for (std::size_t l = 0; l < ln.count; ++l) {
      double dot = 0.0;
      for (std::size_t k = 0; k < ln.length; ++k) dot += go[ln.at(l, k)] * y[ln.at(l, k)];
      for (std::size_t k = 0; k < ln.length; ++k) {
        const std::size_t i = ln.at(l, k);
        ga[i] += y[i] * (go[i] - dot);
      }
    }
  });
}

Var sum(Var a, int axis) {
  const Shape sa = a.shape();
  const Lines ln = lines_of(sa, axis, "sum");
  const auto& av = a.value();
  std::vector<double> out(ln.count, 0.0);
  for (std::size_t l = 0; l < ln.count; ++l)
    for (std::size_t k = 0; k < ln.length; ++k) out[l] += av[ln.at(l, k)];
  const std::size_t ia = a.id;
  return a.graph->emit(reduced_shape(sa, axis), std::move(out), {ia}, [ia, ln](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    auto& ga = gr.grad_of(ia);
    for (std::size_t l = 0; l < ln.count; ++l)
      for (std::size_t k = 0; k < ln.length; ++k) ga[ln.at(l, k)] += go[l];
  });
}

Var mean(Var a, int axis) {
  const Lines ln = lines_of(a.shape(), axis, "mean");
  return scale(sum(a, axis), 1.0 / static_cast<double>(ln.length));
}

Var sum_all(Var a) {
  const auto& av = a.value();
  double total = 0.0;
  for (double v : av) total += v;
  const std::size_t ia = a.id;
  return a.graph->emit({1, 1}, {total}, {ia}, [ia](Graph& gr, std::size_t self) {
    const double go = gr.node(self).grad[0];
    for (double& v : gr.grad_of(ia)) v += go;
  });
}

Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.shape().size())); }

Var max_over_axis(Var a, int axis) {
  const Shape sa = a.shape();
  const Lines ln = lines_of(sa, axis, "max_over_axis");
  if (ln.length == 0) throw ShapeError("max_over_axis: empty axis in " + sa.str());
  const auto& av = a.value();
  std::vector<std::size_t> best(ln.count);
  for (std::size_t l = 0; l < ln.count; ++l) {
    best[l] = ln.at(l, 0);
    for (std::size_t k = 1; k < ln.length; ++k)
      if (av[ln.at(l, k)] > av[best[l]]) best[l] = ln.at(l, k);
  }
  auto arg = std::make_shared<std::vector<std::size_t>>(a.graph->choose(std::move(best)));
  std::vector<double> out(ln.count);
  for (std::size_t l = 0; l < ln.count; ++l) out[l] = av[(*arg)[l]];
  const std::size_t ia = a.id;
  return a.graph->emit(reduced_shape(sa, axis), std::move(out), {ia}, [ia, arg](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    auto& ga = gr.grad_of(ia);
    for (std::size_t l = 0; l < go.size(); ++l) ga[(*arg)[l]] += go[l];
  });
}

Var layer_norm(Var a, Var gain, Var shift, double eps) {
  Graph& g = graph_of(a, gain, "layer_norm");
  graph_of(a, shift, "layer_norm");
  const Shape sa = a.shape();
  const Shape sv{1, sa.cols};
  if (gain.shape() != sv) mismatch("layer_norm", sa, gain.shape());
  if (shift.shape() != sv) mismatch("layer_norm", sa, shift.shape());
  const auto& x = a.value();
  const auto& gv = gain.value();
  const auto& bv = shift.value();
  const std::size_t n = sa.cols;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_sd = std::make_shared<std::vector<double>>(sa.rows);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < sa.rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += x[r * n + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (x[r * n + c] - mu) * (x[r * n + c] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (x[r * n + c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  const std::size_t ia = a.id, ig = gain.id, ib = shift.id;
  return g.emit(sa, std::move(out), {ia, ig, ib}, [=](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    const auto& gv2 = gr.node(ig).value;
    const double dn = static_cast<double>(n);
    if (gr.needs_grad(ig)) {
      auto& gg = gr.grad_of(ig);
      for (std::size_t i = 0; i < go.size(); ++i) gg[i % n] += go[i] * (*xhat)[i];
    }
    if (gr.needs_grad(ib)) {
      auto& gb = gr.grad_of(ib);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i % n] += go[i];
    }
    if (gr.needs_grad(ia)) {
      auto& ga = gr.grad_of(ia);
      for (std::size_t r = 0; r < sa.rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          const double gh = go[r * n + c] * gv2[c];
          m1 += gh;
          m2 += gh * (*xhat)[r * n + c];
        }
        m1 /= dn;
        m2 /= dn;
        for (std::size_t c = 0; c < n; ++c) {
          const double gh = go[r * n + c] * gv2[c];
          ga[r * n + c] += (*inv_sd)[r] * (gh - m1 - (*xhat)[r * n + c] * m2);
        }
      }
    }
  });
}

Var dropout(Var a, double p, bool training, const CounterRng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return a;
  const auto& av = a.value();
  auto mask = std::make_shared<std::vector<double>>(av.size());
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    (*mask)[i] = rng.uniform(i) < p ? 0.0 : keep;
    out[i] = av[i] * (*mask)[i];
  }
  const std::size_t ia = a.id;
  return a.graph->emit(a.shape(), std::move(out), {ia}, [ia, mask](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    auto& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (*mask)[i];
  });
}

Var dropout(Var a, double p) {
  if (!a.graph->training() || p == 0.0) return a;
  return dropout(a, p, true, a.graph->next_rng());
}

Var conv1d(Var x, Var w, std::size_t kernel, std::size_t stride, std::size_t pad, Padding mode) {
  Graph& g = graph_of(x, w, "conv1d");
  const Shape sx = x.shape(), sw = w.shape();
  const std::size_t L = sx.rows, cin = sx.cols;
  if (kernel == 0 || stride == 0) throw ShapeError("conv1d: kernel and stride must be positive");
  if (sw.rows != kernel * cin) mismatch("conv1d", sx, sw);
  if (L + 2 * pad < kernel) throw ShapeError("conv1d: input " + sx.str() + " shorter than kernel");
  if (mode == Padding::Circular && pad > L) throw ShapeError("conv1d: circular padding wider than input");
  const std::size_t lout = (L + 2 * pad - kernel) / stride + 1;
  const Shape scol{lout, kernel * cin};
  // Source row of every (output step, tap); -1 marks a zero pad.
  auto src = std::make_shared<std::vector<std::ptrdiff_t>>(lout * kernel);
  for (std::size_t t = 0; t < lout; ++t)
    for (std::size_t j = 0; j < kernel; ++j) {
      auto s = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(pad);
      const auto n = static_cast<std::ptrdiff_t>(L);
      if (mode == Padding::Circular)
        s = ((s % n) + n) % n;
      else if (s < 0 || s >= n)
        s = -1;
      (*src)[t * kernel + j] = s;
    }
  auto col = std::make_shared<std::vector<double>>(scol.size(), 0.0);
  const auto& xv = x.value();
  for (std::size_t t = 0; t < lout; ++t)
    for (std::size_t j = 0; j < kernel; ++j) {
      const auto s = (*src)[t * kernel + j];
      if (s < 0) continue;
      for (std::size_t c = 0; c < cin; ++c)
        (*col)[t * scol.cols + j * cin + c] = xv[static_cast<std::size_t>(s) * cin + c];
    }
  const Shape so{lout, sw.cols};
  std::vector<double> out(so.size());
  mmap(out, so).noalias() = cmap(*col, scol) * cmap(w.value(), sw);
  const std::size_t ix = x.id, iw = w.id;
  return g.emit(so, std::move(out), {ix, iw}, [=](Graph& gr, std::size_t self) {
    const auto go = cmap(gr.node(self).grad, so);
    if (gr.needs_grad(iw)) mmap(gr.grad_of(iw), sw).noalias() += cmap(*col, scol).transpose() * go;
    if (gr.needs_grad(ix)) {
      RowMat gcol = go * cmap(gr.node(iw).value, sw).transpose();
      auto& gx = gr.grad_of(ix);
      for (std::size_t t = 0; t < lout; ++t)
        for (std::size_t j = 0; j < kernel; ++j) {
          const auto s = (*src)[t * kernel + j];
          if (s < 0) continue;
          for (std::size_t c = 0; c < cin; ++c)
            gx[static_cast<std::size_t>(s) * cin + c] +=
                gcol(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j * cin + c));
        }
    }
  });
}

Var gather_rows(Var a, const std::vector<std::size_t>& rows) {
  const Shape sa = a.shape();
  for (auto r : rows)
    if (r >= sa.rows) throw ShapeError("gather_rows: row " + std::to_string(r) + " outside " + sa.str());
  const std::size_t c = sa.cols;
  std::vector<double> out(rows.size() * c);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(a.value().begin() + static_cast<std::ptrdiff_t>(rows[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  const std::size_t ia = a.id;
  return a.graph->emit({rows.size(), c}, std::move(out), {ia}, [ia, rows, c](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    auto& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < c; ++k) ga[rows[i] * c + k] += go[i * c + k];
  });
}

Var embedding_lookup(Var table, const std::vector<int>& ids) {
  const std::size_t vocab = table.rows();
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw ContractError("embedding_lookup: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                          std::to_string(vocab));
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, rows);
}

Var scatter_rows(Var base, Var src, const std::vector<std::size_t>& rows) {
  Graph& g = graph_of(base, src, "scatter_rows");
  const Shape sb = base.shape(), ss = src.shape();
  if (ss.cols != sb.cols || ss.rows != rows.size()) mismatch("scatter_rows", sb, ss);
  std::vector<char> replaced(sb.rows, 0);
  for (auto r : rows) {
    if (r >= sb.rows) throw ShapeError("scatter_rows: row " + std::to_string(r) + " outside " + sb.str());
    if (replaced[r]) throw ContractError("scatter_rows: row " + std::to_string(r) + " listed twice");
    replaced[r] = 1;
  }
  const std::size_t c = sb.cols;
  std::vector<double> out = base.value();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(src.value().begin() + static_cast<std::ptrdiff_t>(i * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(rows[i] * c));
  const std::size_t ib = base.id, is = src.id;
  return g.emit(sb, std::move(out), {ib, is}, [=](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    if (gr.needs_grad(ib)) {
      auto& gb = gr.grad_of(ib);
      for (std::size_t r = 0; r < sb.rows; ++r)
        if (!replaced[r])
          for (std::size_t k = 0; k < c; ++k) gb[r * c + k] += go[r * c + k];
    }
    if (gr.needs_grad(is)) {
      auto& gs = gr.grad_of(is);
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < c; ++k) gs[i * c + k] += go[rows[i] * c + k];
    }
  });
}

Var broadcast_rows(Var a, std::size_t n) {
  const Shape sa = a.shape();
  if (sa.rows != 1) throw ShapeError("broadcast_rows: expected a single row, got " + sa.str());
  std::vector<double> out;
  out.reserve(n * sa.cols);
  for (std::size_t r = 0; r < n; ++r) out.insert(out.end(), a.value().begin(), a.value().end());
  const std::size_t ia = a.id;
  return a.graph->emit({n, sa.cols}, std::move(out), {ia}, [ia, n, sa](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    auto& ga = gr.grad_of(ia);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < sa.cols; ++k) ga[k] += go[r * sa.cols + k];
  });
}

Var causal_mask(Var scores) {
  const Shape s = scores.shape();
  std::vector<double> out = scores.value();
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = r + 1; c < s.cols; ++c) out[r * s.cols + c] = -std::numeric_limits<double>::infinity();
  const std::size_t ia = scores.id;
  return scores.graph->emit(s, std::move(out), {ia}, [ia, s](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    auto& ga = gr.grad_of(ia);
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c <= r && c < s.cols; ++c) ga[r * s.cols + c] += go[r * s.cols + c];
  });
}

Var max_pool1d(Var x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  const Shape sx = x.shape();
  if (kernel == 0 || stride == 0) throw ShapeError("max_pool1d: kernel and stride must be positive");
  if (pad >= kernel || sx.rows + 2 * pad < kernel) throw ShapeError("max_pool1d: bad window for " + sx.str());
  const std::size_t lout = (sx.rows + 2 * pad - kernel) / stride + 1;
  const std::size_t c = sx.cols;
  const auto& xv = x.value();
  std::vector<std::size_t> picks(lout * c);
  for (std::size_t t = 0; t < lout; ++t) {
    const auto lo = static_cast<std::ptrdiff_t>(t * stride) - static_cast<std::ptrdiff_t>(pad);
    const std::size_t begin = static_cast<std::size_t>(std::max<std::ptrdiff_t>(lo, 0));
    const std::size_t end = std::min(sx.rows, static_cast<std::size_t>(lo + static_cast<std::ptrdiff_t>(kernel)));
    for (std::size_t k = 0; k < c; ++k) {
      std::size_t best = begin * c + k;
      for (std::size_t s = begin + 1; s < end; ++s)
        if (xv[s * c + k] > xv[best]) best = s * c + k;
      picks[t * c + k] = best;
    }
  }
  auto arg = std::make_shared<std::vector<std::size_t>>(x.graph->choose(std::move(picks)));
  std::vector<double> out(lout * c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*arg)[i]];
  const std::size_t ix = x.id;
  return x.graph->emit({lout, c}, std::move(out), {ix}, [ix, arg](Graph& gr, std::size_t self) {
    const auto& go = gr.node(self).grad;
    auto& gx = gr.grad_of(ix);
    for (std::size_t i = 0; i < go.size(); ++i) gx[(*arg)[i]] += go[i];
  });
}

Var custom(const std::vector<Var>& inputs, Shape shape, std::vector<double> value,
           std::function<void(std::span<const double>, std::vector<std::vector<double>*>&)> grad_fn) {
  if (inputs.empty()) throw ContractError("custom op needs at least one input");
  if (value.size() != shape.size()) throw ShapeError("custom op: value does not match " + shape.str());
  Graph& g = *inputs[0].graph;
  std::vector<std::size_t> ids;
  for (const Var& v : inputs) {
    if (v.graph != &g) throw ContractError("custom op: operands belong to different graphs");
    ids.push_back(v.id);
  }
  return g.emit(shape, std::move(value), ids, [ids, grad_fn](Graph& gr, std::size_t self) {
    std::vector<std::vector<double>*> gin;
    for (auto id : ids) gin.push_back(gr.needs_grad(id) ? &gr.grad_of(id) : nullptr);
    grad_fn(gr.node(self).grad, gin);
  });
}

}  // namespace lfts::tensor
