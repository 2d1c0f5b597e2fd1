#include "memeface/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace memeface::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_matrix(const Tensor& t, int rows, int cols) { return ConstMatMap(t.data(), rows, cols); }
MatMap as_matrix(Tensor& t, int rows, int cols) { return MatMap(t.data(), rows, cols); }

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Var& a, int rank) {
  if (a.value().rank() != rank) {
    shape_error(op, "expected rank " + std::to_string(rank) + ", got " + shape_string(a.shape()));
  }
}

bool wants(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }
const Tensor& input_value(const Node& n, std::size_t i) { return n.inputs[i]->value; }

// Elementwise unary op where the local derivative is a function of (x, y).
template <class Fwd, class Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return make_op(std::move(out), {a}, [deriv](Node& n) {
    const Tensor& xv = input_value(n, 0);
    Tensor g(xv.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * deriv(xv[i], n.value[i]);
    n.inputs[0]->accumulate(g);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  out += b.value();
  return make_op(std::move(out), {a, b}, [](Node& n) {
    if (wants(n, 0)) n.inputs[0]->accumulate(n.grad);
    if (wants(n, 1)) n.inputs[1]->accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    if (wants(n, 0)) n.inputs[0]->accumulate(n.grad);
    if (wants(n, 1)) {
      Tensor g = n.grad;
      g *= -1.0;
      n.inputs[1]->accumulate(g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = input_value(n, 0);
    const Tensor& bv = input_value(n, 1);
    if (wants(n, 0)) {
      Tensor g(av.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * bv[i];
      n.inputs[0]->accumulate(g);
    }
    if (wants(n, 1)) {
      Tensor g(bv.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * av[i];
      n.inputs[1]->accumulate(g);
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape("div", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = input_value(n, 0);
    const Tensor& bv = input_value(n, 1);
    if (wants(n, 0)) {
      Tensor g(av.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] / bv[i];
      n.inputs[0]->accumulate(g);
    }
    if (wants(n, 1)) {
      Tensor g(bv.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = -n.grad[i] * av[i] / (bv[i] * bv[i]);
      n.inputs[1]->accumulate(g);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  return make_op(std::move(out), {a}, [s](Node& n) {
    Tensor g = n.grad;
    g *= s;
    n.inputs[0]->accumulate(g);
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.storage()) v += s;
  return make_op(std::move(out), {a}, [](Node& n) { n.inputs[0]->accumulate(n.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var mul_scalar(const Var& a, const Var& s) {
  if (s.size() != 1) shape_error("mul_scalar", "second operand must be a scalar");
  const double sv = s.value()[0];
  Tensor out = a.value();
  out *= sv;
  return make_op(std::move(out), {a, s}, [](Node& n) {
    const Tensor& av = input_value(n, 0);
    const double sv = input_value(n, 1)[0];
    if (wants(n, 0)) {
      Tensor g = n.grad;
      g *= sv;
      n.inputs[0]->accumulate(g);
    }
    if (wants(n, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) acc += n.grad[i] * av[i];
      n.inputs[1]->accumulate(Tensor(input_value(n, 1).shape(), acc));
    }
  });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(const Var& a) {
  return make_op(Tensor::scalar(a.value().sum()), {a}, [](Node& n) {
    n.inputs[0]->accumulate(Tensor(input_value(n, 0).shape(), n.grad[0]));
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) shape_error("mean", "empty tensor");
  const double count = static_cast<double>(a.size());
  return make_op(Tensor::scalar(a.value().sum() / count), {a}, [count](Node& n) {
    n.inputs[0]->accumulate(Tensor(input_value(n, 0).shape(), n.grad[0] / count));
  });
}

Var sum_rows(const Var& a) {
  require_rank("sum_rows", a, 2);
  const int rows = a.dim(0), cols = a.dim(1);
  Tensor out(Shape{cols});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[c] += a.value().at(r, c);
  return make_op(std::move(out), {a}, [rows, cols](Node& n) {
    Tensor g(Shape{rows, cols});
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) g.at(r, c) = n.grad[c];
    n.inputs[0]->accumulate(g);
  });
}

Var mean_spatial(const Var& a) {
  require_rank("mean_spatial", a, 3);
  const int channels = a.dim(0);
  const std::size_t plane = static_cast<std::size_t>(a.dim(1)) * a.dim(2);
  Tensor out(Shape{channels});
  const double* src = a.value().data();
  for (int c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += src[c * plane + i];
    out[c] = s / static_cast<double>(plane);
  }
  return make_op(std::move(out), {a}, [channels, plane](Node& n) {
    Tensor g(input_value(n, 0).shape());
    for (int c = 0; c < channels; ++c) {
      const double v = n.grad[c] / static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) g[c * plane + i] = v;
    }
    n.inputs[0]->accumulate(g);
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [](Node& n) {
    n.inputs[0]->accumulate(n.grad.reshaped(input_value(n, 0).shape()));
  });
}

Var transpose(const Var& a) {
  require_rank("transpose", a, 2);
  const int rows = a.dim(0), cols = a.dim(1);
  Tensor out(Shape{cols, rows});
  as_matrix(out, cols, rows) = as_matrix(a.value(), rows, cols).transpose();
  return make_op(std::move(out), {a}, [rows, cols](Node& n) {
    Tensor g(Shape{rows, cols});
    as_matrix(g, rows, cols) = as_matrix(n.grad, cols, rows).transpose();
    n.inputs[0]->accumulate(g);
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) shape_error("concat", "no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  int leading = 0;
  for (const Var& p : parts) {
    if (p.value().rank() < 1 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      shape_error("concat", "trailing dims differ: " + shape_string(parts[0].shape()) + " vs " +
                                shape_string(p.shape()));
    }
    leading += p.dim(0);
  }
  Shape out_shape{leading};
  out_shape.insert(out_shape.end(), tail.begin(), tail.end());
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().data(), p.value().data() + p.size(), out.data() + off);
    off += p.size();
  }
  return make_op(std::move(out), parts, [offsets](Node& n) {
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!wants(n, k)) continue;
      const Tensor& v = input_value(n, k);
      Tensor g(v.shape());
      std::copy(n.grad.data() + offsets[k], n.grad.data() + offsets[k] + g.size(), g.data());
      n.inputs[k]->accumulate(g);
    }
  });
}

Var slice(const Var& a, int begin, int end) {
  if (a.value().rank() < 1 || begin < 0 || end > a.dim(0) || begin >= end) {
    shape_error("slice", "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                             shape_string(a.shape()));
  }
  const std::size_t row = a.size() / static_cast<std::size_t>(a.dim(0));
  Shape shape = a.shape();
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy(a.value().data() + begin * row, a.value().data() + end * row, out.data());
  return make_op(std::move(out), {a}, [begin, row](Node& n) {
    Tensor g(input_value(n, 0).shape());
    std::copy(n.grad.data(), n.grad.data() + n.grad.size(), g.data() + begin * row);
    n.inputs[0]->accumulate(g);
  });
}

Var column(const Var& a, int j) {
  require_rank("column", a, 2);
  const int rows = a.dim(0), cols = a.dim(1);
  if (j < 0 || j >= cols) shape_error("column", "index " + std::to_string(j) + " out of range");
  Tensor out(Shape{rows});
  for (int r = 0; r < rows; ++r) out[r] = a.value().at(r, j);
  return make_op(std::move(out), {a}, [rows, cols, j](Node& n) {
    Tensor g(Shape{rows, cols});
    for (int r = 0; r < rows; ++r) g.at(r, j) = n.grad[r];
    n.inputs[0]->accumulate(g);
  });
}

Var stack_columns(const std::vector<Var>& columns) {
  if (columns.empty()) shape_error("stack_columns", "no inputs");
  const int rows = static_cast<int>(columns[0].size());
  const int cols = static_cast<int>(columns.size());
  Tensor out(Shape{rows, cols});
  for (int c = 0; c < cols; ++c) {
    if (columns[c].value().rank() != 1 || columns[c].dim(0) != rows) {
      shape_error("stack_columns", "column " + std::to_string(c) + " has shape " + shape_string(columns[c].shape()));
    }
    for (int r = 0; r < rows; ++r) out.at(r, c) = columns[c].value()[r];
  }
  return make_op(std::move(out), columns, [rows, cols](Node& n) {
    for (int c = 0; c < cols; ++c) {
      if (!wants(n, c)) continue;
      Tensor g(Shape{rows});
      for (int r = 0; r < rows; ++r) g[r] = n.grad.at(r, c);
      n.inputs[c]->accumulate(g);
    }
  });
}

Var stack_scalars(const std::vector<Var>& scalars) {
  Tensor out(Shape{static_cast<int>(scalars.size())});
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].size() != 1) shape_error("stack_scalars", "element " + std::to_string(i) + " is not a scalar");
    out[i] = scalars[i].value()[0];
  }
  return make_op(std::move(out), scalars, [](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (wants(n, i)) n.inputs[i]->accumulate(Tensor(input_value(n, i).shape(), n.grad[i]));
    }
  });
}

Var element(const Var& a, std::size_t i) {
  if (i >= a.size()) shape_error("element", "index out of range");
  return make_op(Tensor::scalar(a.value()[i]), {a}, [i](Node& n) {
    Tensor g(input_value(n, 0).shape());
    g[i] = n.grad[0];
    n.inputs[0]->accumulate(g);
  });
}

Var repeat_spatial(const Var& v, int height, int width) {
  require_rank("repeat_spatial", v, 1);
  const int depth = v.dim(0);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  Tensor out(Shape{depth, height, width});
  for (int d = 0; d < depth; ++d) std::fill_n(out.data() + d * plane, plane, v.value()[d]);
  return make_op(std::move(out), {v}, [depth, plane](Node& n) {
    Tensor g(Shape{depth});
    for (int d = 0; d < depth; ++d) {
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += n.grad[d * plane + i];
      g[d] = s;
    }
    n.inputs[0]->accumulate(g);
  });
}

Var gather_columns(const Var& table, const std::vector<int>& ids) {
  require_rank("gather_columns", table, 2);
  const int rows = table.dim(0), vocab = table.dim(1);
  const int count = static_cast<int>(ids.size());
  Tensor out(Shape{rows, count});
  for (int t = 0; t < count; ++t) {
    if (ids[t] < 0 || ids[t] >= vocab) shape_error("gather_columns", "id " + std::to_string(ids[t]) + " out of range");
    for (int r = 0; r < rows; ++r) out.at(r, t) = table.value().at(r, ids[t]);
  }
  return make_op(std::move(out), {table}, [rows, vocab, ids](Node& n) {
    Tensor g(Shape{rows, vocab});
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (int r = 0; r < rows; ++r) g.at(r, ids[t]) += n.grad.at(r, static_cast<int>(t));
    n.inputs[0]->accumulate(g);
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const int m = a.dim(0), k = a.dim(1), n_cols = b.dim(1);
  if (b.dim(0) != k) shape_error("matmul", "inner dims " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor out(Shape{m, n_cols});
  as_matrix(out, m, n_cols).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n_cols);
  return make_op(std::move(out), {a, b}, [m, k, n_cols](Node& n) {
    auto g = as_matrix(n.grad, m, n_cols);
    if (wants(n, 0)) {
      Tensor ga(Shape{m, k});
      as_matrix(ga, m, k).noalias() = g * as_matrix(input_value(n, 1), k, n_cols).transpose();
      n.inputs[0]->accumulate(ga);
    }
    if (wants(n, 1)) {
      Tensor gb(Shape{k, n_cols});
      as_matrix(gb, k, n_cols).noalias() = as_matrix(input_value(n, 0), m, k).transpose() * g;
      n.inputs[1]->accumulate(gb);
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank("linear", x, 1);
  require_rank("linear", weight, 2);
  const int out_dim = weight.dim(0), in_dim = weight.dim(1);
  if (x.dim(0) != in_dim || bias.value().rank() != 1 || bias.dim(0) != out_dim) {
    shape_error("linear", "x " + shape_string(x.shape()) + ", W " + shape_string(weight.shape()) + ", b " +
                              shape_string(bias.shape()));
  }
  Tensor out = bias.value();
  Eigen::Map<Eigen::VectorXd>(out.data(), out_dim).noalias() +=
      as_matrix(weight.value(), out_dim, in_dim) * Eigen::Map<const Eigen::VectorXd>(x.value().data(), in_dim);
  return make_op(std::move(out), {x, weight, bias}, [out_dim, in_dim](Node& n) {
    Eigen::Map<const Eigen::VectorXd> g(n.grad.data(), out_dim);
    if (wants(n, 0)) {
      Tensor gx(Shape{in_dim});
      Eigen::Map<Eigen::VectorXd>(gx.data(), in_dim).noalias() =
          as_matrix(input_value(n, 1), out_dim, in_dim).transpose() * g;
      n.inputs[0]->accumulate(gx);
    }
    if (wants(n, 1)) {
      Tensor gw(Shape{out_dim, in_dim});
      as_matrix(gw, out_dim, in_dim).noalias() =
          g * Eigen::Map<const Eigen::VectorXd>(input_value(n, 0).data(), in_dim).transpose();
      n.inputs[1]->accumulate(gw);
    }
    if (wants(n, 2)) n.inputs[2]->accumulate(n.grad);
  });
}

namespace {

// Applies `fn(begin, stride, count)` to every 1-D line of a rank-2 tensor along `axis`.
template <class Fn>
void for_each_line(const Shape& shape, int axis, Fn fn) {
  const int rows = shape[0], cols = shape[1];
  if (axis == 0) {
    for (int c = 0; c < cols; ++c) fn(static_cast<std::size_t>(c), static_cast<std::size_t>(cols), rows);
  } else {
    for (int r = 0; r < rows; ++r) fn(static_cast<std::size_t>(r) * cols, std::size_t{1}, cols);
  }
}

}  // namespace

Var softmax(const Var& a, int axis) {
  require_rank("softmax", a, 2);
  if (axis != 0 && axis != 1) shape_error("softmax", "axis must be 0 or 1");
  if (a.dim(axis) == 0) shape_error("softmax", "empty axis");
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for_each_line(a.shape(), axis, [&](std::size_t start, std::size_t stride, int count) {
    double m = x[start];
    for (int i = 1; i < count; ++i) m = std::max(m, x[start + i * stride]);
    double z = 0.0;
    for (int i = 0; i < count; ++i) z += (out[start + i * stride] = std::exp(x[start + i * stride] - m));
    for (int i = 0; i < count; ++i) out[start + i * stride] /= z;
  });
  return make_op(std::move(out), {a}, [axis](Node& n) {
    Tensor g(n.value.shape());
    for_each_line(n.value.shape(), axis, [&](std::size_t start, std::size_t stride, int count) {
      double dot = 0.0;
      for (int i = 0; i < count; ++i) dot += n.grad[start + i * stride] * n.value[start + i * stride];
      for (int i = 0; i < count; ++i) {
        const std::size_t k = start + i * stride;
        g[k] = n.value[k] * (n.grad[k] - dot);
      }
    });
    n.inputs[0]->accumulate(g);
  });
}

Var log_softmax(const Var& a, int axis) {
  require_rank("log_softmax", a, 2);
  if (axis != 0 && axis != 1) shape_error("log_softmax", "axis must be 0 or 1");
  if (a.dim(axis) == 0) shape_error("log_softmax", "empty axis");
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for_each_line(a.shape(), axis, [&](std::size_t start, std::size_t stride, int count) {
    double m = x[start];
    for (int i = 1; i < count; ++i) m = std::max(m, x[start + i * stride]);
    double z = 0.0;
    for (int i = 0; i < count; ++i) z += std::exp(x[start + i * stride] - m);
    const double lse = m + std::log(z);
    for (int i = 0; i < count; ++i) out[start + i * stride] = x[start + i * stride] - lse;
  });
  return make_op(std::move(out), {a}, [axis](Node& n) {
    Tensor g(n.value.shape());
    for_each_line(n.value.shape(), axis, [&](std::size_t start, std::size_t stride, int count) {
      double total = 0.0;
      for (int i = 0; i < count; ++i) total += n.grad[start + i * stride];
      for (int i = 0; i < count; ++i) {
        const std::size_t k = start + i * stride;
        g[k] = n.grad[k] - std::exp(n.value[k]) * total;
      }
    });
    n.inputs[0]->accumulate(g);
  });
}

Var logsumexp(const Var& a) {
  if (a.size() == 0) shape_error("logsumexp", "empty tensor");
  const Tensor& x = a.value();
  const double m = x.max();
  double z = 0.0;
  for (double v : x.values()) z += std::exp(v - m);
  const double lse = m + std::log(z);
  return make_op(Tensor::scalar(lse), {a}, [lse](Node& n) {
    const Tensor& xv = input_value(n, 0);
    Tensor g(xv.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[0] * std::exp(xv[i] - lse);
    n.inputs[0]->accumulate(g);
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", weight, 4);
  const int in_c = x.dim(0), height = x.dim(1), width = x.dim(2);
  const int out_c = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != in_c) {
    shape_error("conv2d", "input channels " + std::to_string(in_c) + " vs weight " + shape_string(weight.shape()));
  }
  if (bias.value().rank() != 1 || bias.dim(0) != out_c) shape_error("conv2d", "bias shape " + shape_string(bias.shape()));
  if (stride < 1 || padding < 0) shape_error("conv2d", "bad stride/padding");
  const int out_h = (height + 2 * padding - kh) / stride + 1;
  const int out_w = (width + 2 * padding - kw) / stride + 1;
  if (out_h <= 0 || out_w <= 0) shape_error("conv2d", "kernel larger than padded input " + shape_string(x.shape()));

  const int patch = in_c * kh * kw;
  const int positions = out_h * out_w;
  Tensor cols(Shape{patch, positions});
  const Tensor& xv = x.value();
  for (int c = 0; c < in_c; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        double* row = cols.data() + static_cast<std::size_t>((c * kh + i) * kw + j) * positions;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - padding + i;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - padding + j;
            row[oy * out_w + ox] = (iy >= 0 && iy < height && ix >= 0 && ix < width) ? xv.at(c, iy, ix) : 0.0;
          }
        }
      }

  Tensor out(Shape{out_c, out_h, out_w});
  auto out_mat = as_matrix(out, out_c, positions);
  out_mat.noalias() = as_matrix(weight.value(), out_c, patch) * as_matrix(cols, patch, positions);
  for (int o = 0; o < out_c; ++o) out_mat.row(o).array() += bias.value()[o];

  return make_op(std::move(out), {x, weight, bias},
                 [cols = std::move(cols), in_c, height, width, out_c, kh, kw, out_h, out_w, stride, padding, patch,
                  positions](Node& n) {
                   auto g = as_matrix(n.grad, out_c, positions);
                   if (wants(n, 1)) {
                     Tensor gw(input_value(n, 1).shape());
                     as_matrix(gw, out_c, patch).noalias() = g * as_matrix(cols, patch, positions).transpose();
                     n.inputs[1]->accumulate(gw);
                   }
                   if (wants(n, 2)) {
                     Tensor gb(Shape{out_c});
                     Eigen::Map<Eigen::VectorXd>(gb.data(), out_c) = g.rowwise().sum();
                     n.inputs[2]->accumulate(gb);
                   }
                   if (wants(n, 0)) {
                     Tensor gcols(Shape{patch, positions});
                     as_matrix(gcols, patch, positions).noalias() =
                         as_matrix(input_value(n, 1), out_c, patch).transpose() * g;
                     Tensor gx(Shape{in_c, height, width});
                     for (int c = 0; c < in_c; ++c)
                       for (int i = 0; i < kh; ++i)
                         for (int j = 0; j < kw; ++j) {
                           const double* row =
                               gcols.data() + static_cast<std::size_t>((c * kh + i) * kw + j) * positions;
                           for (int oy = 0; oy < out_h; ++oy) {
                             const int iy = oy * stride - padding + i;
                             if (iy < 0 || iy >= height) continue;
                             for (int ox = 0; ox < out_w; ++ox) {
                               const int ix = ox * stride - padding + j;
                               if (ix >= 0 && ix < width) gx.at(c, iy, ix) += row[oy * out_w + ox];
                             }
                           }
                         }
                     n.inputs[0]->accumulate(gx);
                   }
                 });
}

Var upsample_nearest2x(const Var& x) {
  require_rank("upsample_nearest2x", x, 3);
  const int channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  Tensor out(Shape{channels, 2 * height, 2 * width});
  for (int c = 0; c < channels; ++c)
    for (int h = 0; h < 2 * height; ++h)
      for (int w = 0; w < 2 * width; ++w) out.at(c, h, w) = x.value().at(c, h / 2, w / 2);
  return make_op(std::move(out), {x}, [channels, height, width](Node& n) {
    Tensor g(Shape{channels, height, width});
    for (int c = 0; c < channels; ++c)
      for (int h = 0; h < 2 * height; ++h)
        for (int w = 0; w < 2 * width; ++w) g.at(c, h / 2, w / 2) += n.grad.at(c, h, w);
    n.inputs[0]->accumulate(g);
  });
}

}  // namespace memeface::ops
