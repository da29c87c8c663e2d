#include "zsseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

namespace {

using detail::BackwardFn;
using detail::Node;

constexpr double kNormFloor = 1e-12;
constexpr double kProbFloor = 1e-12;

Tensor make_result(const char* op, Shape shape, std::vector<Real> data, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->id = detail::next_node_id();
  node->op = op;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

const std::vector<Real>& in_data(const Node& self, std::size_t i) { return self.inputs[i]->data; }

// c[m x n] (+)= a[m x k] * b[k x n]; a and b may be read transposed.
void gemm(std::span<const Real> a, bool trans_a, std::span<const Real> b, bool trans_b, std::size_t m,
          std::size_t k, std::size_t n, std::span<Real> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      if (accumulate) {
        c[i * n + j] = static_cast<Real>(c[i * n + j] + acc);
      } else {
        c[i * n + j] = static_cast<Real>(acc);
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<Real> out(m * n);
  gemm(a.data(), false, b.data(), false, m, k, n, out, false);
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [m, k, n](const Node& self, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       if (!gin[0].empty()) gemm(g, false, in_data(self, 1), true, m, n, k, gin[0], true);
                       if (!gin[1].empty()) gemm(in_data(self, 0), true, g, false, k, m, n, gin[1], true);
                     });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<Real> out(m * n);
  auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  return make_result("transpose", {n, m}, std::move(out), {a},
                     [m, n](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) gin[0][i * n + j] += g[j * m + i];
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  return make_result("reshape", std::move(shape), a.to_vector(), {a},
                     [](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {a, b},
                     [](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       for (auto& buf : gin)
                         if (!buf.empty())
                           for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {a, b},
                     [](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       if (!gin[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                       if (!gin[1].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {a, b},
                     [](const Node& self, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       const auto& x = in_data(self, 0);
                       const auto& y = in_data(self, 1);
                       if (!gin[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * y[i];
                       if (!gin[1].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * x[i];
                     });
}

Tensor scale(const Tensor& a, Real factor) {
  std::vector<Real> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result("scale", a.shape(), std::move(out), {a},
                     [factor](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * factor;
                     });
}

Tensor scale_by(const Tensor& a, const Tensor& factor) {
  if (factor.numel() != 1 || factor.rank() > 1) {
    throw DimensionError("scale_by: factor must be a scalar, got " + shape_string(factor.shape()));
  }
  const Real f = factor.item();
  std::vector<Real> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * f;
  return make_result("scale_by", a.shape(), std::move(out), {a, factor},
                     [](const Node& self, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       const auto& x = in_data(self, 0);
                       const Real f = in_data(self, 1)[0];
                       if (!gin[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * f;
                       if (!gin[1].empty()) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * x[i];
                         gin[1][0] += static_cast<Real>(acc);
                       }
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  if (bias.rank() != 1 || bias.dim(0) != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match rows of " +
                         shape_string(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<Real> out(m * n);
  auto xs = x.data(), bs = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xs[i * n + j] + bs[j];
  return make_result("add_bias", x.shape(), std::move(out), {x, bias},
                     [m, n](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       if (!gin[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                       if (!gin[1].empty()) {
                         for (std::size_t j = 0; j < n; ++j) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < m; ++i) acc += g[i * n + j];
                           gin[1][j] += static_cast<Real>(acc);
                         }
                       }
                     });
}

Tensor exp(const Tensor& a) {
  std::vector<Real> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  return make_result("exp", a.shape(), std::move(out), {a},
                     [](const Node& self, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * self.data[i];
                     });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (Real v : a.data()) acc += v;
  return make_result("sum", {}, {static_cast<Real>(acc)}, {a},
                     [](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       for (auto& v : gin[0]) v += g[0];
                     });
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (Real v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  return make_result("mean", {}, {static_cast<Real>(acc / n)}, {a},
                     [n](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       const Real share = static_cast<Real>(g[0] / n);
                       for (auto& v : gin[0]) v += share;
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis, Real temperature) {
  if (!(temperature > Real(0))) {
    throw ParameterError("softmax: temperature must be positive, got " + std::to_string(temperature));
  }
  if (x.rank() == 0 || axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(x.shape()));
  }
  // View as [outer x len] with stride, covering vectors and both matrix axes.
  std::size_t len, lines, stride, line_step;
  if (x.rank() == 1) {
    len = x.dim(0); lines = 1; stride = 1; line_step = 0;
  } else if (axis == 1) {
    len = x.cols(); lines = x.rows(); stride = 1; line_step = x.cols();
  } else {
    len = x.rows(); lines = x.cols(); stride = x.cols(); line_step = 1;
  }
  auto in = x.data();
  std::vector<Real> out(x.numel());
  for (std::size_t l = 0; l < lines; ++l) {
    const std::size_t base = l * line_step;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, static_cast<double>(in[base + i * stride]) / temperature);
    double total = 0.0;
    std::vector<double> e(len);
    for (std::size_t i = 0; i < len; ++i) {
      e[i] = std::exp(static_cast<double>(in[base + i * stride]) / temperature - mx);
      total += e[i];
    }
    for (std::size_t i = 0; i < len; ++i) out[base + i * stride] = static_cast<Real>(e[i] / total);
  }
  return make_result(
      "softmax", x.shape(), std::move(out), {x},
      [len, lines, stride, line_step, temperature](const Node& self, std::span<const Real> g,
                                                   std::vector<std::vector<Real>>& gin) {
        const auto& y = self.data;
        for (std::size_t l = 0; l < lines; ++l) {
          const std::size_t base = l * line_step;
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) dot += static_cast<double>(g[base + i * stride]) * y[base + i * stride];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t at = base + i * stride;
            gin[0][at] += static_cast<Real>(y[at] * (g[at] - dot) / temperature);
          }
        }
      });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_matrix(x, "l2_normalize_rows");
  const std::size_t m = x.rows(), n = x.cols();
  auto in = x.data();
  std::vector<Real> out(m * n);
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += static_cast<double>(in[i * n + j]) * in[i * n + j];
    norms[i] = std::sqrt(sq);
    const double denom = std::max(norms[i], kNormFloor);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<Real>(in[i * n + j] / denom);
  }
  return make_result("l2_normalize_rows", x.shape(), std::move(out), {x},
                     [m, n, norms = std::move(norms)](const Node& self, std::span<const Real> g,
                                                      std::vector<std::vector<Real>>& gin) {
                       const auto& y = self.data;
                       for (std::size_t i = 0; i < m; ++i) {
                         if (norms[i] <= kNormFloor) {
                           for (std::size_t j = 0; j < n; ++j) gin[0][i * n + j] += static_cast<Real>(g[i * n + j] / kNormFloor);
                           continue;
                         }
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[i * n + j]) * y[i * n + j];
                         for (std::size_t j = 0; j < n; ++j) {
                           gin[0][i * n + j] += static_cast<Real>((g[i * n + j] - y[i * n + j] * dot) / norms[i]);
                         }
                       }
                     });
}

Tensor mean_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix(x, "mean_rows");
  if (rows.empty()) throw ContractError("mean_rows: empty index set");
  const std::size_t n = x.cols();
  for (auto r : rows) {
    if (r >= x.rows()) throw DimensionError("mean_rows: row " + std::to_string(r) + " out of range for " + shape_string(x.shape()));
  }
  auto in = x.data();
  std::vector<Real> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (auto r : rows) acc += in[r * n + j];
    out[j] = static_cast<Real>(acc / static_cast<double>(rows.size()));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result("mean_rows", {n}, std::move(out), {x},
                     [n, idx = std::move(idx)](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       const double share = 1.0 / static_cast<double>(idx.size());
                       for (auto r : idx)
                         for (std::size_t j = 0; j < n; ++j) gin[0][r * n + j] += static_cast<Real>(g[j] * share);
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  if (rows.empty()) throw ContractError("gather_rows: empty index list");
  const std::size_t n = x.cols();
  auto in = x.data();
  std::vector<Real> out(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " + shape_string(x.shape()));
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(rows[i] * n), n, out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result("gather_rows", {rows.size(), n}, std::move(out), {x},
                     [n, idx = std::move(idx)](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < n; ++j) gin[0][idx[i] * n + j] += g[i * n + j];
                     });
}

Tensor row(const Tensor& x, std::size_t r) {
  const std::size_t idx[] = {r};
  return reshape(gather_rows(x, idx), {x.cols()});
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
  const std::size_t n = parts[0].rank() == 1 ? parts[0].dim(0) : parts[0].cols();
  std::vector<std::size_t> offsets;
  std::vector<Real> out;
  for (const auto& p : parts) {
    const std::size_t cols = p.rank() == 1 ? p.dim(0) : p.cols();
    if (p.rank() == 0 || cols != n) {
      throw DimensionError("concat_rows: part " + shape_string(p.shape()) + " does not have " + std::to_string(n) + " columns");
    }
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  const std::size_t m = out.size() / n;
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result("concat_rows", {m, n}, std::move(out), std::move(inputs),
                     [offsets = std::move(offsets)](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       for (std::size_t p = 0; p < gin.size(); ++p) {
                         if (gin[p].empty()) continue;
                         for (std::size_t i = 0; i < gin[p].size(); ++i) gin[p][i] += g[offsets[p] + i];
                       }
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  if (count == 0 || begin + count > x.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_string(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  auto in = x.data();
  std::vector<Real> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = in[i * n + begin + j];
  return make_result("slice_cols", {m, count}, std::move(out), {x},
                     [m, n, begin, count](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < count; ++j) gin[0][i * n + begin + j] += g[i * count + j];
                     });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != m) {
      throw DimensionError("concat_cols: part " + shape_string(p.shape()) + " does not have " + std::to_string(m) + " rows");
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<Real> out(m * total);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto in = parts[p].data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j) out[i * total + offset + j] = in[i * widths[p] + j];
    offset += widths[p];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result("concat_cols", {m, total}, std::move(out), std::move(inputs),
                     [m, total, widths = std::move(widths)](const Node&, std::span<const Real> g,
                                                            std::vector<std::vector<Real>>& gin) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < gin.size(); ++p) {
                         if (!gin[p].empty()) {
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < widths[p]; ++j) gin[p][i * widths[p] + j] += g[i * total + offset + j];
                         }
                         offset += widths[p];
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(n) + "], got " +
                         shape_string(gamma.shape()) + " and " + shape_string(beta.shape()));
  }
  auto in = x.data();
  auto gs = gamma.data(), bs = beta.data();
  std::vector<Real> out(m * n);
  std::vector<double> xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = in[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (in[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = static_cast<Real>(xhat[i * n + j] * gs[j] + bs[j]);
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Node& self, std::span<const Real> g,
                                                                   std::vector<std::vector<Real>>& gin) {
        const auto& gs = in_data(self, 1);
        if (!gin[1].empty() || !gin[2].empty()) {
          for (std::size_t j = 0; j < n; ++j) {
            double dg = 0.0, db = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
              dg += g[i * n + j] * xhat[i * n + j];
              db += g[i * n + j];
            }
            if (!gin[1].empty()) gin[1][j] += static_cast<Real>(dg);
            if (!gin[2].empty()) gin[2][j] += static_cast<Real>(db);
          }
        }
        if (gin[0].empty()) return;
        for (std::size_t i = 0; i < m; ++i) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(g[i * n + j]) * gs[j];
            sum_d += d;
            sum_dx += d * xhat[i * n + j];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(g[i * n + j]) * gs[j];
            const double dx = inv_std[i] / static_cast<double>(n) *
                              (static_cast<double>(n) * d - sum_d - xhat[i * n + j] * sum_dx);
            gin[0][i * n + j] += static_cast<Real>(dx);
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  auto in = x.data();
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = in[i];
    out[i] = static_cast<Real>(0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))));
  }
  return make_result("gelu", x.shape(), std::move(out), {x},
                     [](const Node& self, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       const auto& in = in_data(self, 0);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double v = in[i];
                         const double t = std::tanh(c * (v + a * v * v * v));
                         const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
                         gin[0][i] += static_cast<Real>(g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt));
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_matrix(logits, "cross_entropy");
  const std::size_t m = logits.rows(), k = logits.cols();
  if (targets.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) + " rows");
  }
  auto in = logits.data();
  std::vector<double> probs(m * k);
  std::vector<bool> clamped(m);
  double total = 0.0;
  const double log_floor = std::log(kProbFloor);
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= k) throw DimensionError("cross_entropy: target " + std::to_string(targets[i]) + " out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(in[i * k + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(in[i * k + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(in[i * k + j] - lse);
    double logp = in[i * k + targets[i]] - lse;
    clamped[i] = logp < log_floor;
    if (clamped[i]) logp = log_floor;
    total -= logp;
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return make_result("cross_entropy", {}, {static_cast<Real>(total / static_cast<double>(m))}, {logits},
                     [m, k, probs = std::move(probs), clamped = std::move(clamped), tgt = std::move(tgt)](
                         const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       const double share = g[0] / static_cast<double>(m);
                       for (std::size_t i = 0; i < m; ++i) {
                         if (clamped[i]) continue;
                         for (std::size_t j = 0; j < k; ++j) {
                           const double onehot = (j == tgt[i]) ? 1.0 : 0.0;
                           gin[0][i * k + j] += static_cast<Real>(share * (probs[i * k + j] - onehot));
                         }
                       }
                     });
}

Tensor scatter_add_rows(const Tensor& x, std::span<const std::size_t> index, std::size_t groups) {
  require_matrix(x, "scatter_add_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (index.size() != m) {
    throw DimensionError("scatter_add_rows: " + std::to_string(index.size()) + " indices for " + std::to_string(m) + " rows");
  }
  if (groups == 0) throw DimensionError("scatter_add_rows: zero output rows");
  auto in = x.data();
  std::vector<double> acc(groups * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (index[i] >= groups) throw DimensionError("scatter_add_rows: index " + std::to_string(index[i]) + " >= " + std::to_string(groups));
    for (std::size_t j = 0; j < n; ++j) acc[index[i] * n + j] += in[i * n + j];
  }
  std::vector<Real> out(acc.begin(), acc.end());
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result("scatter_add_rows", {groups, n}, std::move(out), {x},
                     [n, idx = std::move(idx)](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < n; ++j) gin[0][i * n + j] += g[idx[i] * n + j];
                     });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  require_matrix(table, "embedding");
  for (auto id : ids) {
    if (id >= table.rows()) throw LookupError("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(table.rows()) + " rows");
  }
  const std::size_t n = table.cols();
  auto in = table.data();
  std::vector<Real> out(ids.size() * n);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(ids[i] * n), n, out.begin() + static_cast<std::ptrdiff_t>(i * n));
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return make_result("embedding", {ids.size(), n}, std::move(out), {table},
                     [n, idx = std::move(idx)](const Node&, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < n; ++j) gin[0][idx[i] * n + j] += g[i * n + j];
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const Segment> segments, bool causal) {
  require_matrix(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t rows = q.rows(), d = q.cols();
  std::size_t covered = 0;
  for (const auto& s : segments) {
    if (s.begin != covered || s.length == 0) throw ContractError("attention: segments must tile the rows contiguously");
    covered += s.length;
  }
  if (covered != rows) throw DimensionError("attention: segments cover " + std::to_string(covered) + " of " + std::to_string(rows) + " rows");

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
  auto qs = q.data(), ks = k.data(), vs = v.data();
  std::vector<Real> out(rows * d, Real(0));
  // Attention weights per segment, stored densely per segment (len x len).
  std::vector<std::vector<double>> weights;
  weights.reserve(segments.size());
  for (const auto& s : segments) {
    const std::size_t len = s.length;
    std::vector<double> p(len * len, 0.0);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t limit = causal ? i + 1 : len;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < limit; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(qs[(s.begin + i) * d + c]) * ks[(s.begin + j) * d + c];
        p[i * len + j] = dot * inv_sqrt;
        mx = std::max(mx, p[i * len + j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < limit; ++j) {
        p[i * len + j] = std::exp(p[i * len + j] - mx);
        z += p[i * len + j];
      }
      for (std::size_t j = 0; j < limit; ++j) p[i * len + j] /= z;
      for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < limit; ++j) acc += p[i * len + j] * vs[(s.begin + j) * d + c];
        out[(s.begin + i) * d + c] = static_cast<Real>(acc);
      }
    }
    weights.push_back(std::move(p));
  }
  std::vector<Segment> segs(segments.begin(), segments.end());
  return make_result(
      "attention", q.shape(), std::move(out), {q, k, v},
      [d, inv_sqrt, causal, segs = std::move(segs), weights = std::move(weights)](
          const Node& self, std::span<const Real> g, std::vector<std::vector<Real>>& gin) {
        const auto& qs = in_data(self, 0);
        const auto& ks = in_data(self, 1);
        const auto& vs = in_data(self, 2);
        for (std::size_t si = 0; si < segs.size(); ++si) {
          const auto& s = segs[si];
          const auto& p = weights[si];
          const std::size_t len = s.length;
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t limit = causal ? i + 1 : len;
            // dP = dO V^T, dS = P * (dP - sum(dP * P))
            std::vector<double> dp(limit);
            double dot = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
              double acc = 0.0;
              for (std::size_t c = 0; c < d; ++c) acc += static_cast<double>(g[(s.begin + i) * d + c]) * vs[(s.begin + j) * d + c];
              dp[j] = acc;
              dot += acc * p[i * len + j];
            }
            for (std::size_t j = 0; j < limit; ++j) {
              const double pij = p[i * len + j];
              const double ds = pij * (dp[j] - dot) * inv_sqrt;
              for (std::size_t c = 0; c < d; ++c) {
                if (!gin[0].empty()) gin[0][(s.begin + i) * d + c] += static_cast<Real>(ds * ks[(s.begin + j) * d + c]);
                if (!gin[1].empty()) gin[1][(s.begin + j) * d + c] += static_cast<Real>(ds * qs[(s.begin + i) * d + c]);
                if (!gin[2].empty()) gin[2][(s.begin + j) * d + c] += static_cast<Real>(pij * g[(s.begin + i) * d + c]);
              }
            }
          }
        }
      });
}

ZSSEG_NAMESPACE_END
