#include "mmttt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mmttt/errors.hpp"

namespace mmttt {

namespace {

using detail::Node;

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 input, got " + shape_str(t.shape()));
  }
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

// Gradient buffer of parent i, or nullptr when it does not take gradients.
double* parent_grad(Node& node, std::size_t i) {
  auto& p = *node.parents[i];
  return p.requires_grad ? p.grad.data() : nullptr;
}

const std::vector<double>& parent_values(Node& node, std::size_t i) {
  return node.parents[i]->values;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  if (b.rows() != k) shape_mismatch("matmul", a, b);
  std::vector<double> out(r * c, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = &bv[p * c];
      double* orow = &out[i * c];
      for (std::size_t j = 0; j < c; ++j) orow[j] += aip * brow[j];
    }
  }
  return Tensor::make_result({r, c}, std::move(out), "matmul", {a, b}, [r, k, c](Node& n) {
    const auto& av = parent_values(n, 0);
    const auto& bv = parent_values(n, 1);
    const double* g = n.grad.data();
    if (double* ga = parent_grad(n, 0)) {
      // dA = dC · Bᵀ
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * bv[p * c + j];
          ga[i * k + p] += acc;
        }
    }
    if (double* gb = parent_grad(n, 1)) {
      // dB = Aᵀ · dC
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < c; ++j) gb[p * c + j] += aip * g[i * c + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  auto av = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return Tensor::make_result({c, r}, std::move(out), "transpose", {a}, [r, c](Node& n) {
    if (double* ga = parent_grad(n, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += n.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor::make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& n) {
    for (std::size_t p = 0; p < 2; ++p)
      if (double* g = parent_grad(n, p))
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_rank2(a, "add_row");
  require_rank2(bias, "add_row");
  const std::size_t r = a.rows(), c = a.cols();
  if (bias.rows() != 1 || bias.cols() != c) shape_mismatch("add_row", a, bias);
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = bias.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  return Tensor::make_result({r, c}, std::move(out), "add_row", {a, bias}, [r, c](Node& n) {
    if (double* ga = parent_grad(n, 0))
      for (std::size_t i = 0; i < r * c; ++i) ga[i] += n.grad[i];
    if (double* gb = parent_grad(n, 1))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += n.grad[i * c + j];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& n) {
    const auto& av = parent_values(n, 0);
    const auto& bv = parent_values(n, 1);
    if (double* ga = parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * bv[i];
    if (double* gb = parent_grad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), "scale", {a}, [factor](Node& n) {
    if (double* ga = parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += factor * n.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result(a.shape(), std::move(out), "relu", {a}, [](Node& n) {
    const auto& av = parent_values(n, 0);
    if (double* ga = parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (av[i] > 0.0) ga[i] += n.grad[i];
  });
}

namespace {

Tensor softmax_impl(const Tensor& x, std::span<const bool> key_valid, const char* op) {
  if (x.rank() == 0) throw DimensionError(std::string(op) + ": rank-0 input");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  const bool masked = !key_valid.empty();
  if (masked) {
    if (key_valid.size() != width) {
      throw DimensionError(std::string(op) + ": mask length " + std::to_string(key_valid.size()) +
                           " vs last extent " + std::to_string(width));
    }
    if (std::none_of(key_valid.begin(), key_valid.end(), [](bool v) { return v; })) {
      throw UsageError(std::string(op) + ": every key position is masked");
    }
  }
  auto xv = x.values();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &xv[r * width];
    double* o = &out[r * width];
    double max = -INFINITY;
    for (std::size_t j = 0; j < width; ++j)
      if (!masked || key_valid[j]) max = std::max(max, in[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      if (masked && !key_valid[j]) continue;
      o[j] = std::exp(in[j] - max);
      total += o[j];
    }
    for (std::size_t j = 0; j < width; ++j) o[j] /= total;
  }
  return Tensor::make_result(x.shape(), std::move(out), op, {x}, [rows, width](Node& n) {
    double* gx = parent_grad(n, 0);
    if (!gx) return;
    // dx_j = y_j (g_j − Σ_k g_k y_k); masked entries have y_j = 0.
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = &n.values[r * width];
      const double* g = &n.grad[r * width];
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < width; ++j) gx[r * width + j] += y[j] * (g[j] - dot);
    }
  });
}

}  // namespace

Tensor softmax(const Tensor& x) { return softmax_impl(x, {}, "softmax"); }

Tensor masked_softmax(const Tensor& x, std::span<const bool> key_valid) {
  return softmax_impl(x, key_valid, "masked_softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.numel() != c || bias.numel() != c) shape_mismatch("layer_norm", x, gain);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<double> out(r * c);
  std::vector<double> xhat(r * c);
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = &xv[i * c];
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  return Tensor::make_result(
      {r, c}, std::move(out), "layer_norm", {x, gain, bias},
      [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
        const auto& gv = parent_values(n, 1);
        double* gx = parent_grad(n, 0);
        double* gg = parent_grad(n, 1);
        double* gb = parent_grad(n, 2);
        const double cd = static_cast<double>(c);
        for (std::size_t i = 0; i < r; ++i) {
          const double* g = &n.grad[i * c];
          const double* xh = &xhat[i * c];
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double d = g[j] * gv[j];
            sum_d += d;
            sum_dx += d * xh[j];
            if (gg) gg[j] += g[j] * xh[j];
            if (gb) gb[j] += g[j];
          }
          if (gx)
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g[j] * gv[j];
              gx[i * c + j] += inv_std[i] / cd * (cd * d - sum_d - xh[j] * sum_dx);
            }
        }
      });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank2(a, "slice_cols");
  const std::size_t r = a.rows(), c = a.cols();
  if (count == 0 || start + count > c) {
    throw IndexError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") outside " + shape_str(a.shape()));
  }
  std::vector<double> out(r * count);
  auto av = a.values();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(&av[i * c + start], count, &out[i * count]);
  return Tensor::make_result({r, count}, std::move(out), "slice_cols", {a},
                             [r, c, start, count](Node& n) {
                               if (double* ga = parent_grad(n, 0))
                                 for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < count; ++j)
                                     ga[i * c + start + j] += n.grad[i * count + j];
                             });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != r) shape_mismatch("concat_cols", parts[0], p);
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(r * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    const std::size_t w = parts[k].cols();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(&pv[i * w], w, &out[i * total + offsets[k]]);
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return Tensor::make_result({r, total}, std::move(out), "concat_cols", std::move(parents),
                             [r, total, offsets](Node& n) {
                               for (std::size_t k = 0; k < n.parents.size(); ++k) {
                                 double* g = parent_grad(n, k);
                                 if (!g) continue;
                                 const std::size_t w = n.parents[k]->shape[1];
                                 for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < w; ++j)
                                     g[i * w + j] += n.grad[i * total + offsets[k] + j];
                               }
                             });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw UsageError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total_rows = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != c) shape_mismatch("concat_rows", parts[0], p);
    total_rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(total_rows * c);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return Tensor::make_result({total_rows, c}, std::move(out), "concat_rows", std::move(parents),
                             [](Node& n) {
                               std::size_t offset = 0;
                               for (std::size_t k = 0; k < n.parents.size(); ++k) {
                                 const std::size_t len = n.parents[k]->values.size();
                                 if (double* g = parent_grad(n, k))
                                   for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[offset + i];
                                 offset += len;
                               }
                             });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
  require_rank2(a, "gather_rows");
  if (indices.empty()) throw UsageError("gather_rows: empty index list");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(indices.size() * c);
  auto av = a.values();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= r) {
      throw IndexError("gather_rows: row " + std::to_string(indices[k]) + " outside " +
                       shape_str(a.shape()));
    }
    std::copy_n(&av[indices[k] * c], c, &out[k * c]);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return Tensor::make_result({idx.size(), c}, std::move(out), "gather_rows", {a},
                             [c, idx](Node& n) {
                               if (double* ga = parent_grad(n, 0))
                                 for (std::size_t k = 0; k < idx.size(); ++k)
                                   for (std::size_t j = 0; j < c; ++j)
                                     ga[idx[k] * c + j] += n.grad[k * c + j];
                             });
}

Tensor replace_rows(const Tensor& a, std::span<const std::size_t> indices, const Tensor& row) {
  require_rank2(a, "replace_rows");
  const std::size_t r = a.rows(), c = a.cols();
  if (row.numel() != c) shape_mismatch("replace_rows", a, row);
  std::vector<bool> replaced(r, false);
  for (auto i : indices) {
    if (i >= r) throw IndexError("replace_rows: row " + std::to_string(i) + " outside " + shape_str(a.shape()));
    replaced[i] = true;
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  auto rv = row.values();
  for (std::size_t i = 0; i < r; ++i)
    if (replaced[i]) std::copy_n(rv.begin(), c, &out[i * c]);
  return Tensor::make_result({r, c}, std::move(out), "replace_rows", {a, row},
                             [r, c, replaced = std::move(replaced)](Node& n) {
                               double* ga = parent_grad(n, 0);
                               double* gr = parent_grad(n, 1);
                               for (std::size_t i = 0; i < r; ++i) {
                                 double* target = replaced[i] ? gr : (ga ? ga + i * c : nullptr);
                                 if (!target) continue;
                                 for (std::size_t j = 0; j < c; ++j) target[j] += n.grad[i * c + j];
                               }
                             });
}

Tensor mean_rows(const Tensor& a, std::span<const bool> valid) {
  require_rank2(a, "mean_rows");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<bool> use(r, true);
  if (!valid.empty()) {
    if (valid.size() != r) throw DimensionError("mean_rows: mask length does not match rows");
    use.assign(valid.begin(), valid.end());
  }
  const auto count = static_cast<std::size_t>(std::count(use.begin(), use.end(), true));
  if (count == 0) throw UsageError("mean_rows: no valid rows");
  std::vector<double> out(c, 0.0);
  auto av = a.values();
  for (std::size_t i = 0; i < r; ++i)
    if (use[i])
      for (std::size_t j = 0; j < c; ++j) out[j] += av[i * c + j];
  const double inv = 1.0 / static_cast<double>(count);
  for (auto& v : out) v *= inv;
  return Tensor::make_result({1, c}, std::move(out), "mean_rows", {a},
                             [r, c, inv, use = std::move(use)](Node& n) {
                               if (double* ga = parent_grad(n, 0))
                                 for (std::size_t i = 0; i < r; ++i)
                                   if (use[i])
                                     for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += inv * n.grad[j];
                             });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return Tensor::make_result({1, 1}, {total}, "sum", {a}, [](Node& n) {
    if (double* ga = parent_grad(n, 0)) {
      const std::size_t len = n.parents[0]->values.size();
      for (std::size_t i = 0; i < len; ++i) ga[i] += n.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor element(const Tensor& a, std::size_t flat_index) {
  if (flat_index >= a.numel()) throw IndexError("element: index outside " + shape_str(a.shape()));
  return Tensor::make_result({1, 1}, {a.values()[flat_index]}, "element", {a},
                             [flat_index](Node& n) {
                               if (double* ga = parent_grad(n, 0)) ga[flat_index] += n.grad[0];
                             });
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank2(logits, "cross_entropy_logits");
  const std::size_t p = logits.rows(), v = logits.cols();
  if (targets.size() != p) {
    throw DimensionError("cross_entropy_logits: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  auto lv = logits.values();
  std::vector<double> probs(p * v);
  double loss = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    if (targets[i] >= v) {
      throw IndexError("cross_entropy_logits: target id " + std::to_string(targets[i]) +
                       " outside [0, " + std::to_string(v) + ")");
    }
    const double* row = &lv[i * v];
    const double max = *std::max_element(row, row + v);
    double total = 0.0;
    for (std::size_t j = 0; j < v; ++j) total += std::exp(row[j] - max);
    const double log_total = std::log(total);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - max - log_total);
    loss -= row[targets[i]] - max - log_total;
  }
  loss /= static_cast<double>(p);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return Tensor::make_result({1, 1}, {loss}, "cross_entropy_logits", {logits},
                             [p, v, tgt, probs = std::move(probs)](Node& n) {
                               double* gl = parent_grad(n, 0);
                               if (!gl) return;
                               const double w = n.grad[0] / static_cast<double>(p);
                               for (std::size_t i = 0; i < p; ++i)
                                 for (std::size_t j = 0; j < v; ++j)
                                   gl[i * v + j] += w * (probs[i * v + j] - (j == tgt[i] ? 1.0 : 0.0));
                             });
}

double binary_cross_entropy(double p, int label) {
  const double q = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  const double y = label ? 1.0 : 0.0;
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

Tensor binary_cross_entropy(const Tensor& p, int label) {
  if (p.numel() != 1) throw DimensionError("binary_cross_entropy: expected a 1x1 probability, got " + shape_str(p.shape()));
  if (label != 0 && label != 1) throw IndexError("binary_cross_entropy: label must be 0 or 1");
  const double raw = p.item();
  const bool clamped = raw < kBceEpsilon || raw > 1.0 - kBceEpsilon;
  const double q = std::clamp(raw, kBceEpsilon, 1.0 - kBceEpsilon);
  return Tensor::make_result({1, 1}, {binary_cross_entropy(raw, label)}, "binary_cross_entropy", {p},
                             [q, clamped, label](Node& n) {
                               double* gp = parent_grad(n, 0);
                               if (!gp || clamped) return;
                               const double d = label ? -1.0 / q : 1.0 / (1.0 - q);
                               gp[0] += n.grad[0] * d;
                             });
}

}  // namespace mmttt
