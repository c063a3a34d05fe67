#include "narfix/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace narfix::nn {

namespace {

thread_local bool g_grad_enabled = true;

size_t numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

std::shared_ptr<TensorNode> make_node(std::vector<int> shape) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->val.assign(numel(n->shape), 0.0);
  return n;
}

// Wires the result into the tape when gradients are enabled and at least one
// parent needs them.
Tensor make_result(std::shared_ptr<TensorNode> node,
                   std::vector<std::shared_ptr<TensorNode>> parents,
                   std::function<void(TensorNode&)> backfn) {
  bool need = false;
  if (g_grad_enabled)
    for (const auto& p : parents)
      if (p->requires_grad) need = true;
  if (need) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backfn = std::move(backfn);
  }
  return Tensor(std::move(node));
}

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = make_node(std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  auto n = make_node(std::move(shape));
  check(data.size() == n->size(), "data length does not match shape");
  n->val = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2, "matmul expects 2-D operands");
  const int n = a.rows(), k = a.cols(), m = b.cols();
  check(b.rows() == k, "matmul inner dimensions disagree");
  auto out = make_node({n, m});
  const double* av = a.val().data();
  const double* bv = b.val().data();
  double* ov = out->val.data();
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * m;
      double* orow = ov + i * m;
      for (int j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  auto an = a.node, bn = b.node;
  return make_result(out, {an, bn}, [an, bn, n, k, m](TensorNode& self) {
    const double* g = self.grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      double* ga = an->grad.data();
      const double* bv = bn->val.data();
      for (int i = 0; i < n; ++i) {
        const double* grow = g + i * m;
        double* garow = ga + i * k;
        for (int p = 0; p < k; ++p) {
          const double* brow = bv + p * m;
          double acc = 0.0;
          for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
          garow[p] += acc;
        }
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      double* gb = bn->grad.data();
      const double* av = an->val.data();
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          const double* grow = g + i * m;
          double* brow = gb + p * m;
          for (int j = 0; j < m; ++j) brow[j] += aip * grow[j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  check(a.shape().size() == 2, "transpose expects a 2-D operand");
  const int n = a.rows(), m = a.cols();
  auto out = make_node({m, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out->val[static_cast<size_t>(j) * n + i] = a.val()[static_cast<size_t>(i) * m + j];
  auto an = a.node;
  return make_result(out, {an}, [an, n, m](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        an->grad[static_cast<size_t>(i) * m + j] += self.grad[static_cast<size_t>(j) * n + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "add expects matching shapes");
  auto out = make_node(a.shape());
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a.val()[i] + b.val()[i];
  auto an = a.node, bn = b.node;
  return make_result(out, {an, bn}, [an, bn](TensorNode& self) {
    for (auto& p : {an, bn}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  check(a.shape().size() == 2 && static_cast<size_t>(a.cols()) == v.size(),
        "add_rowvec expects [n,d] + [d]");
  const int n = a.rows(), d = a.cols();
  auto out = make_node(a.shape());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out->val[static_cast<size_t>(i) * d + j] = a.val()[static_cast<size_t>(i) * d + j] + v.val()[static_cast<size_t>(j)];
  auto an = a.node, vn = v.node;
  return make_result(out, {an, vn}, [an, vn, n, d](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) vn->grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i) * d + j];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "mul expects matching shapes");
  auto out = make_node(a.shape());
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a.val()[i] * b.val()[i];
  auto an = a.node, bn = b.node;
  return make_result(out, {an, bn}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i] * bn->val[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) bn->grad[i] += self.grad[i] * an->val[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  auto out = make_node(a.shape());
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a.val()[i] * c;
  auto an = a.node;
  return make_result(out, {an}, [an, c](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i] * c;
  });
}

Tensor add_const(const Tensor& a, const std::vector<double>& c) {
  check(a.size() == c.size(), "add_const expects matching length");
  auto out = make_node(a.shape());
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a.val()[i] + c[i];
  auto an = a.node;
  return make_result(out, {an}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  auto out = make_node(a.shape());
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a.val()[i] > 0.0 ? a.val()[i] : 0.0;
  auto an = a.node;
  return make_result(out, {an}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i)
      if (an->val[i] > 0.0) an->grad[i] += self.grad[i];
  });
}

Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng, bool train) {
  if (!train || rate <= 0.0) return a;
  auto out = make_node(a.shape());
  auto keep = std::make_shared<std::vector<char>>(a.size());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double inv = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < a.size(); ++i) {
    (*keep)[i] = uni(rng) >= rate;
    out->val[i] = (*keep)[i] ? a.val()[i] * inv : 0.0;
  }
  auto an = a.node;
  return make_result(out, {an}, [an, keep, inv](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i)
      if ((*keep)[i]) an->grad[i] += self.grad[i] * inv;
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  check(a.shape().size() == 2, "layer_norm expects a 2-D operand");
  const int n = a.rows(), d = a.cols();
  check(static_cast<int>(gamma.size()) == d && static_cast<int>(beta.size()) == d,
        "layer_norm scale/shift must have row width");
  auto out = make_node(a.shape());
  auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* row = a.val().data() + static_cast<size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= d;
    const double rs = 1.0 / std::sqrt(var + eps);
    (*mean)[static_cast<size_t>(i)] = mu;
    (*rstd)[static_cast<size_t>(i)] = rs;
    for (int j = 0; j < d; ++j)
      out->val[static_cast<size_t>(i) * d + j] = (row[j] - mu) * rs * gamma.val()[static_cast<size_t>(j)] + beta.val()[static_cast<size_t>(j)];
  }
  auto an = a.node, gn = gamma.node, bn = beta.node;
  return make_result(out, {an, gn, bn}, [an, gn, bn, mean, rstd, n, d](TensorNode& self) {
    for (int i = 0; i < n; ++i) {
      const double mu = (*mean)[static_cast<size_t>(i)];
      const double rs = (*rstd)[static_cast<size_t>(i)];
      const double* row = an->val.data() + static_cast<size_t>(i) * d;
      const double* g = self.grad.data() + static_cast<size_t>(i) * d;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int j = 0; j < d; ++j) gn->grad[static_cast<size_t>(j)] += g[j] * (row[j] - mu) * rs;
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int j = 0; j < d; ++j) bn->grad[static_cast<size_t>(j)] += g[j];
      }
      if (an->requires_grad) {
        an->ensure_grad();
        // dL/dx for x_hat = (x - mu) * rs, y = x_hat * gamma + beta.
        double sum_gh = 0.0, sum_ghx = 0.0;
        for (int j = 0; j < d; ++j) {
          const double gh = g[j] * gn->val[static_cast<size_t>(j)];
          const double xh = (row[j] - mu) * rs;
          sum_gh += gh;
          sum_ghx += gh * xh;
        }
        double* ga = an->grad.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
          const double gh = g[j] * gn->val[static_cast<size_t>(j)];
          const double xh = (row[j] - mu) * rs;
          ga[j] += rs * (gh - sum_gh / d - xh * sum_ghx / d);
        }
      }
    }
  });
}

Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& b, int kernel) {
  check(x.shape().size() == 2, "conv1d expects a 2-D input");
  const int n = x.rows(), din = x.cols();
  check(w.rows() == kernel * din, "conv1d kernel shape mismatch");
  const int dout = w.cols();
  check(static_cast<int>(b.size()) == dout, "conv1d bias shape mismatch");
  const int half = kernel / 2;
  auto out = make_node({n, dout});
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < kernel; ++t) {
      const int src = i + t - half;
      if (src < 0 || src >= n) continue;
      const double* xrow = x.val().data() + static_cast<size_t>(src) * din;
      for (int c = 0; c < din; ++c) {
        const double xv = xrow[c];
        if (xv == 0.0) continue;
        const double* wrow = w.val().data() + static_cast<size_t>(t * din + c) * dout;
        double* orow = out->val.data() + static_cast<size_t>(i) * dout;
        for (int o = 0; o < dout; ++o) orow[o] += xv * wrow[o];
      }
    }
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < dout; ++o) out->val[static_cast<size_t>(i) * dout + o] += b.val()[static_cast<size_t>(o)];
  auto xn = x.node, wn = w.node, bn = b.node;
  return make_result(out, {xn, wn, bn}, [xn, wn, bn, n, din, dout, kernel, half](TensorNode& self) {
    const double* g = self.grad.data();
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int o = 0; o < dout; ++o) bn->grad[static_cast<size_t>(o)] += g[static_cast<size_t>(i) * dout + o];
    }
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < kernel; ++t) {
        const int src = i + t - half;
        if (src < 0 || src >= n) continue;
        const double* grow = g + static_cast<size_t>(i) * dout;
        for (int c = 0; c < din; ++c) {
          const size_t widx = static_cast<size_t>(t * din + c) * dout;
          if (wn->requires_grad) {
            wn->ensure_grad();
            const double xv = xn->val[static_cast<size_t>(src) * din + c];
            if (xv != 0.0)
              for (int o = 0; o < dout; ++o) wn->grad[widx + o] += xv * grow[o];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            double acc = 0.0;
            for (int o = 0; o < dout; ++o) acc += wn->val[widx + o] * grow[o];
            xn->grad[static_cast<size_t>(src) * din + c] += acc;
          }
        }
      }
  });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  check(table.shape().size() == 2, "embedding table must be 2-D");
  const int d = table.cols();
  auto out = make_node({static_cast<int>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < table.rows(), "embedding id out of range");
    std::copy_n(table.val().data() + static_cast<size_t>(ids[i]) * d, d,
                out->val.data() + i * static_cast<size_t>(d));
  }
  auto tn = table.node;
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return make_result(out, {tn}, [tn, ids_copy, d](TensorNode& self) {
    if (!tn->requires_grad) return;
    tn->ensure_grad();
    for (size_t i = 0; i < ids_copy->size(); ++i)
      for (int j = 0; j < d; ++j)
        tn->grad[static_cast<size_t>((*ids_copy)[i]) * d + j] += self.grad[i * static_cast<size_t>(d) + j];
  });
}

Tensor row_gather(const Tensor& a, const std::vector<int>& idx) {
  check(a.shape().size() == 2, "row_gather expects a 2-D operand");
  const int d = a.cols();
  auto out = make_node({static_cast<int>(idx.size()), d});
  for (size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] >= 0 && idx[i] < a.rows(), "row_gather index out of range");
    std::copy_n(a.val().data() + static_cast<size_t>(idx[i]) * d, d,
                out->val.data() + i * static_cast<size_t>(d));
  }
  auto an = a.node;
  auto idx_copy = std::make_shared<std::vector<int>>(idx);
  return make_result(out, {an}, [an, idx_copy, d](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < idx_copy->size(); ++i)
      for (int j = 0; j < d; ++j)
        an->grad[static_cast<size_t>((*idx_copy)[i]) * d + j] += self.grad[i * static_cast<size_t>(d) + j];
  });
}

Tensor replace_rows(const Tensor& a, const std::vector<char>& flags, const Tensor& v) {
  check(a.shape().size() == 2 && flags.size() == static_cast<size_t>(a.rows()),
        "replace_rows flag count mismatch");
  check(static_cast<int>(v.size()) == a.cols(), "replace_rows row width mismatch");
  const int n = a.rows(), d = a.cols();
  auto out = make_node(a.shape());
  for (int i = 0; i < n; ++i) {
    const double* src = flags[static_cast<size_t>(i)] ? v.val().data() : a.val().data() + static_cast<size_t>(i) * d;
    std::copy_n(src, d, out->val.data() + static_cast<size_t>(i) * d);
  }
  auto an = a.node, vn = v.node;
  auto flags_copy = std::make_shared<std::vector<char>>(flags);
  return make_result(out, {an, vn}, [an, vn, flags_copy, n, d](TensorNode& self) {
    for (int i = 0; i < n; ++i) {
      if ((*flags_copy)[static_cast<size_t>(i)]) {
        if (!vn->requires_grad) continue;
        vn->ensure_grad();
        for (int j = 0; j < d; ++j) vn->grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i) * d + j];
      } else {
        if (!an->requires_grad) continue;
        an->ensure_grad();
        for (int j = 0; j < d; ++j)
          an->grad[static_cast<size_t>(i) * d + j] += self.grad[static_cast<size_t>(i) * d + j];
      }
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows needs at least one part");
  const int d = parts[0].cols();
  int n = 0;
  for (const auto& p : parts) {
    check(p.cols() == d, "concat_rows row width mismatch");
    n += p.rows();
  }
  auto out = make_node({n, d});
  size_t off = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  for (const auto& p : parts) {
    std::copy(p.val().begin(), p.val().end(), out->val.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
    parents.push_back(p.node);
  }
  auto parents_copy = parents;
  return make_result(out, std::move(parents), [parents_copy](TensorNode& self) {
    size_t off = 0;
    for (const auto& p : parents_copy) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (size_t i = 0; i < p->size(); ++i) p->grad[i] += self.grad[off + i];
      }
      off += p->size();
    }
  });
}

Tensor col_slice(const Tensor& a, int start, int width) {
  check(a.shape().size() == 2, "col_slice expects a matrix");
  const int n = a.rows(), d = a.cols();
  check(start >= 0 && width > 0 && start + width <= d, "col_slice out of range");
  auto out = make_node({n, width});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < width; ++j)
      out->val[static_cast<size_t>(i) * width + j] =
          a.val()[static_cast<size_t>(i) * d + start + j];
  auto an = a.node;
  return make_result(out, {an}, [an, n, d, start, width](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < width; ++j)
        an->grad[static_cast<size_t>(i) * d + start + j] +=
            self.grad[static_cast<size_t>(i) * width + j];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols needs at least one part");
  const int n = parts[0].rows();
  int d = 0;
  for (const auto& p : parts) {
    check(p.rows() == n, "concat_cols row count mismatch");
    d += p.cols();
  }
  auto out = make_node({n, d});
  std::vector<std::shared_ptr<TensorNode>> parents;
  int col = 0;
  for (const auto& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j)
        out->val[static_cast<size_t>(i) * d + col + j] =
            p.val()[static_cast<size_t>(i) * w + j];
    col += w;
    parents.push_back(p.node);
  }
  auto parents_copy = parents;
  return make_result(out, std::move(parents), [parents_copy, n, d](TensorNode& self) {
    int col = 0;
    for (const auto& p : parents_copy) {
      const int w = p->shape[1];
      if (p->requires_grad) {
        p->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < w; ++j)
            p->grad[static_cast<size_t>(i) * w + j] +=
                self.grad[static_cast<size_t>(i) * d + col + j];
      }
      col += w;
    }
  });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  check(numel(shape) == a.size(), "reshape must preserve element count");
  auto out = make_node(std::move(shape));
  out->val = a.val();
  auto an = a.node;
  return make_result(out, {an}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor softmax_rows(const Tensor& a) {
  check(a.shape().size() == 2, "softmax expects a 2-D operand");
  const int n = a.rows(), d = a.cols();
  auto out = make_node(a.shape());
  for (int i = 0; i < n; ++i) {
    const double* row = a.val().data() + static_cast<size_t>(i) * d;
    double* orow = out->val.data() + static_cast<size_t>(i) * d;
    double mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < d; ++j) orow[j] /= z;
  }
  auto an = a.node;
  return make_result(out, {an}, [an, n, d](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double* y = self.val.data() + static_cast<size_t>(i) * d;
      const double* g = self.grad.data() + static_cast<size_t>(i) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += y[j] * g[j];
      double* ga = an->grad.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) ga[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          int ignore_index) {
  check(logits.shape().size() == 2, "cross_entropy expects 2-D logits");
  check(targets.size() == static_cast<size_t>(logits.rows()),
        "cross_entropy target count mismatch");
  const int n = logits.rows(), d = logits.cols();
  auto probs = std::make_shared<std::vector<double>>(logits.val());
  int count = 0;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double* row = probs->data() + static_cast<size_t>(i) * d;
    double mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < d; ++j) row[j] = std::exp(row[j] - lse);
    const int t = targets[static_cast<size_t>(i)];
    if (t == ignore_index) continue;
    check(t >= 0 && t < d, "cross_entropy target out of range");
    total += lse - logits.val()[static_cast<size_t>(i) * d + t];
    ++count;
  }
  auto out = make_node({1});
  out->val[0] = count > 0 ? total / count : 0.0;
  auto ln = logits.node;
  auto targets_copy = std::make_shared<std::vector<int>>(targets);
  return make_result(out, {ln}, [ln, probs, targets_copy, ignore_index, n, d, count](TensorNode& self) {
    if (!ln->requires_grad || count == 0) return;
    ln->ensure_grad();
    const double up = self.grad[0] / count;
    for (int i = 0; i < n; ++i) {
      const int t = (*targets_copy)[static_cast<size_t>(i)];
      if (t == ignore_index) continue;
      const double* p = probs->data() + static_cast<size_t>(i) * d;
      double* g = ln->grad.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) g[j] += up * p[j];
      g[t] -= up;
    }
  });
}

Tensor sum(const Tensor& a) {
  auto out = make_node({1});
  for (double v : a.val()) out->val[0] += v;
  auto an = a.node;
  return make_result(out, {an}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < an->size(); ++i) an->grad[i] += self.grad[0];
  });
}

void backward(const Tensor& loss) {
  check(loss.size() == 1, "backward expects a scalar loss");
  // Topological order by iterative DFS.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.push_back({loss.node.get(), 0});
  seen.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node->ensure_grad();
  loss.node->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backfn && node->grad.size() == node->val.size()) node->backfn(*node);
  }
}

}  // namespace narfix::nn
