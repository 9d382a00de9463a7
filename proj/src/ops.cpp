#include "deva/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deva {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
bool wants_grad(const NodePtr<T>& p) {
  return p->requires_grad;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// c[m, n] += a[m, k] * b[k, n]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
std::vector<T> transpose2d(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
  return out;
}

template <typename T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

// outer * axis * inner decomposition of a shape around `axis`.
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

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() >= 2 && b.rank() == 2 && a.shape().back() == b.dim(0),
          "matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t k = b.dim(0), n = b.dim(1), m = a.numel() / k;
  std::vector<T> out(m * n, T(0));
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  Shape shape = a.shape();
  shape.back() = n;
  return detail::make_result<T>(std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                                [m, k, n](Node<T>& self) {
                                  auto& pa = self.parents[0];
                                  auto& pb = self.parents[1];
                                  const T* g = self.grad.data();
                                  if (wants_grad(pa)) {
                                    // da = g * b^T
                                    auto bt = transpose2d(pb->data.data(), k, n);
                                    gemm_acc(g, bt.data(), pa->ensure_grad().data(), m, n, k);
                                  }
                                  if (wants_grad(pb)) {
                                    // db = a^T * g
                                    auto at = transpose2d(pa->data.data(), m, k);
                                    gemm_acc(at.data(), g, pb->ensure_grad().data(), k, m, n);
                                  }
                                });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                [](Node<T>& self) {
                                  for (auto& p : self.parents) {
                                    if (!wants_grad(p)) continue;
                                    auto& g = p->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                [](Node<T>& self) {
                                  if (wants_grad(self.parents[0])) {
                                    auto& g = self.parents[0]->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                  if (wants_grad(self.parents[1])) {
                                    auto& g = self.parents[1]->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                [](Node<T>& self) {
                                  auto& pa = self.parents[0];
                                  auto& pb = self.parents[1];
                                  if (wants_grad(pa)) {
                                    auto& g = pa->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += self.grad[i] * pb->data[i];
                                  }
                                  if (wants_grad(pb)) {
                                    auto& g = pb->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += self.grad[i] * pa->data[i];
                                  }
                                });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require(bias.rank() == 1 && x.shape().back() == bias.dim(0),
          "add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  const std::size_t n = bias.dim(0), rows = x.numel() / n;
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bias.data()[j];
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr(), bias.node_ptr()},
                                [rows, n](Node<T>& self) {
                                  if (wants_grad(self.parents[0])) {
                                    auto& g = self.parents[0]->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                  if (wants_grad(self.parents[1])) {
                                    auto& g = self.parents[1]->ensure_grad();
                                    for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < n; ++j)
                                        g[j] += self.grad[r * n + j];
                                  }
                                });
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s) {
  require(s.numel() == 1, "scale_by: factor must have one element, got " + shape_str(s.shape()));
  const T f = s.data()[0];
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f * x.data()[i];
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr(), s.node_ptr()},
                                [](Node<T>& self) {
                                  auto& px = self.parents[0];
                                  auto& ps = self.parents[1];
                                  if (wants_grad(px)) {
                                    auto& g = px->ensure_grad();
                                    const T f = ps->data[0];
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * self.grad[i];
                                  }
                                  if (wants_grad(ps)) {
                                    T acc = 0;
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      acc += self.grad[i] * px->data[i];
                                    ps->ensure_grad()[0] += acc;
                                  }
                                });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.data()[i];
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()},
                                [factor](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
                                });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p->data[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x.data()[i]);
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p->data[i];
      g[i] += v > T(0) ? self.grad[i] : (v < T(0) ? -self.grad[i] : T(0));
    }
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T(2) * p->data[i] * self.grad[i];
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const T scale_keep = T(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = keep(rng) ? scale_keep : T(0);
    out[i] = x.data()[i] * mask[i];
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()},
                                [mask = std::move(mask)](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += mask[i] * self.grad[i];
                                });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require(x.rank() >= 1, "softmax_rows: needs at least one axis");
  const std::size_t c = x.shape().back(), rows = x.numel() / c;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * c;
    T* o = out.data() + r * c;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (std::isnan(in[j])) throw NumericError("softmax_rows: NaN input in row " + std::to_string(r));
      mx = std::max(mx, in[j]);
    }
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()},
                                [rows, c](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const T* y = self.data.data() + r * c;
                                    const T* gy = self.grad.data() + r * c;
                                    T dot = 0;
                                    for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
                                    for (std::size_t j = 0; j < c; ++j) g[r * c + j] += y[j] * (gy[j] - dot);
                                  }
                                });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  require(gamma.rank() == 1 && beta.shape() == gamma.shape() && x.shape().back() == gamma.dim(0),
          "layer_norm: gamma/beta " + shape_str(gamma.shape()) + " do not match input " +
              shape_str(x.shape()));
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t d = gamma.dim(0), rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= T(d);
    inv_std[r] = T(1) / std::sqrt(var + T(eps));
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const T* gy = self.grad.data();
        if (wants_grad(pg)) {
          auto& g = pg->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) g[j] += gy[r * d + j] * xhat[r * d + j];
        }
        if (wants_grad(pb)) {
          auto& g = pb->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) g[j] += gy[r * d + j];
        }
        if (wants_grad(px)) {
          auto& g = px->ensure_grad();
          const T* gamma = pg->data.data();
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_g = 0, mean_gx = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T gh = gy[r * d + j] * gamma[j];
              mean_g += gh;
              mean_gx += gh * xhat[r * d + j];
            }
            mean_g /= T(d);
            mean_gx /= T(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T gh = gy[r * d + j] * gamma[j];
              g[r * d + j] += inv_std[r] * (gh - mean_g - xhat[r * d + j] * mean_gx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  require(!xs.empty(), "concat: needs at least one input");
  const Shape& first = xs.front().shape();
  require(axis < first.size(), "concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : xs) {
    bool ok = t.rank() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i) ok = i == axis || t.dim(i) == first[i];
    require(ok, "concat: " + shape_str(t.shape()) + " incompatible with " + shape_str(first) +
                    " along axis " + std::to_string(axis));
    out_shape[axis] += t.dim(axis);
  }
  if (xs.size() == 1) return xs.front();

  const auto outer = split_at(first, axis).outer;
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> widths;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::size_t offset = 0;
  for (const auto& t : xs) {
    const std::size_t w = t.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(t.data().data() + o * w, w, out.data() + o * out_row + offset);
    widths.push_back(w);
    parents.push_back(t.node_ptr());
    offset += w;
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), std::move(parents),
                                [outer, out_row, widths = std::move(widths)](Node<T>& self) {
                                  std::size_t off = 0;
                                  for (std::size_t i = 0; i < widths.size(); ++i) {
                                    auto& p = self.parents[i];
                                    const std::size_t w = widths[i];
                                    if (wants_grad(p)) {
                                      auto& g = p->ensure_grad();
                                      for (std::size_t o = 0; o < outer; ++o)
                                        for (std::size_t j = 0; j < w; ++j)
                                          g[o * w + j] += self.grad[o * out_row + off + j];
                                    }
                                    off += w;
                                  }
                                });
}

template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& xs) {
  require(!xs.empty(), "concat_last: needs at least one input");
  return concat(xs, xs.front().rank() - 1);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require(axis < x.rank() && begin < end && end <= x.dim(axis),
          "slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
              ") invalid for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  const auto s = split_at(x.shape(), axis);
  const std::size_t in_row = s.extent * s.inner, w = (end - begin) * s.inner,
                    off = begin * s.inner;
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  std::vector<T> out(s.outer * w);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.data().data() + o * in_row + off, w, out.data() + o * w);
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x.node_ptr()},
                                [outer = s.outer, in_row, w, off](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t j = 0; j < w; ++j)
                                      g[o * in_row + off + j] += self.grad[o * w + j];
                                });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>(std::move(shape), std::move(out), {x.node_ptr()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> broadcast_leading(const Tensor<T>& x, std::size_t batch) {
  require(batch >= 1, "broadcast_leading: batch must be positive");
  Shape out_shape{batch};
  out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
  const std::size_t n = x.numel();
  std::vector<T> out(batch * n);
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(x.data().data(), n, out.data() + b * n);
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x.node_ptr()},
                                [batch, n](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t b = 0; b < batch; ++b)
                                    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[b * n + i];
                                });
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), "reduce_mean: axis " + std::to_string(axis) + " invalid for " +
                               shape_str(x.shape()));
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  std::vector<T> out(s.outer * s.inner, T(0));
  const T inv = T(1) / T(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += x.data()[(o * s.extent + e) * s.inner + i];
  for (auto& v : out) v *= inv;
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x.node_ptr()},
                                [s, inv](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t o = 0; o < s.outer; ++o)
                                    for (std::size_t e = 0; e < s.extent; ++e)
                                      for (std::size_t i = 0; i < s.inner; ++i)
                                        g[(o * s.extent + e) * s.inner + i] += inv * self.grad[o * s.inner + i];
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return detail::make_result<T>({1}, {total}, {x.node_ptr()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids,
                    const Shape& out_leading) {
  require(table.rank() == 2, "embedding: table must be 2-D, got " + shape_str(table.shape()));
  require(shape_numel(out_leading) == ids.size() && !out_leading.empty(),
          "embedding: " + std::to_string(ids.size()) + " ids do not fill " + shape_str(out_leading));
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab)
      throw std::out_of_range("embedding: id " + std::to_string(idx[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
    std::copy_n(table.data().data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
  }
  Shape out_shape = out_leading;
  out_shape.push_back(d);
  return detail::make_result<T>(std::move(out_shape), std::move(out), {table.node_ptr()},
                                [d, idx = std::move(idx)](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < idx.size(); ++i) {
                                    T* row = g.data() + static_cast<std::size_t>(idx[i]) * d;
                                    for (std::size_t j = 0; j < d; ++j) row[j] += self.grad[i * d + j];
                                  }
                                });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t heads, std::vector<T>* weights_out) {
  require(q.rank() == 3 && k.rank() == 3 && v.shape() == k.shape() && q.dim(0) == k.dim(0) &&
              q.dim(2) == k.dim(2),
          "attention: incompatible q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
              ", v " + shape_str(v.shape()));
  const std::size_t B = q.dim(0), Lq = q.dim(1), Lk = k.dim(1), d = q.dim(2);
  require(heads >= 1 && d % heads == 0,
          "attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
              " heads");
  const std::size_t dk = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(dk));

  std::vector<T> probs(B * heads * Lq * Lk);
  std::vector<T> out(B * Lq * d, T(0));
  const T* Q = q.data().data();
  const T* K = k.data().data();
  const T* V = v.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* P = probs.data() + ((b * heads + h) * Lq) * Lk;
      for (std::size_t i = 0; i < Lq; ++i) {
        const T* qi = Q + (b * Lq + i) * d + h * dk;
        T* prow = P + i * Lk;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < Lk; ++j) {
          const T* kj = K + (b * Lk + j) * d + h * dk;
          T s = 0;
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          prow[j] = s * inv_sqrt;
          if (std::isnan(prow[j])) throw NumericError("attention: NaN score");
          mx = std::max(mx, prow[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < Lk; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          total += prow[j];
        }
        T* oi = out.data() + (b * Lq + i) * d + h * dk;
        for (std::size_t j = 0; j < Lk; ++j) {
          prow[j] /= total;
          const T* vj = V + (b * Lk + j) * d + h * dk;
          for (std::size_t c = 0; c < dk; ++c) oi[c] += prow[j] * vj[c];
        }
      }
    }
  }
  if (weights_out) *weights_out = probs;

  return detail::make_result<T>(
      q.shape(), std::move(out), {q.node_ptr(), k.node_ptr(), v.node_ptr()},
      [B, Lq, Lk, d, heads, dk, inv_sqrt, probs = std::move(probs)](Node<T>& self) {
        auto& pq = self.parents[0];
        auto& pk = self.parents[1];
        auto& pv = self.parents[2];
        const T* Q = pq->data.data();
        const T* K = pk->data.data();
        const T* V = pv->data.data();
        T* dQ = wants_grad(pq) ? pq->ensure_grad().data() : nullptr;
        T* dK = wants_grad(pk) ? pk->ensure_grad().data() : nullptr;
        T* dV = wants_grad(pv) ? pv->ensure_grad().data() : nullptr;
        const T* dO = self.grad.data();
        std::vector<T> dS(Lk);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* P = probs.data() + ((b * heads + h) * Lq) * Lk;
            for (std::size_t i = 0; i < Lq; ++i) {
              const T* prow = P + i * Lk;
              const T* doi = dO + (b * Lq + i) * d + h * dk;
              // dP_ij = dO_i . V_j ; dS = P * (dP - sum_j P_ij dP_ij)
              T dot = 0;
              for (std::size_t j = 0; j < Lk; ++j) {
                const T* vj = V + (b * Lk + j) * d + h * dk;
                T dp = 0;
                for (std::size_t c = 0; c < dk; ++c) dp += doi[c] * vj[c];
                dS[j] = dp;
                dot += prow[j] * dp;
                if (dV) {
                  T* dvj = dV + (b * Lk + j) * d + h * dk;
                  for (std::size_t c = 0; c < dk; ++c) dvj[c] += prow[j] * doi[c];
                }
              }
              const T* qi = Q + (b * Lq + i) * d + h * dk;
              T* dqi = dQ ? dQ + (b * Lq + i) * d + h * dk : nullptr;
              for (std::size_t j = 0; j < Lk; ++j) {
                const T ds = prow[j] * (dS[j] - dot) * inv_sqrt;
                if (ds == T(0)) continue;
                const T* kj = K + (b * Lk + j) * d + h * dk;
                if (dqi)
                  for (std::size_t c = 0; c < dk; ++c) dqi[c] += ds * kj[c];
                if (dK) {
                  T* dkj = dK + (b * Lk + j) * d + h * dk;
                  for (std::size_t c = 0; c < dk; ++c) dkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require(logits.rank() == 2 && logits.dim(0) == labels.size(),
          "cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
              std::to_string(labels.size()) + " labels");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<T> probs(n * c);
  std::vector<int> lab(labels.begin(), labels.end());
  T loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (lab[r] < 0 || static_cast<std::size_t>(lab[r]) >= c)
      throw std::out_of_range("cross_entropy: class " + std::to_string(lab[r]) + " out of range");
    const T* z = logits.data().data() + r * c;
    T mx = *std::max_element(z, z + c);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(z[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(z[j] - lse);
    loss += lse - z[lab[r]];
  }
  loss /= T(n);
  return detail::make_result<T>({1}, {loss}, {logits.node_ptr()},
                                [n, c, probs = std::move(probs), lab = std::move(lab)](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  const T s = self.grad[0] / T(n);
                                  for (std::size_t r = 0; r < n; ++r)
                                    for (std::size_t j = 0; j < c; ++j)
                                      g[r * c + j] += s * (probs[r * c + j] - (static_cast<int>(j) == lab[r] ? T(1) : T(0)));
                                });
}

#define DEVA_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale_by(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> abs(const Tensor<T>&);                                                     \
  template Tensor<T> square(const Tensor<T>&);                                                  \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, std::mt19937_64&);                 \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);  \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                        \
  template Tensor<T> concat_last(const std::vector<Tensor<T>>&);                                \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> broadcast_leading(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> reduce_mean(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>, const Shape&);  \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                               std::size_t, std::vector<T>*);                                   \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);

DEVA_INSTANTIATE_OPS(float)
DEVA_INSTANTIATE_OPS(double)

}  // namespace deva
