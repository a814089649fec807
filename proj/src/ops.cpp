// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

#include "morekit/kernels.hpp"

namespace morekit::ag {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.rows() != b.rows()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// Node values are stored in a deque, so addresses stay valid for the graph's life.
const Tensor* val(Var v) { return &v.value(); }

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor* A = val(a);
  const Tensor* B = val(b);
  if (A->cols() != B->rows()) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(A->shape()) + " x " +
                     to_string(B->shape()));
  }
  const std::size_t m = A->rows(), k = A->cols(), n = B->cols();
  Tensor out({m, n});
  kernels::gemm_nn(A->data(), B->data(), out.data(), m, k, n);
  return a.graph().record("matmul", std::move(out), {a, b},
                          [A, B, m, k, n](const Tensor& d, std::vector<Tensor*>& g) {
                            if (g[0]) kernels::gemm_nt(d.data(), B->data(), g[0]->data(), m, n, k);
                            if (g[1]) kernels::gemm_tn(A->data(), d.data(), g[1]->data(), k, m, n);
                          });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out += b.value();
  return a.graph().record("add", std::move(out), {a, b},
                          [](const Tensor& d, std::vector<Tensor*>& g) {
                            if (g[0]) *g[0] += d;
                            if (g[1]) *g[1] += d;
                          });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return a.graph().record("sub", std::move(out), {a, b},
                          [](const Tensor& d, std::vector<Tensor*>& g) {
                            if (g[0]) *g[0] += d;
                            if (g[1])
                              for (std::size_t i = 0; i < d.size(); ++i) (*g[1])[i] -= d[i];
                          });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  const Tensor* A = val(a);
  const Tensor* B = val(b);
  Tensor out = *A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*B)[i];
  return a.graph().record("mul", std::move(out), {a, b},
                          [A, B](const Tensor& d, std::vector<Tensor*>& g) {
                            for (std::size_t i = 0; i < d.size(); ++i) {
                              if (g[0]) (*g[0])[i] += d[i] * (*B)[i];
                              if (g[1]) (*g[1])[i] += d[i] * (*A)[i];
                            }
                          });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return a.graph().record("scale", std::move(out), {a},
                          [s](const Tensor& d, std::vector<Tensor*>& g) {
                            for (std::size_t i = 0; i < d.size(); ++i) (*g[0])[i] += s * d[i];
                          });
}

Var scale_by(Var a, Var s) {
  if (s.value().size() != 1) throw ShapeError("scale_by: multiplier must be 1x1");
  const Tensor* A = val(a);
  const double sv = s.value()[0];
  Tensor out = *A;
  for (double& v : out.data()) v *= sv;
  return a.graph().record("scale_by", std::move(out), {a, s},
                          [A, sv](const Tensor& d, std::vector<Tensor*>& g) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < d.size(); ++i) {
                              if (g[0]) (*g[0])[i] += sv * d[i];
                              acc += d[i] * (*A)[i];
                            }
                            if (g[1]) (*g[1])[0] += acc;
                          });
}

Var mul_rows(Var a, Var c) {
  const Tensor* A = val(a);
  const Tensor* C = val(c);
  if (C->size() != A->rows()) {
    throw ShapeError("mul_rows: need " + std::to_string(A->rows()) + " row factors, got " +
                     std::to_string(C->size()));
  }
  const std::size_t m = A->rows(), n = A->cols();
  Tensor out = *A;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) *= (*C)[i];
  return a.graph().record("mul_rows", std::move(out), {a, c},
                          [A, C, m, n](const Tensor& d, std::vector<Tensor*>& g) {
                            for (std::size_t i = 0; i < m; ++i) {
                              double acc = 0.0;
                              for (std::size_t j = 0; j < n; ++j) {
                                if (g[0]) (*g[0])(i, j) += d(i, j) * (*C)[i];
                                acc += d(i, j) * (*A)(i, j);
                              }
                              if (g[1]) (*g[1])[i] += acc;
                            }
                          });
}

Var transpose(Var a) {
  return a.graph().record("transpose", a.value().transposed(), {a},
                          [](const Tensor& d, std::vector<Tensor*>& g) {
                            *g[0] += d.transposed();
                          });
}

Var log(Var a) {
  const Tensor* A = val(a);
  Tensor out = *A;
  for (double& v : out.data()) v = std::log(std::max(v, kLogFloor));
  return a.graph().record("log", std::move(out), {a},
                          [A](const Tensor& d, std::vector<Tensor*>& g) {
                            for (std::size_t i = 0; i < d.size(); ++i) {
                              const double x = (*A)[i];
                              if (x > kLogFloor) (*g[0])[i] += d[i] / x;
                            }
                          });
}

Var exp(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  Graph& gr = a.graph();
  Var y = gr.detached("exp", std::move(out));
  const Tensor* Y = val(y);
  return gr.record("exp", *Y, {a}, [Y](const Tensor& d, std::vector<Tensor*>& g) {
    for (std::size_t i = 0; i < d.size(); ++i) (*g[0])[i] += d[i] * (*Y)[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph().record("sum", Tensor::scalar(s), {a},
                          [](const Tensor& d, std::vector<Tensor*>& g) {
                            for (double& v : g[0]->data()) v += d[0];
                          });
}

Var mean(Var a, int axis) {
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  if (axis == 0) {
    Tensor out({1, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out(0, j) += A(i, j);
    for (double& v : out.data()) v /= static_cast<double>(m);
    return a.graph().record("mean0", std::move(out), {a},
                            [m, n](const Tensor& d, std::vector<Tensor*>& g) {
                              for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < n; ++j)
                                  (*g[0])(i, j) += d(0, j) / static_cast<double>(m);
                            });
  }
  if (axis == 1) {
    Tensor out({m, 1});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out(i, 0) += A(i, j);
      out(i, 0) /= static_cast<double>(n);
    }
    return a.graph().record("mean1", std::move(out), {a},
                            [m, n](const Tensor& d, std::vector<Tensor*>& g) {
                              for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < n; ++j)
                                  (*g[0])(i, j) += d(i, 0) / static_cast<double>(n);
                            });
  }
  throw std::invalid_argument("mean: axis must be 0 or 1");
}

Var mean_all(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var softmax(Var a, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be positive");
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({m, n});
  for (std::size_t j = 0; j < n; ++j) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < m; ++i) mx = std::max(mx, A(i, j));
    double z = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      out(i, j) = std::exp((A(i, j) - mx) / temperature);
      z += out(i, j);
    }
    for (std::size_t i = 0; i < m; ++i) out(i, j) /= z;
  }
  Graph& gr = a.graph();
  Var y = gr.detached("softmax", std::move(out));
  const Tensor* Y = val(y);
  return gr.record("softmax", *Y, {a},
                   [Y, m, n, temperature](const Tensor& d, std::vector<Tensor*>& g) {
                     for (std::size_t j = 0; j < n; ++j) {
                       double dot = 0.0;
                       for (std::size_t i = 0; i < m; ++i) dot += d(i, j) * (*Y)(i, j);
                       for (std::size_t i = 0; i < m; ++i)
                         (*g[0])(i, j) += (*Y)(i, j) * (d(i, j) - dot) / temperature;
                     }
                   });
}

Var slice_rows(Var a, std::size_t k) {
  const Tensor& A = a.value();
  if (k < 1 || k > A.rows()) {
    throw ShapeError("slice_rows: k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(A.rows()) + "]");
  }
  const std::size_t n = A.cols();
  Tensor out({k, n}, std::vector<double>(A.data().begin(), A.data().begin() + k * n));
  return a.graph().record("slice_rows", std::move(out), {a},
                          [k, n](const Tensor& d, std::vector<Tensor*>& g) {
                            for (std::size_t i = 0; i < k * n; ++i) (*g[0])[i] += d[i];
                          });
}

Var slice_cols(Var a, std::size_t k) {
  const Tensor& A = a.value();
  if (k < 1 || k > A.cols()) {
    throw ShapeError("slice_cols: k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(A.cols()) + "]");
  }
  const std::size_t m = A.rows();
  Tensor out({m, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out(i, j) = A(i, j);
  return a.graph().record("slice_cols", std::move(out), {a},
                          [m, k](const Tensor& d, std::vector<Tensor*>& g) {
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < k; ++j) (*g[0])(i, j) += d(i, j);
                          });
}

Var select_row(Var a, std::size_t row) {
  const Tensor& A = a.value();
  if (row >= A.rows()) throw ShapeError("select_row: row out of range");
  const std::size_t n = A.cols();
  Tensor out({1, n});
  for (std::size_t j = 0; j < n; ++j) out(0, j) = A(row, j);
  return a.graph().record("select_row", std::move(out), {a},
                          [row, n](const Tensor& d, std::vector<Tensor*>& g) {
                            for (std::size_t j = 0; j < n; ++j) (*g[0])(row, j) += d(0, j);
                          });
}

Var gather_cols(Var a, std::span<const std::size_t> cols) {
  const Tensor& A = a.value();
  const std::size_t m = A.rows();
  if (cols.empty()) throw ShapeError("gather_cols: no columns");
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  Tensor out({m, idx.size()});
  for (std::size_t c = 0; c < idx.size(); ++c) {
    if (idx[c] >= A.cols()) throw ShapeError("gather_cols: column out of range");
    for (std::size_t i = 0; i < m; ++i) out(i, c) = A(i, idx[c]);
  }
  return a.graph().record("gather_cols", std::move(out), {a},
                          [idx, m](const Tensor& d, std::vector<Tensor*>& g) {
                            for (std::size_t c = 0; c < idx.size(); ++c)
                              for (std::size_t i = 0; i < m; ++i) (*g[0])(i, idx[c]) += d(i, c);
                          });
}

Var index(Var a, std::size_t i) {
  const Tensor& A = a.value();
  if (i >= A.size()) throw ShapeError("index: out of range");
  return a.graph().record("index", Tensor::scalar(A[i]), {a},
                          [i](const Tensor& d, std::vector<Tensor*>& g) { (*g[0])[i] += d[0]; });
}

Var stop_gradient(Var a) { return a.graph().detached("stop_gradient", a.value()); }

Var one_hot(Graph& g, std::size_t i, std::size_t length) {
  if (i >= length) throw ShapeError("one_hot: index out of range");
  Tensor t({length, 1});
  t[i] = 1.0;
  return g.constant(std::move(t));
}

Var one_hot_argmax(Var a) {
  const Tensor& A = a.value();
  std::size_t best = 0;
  for (std::size_t i = 1; i < A.size(); ++i)
    if (A[i] > A[best]) best = i;
  Tensor t(A.shape(), 0.0);
  t[best] = 1.0;
  return a.graph().detached("one_hot_argmax", std::move(t));
}

Var cosine_similarity(Var e, Var x) {
  const Tensor* E = val(e);
  const Tensor* X = val(x);
  const std::size_t T = E->rows(), h = E->cols(), N = X->cols();
  if (X->rows() != h) {
    throw ShapeError("cosine_similarity: embedding dim " + std::to_string(h) +
                     " vs sample dim " + std::to_string(X->rows()));
  }
  std::vector<double> en(T), xn(N);
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < h; ++c) s += (*E)(t, c) * (*E)(t, c);
    en[t] = std::sqrt(s);
    if (en[t] == 0.0) throw NumericalError("cosine_similarity: zero-norm embedding row");
  }
  for (std::size_t j = 0; j < N; ++j) {
    double s = 0.0;
    for (std::size_t c = 0; c < h; ++c) s += (*X)(c, j) * (*X)(c, j);
    xn[j] = std::sqrt(s);
    if (xn[j] == 0.0) throw NumericalError("cosine_similarity: zero-norm sample vector");
  }
  Tensor out({T, N});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < N; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < h; ++c) dot += (*E)(t, c) * (*X)(c, j);
      out(t, j) = dot / (en[t] * xn[j]);
    }
  Graph& gr = e.graph();
  Var y = gr.detached("cosine_similarity", std::move(out));
  const Tensor* S = val(y);
  return gr.record(
      "cosine_similarity", *S, {e, x},
      [E, X, S, en, xn, T, h, N](const Tensor& d, std::vector<Tensor*>& g) {
        // ds/de = x/(|e||x|) - s e/|e|^2 ; ds/dx = e/(|e||x|) - s x/|x|^2
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t j = 0; j < N; ++j) {
            const double dd = d(t, j);
            if (dd == 0.0) continue;
            const double s = (*S)(t, j);
            const double inv = 1.0 / (en[t] * xn[j]);
            for (std::size_t c = 0; c < h; ++c) {
              if (g[0]) (*g[0])(t, c) += dd * ((*X)(c, j) * inv - s * (*E)(t, c) / (en[t] * en[t]));
              if (g[1]) (*g[1])(c, j) += dd * ((*E)(t, c) * inv - s * (*X)(c, j) / (xn[j] * xn[j]));
            }
          }
      });
}

Var cross_entropy(Var probs, std::span<const std::size_t> targets) {
  const Tensor* P = val(probs);
  const std::size_t V = P->rows(), M = P->cols();
  if (targets.size() != M) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(M) + " columns");
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  double loss = 0.0;
  for (std::size_t j = 0; j < M; ++j) {
    if (tgt[j] >= V) throw std::out_of_range("cross_entropy: target outside vocabulary");
    loss -= std::log(std::max((*P)(tgt[j], j), kLogFloor));
  }
  loss /= static_cast<double>(M);
  return probs.graph().record("cross_entropy", Tensor::scalar(loss), {probs},
                              [P, tgt, M](const Tensor& d, std::vector<Tensor*>& g) {
                                for (std::size_t j = 0; j < M; ++j) {
                                  const double p = (*P)(tgt[j], j);
                                  if (p > kLogFloor)
                                    (*g[0])(tgt[j], j) -= d[0] / (p * static_cast<double>(M));
                                }
                              });
}

Var gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const Tensor* A = val(a);
  Tensor out = *A;
  for (double& v : out.data()) {
    const double x = v;
    v = 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
  }
  return a.graph().record("gelu", std::move(out), {a},
                          [A](const Tensor& d, std::vector<Tensor*>& g) {
                            for (std::size_t i = 0; i < d.size(); ++i) {
                              const double x = (*A)[i];
                              const double u = c * (x + 0.044715 * x * x * x);
                              const double th = std::tanh(u);
                              const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
                              const double dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
                              (*g[0])[i] += d[i] * dy;
                            }
                          });
}

Var layer_norm_cols(Var a, double eps) {
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({m, n});
  std::vector<double> inv_std(n);
  for (std::size_t j = 0; j < n; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < m; ++i) mu += A(i, j);
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (A(i, j) - mu) * (A(i, j) - mu);
    var /= static_cast<double>(m);
    inv_std[j] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < m; ++i) out(i, j) = (A(i, j) - mu) * inv_std[j];
  }
  Graph& gr = a.graph();
  Var y = gr.detached("layer_norm", std::move(out));
  const Tensor* Y = val(y);
  return gr.record("layer_norm", *Y, {a},
                   [Y, inv_std, m, n](const Tensor& d, std::vector<Tensor*>& g) {
                     for (std::size_t j = 0; j < n; ++j) {
                       double md = 0.0, mdy = 0.0;
                       for (std::size_t i = 0; i < m; ++i) {
                         md += d(i, j);
                         mdy += d(i, j) * (*Y)(i, j);
                       }
                       md /= static_cast<double>(m);
                       mdy /= static_cast<double>(m);
                       for (std::size_t i = 0; i < m; ++i)
                         (*g[0])(i, j) += inv_std[j] * (d(i, j) - md - (*Y)(i, j) * mdy);
                     }
                   });
}

Var mean_pool_cols(Var a, std::size_t group) {
  const Tensor& A = a.value();
  if (group == 0 || A.cols() % group != 0) throw ShapeError("mean_pool_cols: bad group size");
  const std::size_t m = A.rows(), n = A.cols() / group;
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t b = 0; b < n; ++b) {
      double s = 0.0;
      for (std::size_t p = 0; p < group; ++p) s += A(i, b * group + p);
      out(i, b) = s / static_cast<double>(group);
    }
  return a.graph().record("mean_pool_cols", std::move(out), {a},
                          [m, n, group](const Tensor& d, std::vector<Tensor*>& g) {
                            const double w = 1.0 / static_cast<double>(group);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t b = 0; b < n; ++b)
                                for (std::size_t p = 0; p < group; ++p)
                                  (*g[0])(i, b * group + p) += d(i, b) * w;
                          });
}

Var attention(Var q, Var k, Var v, std::size_t num_heads, std::size_t seq_len) {
  const Tensor* Q = val(q);
  const Tensor* K = val(k);
  const Tensor* Vv = val(v);
  require_same_shape("attention", *Q, *K);
  require_same_shape("attention", *Q, *Vv);
  if (num_heads == 0 || Q->rows() % num_heads != 0) {
    throw ShapeError("attention: width not divisible by heads");
  }
  if (seq_len == 0 || Q->cols() % seq_len != 0) {
    throw ShapeError("attention: columns not a multiple of seq_len");
  }
  kernels::AttentionShape s{Q->rows(), num_heads, Q->cols() / seq_len, seq_len};
  auto probs = std::make_shared<std::vector<double>>(s.prob_size());
  Tensor out(Q->shape(), 0.0);
  kernels::attention_forward(s, Q->data(), K->data(), Vv->data(), *probs, out.data());
  return q.graph().record(
      "attention", std::move(out), {q, k, v},
      [Q, K, Vv, s, probs](const Tensor& d, std::vector<Tensor*>& g) {
        Tensor dq(Q->shape(), 0.0), dk(Q->shape(), 0.0), dv(Q->shape(), 0.0);
        kernels::attention_backward(s, Q->data(), K->data(), Vv->data(), *probs, d.data(),
                                    dq.data(), dk.data(), dv.data());
        if (g[0]) *g[0] += dq;
        if (g[1]) *g[1] += dk;
        if (g[2]) *g[2] += dv;
      });
}

}  // namespace morekit::ag
