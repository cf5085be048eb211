#include "untangle/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "untangle/error.hpp"

namespace untangle {

Parameter& ParameterStore::create(std::string name, Tensor init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  items_.push_back(std::make_unique<Parameter>(name, std::move(init)));
  index_.emplace(items_.back()->name(), items_.size() - 1);
  return *items_.back();
}

Parameter* ParameterStore::find(std::string_view name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : items_[it->second].get();
}

const Parameter* ParameterStore::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : items_[it->second].get();
}

std::vector<Parameter*> ParameterStore::pointers() {
  std::vector<Parameter*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p->value().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : items_) p->zero_grad();
}

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

double sigmoid_fn(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var Tape::push(Tensor value, std::function<void(Tape&, const Node&)> back, const char* op) {
  if (!value.all_finite())
    throw NumericError(std::string(op) + " produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad_live) {
    n.grad = Tensor::zeros(n.value.shape());
    n.grad_live = true;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Var Tape::constant(Tensor value) { return push(std::move(value), nullptr, "constant"); }

Var Tape::leaf(Parameter& p) {
  Var v = push(p.value(), nullptr, "leaf");
  nodes_.back().param = &p;
  return v;
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() == 2 && B.rank() == 2) {
    require(A.extent(1) == B.extent(0),
            "matmul: inner extents differ, " + A.shape_string() + "·" + B.shape_string());
    const std::size_t m = A.extent(0), k = A.extent(1), n = B.extent(1);
    Tensor C({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A.at(i, p);
        if (aip == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) C.at(i, j) += aip * B.at(p, j);
      }
    const int ia = a.id, ib = b.id;
    return push(std::move(C),
                [ia, ib](Tape& t, const Node& self) {
                  const Tensor& Av = t.value(ia);
                  const Tensor& Bv = t.value(ib);
                  const Tensor& G = self.grad;
                  const std::size_t m = Av.extent(0), k = Av.extent(1), n = Bv.extent(1);
                  Tensor dA({m, k});
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                      const double g = G.at(i, j);
                      if (g == 0.0) continue;
                      for (std::size_t p = 0; p < k; ++p) dA.at(i, p) += g * Bv.at(p, j);
                    }
                  Tensor dB({k, n});
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                      const double av = Av.at(i, p);
                      if (av == 0.0) continue;
                      for (std::size_t j = 0; j < n; ++j) dB.at(p, j) += av * G.at(i, j);
                    }
                  t.accumulate(ia, dA);
                  t.accumulate(ib, dB);
                },
                "matmul");
  }
  if (A.rank() == 2 && B.rank() == 1) {
    require(A.extent(1) == B.extent(0),
            "matmul: inner extents differ, " + A.shape_string() + "·" + B.shape_string());
    const std::size_t m = A.extent(0), k = A.extent(1);
    Tensor c({m});
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A.at(i, p) * B[p];
      c[i] = acc;
    }
    const int ia = a.id, ib = b.id;
    return push(std::move(c),
                [ia, ib](Tape& t, const Node& self) {
                  const Tensor& Av = t.value(ia);
                  const Tensor& Bv = t.value(ib);
                  const Tensor& g = self.grad;
                  const std::size_t m = Av.extent(0), k = Av.extent(1);
                  Tensor dA({m, k});
                  Tensor db({k});
                  for (std::size_t i = 0; i < m; ++i) {
                    const double gi = g[i];
                    if (gi == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) {
                      dA.at(i, p) += gi * Bv[p];
                      db[p] += gi * Av.at(i, p);
                    }
                  }
                  t.accumulate(ia, dA);
                  t.accumulate(ib, db);
                },
                "matmul");
  }
  throw ShapeError("matmul: unsupported ranks " + A.shape_string() + "·" + B.shape_string());
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.same_shape(B), "add: shapes differ, " + A.shape_string() + " vs " + B.shape_string());
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  const int ia = a.id, ib = b.id;
  return push(std::move(C),
              [ia, ib](Tape& t, const Node& self) {
                t.accumulate(ia, self.grad);
                t.accumulate(ib, self.grad);
              },
              "add");
}

Var Tape::add_rows(Var m, Var v) {
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  require(M.rank() == 2 && V.rank() == 1 && M.extent(1) == V.extent(0),
          "add_rows: " + M.shape_string() + " + " + V.shape_string());
  Tensor C = M;
  for (std::size_t i = 0; i < M.extent(0); ++i)
    for (std::size_t j = 0; j < M.extent(1); ++j) C.at(i, j) += V[j];
  const int im = m.id, iv = v.id;
  return push(std::move(C),
              [im, iv](Tape& t, const Node& self) {
                const Tensor& G = self.grad;
                t.accumulate(im, G);
                Tensor dv({G.extent(1)});
                for (std::size_t i = 0; i < G.extent(0); ++i)
                  for (std::size_t j = 0; j < G.extent(1); ++j) dv[j] += G.at(i, j);
                t.accumulate(iv, dv);
              },
              "add_rows");
}

Var Tape::sub(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.same_shape(B), "sub: shapes differ, " + A.shape_string() + " vs " + B.shape_string());
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  const int ia = a.id, ib = b.id;
  return push(std::move(C),
              [ia, ib](Tape& t, const Node& self) {
                t.accumulate(ia, self.grad);
                Tensor neg = self.grad;
                for (double& x : neg.data()) x = -x;
                t.accumulate(ib, neg);
              },
              "sub");
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.same_shape(B), "mul: shapes differ, " + A.shape_string() + " vs " + B.shape_string());
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  const int ia = a.id, ib = b.id;
  return push(std::move(C),
              [ia, ib](Tape& t, const Node& self) {
                const Tensor& Av = t.value(ia);
                const Tensor& Bv = t.value(ib);
                Tensor da = self.grad;
                Tensor db = self.grad;
                for (std::size_t i = 0; i < da.size(); ++i) {
                  da[i] *= Bv[i];
                  db[i] *= Av[i];
                }
                t.accumulate(ia, da);
                t.accumulate(ib, db);
              },
              "mul");
}

Var Tape::scale(Var a, double s) {
  Tensor C = a.value();
  for (double& x : C.data()) x *= s;
  const int ia = a.id;
  return push(std::move(C),
              [ia, s](Tape& t, const Node& self) {
                Tensor g = self.grad;
                for (double& x : g.data()) x *= s;
                t.accumulate(ia, g);
              },
              "scale");
}

Var Tape::unary(Unary kind, Var a) {
  Tensor C = a.value();
  switch (kind) {
    case Unary::Tanh:
      for (double& x : C.data()) x = std::tanh(x);
      break;
    case Unary::Sigmoid:
      for (double& x : C.data()) x = sigmoid_fn(x);
      break;
    case Unary::Relu:
      for (double& x : C.data()) x = x > 0.0 ? x : 0.0;
      break;
  }
  const int ia = a.id;
  return push(std::move(C),
              [ia, kind](Tape& t, const Node& self) {
                const Tensor& x = t.value(ia);
                const Tensor& y = self.value;
                Tensor g = self.grad;
                auto gd = g.data();
                for (std::size_t i = 0; i < gd.size(); ++i) {
                  switch (kind) {
                    case Unary::Tanh:
                      gd[i] *= 1.0 - y[i] * y[i];
                      break;
                    case Unary::Sigmoid:
                      gd[i] *= y[i] * (1.0 - y[i]);
                      break;
                    case Unary::Relu:
                      gd[i] *= x[i] > 0.0 ? 1.0 : 0.0;
                      break;
                  }
                }
                t.accumulate(ia, g);
              },
              "unary");
}

Var Tape::transpose(Var a) {
  const Tensor& A = a.value();
  require(A.rank() == 2, "transpose expects rank 2, got " + A.shape_string());
  const std::size_t m = A.extent(0), n = A.extent(1);
  Tensor C({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) C.at(j, i) = A.at(i, j);
  const int ia = a.id;
  return push(std::move(C),
              [ia](Tape& t, const Node& self) {
                const Tensor& G = self.grad;
                Tensor dA({G.extent(1), G.extent(0)});
                for (std::size_t i = 0; i < G.extent(0); ++i)
                  for (std::size_t j = 0; j < G.extent(1); ++j) dA.at(j, i) = G.at(i, j);
                t.accumulate(ia, dA);
              },
              "transpose");
}

Var Tape::masked_softmax(Var logits, Tensor mask) {
  const Tensor& L = logits.value();
  require(L.rank() == 1 || L.rank() == 2,
          "masked_softmax expects rank 1 or 2, got " + L.shape_string());
  require(L.same_shape(mask),
          "masked_softmax: mask shape " + mask.shape_string() + " does not match logits " +
              L.shape_string());
  const std::size_t rows = L.rank() == 2 ? L.extent(0) : 1;
  const std::size_t n = L.rank() == 2 ? L.extent(1) : L.extent(0);

  Tensor Y = L;
  auto y = Y.data();
  auto l = L.data();
  auto m = mask.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * n;
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) hi = std::max(hi, l[off + j] + m[off + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double e = std::exp(l[off + j] + m[off + j] - hi);
      if (m[off + j] != 0.0) e = 0.0;  // masked positions are exactly zero
      y[off + j] = e;
      z += e;
    }
    if (z == 0.0) throw InputError("masked_softmax: fully masked row " + std::to_string(r));
    for (std::size_t j = 0; j < n; ++j) y[off + j] /= z;
  }
  const int il = logits.id;
  return push(std::move(Y),
              [il, rows, n](Tape& t, const Node& self) {
                const Tensor& yv = self.value;
                const Tensor& G = self.grad;
                Tensor dl = Tensor::zeros(yv.shape());
                for (std::size_t r = 0; r < rows; ++r) {
                  const std::size_t off = r * n;
                  double dot = 0.0;
                  for (std::size_t j = 0; j < n; ++j) dot += G[off + j] * yv[off + j];
                  for (std::size_t j = 0; j < n; ++j)
                    dl[off + j] = yv[off + j] * (G[off + j] - dot);
                }
                t.accumulate(il, dl);
              },
              "masked_softmax");
}

Var Tape::cross_entropy(Var logits, std::size_t gold) {
  const Tensor& L = logits.value();
  require(L.rank() == 1, "cross_entropy expects rank-1 logits, got " + L.shape_string());
  const std::size_t n = L.extent(0);
  if (gold >= n)
    throw InputError("cross_entropy: gold index " + std::to_string(gold) + " out of range [0, " +
                     std::to_string(n) + ")");
  double hi = L[0];
  for (std::size_t j = 1; j < n; ++j) hi = std::max(hi, L[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) z += std::exp(L[j] - hi);
  const double lse = hi + std::log(z);
  const int il = logits.id;
  return push(Tensor::scalar(lse - L[gold]),
              [il, gold, n, lse](Tape& t, const Node& self) {
                const Tensor& Lv = t.value(il);
                const double g = self.grad[0];
                Tensor dl({n});
                for (std::size_t j = 0; j < n; ++j) dl[j] = g * std::exp(Lv[j] - lse);
                dl[gold] -= g;
                t.accumulate(il, dl);
              },
              "cross_entropy");
}

Var Tape::row(Var m, std::size_t i) {
  const Tensor& M = m.value();
  require(M.rank() == 2, "row expects rank 2, got " + M.shape_string());
  if (i >= M.extent(0))
    throw InputError("row index " + std::to_string(i) + " out of range for " + M.shape_string());
  const std::size_t n = M.extent(1);
  Tensor r({n});
  for (std::size_t j = 0; j < n; ++j) r[j] = M.at(i, j);
  const int im = m.id;
  return push(std::move(r),
              [im, i, n](Tape& t, const Node& self) {
                const Tensor& M = t.value(im);
                Tensor dM = Tensor::zeros(M.shape());
                for (std::size_t j = 0; j < n; ++j) dM.at(i, j) = self.grad[j];
                t.accumulate(im, dM);
              },
              "row");
}

Var Tape::vstack(std::span<const Var> rows) {
  require(!rows.empty(), "vstack of zero rows");
  const std::size_t n = rows[0].value().extent(0);
  Tensor M({rows.size(), n});
  std::vector<int> ids;
  ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& r = rows[i].value();
    require(r.rank() == 1 && r.extent(0) == n, "vstack: row " + std::to_string(i) +
                                                   " has shape " + r.shape_string());
    for (std::size_t j = 0; j < n; ++j) M.at(i, j) = r[j];
    ids.push_back(rows[i].id);
  }
  return push(std::move(M),
              [ids = std::move(ids), n](Tape& t, const Node& self) {
                for (std::size_t i = 0; i < ids.size(); ++i) {
                  Tensor g({n});
                  for (std::size_t j = 0; j < n; ++j) g[j] = self.grad.at(i, j);
                  t.accumulate(ids[i], g);
                }
              },
              "vstack");
}

Var Tape::hstack(std::span<const Var> mats) {
  require(!mats.empty(), "hstack of zero blocks");
  const std::size_t r = mats[0].value().extent(0);
  std::size_t total = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (const Var& v : mats) {
    const Tensor& M = v.value();
    require(M.rank() == 2 && M.extent(0) == r, "hstack: block shape " + M.shape_string());
    total += M.extent(1);
    widths.push_back(M.extent(1));
    ids.push_back(v.id);
  }
  Tensor M({r, total});
  std::size_t col = 0;
  for (const Var& v : mats) {
    const Tensor& B = v.value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < B.extent(1); ++j) M.at(i, col + j) = B.at(i, j);
    col += B.extent(1);
  }
  return push(std::move(M),
              [ids = std::move(ids), widths = std::move(widths), r](Tape& t, const Node& self) {
                std::size_t col = 0;
                for (std::size_t b = 0; b < ids.size(); ++b) {
                  Tensor g({r, widths[b]});
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < widths[b]; ++j) g.at(i, j) = self.grad.at(i, col + j);
                  t.accumulate(ids[b], g);
                  col += widths[b];
                }
              },
              "hstack");
}

Var Tape::concat(std::span<const Var> vecs) {
  require(!vecs.empty(), "concat of zero vectors");
  std::size_t total = 0;
  std::vector<int> ids;
  std::vector<std::size_t> lens;
  for (const Var& v : vecs) {
    const Tensor& x = v.value();
    require(x.rank() == 1, "concat expects rank-1 parts, got " + x.shape_string());
    total += x.extent(0);
    lens.push_back(x.extent(0));
    ids.push_back(v.id);
  }
  Tensor out({total});
  std::size_t off = 0;
  for (const Var& v : vecs) {
    const Tensor& x = v.value();
    for (std::size_t j = 0; j < x.extent(0); ++j) out[off + j] = x[j];
    off += x.extent(0);
  }
  return push(std::move(out),
              [ids = std::move(ids), lens = std::move(lens)](Tape& t, const Node& self) {
                std::size_t off = 0;
                for (std::size_t b = 0; b < ids.size(); ++b) {
                  Tensor g({lens[b]});
                  for (std::size_t j = 0; j < lens[b]; ++j) g[j] = self.grad[off + j];
                  t.accumulate(ids[b], g);
                  off += lens[b];
                }
              },
              "concat");
}

Var Tape::mean_rows(Var m, std::vector<std::size_t> rows) {
  const Tensor& M = m.value();
  require(M.rank() == 2, "mean_rows expects rank 2, got " + M.shape_string());
  const std::size_t n = M.extent(1);
  Tensor out({n});
  if (rows.empty()) return push(std::move(out), nullptr, "mean_rows");
  for (std::size_t i : rows) {
    if (i >= M.extent(0))
      throw InputError("mean_rows: index " + std::to_string(i) + " out of range for " +
                       M.shape_string());
    for (std::size_t j = 0; j < n; ++j) out[j] += M.at(i, j);
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
  const int im = m.id;
  return push(std::move(out),
              [im, rows = std::move(rows), inv, n](Tape& t, const Node& self) {
                const Tensor& M = t.value(im);
                Tensor dM = Tensor::zeros(M.shape());
                for (std::size_t i : rows)
                  for (std::size_t j = 0; j < n; ++j) dM.at(i, j) += inv * self.grad[j];
                t.accumulate(im, dM);
              },
              "mean_rows");
}

Var Tape::sum(Var a) {
  const Tensor& A = a.value();
  double acc = 0.0;
  for (double v : A.data()) acc += v;
  const int ia = a.id;
  return push(Tensor::scalar(acc),
              [ia](Tape& t, const Node& self) {
                const Tensor& A = t.value(ia);
                Tensor g = Tensor::full(A.shape(), self.grad[0]);
                t.accumulate(ia, g);
              },
              "sum");
}

Var Tape::dropout(Var a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  const Tensor& A = a.value();
  Tensor mask(A.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const double scl = 1.0 / (1.0 - rate);
  for (double& x : mask.data()) x = keep(rng) ? scl : 0.0;
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= mask[i];
  const int ia = a.id;
  return push(std::move(C),
              [ia, mask = std::move(mask)](Tape& t, const Node& self) {
                Tensor g = self.grad;
                for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
                t.accumulate(ia, g);
              },
              "dropout");
}

void Tape::backward(Var loss) {
  if (consumed_)
    throw StaleGraphError("backward already consumed this graph; run a fresh forward pass");
  if (loss.tape != this || loss.id < 0 || loss.id >= static_cast<int>(nodes_.size()))
    throw InputError("backward: loss node does not belong to this tape");
  Node& top = nodes_[static_cast<std::size_t>(loss.id)];
  if (top.value.size() != 1)
    throw ShapeError("backward requires a scalar loss, got " + top.value.shape_string());
  consumed_ = true;
  top.grad = Tensor::full(top.value.shape(), 1.0);
  top.grad_live = true;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.grad_live) continue;
    if (n.param) {
      auto dst = n.param->grad().data();
      auto src = n.grad.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    if (n.back) n.back(*this, n);
  }
}

}  // namespace untangle
