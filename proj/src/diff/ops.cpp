#include "drivelab/diff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace drivelab::diff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const Tensor& t) { return MapC(t.data(), t.rows(), t.cols()); }
Map view(Tensor& t) { return Map(t.data(), t.rows(), t.cols()); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

double guard_divisor(double b) {
  if (b >= 0.0) return std::max(b, kNumericGuard);
  return std::min(b, -kNumericGuard);
}

void require_positive(const Tensor& t, const char* what, bool allow_zero) {
  for (double v : t.values()) {
    if (!(allow_zero ? v >= 0.0 : v > 0.0)) {
      throw std::invalid_argument(std::string(what) + ": standard deviation must be " +
                                  (allow_zero ? "non-negative" : "positive"));
    }
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_string(av) + " * " + shape_string(bv));
  }
  Tensor out(av.rows(), bv.cols());
  view(out).noalias() = view(av) * view(bv);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t, const Tensor& g) {
    if (t.requires_grad(ia)) view(t.grad_accumulator(ia)).noalias() += view(g) * view(t.value(ib)).transpose();
    if (t.requires_grad(ib)) view(t.grad_accumulator(ib)).noalias() += view(t.value(ia)).transpose() * view(g);
  });
}

namespace {

// Fixed row order, so the result does not depend on buffer alignment.
void add_column_sums(Tensor& dst, const Tensor& g) {
  double* d = dst.data();
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const double* row = g.data() + r * g.cols();
    for (std::size_t c = 0; c < g.cols(); ++c) d[c] += row[c];
  }
}

}  // namespace

Var affine(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.cols() != wv.rows()) {
    throw ShapeError("affine: inner dimensions differ for " + shape_string(xv) + " * " + shape_string(wv));
  }
  if (bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ShapeError("affine: bias " + shape_string(bv) + " does not match weight " + shape_string(wv));
  }
  Tensor out(xv.rows(), wv.cols());
  view(out).noalias() = view(xv) * view(wv);
  view(out).rowwise() += view(bv).row(0);
  const auto ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, weight, bias}, [ix, iw, ib](Tape& t, std::uint32_t, const Tensor& g) {
    if (t.requires_grad(ix)) view(t.grad_accumulator(ix)).noalias() += view(g) * view(t.value(iw)).transpose();
    if (t.requires_grad(iw)) view(t.grad_accumulator(iw)).noalias() += view(t.value(ix)).transpose() * view(g);
    if (t.requires_grad(ib)) add_column_sums(t.grad_accumulator(ib), g);
  });
}

Var apply_unary(Var x, Unary op, double lo, double hi) {
  const Tensor& xv = x.value();
  if (op == Unary::Clamp && lo > hi) throw std::invalid_argument("clamp: lo > hi");
  Tensor out(xv.rows(), xv.cols());
  const std::size_t n = xv.size();
  const double* xp = xv.data();
  double* op_out = out.data();
  auto fill = [&](auto f) {
    for (std::size_t i = 0; i < n; ++i) op_out[i] = f(xp[i]);
  };
  switch (op) {
    case Unary::Tanh: fill([](double v) { return std::tanh(v); }); break;
    case Unary::Sigmoid: fill([](double v) { return stable_sigmoid(v); }); break;
    case Unary::Exp: fill([](double v) { return std::exp(v); }); break;
    case Unary::Log: fill([](double v) { return std::log(std::max(v, kNumericGuard)); }); break;
    case Unary::Softplus: fill([](double v) { return stable_softplus(v); }); break;
    case Unary::Square: fill([](double v) { return v * v; }); break;
    case Unary::Negate: fill([](double v) { return -v; }); break;
    case Unary::Clamp: fill([lo, hi](double v) { return std::clamp(v, lo, hi); }); break;
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, op, lo, hi](Tape& t, std::uint32_t self, const Tensor& g) {
    const Tensor& xin = t.value(ix);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_accumulator(ix);
    const std::size_t n = g.size();
    const double* xp = xin.data();
    const double* yp = y.data();
    const double* gp = g.data();
    double* out = gx.data();
    // d(x, y) is the local derivative given the input x and the output y.
    auto acc = [&](auto d) {
      for (std::size_t i = 0; i < n; ++i) out[i] += gp[i] * d(xp[i], yp[i]);
    };
    switch (op) {
      case Unary::Tanh: acc([](double, double yv) { return 1.0 - yv * yv; }); break;
      case Unary::Sigmoid: acc([](double, double yv) { return yv * (1.0 - yv); }); break;
      case Unary::Exp: acc([](double, double yv) { return yv; }); break;
      case Unary::Log: acc([](double v, double) { return v > kNumericGuard ? 1.0 / v : 0.0; }); break;
      case Unary::Softplus: acc([](double v, double) { return stable_sigmoid(v); }); break;
      case Unary::Square: acc([](double v, double) { return 2.0 * v; }); break;
      case Unary::Negate: acc([](double, double) { return -1.0; }); break;
      case Unary::Clamp: acc([lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; }); break;
    }
  });
}

Var apply_binary(Var a, Var b, Binary op) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool same = av.same_shape(bv);
  if (!same && !av.is_scalar() && !bv.is_scalar()) {
    throw ShapeError("elementwise op: shape mismatch " + shape_string(av) + " vs " + shape_string(bv) +
                     " (only scalar broadcasting is supported)");
  }
  const bool a_bcast = !same && av.is_scalar();
  const bool b_bcast = !same && bv.is_scalar();
  const Tensor& big = a_bcast ? bv : av;
  Tensor out(big.rows(), big.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[a_bcast ? 0 : i];
    const double y = bv[b_bcast ? 0 : i];
    switch (op) {
      case Binary::Add: out[i] = x + y; break;
      case Binary::Sub: out[i] = x - y; break;
      case Binary::Mul: out[i] = x * y; break;
      case Binary::Div: out[i] = x / guard_divisor(y); break;
    }
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b}, [ia, ib, op, a_bcast, b_bcast](Tape& t, std::uint32_t, const Tensor& g) {
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(ib);
        const bool need_a = t.requires_grad(ia);
        const bool need_b = t.requires_grad(ib);
        Tensor* ga = need_a ? &t.grad_accumulator(ia) : nullptr;
        Tensor* gb = need_b ? &t.grad_accumulator(ib) : nullptr;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t ai = a_bcast ? 0 : i;
          const std::size_t bi = b_bcast ? 0 : i;
          double da = 0.0, db = 0.0;
          switch (op) {
            case Binary::Add: da = 1.0; db = 1.0; break;
            case Binary::Sub: da = 1.0; db = -1.0; break;
            case Binary::Mul: da = y[bi]; db = x[ai]; break;
            case Binary::Div: {
              const double yy = guard_divisor(y[bi]);
              da = 1.0 / yy;
              db = std::abs(y[bi]) >= kNumericGuard ? -x[ai] / (yy * yy) : 0.0;
              break;
            }
          }
          if (ga) (*ga)[ai] += g[i] * da;
          if (gb) (*gb)[bi] += g[i] * db;
        }
      });
}

Var scale(Var x, double c) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, c](Tape& t, std::uint32_t, const Tensor& g) {
    Tensor& gx = t.grad_accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

Var add_scalar(Var x, double c) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + c;
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::uint32_t, const Tensor& g) {
    Tensor& gx = t.grad_accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var gaussian_sample(Var mean, Var std, Var noise) {
  const Tensor& mv = mean.value();
  const Tensor& sv = std.value();
  const Tensor& nv = noise.value();
  require_same(mv, sv, "gaussian_sample");
  require_same(mv, nv, "gaussian_sample");
  require_positive(sv, "gaussian_sample", /*allow_zero=*/true);
  Tensor out(mv.rows(), mv.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mv[i] + sv[i] * nv[i];
  const auto im = mean.id(), is = std.id(), in = noise.id();
  return mean.tape().record(std::move(out), {mean, std, noise}, [im, is, in](Tape& t, std::uint32_t, const Tensor& g) {
    const Tensor& s = t.value(is);
    const Tensor& n = t.value(in);
    if (t.requires_grad(im)) {
      Tensor& gm = t.grad_accumulator(im);
      for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
    }
    if (t.requires_grad(is)) {
      Tensor& gs = t.grad_accumulator(is);
      for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i] * n[i];
    }
    if (t.requires_grad(in)) {
      Tensor& gn = t.grad_accumulator(in);
      for (std::size_t i = 0; i < g.size(); ++i) gn[i] += g[i] * s[i];
    }
  });
}

Var kl_diag_gaussians(Var mean_q, Var std_q, Var mean_p, Var std_p) {
  const Tensor& mq = mean_q.value();
  const Tensor& sq = std_q.value();
  const Tensor& mp = mean_p.value();
  const Tensor& sp = std_p.value();
  require_same(mq, sq, "kl_diag_gaussians");
  require_same(mq, mp, "kl_diag_gaussians");
  require_same(mq, sp, "kl_diag_gaussians");
  require_positive(sq, "kl_diag_gaussians", false);
  require_positive(sp, "kl_diag_gaussians", false);
  Tensor out(mq.rows(), 1);
  for (std::size_t r = 0; r < mq.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < mq.cols(); ++c) {
      const double d = mq(r, c) - mp(r, c);
      const double q = sq(r, c), p = sp(r, c);
      acc += std::log(p / q) + (q * q + d * d) / (2.0 * p * p) - 0.5;
    }
    out(r, 0) = acc;
  }
  const auto imq = mean_q.id(), isq = std_q.id(), imp = mean_p.id(), isp = std_p.id();
  return mean_q.tape().record(
      std::move(out), {mean_q, std_q, mean_p, std_p}, [imq, isq, imp, isp](Tape& t, std::uint32_t, const Tensor& g) {
        const Tensor& mq = t.value(imq);
        const Tensor& sq = t.value(isq);
        const Tensor& mp = t.value(imp);
        const Tensor& sp = t.value(isp);
        Tensor* gmq = t.requires_grad(imq) ? &t.grad_accumulator(imq) : nullptr;
        Tensor* gsq = t.requires_grad(isq) ? &t.grad_accumulator(isq) : nullptr;
        Tensor* gmp = t.requires_grad(imp) ? &t.grad_accumulator(imp) : nullptr;
        Tensor* gsp = t.requires_grad(isp) ? &t.grad_accumulator(isp) : nullptr;
        const std::size_t cols = mq.cols();
        for (std::size_t r = 0; r < mq.rows(); ++r) {
          const double up = g[r];
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const double d = mq[i] - mp[i];
            const double q = sq[i], p = sp[i];
            const double p2 = p * p;
            if (gmq) (*gmq)[i] += up * d / p2;
            if (gmp) (*gmp)[i] -= up * d / p2;
            if (gsq) (*gsq)[i] += up * (-1.0 / q + q / p2);
            if (gsp) (*gsp)[i] += up * (1.0 / p - (q * q + d * d) / (p2 * p));
          }
        }
      });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (double v : xv.values()) acc += v;
  const auto ix = x.id();
  return x.tape().record(Tensor::scalar(acc), {x}, [ix](Tape& t, std::uint32_t, const Tensor& g) {
    Tensor& gx = t.grad_accumulator(ix);
    for (auto& v : gx.values()) v += g[0];
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var row_sum(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double acc = 0.0;
    for (double v : xv.row_span(r)) acc += v;
    out(r, 0) = acc;
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::uint32_t, const Tensor& g) {
    Tensor& gx = t.grad_accumulator(ix);
    for (std::size_t r = 0; r < gx.rows(); ++r) {
      for (auto& v : gx.row_span(r)) v += g[r];
    }
  });
}

Var row_mean(Var x) {
  const std::size_t cols = x.value().cols();
  if (cols == 0) throw ShapeError("row_mean of empty rows");
  return scale(row_sum(x), 1.0 / static_cast<double>(cols));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_string(parts.front().value()) + " vs " +
                       shape_string(p.value()));
    }
    cols += p.value().cols();
  }
  Tensor out(rows, cols);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(v.row_span(r).begin(), v.row_span(r).end(), out.row_span(r).begin() + static_cast<std::ptrdiff_t>(off));
    }
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.cols();
  }
  return parts.front().tape().record(std::move(out), parts, [ids, offsets](Tape& t, std::uint32_t, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor& gp = t.grad_accumulator(ids[k]);
      for (std::size_t r = 0; r < gp.rows(); ++r) {
        for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, offsets[k] + c);
      }
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  if (begin + count > xv.cols() || count == 0) {
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_string(xv));
  }
  Tensor out(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = xv(r, begin + c);
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, begin, count](Tape& t, std::uint32_t, const Tensor& g) {
    Tensor& gx = t.grad_accumulator(ix);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < count; ++c) gx(r, begin + c) += g(r, c);
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(parts.front().value()) + " vs " +
                       shape_string(p.value()));
    }
    rows += p.value().rows();
  }
  Tensor out(rows, cols);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data(), v.data() + v.size(), out.data() + off * cols);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.rows();
  }
  return parts.front().tape().record(std::move(out), parts, [ids, offsets](Tape& t, std::uint32_t, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor& gp = t.grad_accumulator(ids[k]);
      const double* src = g.data() + offsets[k] * g.cols();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
    }
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  if (begin + count > xv.rows() || count == 0) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_string(xv));
  }
  const std::size_t cols = xv.cols();
  Tensor out(count, cols);
  std::copy(xv.data() + begin * cols, xv.data() + (begin + count) * cols, out.data());
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, begin](Tape& t, std::uint32_t, const Tensor& g) {
    Tensor& gx = t.grad_accumulator(ix);
    double* dst = gx.data() + begin * gx.cols();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var detach(Var x) { return x.tape().constant(x.value()); }

Var onehot_affine(std::shared_ptr<const std::vector<std::uint32_t>> indices, std::size_t active, Var weight,
                  Var bias) {
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (active == 0 || indices->size() % active != 0) {
    throw ShapeError("onehot_affine: index count " + std::to_string(indices->size()) +
                     " is not a multiple of active count " + std::to_string(active));
  }
  if (bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ShapeError("onehot_affine: bias " + shape_string(bv) + " does not match weight " + shape_string(wv));
  }
  const std::size_t rows = indices->size() / active;
  const std::size_t width = wv.cols();
  for (std::uint32_t idx : *indices) {
    if (idx >= wv.rows()) throw ShapeError("onehot_affine: index out of range for weight " + shape_string(wv));
  }
  Tensor out(rows, width);
  auto ov = view(out);
  for (std::size_t r = 0; r < rows; ++r) ov.row(r) = view(bv).row(0);
  // Slot-major traversal: for one-hot layouts the rows touched by slot j across
  // the batch are a handful of neighbours, so they stay cache-resident.
  const std::uint32_t* base = indices->data();
  for (std::size_t j = 0; j < active; ++j) {
    for (std::size_t r = 0; r < rows; ++r) ov.row(r) += view(wv).row(base[r * active + j]);
  }
  const auto iw = weight.id(), ib = bias.id();
  return weight.tape().record(
      std::move(out), {weight, bias}, [indices, active, iw, ib](Tape& t, std::uint32_t, const Tensor& g) {
        const std::size_t rows = g.rows();
        if (t.requires_grad(iw)) {
          auto gw = view(t.grad_accumulator(iw));
          const auto gv = view(g);
          const std::uint32_t* base = indices->data();
          for (std::size_t j = 0; j < active; ++j) {
            for (std::size_t r = 0; r < rows; ++r) gw.row(base[r * active + j]) += gv.row(r);
          }
        }
        if (t.requires_grad(ib)) add_column_sums(t.grad_accumulator(ib), g);
      });
}

Var cell_cross_entropy(Var logits, std::shared_ptr<const std::vector<std::uint8_t>> targets, std::size_t classes) {
  const Tensor& lv = logits.value();
  if (classes == 0 || lv.cols() % classes != 0) {
    throw ShapeError("cell_cross_entropy: " + shape_string(lv) + " is not divisible into " +
                     std::to_string(classes) + " classes");
  }
  const std::size_t cells = lv.cols() / classes;
  if (targets->size() != lv.rows() * cells) {
    throw ShapeError("cell_cross_entropy: " + std::to_string(targets->size()) + " targets for " +
                     std::to_string(lv.rows() * cells) + " cells");
  }
  const std::size_t total = lv.rows() * cells;
  // Softmax probabilities are kept for the backward pass when it will run.
  std::shared_ptr<double[]> probs(logits.requires_grad() ? new double[lv.size()] : nullptr);
  double acc = 0.0;
  double e[256];
  if (classes > 256) throw ShapeError("cell_cross_entropy: at most 256 classes");
  for (std::size_t k = 0; k < total; ++k) {
    const double* z = lv.data() + k * classes;
    const std::uint8_t y = (*targets)[k];
    if (y >= classes) throw std::invalid_argument("cell_cross_entropy: class id out of range");
    double mx = z[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z[c]);
    double se = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      e[c] = std::exp(z[c] - mx);
      se += e[c];
    }
    acc += std::log(se) + mx - z[y];
    if (probs) {
      double* p = probs.get() + k * classes;
      const double inv = 1.0 / se;
      for (std::size_t c = 0; c < classes; ++c) p[c] = e[c] * inv;
    }
  }
  const auto il = logits.id();
  return logits.tape().record(
      Tensor::scalar(acc / static_cast<double>(total)), {logits},
      [il, targets, classes, total, probs](Tape& t, std::uint32_t, const Tensor& g) {
        Tensor& gl = t.grad_accumulator(il);
        const double w = g[0] / static_cast<double>(total);
        double* gz = gl.data();
        const double* p = probs.get();
        for (std::size_t i = 0; i < total * classes; ++i) gz[i] += w * p[i];
        for (std::size_t k = 0; k < total; ++k) gz[k * classes + (*targets)[k]] -= w;
      });
}

}  // namespace drivelab::diff
