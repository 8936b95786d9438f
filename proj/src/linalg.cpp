#include "pisoflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

namespace pisoflow {

namespace {

template <class Real>
double dot(std::span<const Real> a, std::span<const Real> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

template <class Real>
double norm(std::span<const Real> a) {
  return std::sqrt(dot(a, a));
}

template <class Real>
void project(std::span<Real> v) {
  if (v.empty()) return;
  double m = 0;
  for (auto x : v) m += x;
  m /= static_cast<double>(v.size());
  for (auto& x : v) x = static_cast<Real>(x - m);
}

template <class Real>
std::span<const Real> cspan(const std::vector<Real>& v) {
  return {v.data(), v.size()};
}

}  // namespace

void project_zero_mean(std::span<double> v) { project(v); }
void project_zero_mean(std::span<float> v) { project(v); }

int CsrPattern::find(int row, int col) const {
  const auto b = cols.begin() + row_ptr[row], e = cols.begin() + row_ptr[row + 1];
  const auto it = std::lower_bound(b, e, col);
  return (it != e && *it == col) ? static_cast<int>(it - cols.begin()) : -1;
}

std::shared_ptr<const CsrPattern> CsrPattern::build(int n, const std::vector<std::vector<int>>& rows) {
  auto p = std::make_shared<CsrPattern>();
  p->n = n;
  p->row_ptr.assign(n + 1, 0);
  for (int i = 0; i < n; ++i) {
    std::vector<int> r = i < static_cast<int>(rows.size()) ? rows[i] : std::vector<int>{};
    r.push_back(i);
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
    for (int c : r)
      if (c < 0 || c >= n) throw std::out_of_range("pattern column out of range");
    p->cols.insert(p->cols.end(), r.begin(), r.end());
    p->row_ptr[i + 1] = static_cast<int>(p->cols.size());
  }
  p->diag.resize(n);
  for (int i = 0; i < n; ++i) p->diag[i] = p->find(i, i);
  p->transpose.resize(p->cols.size());
  for (int i = 0; i < n; ++i)
    for (int e = p->row_ptr[i]; e < p->row_ptr[i + 1]; ++e) p->transpose[e] = p->find(p->cols[e], i);
  return p;
}

template <class Real>
void CsrMatrix<Real>::multiply(std::span<const Real> x, std::span<Real> y) const {
  const auto& p = *pattern;
  for (int i = 0; i < p.n; ++i) {
    Real s = 0;
    for (int e = p.row_ptr[i]; e < p.row_ptr[i + 1]; ++e) s += values[e] * x[p.cols[e]];
    y[i] = s;
  }
}

template <class Real>
CsrMatrix<Real> CsrMatrix<Real>::transposed() const {
  CsrMatrix<Real> t(pattern);
  for (int e = 0; e < pattern->nnz(); ++e) {
    const int te = pattern->transpose[e];
    if (te < 0) {
      if (values[e] != Real(0)) throw SolverError("transpose", "pattern is not structurally symmetric");
      continue;
    }
    t.values[te] = values[e];
  }
  return t;
}

template <class Real>
Ilu0<Real>::Ilu0(const CsrMatrix<Real>& a) : pattern_(a.pattern), lu_(a.values) {
  const auto& p = *pattern_;
  for (int i = 0; i < p.n; ++i) {
    for (int e = p.row_ptr[i]; e < p.row_ptr[i + 1]; ++e) {
      const int k = p.cols[e];
      if (k >= i) break;
      const Real pivot = lu_[p.diag[k]];
      if (pivot == Real(0)) throw ZeroPivotError(k);
      lu_[e] /= pivot;
      const Real lik = lu_[e];
      // Row i, columns j > k that also exist in row k.
      int f = e + 1;
      for (int g = p.diag[k] + 1; g < p.row_ptr[k + 1]; ++g) {
        const int j = p.cols[g];
        while (f < p.row_ptr[i + 1] && p.cols[f] < j) ++f;
        if (f < p.row_ptr[i + 1] && p.cols[f] == j) lu_[f] -= lik * lu_[g];
      }
    }
    if (lu_[p.diag[i]] == Real(0)) throw ZeroPivotError(i);
  }
}

template <class Real>
void Ilu0<Real>::apply(std::span<const Real> r, std::span<Real> z) const {
  const auto& p = *pattern_;
  for (int i = 0; i < p.n; ++i) {
    Real s = r[i];
    for (int e = p.row_ptr[i]; e < p.diag[i]; ++e) s -= lu_[e] * z[p.cols[e]];
    z[i] = s;
  }
  for (int i = p.n - 1; i >= 0; --i) {
    Real s = z[i];
    for (int e = p.diag[i] + 1; e < p.row_ptr[i + 1]; ++e) s -= lu_[e] * z[p.cols[e]];
    z[i] = s / lu_[p.diag[i]];
  }
}

template <class Real>
double relative_residual(const CsrMatrix<Real>& a, std::span<const Real> b, std::span<const Real> x) {
  std::vector<Real> r(b.size());
  a.multiply(x, r);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double d = static_cast<double>(b[i]) - r[i];
    num += d * d;
    den += static_cast<double>(b[i]) * b[i];
  }
  if (den == 0) return std::sqrt(num);
  return std::sqrt(num / den);
}

namespace {

template <class Real>
SolverReport finish(const CsrMatrix<Real>& a, std::span<const Real> b, std::span<Real> x,
                    const SolverSettings& s, int iterations, bool preconditioned) {
  if (s.zero_mean) project(x);
  SolverReport rep;
  rep.iterations = iterations;
  rep.preconditioned = preconditioned;
  rep.residual = relative_residual<Real>(a, b, std::span<const Real>(x.data(), x.size()));
  rep.converged = rep.residual <= std::max(s.tolerance, 8.0 * std::numeric_limits<Real>::epsilon());
  return rep;
}

// Looser of the requested tolerance and what the precision can deliver, halved
// so the recomputed residual clears the tolerance despite rounding.
template <class Real>
double stop_target(const SolverSettings& s, double bnorm) {
  const double tol = std::max(s.tolerance, 8.0 * std::numeric_limits<Real>::epsilon());
  return 0.5 * tol * (s.absolute_cap ? std::min(bnorm, 1.0) : bnorm);
}

}  // namespace

template <class Real>
SolverReport cg_solve(const CsrMatrix<Real>& a, std::span<const Real> b_in, std::span<Real> x,
                      const SolverSettings& s) {
  const int n = a.size();
  std::vector<Real> b(b_in.begin(), b_in.end());
  if (s.zero_mean) project<Real>(b);
  const double bnorm = norm(cspan(b));
  if (bnorm == 0) {
    std::fill(x.begin(), x.end(), Real(0));
    return SolverReport{0, 0, true, false, -1};
  }
  if (s.zero_mean) project(x);
  std::vector<Real> r(n), p(n), q(n);
  const double target = stop_target<Real>(s, bnorm);
  int it = 0;
  while (it < s.max_iterations) {
    a.multiply(x, r);
    for (int i = 0; i < n; ++i) r[i] = b[i] - r[i];
    if (s.zero_mean) project<Real>(r);
    double rr = dot(cspan(r), cspan(r));
    if (std::sqrt(rr) <= target) break;
    p = r;
    const int start = it;
    while (std::sqrt(rr) > target && it < s.max_iterations) {
      a.multiply(p, q);
      const double pq = dot(cspan(p), cspan(q));
      if (pq == 0 || !std::isfinite(pq)) break;
      const double alpha = rr / pq;
      for (int i = 0; i < n; ++i) {
        x[i] += static_cast<Real>(alpha * p[i]);
        r[i] -= static_cast<Real>(alpha * q[i]);
      }
      if (s.zero_mean) project<Real>(r);
      const double rr_new = dot(cspan(r), cspan(r));
      const double beta = rr_new / rr;
      rr = rr_new;
      for (int i = 0; i < n; ++i) p[i] = static_cast<Real>(r[i] + beta * p[i]);
      ++it;
    }
    if (it == start) break;
  }
  return finish<Real>(a, cspan(b), x, s, it, false);
}

namespace {

template <class Real>
SolverReport bicgstab_impl(const CsrMatrix<Real>& a, std::span<const Real> b_in, std::span<Real> x,
                           const SolverSettings& s, const Ilu0<Real>* pre) {
  const int n = a.size();
  std::vector<Real> b(b_in.begin(), b_in.end());
  if (s.zero_mean) project<Real>(b);
  const double bnorm = norm(cspan(b));
  if (bnorm == 0) {
    std::fill(x.begin(), x.end(), Real(0));
    return SolverReport{0, 0, true, pre != nullptr, -1};
  }
  std::vector<Real> r(n), r0(n), p(n), v(n), sv(n), t(n), ph(n), sh(n);
  const double target = stop_target<Real>(s, bnorm);
  const auto precond = [&](const std::vector<Real>& in, std::vector<Real>& out) {
    if (pre)
      pre->apply(cspan(in), out);
    else
      out = in;
  };
  int it = 0;
  // The recurrence residual drifts from the true one; restart from b - Ax
  // whenever the recurrence claims convergence but the true residual does not.
  while (it < s.max_iterations) {
    a.multiply(x, r);
    for (int i = 0; i < n; ++i) r[i] = b[i] - r[i];
    double rnorm = norm(cspan(r));
    if (rnorm <= target) break;
    r0 = r;
    std::fill(p.begin(), p.end(), Real(0));
    std::fill(v.begin(), v.end(), Real(0));
    double rho = 1, alpha = 1, omega = 1;
    const int start = it;
    bool breakdown = false;
    while (rnorm > target && it < s.max_iterations) {
      const double rho_new = dot(cspan(r0), cspan(r));
      if (rho_new == 0 || !std::isfinite(rho_new)) {
        breakdown = true;
        break;
      }
      const double beta = (rho_new / rho) * (alpha / omega);
      rho = rho_new;
      for (int i = 0; i < n; ++i) p[i] = static_cast<Real>(r[i] + beta * (p[i] - omega * v[i]));
      precond(p, ph);
      a.multiply(ph, v);
      const double r0v = dot(cspan(r0), cspan(v));
      if (r0v == 0 || !std::isfinite(r0v)) {
        breakdown = true;
        break;
      }
      alpha = rho / r0v;
      for (int i = 0; i < n; ++i) sv[i] = static_cast<Real>(r[i] - alpha * v[i]);
      ++it;
      if (norm(cspan(sv)) <= target) {
        for (int i = 0; i < n; ++i) x[i] += static_cast<Real>(alpha * ph[i]);
        break;
      }
      precond(sv, sh);
      a.multiply(sh, t);
      const double tt = dot(cspan(t), cspan(t));
      if (tt == 0 || !std::isfinite(tt)) {
        for (int i = 0; i < n; ++i) x[i] += static_cast<Real>(alpha * ph[i]);
        breakdown = true;
        break;
      }
      omega = dot(cspan(t), cspan(sv)) / tt;
      for (int i = 0; i < n; ++i) {
        x[i] += static_cast<Real>(alpha * ph[i] + omega * sh[i]);
        r[i] = static_cast<Real>(sv[i] - omega * t[i]);
      }
      rnorm = norm(cspan(r));
      if (omega == 0) {
        breakdown = true;
        break;
      }
    }
    if (breakdown && it == start) break;
  }
  return finish<Real>(a, cspan(b), x, s, it, pre != nullptr);
}

}  // namespace

template <class Real>
SolverReport bicgstab_solve(const CsrMatrix<Real>& a, std::span<const Real> b, std::span<Real> x,
                            const SolverSettings& s) {
  if (s.preconditioner == Preconditioner::ILU0) {
    Ilu0<Real> ilu(a);
    return bicgstab_impl<Real>(a, b, x, s, &ilu);
  }
  if (s.preconditioner == Preconditioner::None) return bicgstab_impl<Real>(a, b, x, s, nullptr);
  std::vector<Real> x0(x.begin(), x.end());
  auto rep = bicgstab_impl<Real>(a, b, x, s, nullptr);
  if (rep.converged) return rep;
  std::copy(x0.begin(), x0.end(), x.begin());
  Ilu0<Real> ilu(a);
  auto rep2 = bicgstab_impl<Real>(a, b, x, s, &ilu);
  rep2.iterations += rep.iterations;
  rep2.plain_residual = rep.residual;
  return rep2;
}

template <class Real>
SolverReport linear_solve(SolverKind kind, const CsrMatrix<Real>& a, std::span<const Real> b,
                          std::span<Real> x, const SolverSettings& s) {
  return kind == SolverKind::CG ? cg_solve<Real>(a, b, x, s) : bicgstab_solve<Real>(a, b, x, s);
}

template <class Real>
SolverReport transpose_solve(SolverKind kind, const CsrMatrix<Real>& a, std::span<const Real> grad_x,
                             std::span<Real> grad_b, const SolverSettings& s) {
  if (kind == SolverKind::CG) return cg_solve<Real>(a, grad_x, grad_b, s);
  const auto at = a.transposed();
  return bicgstab_solve<Real>(at, grad_x, grad_b, s);
}

template <class Real>
void accumulate_matrix_grad(const CsrPattern& p, std::span<const Real> grad_b, std::span<const Real> x,
                            std::span<Real> grad_values) {
  for (int i = 0; i < p.n; ++i)
    for (int e = p.row_ptr[i]; e < p.row_ptr[i + 1]; ++e) grad_values[e] -= grad_b[i] * x[p.cols[e]];
}

template <class Real>
void write_coordinate_text(std::ostream& os, const CsrMatrix<Real>& a,
                           const std::vector<std::vector<Real>>& rhs) {
  const auto& p = *a.pattern;
  os << p.n << ' ' << p.nnz() << ' ' << rhs.size() << '\n';
  os << std::setprecision(std::numeric_limits<Real>::max_digits10);
  for (int i = 0; i < p.n; ++i)
    for (int e = p.row_ptr[i]; e < p.row_ptr[i + 1]; ++e) os << i << ' ' << p.cols[e] << ' ' << a.values[e] << '\n';
  for (const auto& r : rhs)
    for (auto v : r) os << v << '\n';
}

#define PISOFLOW_INSTANTIATE(Real)                                                                          \
  template struct CsrMatrix<Real>;                                                                          \
  template class Ilu0<Real>;                                                                                \
  template SolverReport cg_solve<Real>(const CsrMatrix<Real>&, std::span<const Real>, std::span<Real>,      \
                                       const SolverSettings&);                                              \
  template SolverReport bicgstab_solve<Real>(const CsrMatrix<Real>&, std::span<const Real>, std::span<Real>, \
                                             const SolverSettings&);                                        \
  template SolverReport linear_solve<Real>(SolverKind, const CsrMatrix<Real>&, std::span<const Real>,       \
                                           std::span<Real>, const SolverSettings&);                         \
  template SolverReport transpose_solve<Real>(SolverKind, const CsrMatrix<Real>&, std::span<const Real>,    \
                                              std::span<Real>, const SolverSettings&);                      \
  template void accumulate_matrix_grad<Real>(const CsrPattern&, std::span<const Real>,                      \
                                             std::span<const Real>, std::span<Real>);                       \
  template double relative_residual<Real>(const CsrMatrix<Real>&, std::span<const Real>,                    \
                                          std::span<const Real>);                                           \
  template void write_coordinate_text<Real>(std::ostream&, const CsrMatrix<Real>&,                          \
                                            const std::vector<std::vector<Real>>&);

PISOFLOW_INSTANTIATE(float)
PISOFLOW_INSTANTIATE(double)

}  // namespace pisoflow
