#include "pisoflow/adjoint.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace pisoflow {

template <class Real>
StepCotangent<Real> zero_cotangent(const Grid<Real>& g) {
  StepCotangent<Real> c;
  c.u.assign(static_cast<std::size_t>(g.dim) * g.num_cells, Real(0));
  c.p.assign(g.num_cells, Real(0));
  c.ub.assign(static_cast<std::size_t>(g.dim) * g.num_bfaces, Real(0));
  return c;
}

namespace {

using Vec = std::vector<double>;

enum class Mode { Single, Tagged };

template <class Real>
struct Lane {
  std::vector<Real> gu, gp, dub, dC, drhs, dA, dkappa, dnu, dS, du_n, dp_n, dub_pre, dP;
};

template <class Real>
class Reverse {
 public:
  Reverse(const PisoSolver<Real>& solver, const StepRecord<Real>& rec, Mode mode, GradientPath path)
      : s_(solver), g_(solver.grid()), rec_(rec), mode_(mode), path_(path) {}

  std::vector<StepGradient<Real>> run(const std::vector<const StepCotangent<Real>*>& out);

 private:
  bool adv_enabled() const { return path_ == GradientPath::Full || path_ == GradientPath::AdvOnly; }
  bool pres_enabled() const { return path_ == GradientPath::Full || path_ == GradientPath::POnly; }

  void solve_adv(const std::vector<Real>& in, std::vector<Real>& out) const {
    const int n = g_.nc();
    std::fill(out.begin(), out.end(), Real(0));
    for (int c = 0; c < g_.dim; ++c) {
      auto rep = transpose_solve<Real>(SolverKind::BiCGStab, rec_.C, std::span<const Real>(in).subspan(c * n, n),
                                       std::span<Real>(out).subspan(c * n, n), s_.config().adjoint_velocity_solver);
      if (!rep.converged) throw SolverError("adjoint predictor", "transpose solve did not converge");
    }
  }
  void solve_pres(const std::vector<Real>& in, std::vector<Real>& out) const {
    std::fill(out.begin(), out.end(), Real(0));
    auto rep = transpose_solve<Real>(SolverKind::CG, rec_.P, in, out, s_.config().adjoint_pressure_solver);
    if (!rep.converged) throw SolverError("adjoint pressure", "transpose solve did not converge");
  }

  // Maps per-lane right-hand sides through a solve according to the mode.
  void adv_lanes(std::vector<std::vector<Real>>& v) const;
  void pres_lanes(std::vector<std::vector<Real>>& v) const;

  const PisoSolver<Real>& s_;
  const Grid<Real>& g_;
  const StepRecord<Real>& rec_;
  Mode mode_;
  GradientPath path_;
};

template <class Real>
void Reverse<Real>::adv_lanes(std::vector<std::vector<Real>>& v) const {
  if (mode_ == Mode::Single) {
    if (adv_enabled())
      solve_adv(std::vector<Real>(v[0]), v[0]);
    else
      std::fill(v[0].begin(), v[0].end(), Real(0));
    return;
  }
  std::vector<Real> sum(v[0].size(), Real(0));
  for (auto& lane : v)
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += lane[i];
  for (auto& lane : v) std::fill(lane.begin(), lane.end(), Real(0));
  solve_adv(sum, v[kAdvection]);
}

template <class Real>
void Reverse<Real>::pres_lanes(std::vector<std::vector<Real>>& v) const {
  if (mode_ == Mode::Single) {
    if (pres_enabled())
      solve_pres(std::vector<Real>(v[0]), v[0]);
    else
      std::fill(v[0].begin(), v[0].end(), Real(0));
    return;
  }
  std::vector<Real> fresh(v[kBypass]);
  for (std::size_t i = 0; i < fresh.size(); ++i) fresh[i] += v[kPressure][i];
  solve_pres(fresh, v[kPressure]);
  solve_pres(std::vector<Real>(v[kAdvection]), v[kAdvection]);
  std::fill(v[kBypass].begin(), v[kBypass].end(), Real(0));
}

template <class Real>
std::vector<StepGradient<Real>> Reverse<Real>::run(const std::vector<const StepCotangent<Real>*>& out) {
  const auto& g = g_;
  const auto& rec = rec_;
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces;
  const std::size_t nv = static_cast<std::size_t>(d) * n;
  const int nnz = g.pattern->nnz();
  const int lanes = static_cast<int>(out.size());
  if (rec.correctors.empty()) throw std::invalid_argument("step record is empty");

  std::vector<Lane<Real>> L(lanes);
  for (int k = 0; k < lanes; ++k) {
    auto& l = L[k];
    l.gu = out[k]->u;
    l.gp = out[k]->p;
    l.dub = out[k]->ub;
    if (l.gu.size() != nv || l.gp.size() != static_cast<std::size_t>(n) ||
        l.dub.size() != static_cast<std::size_t>(d) * nb)
      throw std::invalid_argument("cotangent does not match the grid");
    l.dC.assign(nnz, Real(0));
    l.dP.assign(nnz, Real(0));
    l.drhs.assign(nv, Real(0));
    l.dA.assign(n, Real(0));
    l.dkappa.assign(n, Real(0));
    l.dnu.assign(n, Real(0));
    l.dS.assign(nv, Real(0));
    l.du_n.assign(nv, Real(0));
    l.dp_n.assign(n, Real(0));
    l.dub_pre.assign(static_cast<std::size_t>(d) * nb, Real(0));
  }
  std::vector<Real> kappa(n);
  for (int i = 0; i < n; ++i) kappa[i] = Real(1) / rec.A[i];

  std::vector<std::vector<Real>> dpf(lanes), db(lanes), ddh(lanes), dh(lanes);
  for (int corr = static_cast<int>(rec.correctors.size()) - 1; corr >= 0; --corr) {
    const auto& cr = rec.correctors[corr];
    const auto& its = cr.pressure_iterates;
    for (int k = 0; k < lanes; ++k) {
      dh[k].assign(nv, Real(0));
      ddh[k].assign(n, Real(0));
      dpf[k] = L[k].gp;
      correct_velocity_backward<Real>(g, cr.h, rec.A, its.back(), L[k].gu, dh[k], L[k].dA, dpf[k]);
    }
    for (int it = static_cast<int>(its.size()) - 2; it >= 0; --it) {
      db = dpf;
      pres_lanes(db);
      for (int k = 0; k < lanes; ++k) {
        accumulate_matrix_grad<Real>(*g.pattern, db[k], its[it + 1], L[k].dP);
        for (int i = 0; i < n; ++i) ddh[k][i] += db[k][i];
        std::fill(dpf[k].begin(), dpf[k].end(), Real(0));
        if (its.size() > 2) {
          std::vector<Real> neg(db[k]);
          for (auto& x : neg) x = -x;
          cross_term_backward<Real>(g, kappa, its[it], 1, false, neg, dpf[k], L[k].dkappa);
        }
      }
    }
    for (int k = 0; k < lanes; ++k) {
      if (corr == 0)
        for (int i = 0; i < n; ++i) L[k].dp_n[i] += dpf[k][i];
      else
        L[k].gp = dpf[k];
      divergence_backward<Real>(g, ddh[k], dh[k], L[k].dub);
      std::vector<Real> du_in(nv, Real(0));
      velocity_h_backward<Real>(g, rec.C, rec.nu, cr.u_in, cr.h, dh[k], L[k].dC, L[k].drhs, L[k].dnu, du_in);
      L[k].gu = std::move(du_in);
    }
  }

  for (int k = 0; k < lanes; ++k) {
    auto& l = L[k];
    for (int i = 0; i < n; ++i) l.dA[i] -= l.dkappa[i] * kappa[i] * kappa[i];
    pressure_matrix_backward<Real>(g, rec.A, l.dP, l.dA);
    for (int i = 0; i < n; ++i) l.dC[g.pattern->diag[i]] += l.dA[i];
  }

  // Predictor iterations, last to first.
  std::vector<std::vector<Real>> gq(lanes);
  for (int k = 0; k < lanes; ++k) gq[k] = L[k].gu;
  const auto& qs = rec.predictor_iterates;
  for (int it = static_cast<int>(qs.size()) - 2; it >= 0; --it) {
    auto drhs = gq;
    adv_lanes(drhs);
    for (int k = 0; k < lanes; ++k) {
      for (int c = 0; c < d; ++c)
        accumulate_matrix_grad<Real>(*g.pattern, std::span<const Real>(drhs[k]).subspan(c * n, n),
                                     std::span<const Real>(qs[it + 1]).subspan(c * n, n), L[k].dC);
      for (std::size_t i = 0; i < nv; ++i) L[k].drhs[i] += drhs[k][i];
      std::fill(gq[k].begin(), gq[k].end(), Real(0));
      cross_term_backward<Real>(g, rec.nu, qs[it], d, true, drhs[k], gq[k], L[k].dnu);
    }
  }

  std::vector<StepGradient<Real>> result(lanes);
  for (int k = 0; k < lanes; ++k) {
    auto& l = L[k];
    for (std::size_t i = 0; i < nv; ++i) l.du_n[i] += gq[k][i];
    assemble_predictor_backward<Real>(g, rec.u_n, rec.ub, rec.nu, rec.dt, l.dC, l.drhs, l.du_n, l.dub, l.dnu, l.dS);
    outflow_update_backward<Real>(g, rec.outflow, rec.ub_pre, l.dub, l.dub_pre, l.du_n);
    result[k].u = std::move(l.du_n);
    result[k].p = std::move(l.dp_n);
    result[k].ub = std::move(l.dub_pre);
    result[k].nu = std::move(l.dnu);
    result[k].S = std::move(l.dS);
  }
  return result;
}

}  // namespace

template <class Real>
StepGradient<Real> backward_step(const PisoSolver<Real>& solver, const StepRecord<Real>& record,
                                 const StepCotangent<Real>& out, GradientPath path) {
  Reverse<Real> r(solver, record, Mode::Single, path);
  return std::move(r.run({&out})[0]);
}

template <class Real>
std::array<StepGradient<Real>, 3> backward_step_channels(const PisoSolver<Real>& solver,
                                                         const StepRecord<Real>& record,
                                                         const std::array<StepCotangent<Real>, 3>& out) {
  Reverse<Real> r(solver, record, Mode::Tagged, GradientPath::Full);
  auto v = r.run({&out[0], &out[1], &out[2]});
  return {std::move(v[0]), std::move(v[1]), std::move(v[2])};
}

template <class Real>
double reduce_viscosity_gradient(const Grid<Real>& g, std::span<const Real> dnu_cell) {
  double s = 0;
  for (int i = 0; i < g.nc(); ++i) s += static_cast<double>(g.viscosity_scale[i]) * dnu_cell[i];
  return s;
}

template <class Real>
std::vector<Real> projected_divergence(const Grid<Real>& g, std::span<const Real> u, std::span<const Real> p) {
  const int n = g.nc();
  std::vector<Real> ub(static_cast<std::size_t>(g.dim) * g.num_bfaces, Real(0)), div(n);
  divergence<Real>(g, u, ub, div);
  std::vector<Real> ones(n, Real(1));
  CsrMatrix<Real> L(g.pattern);
  pressure_matrix<Real>(g, ones, L);
  return pressure_residual<Real>(g, L, div, ones, p);
}

template <class Real>
std::vector<Real> div_free_grad_mod(const Grid<Real>& g, std::span<const Real> candidate, Real lambda,
                                    const SolverSettings& settings, std::vector<Real>* projected,
                                    double* max_divergence) {
  const int n = g.nc(), d = g.dim;
  std::vector<Real> result(candidate.begin(), candidate.end());
  if (lambda == Real(0) && !projected && !max_divergence) return result;
  std::vector<Real> ub(static_cast<std::size_t>(d) * g.num_bfaces, Real(0)), div(n), ones(n, Real(1));
  divergence<Real>(g, candidate, ub, div);
  CsrMatrix<Real> L(g.pattern);
  pressure_matrix<Real>(g, ones, L);
  SolverSettings s = settings;
  s.zero_mean = true;
  s.absolute_cap = true;
  std::vector<Real> p(n, Real(0)), b(n);
  // Deferred cross terms are iterated until the projected field is divergence free.
  const auto max_abs_div = [&] {
    double m = 0;
    for (auto v : projected_divergence<Real>(g, candidate, p)) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
  };
  const int max_passes = g.orthogonal ? 1 : 200;
  for (int it = 0; it < max_passes; ++it) {
    b = div;
    if (!g.orthogonal) {
      std::vector<Real> y(n, Real(0));
      cross_term<Real>(g, ones, p, 1, false, y);
      for (int i = 0; i < n; ++i) b[i] -= y[i];
    }
    auto rep = cg_solve<Real>(L, b, p, s);
    if (!rep.converged) throw SolverError("div_free_grad_mod", "auxiliary pressure solve did not converge");
    if (!g.orthogonal && max_abs_div() <= s.tolerance) break;
    if (it + 1 == max_passes && !g.orthogonal)
      throw SolverError("div_free_grad_mod", "non-orthogonal correction did not converge");
  }
  std::vector<Real> zero(static_cast<std::size_t>(d) * n, Real(0)), grad(static_cast<std::size_t>(d) * n);
  correct_velocity<Real>(g, zero, ones, p, grad);  // grad = -T^T grad_xi p
  if (lambda != Real(0))
    for (std::size_t i = 0; i < result.size(); ++i) result[i] -= lambda * grad[i];
  if (projected) {
    projected->assign(candidate.begin(), candidate.end());
    for (std::size_t i = 0; i < projected->size(); ++i) (*projected)[i] += grad[i];
  }
  if (max_divergence) {
    const auto r = projected_divergence<Real>(g, candidate, p);
    double m = 0;
    for (auto v : r) m = std::max(m, std::abs(static_cast<double>(v)));
    *max_divergence = m;
  }
  return result;
}

GradcheckResult gradcheck(const std::string& stage, const std::function<Vec(const Vec&)>& forward,
                          const std::function<Vec(const Vec&)>& vjp, const Vec& x0, const Vec& cotangent,
                          double threshold) {
  GradcheckResult res;
  res.stage = stage;
  const Vec analytic = vjp(cotangent);
  const double eps0 = std::cbrt(std::numeric_limits<double>::epsilon());
  Vec x = x0;
  double max_err = 0, max_ref = 0;
  Vec fd(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double h = eps0 * std::max(1.0, std::abs(x0[i]));
    x[i] = x0[i] + h;
    const Vec fp = forward(x);
    x[i] = x0[i] - h;
    const Vec fm = forward(x);
    x[i] = x0[i];
    double s = 0;
    for (std::size_t k = 0; k < fp.size(); ++k) s += cotangent[k] * (fp[k] - fm[k]);
    fd[i] = s / (2 * h);
    max_ref = std::max(max_ref, std::abs(fd[i]));
  }
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (!std::isfinite(analytic[i]) || !std::isfinite(fd[i])) res.finite = false;
    max_err = std::max(max_err, std::abs(analytic[i] - fd[i]));
  }
  res.max_rel_error = max_err / (max_ref + 1e-12);
  res.passed = res.finite && res.max_rel_error <= threshold;
  return res;
}

std::string format_gradcheck(const std::vector<GradcheckResult>& results) {
  std::ostringstream os;
  os << "stage,max_rel_error,status\n";
  for (const auto& r : results)
    os << r.stage << ',' << std::scientific << std::setprecision(3) << r.max_rel_error << ','
       << (r.passed ? "pass" : "FAIL") << '\n';
  return os.str();
}

#define PISOFLOW_ADJOINT(Real)                                                                                     \
  template StepCotangent<Real> zero_cotangent<Real>(const Grid<Real>&);                                           \
  template StepGradient<Real> backward_step<Real>(const PisoSolver<Real>&, const StepRecord<Real>&,               \
                                                  const StepCotangent<Real>&, GradientPath);                      \
  template std::array<StepGradient<Real>, 3> backward_step_channels<Real>(                                        \
      const PisoSolver<Real>&, const StepRecord<Real>&, const std::array<StepCotangent<Real>, 3>&);               \
  template double reduce_viscosity_gradient<Real>(const Grid<Real>&, std::span<const Real>);                      \
  template std::vector<Real> projected_divergence<Real>(const Grid<Real>&, std::span<const Real>,                 \
                                                        std::span<const Real>);                                   \
  template std::vector<Real> div_free_grad_mod<Real>(const Grid<Real>&, std::span<const Real>, Real,              \
                                                     const SolverSettings&, std::vector<Real>*, double*);

PISOFLOW_ADJOINT(float)
PISOFLOW_ADJOINT(double)

}  // namespace pisoflow
