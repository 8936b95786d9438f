#include "pisoflow/piso.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace pisoflow {

std::string to_string(GradientPath p) {
  switch (p) {
    case GradientPath::Full: return "full";
    case GradientPath::AdvOnly: return "adv";
    case GradientPath::POnly: return "p";
    case GradientPath::None: return "none";
  }
  return "full";
}

GradientPath parse_gradient_path(const std::string& s) {
  if (s == "full") return GradientPath::Full;
  if (s == "adv" || s == "advonly") return GradientPath::AdvOnly;
  if (s == "p" || s == "ponly") return GradientPath::POnly;
  if (s == "none") return GradientPath::None;
  throw std::invalid_argument("unknown gradient path '" + s + "'");
}

std::string to_string(Precision p) { return p == Precision::Single ? "single" : "double"; }

Precision parse_precision(const std::string& s) {
  if (s == "single" || s == "float") return Precision::Single;
  if (s == "double") return Precision::Double;
  throw std::invalid_argument("unknown precision '" + s + "'");
}

void StepConfig::set_tolerance(double tol) {
  velocity_solver.tolerance = pressure_solver.tolerance = tol;
  adjoint_velocity_solver.tolerance = adjoint_pressure_solver.tolerance = tol;
}

void StepConfig::validate() const {
  if (correctors < 1) throw std::invalid_argument("corrector count must be at least 1");
  if (!(cfl > 0)) throw std::invalid_argument("CFL limit must be positive");
  if (!(dt_max > 0)) throw std::invalid_argument("dt_max must be positive");
  if (!(viscosity >= 0)) throw std::invalid_argument("viscosity must be non-negative");
}

template <class Real>
FlowState<Real> zero_state(const Grid<Real>& g) {
  FlowState<Real> s;
  s.u.assign(static_cast<std::size_t>(g.dim) * g.num_cells, Real(0));
  s.p.assign(g.num_cells, Real(0));
  s.ub.assign(static_cast<std::size_t>(g.dim) * g.num_bfaces, Real(0));
  return s;
}

template <class Real>
PisoSolver<Real>::PisoSolver(std::shared_ptr<const Grid<Real>> grid, StepConfig config)
    : grid_(std::move(grid)), config_(config) {
  config_.validate();
}

template <class Real>
int PisoSolver<Real>::non_orthogonal_iterations() const {
  if (grid_->orthogonal) return 0;
  if (config_.non_orthogonal_correctors >= 0) return config_.non_orthogonal_correctors;
  return grid_->max_skew > config_.skew_threshold ? 2 : 0;
}

template <class Real>
double PisoSolver<Real>::stable_dt(const FlowState<Real>& state) const {
  return adaptive_dt<Real>(*grid_, state.u, state.ub, config_.cfl, config_.dt_max);
}

namespace {

void check(const SolverReport& r, const std::string& stage) {
  if (!r.converged) {
    std::ostringstream os;
    os << "linear solve did not converge (residual " << std::scientific << std::setprecision(3) << r.residual
       << " after " << r.iterations << " iterations)";
    throw SolverError(stage, os.str());
  }
}

}  // namespace

template <class Real>
FlowState<Real> PisoSolver<Real>::step(const FlowState<Real>& state, std::span<const Real> S_in, Real dt,
                                       StepRecord<Real>* rec, StepReport* report,
                                       std::span<const Real> nu_cell) const {
  const auto& g = *grid_;
  const int n = g.nc(), d = g.dim;
  const std::size_t nv = static_cast<std::size_t>(d) * n;
  if (state.u.size() != nv || state.p.size() != static_cast<std::size_t>(n) ||
      state.ub.size() != static_cast<std::size_t>(d) * g.num_bfaces)
    throw std::invalid_argument("flow state does not match the grid");
  if (!(dt > 0)) throw std::invalid_argument("time step must be positive");
  const int nno = non_orthogonal_iterations();

  std::vector<Real> S(nv, Real(0));
  if (!S_in.empty()) {
    if (S_in.size() != nv) throw std::invalid_argument("source field does not match the grid");
    std::copy(S_in.begin(), S_in.end(), S.begin());
  }
  std::vector<Real> nu = nu_cell.empty() ? cell_viscosity<Real>(g, static_cast<Real>(config_.viscosity))
                                         : std::vector<Real>(nu_cell.begin(), nu_cell.end());

  FlowState<Real> out;
  out.ub.resize(state.ub.size());
  auto outflow = outflow_update<Real>(g, state.ub, state.u, dt, out.ub);

  CsrMatrix<Real> C(g.pattern);
  std::vector<Real> rhs(nv);
  assemble_predictor<Real>(g, state.u, out.ub, nu, S, dt, C, rhs);

  if (rec) {
    rec->dt = dt;
    rec->nu = nu;
    rec->u_n = state.u;
    rec->p_n = state.p;
    rec->ub_pre = state.ub;
    rec->ub = out.ub;
    rec->outflow = outflow;
    rec->predictor_iterates.assign(1, state.u);
    rec->correctors.clear();
  }

  // Predictor with deferred non-orthogonal terms.
  std::vector<Real> q = state.u, q_new(nv), b(nv);
  for (int it = 0; it <= nno; ++it) {
    b = rhs;
    cross_term<Real>(g, nu, q, d, true, b);
    q_new = q;
    for (int c = 0; c < d; ++c) {
      auto rep = linear_solve<Real>(SolverKind::BiCGStab, C, std::span<const Real>(b).subspan(c * n, n),
                                    std::span<Real>(q_new).subspan(c * n, n), config_.velocity_solver);
      if (report) report->velocity.push_back(rep);
      check(rep, "predictor (component " + std::to_string(c) + ")");
    }
    q.swap(q_new);
    if (rec) rec->predictor_iterates.push_back(q);
  }

  std::vector<Real> A(n);
  for (int i = 0; i < n; ++i) A[i] = C.values[g.pattern->diag[i]];
  CsrMatrix<Real> P(g.pattern);
  pressure_matrix<Real>(g, A, P);
  std::vector<Real> kappa(n);
  for (int i = 0; i < n; ++i) kappa[i] = Real(1) / A[i];

  std::vector<Real> u_in = q, h(nv), dh(n), p = state.p, p_prev, pb(n), u_out(nv);
  for (int corr = 0; corr < config_.correctors; ++corr) {
    velocity_h<Real>(g, C, rhs, nu, u_in, h);
    divergence<Real>(g, h, out.ub, dh);
    CorrectorRecord<Real>* cr = nullptr;
    if (rec) {
      rec->correctors.emplace_back();
      cr = &rec->correctors.back();
      cr->u_in = u_in;
      cr->h = h;
      cr->dh = dh;
      cr->pressure_iterates.push_back(p);
    }
    for (int it = 0; it <= nno; ++it) {
      pb = dh;
      if (nno > 0) {
        std::vector<Real> y(n, Real(0));
        cross_term<Real>(g, kappa, p, 1, false, y);
        for (int i = 0; i < n; ++i) pb[i] -= y[i];
      }
      auto rep = cg_solve<Real>(P, pb, p, config_.pressure_solver);
      if (report) report->pressure.push_back(rep);
      check(rep, "pressure corrector " + std::to_string(corr));
      if (cr) cr->pressure_iterates.push_back(p);
    }
    correct_velocity<Real>(g, h, A, p, u_out);
    u_in.swap(u_out);
  }

  if (report) {
    const auto r = pressure_residual<Real>(g, P, dh, A, p);
    double m = 0;
    for (auto v : r) m = std::max(m, std::abs(static_cast<double>(v)));
    report->max_divergence = m;
  }
  if (rec) {
    rec->C = std::move(C);
    rec->P = std::move(P);
    rec->rhs = std::move(rhs);
    rec->A = std::move(A);
  }
  out.u = std::move(u_in);
  out.p = std::move(p);
  out.t = state.t + dt;
  out.dt = dt;
  return out;
}

template FlowState<float> zero_state<float>(const Grid<float>&);
template FlowState<double> zero_state<double>(const Grid<double>&);
template class PisoSolver<float>;
template class PisoSolver<double>;

}  // namespace pisoflow
