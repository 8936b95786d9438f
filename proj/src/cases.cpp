#include "pisoflow/cases.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace pisoflow {

std::string to_string(InitKind k) {
  switch (k) {
    case InitKind::Rest: return "rest";
    case InitKind::Uniform: return "uniform";
    case InitKind::Gaussian: return "gaussian";
    case InitKind::Reichardt: return "reichardt";
  }
  return "rest";
}

InitKind parse_init_kind(const std::string& s) {
  for (auto k : {InitKind::Rest, InitKind::Uniform, InitKind::Gaussian, InitKind::Reichardt})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown initial condition '" + s + "'");
}

std::string to_string(Parameter p) {
  switch (p) {
    case Parameter::InitialScale: return "initial_scale";
    case Parameter::LidVelocity: return "lid_velocity";
    case Parameter::Viscosity: return "viscosity";
    case Parameter::Source: return "source";
  }
  return "initial_scale";
}

Parameter parse_parameter(const std::string& s) {
  for (auto p : {Parameter::InitialScale, Parameter::LidVelocity, Parameter::Viscosity, Parameter::Source})
    if (to_string(p) == s) return p;
  throw std::invalid_argument("unknown optimization parameter '" + s + "'");
}

void CaseConfig::validate() const {
  const auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  const auto& mp = mesh_params;
  if (mp.dim != 2 && mp.dim != 3) fail("mesh.dim must be 2 or 3");
  const bool per_unit = mesh == MeshKind::BackwardFacingStep || mesh == MeshKind::VortexStreet;
  for (int a = 0; a < mp.dim; ++a) {
    if (mp.resolution[a] < (per_unit ? 1 : 2)) fail("mesh.resolution is too small");
    if (!(mp.size[a] > 0)) fail("mesh.size must be positive");
  }
  if (!(mp.refinement_base >= 1)) fail("mesh.refinement_base must be at least 1");
  if (mp.lid_side < 0 || mp.lid_side >= 2 * mp.dim) fail("mesh.lid_side is not a side of the domain");
  if ((time.dt > 0) == (time.cfl > 0)) fail("exactly one of time.dt and time.cfl must be set");
  if ((time.steps > 0) == (time.horizon > 0)) fail("exactly one of time.steps and time.horizon must be set");
  if (time.dt < 0 || time.cfl < 0 || time.steps < 0 || time.horizon < 0 || time.steady_tolerance < 0)
    fail("time control values must be non-negative");
  if (!(fluid.delta > 0)) fail("fluid.delta must be positive");
  if (fluid.viscosity <= 0 && init.kind != InitKind::Reichardt)
    fail("fluid.viscosity must be positive unless derived from a Reichardt initialisation");
  if (init.kind == InitKind::Reichardt && !(init.re_tau > 0)) fail("init.re_tau must be positive");
  if (init.kind == InitKind::Gaussian && !(init.sigma_fraction > 0)) fail("init.sigma_fraction must be positive");
  const bool channel_like = mesh == MeshKind::Channel || mesh == MeshKind::Poiseuille;
  if ((fluid.dynamic_forcing || init.kind == InitKind::Reichardt) && !channel_like)
    fail("dynamic forcing and Reichardt initialisation need a channel mesh");
  if (stats.enabled && !channel_like) fail("statistics collection needs a channel mesh");
  if (stats.every < 1 || stats.start < 0) fail("stats.every must be >= 1 and stats.start >= 0");
  if (stats.max_order < 2) fail("stats.max_order must be at least 2");
  if (output.dump_every < 0) fail("output.dump_every must be non-negative");
  const bool has_outflow = mesh == MeshKind::BackwardFacingStep || mesh == MeshKind::VortexStreet;
  const bool at_rest = init.kind == InitKind::Rest ||
                       (init.kind == InitKind::Uniform && init.velocity == std::array<double, 3>{0, 0, 0});
  if (has_outflow && at_rest)
    fail("init.kind must give a moving start on meshes with an outflow boundary (e.g. uniform with init.velocity)");
  solver.validate();
  if (optimization) {
    const auto& o = *optimization;
    if (!(o.loss_scale > 0)) fail("optimize.loss_scale must be positive");
    if (!(o.learning_rate > 0)) fail("optimize.learning_rate must be positive");
    if (o.iterations < 1) fail("optimize.iterations must be at least 1");
    if (o.weight_decay < 0 || o.divergence_weight < 0) fail("optimize penalty weights must be non-negative");
    if (o.parameter == Parameter::LidVelocity && mesh != MeshKind::Cavity)
      fail("optimize.parameter lid_velocity needs a cavity mesh");
    if (o.parameter == Parameter::InitialScale && init.kind == InitKind::Rest)
      fail("optimize.parameter initial_scale needs a non-zero initial condition");
    if (o.parameter == Parameter::Viscosity && !(o.initial > 0 && o.target > 0))
      fail("viscosity values must be positive");
    if (fluid.dynamic_forcing) fail("optimization does not support dynamic forcing");
  }
}

double centerline_reynolds(double re_tau) { return std::pow(re_tau / 0.116, 1.0 / 0.88); }

double reichardt_u_plus(double y_plus) {
  constexpr double kappa = 0.41;
  return std::log1p(kappa * y_plus) / kappa +
         7.8 * (1.0 - std::exp(-y_plus / 11.0) - y_plus / 11.0 * std::exp(-y_plus / 3.0));
}

double poiseuille_analytic(double y, double G, double nu) { return G / (2.0 * nu) * y * (1.0 - y); }

double effective_viscosity(const CaseConfig& c) {
  if (c.fluid.viscosity > 0) return c.fluid.viscosity;
  return c.fluid.delta / centerline_reynolds(c.init.re_tau);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <class To, class From>
std::vector<To> convert(const std::vector<From>& v) {
  return std::vector<To>(v.begin(), v.end());
}

template <class To, class From>
FlowState<To> convert_state(const FlowState<From>& s) {
  FlowState<To> o;
  o.u = convert<To>(s.u);
  o.p = convert<To>(s.p);
  o.ub = convert<To>(s.ub);
  o.t = s.t;
  o.dt = s.dt;
  return o;
}

double bulk_velocity(std::span<const double> u, const Grid<double>& g) {
  double s = 0, v = 0;
  for (int i = 0; i < g.nc(); ++i) {
    s += u[i] * g.J[i];
    v += g.J[i];
  }
  return s / v;
}

// Divergence-free perturbation from stream functions damped to zero at both walls.
void add_channel_perturbation(const Domain& domain, const MeshParams& mp, double amplitude, std::uint64_t seed,
                              std::vector<double>& u) {
  const int n = domain.num_cells(), d = domain.dim();
  const auto centers = cell_centers(domain);
  const double lx = mp.size[0], ly = mp.size[1], lz = mp.size[2];
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0, 2 * std::numbers::pi), coef(-1, 1);
  struct Mode {
    int kx, kz;
    double a, px, pz;
  };
  std::vector<Mode> modes;
  for (int kx = 1; kx <= 3; ++kx)
    for (int kz = 0; kz <= (d == 3 ? 2 : 0); ++kz) modes.push_back({kx, kz, coef(rng), phase(rng), phase(rng)});
  for (int i = 0; i < n; ++i) {
    const double x = centers[i][0], y = centers[i][1], z = centers[i][2];
    const double s = y / ly;
    const double f = std::pow(4 * s * (1 - s), 2);
    const double df = 2 * 4 * s * (1 - s) * 4 * (1 - 2 * s) / ly;
    double du = 0, dv = 0, dw = 0;
    for (const auto& m : modes) {
      const double ax = 2 * std::numbers::pi * m.kx / lx;
      const double az = d == 3 ? 2 * std::numbers::pi * m.kz / lz : 0.0;
      const double cz = d == 3 ? std::cos(az * z + m.pz) : 1.0;
      // psi = a f(y) sin(ax x + px) cos(az z + pz): u = dpsi/dy, v = -dpsi/dx.
      const double sx = std::sin(ax * x + m.px), cx = std::cos(ax * x + m.px);
      du += m.a * df * sx * cz;
      dv -= m.a * f * ax * cx * cz;
      if (d == 3) {
        // chi = a f(y) cos(ax x + px) sin(az z + pz): v += dchi/dz, w = -dchi/dy.
        const double sz = std::sin(az * z + m.pz), czz = std::cos(az * z + m.pz);
        dv += m.a * f * cx * az * czz;
        dw -= m.a * df * cx * sz;
      }
    }
    u[i] += amplitude * du * ly / 4;
    u[n + i] += amplitude * dv * ly / 4;
    if (d == 3) u[2 * n + i] += amplitude * dw * ly / 4;
  }
}

}  // namespace

FlowState<double> initial_state(const CaseConfig& c, const Domain& domain, const Grid<double>& g) {
  auto s = zero_state(g);
  s.ub = initial_boundary_velocity<double>(domain);
  const int n = g.nc(), d = g.dim;
  const auto centers = cell_centers(domain);
  switch (c.init.kind) {
    case InitKind::Rest: break;
    case InitKind::Uniform:
      for (int k = 0; k < d; ++k) std::fill_n(s.u.begin() + static_cast<std::ptrdiff_t>(k) * n, n, c.init.velocity[k]);
      break;
    case InitKind::Gaussian: {
      std::array<double, 3> lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
      for (const auto& x : centers)
        for (int k = 0; k < d; ++k) lo[k] = std::min(lo[k], x[k]), hi[k] = std::max(hi[k], x[k]);
      const double width = c.mesh_params.size[0];
      const double sigma = c.init.sigma_fraction * width;
      for (int i = 0; i < n; ++i) {
        double r2 = 0;
        for (int k = 0; k < d; ++k) {
          const double dx = centers[i][k] - 0.5 * (lo[k] + hi[k]);
          r2 += dx * dx;
        }
        s.u[i] = c.init.amplitude * std::exp(-r2 / (2 * sigma * sigma));
      }
      break;
    }
    case InitKind::Reichardt: {
      const double nu = effective_viscosity(c), delta = c.fluid.delta;
      const double u_tau = c.init.re_tau * nu / delta;
      const double height = c.mesh_params.size[1];
      for (int i = 0; i < n; ++i) {
        const double y = centers[i][1];
        const double yw = std::max(0.0, std::min(y, height - y));
        s.u[i] = u_tau * reichardt_u_plus(yw * u_tau / nu);
      }
      double ucl = u_tau * reichardt_u_plus(0.5 * height * u_tau / nu);
      add_channel_perturbation(domain, c.mesh_params, c.init.amplitude * 0.1 * ucl, c.seed, s.u);
      break;
    }
  }
  return s;
}

double dynamic_forcing(const SliceMap& slices, std::span<const double> u, double nu, double delta) {
  const auto mom = slice_moments(slices, u);
  const int Y = slices.size();
  const double g_lo = mom.m(0, 0) / (slices.y[0] - slices.y_lower);
  const double g_hi = mom.m(0, Y - 1) / (slices.y_upper - slices.y[Y - 1]);
  return nu * (g_lo + g_hi) / (2.0 * delta);
}

std::vector<double> mirror_channel_field(const Domain& domain, std::span<const double> u) {
  if (domain.num_blocks() != 1) throw std::invalid_argument("mirroring needs a single-block channel");
  const auto& b = domain.block(0);
  const int d = domain.dim(), n = domain.num_cells();
  if (u.size() % n != 0) throw std::invalid_argument("field does not match the domain");
  const int comps = static_cast<int>(u.size() / n);
  const int nx = b.resolution[0], ny = b.resolution[1], nz = d == 3 ? b.resolution[2] : 1;
  std::vector<double> out(u.size());
  for (int c = 0; c < comps; ++c) {
    const double sign = (comps == d && c == 1) ? -1.0 : 1.0;
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
          const int src = i + nx * (j + ny * k), dst = i + nx * ((ny - 1 - j) + ny * k);
          out[static_cast<std::size_t>(c) * n + dst] = sign * u[static_cast<std::size_t>(c) * n + src];
        }
  }
  return out;
}

namespace {

struct Schedule {
  double dt = 0;
  int steps = 0;
};

// Fixed step size over the run; with a CFL target the step comes from the initial state.
template <class Real>
Schedule fixed_schedule(const TimeControl& t, const PisoSolver<Real>& solver, const FlowState<Real>& s0) {
  Schedule s;
  const double dt = t.dt > 0 ? t.dt : solver.stable_dt(s0);
  if (t.steps > 0) {
    s.steps = t.steps;
    s.dt = dt;
  } else {
    s.steps = std::max(1, static_cast<int>(std::ceil(t.horizon / dt - 1e-9)));
    s.dt = t.horizon / s.steps;
  }
  return s;
}

template <class Real>
CaseResult run_case_impl(const CaseConfig& cfg, const FlowState<double>* initial, const StepObserver& observer) {
  const Domain domain = generate_case_mesh(cfg.mesh, cfg.mesh_params);
  const auto gd = build_grid<double>(domain);
  auto grid = build_grid<Real>(domain);
  StepConfig sc = cfg.solver;
  const double nu = effective_viscosity(cfg);
  sc.viscosity = nu;
  if (cfg.time.cfl > 0) sc.cfl = cfg.time.cfl;
  PisoSolver<Real> solver(grid, sc);

  FlowState<double> s0 = initial ? *initial : initial_state(cfg, domain, *gd);
  if (s0.u.size() != static_cast<std::size_t>(gd->dim) * gd->nc() || s0.p.size() != static_cast<std::size_t>(gd->nc()) ||
      s0.ub.size() != static_cast<std::size_t>(gd->dim) * gd->num_bfaces)
    throw std::invalid_argument("initial state does not match the case mesh");
  FlowState<Real> state = convert_state<Real>(s0);

  const int n = grid->nc(), d = grid->dim;
  const bool channel_like = cfg.mesh == MeshKind::Channel || cfg.mesh == MeshKind::Poiseuille;
  std::optional<SliceMap> slices;
  if (cfg.fluid.dynamic_forcing || cfg.stats.enabled) slices = channel_slices(domain);
  std::optional<ChannelStatistics> stats;
  if (cfg.stats.enabled) stats.emplace(*slices, cfg.stats.max_order);

  std::vector<Real> S;
  const bool has_source = std::any_of(cfg.fluid.source.begin(), cfg.fluid.source.end(), [](double v) { return v != 0; });
  if (has_source || cfg.fluid.dynamic_forcing) {
    S.assign(static_cast<std::size_t>(d) * n, Real(0));
    for (int c = 0; c < d; ++c) std::fill_n(S.begin() + static_cast<std::ptrdiff_t>(c) * n, n, Real(cfg.fluid.source[c]));
  }

  CaseResult res;
  res.bulk_initial = res.bulk_min = res.bulk_max = bulk_velocity(s0.u, *gd);
  const bool adaptive = cfg.time.cfl > 0;
  Schedule sched;
  if (!adaptive) sched = fixed_schedule(cfg.time, solver, state);
  const double t_end = cfg.time.horizon > 0 ? state.t + cfg.time.horizon : 0.0;
  std::vector<double> ud;

  for (int step = 1;; ++step) {
    double dt;
    if (adaptive) {
      if (cfg.time.steps > 0 && step > cfg.time.steps) break;
      if (cfg.time.horizon > 0 && state.t >= t_end * (1 - 1e-12)) break;
      dt = solver.stable_dt(state);
      if (cfg.time.horizon > 0) dt = std::min(dt, t_end - state.t);
    } else {
      if (step > sched.steps) break;
      dt = sched.dt;
    }
    if (cfg.fluid.dynamic_forcing) {
      ud = convert<double>(state.u);
      const double G = dynamic_forcing(*slices, ud, nu, cfg.fluid.delta);
      std::fill_n(S.begin(), n, Real(cfg.fluid.source[0] + G));
    }
    StepReport report;
    FlowState<Real> next;
    try {
      next = solver.step(state, S, static_cast<Real>(dt), nullptr, &report);
    } catch (const SolverError& e) {
      throw SolverError("step " + std::to_string(step) + ": " + e.stage(), e.what());
    }
    double change = 0;
    bool finite = true;
    for (std::size_t i = 0; i < next.u.size(); ++i) {
      const double v = next.u[i];
      if (!std::isfinite(v)) finite = false;
      change = std::max(change, std::abs(v - static_cast<double>(state.u[i])));
    }
    if (!finite) throw SolverError("step " + std::to_string(step), "non-finite velocity");
    state = std::move(next);
    res.steps = step;
    res.max_divergence = std::max(res.max_divergence, report.max_divergence);
    ud = convert<double>(state.u);
    const double bulk = bulk_velocity(ud, *gd);
    res.bulk_min = std::min(res.bulk_min, bulk);
    res.bulk_max = std::max(res.bulk_max, bulk);
    if (stats && step >= cfg.stats.start && (step - cfg.stats.start) % cfg.stats.every == 0) stats->add_frame(ud);
    if (observer) observer(step, convert_state<double>(state), report);
    if (cfg.time.steady_tolerance > 0 && change <= cfg.time.steady_tolerance) {
      res.steady = true;
      break;
    }
  }
  res.state = convert_state<double>(state);
  res.bulk_final = bulk_velocity(res.state.u, *gd);
  if (stats && stats->frames() >= 2 && channel_like) res.profile = stats->profile(nu, cfg.fluid.delta);
  return res;
}

// Forward model of an optimization: parameter value -> final state, with records.
template <class Real>
class Rollout {
 public:
  explicit Rollout(const CaseConfig& cfg) : cfg_(cfg), opt_(*cfg.optimization) {
    MeshParams mp = cfg.mesh_params;
    if (opt_.parameter == Parameter::LidVelocity) mp.lid_velocity = 1.0;
    domain_ = generate_case_mesh(cfg.mesh, mp);
    gd_ = build_grid<double>(domain_);
    grid_ = build_grid<Real>(domain_);
    base_ = initial_state(cfg, domain_, *gd_);
    const int n = grid_->nc(), d = grid_->dim;
    source_.assign(static_cast<std::size_t>(d) * n, 0.0);
    for (int c = 0; c < d; ++c)
      std::fill_n(source_.begin() + static_cast<std::ptrdiff_t>(c) * n, n, cfg.fluid.source[c]);
  }

  const Grid<Real>& grid() const { return *grid_; }
  std::size_t size() const {
    return opt_.parameter == Parameter::Source ? source_.size() : 1;
  }

  std::vector<double> initial_parameter(double value) const {
    if (opt_.parameter != Parameter::Source) return {value};
    std::vector<double> th(source_);
    for (auto& v : th) v *= value;
    return th;
  }

  struct Result {
    FlowState<Real> state;
    std::vector<StepRecord<Real>> records;
    std::unique_ptr<PisoSolver<Real>> solver;
    double max_divergence = 0;
  };

  Result forward(const std::vector<double>& theta, bool record) const {
    StepConfig sc = cfg_.solver;
    sc.viscosity = effective_viscosity(cfg_);
    if (cfg_.time.cfl > 0) sc.cfl = cfg_.time.cfl;
    FlowState<double> s0 = base_;
    std::vector<Real> S;
    switch (opt_.parameter) {
      case Parameter::InitialScale:
        for (auto& v : s0.u) v *= theta[0];
        break;
      case Parameter::LidVelocity:
        for (auto& v : s0.ub) v *= theta[0];
        break;
      case Parameter::Viscosity: sc.viscosity = theta[0]; break;
      case Parameter::Source: S = convert<Real>(theta); break;
    }
    if (opt_.parameter != Parameter::Source && std::any_of(source_.begin(), source_.end(), [](double v) { return v != 0; }))
      S = convert<Real>(source_);
    Result r;
    r.solver = std::make_unique<PisoSolver<Real>>(grid_, sc);
    r.state = convert_state<Real>(s0);
    const Schedule sched = fixed_schedule(cfg_.time, *r.solver, r.state);
    if (record) r.records.resize(sched.steps);
    for (int k = 0; k < sched.steps; ++k) {
      StepReport report;
      r.state = r.solver->step(r.state, S, static_cast<Real>(sched.dt), record ? &r.records[k] : nullptr, &report);
      r.max_divergence = std::max(r.max_divergence, report.max_divergence);
    }
    return r;
  }

  // d loss / d theta for the cotangent of the final velocity.
  std::vector<double> backward(const Result& r, std::vector<Real> du) const {
    const auto& g = *grid_;
    StepCotangent<Real> cot = zero_cotangent(g);
    cot.u = std::move(du);
    std::vector<double> grad(size(), 0.0);
    for (std::size_t k = r.records.size(); k-- > 0;) {
      auto gr = backward_step(*r.solver, r.records[k], cot, opt_.path);
      if (opt_.parameter == Parameter::Viscosity)
        grad[0] += reduce_viscosity_gradient<Real>(g, gr.nu);
      else if (opt_.parameter == Parameter::Source)
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gr.S[i];
      cot.u = std::move(gr.u);
      cot.p = std::move(gr.p);
      cot.ub = std::move(gr.ub);
    }
    if (opt_.parameter == Parameter::InitialScale)
      for (std::size_t i = 0; i < base_.u.size(); ++i) grad[0] += static_cast<double>(cot.u[i]) * base_.u[i];
    if (opt_.parameter == Parameter::LidVelocity)
      for (std::size_t i = 0; i < base_.ub.size(); ++i) grad[0] += static_cast<double>(cot.ub[i]) * base_.ub[i];
    return grad;
  }

 private:
  CaseConfig cfg_;
  OptimizationSpec opt_;
  Domain domain_;
  std::shared_ptr<const Grid<double>> gd_;
  std::shared_ptr<const Grid<Real>> grid_;
  FlowState<double> base_;
  std::vector<double> source_;
};

template <class Real>
OptimizationTrace optimize_impl(const CaseConfig& cfg) {
  const auto& opt = *cfg.optimization;
  const double scale = opt.loss_scale;
  Rollout<Real> model(cfg);
  const auto t0 = Clock::now();
  const auto reference = model.forward(model.initial_parameter(opt.target), false).state.u;
  const auto rollout_loss = [&](const FlowState<Real>& s, std::vector<Real>* du) {
    double l = 0;
    if (du) du->assign(s.u.size(), Real(0));
    for (std::size_t i = 0; i < s.u.size(); ++i) {
      const double e = static_cast<double>(s.u[i]) - static_cast<double>(reference[i]);
      l += e * e;
      if (du) (*du)[i] = static_cast<Real>(2 * scale * e);
    }
    return scale * l;
  };
  const auto penalty = [&](const std::vector<double>& th) {
    double s = 0;
    for (double v : th) s += v * v;
    return opt.weight_decay * s;
  };
  const auto summary = [&](const std::vector<double>& th) {
    if (th.size() == 1) return th[0];
    double s = 0;
    const std::size_t n = th.size() / model.grid().dim;
    for (std::size_t i = 0; i < n; ++i) s += th[i];
    return s / static_cast<double>(n);
  };

  OptimizationTrace tr;
  std::vector<double> theta = model.initial_parameter(opt.initial);
  bool stopped = false;
  for (int it = 0; it < opt.iterations; ++it) {
    double loss;
    std::vector<double> grad;
    double tb = 0;
    try {
      auto r = model.forward(theta, true);
      tr.max_divergence = std::max(tr.max_divergence, r.max_divergence);
      std::vector<Real> du;
      loss = rollout_loss(r.state, &du) + penalty(theta);
      if (!std::isfinite(loss)) {
        tr.diverged = true;
        break;
      }
      const auto tb0 = Clock::now();
      grad = model.backward(r, std::move(du));
      tb = seconds_since(tb0);
    } catch (const SolverError&) {
      tr.diverged = true;
      break;
    }
    for (std::size_t i = 0; i < theta.size(); ++i) grad[i] += 2 * opt.weight_decay * theta[i];
    if (opt.parameter == Parameter::Source && opt.divergence_weight > 0)
      grad = div_free_grad_mod<double>(*build_grid<double>(generate_case_mesh(cfg.mesh, cfg.mesh_params)), grad,
                                       opt.divergence_weight, cfg.solver.pressure_solver);
    double gn = 0;
    bool finite = true;
    for (double v : grad) {
      gn += v * v;
      finite = finite && std::isfinite(v);
    }
    tr.loss.push_back(loss);
    tr.parameter.push_back(summary(theta));
    tr.grad_norm.push_back(std::sqrt(gn));
    tr.backward_time.push_back(tb);
    tr.wall_time.push_back(seconds_since(t0));
    if (!finite) {
      tr.diverged = true;
      break;
    }
    if (opt.stop_loss > 0 && loss < opt.stop_loss) {
      stopped = true;
      break;
    }
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= opt.learning_rate * grad[i];
  }
  tr.final_parameter = summary(theta);
  if (tr.diverged) {
    tr.final_loss = std::numeric_limits<double>::quiet_NaN();
  } else if (stopped) {
    tr.final_loss = tr.loss.back();
  } else {
    try {
      auto r = model.forward(theta, false);
      tr.max_divergence = std::max(tr.max_divergence, r.max_divergence);
      tr.final_loss = rollout_loss(r.state, nullptr) + penalty(theta);
      if (!std::isfinite(tr.final_loss)) tr.diverged = true;
    } catch (const SolverError&) {
      tr.diverged = true;
      tr.final_loss = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return tr;
}

}  // namespace

CaseResult run_case(const CaseConfig& config, const FlowState<double>* initial, const StepObserver& observer) {
  config.validate();
  if (config.solver.precision == Precision::Single) return run_case_impl<float>(config, initial, observer);
  return run_case_impl<double>(config, initial, observer);
}

OptimizationTrace optimize(const CaseConfig& config) {
  config.validate();
  if (!config.optimization) throw std::invalid_argument("config has no optimization block");
  if (config.solver.precision == Precision::Single) return optimize_impl<float>(config);
  return optimize_impl<double>(config);
}

CaseConfig scaling_task(int steps, GradientPath path, double learning_rate, int iterations) {
  CaseConfig c;
  c.name = "scaling";
  c.mesh = MeshKind::PeriodicBox;
  c.mesh_params.dim = 2;
  c.mesh_params.resolution = {18, 16, 1};
  c.mesh_params.size = {1.125, 1.0, 1.0};
  c.fluid.viscosity = 1e-4;
  c.init.kind = InitKind::Gaussian;
  c.init.amplitude = 1.0;
  c.init.sigma_fraction = 0.125;
  c.time.dt = 0.05;
  c.time.steps = steps;
  OptimizationSpec o;
  o.parameter = Parameter::InitialScale;
  o.initial = 0.5;
  o.target = 1.0;
  o.learning_rate = learning_rate;
  o.iterations = iterations;
  o.path = path;
  c.optimization = o;
  return c;
}

CaseConfig lid_task(Parameter parameter) {
  if (parameter != Parameter::LidVelocity && parameter != Parameter::Viscosity)
    throw std::invalid_argument("lid task optimizes the lid velocity or the viscosity");
  CaseConfig c;
  c.name = parameter == Parameter::LidVelocity ? "lid_velocity" : "viscosity";
  c.mesh = MeshKind::Cavity;
  c.mesh_params.dim = 2;
  c.mesh_params.resolution = {32, 32, 1};
  c.mesh_params.lid_side = 2;
  c.mesh_params.lid_velocity = 0.2;
  c.fluid.viscosity = 0.001;
  c.time.cfl = 8.5;
  c.time.horizon = 10.0;
  c.solver.dt_max = 10.0;
  OptimizationSpec o;
  o.parameter = parameter;
  o.iterations = 100;
  if (parameter == Parameter::LidVelocity) {
    o.initial = 1.0;
    o.target = 0.2;
    o.loss_scale = 0.25;
    o.learning_rate = 6e-2;
  } else {
    o.initial = 0.005;
    o.target = 0.001;
    o.loss_scale = 0.25;
    o.learning_rate = 2e-5;
  }
  c.optimization = o;
  return c;
}

int configured_threads() {
  const char* env = std::getenv("PISOFLOW_NUM_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw std::invalid_argument("PISOFLOW_NUM_THREADS must be a positive integer");
  return static_cast<int>(std::min<long>(v, 256));
}

std::vector<AblationEntry> path_ablation(const std::vector<GradientPath>& paths, const std::vector<int>& steps,
                                         double learning_rate, int iterations, double threshold) {
  std::vector<AblationEntry> out;
  for (int n : steps)
    for (auto p : paths) {
      AblationEntry e;
      e.path = p;
      e.steps = n;
      e.learning_rate = learning_rate;
      out.push_back(e);
    }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  const auto worker = [&] {
    for (std::size_t i; (i = next++) < out.size();) {
      try {
        auto& e = out[i];
        e.trace = optimize(scaling_task(e.steps, e.path, e.learning_rate, iterations));
        e.min_loss = e.trace.final_loss;
        for (std::size_t k = 0; k < e.trace.size(); ++k) {
          e.min_loss = std::isfinite(e.min_loss) ? std::min(e.min_loss, e.trace.loss[k]) : e.trace.loss[k];
          if (e.time_to_threshold < 0 && e.trace.loss[k] < threshold) e.time_to_threshold = e.trace.wall_time[k];
        }
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  const int threads = std::min<int>(configured_threads(), static_cast<int>(out.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  return out;
}

std::vector<double> backward_timing(int resolution, const std::vector<GradientPath>& paths, int repeats) {
  if (resolution < 2 || repeats < 1) throw std::invalid_argument("invalid timing parameters");
  MeshParams mp;
  mp.resolution = {resolution, resolution, 1};
  const Domain domain = generate_case_mesh(MeshKind::Cavity, mp);
  auto grid = build_grid<double>(domain);
  StepConfig sc;
  sc.viscosity = 0.01;
  PisoSolver<double> solver(grid, sc);
  auto state = zero_state(*grid);
  state.ub = initial_boundary_velocity<double>(domain);
  StepRecord<double> rec;
  for (int k = 0; k < 5; ++k) state = solver.step(state, {}, solver.stable_dt(state), k == 4 ? &rec : nullptr);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  auto cot = zero_cotangent(*grid);
  for (auto& v : cot.u) v = nd(rng);
  std::vector<std::vector<double>> samples(paths.size());
  for (int r = 0; r < repeats; ++r)
    for (std::size_t k = 0; k < paths.size(); ++k) {
      const auto t0 = Clock::now();
      auto g = backward_step(solver, rec, cot, paths[k]);
      samples[k].push_back(seconds_since(t0));
    }
  std::vector<double> med;
  for (auto& s : samples) {
    std::sort(s.begin(), s.end());
    med.push_back(s.size() % 2 ? s[s.size() / 2] : 0.5 * (s[s.size() / 2 - 1] + s[s.size() / 2]));
  }
  return med;
}

}  // namespace pisoflow
