#include "pisoflow/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace pisoflow {

namespace {

using Vec = std::vector<double>;
using CVec = std::span<const double>;

Vec cat(std::initializer_list<const Vec*> parts) {
  Vec v;
  for (const Vec* p : parts) v.insert(v.end(), p->begin(), p->end());
  return v;
}

std::vector<Vec> split(const Vec& x, std::initializer_list<std::size_t> sizes) {
  std::vector<Vec> out;
  std::size_t o = 0;
  for (std::size_t s : sizes) {
    out.emplace_back(x.begin() + o, x.begin() + o + s);
    o += s;
  }
  return out;
}

double max_abs(const Vec& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

class Random {
 public:
  explicit Random(std::uint64_t seed) : rng_(seed) {}
  Vec operator()(std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Vec v(n);
    for (auto& x : v) x = d(rng_);
    return v;
  }

 private:
  std::mt19937_64 rng_;
};

void transform_vertices(BlockSpec& b, const std::function<void(double*)>& f) {
  for (std::size_t v = 0; v < b.vertices.size(); v += b.dim) f(&b.vertices[v]);
}

void walls(BlockSpec& b) {
  for (int s = 0; s < 2 * b.dim; ++s) set_dirichlet(b, s, {0, 0, 0});
}

// Random but admissible flow inputs for a domain.
struct Inputs {
  Vec u, p, ub, nu, S;
};

Inputs random_inputs(const Grid<double>& g, const Domain& dom, Random& rnd) {
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces;
  Inputs in;
  in.u = rnd(static_cast<std::size_t>(d) * n, -0.5, 0.5);
  in.p = rnd(n, -0.5, 0.5);
  in.ub = initial_boundary_velocity<double>(dom);
  const auto noise = rnd(static_cast<std::size_t>(d) * nb, -0.2, 0.2);
  for (std::size_t i = 0; i < in.ub.size(); ++i) in.ub[i] += noise[i];
  bool outflow = false;
  for (const auto& bf : g.bfaces) outflow = outflow || bf.kind == FaceKind::Outflow;
  if (outflow)
    for (int i = 0; i < n; ++i) in.u[i] += 1.0;
  in.nu = rnd(n, 0.02, 0.1);
  in.S = rnd(static_cast<std::size_t>(d) * n, -0.5, 0.5);
  return in;
}

double stable_step(const Grid<double>& g, const Inputs& in) {
  return adaptive_dt<double>(g, in.u, in.ub, 0.4, 0.2);
}

}  // namespace

StepConfig verification_config() {
  StepConfig c;
  c.set_tolerance(1e-13);
  c.velocity_solver.max_iterations = c.adjoint_velocity_solver.max_iterations = 5000;
  c.pressure_solver.max_iterations = c.adjoint_pressure_solver.max_iterations = 20000;
  return c;
}

std::vector<NamedDomain> gradcheck_domains(std::uint64_t seed) {
  (void)seed;
  std::vector<NamedDomain> out;

  BlockSpec d6 = make_block(2, {uniform_coords(6, 0, 1), uniform_coords(6, 0, 1), {}});
  apply_rotational_distortion(d6, 0.15);
  walls(d6);
  out.push_back({"distorted6", Domain({d6})});

  std::vector<BlockSpec> two{make_block(2, {uniform_coords(4, 0, 1), uniform_coords(4, 0, 1), {}}),
                             make_block(2, {refined_coords_one(4, 1, 2, 1.3), uniform_coords(4, 0, 1), {}})};
  walls(two[0]);
  walls(two[1]);
  connect_blocks(two, 0, 1, 1, 0);
  out.push_back({"two_block", Domain(two)});

  // Block 1 is turned by 90 degrees: its -y side meets block 0's +x side and
  // its first axis runs along -y.
  std::vector<BlockSpec> fl(2);
  fl[0] = make_block(2, {uniform_coords(3, 0, 3), uniform_coords(2, 0, 2), {}});
  fl[1].dim = 2;
  fl[1].resolution = {2, 3, 1};
  for (int j = 0; j <= 3; ++j)
    for (int i = 0; i <= 2; ++i) {
      fl[1].vertices.push_back(3.0 + j + 0.1 * i * j);
      fl[1].vertices.push_back(2.0 - i);
    }
  walls(fl[0]);
  walls(fl[1]);
  fl[0].boundaries[1] = Connection{1, 2, {1, 0, 2}, {false, true, false}};
  fl[1].boundaries[2] = Connection{0, 1, {1, 0, 2}, {true, false, false}};
  out.push_back({"flipped", Domain(fl)});

  BlockSpec rot = make_block(2, {uniform_coords(5, 0, 1), uniform_coords(4, 0, 0.8), {}});
  transform_vertices(rot, [](double* v) {
    const double x = v[0] + 0.25 * v[1], y = v[1], th = 0.5;
    v[0] = std::cos(th) * x - std::sin(th) * y;
    v[1] = std::sin(th) * x + std::cos(th) * y;
  });
  walls(rot);
  out.push_back({"rotated", Domain({rot})});

  BlockSpec b3 = make_block(3, {uniform_coords(4, 0, 1), uniform_coords(4, 0, 1), uniform_coords(4, 0, 1)});
  transform_vertices(b3, [](double* v) { v[0] += 0.1 * v[1] + 0.15 * v[2]; });
  walls(b3);
  out.push_back({"box3d", Domain({b3})});

  BlockSpec strip = make_block(2, {uniform_coords(6, 0, 3), uniform_coords(3, 0, 1.5), {}});
  walls(strip);
  set_dirichlet(strip, 0, {1, 0, 0});
  strip.boundaries[1] = AdvectiveOutflow{0.6, std::vector<double>(strip.num_faces(1) * 2, 0.0)};
  auto& ov = std::get<AdvectiveOutflow>(strip.boundaries[1]).velocity;
  for (std::size_t f = 0; f < ov.size(); f += 2) ov[f] = 1.0;
  out.push_back({"outflow", Domain({strip})});
  return out;
}

std::vector<GradcheckResult> kernel_gradchecks(const NamedDomain& nd, std::uint64_t seed, double threshold) {
  const auto gp = build_grid<double>(nd.domain);
  const auto& g = *gp;
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces, nnz = g.pattern->nnz();
  const std::size_t nv = static_cast<std::size_t>(d) * n, nbv = static_cast<std::size_t>(d) * nb;
  Random rnd(seed);
  const Inputs in = random_inputs(g, nd.domain, rnd);
  const double dt = stable_step(g, in);
  std::vector<GradcheckResult> res;
  const auto check = [&](const std::string& stage, const std::function<Vec(const Vec&)>& fwd,
                         const std::function<Vec(const Vec&)>& vjp, const Vec& x0) {
    const Vec cot = rnd(fwd(x0).size(), -1, 1);
    res.push_back(gradcheck(nd.name + "/" + stage, fwd, vjp, x0, cot, threshold));
  };

  check(
      "face_flux", [&](const Vec& x) { Vec U(nv); face_flux<double>(g, x, U); return U; },
      [&](const Vec& c) { Vec du(nv, 0.0); face_flux_backward<double>(g, c, du); return du; }, in.u);

  check(
      "assemble_predictor",
      [&](const Vec& x) {
        const auto v = split(x, {nv, nbv, std::size_t(n), nv});
        CsrMatrix<double> C;
        Vec rhs(nv);
        assemble_predictor<double>(g, v[0], v[1], v[2], v[3], dt, C, rhs);
        return cat({&C.values, &rhs});
      },
      [&](const Vec& c) {
        const auto v = split(c, {std::size_t(nnz), nv});
        Vec du(nv, 0.0), dub(nbv, 0.0), dnu(n, 0.0), dS(nv, 0.0);
        assemble_predictor_backward<double>(g, in.u, in.ub, in.nu, dt, v[0], v[1], du, dub, dnu, dS);
        return cat({&du, &dub, &dnu, &dS});
      },
      cat({&in.u, &in.ub, &in.nu, &in.S}));

  for (const bool velocity : {true, false}) {
    const int nc = velocity ? d : 1;
    const std::size_t nq = static_cast<std::size_t>(nc) * n;
    const Vec kappa = rnd(n, 0.5, 2.0), q = rnd(nq, -1, 1);
    check(
        velocity ? "cross_term_velocity" : "cross_term_pressure",
        [&](const Vec& x) {
          const auto v = split(x, {std::size_t(n), nq});
          Vec out(nq, 0.0);
          cross_term<double>(g, v[0], v[1], nc, velocity, out);
          return out;
        },
        [&](const Vec& c) {
          Vec dq(nq, 0.0), dk(n, 0.0);
          cross_term_backward<double>(g, kappa, q, nc, velocity, c, dq, dk);
          return cat({&dk, &dq});
        },
        cat({&kappa, &q}));
  }

  const Vec A = rnd(n, 0.5, 2.0);
  check(
      "pressure_matrix",
      [&](const Vec& x) {
        CsrMatrix<double> P;
        pressure_matrix<double>(g, x, P);
        return P.values;
      },
      [&](const Vec& c) { Vec dA(n, 0.0); pressure_matrix_backward<double>(g, A, c, dA); return dA; }, A);

  CsrMatrix<double> C0;
  Vec rhs0(nv);
  assemble_predictor<double>(g, in.u, in.ub, in.nu, in.S, dt, C0, rhs0);
  const Vec u_in = rnd(nv, -1, 1);
  Vec h0(nv);
  velocity_h<double>(g, C0, rhs0, in.nu, u_in, h0);
  check(
      "velocity_h",
      [&](const Vec& x) {
        const auto v = split(x, {std::size_t(nnz), nv, std::size_t(n), nv});
        CsrMatrix<double> C(g.pattern);
        C.values = v[0];
        Vec h(nv);
        velocity_h<double>(g, C, v[1], v[2], v[3], h);
        return h;
      },
      [&](const Vec& c) {
        Vec dC(nnz, 0.0), drhs(nv, 0.0), dnu(n, 0.0), du(nv, 0.0);
        velocity_h_backward<double>(g, C0, in.nu, u_in, h0, c, dC, drhs, dnu, du);
        return cat({&dC, &drhs, &dnu, &du});
      },
      cat({&C0.values, &rhs0, &in.nu, &u_in}));

  check(
      "divergence",
      [&](const Vec& x) {
        const auto v = split(x, {nv, nbv});
        Vec out(n);
        divergence<double>(g, v[0], v[1], out);
        return out;
      },
      [&](const Vec& c) {
        Vec dh(nv, 0.0), dub(nbv, 0.0);
        divergence_backward<double>(g, c, dh, dub);
        return cat({&dh, &dub});
      },
      cat({&h0, &in.ub}));

  check(
      "correct_velocity",
      [&](const Vec& x) {
        const auto v = split(x, {nv, std::size_t(n), std::size_t(n)});
        Vec u(nv);
        correct_velocity<double>(g, v[0], v[1], v[2], u);
        return u;
      },
      [&](const Vec& c) {
        Vec dh(nv, 0.0), dA(n, 0.0), dp(n, 0.0);
        correct_velocity_backward<double>(g, h0, A, in.p, c, dh, dA, dp);
        return cat({&dh, &dA, &dp});
      },
      cat({&h0, &A, &in.p}));

  Vec ub_tmp(nbv);
  const auto rec0 = outflow_update<double>(g, in.ub, in.u, dt, ub_tmp);
  check(
      "outflow_update",
      [&](const Vec& x) {
        const auto v = split(x, {nbv, nv});
        Vec out(nbv);
        outflow_update<double>(g, v[0], v[1], dt, out);
        return out;
      },
      [&](const Vec& c) {
        Vec dub(nbv, 0.0), du(nv, 0.0);
        outflow_update_backward<double>(g, rec0, in.ub, c, dub, du);
        return cat({&dub, &du});
      },
      cat({&in.ub, &in.u}));

  const StepConfig cfg = verification_config();
  const Vec b0 = rnd(n, -1, 1);
  Vec x0(n, 0.0);
  bicgstab_solve<double>(C0, b0, x0, cfg.velocity_solver);
  check(
      "predictor_solve",
      [&](const Vec& x) {
        const auto v = split(x, {std::size_t(nnz), std::size_t(n)});
        CsrMatrix<double> C(g.pattern);
        C.values = v[0];
        Vec sol(n, 0.0);
        bicgstab_solve<double>(C, v[1], sol, cfg.velocity_solver);
        return sol;
      },
      [&](const Vec& c) {
        Vec gb(n, 0.0), dC(nnz, 0.0);
        transpose_solve<double>(SolverKind::BiCGStab, C0, c, gb, cfg.adjoint_velocity_solver);
        accumulate_matrix_grad<double>(*g.pattern, gb, x0, dC);
        return cat({&dC, &gb});
      },
      cat({&C0.values, &b0}));

  CsrMatrix<double> P0;
  pressure_matrix<double>(g, A, P0);
  Vec p0(n, 0.0);
  cg_solve<double>(P0, b0, p0, cfg.pressure_solver);
  check(
      "pressure_solve",
      [&](const Vec& x) {
        const auto v = split(x, {std::size_t(n), std::size_t(n)});
        CsrMatrix<double> P;
        pressure_matrix<double>(g, v[0], P);
        Vec sol(n, 0.0);
        cg_solve<double>(P, v[1], sol, cfg.pressure_solver);
        return sol;
      },
      [&](const Vec& c) {
        Vec gb(n, 0.0), dP(nnz, 0.0), dA(n, 0.0);
        transpose_solve<double>(SolverKind::CG, P0, c, gb, cfg.adjoint_pressure_solver);
        accumulate_matrix_grad<double>(*g.pattern, gb, p0, dP);
        pressure_matrix_backward<double>(g, A, dP, dA);
        return cat({&dA, &gb});
      },
      cat({&A, &b0}));
  return res;
}

std::vector<GradcheckResult> rollout_gradchecks(const NamedDomain& nd, int steps, std::uint64_t seed,
                                                double threshold) {
  const auto gp = build_grid<double>(nd.domain);
  const auto& g = *gp;
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces;
  const std::size_t nv = static_cast<std::size_t>(d) * n, nbv = static_cast<std::size_t>(d) * nb;
  Random rnd(seed);
  const Inputs in = random_inputs(g, nd.domain, rnd);
  const double dt = stable_step(g, in);
  PisoSolver<double> solver(gp, verification_config());
  std::vector<GradcheckResult> res;

  const auto state_of = [&](const Vec& u, const Vec& p, const Vec& ub) {
    FlowState<double> s;
    s.u = u;
    s.p = p;
    s.ub = ub;
    return s;
  };

  if (steps == 1) {
    StepRecord<double> rec;
    solver.step(state_of(in.u, in.p, in.ub), in.S, dt, &rec, nullptr, in.nu);
    const auto fwd = [&](const Vec& x) {
      const auto v = split(x, {nv, std::size_t(n), nbv, std::size_t(n), nv});
      const auto s = solver.step(state_of(v[0], v[1], v[2]), v[4], dt, nullptr, nullptr, v[3]);
      return cat({&s.u, &s.p, &s.ub});
    };
    const auto vjp = [&](const Vec& c) {
      const auto v = split(c, {nv, std::size_t(n), nbv});
      const auto gr = backward_step(solver, rec, StepCotangent<double>{v[0], v[1], v[2]}, GradientPath::Full);
      return cat({&gr.u, &gr.p, &gr.ub, &gr.nu, &gr.S});
    };
    const Vec x0 = cat({&in.u, &in.p, &in.ub, &in.nu, &in.S});
    res.push_back(gradcheck(nd.name + "/step", fwd, vjp, x0, rnd(fwd(x0).size(), -1, 1), threshold));
  }

  // Rollout in the initial state, the source and the global viscosity.
  const double nu0 = 0.05;
  const auto run = [&](const Vec& x, std::vector<StepRecord<double>>* recs) {
    const auto v = split(x, {nv, nbv, nv, 1});
    const Vec nu_cell = cell_viscosity<double>(g, v[3][0]);
    auto s = state_of(v[0], in.p, v[1]);
    for (int k = 0; k < steps; ++k) {
      StepRecord<double>* r = nullptr;
      if (recs) r = &recs->emplace_back();
      s = solver.step(s, v[2], dt, r, nullptr, nu_cell);
    }
    return s;
  };
  const Vec nu_vec{nu0};
  const Vec x0 = cat({&in.u, &in.ub, &in.S, &nu_vec});
  std::vector<StepRecord<double>> recs;
  recs.reserve(steps);
  run(x0, &recs);
  const auto fwd = [&](const Vec& x) {
    const auto s = run(x, nullptr);
    return cat({&s.u, &s.p, &s.ub});
  };
  const auto vjp = [&](const Vec& c) {
    const auto v = split(c, {nv, std::size_t(n), nbv});
    StepCotangent<double> cot{v[0], v[1], v[2]};
    Vec dS(nv, 0.0);
    double dnu = 0;
    for (int k = steps - 1; k >= 0; --k) {
      const auto gr = backward_step(solver, recs[k], cot, GradientPath::Full);
      for (std::size_t i = 0; i < nv; ++i) dS[i] += gr.S[i];
      dnu += reduce_viscosity_gradient<double>(g, gr.nu);
      cot = StepCotangent<double>{gr.u, gr.p, gr.ub};
    }
    const Vec dn{dnu};
    return cat({&cot.u, &cot.ub, &dS, &dn});
  };
  res.push_back(gradcheck(nd.name + "/rollout" + std::to_string(steps), fwd, vjp, x0, rnd(fwd(x0).size(), -1, 1),
                          threshold));
  return res;
}

std::vector<IdentityCheck> adjoint_identity_checks(const NamedDomain& nd, std::uint64_t seed, double threshold) {
  const auto gp = build_grid<double>(nd.domain);
  const auto& g = *gp;
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces;
  Random rnd(seed);
  const Inputs in = random_inputs(g, nd.domain, rnd);
  StepConfig cfg = verification_config();
  cfg.set_tolerance(1e-14);
  PisoSolver<double> solver(gp, cfg);
  StepRecord<double> rec;
  FlowState<double> s;
  s.u = in.u;
  s.p = in.p;
  s.ub = in.ub;
  solver.step(s, in.S, stable_step(g, in), &rec, nullptr, in.nu);

  std::vector<IdentityCheck> out;
  const auto record = [&](const std::string& stage, double lhs, double rhs) {
    const double rel = std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300});
    out.push_back({nd.name + "/" + stage, rel, rel <= threshold});
  };
  {
    const Vec v = rnd(n, -1, 1), gx = rnd(n, -1, 1);
    Vec jv(n, 0.0), jtg(n, 0.0);
    bicgstab_solve<double>(rec.C, v, jv, cfg.velocity_solver);
    transpose_solve<double>(SolverKind::BiCGStab, rec.C, gx, jtg, cfg.adjoint_velocity_solver);
    record("predictor_solve", dot(gx, jv), dot(jtg, v));
  }
  {
    const Vec v = rnd(n, -1, 1), gx = rnd(n, -1, 1);
    Vec jv(n, 0.0), jtg(n, 0.0);
    cg_solve<double>(rec.P, v, jv, cfg.pressure_solver);
    transpose_solve<double>(SolverKind::CG, rec.P, gx, jtg, cfg.adjoint_pressure_solver);
    record("pressure_solve", dot(gx, jv), dot(jtg, v));
  }
  {
    const std::size_t nv = static_cast<std::size_t>(d) * n, nbv = static_cast<std::size_t>(d) * nb;
    const Vec h = rnd(nv, -1, 1), ub = rnd(nbv, -1, 1), gx = rnd(n, -1, 1);
    Vec jv(n), dh(nv, 0.0), dub(nbv, 0.0);
    divergence<double>(g, h, ub, jv);
    divergence_backward<double>(g, gx, dh, dub);
    record("divergence", dot(gx, jv), dot(dh, h) + dot(dub, ub));
  }
  return out;
}

AdditivityReport path_additivity(const NamedDomain& nd, int steps, std::uint64_t seed) {
  const auto gp = build_grid<double>(nd.domain);
  const auto& g = *gp;
  Random rnd(seed);
  const Inputs in = random_inputs(g, nd.domain, rnd);
  const double dt = stable_step(g, in);
  StepConfig cfg = verification_config();
  cfg.set_tolerance(1e-14);
  PisoSolver<double> solver(gp, cfg);
  std::vector<StepRecord<double>> recs(steps);
  FlowState<double> s;
  s.u = in.u;
  s.p = in.p;
  s.ub = in.ub;
  for (int k = 0; k < steps; ++k) s = solver.step(s, in.S, dt, &recs[k], nullptr, in.nu);
  const StepCotangent<double> seed_cot{rnd(s.u.size(), -1, 1), rnd(s.p.size(), -1, 1), rnd(s.ub.size(), -1, 1)};

  // Flattened gradient with respect to the initial state and the accumulated parameters.
  const auto flatten = [](const StepCotangent<double>& c, const Vec& nu, const Vec& S) {
    return cat({&c.u, &c.p, &c.ub, &nu, &S});
  };
  const auto single = [&](GradientPath path) {
    StepCotangent<double> cot = seed_cot;
    Vec nu(g.nc(), 0.0), S(in.S.size(), 0.0);
    for (int k = steps - 1; k >= 0; --k) {
      const auto gr = backward_step(solver, recs[k], cot, path);
      for (std::size_t i = 0; i < nu.size(); ++i) nu[i] += gr.nu[i];
      for (std::size_t i = 0; i < S.size(); ++i) S[i] += gr.S[i];
      cot = StepCotangent<double>{gr.u, gr.p, gr.ub};
    }
    return flatten(cot, nu, S);
  };
  const Vec full = single(GradientPath::Full), none = single(GradientPath::None), ponly = single(GradientPath::POnly);

  std::array<StepCotangent<double>, 3> cots;
  for (auto& c : cots) c = zero_cotangent(g);
  cots[kBypass] = seed_cot;
  std::array<Vec, 3> nu, S;
  for (int c = 0; c < 3; ++c) {
    nu[c].assign(g.nc(), 0.0);
    S[c].assign(in.S.size(), 0.0);
  }
  for (int k = steps - 1; k >= 0; --k) {
    const auto gr = backward_step_channels(solver, recs[k], cots);
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < nu[c].size(); ++i) nu[c][i] += gr[c].nu[i];
      for (std::size_t i = 0; i < S[c].size(); ++i) S[c][i] += gr[c].S[i];
      cots[c] = StepCotangent<double>{gr[c].u, gr[c].p, gr[c].ub};
    }
  }
  std::array<Vec, 3> ch;
  for (int c = 0; c < 3; ++c) ch[c] = flatten(cots[c], nu[c], S[c]);

  const auto rel = [](const Vec& a, const Vec& b) {
    Vec diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    return max_abs(diff) / std::max(max_abs(a), 1e-300);
  };
  AdditivityReport r;
  Vec sum(full.size()), bp(full.size());
  const Vec p_increment = [&] {
    Vec v(full.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = ponly[i] - none[i];
    return v;
  }();
  for (std::size_t i = 0; i < sum.size(); ++i) {
    sum[i] = none[i] + ch[kAdvection][i] + p_increment[i];
    bp[i] = ch[kBypass][i] + ch[kPressure][i];
  }
  r.full_vs_sum = rel(full, sum);
  r.none_vs_bypass = rel(none, ch[kBypass]);
  r.ponly_vs_channels = rel(ponly, bp);
  r.full_differs_from_none = rel(full, none) > 1e-6;
  return r;
}

}  // namespace pisoflow
