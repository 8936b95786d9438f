#include "pisoflow/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pisoflow {

namespace {

// Tangential derivative of a boundary-face quantity along owner axis k.
template <class Real>
Real face_tangent(const typename Grid<Real>::BoundaryFace& bf, int b, int k, CSpan<Real> v) {
  const int lo = bf.tangent[k][0], hi = bf.tangent[k][1];
  if (lo >= 0 && hi >= 0) return Real(0.5) * (v[hi] - v[lo]);
  if (hi >= 0) return v[hi] - v[b];
  if (lo >= 0) return v[b] - v[lo];
  return 0;
}

template <class Real>
void face_tangent_backward(const typename Grid<Real>::BoundaryFace& bf, int b, int k, Real g, std::span<Real> dv) {
  const int lo = bf.tangent[k][0], hi = bf.tangent[k][1];
  if (lo >= 0 && hi >= 0) {
    dv[hi] += Real(0.5) * g;
    dv[lo] -= Real(0.5) * g;
  } else if (hi >= 0) {
    dv[hi] += g;
    dv[b] -= g;
  } else if (lo >= 0) {
    dv[b] += g;
    dv[lo] -= g;
  }
}

template <class Real>
Real face_normal_flux(const typename Grid<Real>::BoundaryFace& bf, int b, int nb, int dim, CSpan<Real> ub) {
  const int j = side_axis(bf.side);
  Real s = 0;
  for (int i = 0; i < dim; ++i) s += bf.M[j * 3 + i] * ub[i * nb + b];
  return s;
}

template <class Real>
CSpan<Real> comp(CSpan<Real> v, int c, int n) {
  return v.subspan(static_cast<std::size_t>(c) * n, n);
}
template <class Real>
std::span<Real> comp(std::span<Real> v, int c, int n) {
  return v.subspan(static_cast<std::size_t>(c) * n, n);
}

}  // namespace

template <class Real>
void face_flux(const Grid<Real>& g, CSpan<Real> u, std::span<Real> U) {
  const int n = g.nc(), d = g.dim;
  for (int P = 0; P < n; ++P)
    for (int j = 0; j < d; ++j) {
      Real s = 0;
      for (int i = 0; i < d; ++i) s += g.m(P, j, i) * u[i * n + P];
      U[j * n + P] = s;
    }
}

template <class Real>
void face_flux_backward(const Grid<Real>& g, CSpan<Real> dU, std::span<Real> du) {
  const int n = g.nc(), d = g.dim;
  for (int P = 0; P < n; ++P)
    for (int j = 0; j < d; ++j)
      for (int i = 0; i < d; ++i) du[i * n + P] += g.m(P, j, i) * dU[j * n + P];
}

template <class Real>
void assemble_predictor(const Grid<Real>& g, CSpan<Real> u_n, CSpan<Real> ub, CSpan<Real> nu, CSpan<Real> S,
                        Real dt, CsrMatrix<Real>& C, std::span<Real> rhs) {
  if (!(dt > 0)) throw std::invalid_argument("time step must be positive");
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces;
  std::vector<Real> U(static_cast<std::size_t>(d) * n);
  face_flux<Real>(g, u_n, U);
  if (C.pattern != g.pattern) C = CsrMatrix<Real>(g.pattern);
  std::fill(C.values.begin(), C.values.end(), Real(0));
  const auto& diag = g.pattern->diag;
  for (int P = 0; P < n; ++P) {
    const Real inv_j = Real(1) / g.J[P];
    Real cp = Real(1) / dt;
    for (int c = 0; c < d; ++c) rhs[c * n + P] = u_n[c * n + P] / dt + S[c * n + P];
    for (int s = 0; s < 2 * d; ++s) {
      const int j = side_axis(s);
      const Real N = static_cast<Real>(side_normal(s));
      const auto& link = g.links[P][s];
      if (link.cell >= 0) {
        const int F = link.cell, pj = link.axis[j];
        const Real Uf = Real(0.5) * (U[j * n + P] + link.sign[j] * U[pj * n + F]);
        const Real K = Real(0.5) * (nu[P] * g.a(P, j, j) + nu[F] * g.a(F, pj, pj));
        cp += (Real(0.5) * N * Uf + K) * inv_j;
        C.values[link.entry] += (Real(0.5) * N * Uf - K) * inv_j;
      } else {
        const int b = link.bface;
        const auto& bf = g.bfaces[b];
        const Real ajj = bf.alpha[j * 3 + j];
        cp += Real(2) * nu[P] * ajj * inv_j;
        const Real Ub = face_normal_flux<Real>(bf, b, nb, d, ub);
        for (int c = 0; c < d; ++c) {
          const auto ubc = comp<Real>(ub, c, nb);
          Real r = ubc[b] * (Real(2) * nu[P] * ajj - N * Ub);
          for (int k = 0; k < d; ++k)
            if (k != j) r += N * nu[P] * bf.alpha[j * 3 + k] * face_tangent<Real>(bf, b, k, ubc);
          rhs[c * n + P] += r * inv_j;
        }
      }
    }
    C.values[diag[P]] += cp;
  }
}

template <class Real>
void assemble_predictor_backward(const Grid<Real>& g, CSpan<Real> u_n, CSpan<Real> ub, CSpan<Real> nu, Real dt,
                                 CSpan<Real> dC, CSpan<Real> drhs, std::span<Real> du_n, std::span<Real> dub,
                                 std::span<Real> dnu, std::span<Real> dS) {
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces;
  std::vector<Real> U(static_cast<std::size_t>(d) * n), dU(static_cast<std::size_t>(d) * n, Real(0));
  face_flux<Real>(g, u_n, U);
  const auto& diag = g.pattern->diag;
  for (int P = 0; P < n; ++P) {
    const Real inv_j = Real(1) / g.J[P];
    for (int c = 0; c < d; ++c) {
      du_n[c * n + P] += drhs[c * n + P] / dt;
      dS[c * n + P] += drhs[c * n + P];
    }
    const Real dcp = dC[diag[P]];
    for (int s = 0; s < 2 * d; ++s) {
      const int j = side_axis(s);
      const Real N = static_cast<Real>(side_normal(s));
      const auto& link = g.links[P][s];
      if (link.cell >= 0) {
        const int F = link.cell, pj = link.axis[j];
        const Real dcf = dC[link.entry];
        const Real dUf = Real(0.5) * N * (dcp + dcf) * inv_j;
        const Real dK = (dcp - dcf) * inv_j;
        dU[j * n + P] += Real(0.5) * dUf;
        dU[pj * n + F] += Real(0.5) * link.sign[j] * dUf;
        dnu[P] += Real(0.5) * g.a(P, j, j) * dK;
        dnu[F] += Real(0.5) * g.a(F, pj, pj) * dK;
      } else {
        const int b = link.bface;
        const auto& bf = g.bfaces[b];
        const Real ajj = bf.alpha[j * 3 + j];
        dnu[P] += Real(2) * ajj * dcp * inv_j;
        const Real Ub = face_normal_flux<Real>(bf, b, nb, d, ub);
        Real dUb = 0;
        for (int c = 0; c < d; ++c) {
          const Real gr = drhs[c * n + P] * inv_j;
          if (gr == Real(0)) continue;
          const auto ubc = comp<Real>(ub, c, nb);
          auto dubc = comp<Real>(dub, c, nb);
          dubc[b] += gr * (Real(2) * nu[P] * ajj - N * Ub);
          dUb -= gr * N * ubc[b];
          Real dn = gr * Real(2) * ajj * ubc[b];
          for (int k = 0; k < d; ++k) {
            if (k == j) continue;
            const Real ajk = bf.alpha[j * 3 + k];
            dn += gr * N * ajk * face_tangent<Real>(bf, b, k, ubc);
            face_tangent_backward<Real>(bf, b, k, gr * N * nu[P] * ajk, dubc);
          }
          dnu[P] += dn;
        }
        for (int i = 0; i < d; ++i) dub[i * nb + b] += dUb * bf.M[j * 3 + i];
      }
    }
  }
  face_flux_backward<Real>(g, dU, du_n);
}

template <class Real>
void cross_term(const Grid<Real>& g, CSpan<Real> kappa, CSpan<Real> q, int ncomp, bool per_volume,
                std::span<Real> out) {
  if (g.orthogonal) return;
  const int n = g.nc(), d = g.dim;
  for (int P = 0; P < n; ++P) {
    const Real scale = per_volume ? Real(1) / g.J[P] : Real(1);
    for (int s = 0; s < 2 * d; ++s) {
      const auto& link = g.links[P][s];
      if (link.cell < 0) continue;
      const int j = side_axis(s), F = link.cell, pj = link.axis[j];
      const Real N = static_cast<Real>(side_normal(s));
      for (int k = 0; k < d; ++k) {
        if (k == j) continue;
        const int pk = link.axis[k];
        const Real sk = static_cast<Real>(link.sign[k]);
        const Real Kx = Real(0.5) * (kappa[P] * g.a(P, j, k) +
                                     kappa[F] * static_cast<Real>(link.sign[j]) * sk * g.a(F, pj, pk));
        const Real coef = N * Kx * Real(0.5) * scale;
        if (coef == Real(0)) continue;
        for (int c = 0; c < ncomp; ++c) {
          const auto qc = comp<Real>(q, c, n);
          out[c * n + P] += coef * (g.tangent[P][k].apply(qc) + sk * g.tangent[F][pk].apply(qc));
        }
      }
    }
  }
}

template <class Real>
void cross_term_backward(const Grid<Real>& g, CSpan<Real> kappa, CSpan<Real> q, int ncomp, bool per_volume,
                         CSpan<Real> dout, std::span<Real> dq, std::span<Real> dkappa) {
  if (g.orthogonal) return;
  const int n = g.nc(), d = g.dim;
  for (int P = 0; P < n; ++P) {
    const Real scale = per_volume ? Real(1) / g.J[P] : Real(1);
    for (int s = 0; s < 2 * d; ++s) {
      const auto& link = g.links[P][s];
      if (link.cell < 0) continue;
      const int j = side_axis(s), F = link.cell, pj = link.axis[j];
      const Real N = static_cast<Real>(side_normal(s));
      for (int k = 0; k < d; ++k) {
        if (k == j) continue;
        const int pk = link.axis[k];
        const Real sk = static_cast<Real>(link.sign[k]);
        const Real aF = static_cast<Real>(link.sign[j]) * sk * g.a(F, pj, pk);
        const Real Kx = Real(0.5) * (kappa[P] * g.a(P, j, k) + kappa[F] * aF);
        const Real coef = N * Kx * Real(0.5) * scale;
        Real avg = 0;
        for (int c = 0; c < ncomp; ++c) {
          const Real go = dout[c * n + P];
          if (go == Real(0)) continue;
          const auto qc = comp<Real>(q, c, n);
          avg += go * (g.tangent[P][k].apply(qc) + sk * g.tangent[F][pk].apply(qc));
          auto dqc = comp<Real>(dq, c, n);
          g.tangent[P][k].scatter(coef * go, dqc);
          g.tangent[F][pk].scatter(coef * sk * go, dqc);
        }
        const Real f = N * Real(0.25) * scale * avg;
        dkappa[P] += f * g.a(P, j, k);
        dkappa[F] += f * aF;
      }
    }
  }
}

template <class Real>
void pressure_matrix(const Grid<Real>& g, CSpan<Real> A, CsrMatrix<Real>& P) {
  const int n = g.nc(), d = g.dim;
  for (int c = 0; c < n; ++c)
    if (!(A[c] > 0)) throw SolverError("pressure_matrix", "non-positive diagonal in cell " + std::to_string(c));
  if (P.pattern != g.pattern) P = CsrMatrix<Real>(g.pattern);
  std::fill(P.values.begin(), P.values.end(), Real(0));
  const auto& diag = g.pattern->diag;
  for (int c = 0; c < n; ++c)
    for (int s = 0; s < 2 * d; ++s) {
      const auto& link = g.links[c][s];
      if (link.cell < 0) continue;
      const int j = side_axis(s), F = link.cell, pj = link.axis[j];
      const Real W = Real(0.5) * (g.a(c, j, j) / A[c] + g.a(F, pj, pj) / A[F]);
      P.values[link.entry] += W;
      P.values[diag[c]] -= W;
    }
}

template <class Real>
void pressure_matrix_backward(const Grid<Real>& g, CSpan<Real> A, CSpan<Real> dP, std::span<Real> dA) {
  const int n = g.nc(), d = g.dim;
  const auto& diag = g.pattern->diag;
  for (int c = 0; c < n; ++c)
    for (int s = 0; s < 2 * d; ++s) {
      const auto& link = g.links[c][s];
      if (link.cell < 0) continue;
      const int j = side_axis(s), F = link.cell, pj = link.axis[j];
      const Real dW = dP[link.entry] - dP[diag[c]];
      dA[c] -= Real(0.5) * g.a(c, j, j) / (A[c] * A[c]) * dW;
      dA[F] -= Real(0.5) * g.a(F, pj, pj) / (A[F] * A[F]) * dW;
    }
}

template <class Real>
void velocity_h(const Grid<Real>& g, const CsrMatrix<Real>& C, CSpan<Real> rhs, CSpan<Real> nu, CSpan<Real> u_in,
                std::span<Real> h) {
  const int n = g.nc(), d = g.dim;
  const auto& p = *g.pattern;
  std::copy(rhs.begin(), rhs.begin() + static_cast<std::size_t>(d) * n, h.begin());
  cross_term<Real>(g, nu, u_in, d, true, h);
  for (int c = 0; c < d; ++c)
    for (int P = 0; P < n; ++P) {
      Real s = h[c * n + P];
      for (int e = p.row_ptr[P]; e < p.row_ptr[P + 1]; ++e)
        if (e != p.diag[P]) s -= C.values[e] * u_in[c * n + p.cols[e]];
      h[c * n + P] = s / C.values[p.diag[P]];
    }
}

template <class Real>
void velocity_h_backward(const Grid<Real>& g, const CsrMatrix<Real>& C, CSpan<Real> nu, CSpan<Real> u_in,
                         CSpan<Real> h, CSpan<Real> dh, std::span<Real> dC, std::span<Real> drhs,
                         std::span<Real> dnu, std::span<Real> du_in) {
  const int n = g.nc(), d = g.dim;
  const auto& p = *g.pattern;
  std::vector<Real> gr(static_cast<std::size_t>(d) * n);
  for (int c = 0; c < d; ++c)
    for (int P = 0; P < n; ++P) gr[c * n + P] = dh[c * n + P] / C.values[p.diag[P]];
  for (std::size_t i = 0; i < gr.size(); ++i) drhs[i] += gr[i];
  cross_term_backward<Real>(g, nu, u_in, d, true, gr, du_in, dnu);
  for (int P = 0; P < n; ++P)
    for (int c = 0; c < d; ++c) {
      const Real gp = gr[c * n + P];
      if (gp == Real(0)) continue;
      for (int e = p.row_ptr[P]; e < p.row_ptr[P + 1]; ++e) {
        if (e == p.diag[P]) continue;
        du_in[c * n + p.cols[e]] -= C.values[e] * gp;
        dC[e] -= gp * u_in[c * n + p.cols[e]];
      }
      dC[p.diag[P]] -= gp * h[c * n + P];
    }
}

template <class Real>
void divergence(const Grid<Real>& g, CSpan<Real> h, CSpan<Real> ub, std::span<Real> out) {
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces;
  for (int P = 0; P < n; ++P) {
    Real s = 0;
    for (int f = 0; f < 2 * d; ++f) {
      const int j = side_axis(f);
      const Real N = static_cast<Real>(side_normal(f));
      const auto& link = g.links[P][f];
      if (link.cell >= 0) {
        const int F = link.cell, pj = link.axis[j];
        Real fp = 0, ff = 0;
        for (int i = 0; i < d; ++i) {
          fp += g.m(P, j, i) * h[i * n + P];
          ff += g.m(F, pj, i) * h[i * n + F];
        }
        s += N * Real(0.5) * (fp + link.sign[j] * ff);
      } else {
        s += N * face_normal_flux<Real>(g.bfaces[link.bface], link.bface, nb, d, ub);
      }
    }
    out[P] = s;
  }
}

template <class Real>
void divergence_backward(const Grid<Real>& g, CSpan<Real> dout, std::span<Real> dh, std::span<Real> dub) {
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces;
  for (int P = 0; P < n; ++P) {
    const Real go = dout[P];
    if (go == Real(0)) continue;
    for (int f = 0; f < 2 * d; ++f) {
      const int j = side_axis(f);
      const Real N = static_cast<Real>(side_normal(f));
      const auto& link = g.links[P][f];
      if (link.cell >= 0) {
        const int F = link.cell, pj = link.axis[j];
        for (int i = 0; i < d; ++i) {
          dh[i * n + P] += go * N * Real(0.5) * g.m(P, j, i);
          dh[i * n + F] += go * N * Real(0.5) * link.sign[j] * g.m(F, pj, i);
        }
      } else {
        const auto& bf = g.bfaces[link.bface];
        for (int i = 0; i < d; ++i) dub[i * nb + link.bface] += go * N * bf.M[j * 3 + i];
      }
    }
  }
}

template <class Real>
void correct_velocity(const Grid<Real>& g, CSpan<Real> h, CSpan<Real> A, CSpan<Real> p, std::span<Real> u) {
  const int n = g.nc(), d = g.dim;
  for (int P = 0; P < n; ++P) {
    std::array<Real, 3> gp{};
    for (int k = 0; k < d; ++k) gp[k] = g.gradient[P][k].apply(p);
    for (int i = 0; i < d; ++i) {
      Real s = 0;
      for (int k = 0; k < d; ++k) s += g.t(P, k, i) * gp[k];
      u[i * n + P] = h[i * n + P] - s / A[P];
    }
  }
}

template <class Real>
void correct_velocity_backward(const Grid<Real>& g, CSpan<Real> h, CSpan<Real> A, CSpan<Real> p,
                               CSpan<Real> du, std::span<Real> dh, std::span<Real> dA, std::span<Real> dp) {
  (void)h;
  const int n = g.nc(), d = g.dim;
  for (int P = 0; P < n; ++P) {
    std::array<Real, 3> gp{};
    for (int k = 0; k < d; ++k) gp[k] = g.gradient[P][k].apply(p);
    Real da = 0;
    for (int i = 0; i < d; ++i) {
      const Real gi = du[i * n + P];
      dh[i * n + P] += gi;
      Real s = 0;
      for (int k = 0; k < d; ++k) s += g.t(P, k, i) * gp[k];
      da += gi * s;
    }
    dA[P] += da / (A[P] * A[P]);
    for (int k = 0; k < d; ++k) {
      Real w = 0;
      for (int i = 0; i < d; ++i) w += g.t(P, k, i) * du[i * n + P];
      g.gradient[P][k].scatter(-w / A[P], dp);
    }
  }
}

template <class Real>
OutflowRecord<Real> outflow_update(const Grid<Real>& g, CSpan<Real> ub_pre, CSpan<Real> u_n, Real dt,
                                   std::span<Real> ub_out) {
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces;
  OutflowRecord<Real> rec;
  std::copy(ub_pre.begin(), ub_pre.end(), ub_out.begin());
  rec.relax.assign(nb, Real(0));
  rec.updated.assign(static_cast<std::size_t>(d) * nb, Real(0));
  for (int b = 0; b < nb; ++b) {
    const auto& bf = g.bfaces[b];
    const Real N = static_cast<Real>(side_normal(bf.side));
    if (bf.kind != FaceKind::Outflow) {
      rec.inflow += N * face_normal_flux<Real>(bf, b, nb, d, ub_pre);
      continue;
    }
    rec.active = true;
    const int j = side_axis(bf.side);
    Real tn = 0;
    for (int i = 0; i < d; ++i) tn += bf.T[j * 3 + i] * bf.T[j * 3 + i];
    const Real cfl = Real(2) * dt * bf.outflow_velocity * std::sqrt(tn);
    const Real w = cfl / (Real(1) + cfl);
    rec.relax[b] = w;
    for (int c = 0; c < d; ++c) {
      const Real v = ub_pre[c * nb + b] - w * (ub_pre[c * nb + b] - u_n[c * n + bf.cell]);
      rec.updated[c * nb + b] = v;
    }
    rec.outflow += N * face_normal_flux<Real>(bf, b, nb, d, CSpan<Real>(rec.updated));
  }
  if (!rec.active) return rec;
  if (rec.outflow == Real(0)) {
    if (rec.inflow != Real(0))
      throw SolverError("outflow", "outflow boundary carries no flux but the inflow is nonzero");
    rec.scale = 1;
  } else {
    rec.scale = -rec.inflow / rec.outflow;
    rec.scaled = true;
  }
  for (int b = 0; b < nb; ++b)
    if (g.bfaces[b].kind == FaceKind::Outflow)
      for (int c = 0; c < d; ++c) ub_out[c * nb + b] = rec.scale * rec.updated[c * nb + b];
  return rec;
}

template <class Real>
void outflow_update_backward(const Grid<Real>& g, const OutflowRecord<Real>& rec, CSpan<Real> ub_pre,
                             CSpan<Real> dub_out, std::span<Real> dub_pre, std::span<Real> du_n) {
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces;
  (void)ub_pre;
  Real dscale = 0;
  std::vector<Real> dupd(static_cast<std::size_t>(d) * nb, Real(0));
  for (int b = 0; b < nb; ++b) {
    const bool out = g.bfaces[b].kind == FaceKind::Outflow;
    for (int c = 0; c < d; ++c) {
      const Real go = dub_out[c * nb + b];
      if (!out) {
        dub_pre[c * nb + b] += go;
      } else {
        dupd[c * nb + b] += rec.scale * go;
        dscale += go * rec.updated[c * nb + b];
      }
    }
  }
  if (!rec.active) return;
  if (rec.scaled) {
    const Real din = -dscale / rec.outflow;
    const Real dout = dscale * rec.inflow / (rec.outflow * rec.outflow);
    for (int b = 0; b < nb; ++b) {
      const auto& bf = g.bfaces[b];
      const int j = side_axis(bf.side);
      const Real N = static_cast<Real>(side_normal(bf.side));
      const bool out = bf.kind == FaceKind::Outflow;
      for (int i = 0; i < d; ++i) {
        const Real w = N * bf.M[j * 3 + i];
        if (out)
          dupd[i * nb + b] += dout * w;
        else
          dub_pre[i * nb + b] += din * w;
      }
    }
  }
  for (int b = 0; b < nb; ++b) {
    const auto& bf = g.bfaces[b];
    if (bf.kind != FaceKind::Outflow) continue;
    const Real w = rec.relax[b];
    for (int c = 0; c < d; ++c) {
      dub_pre[c * nb + b] += (Real(1) - w) * dupd[c * nb + b];
      du_n[c * n + bf.cell] += w * dupd[c * nb + b];
    }
  }
}

template <class Real>
double adaptive_dt(const Grid<Real>& g, CSpan<Real> u, CSpan<Real> ub, double cfl, double dt_max) {
  if (!(cfl > 0)) throw std::invalid_argument("CFL limit must be positive");
  const int n = g.nc(), d = g.dim, nb = g.num_bfaces;
  double rate = 0;
  for (int P = 0; P < n; ++P) {
    double s = 0;
    for (int j = 0; j < d; ++j) {
      double v = 0;
      for (int i = 0; i < d; ++i) v += static_cast<double>(g.t(P, j, i)) * u[i * n + P];
      s += std::abs(v);
    }
    rate = std::max(rate, s);
  }
  for (int b = 0; b < nb; ++b) {
    const auto& bf = g.bfaces[b];
    double s = 0;
    for (int j = 0; j < d; ++j) {
      double v = 0;
      for (int i = 0; i < d; ++i) v += static_cast<double>(bf.T[j * 3 + i]) * ub[i * nb + b];
      s += std::abs(v);
    }
    rate = std::max(rate, s);
  }
  if (rate == 0) return dt_max;
  return std::min(dt_max, cfl / rate);
}

template <class Real>
std::vector<Real> pressure_residual(const Grid<Real>& g, const CsrMatrix<Real>& P, CSpan<Real> dh, CSpan<Real> A,
                                    CSpan<Real> p) {
  const int n = g.nc();
  std::vector<Real> r(n), kappa(n);
  P.multiply(p, r);
  for (int i = 0; i < n; ++i) {
    r[i] = dh[i] - r[i];
    kappa[i] = Real(1) / A[i];
  }
  std::vector<Real> y(n, Real(0));
  cross_term<Real>(g, kappa, p, 1, false, y);
  for (int i = 0; i < n; ++i) r[i] -= y[i];
  return r;
}

template <class Real>
std::vector<Real> cell_viscosity(const Grid<Real>& g, Real nu) {
  std::vector<Real> v(g.viscosity_scale);
  for (auto& x : v) x *= nu;
  return v;
}

#define PISOFLOW_KERNELS(Real)                                                                                    \
  template void face_flux<Real>(const Grid<Real>&, CSpan<Real>, std::span<Real>);                                 \
  template void face_flux_backward<Real>(const Grid<Real>&, CSpan<Real>, std::span<Real>);                        \
  template void assemble_predictor<Real>(const Grid<Real>&, CSpan<Real>, CSpan<Real>, CSpan<Real>, CSpan<Real>,   \
                                         Real, CsrMatrix<Real>&, std::span<Real>);                                \
  template void assemble_predictor_backward<Real>(const Grid<Real>&, CSpan<Real>, CSpan<Real>, CSpan<Real>, Real, \
                                                  CSpan<Real>, CSpan<Real>, std::span<Real>, std::span<Real>,     \
                                                  std::span<Real>, std::span<Real>);                              \
  template void cross_term<Real>(const Grid<Real>&, CSpan<Real>, CSpan<Real>, int, bool, std::span<Real>);        \
  template void cross_term_backward<Real>(const Grid<Real>&, CSpan<Real>, CSpan<Real>, int, bool, CSpan<Real>,    \
                                          std::span<Real>, std::span<Real>);                                      \
  template void pressure_matrix<Real>(const Grid<Real>&, CSpan<Real>, CsrMatrix<Real>&);                          \
  template void pressure_matrix_backward<Real>(const Grid<Real>&, CSpan<Real>, CSpan<Real>, std::span<Real>);     \
  template void velocity_h<Real>(const Grid<Real>&, const CsrMatrix<Real>&, CSpan<Real>, CSpan<Real>,             \
                                 CSpan<Real>, std::span<Real>);                                                   \
  template void velocity_h_backward<Real>(const Grid<Real>&, const CsrMatrix<Real>&, CSpan<Real>, CSpan<Real>,    \
                                          CSpan<Real>, CSpan<Real>, std::span<Real>, std::span<Real>,             \
                                          std::span<Real>, std::span<Real>);                                      \
  template void divergence<Real>(const Grid<Real>&, CSpan<Real>, CSpan<Real>, std::span<Real>);                   \
  template void divergence_backward<Real>(const Grid<Real>&, CSpan<Real>, std::span<Real>, std::span<Real>);      \
  template void correct_velocity<Real>(const Grid<Real>&, CSpan<Real>, CSpan<Real>, CSpan<Real>,                  \
                                       std::span<Real>);                                                          \
  template void correct_velocity_backward<Real>(const Grid<Real>&, CSpan<Real>, CSpan<Real>, CSpan<Real>,         \
                                                CSpan<Real>, std::span<Real>, std::span<Real>, std::span<Real>);  \
  template OutflowRecord<Real> outflow_update<Real>(const Grid<Real>&, CSpan<Real>, CSpan<Real>, Real,            \
                                                    std::span<Real>);                                             \
  template void outflow_update_backward<Real>(const Grid<Real>&, const OutflowRecord<Real>&, CSpan<Real>,         \
                                              CSpan<Real>, std::span<Real>, std::span<Real>);                     \
  template double adaptive_dt<Real>(const Grid<Real>&, CSpan<Real>, CSpan<Real>, double, double);                 \
  template std::vector<Real> pressure_residual<Real>(const Grid<Real>&, const CsrMatrix<Real>&, CSpan<Real>,      \
                                                     CSpan<Real>, CSpan<Real>);                                   \
  template std::vector<Real> cell_viscosity<Real>(const Grid<Real>&, Real);

PISOFLOW_KERNELS(float)
PISOFLOW_KERNELS(double)

}  // namespace pisoflow
