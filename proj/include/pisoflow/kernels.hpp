#pragma once

// Forward and reverse kernels of one PISO step. Fields are flat, component
// major: q[c * n + i]. Boundary velocities use the same layout over boundary
// faces. Every *_backward function accumulates into its output spans.

#include <span>
#include <vector>

#include "pisoflow/grid.hpp"
#include "pisoflow/linalg.hpp"

namespace pisoflow {

template <class Real>
using CSpan = std::span<const Real>;

// Contravariant fluxes per cell: U[j*n+P] = M_P,j . u_P.
template <class Real>
void face_flux(const Grid<Real>& g, CSpan<Real> u, std::span<Real> U);
template <class Real>
void face_flux_backward(const Grid<Real>& g, CSpan<Real> dU, std::span<Real> du);

// Velocity system (row-normalised per unit volume) and its base right-hand side.
template <class Real>
void assemble_predictor(const Grid<Real>& g, CSpan<Real> u_n, CSpan<Real> ub, CSpan<Real> nu, CSpan<Real> S,
                        Real dt, CsrMatrix<Real>& C, std::span<Real> rhs);
template <class Real>
void assemble_predictor_backward(const Grid<Real>& g, CSpan<Real> u_n, CSpan<Real> ub, CSpan<Real> nu, Real dt,
                                 CSpan<Real> dC, CSpan<Real> drhs, std::span<Real> du_n, std::span<Real> dub,
                                 std::span<Real> dnu, std::span<Real> dS);

// Deferred non-orthogonal flux: sum over cell faces of the cross-derivative
// terms with coefficient kappa (per cell). Adds into out.
template <class Real>
void cross_term(const Grid<Real>& g, CSpan<Real> kappa, CSpan<Real> q, int ncomp, bool per_volume,
                std::span<Real> out);
template <class Real>
void cross_term_backward(const Grid<Real>& g, CSpan<Real> kappa, CSpan<Real> q, int ncomp, bool per_volume,
                         CSpan<Real> dout, std::span<Real> dq, std::span<Real> dkappa);

template <class Real>
void pressure_matrix(const Grid<Real>& g, CSpan<Real> A, CsrMatrix<Real>& P);
template <class Real>
void pressure_matrix_backward(const Grid<Real>& g, CSpan<Real> A, CSpan<Real> dP, std::span<Real> dA);

// h = A^-1 (rhs + X(u_in) - H u_in), with A the diagonal of C and H the rest.
template <class Real>
void velocity_h(const Grid<Real>& g, const CsrMatrix<Real>& C, CSpan<Real> rhs, CSpan<Real> nu, CSpan<Real> u_in,
                std::span<Real> h);
template <class Real>
void velocity_h_backward(const Grid<Real>& g, const CsrMatrix<Real>& C, CSpan<Real> nu, CSpan<Real> u_in,
                         CSpan<Real> h, CSpan<Real> dh, std::span<Real> dC, std::span<Real> drhs,
                         std::span<Real> dnu, std::span<Real> du_in);

// Face-flux divergence including the boundary fluxes.
template <class Real>
void divergence(const Grid<Real>& g, CSpan<Real> h, CSpan<Real> ub, std::span<Real> out);
template <class Real>
void divergence_backward(const Grid<Real>& g, CSpan<Real> dout, std::span<Real> dh, std::span<Real> dub);

// u = h - A^-1 T^T grad_xi p.
template <class Real>
void correct_velocity(const Grid<Real>& g, CSpan<Real> h, CSpan<Real> A, CSpan<Real> p, std::span<Real> u);
template <class Real>
void correct_velocity_backward(const Grid<Real>& g, CSpan<Real> h, CSpan<Real> A, CSpan<Real> p,
                               CSpan<Real> du, std::span<Real> dh, std::span<Real> dA, std::span<Real> dp);

template <class Real>
struct OutflowRecord {
  bool active = false;  // any outflow faces present
  bool scaled = false;  // flux balance factor depends on the inputs
  Real scale = 1;
  Real inflow = 0;   // net outward flux through non-outflow faces
  Real outflow = 0;  // outward flux through outflow faces before scaling
  std::vector<Real> relax;   // per face c/(1+c), zero on Dirichlet faces
  std::vector<Real> updated;  // unscaled updated velocities
};

template <class Real>
OutflowRecord<Real> outflow_update(const Grid<Real>& g, CSpan<Real> ub_pre, CSpan<Real> u_n, Real dt,
                                   std::span<Real> ub_out);
template <class Real>
void outflow_update_backward(const Grid<Real>& g, const OutflowRecord<Real>& rec, CSpan<Real> ub_pre,
                             CSpan<Real> dub_out, std::span<Real> dub_pre, std::span<Real> du_n);

// Cell and boundary-face CFL scan; returns dt_max for a fluid at rest.
template <class Real>
double adaptive_dt(const Grid<Real>& g, CSpan<Real> u, CSpan<Real> ub, double cfl, double dt_max);

// Diagnostics: compact divergence residual of the final pressure system.
template <class Real>
std::vector<Real> pressure_residual(const Grid<Real>& g, const CsrMatrix<Real>& P, CSpan<Real> dh,
                                    CSpan<Real> A, CSpan<Real> p);

template <class Real>
std::vector<Real> cell_viscosity(const Grid<Real>& g, Real nu);

}  // namespace pisoflow
