#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pisoflow/piso.hpp"

namespace pisoflow {

// Cotangents of a step's outputs.
template <class Real>
struct StepCotangent {
  std::vector<Real> u, p, ub;
};

// Cotangents of a step's inputs.
template <class Real>
struct StepGradient {
  std::vector<Real> u, p, ub;
  std::vector<Real> nu;  // per cell
  std::vector<Real> S;
};

template <class Real>
StepCotangent<Real> zero_cotangent(const Grid<Real>& g);

// Reverse pass of one recorded step under the given path selection. Disabled
// solves contribute a zero cotangent; every direct term is kept.
template <class Real>
StepGradient<Real> backward_step(const PisoSolver<Real>& solver, const StepRecord<Real>& record,
                                 const StepCotangent<Real>& out, GradientPath path);

// Channels of the path decomposition.
enum Channel { kBypass = 0, kAdvection = 1, kPressure = 2 };

// Reverse pass that keeps the cotangent split by the solves it has passed:
// kBypass never crossed a solve, kPressure crossed only pressure solves and
// kAdvection crossed at least one advection solve. The channel sum equals the
// Full-path gradient.
template <class Real>
std::array<StepGradient<Real>, 3> backward_step_channels(const PisoSolver<Real>& solver,
                                                         const StepRecord<Real>& record,
                                                         const std::array<StepCotangent<Real>, 3>& out);

// Global viscosity cotangent from the per-cell one.
template <class Real>
double reduce_viscosity_gradient(const Grid<Real>& g, std::span<const Real> dnu_cell);

// Solves lap(p) = div(u) on the candidate and returns grad + lambda * grad(p).
// The projected field u - grad(p) is written to `projected` when non-null.
template <class Real>
std::vector<Real> div_free_grad_mod(const Grid<Real>& g, std::span<const Real> candidate, Real lambda,
                                    const SolverSettings& settings, std::vector<Real>* projected = nullptr,
                                    double* max_divergence = nullptr);

// Discrete divergence used by the gradient modification: compact face fluxes
// of a cell field with zero boundary flux.
template <class Real>
std::vector<Real> projected_divergence(const Grid<Real>& g, std::span<const Real> u, std::span<const Real> p);

struct GradcheckResult {
  std::string stage;
  double max_rel_error = 0;
  bool finite = true;
  bool passed = false;
};

// Central-difference check of a vector-Jacobian product. `forward` maps inputs
// to outputs; `vjp` maps an output cotangent to an input cotangent.
GradcheckResult gradcheck(const std::string& stage, const std::function<std::vector<double>(const std::vector<double>&)>& forward,
                          const std::function<std::vector<double>(const std::vector<double>&)>& vjp,
                          const std::vector<double>& x0, const std::vector<double>& cotangent,
                          double threshold = 1e-4);

std::string format_gradcheck(const std::vector<GradcheckResult>& results);

}  // namespace pisoflow
