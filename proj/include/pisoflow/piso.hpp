#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pisoflow/grid.hpp"
#include "pisoflow/kernels.hpp"
#include "pisoflow/linalg.hpp"

namespace pisoflow {

enum class GradientPath { Full, AdvOnly, POnly, None };
enum class Precision { Single, Double };

std::string to_string(GradientPath p);
GradientPath parse_gradient_path(const std::string& s);
std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

struct StepConfig {
  double viscosity = 0.01;
  int correctors = 2;
  // Negative selects automatically from the mesh skew.
  int non_orthogonal_correctors = -1;
  double skew_threshold = 1e-6;
  double cfl = 0.8;
  double dt_max = 1.0;
  SolverSettings velocity_solver{1e-8, 2000, Preconditioner::Auto, false};
  SolverSettings pressure_solver{1e-8, 5000, Preconditioner::None, true, true};
  SolverSettings adjoint_velocity_solver{1e-8, 2000, Preconditioner::Auto, false};
  SolverSettings adjoint_pressure_solver{1e-8, 5000, Preconditioner::None, true};
  GradientPath path = GradientPath::Full;
  Precision precision = Precision::Double;
  bool record = true;

  void set_tolerance(double tol);
  void validate() const;
};

template <class Real>
struct FlowState {
  std::vector<Real> u;   // dim * cells
  std::vector<Real> p;   // cells
  std::vector<Real> ub;  // dim * boundary faces
  double t = 0;
  double dt = 0;
};

template <class Real>
FlowState<Real> zero_state(const Grid<Real>& g);

template <class Real>
struct CorrectorRecord {
  std::vector<Real> u_in, h, dh;
  std::vector<std::vector<Real>> pressure_iterates;  // starting guess first
};

// Everything the reverse pass needs from one step.
template <class Real>
struct StepRecord {
  Real dt = 0;
  std::vector<Real> nu, u_n, p_n, ub_pre, ub;
  OutflowRecord<Real> outflow;
  CsrMatrix<Real> C, P;
  std::vector<Real> rhs, A;
  std::vector<std::vector<Real>> predictor_iterates;  // u_n first
  std::vector<CorrectorRecord<Real>> correctors;
};

struct StepReport {
  std::vector<SolverReport> velocity;
  std::vector<SolverReport> pressure;
  double max_divergence = 0;
};

template <class Real>
class PisoSolver {
 public:
  PisoSolver(std::shared_ptr<const Grid<Real>> grid, StepConfig config);

  const Grid<Real>& grid() const { return *grid_; }
  std::shared_ptr<const Grid<Real>> grid_ptr() const { return grid_; }
  const StepConfig& config() const { return config_; }
  StepConfig& config() { return config_; }
  int non_orthogonal_iterations() const;

  // Advances by dt. S is a cell source (dim * cells) or empty; nu_cell overrides
  // the configured viscosity per cell when non-empty.
  FlowState<Real> step(const FlowState<Real>& state, std::span<const Real> S, Real dt,
                       StepRecord<Real>* record = nullptr, StepReport* report = nullptr,
                       std::span<const Real> nu_cell = {}) const;

  double stable_dt(const FlowState<Real>& state) const;

 private:
  std::shared_ptr<const Grid<Real>> grid_;
  StepConfig config_;
};

}  // namespace pisoflow
