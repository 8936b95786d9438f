#pragma once

// Benchmark case descriptions, forward rollouts and gradient-descent drivers.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pisoflow/adjoint.hpp"
#include "pisoflow/stats.hpp"

namespace pisoflow {

enum class InitKind { Rest, Uniform, Gaussian, Reichardt };
std::string to_string(InitKind k);
InitKind parse_init_kind(const std::string& s);

enum class Parameter { InitialScale, LidVelocity, Viscosity, Source };
std::string to_string(Parameter p);
Parameter parse_parameter(const std::string& s);

struct FluidSpec {
  double viscosity = 0.01;  // <= 0 derives nu = delta / Re_cl for Reichardt initialisation
  std::array<double, 3> source{0, 0, 0};
  bool dynamic_forcing = false;  // streamwise forcing balancing the wall shear
  double delta = 1.0;            // channel half width
};

struct InitSpec {
  InitKind kind = InitKind::Rest;
  std::array<double, 3> velocity{0, 0, 0};  // Uniform
  double amplitude = 1.0;                   // Gaussian peak / Reichardt perturbation
  double sigma_fraction = 0.125;            // Gaussian width as a fraction of the domain width
  double re_tau = 550;                      // Reichardt
};

// Exactly one of dt / cfl and one of steps / horizon.
struct TimeControl {
  double dt = 0;
  double cfl = 0;
  int steps = 0;
  double horizon = 0;
  double steady_tolerance = 0;  // stop once max |u^{n+1} - u^n| falls below this
};

struct StatsPlan {
  bool enabled = false;
  int start = 0;  // first step whose output is accumulated
  int every = 1;
  int max_order = 4;
};

struct OutputPlan {
  int dump_every = 0;  // field dump interval in steps; 0 writes the final state only
};

struct OptimizationSpec {
  Parameter parameter = Parameter::InitialScale;
  double initial = 0.5;  // starting value of the parameter
  double target = 1.0;   // value used for the in-process reference run
  double loss_scale = 1.0;  // loss = loss_scale * sum of squared velocity differences
  double learning_rate = 0.01;
  int iterations = 60;
  GradientPath path = GradientPath::Full;
  double weight_decay = 0;       // lambda * |theta|^2
  double divergence_weight = 0;  // gradient modification strength for source fields
  double stop_loss = 0;          // stop early once the loss is below this (0 = never)
};

struct CaseConfig {
  std::string name = "case";
  std::uint64_t seed = 0;
  MeshKind mesh = MeshKind::Cavity;
  MeshParams mesh_params;
  FluidSpec fluid;
  InitSpec init;
  TimeControl time;
  StepConfig solver;
  StatsPlan stats;
  OutputPlan output;
  std::optional<OptimizationSpec> optimization;

  void validate() const;
};

// Reynolds-number relations of the channel initialisation.
double centerline_reynolds(double re_tau);
// Reichardt law of the wall, u+ as a function of y+.
double reichardt_u_plus(double y_plus);
double poiseuille_analytic(double y, double G, double nu);

// Viscosity actually used by a config (resolves derived channel viscosity).
double effective_viscosity(const CaseConfig& c);

// Initial state of a config on its mesh.
FlowState<double> initial_state(const CaseConfig& c, const Domain& domain, const Grid<double>& g);

// Streamwise forcing balancing the wall shear of the current mean profile,
// using the first-cell wall gradient of the discrete momentum flux.
double dynamic_forcing(const SliceMap& slices, std::span<const double> u, double nu, double delta);

// Copy of a channel field mirrored in the wall-normal direction.
std::vector<double> mirror_channel_field(const Domain& domain, std::span<const double> u);

struct CaseResult {
  FlowState<double> state;
  int steps = 0;
  double max_divergence = 0;
  double bulk_initial = 0, bulk_final = 0;  // mean streamwise velocity
  double bulk_min = 0, bulk_max = 0;
  std::optional<StatsProfile> profile;
  bool steady = false;
};

// Called after every accepted step with the step index (1-based) and state.
using StepObserver = std::function<void(int, const FlowState<double>&, const StepReport&)>;

// Forward rollout of a config. Fields are returned in double precision for
// either working precision. Inner failures are rethrown with the step index.
CaseResult run_case(const CaseConfig& config, const FlowState<double>* initial = nullptr,
                    const StepObserver& observer = {});

struct OptimizationTrace {
  std::vector<double> loss, parameter, grad_norm, wall_time, backward_time;
  bool diverged = false;
  double final_loss = 0;
  double final_parameter = 0;
  double max_divergence = 0;  // over every forward step
  std::size_t size() const { return loss.size(); }
};

// Plain gradient descent on one degree of freedom (or a source field) against
// a reference rollout with the target value. Loss: loss_scale times the sum
// of squared velocity differences after the rollout, plus weight_decay * |theta|^2.
OptimizationTrace optimize(const CaseConfig& config);

// Scaling task: periodic 18x16 box with a Gaussian streamwise velocity whose
// amplitude is the optimised degree of freedom.
CaseConfig scaling_task(int steps, GradientPath path, double learning_rate, int iterations);
// Lid-driven cavity tasks on 32x32 with the lid or the viscosity as the degree of freedom.
CaseConfig lid_task(Parameter parameter);

struct AblationEntry {
  GradientPath path = GradientPath::Full;
  int steps = 1;
  double learning_rate = 0.01;
  OptimizationTrace trace;
  double time_to_threshold = -1;  // wall time to reach the loss threshold, -1 if never
  double min_loss = 0;
};

// Traces for every (path, rollout length) of the scaling task. Independent
// traces run concurrently on PISOFLOW_NUM_THREADS threads (default 1).
std::vector<AblationEntry> path_ablation(const std::vector<GradientPath>& paths, const std::vector<int>& steps,
                                         double learning_rate, int iterations, double threshold = 1e-4);

// Median wall time of one backward step per path on a cavity of the given
// resolution.
std::vector<double> backward_timing(int resolution, const std::vector<GradientPath>& paths, int repeats);

int configured_threads();

}  // namespace pisoflow
