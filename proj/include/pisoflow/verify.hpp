#pragma once

// Numerical verification harness: finite-difference checks of every backward
// kernel and of short rollouts, adjoint identities of the embedded solves, and
// additivity of the gradient-path decomposition.

#include <cstdint>
#include <string>
#include <vector>

#include "pisoflow/adjoint.hpp"

namespace pisoflow {

struct NamedDomain {
  std::string name;
  Domain domain;
};

// Small randomized meshes: distorted 6x6, two connected blocks, a permuted
// and flipped connection, a rotated and sheared block, a sheared 4x4x4 box
// and a strip with an advective outflow.
std::vector<NamedDomain> gradcheck_domains(std::uint64_t seed);

// Solver settings tight enough that finite differences resolve the gradient.
StepConfig verification_config();

std::vector<GradcheckResult> kernel_gradchecks(const NamedDomain& d, std::uint64_t seed, double threshold = 1e-4);

// Composite checks through `steps` recorded steps: per-cell inputs of one step
// and a rollout with respect to the initial state, the source and the global
// viscosity.
std::vector<GradcheckResult> rollout_gradchecks(const NamedDomain& d, int steps, std::uint64_t seed,
                                                double threshold = 1e-4);

struct IdentityCheck {
  std::string stage;
  double rel_error = 0;
  bool passed = false;
};

// <gx, J v> = <J^T gx, v> for the velocity and pressure solves of a recorded step.
std::vector<IdentityCheck> adjoint_identity_checks(const NamedDomain& d, std::uint64_t seed, double threshold = 1e-9);

struct AdditivityReport {
  double full_vs_sum = 0;       // |Full - (None + adv + p)| / |Full|
  double none_vs_bypass = 0;    // |None - bypass channel| / |None|
  double ponly_vs_channels = 0;  // |POnly - (bypass + pressure channels)| / |POnly|
  bool full_differs_from_none = false;
};

AdditivityReport path_additivity(const NamedDomain& d, int steps, std::uint64_t seed);

}  // namespace pisoflow
