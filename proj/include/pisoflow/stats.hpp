#pragma once

// Streaming turbulence statistics for wall-bounded flows: online (co)moments,
// wall-normal slice profiles, Reynolds-stress budgets, statistics losses and
// scalar diagnostics.

#include <array>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pisoflow/grid.hpp"

namespace pisoflow {

class StatsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Central (co)moments of a vector-valued stream, up to a fixed total order.
// Updates and merges use the exact pairwise combination of central sums, so
// merging two accumulators equals accumulating the concatenated stream.
class MomentAccumulator {
 public:
  MomentAccumulator(int variables, int max_order);

  int variables() const { return nvar_; }
  int max_order() const { return order_; }
  std::int64_t count() const { return n_; }
  const std::vector<double>& mean() const { return mean_; }

  void add(std::span<const double> sample);
  // Row-major batch of samples x variables; folded in through a two-pass
  // evaluation of the batch followed by a merge.
  void add_batch(std::span<const double> samples);
  void merge(const MomentAccumulator& other);

  // Population central moment E[prod_v (x_v - mean_v)^e_v] for 2 <= sum(e) <= max_order.
  double central_moment(std::span<const int> exponents) const;
  double covariance(int a, int b) const;
  double variance(int a) const { return covariance(a, a); }
  // Standardised third and fourth moments; NaN for zero variance.
  double skewness(int a) const;
  double flatness(int a) const;

 private:
  struct Term {
    int beta = -1;  // index into sums_, or -1 for the zero-order term (the count)
    std::vector<int> gamma;
    double coefficient = 1;
  };
  int index_of(std::span<const int> e) const;
  void combine(std::int64_t nb, std::span<const double> mean_b, std::span<const double> sums_b);

  int nvar_;
  int order_;
  std::int64_t n_ = 0;
  std::vector<double> mean_;
  std::vector<std::vector<int>> exponents_;  // multi-indices with 2 <= |e| <= order
  std::map<std::vector<int>, int> lookup_;
  std::vector<std::vector<Term>> terms_;
  std::vector<double> sums_;
};

// Cells of a single-block channel grouped by wall-normal (second axis) slice.
// Homogeneous directions are the periodic first and third axes.
struct SliceMap {
  int dim = 2;
  std::vector<std::vector<int>> cells;
  std::vector<double> y, dy;
  double y_lower = 0, y_upper = 0;
  int size() const { return static_cast<int>(cells.size()); }
};

SliceMap channel_slices(const Domain& domain);

// Per-slice mean and (population) covariance of one velocity field.
// mean[c*Y + y], cov[(a*dim + b)*Y + y].
struct SliceMoments {
  int dim = 2;
  int slices = 0;
  std::vector<double> mean, cov;

  double m(int c, int y) const { return mean[static_cast<std::size_t>(c) * slices + y]; }
  double cv(int a, int b, int y) const { return cov[static_cast<std::size_t>(a * dim + b) * slices + y]; }
  static SliceMoments zeros(int dim, int slices);
};

SliceMoments slice_moments(const SliceMap& slices, std::span<const double> u);
// Accumulates the velocity cotangent for cotangents on the moments.
void slice_moments_backward(const SliceMap& slices, std::span<const double> u, const SliceMoments& grad,
                            std::span<double> du);
// Statistics pooled over several frames with equal sample counts.
SliceMoments window_moments(std::span<const SliceMoments> frames);

struct FrictionVelocity {
  double wall_gradient = 0;  // mean |du/dn| over both walls
  double u_tau = 0;
  double re_tau = 0;
};

// Wall gradient of a streamwise mean profile from a quadratic through the wall
// value and the two nearest slices.
FrictionVelocity friction_velocity(const SliceMap& slices, std::span<const double> mean_u, double nu, double delta,
                                   double wall_velocity_lower = 0, double wall_velocity_upper = 0);

struct StatsProfile {
  int dim = 2;
  std::vector<double> y, y_plus;
  std::vector<double> mean;      // [c*Y + y]
  std::vector<double> cov;       // [(a*dim + b)*Y + y]
  std::vector<double> skewness;  // [c*Y + y], empty below order 3
  std::vector<double> flatness;  // [c*Y + y], empty below order 4
  double nu = 0, delta = 1;
  FrictionVelocity friction;
  std::int64_t frames = 0;

  int slices() const { return static_cast<int>(y.size()); }
  double t_plus(double t) const { return t * friction.u_tau * friction.u_tau / nu; }
  double eddy_turnover(double t) const { return t * friction.u_tau / delta; }
};

// Per-slice accumulators over a stream of velocity frames.
class ChannelStatistics {
 public:
  explicit ChannelStatistics(SliceMap slices, int max_order = 4);

  void add_frame(std::span<const double> u);
  void merge(const ChannelStatistics& other);
  std::int64_t frames() const { return frames_; }
  const SliceMap& slices() const { return slices_; }
  const MomentAccumulator& slice(int y) const { return acc_.at(y); }

  StatsProfile profile(double nu, double delta) const;

 private:
  SliceMap slices_;
  std::vector<MomentAccumulator> acc_;
  std::int64_t frames_ = 0;
};

// Physical gradient of a cell scalar with the solver's central stencils:
// out[i*n + cell] = dq/dx_i.
void physical_gradient(const Grid<double>& g, std::span<const double> q, std::span<double> out);

// Reynolds-stress budget terms for every component pair a <= b:
// production, dissipation 2<du'_a/dx_k du'_b/dx_k>, turbulent transport,
// viscous diffusion and velocity pressure-gradient term; [pair*Y + y].
struct BudgetProfile {
  int dim = 2;
  std::vector<double> y;
  std::vector<std::array<int, 2>> pairs;
  std::vector<double> production, dissipation, transport, diffusion, pressure;
};

BudgetProfile budget_terms(const Grid<double>& g, const SliceMap& slices,
                           std::span<const std::vector<double>> velocity_frames,
                           std::span<const std::vector<double>> pressure_frames);

struct LossWeights {
  std::array<double, 3> mean{1, 1, 1};
  std::array<double, 9> cov{1, 1, 1, 1, 1, 1, 1, 1, 1};  // [a*3 + b]
  double per_frame = 0;
  double source = 0;
  double divergence = 0;
  double weight_decay = 0;

  // Weight set for turbulent channel flow statistics.
  static LossWeights channel();
  void validate() const;
};

// Weighted mean-squared profile mismatch of the window average plus per-frame
// terms. When `grad` is non-null it receives d loss / d frame moments.
double stats_loss(std::span<const SliceMoments> frames, const SliceMoments& reference, const LossWeights& weights,
                  std::vector<SliceMoments>* grad = nullptr);

// Sum over profiles of max-normalised, cell-size-weighted squared errors.
double aggregate_error(std::span<const std::vector<double>> profiles, std::span<const std::vector<double>> reference,
                       std::span<const double> dy);
// U+ and the wall-unit normal and shear stresses of two profiles.
double aggregate_error(const StatsProfile& result, const StatsProfile& reference, std::span<const double> dy);

// Skin-friction coefficient per boundary face of one block side, with the
// tangential velocity taken along the face's first tangential axis.
std::vector<double> skin_friction(const Domain& domain, std::span<const double> u, std::span<const double> ub,
                                  int block, int side, double nu, double bulk_velocity);

// Vorticity with the solver's gradient operator: one component in 2D, three in 3D.
std::vector<double> vorticity(const Grid<double>& g, std::span<const double> u);
double vorticity_correlation(std::span<const double> w, std::span<const double> w_ref);

// Temporal two-point correlation R_ab(lag) at zero separation. Series are
// frame-major: s[t*points + k]; fluctuations are taken about each point's
// temporal mean.
std::vector<double> temporal_correlation(std::span<const double> series_a, std::span<const double> series_b,
                                         int points, int max_lag);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;
  void write(std::ostream& os) const;
};

CsvTable profile_table(const StatsProfile& p);
CsvTable budget_table(const BudgetProfile& b);
CsvTable correlation_table(std::span<const double> values, double lag_step);

}  // namespace pisoflow
