#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gmflab::pnp {

/// Thermal voltage k_B*T/e at 298.15 K in volts. Potentials in this module are
/// in units of the system's thermal voltage (1.0 by default); multiply by this
/// constant to express them in volts at room temperature.
inline constexpr double kThermalVoltageSI = 0.025692579;

struct Species {
  std::string name;
  int valence = 1;
  double diffusivity = 1.0;
  double initial_concentration = 1.0;
};

/// 1D cell between blocking electrodes at x = 0 (potential +U0) and x = L
/// (potential -U0). The grid has `cells` intervals and cells+1 nodes;
/// concentrations and potential both live on nodes (vertex-centered finite
/// volumes with half volumes at the electrodes). Nondimensional: e = 1.
struct PnpSystem {
  double length = 1.0;
  std::size_t cells = 64;
  std::vector<Species> species;
  double thermal_voltage = 1.0;
  double permittivity = 1.0;
  double electrode_potential = 0.0;

  /// Throws ConfigError: cells < 16, non-neutral initial charge, non-positive
  /// length/permittivity/diffusivity/thermal voltage, negative concentrations.
  void validate() const;

  std::size_t nodes() const noexcept { return cells + 1; }
  double spacing() const noexcept { return length / static_cast<double>(cells); }
  double node_position(std::size_t k) const noexcept { return spacing() * static_cast<double>(k); }
  /// Control-volume width of node k (h inside, h/2 at the electrodes).
  double volume(std::size_t k) const noexcept;
  /// sqrt(eps * V_T / sum_p z_p^2 c_p^0).
  double debye_length() const;

  /// Monovalent +1/-1 pair at concentration c0 with unit diffusivities and
  /// permittivity chosen so that debye_length() equals `debye`.
  static PnpSystem symmetric_binary(double debye, double c0 = 1.0, double u0 = 0.0,
                                    std::size_t cells = 64, double length = 1.0);
};

struct PnpState {
  std::vector<std::vector<double>> concentrations;  // [species][node], each >= 0
  std::vector<double> potential;                   // [node]
  double time = 0.0;
};

struct PoissonResult {
  std::vector<double> potential;
  /// max_k |phi_{k-1} - 2 phi_k + phi_{k+1} + h^2 rho_k / eps| over interior nodes.
  double residual = 0.0;
};

/// Solves phi'' = -rho/eps with phi(0) = U0, phi(L) = -U0 by second-order
/// finite differences and tridiagonal elimination. `rho` holds one value per node.
PoissonResult solve_poisson(std::span<const double> rho, const PnpSystem& system);

/// x / (exp(x) - 1), stable near 0.
double bernoulli(double x);

/// Scharfetter-Gummel flux from the left node to the right node. `dphi` is
/// phi_right - phi_left, `h` the node spacing. Exact for a constant field
/// between the nodes; zero when c_r / c_l = exp(-z dphi / V_T).
double sg_flux(double c_left, double c_right, double dphi, double diffusivity, int valence,
               double h, double thermal_voltage = 1.0);

/// Net charge density sum_p z_p c_p per node.
std::vector<double> charge_density(const PnpState& state, const PnpSystem& system);

/// Uniform concentrations and the matching Laplace potential at t = 0.
PnpState initial_state(const PnpSystem& system);

struct StepOptions {
  double tolerance = 1e-10;
  std::size_t max_sweeps = 500;
};

/// One implicit-Euler step with Gummel decoupling: each sweep solves a
/// nonlinear Poisson problem with Boltzmann-predicted charge, then one linear
/// drift-diffusion system per species, until the relative change between
/// sweeps falls below options.tolerance. Zero ion flux at both electrodes.
/// Throws ConfigError for dt <= 0 and ConvergenceError after max_sweeps.
PnpState transient_step(const PnpState& state, double dt, const PnpSystem& system,
                        const StepOptions& options = {});

struct SteadyOptions {
  double tolerance = 1e-10;  // on max relative change per unit time
  double initial_dt = 1e-3;
  double max_dt = 10.0;
  double growth = 1.5;
  std::size_t max_steps = 5000;
  StepOptions step{1e-12, 500};
};

struct SteadyResult {
  PnpState state;
  std::size_t steps = 0;
  double last_rate = 0.0;
};

/// Time-marches from initial_state() with a growing step until the relative
/// change per unit time drops below options.tolerance.
SteadyResult solve_steady(const PnpSystem& system, const SteadyOptions& options = {});

/// SG face fluxes of one species (cells entries).
std::vector<double> face_fluxes(const PnpState& state, const PnpSystem& system, std::size_t species);

/// Total amount sum_k V_k c_k of one species.
double total_amount(const PnpState& state, const PnpSystem& system, std::size_t species);

/// |(phi_i - phi_j) - (V_T / z) ln(c_j / c_i)| for nodes i, j. Vanishes in
/// thermal equilibrium. Throws DomainError if either concentration is <= 0.
double nernst_check(const PnpState& state, const PnpSystem& system, std::size_t species,
                    std::size_t node_i, std::size_t node_j);

/// Largest nernst_check over all node pairs, in O(N) via the extremes of
/// phi + (V_T / z) ln c.
double max_nernst_deviation(const PnpState& state, const PnpSystem& system, std::size_t species);

/// Position of the first sign change of phi (linear interpolation), or a
/// negative value if phi does not change sign.
double potential_zero_crossing(const PnpState& state, const PnpSystem& system);

}  // namespace gmflab::pnp
