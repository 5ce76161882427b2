#include "gmflab/pnp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "gmflab/errors.hpp"

namespace gmflab::pnp {

namespace {

// Thomas algorithm; a = sub, b = diag, c = super. a[0] and c[n-1] are unused.
std::vector<double> solve_tridiagonal(std::vector<double> a, std::vector<double> b,
                                      std::vector<double> c, std::vector<double> d) {
  const std::size_t n = b.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = a[i] / b[i - 1];
    b[i] -= m * c[i - 1];
    d[i] -= m * d[i - 1];
  }
  std::vector<double> x(n);
  x[n - 1] = d[n - 1] / b[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) x[i] = (d[i] - c[i] * x[i + 1]) / b[i];
  return x;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const std::vector<double>& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

void check_state(const PnpState& state, const PnpSystem& system) {
  if (state.concentrations.size() != system.species.size())
    throw ShapeError(fmt::format("pnp state has {} species, system has {}", state.concentrations.size(),
                                 system.species.size()));
  for (const auto& c : state.concentrations)
    if (c.size() != system.nodes())
      throw ShapeError(fmt::format("pnp concentration has {} nodes, expected {}", c.size(), system.nodes()));
  if (state.potential.size() != system.nodes())
    throw ShapeError(fmt::format("pnp potential has {} nodes, expected {}", state.potential.size(),
                                 system.nodes()));
}

// Fraction of the equilibrium (Boltzmann) charge response that the ions can
// realize within one implicit step. For a Fourier mode k on a uniform
// background the drift-diffusion update responds with g(k) = Dk^2dt/(1+Dk^2dt)
// and a Gummel sweep that predicts a response f contracts the error by
// |f - g(k)| / (lambda^2 k^2 + f). Pick f minimizing the worst mode.
double response_fraction(double dt, const PnpSystem& system) {
  double w = 0.0, dsum = 0.0;
  for (const Species& sp : system.species) {
    const double q = sp.valence * sp.valence * sp.initial_concentration;
    w += q;
    dsum += q * sp.diffusivity;
  }
  if (!(w > 0.0)) return 1.0;
  const double d = dsum / w;
  const double lam2 = system.permittivity * system.thermal_voltage / w;
  const auto worst = [&](double f) {
    double m = 0.0;
    for (std::size_t j = 1; j <= system.cells; ++j) {
      const double k = std::numbers::pi * static_cast<double>(j) / system.length;
      const double dk = d * k * k * dt;
      m = std::max(m, std::abs(f - dk / (1.0 + dk)) / (lam2 * k * k + f));
    }
    return m;
  };
  double best = 1.0, best_m = worst(1.0);
  for (int i = 0; i <= 160; ++i) {
    const double f = std::pow(10.0, -8.0 + 0.05 * i);
    const double m = worst(f);
    if (m < best_m) {
      best = f;
      best_m = m;
    }
  }
  return best;
}

// Newton solve of the Poisson problem with the charge predicted from a
// fraction of the Boltzmann response to the potential change relative to
// phi_ref. This keeps the Gummel loop stable when dt is large compared to the
// dielectric relaxation time.
std::vector<double> nonlinear_poisson(const std::vector<std::vector<double>>& conc,
                                      const std::vector<double>& phi_ref, double fraction,
                                      const PnpSystem& system) {
  const std::size_t n = system.nodes();
  const double h = system.spacing();
  const double k = h * h / system.permittivity;
  const double vt = system.thermal_voltage;
  std::vector<double> phi = phi_ref;
  phi.front() = system.electrode_potential;
  phi.back() = -system.electrode_potential;
  for (int it = 0; it < 100; ++it) {
    std::vector<double> a(n, 0.0), b(n, 1.0), c(n, 0.0), r(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      double rho = 0.0, drho = 0.0;
      for (std::size_t p = 0; p < system.species.size(); ++p) {
        const double z = system.species[p].valence;
        const double e = std::exp(-z * (phi[i] - phi_ref[i]) / vt);
        rho += z * conc[p][i] * (1.0 + fraction * (e - 1.0));
        drho -= fraction * z * z * conc[p][i] * e / vt;
      }
      r[i] = -(phi[i - 1] - 2.0 * phi[i] + phi[i + 1] + k * rho);
      a[i] = 1.0;
      c[i] = 1.0;
      b[i] = -2.0 + k * drho;
    }
    const std::vector<double> delta = solve_tridiagonal(a, b, c, r);
    double change = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      phi[i] += delta[i];
      change = std::max(change, std::abs(delta[i]));
    }
    if (change <= 1e-15 * std::max(1.0, max_abs(phi))) break;
  }
  return phi;
}

// Implicit-Euler drift-diffusion solve for one species with a frozen potential.
std::vector<double> species_update(const std::vector<double>& c_old, const std::vector<double>& phi,
                                   double dt, const Species& sp, const PnpSystem& system) {
  const std::size_t n = system.nodes();
  const double g = sp.diffusivity / system.spacing();
  std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = system.volume(i);
    b[i] = v / dt;
    d[i] = v * c_old[i] / dt;
  }
  for (std::size_t f = 0; f + 1 < n; ++f) {
    const double u = sp.valence * (phi[f + 1] - phi[f]) / system.thermal_voltage;
    const double bp = g * bernoulli(u);
    const double bm = g * bernoulli(-u);
    // J_f = bp * c_f - bm * c_{f+1} leaves node f and enters node f+1.
    b[f] += bp;
    c[f] -= bm;
    a[f + 1] -= bp;
    b[f + 1] += bm;
  }
  return solve_tridiagonal(std::move(a), std::move(b), std::move(c), std::move(d));
}

}  // namespace

double PnpSystem::volume(std::size_t k) const noexcept {
  const double h = spacing();
  return (k == 0 || k == cells) ? 0.5 * h : h;
}

void PnpSystem::validate() const {
  if (cells < 16) throw ConfigError(fmt::format("pnp grid needs at least 16 cells, got {}", cells), "cells");
  if (!(length > 0.0) || !std::isfinite(length)) throw ConfigError("pnp length must be positive", "length");
  if (!(permittivity > 0.0) || !std::isfinite(permittivity))
    throw ConfigError("pnp permittivity must be positive", "permittivity");
  if (!(thermal_voltage > 0.0) || !std::isfinite(thermal_voltage))
    throw ConfigError("pnp thermal voltage must be positive", "thermal_voltage");
  if (!std::isfinite(electrode_potential)) throw ConfigError("pnp electrode potential must be finite", "u0");
  if (species.empty()) throw ConfigError("pnp system needs at least one species", "species");
  double charge = 0.0, scale = 0.0;
  for (const Species& s : species) {
    if (s.valence == 0) throw ConfigError(fmt::format("species '{}' has zero valence", s.name), "species");
    if (!(s.diffusivity > 0.0) || !std::isfinite(s.diffusivity))
      throw ConfigError(fmt::format("species '{}' needs a positive diffusivity", s.name), "species");
    if (!(s.initial_concentration >= 0.0) || !std::isfinite(s.initial_concentration))
      throw ConfigError(fmt::format("species '{}' needs a nonnegative concentration", s.name), "species");
    charge += s.valence * s.initial_concentration;
    scale += std::abs(s.valence) * s.initial_concentration;
  }
  if (std::abs(charge) > 1e-12 * std::max(scale, 1.0))
    throw ConfigError(fmt::format("initial charge {} is not neutral", charge), "species");
}

double PnpSystem::debye_length() const {
  double s = 0.0;
  for (const Species& sp : species) s += sp.valence * sp.valence * sp.initial_concentration;
  if (!(s > 0.0)) throw DomainError("debye length undefined without ions");
  return std::sqrt(permittivity * thermal_voltage / s);
}

PnpSystem PnpSystem::symmetric_binary(double debye, double c0, double u0, std::size_t cells, double length) {
  PnpSystem sys;
  sys.length = length;
  sys.cells = cells;
  sys.electrode_potential = u0;
  sys.species = {{"cation", 1, 1.0, c0}, {"anion", -1, 1.0, c0}};
  sys.permittivity = debye * debye * 2.0 * c0 / sys.thermal_voltage;
  return sys;
}

PoissonResult solve_poisson(std::span<const double> rho, const PnpSystem& system) {
  if (system.cells < 2) throw ConfigError("poisson solve needs at least 2 cells", "cells");
  if (!(system.permittivity > 0.0)) throw ConfigError("pnp permittivity must be positive", "permittivity");
  const std::size_t n = system.nodes();
  if (rho.size() != n) throw ShapeError(fmt::format("charge density has {} entries, expected {}", rho.size(), n));
  const double h = system.spacing();
  const double k = h * h / system.permittivity;
  const double u0 = system.electrode_potential;

  // Unknowns are the interior nodes; boundary values move to the right side.
  const std::size_t m = n - 2;
  std::vector<double> a(m, 1.0), b(m, -2.0), c(m, 1.0), d(m);
  for (std::size_t i = 0; i < m; ++i) d[i] = -k * rho[i + 1];
  d.front() -= u0;
  d.back() -= -u0;
  const std::vector<double> inner = solve_tridiagonal(a, b, c, d);

  PoissonResult out;
  out.potential.resize(n);
  out.potential.front() = u0;
  out.potential.back() = -u0;
  std::copy(inner.begin(), inner.end(), out.potential.begin() + 1);
  const auto& phi = out.potential;
  for (std::size_t i = 1; i + 1 < n; ++i)
    out.residual = std::max(out.residual, std::abs(phi[i - 1] - 2.0 * phi[i] + phi[i + 1] + k * rho[i]));
  return out;
}

double bernoulli(double x) {
  const double ax = std::abs(x);
  if (ax < 1e-5) return 1.0 - 0.5 * x + x * x / 12.0;
  if (x > 700.0) return x * std::exp(-x);
  return x / std::expm1(x);
}

double sg_flux(double c_left, double c_right, double dphi, double diffusivity, int valence, double h,
               double thermal_voltage) {
  const double u = valence * dphi / thermal_voltage;
  return diffusivity / h * (bernoulli(u) * c_left - bernoulli(-u) * c_right);
}

std::vector<double> charge_density(const PnpState& state, const PnpSystem& system) {
  check_state(state, system);
  std::vector<double> rho(system.nodes(), 0.0);
  for (std::size_t p = 0; p < system.species.size(); ++p)
    for (std::size_t i = 0; i < rho.size(); ++i) rho[i] += system.species[p].valence * state.concentrations[p][i];
  return rho;
}

PnpState initial_state(const PnpSystem& system) {
  system.validate();
  PnpState s;
  for (const Species& sp : system.species) s.concentrations.emplace_back(system.nodes(), sp.initial_concentration);
  s.potential.assign(system.nodes(), 0.0);
  s.potential = solve_poisson(charge_density(s, system), system).potential;
  return s;
}

PnpState transient_step(const PnpState& state, double dt, const PnpSystem& system, const StepOptions& options) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError(fmt::format("time step must be positive, got {}", dt), "dt");
  check_state(state, system);

  const double fraction = response_fraction(dt, system);
  PnpState next = state;
  next.time = state.time + dt;
  double change = std::numeric_limits<double>::infinity();
  for (std::size_t sweep = 0; sweep < options.max_sweeps; ++sweep) {
    const std::vector<double> phi = nonlinear_poisson(next.concentrations, next.potential, fraction, system);
    double scale = 0.0;
    change = 0.0;
    for (std::size_t p = 0; p < system.species.size(); ++p) {
      std::vector<double> c = species_update(state.concentrations[p], phi, dt, system.species[p], system);
      change = std::max(change, max_abs_diff(c, next.concentrations[p]));
      scale = std::max(scale, max_abs(c));
      next.concentrations[p] = std::move(c);
    }
    const double dphi = max_abs_diff(phi, next.potential);
    next.potential = phi;
    change = std::max(change / std::max(scale, 1e-300), dphi / std::max(max_abs(phi), system.thermal_voltage));
    if (change < options.tolerance) return next;
  }
  throw ConvergenceError(fmt::format("gummel iteration stalled after {} sweeps", options.max_sweeps), change);
}

SteadyResult solve_steady(const PnpSystem& system, const SteadyOptions& options) {
  SteadyResult r;
  r.state = initial_state(system);
  double dt = options.initial_dt;
  r.last_rate = std::numeric_limits<double>::infinity();
  for (r.steps = 0; r.steps < options.max_steps;) {
    PnpState next = transient_step(r.state, dt, system, options.step);
    ++r.steps;
    double change = 0.0, scale = 0.0;
    for (std::size_t p = 0; p < system.species.size(); ++p) {
      change = std::max(change, max_abs_diff(next.concentrations[p], r.state.concentrations[p]));
      scale = std::max(scale, max_abs(next.concentrations[p]));
    }
    r.last_rate = change / std::max(scale, 1e-300) / dt;
    r.state = std::move(next);
    if (r.last_rate < options.tolerance) return r;
    dt = std::min(dt * options.growth, options.max_dt);
  }
  throw ConvergenceError(fmt::format("steady state not reached in {} steps", options.max_steps), r.last_rate);
}

std::vector<double> face_fluxes(const PnpState& state, const PnpSystem& system, std::size_t species) {
  check_state(state, system);
  if (species >= system.species.size()) throw ShapeError(fmt::format("no species {}", species));
  const Species& sp = system.species[species];
  const auto& c = state.concentrations[species];
  const auto& phi = state.potential;
  std::vector<double> j(system.cells);
  for (std::size_t f = 0; f < system.cells; ++f)
    j[f] = sg_flux(c[f], c[f + 1], phi[f + 1] - phi[f], sp.diffusivity, sp.valence, system.spacing(),
                   system.thermal_voltage);
  return j;
}

double total_amount(const PnpState& state, const PnpSystem& system, std::size_t species) {
  check_state(state, system);
  if (species >= system.species.size()) throw ShapeError(fmt::format("no species {}", species));
  double s = 0.0;
  const auto& c = state.concentrations[species];
  for (std::size_t i = 0; i < c.size(); ++i) s += system.volume(i) * c[i];
  return s;
}

double nernst_check(const PnpState& state, const PnpSystem& system, std::size_t species, std::size_t node_i,
                    std::size_t node_j) {
  check_state(state, system);
  if (species >= system.species.size()) throw ShapeError(fmt::format("no species {}", species));
  if (node_i >= system.nodes() || node_j >= system.nodes())
    throw ShapeError(fmt::format("node index out of range ({} nodes)", system.nodes()));
  const auto& c = state.concentrations[species];
  if (!(c[node_i] > 0.0) || !(c[node_j] > 0.0))
    throw DomainError(fmt::format("nernst check needs positive concentrations at nodes {} and {}", node_i, node_j));
  const double z = system.species[species].valence;
  const double dphi = state.potential[node_i] - state.potential[node_j];
  return std::abs(dphi - system.thermal_voltage / z * std::log(c[node_j] / c[node_i]));
}

double max_nernst_deviation(const PnpState& state, const PnpSystem& system, std::size_t species) {
  check_state(state, system);
  if (species >= system.species.size()) throw ShapeError(fmt::format("no species {}", species));
  const auto& c = state.concentrations[species];
  const double z = system.species[species].valence;
  // nernst_check(i, j) = |g_i - g_j| with g = phi + (V_T / z) ln c.
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!(c[i] > 0.0)) throw DomainError(fmt::format("nonpositive concentration at node {}", i));
    const double g = state.potential[i] + system.thermal_voltage / z * std::log(c[i]);
    lo = std::min(lo, g);
    hi = std::max(hi, g);
  }
  return hi - lo;
}

double potential_zero_crossing(const PnpState& state, const PnpSystem& system) {
  check_state(state, system);
  const auto& phi = state.potential;
  for (std::size_t i = 0; i + 1 < phi.size(); ++i) {
    if (phi[i] == 0.0) return system.node_position(i);
    if ((phi[i] > 0.0) != (phi[i + 1] > 0.0) && phi[i + 1] != 0.0) {
      const double t = phi[i] / (phi[i] - phi[i + 1]);
      return system.node_position(i) + t * system.spacing();
    }
  }
  if (phi.back() == 0.0) return system.length;
  return -1.0;
}

}  // namespace gmflab::pnp
