#include "gmflab/gmf.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "gmflab/errors.hpp"
#include "gmflab/loss.hpp"

namespace gmflab::gmf {

void GmfConfig::validate() const {
  if (dims.size() < 2) {
    throw ConfigError(fmt::format("gmf: need at least 2 modalities, got {}", dims.size()), "dims");
  }
  for (std::size_t l : dims)
    if (l < 1) throw ConfigError("gmf: every modality dimension must be >= 1", "dims");
  if (magnification < 2) {
    throw ConfigError(fmt::format("gmf: magnification must be >= 2, got {}", magnification), "n");
  }
  if (!(boundary_fraction > 0.0 && boundary_fraction < 1.0)) {
    throw ConfigError("gmf: boundary fraction must lie in (0, 1)", "boundary");
  }
  for (std::size_t j = 0; j < dims.size(); ++j) {
    const std::size_t b = boundary(j);
    if (b == 0 || b >= dissolved_dim(j)) {
      throw ConfigError(fmt::format("gmf: boundary {} of modality {} leaves an empty band", b, j),
                        "boundary");
    }
  }
  if (!std::isfinite(lambda_dis) || lambda_dis < 0.0) {
    throw ConfigError("gmf: reconstruction weight must be finite and >= 0", "lambda");
  }
}

std::size_t GmfConfig::min_dim() const {
  if (dims.empty()) throw ConfigError("gmf: no modalities", "dims");
  return *std::min_element(dims.begin(), dims.end());
}

std::size_t GmfConfig::boundary(std::size_t j) const {
  // The small offset keeps exact products such as 0.5*4*512 from flooring low
  // after rounding in the multiplication.
  const double raw = boundary_fraction * static_cast<double>(dissolved_dim(j));
  return static_cast<std::size_t>(std::floor(raw + 1e-9));
}

namespace {

std::string map_name(const char* stem, std::size_t j) { return fmt::format("{}.{}", stem, j); }

template <typename Make>
GmfParams build(const GmfConfig& config, Make make) {
  config.validate();
  GmfParams p;
  const std::size_t ls = config.min_dim();
  for (std::size_t j = 0; j < config.modalities(); ++j) {
    const std::size_t l = config.dims[j];
    const std::size_t nl = config.dissolved_dim(j);
    const std::size_t b = config.boundary(j);
    ModalityMaps m;
    m.dis = make(map_name("P_dis", j), l, nl);
    m.cinv = make(map_name("P_cinv", j), b, ls);
    m.cspec = make(map_name("P_cspec", j), nl - b, l);
    m.recon = make(map_name("P_recon", j), l + ls, l);
    p.maps.push_back(std::move(m));
  }
  return p;
}

void check_features(std::size_t count, const GmfConfig& config) {
  config.validate();
  if (count != config.modalities()) {
    throw ShapeError(
        fmt::format("gmf: {} feature blocks for {} modalities", count, config.modalities()));
  }
}

void check_width(std::size_t got, std::size_t want, std::size_t j) {
  if (got != want) {
    throw ShapeError(fmt::format("gmf: modality {} feature has length {}, expected {}", j, got, want));
  }
}

}  // namespace

GmfParams GmfParams::init(const GmfConfig& config, Rng& rng) {
  return build(config, [&rng](const std::string& name, std::size_t in, std::size_t out) {
    return Linear(name, in, out, rng);
  });
}

GmfParams GmfParams::zeros(const GmfConfig& config) {
  return build(config, [](const std::string& name, std::size_t in, std::size_t out) {
    return Linear::zeros(name, in, out);
  });
}

std::vector<Parameter*> GmfParams::parameters() {
  std::vector<Parameter*> out;
  for (auto& m : maps) {
    for (Linear* l : {&m.dis, &m.cinv, &m.cspec, &m.recon}) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
  }
  return out;
}

std::uint64_t GmfParams::element_count() const {
  std::uint64_t n = 0;
  for (const auto& m : maps)
    n += m.dis.parameter_count() + m.cinv.parameter_count() + m.cspec.parameter_count() +
         m.recon.parameter_count();
  return n;
}

std::vector<NamedMatrix> GmfParams::to_named() const {
  std::vector<NamedMatrix> out;
  for (const auto& m : maps) {
    for (const Linear* l : {&m.dis, &m.cinv, &m.cspec, &m.recon}) {
      out.push_back({l->weight.name, l->weight.value});
      out.push_back({l->bias.name, l->bias.value});
    }
  }
  return out;
}

GmfParams GmfParams::from_named(const GmfConfig& config, std::span<const NamedMatrix> entries) {
  GmfParams p = zeros(config);
  for (Parameter* param : p.parameters()) {
    const Matrix& stored = find_entry(entries, param->name);
    if (!stored.same_shape(param->value)) {
      throw ShapeError(fmt::format("gmf: stored {} is {}, config expects {}", param->name,
                                   stored.shape_str(), param->value.shape_str()));
    }
    param->value = stored;
  }
  return p;
}

SplitResult element_split(Tape& tape, Var x, const GmfConfig& config, std::size_t j,
                          GmfParams& params) {
  config.validate();
  if (j >= config.modalities()) throw ContractError("element_split: modality index out of range");
  check_width(x.cols(), config.dims[j], j);
  ModalityMaps& m = params.maps.at(j);
  const std::size_t nl = config.dissolved_dim(j);
  const std::size_t b = config.boundary(j);

  Var dissolved = m.dis.apply(tape, x);
  Var inv = m.cinv.apply(tape, slice_cols(dissolved, 0, b));
  Var spec = m.cspec.apply(tape, slice_cols(dissolved, b, nl));
  return {inv, spec};
}

FusionOutput gmf_forward(Tape& tape, std::span<const Var> features, const GmfConfig& config,
                         GmfParams& params) {
  check_features(features.size(), config);
  const std::size_t d = config.modalities();
  const std::size_t batch = features.front().rows();
  for (std::size_t j = 0; j < d; ++j) {
    if (features[j].rows() != batch) throw ShapeError("gmf_forward: batch sizes differ");
  }

  FusionOutput out;
  out.barrier = config.barrier_enabled;
  out.modalities.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    Var x = config.barrier_enabled ? gradient_barrier(features[j], LossScope::fusion) : features[j];
    auto [inv, spec] = element_split(tape, x, config, j, params);
    out.modalities[j].z_inv = inv;
    out.modalities[j].z_spec = spec;
  }
  for (std::size_t j = 0; j < d; ++j) {
    ModalityOutput& mo = out.modalities[j];
    mo.z = concat_cols(out.modalities[(j + 1) % d].z_inv, mo.z_spec);
    mo.recon = params.maps[j].recon.apply(tape, mo.z);
  }
  return out;
}

Var reconstruction_loss(const FusionOutput& output, std::span<const Var> originals) {
  if (originals.size() != output.modalities.size()) {
    throw ShapeError(fmt::format("reconstruction_loss: {} originals for {} modalities",
                                 originals.size(), output.modalities.size()));
  }
  Var total;
  for (std::size_t j = 0; j < originals.size(); ++j) {
    Var target = output.barrier ? gradient_barrier(originals[j], LossScope::fusion) : originals[j];
    Var term = mse_loss(output.modalities[j].recon, target);
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

FusionValues gmf_evaluate(std::span<const Matrix> features, const GmfConfig& config,
                          const GmfParams& params) {
  check_features(features.size(), config);
  const std::size_t d = config.modalities();
  FusionValues v;
  for (std::size_t j = 0; j < d; ++j) {
    check_width(features[j].cols(), config.dims[j], j);
    const ModalityMaps& m = params.maps.at(j);
    const Matrix dissolved = m.dis.apply(features[j]);
    const std::size_t b = config.boundary(j);
    v.z_inv.push_back(m.cinv.apply(dissolved.cols_range(0, b)));
    v.z_spec.push_back(m.cspec.apply(dissolved.cols_range(b, config.dissolved_dim(j))));
  }
  for (std::size_t j = 0; j < d; ++j) {
    const std::array<Matrix, 2> parts{v.z_inv[(j + 1) % d], v.z_spec[j]};
    v.z.push_back(concat_cols(parts));
    v.recon.push_back(params.maps[j].recon.apply(v.z.back()));
  }
  return v;
}

std::uint64_t weight_count(const GmfConfig& config) {
  config.validate();
  const std::uint64_t ls = config.min_dim();
  std::uint64_t total = 0;
  for (std::size_t j = 0; j < config.modalities(); ++j) {
    const std::uint64_t l = config.dims[j];
    const std::uint64_t nl = config.dissolved_dim(j);
    const std::uint64_t b = config.boundary(j);
    total += nl * l + ls * b + l * (nl - b) + l * (l + ls);
  }
  return total;
}

std::uint64_t param_count(const GmfConfig& config) {
  config.validate();
  const std::uint64_t ls = config.min_dim();
  std::uint64_t biases = 0;
  for (std::size_t j = 0; j < config.modalities(); ++j) {
    biases += config.dissolved_dim(j) + ls + 2 * config.dims[j];
  }
  return weight_count(config) + biases;
}

double flops_estimate(const GmfConfig& config) {
  return 2.0 * static_cast<double>(weight_count(config));
}

}  // namespace gmflab::gmf
