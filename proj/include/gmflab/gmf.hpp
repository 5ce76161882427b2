#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gmflab/autodiff.hpp"
#include "gmflab/checkpoint.hpp"
#include "gmflab/optim.hpp"

namespace gmflab::gmf {

/// Shape description of a fusion front-end.
///
/// Modality j has feature length l_j. It is dissolved to n*l_j coordinates,
/// split at b_j = floor(boundary_fraction * n * l_j) into an invariant band
/// [0, b_j) and a specific band [b_j, n*l_j), and the bands are concentrated
/// to l* = min_j l_j and l_j coordinates respectively.
struct GmfConfig {
  std::vector<std::size_t> dims;
  std::size_t magnification = 4;
  double boundary_fraction = 0.5;
  double lambda_dis = 1.0;
  bool barrier_enabled = true;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  std::size_t modalities() const noexcept { return dims.size(); }
  std::size_t min_dim() const;
  std::size_t dissolved_dim(std::size_t j) const { return magnification * dims.at(j); }
  std::size_t boundary(std::size_t j) const;
  std::size_t output_dim(std::size_t j) const { return dims.at(j) + min_dim(); }
};

/// The four maps of one modality. Weight shapes (out x in):
/// dis n*l x l, cinv l* x b, cspec l x (n*l - b), recon l x (l + l*).
struct ModalityMaps {
  Linear dis;
  Linear cinv;
  Linear cspec;
  Linear recon;
};

/// Learnable state of the front-end. Parameter names follow
/// `P_dis.<j>`, `P_cinv.<j>`, `P_cspec.<j>`, `P_recon.<j>` with a `.bias`
/// suffix for offsets; j is 0-based.
struct GmfParams {
  std::vector<ModalityMaps> maps;

  static GmfParams init(const GmfConfig& config, Rng& rng);
  static GmfParams zeros(const GmfConfig& config);

  std::vector<Parameter*> parameters();
  std::uint64_t element_count() const;

  std::vector<NamedMatrix> to_named() const;
  /// Loads values by canonical name; throws FormatError on missing names or
  /// ShapeError when stored shapes differ from `config`.
  static GmfParams from_named(const GmfConfig& config, std::span<const NamedMatrix> entries);
};

struct SplitResult {
  Var inv;   // batch x l*
  Var spec;  // batch x l_j
};

SplitResult element_split(Tape& tape, Var x, const GmfConfig& config, std::size_t j,
                          GmfParams& params);

struct ModalityOutput {
  Var z;       // [z_inv of modality (j+1) mod d, z_spec of j], batch x (l_j + l*)
  Var z_inv;   // this modality's own invariant part
  Var z_spec;
  Var recon;   // batch x l_j
};

struct FusionOutput {
  std::vector<ModalityOutput> modalities;
  bool barrier = false;
};

/// Runs the front-end on one batch per modality. With the barrier enabled,
/// the features are read through a barrier that stops fusion-scoped adjoints,
/// so the reconstruction loss trains only the maps while task-scoped
/// gradients still reach the features through Z.
FusionOutput gmf_forward(Tape& tape, std::span<const Var> features, const GmfConfig& config,
                         GmfParams& params);

/// Sum over modalities of mse_loss(recon_j, original_j). Originals are read
/// through a fusion-scoped barrier when the output was built with one.
Var reconstruction_loss(const FusionOutput& output, std::span<const Var> originals);

/// Tape-free forward pass for evaluation. Bitwise equal to gmf_forward's values.
struct FusionValues {
  std::vector<Matrix> z;
  std::vector<Matrix> z_inv;
  std::vector<Matrix> z_spec;
  std::vector<Matrix> recon;
};
FusionValues gmf_evaluate(std::span<const Matrix> features, const GmfConfig& config,
                          const GmfParams& params);

/// Weights plus biases of all four maps across modalities.
std::uint64_t param_count(const GmfConfig& config);
/// Weights only.
std::uint64_t weight_count(const GmfConfig& config);
/// 2 x weight_count: multiply-accumulates of one forward pass, reconstruction included.
double flops_estimate(const GmfConfig& config);

}  // namespace gmflab::gmf
