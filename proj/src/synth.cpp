#include "gmflab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "gmflab/autodiff.hpp"
#include "gmflab/errors.hpp"
#include "gmflab/loss.hpp"
#include "gmflab/rng.hpp"

namespace gmflab::synth {

namespace {

Matrix normal_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

std::vector<Matrix> subset(const std::vector<Matrix>& feats, const std::vector<std::size_t>& idx) {
  std::vector<Matrix> out;
  out.reserve(feats.size());
  for (const Matrix& f : feats) out.push_back(f.rows_subset(idx));
  return out;
}

std::vector<int> subset(const std::vector<int>& labels, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

bool uses_gmf(FusionMethod m) { return m != FusionMethod::concat; }

// Copies a stored matrix into a parameter after checking its shape.
void load_into(Parameter& p, std::span<const NamedMatrix> entries) {
  const Matrix& v = find_entry(entries, p.name);
  if (!v.same_shape(p.value))
    throw ShapeError(fmt::format("entry '{}' has shape {}, expected {}", p.name, v.shape_str(), p.value.shape_str()));
  p.value = v;
}

gmf::GmfConfig effective_gmf(const gmf::GmfConfig& base, const TrainConfig& cfg) {
  gmf::GmfConfig g = base;
  g.lambda_dis = cfg.lambda_dis;
  g.barrier_enabled = cfg.method == FusionMethod::gmf;
  return g;
}

std::size_t head_input(const SyntheticSpec& spec, FusionMethod method, const std::optional<gmf::GmfConfig>& g) {
  std::size_t n = 0;
  if (!uses_gmf(method)) {
    for (std::size_t m : spec.observed_dims) n += m;
    return n;
  }
  for (std::size_t j = 0; j < g->modalities(); ++j) n += g->output_dim(j);
  return n;
}

FusionModel empty_model(const SyntheticSpec& spec, FusionMethod method, ExtractorMode extractor,
                        const std::optional<gmf::GmfConfig>& g) {
  FusionModel m;
  m.method = method;
  m.extractor = extractor;
  if (uses_gmf(method)) {
    if (!g) throw ContractError(fmt::format("method '{}' needs a fusion config", to_string(method)));
    if (g->dims != spec.observed_dims) throw ContractError("fusion dims must equal the observed modality dims");
    g->validate();
    m.gmf_config = g;
    m.gmf_params = gmf::GmfParams::zeros(*g);
  } else if (g) {
    throw ContractError("concat baseline takes no fusion config");
  }
  if (extractor == ExtractorMode::trainable)
    for (std::size_t j = 0; j < spec.modalities(); ++j) {
      const std::size_t d = spec.observed_dims[j];
      m.extractors.push_back(Linear::zeros(fmt::format("E.{}", j), d, d));
    }
  m.head = Linear::zeros("head", head_input(spec, method, g), spec.classes);
  return m;
}

// Logits on the tape; also returns L_dis for GMF models (invalid Var otherwise).
struct TapeForward {
  Var logits;
  Var l_dis;
};

TapeForward forward_on_tape(Tape& tape, FusionModel& model, std::span<const Matrix> inputs) {
  std::vector<Var> feats;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    Var x = tape.constant(inputs[j]);
    if (model.extractor == ExtractorMode::trainable) x = tanh(model.extractors[j].apply(tape, x));
    feats.push_back(x);
  }
  TapeForward out;
  Var h;
  if (!uses_gmf(model.method)) {
    h = concat_cols(feats);
  } else {
    const gmf::FusionOutput fo = gmf::gmf_forward(tape, feats, *model.gmf_config, model.gmf_params);
    std::vector<Var> zs;
    for (const auto& mo : fo.modalities) zs.push_back(mo.z);
    h = concat_cols(zs);
    out.l_dis = gmf::reconstruction_loss(fo, feats);
  }
  out.logits = model.head.apply(tape, h);
  return out;
}

std::string yes_no(bool b) { return b ? "true" : "false"; }

}  // namespace

// ---------------------------------------------------------------------------
// Spec and generation

std::size_t SyntheticSpec::latent_dim() const {
  return shared_dim + std::accumulate(specific_dims.begin(), specific_dims.end(), std::size_t{0});
}

void SyntheticSpec::validate() const {
  if (observed_dims.empty()) throw ConfigError("need at least one modality", "observed_dims");
  if (specific_dims.size() != observed_dims.size())
    throw ConfigError(fmt::format("specific_dims has {} entries for {} modalities", specific_dims.size(),
                                  observed_dims.size()),
                      "specific_dims");
  for (std::size_t m : observed_dims)
    if (m < 1) throw ConfigError("observed dims must be positive", "observed_dims");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be nonnegative", "noise");
  if (classes < 2) throw ConfigError("need at least 2 classes", "classes");
  if (samples < 2 * classes) throw ConfigError("too few samples for the class count", "samples");
  if (!(positive_fraction >= 0.0 && positive_fraction < 1.0))
    throw ConfigError("positive fraction must be in [0, 1)", "positive_fraction");
  if (positive_fraction > 0.0 && classes != 2)
    throw ConfigError("positive fraction applies to binary tasks only", "positive_fraction");
  // argmax_c <r_c, t>: a constant for K = 0, at most the two extreme
  // directions for K = 1, and every class generically for K >= 2.
  const std::size_t k = latent_dim();
  const std::size_t achievable = k == 0 ? 1 : k == 1 ? 2 : classes;
  if (classes > achievable)
    throw ConfigError(fmt::format("{} classes but a {}-dimensional latent yields at most {} labels", classes, k,
                                  achievable),
                      "classes");
}

std::vector<Matrix> Dataset::train_features() const { return subset(features, train_index); }
std::vector<Matrix> Dataset::test_features() const { return subset(features, test_index); }
std::vector<int> Dataset::train_labels() const { return subset(labels, train_index); }
std::vector<int> Dataset::test_labels() const { return subset(labels, test_index); }

Dataset generate_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t d = spec.modalities(), n = spec.samples, ks = spec.shared_dim;
  const std::size_t k = spec.latent_dim();

  Rng maps = Rng::stream(seed, "synth.maps");
  std::vector<Matrix> mixing;
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t kj = ks + spec.specific_dims[j];
    mixing.push_back(normal_matrix(spec.observed_dims[j], kj, maps, kj ? 1.0 / std::sqrt(static_cast<double>(kj)) : 0.0));
  }
  const Matrix readout = normal_matrix(spec.classes, k, maps);
  // Both the shared and every specific block must carry label weight.
  const auto block_norm = [&](std::size_t begin, std::size_t end) {
    double s = 0.0;
    for (std::size_t c = 0; c < spec.classes; ++c)
      for (std::size_t i = begin; i < end; ++i) s += readout(c, i) * readout(c, i);
    return s;
  };
  std::size_t offset = ks;
  if (ks > 0 && !(block_norm(0, ks) > 0.0)) throw ContractError("readout ignores the shared factors");
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t kj = spec.specific_dims[j];
    if (kj > 0 && !(block_norm(offset, offset + kj) > 0.0))
      throw ContractError(fmt::format("readout ignores the factors of modality {}", j));
    offset += kj;
  }

  Rng draw = Rng::stream(seed, "synth.samples");
  Dataset data;
  data.spec = spec;
  data.seed = seed;
  data.shared = normal_matrix(n, ks, draw);
  std::vector<Matrix> specific;
  for (std::size_t j = 0; j < d; ++j) specific.push_back(normal_matrix(n, spec.specific_dims[j], draw));

  Matrix latent(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t a = 0; a < ks; ++a) latent(i, c++) = data.shared(i, a);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t a = 0; a < spec.specific_dims[j]; ++a) latent(i, c++) = specific[j](i, a);
  }
  for (std::size_t j = 0; j < d; ++j) {
    Matrix own(n, ks + spec.specific_dims[j]);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t a = 0; a < ks; ++a) own(i, a) = data.shared(i, a);
      for (std::size_t a = 0; a < spec.specific_dims[j]; ++a) own(i, ks + a) = specific[j](i, a);
    }
    Matrix x = matmul_nt(own, mixing[j]);
    for (double& v : x.data()) v += spec.noise * draw.normal();
    data.features.push_back(std::move(x));
  }

  const Matrix scores = matmul_nt(latent, readout);
  if (spec.positive_fraction > 0.0) {
    std::vector<double> margin(n);
    for (std::size_t i = 0; i < n; ++i) margin[i] = scores(i, 1) - scores(i, 0);
    std::vector<double> sorted = margin;
    std::sort(sorted.begin(), sorted.end());
    const auto positives = static_cast<std::size_t>(std::llround(spec.positive_fraction * static_cast<double>(n)));
    const double threshold = positives == 0 ? std::numeric_limits<double>::infinity() : sorted[n - positives];
    data.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) data.labels[i] = margin[i] >= threshold ? 1 : 0;
  } else {
    data.labels = argmax_rows(scores);
  }

  std::vector<std::size_t> per_class(spec.classes, 0), seen(spec.classes, 0);
  for (int y : data.labels) ++per_class[static_cast<std::size_t>(y)];
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(data.labels[i]);
    const auto quota = static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(per_class[y])));
    (seen[y]++ < quota ? data.train_index : data.test_index).push_back(i);
  }
  return data;
}

std::vector<NamedMatrix> dataset_to_named(const Dataset& data) {
  std::vector<NamedMatrix> out;
  for (std::size_t j = 0; j < data.features.size(); ++j) out.push_back({fmt::format("x.{}", j), data.features[j]});
  Matrix y(data.labels.size(), 1);
  for (std::size_t i = 0; i < data.labels.size(); ++i) y[i] = data.labels[i];
  out.push_back({"labels", y});
  Matrix tr(data.train_index.size(), 1), te(data.test_index.size(), 1);
  for (std::size_t i = 0; i < data.train_index.size(); ++i) tr[i] = static_cast<double>(data.train_index[i]);
  for (std::size_t i = 0; i < data.test_index.size(); ++i) te[i] = static_cast<double>(data.test_index[i]);
  out.push_back({"train_index", tr});
  out.push_back({"test_index", te});
  out.push_back({"shared", data.shared});
  return out;
}

Dataset dataset_from_named(const SyntheticSpec& spec, std::uint64_t seed, std::span<const NamedMatrix> entries) {
  Dataset data;
  data.spec = spec;
  data.seed = seed;
  for (std::size_t j = 0; j < spec.modalities(); ++j) data.features.push_back(find_entry(entries, fmt::format("x.{}", j)));
  for (double v : find_entry(entries, "labels").data()) data.labels.push_back(static_cast<int>(v));
  for (double v : find_entry(entries, "train_index").data()) data.train_index.push_back(static_cast<std::size_t>(v));
  for (double v : find_entry(entries, "test_index").data()) data.test_index.push_back(static_cast<std::size_t>(v));
  data.shared = find_entry(entries, "shared");
  return data;
}

// ---------------------------------------------------------------------------
// Model

FusionMethod parse_method(const std::string& text) {
  if (text == "concat") return FusionMethod::concat;
  if (text == "gmf") return FusionMethod::gmf;
  if (text == "gmf-no-barrier") return FusionMethod::gmf_no_barrier;
  throw ConfigError(fmt::format("unknown fusion method '{}' (concat, gmf, gmf-no-barrier)", text), "method");
}

ExtractorMode parse_extractor(const std::string& text) {
  if (text == "frozen") return ExtractorMode::frozen_identity;
  if (text == "trainable") return ExtractorMode::trainable;
  throw ConfigError(fmt::format("unknown extractor mode '{}' (frozen, trainable)", text), "extractor");
}

std::string to_string(FusionMethod m) {
  switch (m) {
    case FusionMethod::concat: return "concat";
    case FusionMethod::gmf: return "gmf";
    case FusionMethod::gmf_no_barrier: return "gmf-no-barrier";
  }
  return "?";
}

std::string to_string(ExtractorMode m) { return m == ExtractorMode::trainable ? "trainable" : "frozen"; }

void TrainConfig::validate() const {
  if (!(sgd.lr > 0.0)) throw ConfigError("learning rate must be positive", "lr");
  if (!(sgd.momentum >= 0.0 && sgd.momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)", "momentum");
  if (!(sgd.weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative", "weight_decay");
  if (epochs < 1) throw ConfigError("need at least one epoch", "epochs");
  if (batch_size < 1) throw ConfigError("batch size must be positive", "batch_size");
  if (!(lambda_dis >= 0.0) || !std::isfinite(lambda_dis)) throw ConfigError("lambda must be nonnegative", "lambda");
}

std::vector<Matrix> FusionModel::extract(std::span<const Matrix> inputs) const {
  std::vector<Matrix> out;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    if (extractor == ExtractorMode::frozen_identity) {
      out.push_back(inputs[j]);
      continue;
    }
    Matrix f = extractors[j].apply(inputs[j]);
    for (double& v : f.data()) v = std::tanh(v);
    out.push_back(std::move(f));
  }
  return out;
}

gmf::FusionValues FusionModel::fusion_values(std::span<const Matrix> inputs) const {
  if (!gmf_config) throw ContractError("fusion values need a GMF model");
  return gmf::gmf_evaluate(extract(inputs), *gmf_config, gmf_params);
}

Matrix FusionModel::logits(std::span<const Matrix> inputs) const {
  if (!uses_gmf(method)) {
    const std::vector<Matrix> f = extract(inputs);
    return head.apply(concat_cols(f));
  }
  const gmf::FusionValues v = fusion_values(inputs);
  return head.apply(concat_cols(v.z));
}

std::vector<Parameter*> FusionModel::parameters() {
  std::vector<Parameter*> out;
  for (Linear& e : extractors) {
    out.push_back(&e.weight);
    out.push_back(&e.bias);
  }
  if (gmf_config)
    for (Parameter* p : gmf_params.parameters()) out.push_back(p);
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

std::uint64_t FusionModel::extractor_parameter_count() const {
  std::uint64_t n = 0;
  for (const Linear& e : extractors) n += e.parameter_count();
  return n;
}

std::uint64_t FusionModel::fusion_parameter_count() const { return gmf_config ? gmf_params.element_count() : 0; }
std::uint64_t FusionModel::head_parameter_count() const { return head.parameter_count(); }

std::vector<NamedMatrix> FusionModel::to_named() const {
  std::vector<NamedMatrix> out;
  for (const Linear& e : extractors) {
    out.push_back({e.weight.name, e.weight.value});
    out.push_back({e.bias.name, e.bias.value});
  }
  if (gmf_config)
    for (auto& nm : gmf_params.to_named()) out.push_back(std::move(nm));
  out.push_back({head.weight.name, head.weight.value});
  out.push_back({head.bias.name, head.bias.value});
  return out;
}

FusionModel FusionModel::from_named(const SyntheticSpec& spec, FusionMethod method, ExtractorMode extractor,
                                    const std::optional<gmf::GmfConfig>& gmf_config,
                                    std::span<const NamedMatrix> entries) {
  FusionModel m = empty_model(spec, method, extractor, gmf_config);
  for (Linear& e : m.extractors) {
    load_into(e.weight, entries);
    load_into(e.bias, entries);
  }
  if (m.gmf_config) m.gmf_params = gmf::GmfParams::from_named(*m.gmf_config, entries);
  load_into(m.head.weight, entries);
  load_into(m.head.bias, entries);
  return m;
}

// ---------------------------------------------------------------------------
// Training

TrainOutcome train_fusion(const Dataset& data, const TrainConfig& config,
                          const std::optional<gmf::GmfConfig>& gmf_config) {
  config.validate();
  const SyntheticSpec& spec = data.spec;
  std::optional<gmf::GmfConfig> g;
  if (gmf_config) g = effective_gmf(*gmf_config, config);
  if (uses_gmf(config.method) && !g)
    throw ContractError(fmt::format("method '{}' needs a fusion config", to_string(config.method)));

  TrainOutcome out;
  FusionModel& model = out.model;
  model = empty_model(spec, config.method, config.extractor, g);
  Rng init = Rng::stream(config.seed, "train.init");
  for (std::size_t j = 0; j < model.extractors.size(); ++j) {
    const std::size_t d = spec.observed_dims[j];
    model.extractors[j] = Linear(fmt::format("E.{}", j), d, d, init);
  }
  if (g) model.gmf_params = gmf::GmfParams::init(*g, init);
  model.head = Linear("head", model.head.in_features(), spec.classes, init);

  ExperimentReport& rep = out.report;
  rep.name = "gmf_train";
  rep.seeds = {config.seed};
  rep.config = {{"method", to_string(config.method)},
                {"extractor", to_string(config.extractor)},
                {"lr", format_double(config.sgd.lr)},
                {"momentum", format_double(config.sgd.momentum)},
                {"weight_decay", format_double(config.sgd.weight_decay)},
                {"epochs", std::to_string(config.epochs)},
                {"batch_size", std::to_string(config.batch_size)},
                {"lambda", format_double(config.lambda_dis)},
                {"dis_warmup_epochs", std::to_string(config.dis_warmup_epochs)},
                {"detach_reconstruction", yes_no(config.detach_reconstruction)},
                {"seed", std::to_string(config.seed)},
                {"data.seed", std::to_string(data.seed)},
                {"data.samples", std::to_string(spec.samples)},
                {"data.classes", std::to_string(spec.classes)},
                {"data.noise", format_double(spec.noise)},
                {"data.shared_dim", std::to_string(spec.shared_dim)},
                {"data.specific_dims", fmt::format("{}", fmt::join(spec.specific_dims, ","))},
                {"data.observed_dims", fmt::format("{}", fmt::join(spec.observed_dims, ","))}};
  if (g) {
    rep.config["magnification"] = std::to_string(g->magnification);
    rep.config["boundary"] = format_double(g->boundary_fraction);
    rep.config["barrier"] = yes_no(g->barrier_enabled);
  }
  rep.rows.columns = {"epoch", "task_loss", "l_dis", "train_accuracy", "test_accuracy"};

  const std::vector<Matrix> train_x = data.train_features(), test_x = data.test_features();
  const std::vector<int> train_y = data.train_labels(), test_y = data.test_labels();
  const std::vector<Parameter*> params = model.parameters();
  Rng shuffle = Rng::stream(config.seed, "train.shuffle");
  std::vector<std::size_t> order(train_y.size());
  double initial_l_dis = std::numeric_limits<double>::quiet_NaN();
  double last_l_dis = initial_l_dis;

  for (std::size_t epoch = 0; epoch < config.epochs && !out.failed; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle.shuffle(order);
    const bool dis_on = g && !config.detach_reconstruction && epoch >= config.dis_warmup_epochs;
    double task_sum = 0.0, dis_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const std::vector<Matrix> xb = subset(train_x, idx);
      const std::vector<int> yb = subset(train_y, idx);
      Tape tape;
      const TapeForward fw = forward_on_tape(tape, model, xb);
      Var task = cross_entropy_loss(fw.logits, yb);
      const double task_value = task.value()[0];
      const double dis_value = fw.l_dis.valid() ? fw.l_dis.value()[0] : 0.0;
      if (!std::isfinite(task_value) || !std::isfinite(dis_value)) {
        out.failed = true;
        rep.meta["failure"] = fmt::format("non-finite loss at epoch {} batch {} (task {}, l_dis {})", epoch,
                                          batches, task_value, dis_value);
        break;
      }
      if (std::isnan(initial_l_dis) && fw.l_dis.valid()) initial_l_dis = dis_value;
      tape.backward(task, LossScope::task);
      if (dis_on) tape.backward(scale(fw.l_dis, config.lambda_dis), LossScope::fusion);
      sgd_step(params, config.sgd);
      task_sum += task_value;
      dis_sum += dis_value;
      ++batches;
    }
    if (out.failed) break;
    const double nb = static_cast<double>(batches);
    last_l_dis = g ? dis_sum / nb : std::numeric_limits<double>::quiet_NaN();
    const Matrix train_logits = model.logits(train_x);
    if (!train_logits.all_finite()) {
      out.failed = true;
      rep.meta["failure"] = fmt::format("non-finite logits after epoch {}", epoch);
      break;
    }
    rep.rows.add_row({static_cast<std::int64_t>(epoch + 1), task_sum / nb, last_l_dis, accuracy(train_logits, train_y),
                      accuracy(model.logits(test_x), test_y)});
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::size_t last = rep.rows.rows.size();
  rep.metrics["failed"] = out.failed ? 1.0 : 0.0;
  rep.metrics["final_train_accuracy"] = last ? rep.rows.number(last - 1, "train_accuracy") : nan;
  rep.metrics["final_test_accuracy"] = last ? rep.rows.number(last - 1, "test_accuracy") : nan;
  rep.metrics["initial_l_dis"] = initial_l_dis;
  rep.metrics["final_l_dis"] = last_l_dis;
  rep.metrics["params.extractor"] = static_cast<double>(model.extractor_parameter_count());
  rep.metrics["params.fusion"] = static_cast<double>(model.fusion_parameter_count());
  rep.metrics["params.head"] = static_cast<double>(model.head_parameter_count());
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

MissingModalityMetrics missing_modality_eval(const FusionModel& model, const Dataset& data,
                                             std::optional<std::size_t> dropped) {
  const std::size_t d = data.spec.modalities();
  if (dropped && *dropped >= d)
    throw ContractError(fmt::format("cannot drop modality {} of {}", *dropped, d));
  const std::vector<Matrix> full = data.test_features();
  std::vector<Matrix> inputs = full;
  if (dropped) inputs[*dropped].fill(0.0);
  const std::vector<int> labels = data.test_labels();

  MissingModalityMetrics m;
  m.dropped = dropped;
  const Matrix logits = model.logits(inputs);
  m.accuracy = accuracy(logits, labels);
  if (data.spec.classes == 2) {
    std::vector<double> scores(logits.rows());
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = logits(i, 1) - logits(i, 0);
    const bool both = std::find(labels.begin(), labels.end(), 0) != labels.end() &&
                      std::find(labels.begin(), labels.end(), 1) != labels.end();
    if (both) m.auc = auc(scores, labels);
  }
  if (model.gmf_config && dropped) {
    const gmf::FusionValues a = model.fusion_values(full);
    const gmf::FusionValues b = model.fusion_values(inputs);
    for (std::size_t j = 0; j < d; ++j)
      if (j != *dropped && !(a.z_spec[j] == b.z_spec[j])) m.locality_holds = false;
    if (!m.locality_holds)
      throw ContractError(fmt::format("dropping modality {} changed another modality's specific part", *dropped));
  }
  return m;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ContractError(fmt::format("auc: {} scores for {} labels", scores.size(), labels.size()));
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ContractError(fmt::format("auc: label {} is not binary", y));
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ContractError("auc needs both classes");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average 1-based ranks across tied groups.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (labels[idx[t]] == 1) rank_sum += avg;
    i = j + 1;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double recall_at_k(const Matrix& queries, const Matrix& keys, std::size_t k) {
  if (queries.rows() != keys.rows() || queries.cols() != keys.cols())
    throw ShapeError(fmt::format("recall_at_k: queries {} vs keys {}", queries.shape_str(), keys.shape_str()));
  if (k < 1) throw ContractError("recall_at_k needs k >= 1");
  const auto normalized = [](const Matrix& m) {
    Matrix out = m;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double s = 0.0;
      for (double v : m.row(i)) s += v * v;
      const double inv = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
      for (double& v : out.row(i)) v *= inv;
    }
    return out;
  };
  const Matrix sim = matmul_nt(normalized(queries), normalized(keys));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    const double own = sim(i, i);
    std::size_t better = 0;
    for (std::size_t j = 0; j < sim.cols(); ++j)
      if (sim(i, j) > own || (sim(i, j) == own && j < i)) ++better;
    hits += better < k;
  }
  return static_cast<double>(hits) / static_cast<double>(sim.rows());
}

double linear_r2(const Matrix& predictors, const Matrix& target) {
  if (predictors.rows() != target.rows())
    throw ShapeError(fmt::format("linear_r2: {} vs {}", predictors.shape_str(), target.shape_str()));
  const auto n = static_cast<Eigen::Index>(predictors.rows());
  const auto p = static_cast<Eigen::Index>(predictors.cols());
  const auto q = static_cast<Eigen::Index>(target.cols());
  Eigen::MatrixXd x(n, p + 1), y(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (Eigen::Index j = 0; j < p; ++j) x(i, j + 1) = predictors(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    for (Eigen::Index j = 0; j < q; ++j) y(i, j) = target(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  const Eigen::MatrixXd beta = x.colPivHouseholderQr().solve(y);
  const double ss_res = (y - x * beta).squaredNorm();
  const double ss_tot = (y.rowwise() - y.colwise().mean()).squaredNorm();
  if (!(ss_tot > 0.0)) throw DomainError("linear_r2: target has no variance");
  return 1.0 - ss_res / ss_tot;
}

}  // namespace gmflab::synth
