#include "gmflab/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <fmt/format.h>

#include "gmflab/autodiff.hpp"
#include "gmflab/errors.hpp"
#include "gmflab/loss.hpp"
#include "gmflab/optim.hpp"
#include "gmflab/rng.hpp"

namespace gmflab::entropy {

namespace {

Matrix normal_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

std::pair<double, double> sample_range(std::span<const double> s) {
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
  return {*lo, *hi};
}

struct Split {
  Matrix x_train, x_test;
  std::vector<int> y_train, y_test;
};

Split split_rows(const Matrix& x, const std::vector<int>& y, std::size_t n_train) {
  std::vector<std::size_t> tr(n_train), te(x.rows() - n_train);
  for (std::size_t i = 0; i < tr.size(); ++i) tr[i] = i;
  for (std::size_t i = 0; i < te.size(); ++i) te[i] = n_train + i;
  Split s;
  s.x_train = x.rows_subset(tr);
  s.x_test = x.rows_subset(te);
  s.y_train.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.y_test.assign(y.begin() + static_cast<std::ptrdiff_t>(n_train), y.end());
  return s;
}

// Frozen random feature map f = tanh(M z) over a Gaussian latent, labelled by
// the argmax of a random linear readout of f plus Gaussian score noise. The
// noise keeps the cross-entropy minimizer finite.
Split make_mapping_task(const MappingExperimentConfig& cfg) {
  Rng rng = Rng::stream(cfg.task_seed, "updown.task");
  const std::size_t l = cfg.l;
  const Matrix m = normal_matrix(l, l, rng, 1.5 / std::sqrt(static_cast<double>(l)));
  const Matrix r = normal_matrix(cfg.classes, l, rng);
  Matrix f = matmul_nt(normal_matrix(cfg.samples, l, rng), m);
  for (double& v : f.data()) v = std::tanh(v);
  Matrix scores = matmul_nt(f, r);
  for (double& v : scores.data()) v += cfg.label_noise * rng.normal();
  const std::vector<int> y = argmax_rows(scores);
  const auto n_train = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(cfg.samples)));
  return split_rows(f, y, n_train);
}

// Builds logits from the current parameter values; shared by training and evaluation.
using LogitFn = std::function<Var(Tape&, const Matrix&)>;

ProbeOutcome train_probe(const Split& data, const LogitFn& logits, std::span<Parameter* const> params,
                         std::size_t steps, const SgdConfig& sgd) {
  ProbeOutcome out;
  for (std::size_t step = 0; step < steps; ++step) {
    Tape tape;
    Var loss = cross_entropy_loss(logits(tape, data.x_train), data.y_train);
    out.final_loss = loss.value()[0];
    if (!std::isfinite(out.final_loss)) {
      out.diverged = true;
      break;
    }
    tape.backward(loss);
    sgd_step(params, sgd);
  }
  if (out.diverged) {
    out.train_accuracy = out.test_accuracy = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  {
    Tape tape;
    const Matrix train_logits = logits(tape, data.x_train).value();
    out.final_loss = cross_entropy_loss(train_logits, data.y_train);
    out.train_accuracy = accuracy(train_logits, data.y_train);
  }
  Tape tape;
  out.test_logits = logits(tape, data.x_test).value();
  out.test_accuracy = accuracy(out.test_logits, data.y_test);
  if (!std::isfinite(out.final_loss)) {
    out.diverged = true;
    out.train_accuracy = out.test_accuracy = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

Matrix partial_identity(std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < std::min(rows, cols); ++i) m(i, i) = 1.0;
  return m;
}

struct Stats {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
  std::int64_t count = 0;
};

// Ignores NaN entries (diverged runs).
Stats stats_of(const std::vector<double>& v) {
  Stats s;
  double total = 0.0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    if (s.count == 0) s.min = s.max = x;
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
    total += x;
    ++s.count;
  }
  if (s.count) s.mean = total / static_cast<double>(s.count);
  return s;
}

std::string seed_list(const std::vector<std::uint64_t>& seeds) {
  return fmt::format("{}", fmt::join(seeds, ","));
}

}  // namespace

// ---------------------------------------------------------------------------
// Histograms

HistogramEstimator::HistogramEstimator(std::vector<std::size_t> bins, std::vector<std::pair<double, double>> ranges)
    : bins_(std::move(bins)), ranges_(std::move(ranges)) {
  if (bins_.empty()) throw ContractError("histogram needs at least one dimension");
  if (bins_.size() != ranges_.size())
    throw ShapeError(fmt::format("histogram has {} bin counts but {} ranges", bins_.size(), ranges_.size()));
  std::size_t cells = 1;
  for (std::size_t d = 0; d < bins_.size(); ++d) {
    if (bins_[d] < 1) throw ContractError("histogram bin count must be positive");
    if (!(ranges_[d].first <= ranges_[d].second)) throw ContractError("histogram range is inverted");
    cells *= bins_[d];
  }
  counts_.assign(cells, 0);
}

std::size_t HistogramEstimator::bin_of(std::size_t dim, double value) const {
  const auto [lo, hi] = ranges_.at(dim);
  const std::size_t nb = bins_[dim];
  if (!(hi > lo)) return 0;
  const double t = (value - lo) / (hi - lo) * static_cast<double>(nb);
  if (!(t > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(t), nb - 1);
}

void HistogramEstimator::add(std::span<const double> point) {
  if (point.size() != bins_.size())
    throw ShapeError(fmt::format("histogram point has {} coordinates, expected {}", point.size(), bins_.size()));
  std::size_t idx = 0;
  for (std::size_t d = 0; d < bins_.size(); ++d) idx = idx * bins_[d] + bin_of(d, point[d]);
  ++counts_[idx];
  ++total_;
}

std::vector<double> HistogramEstimator::probabilities() const {
  if (total_ == 0) throw ContractError("histogram is empty");
  std::vector<double> p(counts_.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<double>(counts_[i]) / static_cast<double>(total_);
  return p;
}

double HistogramEstimator::entropy() const {
  if (total_ == 0) throw ContractError("histogram is empty");
  return plugin_entropy(counts_);
}

double plugin_entropy(std::span<const std::uint64_t> counts) {
  std::vector<std::uint64_t> occupied;
  std::uint64_t total = 0;
  for (std::uint64_t c : counts) {
    if (c == 0) continue;
    occupied.push_back(c);
    total += c;
  }
  if (total == 0) throw ContractError("entropy of an empty histogram");
  std::sort(occupied.begin(), occupied.end());
  const double n = static_cast<double>(total);
  double h = 0.0;
  for (std::uint64_t c : occupied) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

double histogram_entropy(std::span<const double> samples, std::size_t bins) {
  if (samples.empty()) throw ContractError("entropy needs at least one sample");
  if (bins < 2) throw ContractError(fmt::format("entropy needs at least 2 bins, got {}", bins));
  HistogramEstimator est({bins}, {sample_range(samples)});
  for (double v : samples) est.add(std::span<const double>(&v, 1));
  return est.entropy();
}

double mutual_information(std::span<const double> x, std::span<const double> y, std::size_t bins) {
  if (x.size() != y.size())
    throw ContractError(fmt::format("mutual information needs paired samples, got {} and {}", x.size(), y.size()));
  if (x.empty()) throw ContractError("mutual information needs at least one sample");
  if (bins < 2) throw ContractError(fmt::format("mutual information needs at least 2 bins, got {}", bins));
  HistogramEstimator joint({bins, bins}, {sample_range(x), sample_range(y)});
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double pt[2] = {x[i], y[i]};
    joint.add(pt);
  }
  const auto& c = joint.counts();
  std::vector<std::uint64_t> cx(bins, 0), cy(bins, 0);
  for (std::size_t i = 0; i < bins; ++i)
    for (std::size_t j = 0; j < bins; ++j) {
      cx[i] += c[i * bins + j];
      cy[j] += c[i * bins + j];
    }
  const double mi = (plugin_entropy(cx) + plugin_entropy(cy)) - plugin_entropy(c);
  return std::max(mi, 0.0);
}

// ---------------------------------------------------------------------------
// Rank trials

std::size_t numerical_rank(const Matrix& a, double rel_tol) {
  Matrix m = a;
  const double tol = rel_tol * a.frobenius_norm();
  const std::size_t rows = m.rows(), cols = m.cols();
  std::size_t rank = 0;
  for (; rank < std::min(rows, cols); ++rank) {
    std::size_t pr = rank, pc = rank;
    double best = 0.0;
    for (std::size_t i = rank; i < rows; ++i)
      for (std::size_t j = rank; j < cols; ++j)
        if (std::abs(m(i, j)) > best) {
          best = std::abs(m(i, j));
          pr = i;
          pc = j;
        }
    if (!(best > tol)) break;
    for (std::size_t j = 0; j < cols; ++j) std::swap(m(rank, j), m(pr, j));
    for (std::size_t i = 0; i < rows; ++i) std::swap(m(i, rank), m(i, pc));
    for (std::size_t i = rank + 1; i < rows; ++i) {
      const double f = m(i, rank) / m(rank, rank);
      for (std::size_t j = rank; j < cols; ++j) m(i, j) -= f * m(rank, j);
    }
  }
  return rank;
}

void RankTrialConfig::validate() const {
  if (d < 1) throw ConfigError("rank trial dimension must be at least 1", "d");
  if (!(n > 0.0) || !std::isfinite(n)) throw ConfigError(fmt::format("magnification must be positive, got {}", n), "n");
  if (trials < 100) throw ConfigError(fmt::format("rank trial needs at least 100 trials, got {}", trials), "trials");
}

std::size_t RankTrialConfig::rows() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * static_cast<double>(d))));
}

RankTrialResult rank_trial(const RankTrialConfig& config) {
  config.validate();
  RankTrialResult r;
  r.rows = config.rows();
  r.cols = config.d;
  Rng rng = Rng::stream(config.seed, "rank");
  std::size_t full = 0, rank_d = 0, total_rank = 0;
  for (std::size_t t = 0; t < config.trials; ++t) {
    const Matrix a = normal_matrix(r.rows, r.cols, rng);
    const std::size_t k = numerical_rank(a);
    full += (k == std::min(r.rows, r.cols));
    rank_d += (k == r.cols);
    total_rank += k;
    r.max_rank = std::max(r.max_rank, k);
  }
  const double n = static_cast<double>(config.trials);
  r.full_rank_fraction = static_cast<double>(full) / n;
  r.rank_d_fraction = static_cast<double>(rank_d) / n;
  r.mean_rank = static_cast<double>(total_rank) / n;
  return r;
}

// ---------------------------------------------------------------------------
// Up-down mapping

void MappingExperimentConfig::validate() const {
  if (l < 1) throw ConfigError("feature length must be at least 1", "l");
  if (magnifications.empty()) throw ConfigError("need at least one magnification", "magnifications");
  for (double n : magnifications)
    if (!(n > 0.0) || !std::isfinite(n)) throw ConfigError(fmt::format("magnification must be positive, got {}", n), "magnifications");
  if (classes < 2) throw ConfigError("need at least 2 classes", "classes");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must be in (0, 1)", "train_fraction");
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(samples)));
  if (n_train < 1 || n_train >= samples) throw ConfigError("sample count too small for the split", "samples");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive", "lr");
  if (!(init_noise >= 0.0)) throw ConfigError("init noise must be nonnegative", "init_noise");
  if (!(label_noise >= 0.0)) throw ConfigError("label noise must be nonnegative", "label_noise");
  if (seeds.size() < 3) throw ConfigError(fmt::format("need at least 3 seeds, got {}", seeds.size()), "seeds");
}

std::size_t MappingExperimentConfig::mapped_dim(double magnification) const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(magnification * static_cast<double>(l))));
}

ProbeOutcome direct_probe(const MappingExperimentConfig& config, std::uint64_t seed) {
  const Split data = make_mapping_task(config);
  Rng rng = Rng::stream(seed, "updown.probe");
  Linear probe("W", config.l, config.classes, rng);
  Parameter* params[] = {&probe.weight, &probe.bias};
  return train_probe(
      data, [&](Tape& t, const Matrix& x) { return probe.apply(t, t.constant(x)); }, params, config.steps,
      {config.lr, config.momentum, 0.0});
}

ProbeOutcome updown_probe(const MappingExperimentConfig& config, double magnification, std::uint64_t seed) {
  const Split data = make_mapping_task(config);
  Rng rng = Rng::stream(seed, "updown.probe");
  Linear probe("W", config.l, config.classes, rng);
  const std::size_t nl = config.mapped_dim(magnification);
  Rng noise = Rng::stream(seed, "updown.maps");
  Parameter up("U2", partial_identity(nl, config.l));
  Parameter down("U1", partial_identity(config.l, nl));
  if (config.init_noise > 0.0) {
    for (double& v : up.value.data()) v += config.init_noise * noise.normal();
    for (double& v : down.value.data()) v += config.init_noise * noise.normal();
  }
  Parameter* params[] = {&probe.weight, &probe.bias, &up, &down};
  return train_probe(
      data,
      [&](Tape& t, const Matrix& x) {
        Var h = linear(linear(t.constant(x), t.param(up)), t.param(down));
        return probe.apply(t, h);
      },
      params, config.steps, {config.lr, config.momentum, 0.0});
}

ExperimentReport up_down_experiment(const MappingExperimentConfig& config) {
  config.validate();
  ExperimentReport rep;
  rep.name = "updown";
  rep.seeds = config.seeds;
  rep.config = {{"l", std::to_string(config.l)},
                {"magnifications", fmt::format("{}", fmt::join(config.magnifications, ","))},
                {"classes", std::to_string(config.classes)},
                {"samples", std::to_string(config.samples)},
                {"train_fraction", format_double(config.train_fraction)},
                {"steps", std::to_string(config.steps)},
                {"lr", format_double(config.lr)},
                {"momentum", format_double(config.momentum)},
                {"init_noise", format_double(config.init_noise)},
                {"label_noise", format_double(config.label_noise)},
                {"task_seed", std::to_string(config.task_seed)},
                {"seeds", seed_list(config.seeds)}};
  rep.rows.columns = {"probe", "magnification", "mapped_dim", "seed", "train_accuracy", "test_accuracy", "final_loss", "diverged"};
  rep.summary.columns = {"probe", "magnification", "mean_test_accuracy", "min_test_accuracy", "max_test_accuracy", "runs"};

  const auto record = [&](const std::string& probe, double n, std::size_t dim, const std::vector<ProbeOutcome>& runs) {
    std::vector<double> acc;
    for (std::size_t s = 0; s < runs.size(); ++s) {
      const ProbeOutcome& o = runs[s];
      rep.rows.add_row({probe, n, static_cast<std::int64_t>(dim), static_cast<std::int64_t>(config.seeds[s]),
                        o.train_accuracy, o.test_accuracy, o.final_loss, static_cast<std::int64_t>(o.diverged)});
      acc.push_back(o.test_accuracy);
    }
    const Stats st = stats_of(acc);
    rep.summary.add_row({probe, n, st.mean, st.min, st.max, st.count});
    return st;
  };

  std::vector<ProbeOutcome> direct;
  for (std::uint64_t seed : config.seeds) direct.push_back(direct_probe(config, seed));
  rep.metrics["direct.mean"] = record("direct", 1.0, config.l, direct).mean;
  for (double n : config.magnifications) {
    std::vector<ProbeOutcome> runs;
    for (std::uint64_t seed : config.seeds) runs.push_back(updown_probe(config, n, seed));
    rep.metrics[fmt::format("updown.{:g}.mean", n)] = record("updown", n, config.mapped_dim(n), runs).mean;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Width sweep

void WidthSweepConfig::validate() const {
  if (input_dim < 1) throw ConfigError("input dimension must be at least 1", "input_dim");
  if (intrinsic_dim < 1 || intrinsic_dim > input_dim)
    throw ConfigError("intrinsic dimension must be in [1, input_dim]", "intrinsic_dim");
  if (classes < 2) throw ConfigError("need at least 2 classes", "classes");
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) throw ConfigError("label noise must be in [0, 1]", "label_noise");
  if (widths.empty()) throw ConfigError("need at least one width", "widths");
  for (std::size_t w : widths)
    if (w < 1) throw ConfigError("widths must be positive", "widths");
  if (train_samples < 1 || test_samples < 1) throw ConfigError("sample counts must be positive", "train_samples");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive", "lr");
  if (seeds.empty()) throw ConfigError("need at least one seed", "seeds");
}

ExperimentReport width_sweep(const WidthSweepConfig& config) {
  config.validate();
  Rng task = Rng::stream(config.task_seed, "width.task");
  const std::size_t k = config.intrinsic_dim;
  const Matrix embed = normal_matrix(config.input_dim, k, task, 1.0 / std::sqrt(static_cast<double>(k)));
  const Matrix readout = normal_matrix(config.classes, k, task);
  const auto draw = [&](std::size_t n) {
    const Matrix s = normal_matrix(n, k, task);
    return std::pair{matmul_nt(s, embed), argmax_rows(matmul_nt(s, readout))};
  };
  auto [x_train, y_train] = draw(config.train_samples);
  const auto [x_test, y_test] = draw(config.test_samples);
  for (int& y : y_train)
    if (task.uniform() < config.label_noise) y = static_cast<int>(task.below(config.classes));

  ExperimentReport rep;
  rep.name = "width_sweep";
  rep.seeds = config.seeds;
  rep.config = {{"input_dim", std::to_string(config.input_dim)},
                {"intrinsic_dim", std::to_string(config.intrinsic_dim)},
                {"classes", std::to_string(config.classes)},
                {"label_noise", format_double(config.label_noise)},
                {"widths", fmt::format("{}", fmt::join(config.widths, ","))},
                {"train_samples", std::to_string(config.train_samples)},
                {"test_samples", std::to_string(config.test_samples)},
                {"steps", std::to_string(config.steps)},
                {"lr", format_double(config.lr)},
                {"momentum", format_double(config.momentum)},
                {"task_seed", std::to_string(config.task_seed)},
                {"seeds", seed_list(config.seeds)}};
  rep.rows.columns = {"width", "seed", "train_accuracy", "test_accuracy", "ratio", "diverged"};
  rep.summary.columns = {"width", "mean_train_accuracy", "mean_test_accuracy", "mean_ratio"};

  const Split data{x_train, x_test, y_train, y_test};
  double best_acc = -1.0;
  std::size_t best_width = 0;
  for (std::size_t w : config.widths) {
    std::vector<double> tr, te, ra;
    for (std::uint64_t seed : config.seeds) {
      Rng rng = Rng::stream(seed, fmt::format("width.{}", w));
      Linear hidden("hidden", config.input_dim, w, rng);
      Linear head("head", w, config.classes, rng);
      Parameter* params[] = {&hidden.weight, &hidden.bias, &head.weight, &head.bias};
      const ProbeOutcome o = train_probe(
          data, [&](Tape& t, const Matrix& x) { return head.apply(t, tanh(hidden.apply(t, t.constant(x)))); },
          params, config.steps, {config.lr, config.momentum, 0.0});
      const double ratio = o.test_accuracy / o.train_accuracy;
      rep.rows.add_row({static_cast<std::int64_t>(w), static_cast<std::int64_t>(seed), o.train_accuracy,
                        o.test_accuracy, ratio, static_cast<std::int64_t>(o.diverged)});
      tr.push_back(o.train_accuracy);
      te.push_back(o.test_accuracy);
      ra.push_back(ratio);
    }
    const double mean_test = stats_of(te).mean;
    rep.summary.add_row({static_cast<std::int64_t>(w), stats_of(tr).mean, mean_test, stats_of(ra).mean});
    if (mean_test > best_acc) {
      best_acc = mean_test;
      best_width = w;
    }
  }
  rep.metrics["best_width"] = static_cast<double>(best_width);
  rep.metrics["best_test_accuracy"] = best_acc;
  return rep;
}

}  // namespace gmflab::entropy
