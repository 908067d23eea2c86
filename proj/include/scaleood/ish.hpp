#pragma once

// Toy-scale intermediate tensor shaping (ISH).
//
// The model is a one-hidden-layer perceptron: a = relu(W1 x + b1) is the
// penultimate activation and z = W2 a + b2 the logits. ISH leaves the forward
// pass and every gradient except the head weights untouched; the head weight
// gradient of sample i uses a_i * exp(r_i) in place of a_i, where
// r_i = Q / Q_p is the sample's ID-ness.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scaleood/ingest.hpp"
#include "scaleood/metrics.hpp"
#include "scaleood/random.hpp"
#include "scaleood/shaping.hpp"
#include "scaleood/synth.hpp"

namespace scaleood {

enum class TrainMode { plain, ish };

inline std::string_view to_string(TrainMode m) { return m == TrainMode::plain ? "plain" : "ish"; }

inline TrainMode parse_train_mode(std::string_view s) {
  if (s == "plain") return TrainMode::plain;
  if (s == "ish") return TrainMode::ish;
  throw InvalidArgument("unknown training mode '" + std::string(s) + "'");
}

struct ToyModel {
  Matrix hidden_weights;             // H x input_dim
  std::vector<double> hidden_bias;   // H
  LinearHead head;                   // K x H

  std::size_t input_dim() const noexcept { return hidden_weights.cols(); }
  std::size_t hidden_dim() const noexcept { return hidden_weights.rows(); }
  std::size_t n_classes() const noexcept { return head.n_classes(); }

  bool operator==(const ToyModel&) const = default;
};

/// He-normal hidden layer, N(0, 1/H) head, zero biases.
inline ToyModel init_toy_model(std::size_t input_dim, std::size_t hidden, std::size_t n_classes,
                               std::uint64_t seed) {
  ToyModel m{Matrix(hidden, input_dim), std::vector<double>(hidden, 0.0),
             LinearHead{Matrix(n_classes, hidden), std::vector<double>(n_classes, 0.0)}};
  CounterRng rng(seed, stream_id(StreamDomain::model_init, 0));
  const double s1 = std::sqrt(2.0 / static_cast<double>(input_dim));
  for (double& w : m.hidden_weights.values()) w = rng.normal(0.0, s1);
  const double s2 = std::sqrt(1.0 / static_cast<double>(hidden));
  for (double& w : m.head.weights.values()) w = rng.normal(0.0, s2);
  return m;
}

struct ForwardResult {
  std::vector<double> preact;       // W1 x + b1
  std::vector<double> activations;  // relu(preact)
  std::vector<double> logits;
};

inline ForwardResult forward(const ToyModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim())
    throw DimensionMismatch("input length " + std::to_string(x.size()) +
                            " does not match model input " + std::to_string(model.input_dim()));
  ForwardResult out;
  out.preact.resize(model.hidden_dim());
  out.activations.resize(model.hidden_dim());
  for (std::size_t h = 0; h < model.hidden_dim(); ++h) {
    auto w = model.hidden_weights.row(h);
    double acc = model.hidden_bias[h];
    for (std::size_t j = 0; j < x.size(); ++j) acc += w[j] * x[j];
    out.preact[h] = acc;
    out.activations[h] = std::max(0.0, acc);
  }
  out.logits = apply_head(out.activations, model.head);
  return out;
}

/// Penultimate activations of every input row.
inline FeatureSet extract_features(const ToyModel& model, const FeatureSet& inputs) {
  Matrix a(inputs.n_samples(), model.hidden_dim());
  for (std::size_t i = 0; i < inputs.n_samples(); ++i) {
    const auto f = forward(model, inputs.data.row(i));
    std::copy(f.activations.begin(), f.activations.end(), a.row(i).begin());
  }
  return FeatureSet{std::move(a), inputs.tag, inputs.split, true, inputs.labels};
}

/// ID-ness of a sample: r = Q / Q_p.
inline double idness(std::span<const double> a, double p) { return activation_sums(a, p).factor; }

/// One sample's contribution to the head update: activations and the
/// cross-entropy gradient with respect to its logits.
struct HeadSample {
  std::span<const double> activations;
  std::span<const double> logit_grad;
};

struct HeadGradient {
  Matrix weights;
  std::vector<double> bias;
  std::size_t n_fallback = 0;  // degenerate samples weighted by 1 instead of exp(r)
};

/// sum_i outer(g_i, a_i * s_i) with s_i = exp(r_i) under ISH and 1 otherwise;
/// the bias gradient is sum_i g_i in both modes.
inline HeadGradient head_gradient(std::span<const HeadSample> batch, std::size_t n_classes,
                                  std::size_t dim, TrainMode mode, double p) {
  HeadGradient g{Matrix(n_classes, dim), std::vector<double>(n_classes, 0.0), 0};
  std::vector<double> shaped(dim);
  for (const auto& s : batch) {
    if (s.activations.size() != dim || s.logit_grad.size() != n_classes)
      throw DimensionMismatch("head sample does not match the head shape");
    double weight = 1.0;
    if (mode == TrainMode::ish) {
      try {
        weight = std::exp(idness(s.activations, p));
      } catch (const DegenerateSample&) {
        ++g.n_fallback;
      }
    }
    for (std::size_t j = 0; j < dim; ++j) shaped[j] = s.activations[j] * weight;
    for (std::size_t k = 0; k < n_classes; ++k) {
      const double gk = s.logit_grad[k];
      g.bias[k] += gk;
      if (gk == 0.0) continue;
      auto row = g.weights.row(k);
      for (std::size_t j = 0; j < dim; ++j) row[j] += gk * shaped[j];
    }
  }
  return g;
}

/// W <- W - eta sum_i outer(g_i, a_i exp(r_i)), b <- b - eta sum_i g_i.
/// Returns the number of degenerate samples that fell back to weight 1.
inline std::size_t ish_head_update(LinearHead& head, std::span<const HeadSample> batch, double eta,
                                   double p) {
  const auto g = head_gradient(batch, head.n_classes(), head.dim(), TrainMode::ish, p);
  auto w = head.weights.values();
  auto gw = g.weights.values();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta * gw[i];
  for (std::size_t k = 0; k < head.bias.size(); ++k) head.bias[k] -= eta * g.bias[k];
  return g.n_fallback;
}

struct IshTrainConfig {
  double percentile = 0.85;
  double learning_rate = 0.003;  // initial value, cosine-annealed to 0
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double weight_decay = 5e-6;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (epochs < 1) throw InvalidArgument("need at least one epoch");
    if (batch_size < 1) throw InvalidArgument("batch size must be positive");
    if (!(percentile >= 0.0 && percentile < 1.0))
      throw InvalidArgument("percentile must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("weight decay must be non-negative");
  }
};

inline double cosine_lr(double base, std::size_t step, std::size_t total_steps) {
  return base * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                         static_cast<double>(total_steps)));
}

struct StepResult {
  double loss = 0.0;  // mean cross-entropy of the batch, from the forward pass
  std::size_t n_correct = 0;
  std::size_t n_fallback = 0;
};

/// One SGD step on the rows `batch` of `inputs`.
inline StepResult training_step(ToyModel& model, const Matrix& inputs, const Labels& labels,
                                std::span<const std::size_t> batch, double lr,
                                const IshTrainConfig& cfg, TrainMode mode) {
  const std::size_t hdim = model.hidden_dim();
  const std::size_t k = model.n_classes();
  const std::size_t din = model.input_dim();
  const auto inv_b = 1.0 / static_cast<double>(batch.size());

  std::vector<ForwardResult> fw;
  fw.reserve(batch.size());
  std::vector<std::vector<double>> grads(batch.size(), std::vector<double>(k));
  StepResult res;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t i = batch[b];
    fw.push_back(forward(model, inputs.row(i)));
    const auto& z = fw.back().logits;
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    const double log_norm = m + std::log(sum);
    const auto y = labels[i];
    res.loss += (log_norm - z[y]) * inv_b;
    res.n_correct += argmax(z) == y;
    for (std::size_t c = 0; c < k; ++c)
      grads[b][c] = (std::exp(z[c] - log_norm) - (c == y ? 1.0 : 0.0)) * inv_b;
  }

  std::vector<HeadSample> samples;
  samples.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) samples.push_back({fw[b].activations, grads[b]});
  auto head_g = head_gradient(samples, k, hdim, mode, cfg.percentile);
  res.n_fallback = head_g.n_fallback;

  // Extractor gradients use unshaped activations and the pre-update head.
  Matrix g_hidden(hdim, din);
  std::vector<double> g_hidden_bias(hdim, 0.0);
  std::vector<double> back(hdim);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::fill(back.begin(), back.end(), 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      const double gc = grads[b][c];
      auto w = model.head.weights.row(c);
      for (std::size_t h = 0; h < hdim; ++h) back[h] += gc * w[h];
    }
    auto x = inputs.row(batch[b]);
    for (std::size_t h = 0; h < hdim; ++h) {
      if (fw[b].preact[h] <= 0.0) continue;
      g_hidden_bias[h] += back[h];
      auto row = g_hidden.row(h);
      for (std::size_t j = 0; j < din; ++j) row[j] += back[h] * x[j];
    }
  }

  auto step = [&](std::span<double> params, std::span<const double> grad, double decay) {
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i] -= lr * (grad[i] + decay * params[i]);
  };
  step(model.head.weights.values(), head_g.weights.values(), cfg.weight_decay);
  step(model.head.bias, head_g.bias, 0.0);
  step(model.hidden_weights.values(), g_hidden.values(), cfg.weight_decay);
  step(model.hidden_bias, g_hidden_bias, 0.0);
  return res;
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> eval_accuracy;
  double final_lr = 0.0;
  std::size_t n_fallback = 0;
};

struct TrainLog {
  TrainMode mode = TrainMode::plain;
  IshTrainConfig config;
  std::vector<EpochLog> epochs;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, TrainLog log) : Error(what), log_(std::move(log)) {}
  const TrainLog& log() const noexcept { return log_; }

 private:
  TrainLog log_;
};

inline double classification_accuracy(const ToyModel& model, const FeatureSet& data) {
  if (!data.labels) throw InvalidArgument("accuracy needs labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.n_samples(); ++i)
    correct += argmax(forward(model, data.data.row(i)).logits) == (*data.labels)[i];
  return data.n_samples() ? static_cast<double>(correct) / static_cast<double>(data.n_samples())
                          : 0.0;
}

/// Mini-batch SGD with a per-step cosine schedule. Batch order depends only on
/// (seed, epoch), so plain and ISH runs with the same seed see identical batches.
inline TrainLog train(ToyModel& model, const FeatureSet& data, const IshTrainConfig& cfg,
                      TrainMode mode, const FeatureSet* eval_set = nullptr) {
  cfg.validate();
  if (!data.labels) throw InvalidArgument("training needs labelled data");
  data.validate_labels(model.n_classes());
  const std::size_t n = data.n_samples();
  if (n == 0) throw InvalidArgument("empty training set");
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = steps_per_epoch * cfg.epochs;

  TrainLog log{mode, cfg, {}};
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    CounterRng rng(cfg.seed, stream_id(StreamDomain::shuffle, epoch));
    const auto order = permutation(n, rng);
    EpochLog e;
    e.epoch = epoch + 1;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++t) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      const double lr = cosine_lr(cfg.learning_rate, t, total);
      const auto r = training_step(model, data.data, *data.labels, batch, lr, cfg, mode);
      if (!std::isfinite(r.loss)) {
        log.epochs.push_back(e);
        throw TrainingDiverged("training loss became non-finite in epoch " +
                                   std::to_string(epoch + 1),
                               std::move(log));
      }
      e.loss += r.loss * static_cast<double>(batch.size()) / static_cast<double>(n);
      correct += r.n_correct;
      e.n_fallback += r.n_fallback;
      e.final_lr = lr;
    }
    e.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (eval_set) e.eval_accuracy = classification_accuracy(model, *eval_set);
    log.epochs.push_back(e);
  }
  return log;
}

inline nlohmann::json to_json(const TrainLog& log) {
  nlohmann::json j;
  j["mode"] = std::string(to_string(log.mode));
  j["config"] = {{"percentile", log.config.percentile},
                 {"learning_rate", log.config.learning_rate},
                 {"epochs", log.config.epochs},
                 {"batch_size", log.config.batch_size},
                 {"weight_decay", log.config.weight_decay},
                 {"seed", log.config.seed}};
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : log.epochs) {
    nlohmann::json row = {{"epoch", e.epoch},
                          {"loss", e.loss},
                          {"train_accuracy", e.train_accuracy},
                          {"final_lr", e.final_lr},
                          {"n_fallback", e.n_fallback}};
    row["eval_accuracy"] = e.eval_accuracy ? nlohmann::json(*e.eval_accuracy) : nlohmann::json(nullptr);
    j["epochs"].push_back(std::move(row));
  }
  return j;
}

// ---------------------------------------------------------------------------
// Checkpoints: the head uses the head file format; the hidden layer uses
//   "OODX" | version=1 | H | input_dim | H*input_dim weights | H biases
// with the same little-endian u32 / float32 encoding.
// ---------------------------------------------------------------------------

inline std::string serialize_extractor(const ToyModel& m) {
  detail::ByteWriter w;
  w.magic("OODX");
  w.u32(kFormatVersion);
  w.u32(detail::checked_u32(m.hidden_dim(), "hidden width"));
  w.u32(detail::checked_u32(m.input_dim(), "input dimension"));
  for (double v : m.hidden_weights.values()) w.f32(v);
  for (double v : m.hidden_bias) w.f32(v);
  return w.bytes();
}

inline void save_checkpoint(const ToyModel& m, const std::filesystem::path& extractor_path,
                            const std::filesystem::path& head_path) {
  detail::write_atomically(extractor_path, serialize_extractor(m));
  write_head(head_path, m.head);
}

inline ToyModel load_checkpoint(const std::filesystem::path& extractor_path,
                                const std::filesystem::path& head_path) {
  const auto bytes = detail::read_bytes(extractor_path);
  detail::ByteReader r(bytes);
  ToyModel m;
  try {
    r.expect_magic("OODX");
    if (r.u32() != kFormatVersion) throw ParseError("malformed header: unsupported version");
    const std::size_t h = r.u32();
    const std::size_t din = r.u32();
    m.hidden_weights = Matrix(h, din, detail::read_payload(r, h, din, 4 * h));
    m.hidden_bias.resize(h);
    for (auto& b : m.hidden_bias) b = r.f32();
  } catch (const ParseError& e) {
    throw ParseError(extractor_path.string() + ": " + e.what());
  }
  m.head = load_head(head_path);
  if (m.head.dim() != m.hidden_dim())
    throw DimensionMismatch("checkpoint head dimension does not match hidden width");
  return m;
}

// ---------------------------------------------------------------------------
// Blob experiment: pretrain plainly, then fine-tune the same checkpoint in
// both modes and compare ID accuracy and post-hoc SCALE + energy AUROC.
// ---------------------------------------------------------------------------

struct IshExperimentConfig {
  BlobSpec blobs;
  std::size_t hidden = 128;
  IshTrainConfig pretrain{0.85, 0.05, 30, 64, 5e-6, 0};
  IshTrainConfig finetune{0.85, 0.003, 10, 64, 5e-6, 0};
  double eval_percentile = 0.85;
};

struct ModeOutcome {
  TrainMode mode = TrainMode::plain;
  double id_accuracy = 0.0;  // fraction on the ID test split
  double scale_auroc = 0.0;  // SCALE + energy, fraction
  double energy_auroc = 0.0; // unshaped energy, fraction
  TrainLog log;
  ToyModel model;
};

struct IshExperimentResult {
  double pretrain_train_accuracy = 0.0;
  TrainLog pretrain_log;
  std::vector<ModeOutcome> runs;

  const ModeOutcome& outcome(TrainMode mode) const {
    for (const auto& r : runs)
      if (r.mode == mode) return r;
    throw InvalidArgument("no run for mode " + std::string(to_string(mode)));
  }
};

inline ModeOutcome evaluate_toy(const ToyModel& model, const BlobDataset& ds, double p) {
  ModeOutcome out;
  out.model = model;
  out.id_accuracy = classification_accuracy(model, ds.id_test);
  const auto id_feats = extract_features(model, ds.id_test);
  const auto ood_feats = extract_features(model, ds.ood_test);
  auto pair_auroc = [&](ShapingMethod method) {
    MethodSpec spec{{method, p, 1.0}, {ScoreKind::ebo, 1.0}};
    const auto id = score_features(id_feats, model.head, spec);
    const auto ood = score_features(ood_feats, model.head, spec);
    return auroc(id.valid_scores(), ood.valid_scores());
  };
  out.scale_auroc = pair_auroc(ShapingMethod::scale);
  out.energy_auroc = pair_auroc(ShapingMethod::identity);
  return out;
}

inline IshExperimentResult run_ish_experiment(
    IshExperimentConfig cfg, std::uint64_t seed,
    const std::vector<TrainMode>& modes = {TrainMode::plain, TrainMode::ish}) {
  cfg.blobs.seed = seed;
  cfg.pretrain.seed = seed;
  cfg.finetune.seed = seed + 1;
  const auto ds = gen_blob_dataset(cfg.blobs);

  IshExperimentResult res;
  auto base = init_toy_model(cfg.blobs.dim, cfg.hidden, cfg.blobs.id_classes.size(), seed);
  res.pretrain_log = train(base, ds.train, cfg.pretrain, TrainMode::plain);
  res.pretrain_train_accuracy = classification_accuracy(base, ds.train);

  for (TrainMode mode : modes) {
    ToyModel m = base;
    auto log = train(m, ds.train, cfg.finetune, mode, &ds.id_test);
    auto outcome = evaluate_toy(m, ds, cfg.eval_percentile);
    outcome.mode = mode;
    outcome.log = std::move(log);
    res.runs.push_back(std::move(outcome));
  }
  return res;
}

}  // namespace scaleood
