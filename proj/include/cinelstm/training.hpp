#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cinelstm/cine.hpp"
#include "cinelstm/errors.hpp"
#include "cinelstm/segnet.hpp"
#include "cinelstm/tensor.hpp"

namespace cinelstm {

inline constexpr double kBceClamp = 1e-7;

// Mean binary cross-entropy over every pixel of every frame, with the
// prediction clamped to [1e-7, 1 - 1e-7]. Clamped pixels pass no gradient.
template <typename T>
Tensor<T> bce_loss(const std::vector<Tensor<T>>& preds, const std::vector<Tensor<T>>& truths) {
  if (preds.size() != truths.size()) {
    throw std::invalid_argument("bce_loss: " + std::to_string(preds.size()) + " predictions for " +
                                std::to_string(truths.size()) + " truth maps");
  }
  std::size_t count = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    if (!(preds[k].shape() == truths[k].shape())) {
      throw std::invalid_argument("bce_loss: shape mismatch " + preds[k].shape().str() + " vs " +
                                  truths[k].shape().str());
    }
    count += preds[k].size();
  }
  if (count == 0) throw std::invalid_argument("bce_loss: empty input");
  const T lo = static_cast<T>(kBceClamp), hi = static_cast<T>(1.0 - kBceClamp);
  T total = T(0);
  for (std::size_t k = 0; k < preds.size(); ++k) {
    std::span<const T> p = preds[k].data(), y = truths[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T q = std::clamp(p[i], lo, hi);
      total += -(y[i] * std::log(q) + (T(1) - y[i]) * std::log(T(1) - q));
    }
  }
  Tensor<T> out(Shape::scalar(), total / static_cast<T>(count));

  Tape<T>* tape = nullptr;
  std::vector<const Tensor<T>*> inputs;
  for (const auto& p : preds) {
    inputs.push_back(&p);
    if (p.tape()) tape = p.tape();
  }
  if (!tape) return out;
  std::vector<Tensor<T>> saved_p, saved_y;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    saved_p.push_back(preds[k].detached());
    saved_y.push_back(truths[k].detached());
  }
  return tape->record(std::move(out), inputs,
                      [saved_p, saved_y, count, lo, hi](std::span<const T> gout, std::span<std::vector<T>* const> gr) {
                        const T scale = gout[0] / static_cast<T>(count);
                        for (std::size_t k = 0; k < gr.size(); ++k) {
                          if (!gr[k]) continue;
                          std::span<const T> p = saved_p[k].data(), y = saved_y[k].data();
                          std::vector<T>& g = *gr[k];
                          for (std::size_t i = 0; i < p.size(); ++i) {
                            if (p[i] < lo || p[i] > hi) continue;
                            g[i] += scale * (-y[i] / p[i] + (T(1) - y[i]) / (T(1) - p[i]));
                          }
                        }
                      });
}

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

template <typename T>
struct AdamState {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// Bias-corrected Adam update. Rejects the whole step, leaving parameters
// and moments untouched, if any gradient is non-finite.
template <typename T>
void adam_step(AdamState<T>& st, const std::vector<NamedParam<T>>& params, const std::vector<std::vector<T>>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: parameter and gradient counts differ");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].tensor->size() != grads[k].size()) {
      throw std::invalid_argument("adam_step: gradient for " + params[k].name + " has the wrong size");
    }
    for (T g : grads[k]) {
      if (!std::isfinite(g)) throw NumericalError("adam_step: non-finite gradient for parameter " + params[k].name);
    }
  }
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.tensor->size(), T(0));
      st.v.emplace_back(p.tensor->size(), T(0));
    }
  }
  if (st.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter list changed between steps");
  ++st.step;
  const T b1 = static_cast<T>(st.beta1), b2 = static_cast<T>(st.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(st.beta1, static_cast<double>(st.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(st.beta2, static_cast<double>(st.step)));
  const T alpha = static_cast<T>(st.alpha), eps = static_cast<T>(st.epsilon);
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::span<T> w = params[k].tensor->mutable_data();
    std::vector<T>& m = st.m[k];
    std::vector<T>& v = st.v[k];
    const std::vector<T>& g = grads[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] / c1;
      const T v_hat = v[i] / c2;
      w[i] -= alpha * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

// Scales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_global_norm(std::vector<std::vector<T>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& g : grads) {
      for (T& v : g) v *= scale;
    }
  }
  return norm;
}

using Dataset = std::map<SequenceId, CineSequence>;

Dataset index_dataset(std::vector<CineSequence> sequences);
std::map<int, std::vector<SequenceId>> cycles_by_subject(const Dataset& data);

struct FoldSpec {
  int test_subject = 0;
  std::vector<SequenceId> test_cycles;
  std::vector<SequenceId> train_cycles;
  std::vector<SequenceId> val_cycles;
};

// One fold per subject. The other subjects' cycles are shuffled (seeded per
// fold) and round(0.2 n) of them go to validation.
std::vector<FoldSpec> loo_split(const std::map<int, std::vector<SequenceId>>& subjects, std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 30;           // stage B (temporal) epochs
  std::size_t pretrain_epochs = 30;  // stage A (CNN-only) epochs
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  std::size_t patience = 10;
  double clip_norm = 5.0;
  Variant variant = Variant::MultiLevel;
  EncoderConfig encoder = EncoderConfig::desk();
  CycleConfig cycle;
  std::size_t cycles_per_epoch = 0;  // 0: every training cycle
  std::size_t val_cycles_max = 0;    // 0: every validation cycle
  bool freeze_encoder = false;       // stage B only

  void validate() const;
};

struct TrainLogRecord {
  std::string stage;  // "cnn" or the temporal variant name
  std::size_t epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  std::string timestamp;
};

struct TrainResult {
  SegModel<float> model;       // best-validation model of the requested variant
  SegModel<float> pretrained;  // best-validation CNN-only model (stage A)
  std::vector<TrainLogRecord> log;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
};

using LogSink = std::function<void(const TrainLogRecord&)>;

// Two-stage protocol: stage A trains encoder + decoder as the CNN-only
// model; for temporal variants stage B adds ConvLSTM blocks on top of the
// stage-A model and trains end to end. Pass `pretrained` to skip stage A.
// Throws NumericalError when the loss becomes non-finite.
TrainResult train_model(const TrainConfig& cfg, const FoldSpec& fold, const Dataset& data, const LogSink& sink = {},
                        const SegModel<float>* pretrained = nullptr);

// Mean BCE of a model over the given cycles (no tape).
double evaluate_loss(const SegModel<float>& model, const Dataset& data, const std::vector<SequenceId>& cycles);

std::vector<Tensor<float>> masks_as_tensors(const CineSequence& seq);

// Per-pixel mean over members (outer index) of per-frame probability maps,
// accumulated in double.
std::vector<std::vector<double>> mean_maps(const std::vector<std::vector<Tensor<float>>>& member_maps);

// Foreground iff mean > 0.5; a mean of exactly 0.5 is background.
Mask threshold_mean(const std::vector<double>& mean, std::size_t height, std::size_t width, double spacing_mm = 1.0);

// Per-pixel mean of the members' probability maps.
std::vector<Image> ensemble_probabilities(std::span<const SegModel<float>> models, const CineSequence& cycle,
                                          std::size_t expected_members = 5);

// Foreground iff the ensemble mean is strictly greater than 0.5.
std::vector<Mask> ensemble_predict(std::span<const SegModel<float>> models, const CineSequence& cycle,
                                   std::size_t expected_members = 5);

Mask threshold_map(const Image& probabilities, double spacing_mm = 1.0);

}  // namespace cinelstm
