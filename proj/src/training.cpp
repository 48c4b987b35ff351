#include "cinelstm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <set>

#include "cinelstm/log.hpp"
#include "cinelstm/random.hpp"

namespace cinelstm {
namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const CineSequence& lookup(const Dataset& data, const SequenceId& id) {
  auto it = data.find(id);
  if (it == data.end()) throw std::invalid_argument("cycle " + id.str() + " is not in the dataset");
  if (!it->second.masks) throw std::invalid_argument("cycle " + id.str() + " has no masks");
  return it->second;
}

std::vector<NamedParam<float>> trainable(SegModel<float>& model, bool freeze_encoder) {
  std::vector<NamedParam<float>> out;
  model.visit([&](const std::string& name, Tensor<float>& t) {
    if (freeze_encoder && name.rfind("encoder.", 0) == 0) return;
    out.push_back({name, &t});
  });
  return out;
}

// One optimizer step on a single cycle. Returns the loss before the update.
double train_step(SegModel<float>& model, AdamState<float>& adam, const CineSequence& seq, bool freeze_encoder,
                  double clip_norm) {
  std::vector<std::vector<float>> grads;
  double loss_value = 0.0;
  {
    Tape<float> tape;
    SegModel<float> work = model;
    std::vector<NamedParam<float>> leaves = trainable(work, freeze_encoder);
    for (auto& p : leaves) tape.watch_in_place(*p.tensor);
    const std::vector<Tensor<float>> maps = forward_sequence(work, seq);
    const Tensor<float> loss = bce_loss(maps, masks_as_tensors(seq));
    loss_value = static_cast<double>(loss[0]);
    if (!std::isfinite(loss_value)) return loss_value;
    Gradients<float> g = tape.backward(loss);
    for (auto& p : leaves) {
      const Tensor<float> gt = g.of(*p.tensor);
      std::span<const float> gs = gt.data();
      grads.emplace_back(gs.begin(), gs.end());
    }
  }
  clip_global_norm(grads, clip_norm);
  adam_step(adam, trainable(model, freeze_encoder), grads);
  return loss_value;
}

struct StageOutcome {
  SegModel<float> best;
  double best_loss = 0.0;
  std::size_t best_epoch = 0;
};

StageOutcome run_stage(const std::string& stage, SegModel<float> model, std::size_t epochs, bool freeze_encoder,
                       const TrainConfig& cfg, const FoldSpec& fold, const Dataset& data,
                       std::vector<TrainLogRecord>& log, const LogSink& sink) {
  AdamState<float> adam;
  adam.alpha = cfg.learning_rate;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.epsilon = cfg.epsilon;

  std::vector<SequenceId> val = fold.val_cycles;
  if (cfg.val_cycles_max > 0 && val.size() > cfg.val_cycles_max) val.resize(cfg.val_cycles_max);
  const bool select_on_train = val.empty();

  auto emit = [&](std::size_t epoch, const char* split, double loss) {
    TrainLogRecord rec{stage, epoch, split, loss, utc_timestamp()};
    log.push_back(rec);
    if (sink) sink(rec);
  };

  StageOutcome out{model, 0.0, 0};
  if (!select_on_train) {
    out.best_loss = evaluate_loss(model, data, val);
    emit(0, "val", out.best_loss);
  } else {
    out.best_loss = evaluate_loss(model, data, fold.train_cycles);
    emit(0, "train", out.best_loss);
  }
  std::size_t last_finite = 0;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    std::vector<SequenceId> order = fold.train_cycles;
    Rng rng = make_rng(cfg.seed, stage + "/epoch/" + std::to_string(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    if (cfg.cycles_per_epoch > 0 && order.size() > cfg.cycles_per_epoch) order.resize(cfg.cycles_per_epoch);

    double total = 0.0;
    for (const SequenceId& id : order) {
      const double l = train_step(model, adam, lookup(data, id), freeze_encoder, cfg.clip_norm);
      if (!std::isfinite(l)) {
        throw NumericalError("training diverged in stage " + stage + " at epoch " + std::to_string(epoch) +
                             " on cycle " + id.str() + "; last finite epoch " + std::to_string(last_finite));
      }
      total += l;
    }
    const double train_loss = total / static_cast<double>(order.size());
    emit(epoch, "train", train_loss);

    double score = train_loss;
    if (!select_on_train) {
      score = evaluate_loss(model, data, val);
      if (!std::isfinite(score)) {
        throw NumericalError("validation loss became non-finite in stage " + stage + " at epoch " +
                             std::to_string(epoch) + "; last finite epoch " + std::to_string(last_finite));
      }
      emit(epoch, "val", score);
    }
    last_finite = epoch;
    if (score < out.best_loss) {
      out.best = model;
      out.best_loss = score;
      out.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return out;
}

std::vector<std::vector<double>> ensemble_mean(std::span<const SegModel<float>> models, const CineSequence& cycle,
                                               std::size_t expected_members) {
  if (models.empty()) throw std::invalid_argument("ensemble_predict: no models");
  if (models.size() != expected_members) {
    warn("ensemble of " + std::to_string(models.size()) + " models (expected " + std::to_string(expected_members) +
         "); proceeding");
  }
  std::vector<std::vector<Tensor<float>>> maps;
  for (const auto& m : models) {
    if (m.variant != models[0].variant || m.height != models[0].height || m.width != models[0].width) {
      throw std::invalid_argument("ensemble_predict: members differ in variant or input shape");
    }
    maps.push_back(forward_sequence(m, cycle));
  }
  return mean_maps(maps);
}

}  // namespace

Dataset index_dataset(std::vector<CineSequence> sequences) {
  Dataset out;
  for (CineSequence& s : sequences) {
    const SequenceId id = s.id;
    if (!out.emplace(id, std::move(s)).second) throw std::invalid_argument("duplicate cycle id " + id.str());
  }
  return out;
}

std::map<int, std::vector<SequenceId>> cycles_by_subject(const Dataset& data) {
  std::map<int, std::vector<SequenceId>> out;
  for (const auto& [id, seq] : data) out[id.subject].push_back(id);
  return out;
}

std::vector<FoldSpec> loo_split(const std::map<int, std::vector<SequenceId>>& subjects, std::uint64_t seed) {
  if (subjects.size() < 2) throw std::invalid_argument("loo_split: need at least 2 subjects");
  for (const auto& [subject, cycles] : subjects) {
    if (cycles.empty()) throw std::invalid_argument("loo_split: subject " + std::to_string(subject) + " has no cycles");
  }
  std::vector<FoldSpec> folds;
  for (const auto& [test_subject, test_cycles] : subjects) {
    FoldSpec f;
    f.test_subject = test_subject;
    f.test_cycles = test_cycles;
    std::vector<SequenceId> rest;
    for (const auto& [subject, cycles] : subjects) {
      if (subject != test_subject) rest.insert(rest.end(), cycles.begin(), cycles.end());
    }
    std::sort(rest.begin(), rest.end());
    Rng rng = make_rng(seed, "fold/" + std::to_string(test_subject));
    std::shuffle(rest.begin(), rest.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(rest.size())));
    f.val_cycles.assign(rest.begin(), rest.begin() + static_cast<long>(n_val));
    f.train_cycles.assign(rest.begin() + static_cast<long>(n_val), rest.end());
    std::sort(f.val_cycles.begin(), f.val_cycles.end());
    std::sort(f.train_cycles.begin(), f.train_cycles.end());
    if (f.val_cycles.empty()) {
      warn("fold " + std::to_string(test_subject) + ": validation split is empty (" + std::to_string(rest.size()) +
           " non-test cycles); model selection falls back to training loss");
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("train config: " + what);
  };
  check(epochs >= 1, "epochs must be positive");
  check(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
  check(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must be in [0, 1)");
  check(epsilon > 0.0, "epsilon must be positive");
  check(patience >= 1, "patience must be positive");
  check(clip_norm > 0.0, "clip_norm must be positive");
  encoder.validate();
  cycle.validate();
}

std::vector<Tensor<float>> masks_as_tensors(const CineSequence& seq) {
  if (!seq.masks) throw std::invalid_argument("cycle " + seq.id.str() + " has no masks");
  std::vector<Tensor<float>> out;
  for (const Mask& m : *seq.masks) {
    std::vector<float> v(m.bits.begin(), m.bits.end());
    out.emplace_back(Shape::chw(1, m.height, m.width), std::move(v));
  }
  return out;
}

double evaluate_loss(const SegModel<float>& model, const Dataset& data, const std::vector<SequenceId>& cycles) {
  if (cycles.empty()) throw std::invalid_argument("evaluate_loss: no cycles");
  double total = 0.0;
  for (const SequenceId& id : cycles) {
    const CineSequence& seq = lookup(data, id);
    total += static_cast<double>(bce_loss(forward_sequence(model, seq), masks_as_tensors(seq))[0]);
  }
  return total / static_cast<double>(cycles.size());
}

TrainResult train_model(const TrainConfig& cfg, const FoldSpec& fold, const Dataset& data, const LogSink& sink,
                        const SegModel<float>* pretrained) {
  cfg.validate();
  if (fold.train_cycles.empty()) throw std::invalid_argument("train_model: fold has no training cycles");
  std::set<SequenceId> test(fold.test_cycles.begin(), fold.test_cycles.end());
  for (const auto* list : {&fold.train_cycles, &fold.val_cycles}) {
    for (const SequenceId& id : *list) {
      if (test.count(id)) throw std::invalid_argument("train_model: cycle " + id.str() + " is also a test cycle");
      lookup(data, id);
    }
  }
  const CineSequence& first = lookup(data, fold.train_cycles.front());

  TrainResult result;
  if (pretrained) {
    if (pretrained->variant != Variant::CnnOnly) throw std::invalid_argument("train_model: pretrained model must be cnn-only");
    result.pretrained = *pretrained;
  } else {
    SegModel<float> init = init_model<float>(Variant::CnnOnly, cfg.encoder, cfg.cycle, first.height(), first.width(),
                                             substream_seed(cfg.seed, "init/cnn"));
    StageOutcome a = run_stage("cnn", std::move(init), cfg.pretrain_epochs, false, cfg, fold, data, result.log, sink);
    result.pretrained = a.best;
    result.best_val_loss = a.best_loss;
    result.best_epoch = a.best_epoch;
  }
  if (cfg.variant == Variant::CnnOnly) {
    result.model = result.pretrained;
    return result;
  }
  SegModel<float> temporal =
      with_temporal_blocks(result.pretrained, cfg.variant, substream_seed(cfg.seed, "init/" + to_string(cfg.variant)));
  StageOutcome b = run_stage(to_string(cfg.variant), std::move(temporal), cfg.epochs, cfg.freeze_encoder, cfg, fold,
                             data, result.log, sink);
  result.model = std::move(b.best);
  result.best_val_loss = b.best_loss;
  result.best_epoch = b.best_epoch;
  return result;
}

std::vector<Image> ensemble_probabilities(std::span<const SegModel<float>> models, const CineSequence& cycle,
                                          std::size_t expected_members) {
  const std::vector<std::vector<double>> mean = ensemble_mean(models, cycle, expected_members);
  std::vector<Image> out;
  for (const auto& frame : mean) {
    Image img(cycle.height(), cycle.width());
    for (std::size_t i = 0; i < frame.size(); ++i) img.pixels[i] = static_cast<float>(frame[i]);
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<std::vector<double>> mean_maps(const std::vector<std::vector<Tensor<float>>>& member_maps) {
  if (member_maps.empty()) throw std::invalid_argument("mean_maps: no members");
  const std::size_t frames = member_maps[0].size();
  std::vector<std::vector<double>> acc(frames);
  for (std::size_t t = 0; t < frames; ++t) acc[t].assign(member_maps[0][t].size(), 0.0);
  for (const auto& member : member_maps) {
    if (member.size() != frames) throw std::invalid_argument("mean_maps: members differ in frame count");
    for (std::size_t t = 0; t < frames; ++t) {
      std::span<const float> p = member[t].data();
      if (p.size() != acc[t].size()) throw std::invalid_argument("mean_maps: members differ in map size");
      for (std::size_t i = 0; i < p.size(); ++i) acc[t][i] += static_cast<double>(p[i]);
    }
  }
  const double count = static_cast<double>(member_maps.size());
  for (auto& frame : acc) {
    for (double& v : frame) v /= count;
  }
  return acc;
}

Mask threshold_mean(const std::vector<double>& mean, std::size_t height, std::size_t width, double spacing_mm) {
  if (mean.size() != height * width) throw std::invalid_argument("threshold_mean: size does not match mask shape");
  Mask m(height, width, spacing_mm);
  for (std::size_t i = 0; i < mean.size(); ++i) m.bits[i] = mean[i] > 0.5 ? 1 : 0;
  return m;
}

Mask threshold_map(const Image& probabilities, double spacing_mm) {
  Mask m(probabilities.height, probabilities.width, spacing_mm);
  for (std::size_t i = 0; i < probabilities.size(); ++i) m.bits[i] = probabilities.pixels[i] > 0.5f ? 1 : 0;
  return m;
}

std::vector<Mask> ensemble_predict(std::span<const SegModel<float>> models, const CineSequence& cycle,
                                   std::size_t expected_members) {
  // Threshold the double-precision mean so the 0.5 tie rule is exact.
  const std::vector<std::vector<double>> mean = ensemble_mean(models, cycle, expected_members);
  std::vector<Mask> out;
  for (const auto& frame : mean) out.push_back(threshold_mean(frame, cycle.height(), cycle.width(), cycle.spacing_mm.first));
  return out;
}

}  // namespace cinelstm
