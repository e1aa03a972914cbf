#pragma once

// Training loop: distinct-category mini-batches, Adam with L2 weight decay,
// cosine learning-rate annealing per epoch, periodic evaluation, metric
// records and checkpoints.

#include "eventbind/autodiff.hpp"
#include "eventbind/errors.hpp"
#include "eventbind/harness/augment.hpp"
#include "eventbind/harness/checkpoint.hpp"
#include "eventbind/harness/config.hpp"
#include "eventbind/harness/dataset_io.hpp"
#include "eventbind/harness/eval.hpp"
#include "eventbind/harness/model.hpp"
#include "eventbind/harness/synthetic.hpp"
#include "eventbind/rng.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace eventbind::harness {

using Record = nlohmann::ordered_json;

/// Adam with PyTorch-style weight decay (added to the gradient).
class Adam {
 public:
  Adam(nn::ParamStore& store, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& [name, p] : store.items()) {
      if (!p->trainable) continue;
      slots_.push_back(Slot{p.get(), ad::Mat::Zero(p->value.rows(), p->value.cols()), ad::Mat::Zero(p->value.rows(), p->value.cols())});
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& s : slots_) {
      ad::Mat g = s.param->grad;
      if (wd_ != 0.0) g += wd_ * s.param->value;
      s.m = b1_ * s.m + (1.0 - b1_) * g;
      s.v = b2_ * s.v + (1.0 - b2_) * g.cwiseProduct(g);
      const ad::Mat denom = (s.v / c2).cwiseSqrt().array() + eps_;
      s.param->value -= (lr / c1) * s.m.cwiseQuotient(denom);
    }
  }

  [[nodiscard]] long steps() const { return t_; }

 private:
  struct Slot {
    ad::Param* param;
    ad::Mat m;
    ad::Mat v;
  };
  std::vector<Slot> slots_;
  double wd_, b1_, b2_, eps_;
  long t_ = 0;
};

/// Cosine annealing from lr at epoch 0 towards min_lr at epoch `epochs`.
inline double cosine_lr(double lr, double min_lr, int epoch, int epochs) {
  if (epochs <= 0) return lr;
  return min_lr + 0.5 * (lr - min_lr) * (1.0 + std::cos(std::numbers::pi * epoch / epochs));
}

/// One epoch of batches in which no category repeats within a batch. Every
/// sample appears exactly once. Deterministic in (seed, epoch).
inline std::vector<std::vector<std::size_t>> category_batches(std::span<const PreparedSample> samples, int num_categories, int batch_size,
                                                              std::uint64_t seed, int epoch) {
  Rng rng(seed * 0xD1B54A32D192ED03ULL + static_cast<std::uint64_t>(epoch) + 1);
  std::vector<std::vector<std::size_t>> pools(static_cast<std::size_t>(num_categories));
  for (std::size_t i = 0; i < samples.size(); ++i) pools[static_cast<std::size_t>(samples[i].category)].push_back(i);
  for (auto& p : pools) rng.shuffle(p);
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> live;
  for (;;) {
    live.clear();
    for (std::size_t c = 0; c < pools.size(); ++c) {
      if (!pools[c].empty()) live.push_back(c);
    }
    if (live.empty()) break;
    // fullest categories first so pools drain evenly
    rng.shuffle(live);
    std::stable_sort(live.begin(), live.end(), [&](std::size_t a, std::size_t b) { return pools[a].size() > pools[b].size(); });
    if (live.size() > static_cast<std::size_t>(batch_size)) live.resize(static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> batch;
    for (std::size_t c : live) {
      batch.push_back(pools[c].back());
      pools[c].pop_back();
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

/// (train, val) from data_dir or the in-memory simulator, with the
/// few-shot subset applied to train when few_shot_k > 0.
inline std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg) {
  std::pair<Dataset, Dataset> d;
  if (!cfg.data_dir.empty()) {
    d = read_dataset(cfg.data_dir);
    if (d.first.categories != cfg.categories) throw ConfigError("categories in " + cfg.data_dir + " do not match the config");
  } else {
    const Dataset all = make_synthetic_dataset(cfg.seed, cfg.categories, cfg.train_per_category + cfg.val_per_category, cfg.sensor_size,
                                               cfg.simulator);
    d = split_dataset(all, cfg.train_per_category);
  }
  if (cfg.few_shot_k > 0) d.first = few_shot_subset(d.first, cfg.few_shot_k, cfg.seed);
  return d;
}

inline Record step_record(int epoch, long step, double lr, const htca::LossReport& r, const htca::LossWeights& w, const std::string& structure) {
  auto opt = [](const std::optional<double>& v) { return v ? Record(*v) : Record(nullptr); };
  return Record{{"kind", "step"},   {"epoch", epoch},       {"step", step},         {"lr", lr},
                {"l_ie", opt(r.l_ie)}, {"l_et", opt(r.l_et)}, {"l_tt", opt(r.l_tt)}, {"l_mse", opt(r.l_mse)},
                {"total", r.total}, {"terms", r.composition(w)}, {"structure", structure}};
}

inline Record eval_record(int epoch, const EvalResult& train, const std::optional<EvalResult>& val, double tau, double mean_loss, double wall_s) {
  auto recall = [](const std::array<std::optional<double>, 3>& r, std::size_t i) { return r[i] ? Record(*r[i]) : Record(nullptr); };
  const EvalResult& gallery = val ? *val : train;
  return Record{{"kind", "epoch"},
                {"epoch", epoch},
                {"mean_loss", mean_loss},
                {"train_acc", train.accuracy},
                {"val_acc", val ? Record(val->accuracy) : Record(nullptr)},
                {"t2e_r1", recall(gallery.text_to_event, 0)},
                {"t2e_r5", recall(gallery.text_to_event, 1)},
                {"t2e_r10", recall(gallery.text_to_event, 2)},
                {"i2e_r1", recall(gallery.image_to_event, 0)},
                {"i2e_r5", recall(gallery.image_to_event, 1)},
                {"i2e_r10", recall(gallery.image_to_event, 2)},
                {"tau", tau},
                {"wall_s", wall_s}};
}

struct TrainOptions {
  bool write_files = true;                       // metrics.ndjson, checkpoint.ebck, best.ebck under out_dir
  std::function<void(const Record&)> on_record;  // every step and epoch record, in order
};

struct TrainOutcome {
  std::vector<double> step_losses;
  std::vector<std::string> compositions;  // distinct, in first-seen order
  long steps = 0;
  int epochs_run = 0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
  double best_score = -1.0;
  int best_epoch = -1;
  std::string history;  // all records, newline-delimited
};

/// Trains `model` in place. Evaluates every eval_every epochs and after the
/// last one; the best checkpoint is chosen by val accuracy (train accuracy
/// when there is no validation split), earliest epoch winning ties.
inline TrainOutcome train(EventBindModel& model, const Dataset& train_set, const Dataset& val_set, const TrainOptions& opts = {}) {
  const RunConfig& cfg = model.config();
  const auto t0 = std::chrono::steady_clock::now();
  const auto wall = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  const std::vector<PreparedSample> train_data = prepare(train_set, cfg.representation);
  const std::vector<PreparedSample> val_data = prepare(val_set, cfg.representation);
  if (train_data.empty()) throw ConfigError("training set is empty");

  const std::filesystem::path out = cfg.out_dir;
  std::ofstream metrics;
  if (opts.write_files) {
    std::filesystem::create_directories(out);
    metrics.open(out / "metrics.ndjson");
    if (!metrics) throw DataError(DataError::Code::kIo, "cannot write " + (out / "metrics.ndjson").string());
  }

  TrainOutcome result;
  const std::string snapshot = cfg.serialize();
  auto emit = [&](const Record& r) {
    const std::string line = r.dump();
    result.history += line;
    result.history += '\n';
    if (metrics.is_open()) metrics << line << '\n' << std::flush;
    if (opts.on_record) opts.on_record(r);
  };
  auto save = [&](const std::string& file, int epoch) {
    if (opts.write_files) Checkpoint::capture(model.params(), snapshot, static_cast<std::uint32_t>(epoch), result.history).save((out / file).string());
  };
  auto run_eval = [&](int epoch, double mean_loss) {
    const EvalResult tr = evaluate(model, train_data, val_data.empty());
    std::optional<EvalResult> va;
    if (!val_data.empty()) va = evaluate(model, val_data, true);
    emit(eval_record(epoch, tr, va, model.temperature_value(), mean_loss, wall()));
    result.train_acc = tr.accuracy;
    result.val_acc = va ? std::optional<double>(va->accuracy) : std::nullopt;
    const double score = va ? va->accuracy : tr.accuracy;
    if (score > result.best_score) {
      result.best_score = score;
      result.best_epoch = epoch;
      save("best.ebck", epoch);
    }
    return tr.accuracy;
  };

  const htca::LossWeights w = cfg.effective_weights();
  const std::string structure = cfg.structure();
  Adam adam(model.params(), cfg.weight_decay);
  if (cfg.epochs == 0) run_eval(0, 0.0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.lr, cfg.min_lr, epoch, cfg.epochs);
    auto batches = category_batches(train_data, model.num_categories(), cfg.batch_size, cfg.seed, epoch);
    if (cfg.max_batches_per_epoch > 0 && batches.size() > static_cast<std::size_t>(cfg.max_batches_per_epoch)) {
      batches.resize(static_cast<std::size_t>(cfg.max_batches_per_epoch));
    }
    double loss_sum = 0.0;
    Rng aug_rng(cfg.seed * 0x94D049BB133111EBULL + static_cast<std::uint64_t>(epoch) + 1);
    std::vector<PreparedSample> augmented;
    std::vector<const PreparedSample*> batch;
    for (const auto& idx : batches) {
      batch.clear();
      augmented.clear();
      augmented.reserve(idx.size());
      for (std::size_t i : idx) {
        if (cfg.augment) {
          augmented.push_back(dihedral(train_data[i], static_cast<int>(aug_rng.below(kDihedralCount))));
          batch.push_back(&augmented.back());
        } else {
          batch.push_back(&train_data[i]);
        }
      }
      model.params().zero_grad();
      ad::Tape tape;
      const htca::LossResult loss = model.batch_loss(tape, batch);
      const double total = loss.report.total;
      if (!std::isfinite(total)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(adam.steps() + 1));
      }
      tape.backward(loss.total);
      adam.step(lr);
      loss_sum += total;
      result.step_losses.push_back(total);
      const std::string comp = loss.report.composition(w);
      if (std::find(result.compositions.begin(), result.compositions.end(), comp) == result.compositions.end()) result.compositions.push_back(comp);
      emit(step_record(epoch + 1, adam.steps(), lr, loss.report, w, structure));
    }
    result.steps = adam.steps();
    result.epochs_run = epoch + 1;
    const bool last = epoch + 1 == cfg.epochs;
    if ((epoch + 1) % cfg.eval_every == 0 || last) {
      const double acc = run_eval(epoch + 1, loss_sum / static_cast<double>(std::max<std::size_t>(batches.size(), 1)));
      if (cfg.early_stop_train_acc > 0.0 && acc >= cfg.early_stop_train_acc && !last) break;
    }
  }
  save("checkpoint.ebck", result.epochs_run);
  return result;
}

}  // namespace eventbind::harness
