#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <string>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "space/augment.hpp"
#include "space/datasets.hpp"
#include "space/losses.hpp"
#include "space/model.hpp"
#include "space/optim.hpp"
#include "space/parallel.hpp"
#include "space/scoring.hpp"

namespace space {

struct TrainConfig {
  std::uint64_t iterations = 70000;
  std::size_t batch_size = 1;
  double learning_rate = 1e-4;
  std::uint64_t lr_decay_at = 0;  // 0 = constant learning rate
  double wd_student = 1e-5;
  double wd_fe_fm = 1e-6;
  std::uint64_t lambda1_warmup_iters = 5000;
  double lambda1_value = 1.0;
  double lambda2 = 0.1;
  double q_hard = 0.99;
  double alpha_ema = 0.999;
  double student_weight_ema = 0.999;  // 0 disables (shadow tracks the live student)
  bool student_ema_for_fm = true;
  bool use_fm = true;
  bool normalize_teacher_in_losses = true;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_every = 0;  // 0 = only the final checkpoint

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    const std::pair<const char*, double> nonneg[] = {{"learning_rate", learning_rate},
                                                     {"wd_student", wd_student},
                                                     {"wd_fe_fm", wd_fe_fm},
                                                     {"lambda1_value", lambda1_value},
                                                     {"lambda2", lambda2}};
    for (auto [name, v] : nonneg)
      if (!(v >= 0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be >= 0");
    if (!(q_hard >= 0 && q_hard <= 1)) throw ConfigError("q_hard must be in [0,1]");
    if (!(alpha_ema >= 0 && alpha_ema <= 1)) throw ConfigError("alpha_ema must be in [0,1]");
    if (!(student_weight_ema >= 0 && student_weight_ema < 1))
      throw ConfigError("student_weight_ema must be in [0,1)");
  }
};

inline double lambda1_at(std::uint64_t iter, const TrainConfig& cfg) {
  return iter < cfg.lambda1_warmup_iters ? 0.0 : cfg.lambda1_value;
}

inline constexpr const char* kLossCsvHeader =
    "iter,l_ts,l_ow,l_os,l_ws,l_structural,l_fae,l_fm,l_logical,l_total,sel_o,sel_w,sel_s";

inline std::string loss_csv_row(std::uint64_t iter, const LossBundle& b) {
  std::ostringstream os;
  os.precision(9);
  os << iter;
  for (double v : {b.l_ts, b.l_ow, b.l_os, b.l_ws, b.l_structural, b.l_fae, b.l_fm, b.l_logical,
                   b.l_total, b.sel_o, b.sel_w, b.sel_s})
    os << ',' << v;
  return os.str();
}

// Per-channel statistics of the teacher over the training images.
template <typename T>
TeacherStats<T> compute_teacher_stats(const Pdn<T>& teacher, std::span<const ImageSample> train,
                                      std::size_t input_size) {
  if (train.empty()) throw ConfigError("teacher statistics need a nonempty training set");
  std::vector<FeatureMap<T>> maps(train.size());
  parallel_for(train.size(), [&](std::size_t i) {
    maps[i] = infer<T>(teacher, to_model_input<T>(train[i], input_size));
  });
  return teacher_stats_from_features<T>(maps);
}

// The augmented inputs for one step, already standardized.
template <typename T>
struct StepViews {
  Tensor<T> original, weak, strong, jitter;
};

inline std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t iter, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(iter), static_cast<std::uint32_t>(iter >> 32), stream};
  return std::mt19937_64(seq);
}

template <typename T>
StepViews<T> make_views(const Tensor<T>& unit, const AugmentSpec& aug, std::uint64_t seed,
                        std::uint64_t iter, std::size_t slot) {
  const auto base = static_cast<std::uint32_t>(slot * 4);
  auto rw = step_rng(seed, iter, base + 1);
  auto rs = step_rng(seed, iter, base + 2);
  auto rj = step_rng(seed, iter, base + 3);
  StepViews<T> v;
  v.original = standardize(unit);
  v.weak = standardize(weak_augment(unit, aug, rw));
  v.strong = standardize(strong_augment(unit, aug, rs));
  v.jitter = standardize(color_jitter(weak_augment(unit, aug, rj), aug, rj));
  return v;
}

// One optimization step over a batch of [0,1] images; owns the optimizer state.
template <typename T>
class Trainer {
 public:
  Trainer(SpaceModel<T>& model, const TrainConfig& cfg, const AugmentSpec& aug)
      : model_(model), cfg_(cfg), aug_(aug), opt_(cfg.learning_rate) {
    cfg.validate();
    aug.validate();
    model_.criterion.alpha = static_cast<T>(cfg.alpha_ema);
    model_.student_ema_for_fm = cfg.student_ema_for_fm;
    model_.use_fm = cfg.use_fm;
    opt_.add_group(model_.nets.student.parameters(), cfg.wd_student);
    NamedParams<T> logical = model_.nets.encoder.parameters();
    if (cfg.use_fm)
      for (auto& p : model_.nets.converter.parameters()) logical.push_back(p);
    opt_.add_group(logical, cfg.wd_fe_fm);
  }

  const AdamW<T>& optimizer() const { return opt_; }

  LossBundle step(std::span<const Tensor<T>> unit_images) {
    const std::uint64_t iter = model_.iteration;
    if (cfg_.lr_decay_at > 0 && iter >= cfg_.lr_decay_at) opt_.set_lr(cfg_.learning_rate * 0.1);
    const auto n = static_cast<T>(unit_images.size());
    const T lambda1 = static_cast<T>(lambda1_at(iter, cfg_));
    auto& nets = model_.nets;

    std::vector<StepViews<T>> views;
    for (std::size_t b = 0; b < unit_images.size(); ++b)
      views.push_back(make_views(unit_images[b], aug_, cfg_.seed, iter, b));

    auto teacher = [&](const Tensor<T>& x) {
      FeatureMap<T> t = infer<T>(nets.teacher, x);
      return cfg_.normalize_teacher_in_losses ? normalize_teacher(t, model_.teacher_stats) : t;
    };

    struct Forward {
      Tensor<T> t_o, t_j;
      Var<T> s_o, s_w, s_s, ae_j, s_j;
    };
    std::vector<Forward> fw;
    Tensor<T> f_ts_mean;
    for (const auto& v : views) {
      Forward f;
      f.t_o = teacher(v.original);
      f.t_j = teacher(v.jitter);
      f.s_o = nets.student.forward(Var<T>::constant(v.original));
      f.s_w = nets.student.forward(Var<T>::constant(v.weak));
      f.s_s = nets.student.forward(Var<T>::constant(v.strong));
      f.ae_j = nets.encoder.forward(Var<T>::constant(v.jitter));
      f.s_j = Var<T>::constant(infer<T>(model_.logical_student(), v.jitter));
      accumulate_mean(f_ts_mean, sq_diff(f.t_o, f.s_o.value()), n);
      fw.push_back(std::move(f));
    }

    // No threshold exists before the first step: seed it from this batch.
    const bool bootstrap = !model_.criterion.initialized;
    if (bootstrap) update_criterion(model_.criterion, f_ts_mean);

    Var<T> total;
    LossBundle sum_bundle;
    for (const auto& f : fw) {
      auto scl = scl_losses(f.t_o, f.s_o, f.s_w, f.s_s, model_.criterion, lambda1);
      auto logical = logical_losses(
          f.t_j, f.ae_j, f.s_j, [&](const Var<T>& x) { return model_.convert(x); }, cfg_.q_hard,
          static_cast<T>(cfg_.lambda2));
      const LossBundle b = combine(scl.bundle, logical.bundle);
      add_scaled(sum_bundle, b, 1.0 / static_cast<double>(fw.size()));
      Var<T> sample_total = add(scl.structural, logical.logical);
      total = total.defined() ? add(total, sample_total) : sample_total;
    }
    if (fw.size() > 1) total = scale(total, T{1} / n);
    if (!sum_bundle.finite())
      throw NumericError("non-finite loss at iteration " + std::to_string(iter) + ": " +
                         loss_csv_row(iter, sum_bundle));

    opt_.zero_grad();
    backward(total);
    opt_.step();

    if (!bootstrap) update_criterion(model_.criterion, f_ts_mean);
    update_shadow();
    ++model_.iteration;
    return sum_bundle;
  }

 private:
  static void accumulate_mean(Tensor<T>& acc, const Tensor<T>& x, T n) {
    if (acc.empty()) {
      acc = Tensor<T>(x.shape());
    }
    for (std::size_t i = 0; i < x.size(); ++i) acc[i] += x[i] / n;
  }

  static void add_scaled(LossBundle& acc, const LossBundle& b, double w) {
    acc.l_ts += w * b.l_ts;
    acc.l_ow += w * b.l_ow;
    acc.l_os += w * b.l_os;
    acc.l_ws += w * b.l_ws;
    acc.l_structural += w * b.l_structural;
    acc.l_fae += w * b.l_fae;
    acc.l_fm += w * b.l_fm;
    acc.l_logical += w * b.l_logical;
    acc.l_total += w * b.l_total;
    acc.sel_o += w * b.sel_o;
    acc.sel_w += w * b.sel_w;
    acc.sel_s += w * b.sel_s;
  }

  void update_shadow() {
    const auto live = model_.nets.student.parameters();
    const auto shadow = model_.nets.student_shadow.parameters();
    const T beta = static_cast<T>(cfg_.student_weight_ema);
    for (std::size_t i = 0; i < live.size(); ++i) {
      Var<T> dst = shadow[i].second;
      const Tensor<T>& src = live[i].second.value();
      Tensor<T>& d = dst.mutable_value();
      if (beta == T{0}) {
        d = src;
        continue;
      }
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = beta * d[k] + (T{1} - beta) * src[k];
    }
  }

  SpaceModel<T>& model_;
  TrainConfig cfg_;
  AugmentSpec aug_;
  AdamW<T> opt_;
};

template <typename T>
struct TrainHooks {
  std::function<void(std::uint64_t iter, const LossBundle&)> on_step;
  std::function<void(const SpaceModel<T>&)> on_checkpoint;
};

// Full loop: teacher statistics, cfg.iterations steps sampling training
// images uniformly with replacement, then calibration on the validation set.
template <typename T>
void train(SpaceModel<T>& model, const TrainConfig& cfg, const AugmentSpec& aug,
           const DatasetSplit& data, const TrainHooks<T>& hooks = {}) {
  if (data.train.empty()) throw ConfigError("training set is empty");
  const std::size_t size = model.nets.config.input_size;
  model.teacher_stats = compute_teacher_stats(model.nets.teacher, data.train, size);

  std::vector<Tensor<T>> units(data.train.size());
  parallel_for(units.size(),
               [&](std::size_t i) { units[i] = to_unit_tensor<T>(data.train[i].pixels, size); });

  Trainer<T> trainer(model, cfg, aug);
  std::uniform_int_distribution<std::size_t> pick(0, units.size() - 1);
  std::vector<Tensor<T>> batch(cfg.batch_size);
  for (std::uint64_t it = 0; it < cfg.iterations; ++it) {
    auto rng = step_rng(cfg.seed, model.iteration, 0);
    for (auto& b : batch) b = units[pick(rng)];
    const LossBundle bundle = trainer.step(batch);
    if (hooks.on_step) hooks.on_step(model.iteration - 1, bundle);
    if (cfg.checkpoint_every > 0 && model.iteration % cfg.checkpoint_every == 0 &&
        it + 1 < cfg.iterations && hooks.on_checkpoint)
      hooks.on_checkpoint(model);
  }
  if (!data.validation.empty()) model.calibration = calibrate(model, data.validation);
  model.student_ema_for_fm = cfg.student_ema_for_fm;
  model.use_fm = cfg.use_fm;
}

}  // namespace space
