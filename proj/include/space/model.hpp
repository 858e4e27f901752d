#pragma once

#include <cstdint>
#include <string>

#include "space/losses.hpp"
#include "space/networks.hpp"

namespace space {

// Validation quantiles for the two raw map kinds.
struct CalibrationStats {
  double structural_lo = 0, structural_hi = 1;
  double logical_lo = 0, logical_hi = 1;
  bool valid = false;
  friend bool operator==(const CalibrationStats&, const CalibrationStats&) = default;
};

// Everything a checkpoint carries.
template <typename T>
struct SpaceModel {
  NetworkSet<T> nets;
  TeacherStats<T> teacher_stats;
  CriterionState<T> criterion;
  CalibrationStats calibration;
  std::uint64_t iteration = 0;
  std::uint64_t init_seed = 0;
  bool student_ema_for_fm = true;  // logical branch reads the EMA student
  bool use_fm = true;              // false: converter replaced by identity
  std::string category = "toy";    // dataset the model was trained on
  double validation_fraction = 0.1;

  SpaceModel() = default;
  SpaceModel(const NetworkConfig& cfg, std::uint64_t seed) : nets(cfg), init_seed(seed) {
    nets.init(seed);
    const std::size_t c = cfg.feature_dim;
    teacher_stats = {Tensor<T>({c}, T{0}), Tensor<T>({c}, T{1})};
  }

  const Pdn<T>& logical_student() const {
    return student_ema_for_fm ? nets.student_shadow : nets.student;
  }

  Var<T> convert(const Var<T>& f) const { return use_fm ? nets.converter.forward(f) : f; }
};

}  // namespace space
