#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fcac/real.hpp"

namespace fcac {

/// Base = classes of session 0, Novel = classes of sessions 1..i, Both = all of them.
enum class Partition { base, novel, both };
const char* to_string(Partition p);

/// Correct / total over the samples whose true class is in `classes`;
/// nullopt when the partition holds no samples.
std::optional<Real> accuracy(std::span<const ClassId> predicted, std::span<const ClassId> truth,
                             const std::set<ClassId>& classes);
/// Over every sample. Throws on an empty input.
Real accuracy(std::span<const ClassId> predicted, std::span<const ClassId> truth);

/// Mean of the available per-session accuracies.
Real average_accuracy(std::span<const std::optional<Real>> per_session);

/// A_0 - A_{I-1} for Base and Both, A_1 - A_{I-1} for Novel. Needs I >= 2.
Real performance_drop(std::span<const std::optional<Real>> per_session, Partition partition);

struct ConfusionMatrix {
  std::vector<ClassId> classes;               // row/column order
  std::vector<std::vector<std::size_t>> counts;  // [truth][predicted]

  std::size_t total() const;
};

ConfusionMatrix confusion_matrix(std::span<const ClassId> predicted, std::span<const ClassId> truth,
                                 std::span<const ClassId> class_order);

struct AttSs {
  double att_seconds = 0;
  std::size_t ss_elements = 0;
};

/// ATT = mean incremental-update wall clock; SS = N_c * D for N_c classes added incrementally.
AttSs measure_att_ss(std::span<const double> update_seconds, std::size_t incremental_classes,
                     std::size_t dim);

}  // namespace fcac
