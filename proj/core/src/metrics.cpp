#include "fcac/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "fcac/error.hpp"

namespace fcac {

const char* to_string(Partition p) {
  switch (p) {
    case Partition::base:
      return "Base";
    case Partition::novel:
      return "Novel";
    case Partition::both:
      return "Both";
  }
  return "?";
}

std::optional<Real> accuracy(std::span<const ClassId> predicted, std::span<const ClassId> truth,
                             const std::set<ClassId>& classes) {
  if (predicted.size() != truth.size()) throw InvalidInput("accuracy: prediction/label count mismatch");
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!classes.count(truth[i])) continue;
    ++total;
    if (predicted[i] == truth[i]) ++correct;
  }
  if (total == 0) return std::nullopt;
  return Real(correct) / Real(total);
}

Real accuracy(std::span<const ClassId> predicted, std::span<const ClassId> truth) {
  if (truth.empty()) throw InvalidInput("accuracy: no samples");
  if (predicted.size() != truth.size()) throw InvalidInput("accuracy: prediction/label count mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i];
  return Real(correct) / Real(truth.size());
}

Real average_accuracy(std::span<const std::optional<Real>> per_session) {
  Real total = 0;
  std::size_t n = 0;
  for (const auto& a : per_session) {
    if (a) {
      total += *a;
      ++n;
    }
  }
  if (n == 0) throw InvalidInput("average accuracy needs at least one session accuracy");
  return total / Real(n);
}

Real performance_drop(std::span<const std::optional<Real>> per_session, Partition partition) {
  const auto sessions = per_session.size();
  const std::size_t first = partition == Partition::novel ? 1 : 0;
  if (sessions < 2) {
    throw InvalidInput(std::string("PD for ") + to_string(partition) + " needs at least two sessions");
  }
  const auto& start = per_session[first];
  const auto& end = per_session[sessions - 1];
  if (!start || !end) {
    throw InvalidInput(std::string("PD for ") + to_string(partition) + " is missing an endpoint accuracy");
  }
  return *start - *end;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
  return t;
}

ConfusionMatrix confusion_matrix(std::span<const ClassId> predicted, std::span<const ClassId> truth,
                                 std::span<const ClassId> class_order) {
  if (predicted.size() != truth.size()) throw InvalidInput("confusion_matrix: size mismatch");
  ConfusionMatrix cm;
  cm.classes.assign(class_order.begin(), class_order.end());
  cm.counts.assign(cm.classes.size(), std::vector<std::size_t>(cm.classes.size(), 0));
  auto index_of = [&](ClassId c) {
    const auto it = std::find(cm.classes.begin(), cm.classes.end(), c);
    if (it == cm.classes.end()) throw InvalidInput("confusion_matrix: unknown class " + std::to_string(c));
    return static_cast<std::size_t>(it - cm.classes.begin());
  };
  for (std::size_t i = 0; i < truth.size(); ++i) ++cm.counts[index_of(truth[i])][index_of(predicted[i])];
  return cm;
}

AttSs measure_att_ss(std::span<const double> update_seconds, std::size_t incremental_classes,
                     std::size_t dim) {
  if (update_seconds.empty()) throw InvalidInput("ATT needs at least one incremental session");
  AttSs out;
  out.att_seconds = std::accumulate(update_seconds.begin(), update_seconds.end(), 0.0) /
                    static_cast<double>(update_seconds.size());
  out.ss_elements = incremental_classes * dim;
  return out;
}

}  // namespace fcac
