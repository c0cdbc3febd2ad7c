#include "fcac/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>

#include "fcac/error.hpp"
#include "fcac/tensor.hpp"

namespace fcac {

namespace {

// class id -> row indices, ordered by class id.
std::map<ClassId, std::vector<std::size_t>> by_class(std::span<const Embedding> items) {
  std::map<ClassId, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].class_id) throw InvalidInput("embedding '" + items[i].clip_id + "' has no label");
    groups[*items[i].class_id].push_back(i);
  }
  return groups;
}

std::vector<Real> mean_vector(std::span<const Embedding> items, const std::vector<std::size_t>& rows,
                              std::size_t dim) {
  std::vector<Real> acc(dim, Real(0));
  for (auto r : rows) {
    if (items[r].vector.size() != dim) throw ShapeError("embedding dimension mismatch");
    for (std::size_t j = 0; j < dim; ++j) acc[j] += items[r].vector[j];
  }
  for (auto& v : acc) v /= Real(rows.size());
  return acc;
}

void check_disjoint(const PrototypeStore& store,
                    const std::map<ClassId, std::vector<std::size_t>>& groups) {
  for (const auto& [cls, rows] : groups) {
    if (store.contains(cls)) {
      throw ProtocolError("session class " + std::to_string(cls) + " is already in the classifier");
    }
  }
}

std::vector<Real> row_of(const Tensor& t, std::size_t r) {
  const auto d = t.dim(1);
  return {t.data().begin() + static_cast<std::ptrdiff_t>(r * d),
          t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * d)};
}

}  // namespace

std::vector<ClassId> PrototypeStore::class_ids() const {
  std::vector<ClassId> ids;
  ids.reserve(entries_.size());
  for (const auto& e : entries_) ids.push_back(e.class_id);
  return ids;
}

bool PrototypeStore::contains(ClassId id) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [id](const ClassPrototype& e) { return e.class_id == id; });
}

void PrototypeStore::append(ClassId id, std::vector<Real> vector) {
  if (vector.size() != dim_) {
    throw ShapeError("prototype of length " + std::to_string(vector.size()) + " in a store of dimension " +
                     std::to_string(dim_));
  }
  for (auto v : vector) {
    if (!std::isfinite(v)) throw InvalidInput("non-finite prototype for class " + std::to_string(id));
  }
  if (contains(id)) throw ProtocolError("duplicate class id " + std::to_string(id));
  entries_.push_back({id, std::move(vector)});
}

Tensor PrototypeStore::as_tensor() const {
  if (entries_.empty()) throw StateError("prototype store is empty");
  std::vector<Real> values;
  values.reserve(entries_.size() * dim_);
  for (const auto& e : entries_) values.insert(values.end(), e.vector.begin(), e.vector.end());
  return Tensor::from({entries_.size(), dim_}, std::move(values));
}

std::uint64_t PrototypeStore::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
      h ^= (word >> (8 * i)) & 0xFF;
      h *= 1099511628211ull;
    }
  };
  mix(session_index_);
  mix(dim_);
  for (const auto& e : entries_) {
    mix(e.class_id);
    for (auto v : e.vector) mix(std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  }
  return h;
}

PrototypeStore build_base(std::span<const Embedding> labeled) {
  if (labeled.empty()) throw InvalidInput("build_base: no embeddings");
  const auto dim = labeled.front().vector.size();
  PrototypeStore store(dim);
  for (const auto& [cls, rows] : by_class(labeled)) store.append(cls, mean_vector(labeled, rows, dim));
  store.set_session_index(0);
  return store;
}

PrototypeStore expand_session(const PrototypeStore& store, const PanParams& pan,
                              std::span<const Embedding> support,
                              std::span<const Embedding> queries, ConsolidationMode mode) {
  if (support.empty()) throw InvalidInput("expand_session: empty support set");
  if (queries.empty()) throw InvalidInput("expand_session: no query embeddings");
  if (pan.dim() != store.dim() && !store.empty()) {
    throw ShapeError("PAN dimension " + std::to_string(pan.dim()) + " does not match store dimension " +
                     std::to_string(store.dim()));
  }
  const auto groups = by_class(support);
  check_disjoint(store, groups);
  const auto shots = groups.begin()->second.size();
  std::vector<std::size_t> order;
  std::vector<ClassId> novel_ids;
  for (const auto& [cls, rows] : groups) {
    if (rows.size() != shots) {
      throw ProtocolError("session classes must have equal shot counts (class " + std::to_string(cls) +
                          " has " + std::to_string(rows.size()) + ", expected " + std::to_string(shots) + ")");
    }
    order.insert(order.end(), rows.begin(), rows.end());
    novel_ids.push_back(cls);
  }
  std::vector<std::size_t> all_queries(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) all_queries[i] = i;

  NoGradGuard no_grad;
  const auto stack = [](std::span<const Embedding> items, const std::vector<std::size_t>& idx) {
    std::vector<Real> values;
    const auto d = items[idx.front()].vector.size();
    for (auto i : idx) {
      if (items[i].vector.size() != d) throw ShapeError("embedding dimension mismatch");
      values.insert(values.end(), items[i].vector.begin(), items[i].vector.end());
    }
    return Tensor::from({idx.size(), d}, std::move(values));
  };
  const Tensor novel = apgm_forward(pan.apgm, stack(support, order), shots);
  const Tensor old = store.empty() ? Tensor{} : store.as_tensor();
  const auto adapted = pqam_forward(pan.pqam, old, novel, stack(queries, all_queries), pan.temperature);
  const Tensor consolidated = consolidate_prototypes(adapted.prototypes, mode);

  PrototypeStore next(pan.dim());
  std::size_t row = 0;
  for (const auto& e : store.entries()) next.append(e.class_id, row_of(consolidated, row++));
  for (auto id : novel_ids) next.append(id, row_of(consolidated, row++));
  next.set_session_index(store.session_index() + 1);
  return next;
}

PrototypeStore naive_expand(const PrototypeStore& store, std::span<const Embedding> support) {
  if (support.empty()) throw InvalidInput("naive_expand: empty support set");
  const auto groups = by_class(support);
  check_disjoint(store, groups);
  PrototypeStore next = store;
  for (const auto& [cls, rows] : groups) next.append(cls, mean_vector(support, rows, store.dim()));
  next.set_session_index(store.session_index() + 1);
  return next;
}

const char* to_string(EvalMode mode) { return mode == EvalMode::pqam ? "pqam" : "plain"; }

EvalMode eval_mode_from_string(const std::string& name) {
  if (name == "plain") return EvalMode::plain;
  if (name == "pqam") return EvalMode::pqam;
  throw ConfigError("unknown evaluation mode '" + name + "'");
}

Prediction predict(const PrototypeStore& store, const Embedding& embedding, EvalMode mode,
                   const PanParams* pan) {
  if (store.empty()) throw StateError("cannot predict with an empty prototype store");
  if (embedding.vector.size() != store.dim()) throw ShapeError("embedding dimension mismatch");
  NoGradGuard no_grad;
  const Tensor query = Tensor::from({1, store.dim()}, embedding.vector);
  Tensor scores;
  if (mode == EvalMode::plain) {
    scores = cosine_similarity(query, store.as_tensor());
  } else {
    if (!pan) throw InvalidInput("pqam evaluation needs a trained PAN");
    scores = pqam_forward(pan->pqam, store.as_tensor(), {}, query, pan->temperature).scores;
  }
  Prediction out;
  out.clip_id = embedding.clip_id;
  out.scores.assign(scores.data().begin(), scores.data().end());
  std::size_t best = 0;
  const auto entries = store.entries();
  for (std::size_t i = 1; i < entries.size(); ++i) {
    const bool better = out.scores[i] > out.scores[best] ||
                        (out.scores[i] == out.scores[best] && entries[i].class_id < entries[best].class_id);
    if (better) best = i;
  }
  out.class_id = entries[best].class_id;
  return out;
}

std::size_t prototype_payload_elements(const PrototypeStore& store) { return store.size() * store.dim(); }

}  // namespace fcac
