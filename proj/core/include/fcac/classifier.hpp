#pragma once

// Dynamically expanded prototype classifier: one prototype per class.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fcac/embedding.hpp"
#include "fcac/pan.hpp"

namespace fcac {

struct ClassPrototype {
  ClassId class_id = 0;
  std::vector<Real> vector;
};

class PrototypeStore {
 public:
  explicit PrototypeStore(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t session_index() const { return session_index_; }
  std::span<const ClassPrototype> entries() const { return entries_; }
  std::vector<ClassId> class_ids() const;
  bool contains(ClassId id) const;

  /// Throws ProtocolError on a duplicate id, ShapeError/InvalidInput on a bad vector.
  void append(ClassId id, std::vector<Real> vector);
  void set_session_index(std::size_t index) { session_index_ = index; }

  /// size() x dim() tensor of the prototypes in entry order.
  Tensor as_tensor() const;
  /// FNV-1a over ids, vectors and the session index.
  std::uint64_t hash() const;

 private:
  std::size_t dim_;
  std::size_t session_index_ = 0;
  std::vector<ClassPrototype> entries_;
};

/// Per-class mean embeddings, ordered by class id; session index 0.
PrototypeStore build_base(std::span<const Embedding> labeled);

/// Runs the PAN over the session's support and query embeddings: novel
/// prototypes from the generation module, then every prototype is replaced by
/// its consolidated per-query adaptation and the novel ones are appended.
PrototypeStore expand_session(const PrototypeStore& store, const PanParams& pan,
                              std::span<const Embedding> support,
                              std::span<const Embedding> queries,
                              ConsolidationMode mode = ConsolidationMode::mean);

/// Ablation baseline: appends per-class mean prototypes and leaves existing ones alone.
PrototypeStore naive_expand(const PrototypeStore& store, std::span<const Embedding> support);

enum class EvalMode { plain, pqam };
const char* to_string(EvalMode mode);
EvalMode eval_mode_from_string(const std::string& name);

struct Prediction {
  std::string clip_id;
  ClassId class_id = 0;
  std::vector<Real> scores;  // one per store entry, entry order
};

/// plain: cosine against the stored prototypes. pqam: the adaptation module
/// with the embedding as its single query; the store is never modified.
/// Ties go to the lowest class id.
Prediction predict(const PrototypeStore& store, const Embedding& embedding, EvalMode mode,
                   const PanParams* pan = nullptr);

/// N_c * D: one prototype of D reals per stored class.
std::size_t prototype_payload_elements(const PrototypeStore& store);

}  // namespace fcac
