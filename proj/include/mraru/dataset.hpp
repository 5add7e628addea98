#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mraru/rng.hpp"

namespace mraru {

class TeacherOracle;

// One corpus element: an embedded text with an optional hidden gold label.
struct EmbeddedItem {
  std::string id;
  std::vector<double> features;
  std::optional<std::string> text;
  std::optional<int> gold_label;
};

struct ClassCatalog {
  std::vector<std::string> names;

  int num_classes() const { return static_cast<int>(names.size()); }
  // Throws if fewer than 2 classes or names are empty/duplicated.
  void validate() const;
  // Index of a name, or -1.
  int index_of(const std::string& name) const;
};

// An immutable pool of embedded items with an id index.
class Pool {
 public:
  Pool(std::vector<EmbeddedItem> items, ClassCatalog catalog, std::size_t dim);

  const std::vector<EmbeddedItem>& items() const { return items_; }
  const ClassCatalog& catalog() const { return catalog_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return items_.size(); }

  const EmbeddedItem& by_id(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) > 0; }

 private:
  std::vector<EmbeddedItem> items_;
  ClassCatalog catalog_;
  std::size_t dim_;
  std::unordered_map<std::string, std::size_t> index_;
};

// The evolving labeled set L and unlabeled pool U. Ids move from U to L
// exactly when a teacher label is assigned.
class PoolState {
 public:
  PoolState(const std::vector<std::string>& ids, ClassCatalog catalog);

  const std::vector<std::pair<std::string, int>>& labeled() const {
    return labeled_;
  }
  const std::vector<std::string>& unlabeled() const { return unlabeled_; }
  std::size_t labeled_size() const { return labeled_.size(); }
  std::size_t unlabeled_size() const { return unlabeled_.size(); }
  const ClassCatalog& catalog() const { return catalog_; }

  bool is_unlabeled(const std::string& id) const {
    return unlabeled_pos_.count(id) > 0;
  }
  // Moves id from U to L with the given label. Throws if id is not in U or
  // the label is out of range.
  void assign_label(const std::string& id, int label);

  // Checks L/U disjointness and label ranges; throws on violation.
  void check_invariants() const;

 private:
  std::vector<std::pair<std::string, int>> labeled_;
  std::vector<std::string> unlabeled_;
  std::unordered_map<std::string, std::size_t> unlabeled_pos_;
  std::unordered_map<std::string, int> labeled_by_id_;
  ClassCatalog catalog_;
};

struct DatasetSplit {
  std::vector<std::string> train_pool;
  std::vector<std::string> eval_set;
};

struct SyntheticSpec {
  int num_classes = 2;
  int dim = 2;
  std::vector<int> per_class_counts;
  double class_mean_separation = 1.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
};

// Reads a line-delimited dataset file. Line 1 is a header object
// {"dim": d, "classes": [...]}, each following line one item record.
Pool load_pool(const std::string& path,
               std::optional<std::size_t> expected_dim = std::nullopt);

// Writes a pool in the same format; loading then saving round-trips
// byte-exactly (shortest round-trip decimals).
void save_pool(const Pool& pool, const std::string& path);

// Isotropic Gaussian blobs, one per class. Class k's mean lies along the
// k-th canonical axis (or a deterministic pseudo-orthogonal direction when
// k >= d), scaled by class_mean_separation. Deterministic given seed.
Pool generate_synthetic(const SyntheticSpec& spec);

// Draws uniformly without replacement, labeling each draw via the oracle,
// until every class appears in L. Returns the number of labels spent.
// Throws if the pool is exhausted before covering all classes.
std::size_t seed_initial_labels(PoolState& state, const Pool& pool,
                                TeacherOracle& oracle, Rng& rng);

// Stratified split by gold label; deterministic given seed.
DatasetSplit split(const Pool& pool, double eval_fraction, std::uint64_t seed);

}  // namespace mraru
