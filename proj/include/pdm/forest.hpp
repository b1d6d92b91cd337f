#ifndef PDM_FOREST_HPP
#define PDM_FOREST_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdm/error.hpp"
#include "pdm/format.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/random.hpp"

namespace pdm {

enum class ForestTask : std::uint8_t { regression = 0, classification = 1 };

struct ForestConfig {
  std::size_t n_trees = 50;
  std::size_t max_depth = 8;
  std::size_t min_samples_leaf = 1;
  std::optional<std::size_t> features_per_split;  // nullopt = all features
  bool bootstrap = true;
  std::uint64_t rng_seed = 1;
  ForestTask task = ForestTask::regression;

  void validate(std::size_t n_features) const {
    if (n_trees < 1) fail(ErrorCode::invalid_argument, "n_trees must be >= 1");
    if (min_samples_leaf < 1) fail(ErrorCode::invalid_argument, "min_samples_leaf must be >= 1");
    if (features_per_split && (*features_per_split < 1 || *features_per_split > n_features)) {
      fail(ErrorCode::invalid_argument, "features_per_split must lie in [1, feature count]");
    }
  }
};

struct SplitCandidate {
  std::size_t feature = 0;
  double threshold = 0.0;
  double score = 0.0;

  friend bool operator==(const SplitCandidate&, const SplitCandidate&) = default;
};

/// Flat node; children are indices into Tree::nodes. Rows with
/// x[feature] <= threshold go left.
struct TreeNode {
  bool leaf = true;
  std::uint32_t feature = 0;
  double threshold = 0.0;
  double value = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::size_t samples = 0;  // training rows that reached the node (not serialized)

  friend bool operator==(const TreeNode& a, const TreeNode& b) {
    return a.leaf == b.leaf && a.feature == b.feature && a.threshold == b.threshold &&
           a.value == b.value && a.left == b.left && a.right == b.right;
  }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  Vector importance;            // sample-weighted split score per feature

  double predict(std::span<const double> x) const {
    std::uint32_t i = 0;
    while (!nodes[i].leaf) {
      i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    }
    return nodes[i].value;
  }

  std::size_t depth() const { return nodes.empty() ? 0 : depth_from(0); }

  friend bool operator==(const Tree& a, const Tree& b) { return a.nodes == b.nodes; }

 private:
  std::size_t depth_from(std::uint32_t i) const {
    if (nodes[i].leaf) return 0;
    return 1 + std::max(depth_from(nodes[i].left), depth_from(nodes[i].right));
  }
};

struct Forest {
  ForestConfig config;
  std::size_t n_features = 0;
  std::vector<Tree> trees;

  friend bool operator==(const Forest& a, const Forest& b) {
    return a.n_features == b.n_features && a.config.task == b.config.task && a.trees == b.trees;
  }
};

namespace detail {

/// Scores within this relative distance of each other count as tied.
inline constexpr double kScoreTolerance = 1e-12;

inline double node_impurity(std::span<const double> labels, std::span<const std::size_t> rows,
                            ForestTask task) {
  const double n = static_cast<double>(rows.size());
  if (task == ForestTask::classification) {
    double pos = 0.0;
    for (auto r : rows) pos += labels[r];
    const double p = pos / n;
    return 2.0 * p * (1.0 - p);
  }
  double mean = 0.0;
  for (auto r : rows) mean += labels[r];
  mean /= n;
  double ss = 0.0;
  for (auto r : rows) ss += (labels[r] - mean) * (labels[r] - mean);
  return ss / n;
}

inline bool constant_labels(std::span<const double> labels, std::span<const std::size_t> rows) {
  return std::all_of(rows.begin(), rows.end(), [&](auto r) { return labels[r] == labels[rows[0]]; });
}

/// Best split over `rows` (indices into samples/labels, duplicates allowed).
inline std::optional<SplitCandidate> best_split(std::span<const Vector> samples,
                                                std::span<const double> labels,
                                                std::span<const std::size_t> rows,
                                                std::span<const std::size_t> features, ForestTask task,
                                                std::size_t min_leaf) {
  const std::size_t n = rows.size();
  if (n < 2 || n < 2 * min_leaf || constant_labels(labels, rows)) return std::nullopt;
  const double parent = node_impurity(labels, rows, task);
  if (!(parent > 0.0)) return std::nullopt;

  // Centered labels keep the running-sum variance formula well conditioned.
  double mean = 0.0;
  for (auto r : rows) mean += labels[r];
  mean /= static_cast<double>(n);

  std::optional<SplitCandidate> best;
  std::vector<std::size_t> order(rows.begin(), rows.end());
  for (const std::size_t f : features) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return samples[a][f] < samples[b][f]; });
    double total = 0.0, total_sq = 0.0;
    for (auto r : order) {
      const double y = task == ForestTask::regression ? labels[r] - mean : labels[r];
      total += y;
      total_sq += y * y;
    }
    double left = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const std::size_t r = order[i];
      left += task == ForestTask::regression ? labels[r] - mean : labels[r];
      const double a = samples[r][f];
      const double b = samples[order[i + 1]][f];
      if (!(a < b)) continue;
      const std::size_t nl = i + 1, nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double dl = static_cast<double>(nl), dr = static_cast<double>(nr);
      const double dn = static_cast<double>(n);
      const double right = total - left;
      double score = 0.0;
      if (task == ForestTask::regression) {
        score = (left * left / dl + right * right / dr - total * total / dn) / dn;
      } else {
        const double pl = left / dl, pr = right / dr;
        score = parent - (dl / dn) * 2.0 * pl * (1.0 - pl) - (dr / dn) * 2.0 * pr * (1.0 - pr);
      }
      if (!(score > kScoreTolerance * parent)) continue;
      if (best && !(score > best->score + kScoreTolerance * parent)) continue;
      double threshold = 0.5 * (a + b);
      if (!(threshold < b)) threshold = a;
      best = SplitCandidate{f, threshold, score};
    }
  }
  return best;
}

}  // namespace detail

/// Exhaustive search over midpoints of adjacent distinct values of each
/// allowed feature. Score is variance reduction (regression) or Gini
/// decrease (classification). Ties go to the lowest feature index, then the
/// lowest threshold. None when no split scores above zero.
inline std::optional<SplitCandidate> find_best_split(std::span<const Vector> samples,
                                                     std::span<const double> labels,
                                                     std::span<const std::size_t> allowed_features,
                                                     ForestTask task = ForestTask::regression,
                                                     std::size_t min_samples_leaf = 1) {
  if (samples.size() != labels.size()) fail(ErrorCode::dimension, "samples and labels differ in count");
  std::vector<std::size_t> rows(samples.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::vector<std::size_t> features(allowed_features.begin(), allowed_features.end());
  std::sort(features.begin(), features.end());
  return detail::best_split(samples, labels, rows, features, task, min_samples_leaf);
}

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(std::span<const Vector> samples, std::span<const double> labels, const ForestConfig& cfg,
              std::size_t n_features, Pcg32& rng)
      : samples_(samples), labels_(labels), cfg_(cfg), n_features_(n_features), rng_(rng) {}

  Tree build(std::vector<std::size_t> rows) {
    tree_.importance.assign(n_features_, 0.0);
    total_ = static_cast<double>(rows.size());
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  std::uint32_t grow(const std::vector<std::size_t>& rows, std::size_t depth) {
    const auto index = static_cast<std::uint32_t>(tree_.nodes.size());
    tree_.nodes.push_back(TreeNode{});
    tree_.nodes[index].samples = rows.size();

    std::optional<SplitCandidate> split;
    if (depth < cfg_.max_depth) {
      const auto features = candidate_features();
      split = best_split(samples_, labels_, rows, features, cfg_.task, cfg_.min_samples_leaf);
    }
    if (!split) {
      double sum = 0.0;
      for (auto r : rows) sum += labels_[r];
      tree_.nodes[index].value = sum / static_cast<double>(rows.size());
      return index;
    }

    std::vector<std::size_t> left, right;
    for (auto r : rows) (samples_[r][split->feature] <= split->threshold ? left : right).push_back(r);
    tree_.importance[split->feature] += split->score * static_cast<double>(rows.size()) / total_;
    const auto l = grow(left, depth + 1);
    const auto r = grow(right, depth + 1);
    auto& node = tree_.nodes[index];
    node.leaf = false;
    node.feature = static_cast<std::uint32_t>(split->feature);
    node.threshold = split->threshold;
    node.left = l;
    node.right = r;
    return index;
  }

  std::vector<std::size_t> candidate_features() {
    std::vector<std::size_t> all(n_features_);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (!cfg_.features_per_split || *cfg_.features_per_split >= n_features_) return all;
    const std::size_t k = *cfg_.features_per_split;
    for (std::size_t i = 0; i < k; ++i) {  // partial Fisher-Yates
      const auto j = i + rng_.below(static_cast<std::uint32_t>(n_features_ - i));
      std::swap(all[i], all[j]);
    }
    all.resize(k);
    std::sort(all.begin(), all.end());
    return all;
  }

  std::span<const Vector> samples_;
  std::span<const double> labels_;
  const ForestConfig& cfg_;
  std::size_t n_features_;
  Pcg32& rng_;
  Tree tree_;
  double total_ = 1.0;
};

inline std::size_t check_training_set(std::span<const Vector> samples, std::span<const double> labels) {
  if (samples.empty()) fail(ErrorCode::invalid_dataset, "cannot fit a tree on zero samples");
  if (samples.size() != labels.size()) fail(ErrorCode::dimension, "samples and labels differ in count");
  const std::size_t f = samples.front().size();
  for (const auto& s : samples) {
    if (s.size() != f) fail(ErrorCode::dimension, "samples differ in width");
  }
  return f;
}

}  // namespace detail

/// Greedy CART growth on every sample (no bagging).
inline Tree fit_tree(std::span<const Vector> samples, std::span<const double> labels, const ForestConfig& cfg,
                     Pcg32& rng) {
  const std::size_t f = detail::check_training_set(samples, labels);
  cfg.validate(f);
  std::vector<std::size_t> rows(samples.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return detail::TreeBuilder(samples, labels, cfg, f, rng).build(std::move(rows));
}

/// Tree t draws from its own stream seeded with rng_seed + t, so trees are
/// independent of the order they are grown in.
inline Forest fit_forest(std::span<const Vector> samples, std::span<const double> labels,
                         const ForestConfig& cfg) {
  const std::size_t f = detail::check_training_set(samples, labels);
  cfg.validate(f);
  Forest forest{cfg, f, {}};
  const std::size_t n = samples.size();
  for (std::size_t t = 0; t < cfg.n_trees; ++t) {
    Pcg32 rng(cfg.rng_seed + t);
    std::vector<std::size_t> rows(n);
    if (cfg.bootstrap) {
      for (auto& r : rows) r = rng.below(static_cast<std::uint32_t>(n));
    } else {
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    forest.trees.push_back(detail::TreeBuilder(samples, labels, cfg, f, rng).build(std::move(rows)));
  }
  return forest;
}

/// Mean of the per-tree predictions (class probability for classification).
inline double predict(const Forest& forest, std::span<const double> x) {
  if (x.size() != forest.n_features) fail(ErrorCode::dimension, "input width does not match forest");
  if (forest.trees.empty()) fail(ErrorCode::invalid_argument, "forest has no trees");
  double sum = 0.0;
  for (const auto& t : forest.trees) sum += t.predict(x);
  return sum / static_cast<double>(forest.trees.size());
}

/// Split score per feature summed over trees, normalized to 1 (uniform when
/// no split was ever made).
inline Vector feature_importance(const Forest& forest) {
  Vector total(forest.n_features, 0.0);
  for (const auto& t : forest.trees) {
    for (std::size_t j = 0; j < t.importance.size() && j < total.size(); ++j) total[j] += t.importance[j];
  }
  const double sum = std::accumulate(total.begin(), total.end(), 0.0);
  if (!(sum > 0.0)) return Vector(forest.n_features, forest.n_features ? 1.0 / static_cast<double>(forest.n_features) : 0.0);
  for (double& v : total) v /= sum;
  return total;
}

/// Row-major flattening of a [W][F] window into one feature vector.
inline Vector flatten_window(std::span<const Vector> window) {
  Vector out;
  for (const auto& row : window) out.insert(out.end(), row.begin(), row.end());
  return out;
}

// ---------------------------------------------------------------------------
// Forest file: "PDMF", u16 version, u8 task, u32 features, u32 trees, then
// each tree in pre-order (tag 0 leaf: f64 value; tag 1 internal: u32
// feature, f64 threshold), then f64 importance totals per tree-feature.

inline constexpr std::string_view kForestMagic = "PDMF";
inline constexpr std::uint16_t kForestVersion = 1;

namespace detail {

inline void encode_node(const Tree& t, std::uint32_t i, ByteWriter& w) {
  const auto& n = t.nodes[i];
  if (n.leaf) {
    w.u8(0);
    w.f64(n.value);
    return;
  }
  w.u8(1);
  w.u32(n.feature);
  w.f64(n.threshold);
  encode_node(t, n.left, w);
  encode_node(t, n.right, w);
}

inline std::uint32_t decode_node(Tree& t, ByteReader& r, std::size_t n_features, std::size_t depth) {
  if (depth > 4096) fail(ErrorCode::corruption, "forest tree too deep");
  const auto index = static_cast<std::uint32_t>(t.nodes.size());
  t.nodes.push_back(TreeNode{});
  const auto tag = r.u8();
  if (tag == 0) {
    t.nodes[index].value = r.f64();
    return index;
  }
  if (tag != 1) fail(ErrorCode::corruption, "bad forest node tag");
  const auto feature = r.u32();
  if (feature >= n_features) fail(ErrorCode::corruption, "forest node feature out of range");
  const double threshold = r.f64();
  const auto left = decode_node(t, r, n_features, depth + 1);
  const auto right = decode_node(t, r, n_features, depth + 1);
  auto& node = t.nodes[index];
  node.leaf = false;
  node.feature = feature;
  node.threshold = threshold;
  node.left = left;
  node.right = right;
  return index;
}

}  // namespace detail

inline void encode_forest(const Forest& forest, ByteWriter& w) {
  w.raw(kForestMagic);
  w.u16(kForestVersion);
  w.u8(static_cast<std::uint8_t>(forest.config.task));
  w.u32(static_cast<std::uint32_t>(forest.n_features));
  w.u32(static_cast<std::uint32_t>(forest.trees.size()));
  for (const auto& t : forest.trees) detail::encode_node(t, 0, w);
  for (const auto& t : forest.trees) {
    for (std::size_t j = 0; j < forest.n_features; ++j) w.f64(j < t.importance.size() ? t.importance[j] : 0.0);
  }
}

inline Forest decode_forest(ByteReader& r) {
  if (r.remaining() < kForestMagic.size()) fail(ErrorCode::corruption, "forest data truncated");
  if (r.raw(kForestMagic.size()) != kForestMagic) fail(ErrorCode::format, "not a forest (bad magic)");
  const auto version = r.u16();
  if (version != kForestVersion) fail(ErrorCode::version, "unsupported forest version " + std::to_string(version));
  Forest f;
  const auto task = r.u8();
  if (task > 1) fail(ErrorCode::corruption, "bad forest task");
  f.config.task = static_cast<ForestTask>(task);
  f.n_features = r.u32();
  const auto n_trees = r.u32();
  if (n_trees == 0 || n_trees > 100000) fail(ErrorCode::corruption, "forest tree count out of range");
  f.config.n_trees = n_trees;
  for (std::uint32_t t = 0; t < n_trees; ++t) {
    Tree tree;
    detail::decode_node(tree, r, f.n_features, 0);
    f.trees.push_back(std::move(tree));
  }
  for (auto& t : f.trees) {
    t.importance.resize(f.n_features);
    for (auto& v : t.importance) v = r.f64();
  }
  return f;
}

inline std::vector<std::uint8_t> encode_forest(const Forest& forest) {
  ByteWriter w;
  encode_forest(forest, w);
  return w.bytes();
}

inline Forest decode_forest(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto f = decode_forest(r);
  if (r.remaining() != 0) fail(ErrorCode::corruption, "trailing bytes after forest");
  return f;
}

}  // namespace pdm

#endif  // PDM_FOREST_HPP
