#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "pdm/forest.hpp"
#include "pdm/sim.hpp"

namespace pdm {
namespace {

std::vector<std::size_t> all_features(std::size_t n) {
  std::vector<std::size_t> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = i;
  return f;
}

// Brute force: every (feature, midpoint) pair, partition explicitly, score
// as parent impurity minus weighted child impurity computed from scratch.
double impurity(const std::vector<double>& ys, ForestTask task) {
  const double n = static_cast<double>(ys.size());
  double mean = 0.0;
  for (double y : ys) mean += y;
  mean /= n;
  if (task == ForestTask::classification) return 1.0 - mean * mean - (1.0 - mean) * (1.0 - mean);
  double ss = 0.0;
  for (double y : ys) ss += (y - mean) * (y - mean);
  return ss / n;
}

std::optional<SplitCandidate> brute_force_split(const std::vector<Vector>& xs, const std::vector<double>& ys,
                                                const std::vector<std::size_t>& features, ForestTask task,
                                                std::size_t min_leaf) {
  const double parent = impurity(ys, task);
  std::optional<SplitCandidate> best;
  for (std::size_t f : features) {
    std::set<double> distinct;
    for (const auto& x : xs) distinct.insert(x[f]);
    std::vector<double> values(distinct.begin(), distinct.end());
    for (std::size_t k = 0; k + 1 < values.size(); ++k) {
      const double threshold = 0.5 * (values[k] + values[k + 1]);
      std::vector<double> left, right;
      for (std::size_t i = 0; i < xs.size(); ++i) (xs[i][f] <= threshold ? left : right).push_back(ys[i]);
      if (left.size() < min_leaf || right.size() < min_leaf) continue;
      const double n = static_cast<double>(ys.size());
      const double score = parent - static_cast<double>(left.size()) / n * impurity(left, task) -
                           static_cast<double>(right.size()) / n * impurity(right, task);
      const double tol = 1e-12 * parent;
      if (!(score > tol)) continue;
      if (best && !(score > best->score + tol)) continue;
      best = SplitCandidate{f, threshold, score};
    }
  }
  return best;
}

struct RandomSet {
  std::vector<Vector> xs;
  std::vector<double> ys;
};

// Small integer grids so duplicate feature values and exact score ties occur.
RandomSet random_set(Pcg32& rng, ForestTask task) {
  RandomSet s;
  const std::size_t n = 2 + rng.below(24);
  const std::size_t f = 1 + rng.below(3);
  const bool coarse = rng.below(2) == 0;
  for (std::size_t i = 0; i < n; ++i) {
    Vector x(f);
    for (double& v : x) v = coarse ? static_cast<double>(rng.below(5)) : rng.uniform(-3, 3);
    s.xs.push_back(x);
    if (task == ForestTask::classification) {
      s.ys.push_back(static_cast<double>(rng.below(2)));
    } else {
      s.ys.push_back(coarse ? static_cast<double>(rng.below(4)) : rng.normal() * 5.0);
    }
  }
  return s;
}

TEST(FindBestSplitTest, TwoPointExample) {
  std::vector<Vector> xs{{0.0}, {1.0}};
  std::vector<double> ys{0.0, 10.0};
  auto split = find_best_split(xs, ys, all_features(1));
  ASSERT_TRUE(split);
  EXPECT_EQ(split->feature, 0u);
  EXPECT_EQ(split->threshold, 0.5);
  EXPECT_DOUBLE_EQ(split->score, 25.0);
}

TEST(FindBestSplitTest, ConstantLabelsGiveNone) {
  std::vector<Vector> xs{{0.0, 1.0}, {1.0, 5.0}, {2.0, 3.0}};
  std::vector<double> ys{4.0, 4.0, 4.0};
  EXPECT_FALSE(find_best_split(xs, ys, all_features(2)));
  std::vector<Vector> same_x{{1.0}, {1.0}};
  std::vector<double> different{0.0, 1.0};
  EXPECT_FALSE(find_best_split(same_x, different, all_features(1)));
}

TEST(FindBestSplitTest, TiesPreferLowestFeatureThenThreshold) {
  // Feature 1 duplicates feature 0; both give the same perfect split.
  std::vector<Vector> xs{{0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}};
  std::vector<double> ys{0.0, 0.0, 1.0, 1.0};
  auto split = find_best_split(xs, ys, all_features(2));
  ASSERT_TRUE(split);
  EXPECT_EQ(split->feature, 0u);
  EXPECT_EQ(split->threshold, 1.5);
  // Symmetric labels: thresholds 0.5 and 2.5 tie, lower wins.
  std::vector<Vector> sym{{0.0}, {1.0}, {2.0}, {3.0}};
  std::vector<double> sym_y{5.0, 0.0, 0.0, 5.0};
  auto s2 = find_best_split(sym, sym_y, all_features(1));
  ASSERT_TRUE(s2);
  EXPECT_EQ(s2->threshold, 0.5);
}

TEST(FindBestSplitTest, RespectsAllowedFeatures) {
  std::vector<Vector> xs{{0.0, 3.0}, {1.0, 2.0}, {2.0, 1.0}, {3.0, 0.0}};
  std::vector<double> ys{0.0, 0.0, 1.0, 1.0};
  std::vector<std::size_t> only_one{1};
  auto split = find_best_split(xs, ys, only_one);
  ASSERT_TRUE(split);
  EXPECT_EQ(split->feature, 1u);
  EXPECT_EQ(split->threshold, 1.5);
}

TEST(FindBestSplitTest, MatchesBruteForceRegression) {
  Pcg32 rng(101);
  for (int trial = 0; trial < 300; ++trial) {
    auto s = random_set(rng, ForestTask::regression);
    const std::size_t min_leaf = 1 + rng.below(3);
    auto features = all_features(s.xs.front().size());
    auto got = find_best_split(s.xs, s.ys, features, ForestTask::regression, min_leaf);
    auto want = brute_force_split(s.xs, s.ys, features, ForestTask::regression, min_leaf);
    ASSERT_EQ(got.has_value(), want.has_value()) << "trial " << trial;
    if (!want) continue;
    EXPECT_EQ(got->feature, want->feature) << "trial " << trial;
    EXPECT_EQ(got->threshold, want->threshold) << "trial " << trial;
    EXPECT_NEAR(got->score, want->score, 1e-9 * std::max(1.0, want->score));
  }
}

TEST(FindBestSplitTest, MatchesBruteForceClassification) {
  Pcg32 rng(202);
  for (int trial = 0; trial < 300; ++trial) {
    auto s = random_set(rng, ForestTask::classification);
    auto features = all_features(s.xs.front().size());
    auto got = find_best_split(s.xs, s.ys, features, ForestTask::classification);
    auto want = brute_force_split(s.xs, s.ys, features, ForestTask::classification, 1);
    ASSERT_EQ(got.has_value(), want.has_value()) << "trial " << trial;
    if (!want) continue;
    EXPECT_EQ(got->feature, want->feature) << "trial " << trial;
    EXPECT_EQ(got->threshold, want->threshold) << "trial " << trial;
    EXPECT_NEAR(got->score, want->score, 1e-12);
  }
}

TEST(FitTreeTest, DepthZeroIsMeanLeaf) {
  std::vector<Vector> xs{{0.0}, {1.0}, {2.0}};
  std::vector<double> ys{1.0, 2.0, 6.0};
  ForestConfig cfg;
  cfg.max_depth = 0;
  Pcg32 rng(1);
  auto tree = fit_tree(xs, ys, cfg, rng);
  ASSERT_EQ(tree.nodes.size(), 1u);
  EXPECT_TRUE(tree.nodes[0].leaf);
  EXPECT_DOUBLE_EQ(tree.nodes[0].value, 3.0);
}

TEST(FitTreeTest, SeparablePairFitsExactly) {
  std::vector<Vector> xs{{0.0}, {1.0}};
  std::vector<double> ys{0.0, 1.0};
  ForestConfig cfg;
  cfg.max_depth = 1;
  Pcg32 rng(1);
  auto tree = fit_tree(xs, ys, cfg, rng);
  EXPECT_EQ(tree.depth(), 1u);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(tree.predict(xs[i]), ys[i]);
}

TEST(FitTreeTest, MinSamplesLeafBlocksSmallSides) {
  std::vector<Vector> xs{{0.0}, {1.0}, {2.0}, {3.0}};
  std::vector<double> ys{0.0, 0.0, 0.0, 9.0};
  ForestConfig cfg;
  cfg.min_samples_leaf = 3;
  Pcg32 rng(1);
  auto tree = fit_tree(xs, ys, cfg, rng);
  EXPECT_EQ(tree.nodes.size(), 1u);
}

TEST(FitTreeTest, EmptyInputIsInvalidDataset) {
  Pcg32 rng(1);
  try {
    fit_tree(std::vector<Vector>{}, std::vector<double>{}, ForestConfig{}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_dataset);
  }
  std::vector<Vector> xs{{0.0}};
  std::vector<double> ys{1.0, 2.0};
  EXPECT_THROW(fit_tree(xs, ys, ForestConfig{}, rng), Error);
}

// Every root-to-leaf path: depth bound, leaf size bound, leaf value inside
// the label range of the rows that reached it.
void audit(const Tree& tree, std::size_t node, const std::vector<Vector>& xs, const std::vector<double>& ys,
           std::vector<std::size_t> rows, std::size_t depth, const ForestConfig& cfg) {
  const auto& n = tree.nodes[node];
  ASSERT_LE(depth, cfg.max_depth);
  ASSERT_FALSE(rows.empty());
  if (n.leaf) {
    EXPECT_GE(rows.size(), cfg.min_samples_leaf);
    double lo = ys[rows[0]], hi = ys[rows[0]];
    for (auto r : rows) {
      lo = std::min(lo, ys[r]);
      hi = std::max(hi, ys[r]);
    }
    EXPECT_GE(n.value, lo - 1e-12);
    EXPECT_LE(n.value, hi + 1e-12);
    return;
  }
  std::vector<std::size_t> left, right;
  for (auto r : rows) (xs[r][n.feature] <= n.threshold ? left : right).push_back(r);
  audit(tree, n.left, xs, ys, left, depth + 1, cfg);
  audit(tree, n.right, xs, ys, right, depth + 1, cfg);
}

TEST(FitTreeTest, StructuralAuditOnRandomFits) {
  Pcg32 rng(303);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 5 + rng.below(60), f = 1 + rng.below(4);
    std::vector<Vector> xs(n, Vector(f));
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (double& v : xs[i]) v = rng.uniform(-1, 1);
      ys[i] = xs[i][0] * 3.0 + rng.normal();
    }
    ForestConfig cfg;
    cfg.max_depth = rng.below(6);
    cfg.min_samples_leaf = 1 + rng.below(5);
    Pcg32 tree_rng(trial);
    auto tree = fit_tree(xs, ys, cfg, tree_rng);
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    audit(tree, 0, xs, ys, rows, 0, cfg);
  }
}

TEST(FitForestTest, SingleTreeWithoutBaggingEqualsFitTree) {
  Pcg32 rng(4);
  std::vector<Vector> xs(40, Vector(3));
  std::vector<double> ys(40);
  for (std::size_t i = 0; i < 40; ++i) {
    for (double& v : xs[i]) v = rng.uniform(0, 10);
    ys[i] = std::sin(xs[i][1]) + xs[i][2];
  }
  ForestConfig cfg;
  cfg.n_trees = 1;
  cfg.bootstrap = false;
  auto forest = fit_forest(xs, ys, cfg);
  Pcg32 tree_rng(cfg.rng_seed);
  auto tree = fit_tree(xs, ys, cfg, tree_rng);
  ASSERT_EQ(forest.trees.size(), 1u);
  EXPECT_EQ(forest.trees[0], tree);
}

TEST(FitForestTest, SeededFitsAreIdentical) {
  Pcg32 rng(5);
  std::vector<Vector> xs(80, Vector(4));
  std::vector<double> ys(80);
  for (std::size_t i = 0; i < 80; ++i) {
    for (double& v : xs[i]) v = rng.uniform(-1, 1);
    ys[i] = xs[i][0] - 2.0 * xs[i][3] + 0.1 * rng.normal();
  }
  ForestConfig cfg;
  cfg.n_trees = 12;
  cfg.features_per_split = 2;
  cfg.rng_seed = 77;
  auto a = fit_forest(xs, ys, cfg);
  auto b = fit_forest(xs, ys, cfg);
  EXPECT_EQ(a, b);
  EXPECT_EQ(encode_forest(a), encode_forest(b));
  for (int probe = 0; probe < 50; ++probe) {
    Vector x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    EXPECT_EQ(predict(a, x), predict(b, x));
  }
  cfg.rng_seed = 78;
  EXPECT_FALSE(fit_forest(xs, ys, cfg) == a);
}

// Traversal written against the serialized pre-order layout rather than the
// in-memory node indices.
double traverse_bytes(ByteReader& r, std::span<const double> x) {
  if (r.u8() == 0) return r.f64();
  const auto feature = r.u32();
  const double threshold = r.f64();
  const bool go_left = x[feature] <= threshold;
  const double left = traverse_bytes(r, x);
  const double right = traverse_bytes(r, x);
  return go_left ? left : right;
}

TEST(PredictTest, MatchesIndependentTraversal) {
  Pcg32 rng(6);
  std::vector<Vector> xs(60, Vector(3));
  std::vector<double> ys(60);
  for (std::size_t i = 0; i < 60; ++i) {
    for (double& v : xs[i]) v = rng.uniform(-2, 2);
    ys[i] = xs[i][0] * xs[i][1] + rng.normal() * 0.1;
  }
  ForestConfig cfg;
  cfg.n_trees = 7;
  cfg.max_depth = 5;
  auto forest = fit_forest(xs, ys, cfg);
  const auto bytes = encode_forest(forest);
  for (int probe = 0; probe < 100; ++probe) {
    Vector x{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    ByteReader r(bytes);
    r.raw(4);
    r.u16();
    r.u8();
    r.u32();
    const auto n_trees = r.u32();
    double sum = 0.0;
    for (std::uint32_t t = 0; t < n_trees; ++t) sum += traverse_bytes(r, x);
    EXPECT_EQ(predict(forest, x), sum / n_trees);
  }
}

TEST(PredictTest, MeanOfTreesAndDimensionCheck) {
  Forest forest;
  forest.n_features = 1;
  Tree zero, one;
  zero.nodes.push_back(TreeNode{true, 0, 0.0, 0.0, 0, 0, 1});
  one.nodes.push_back(TreeNode{true, 0, 0.0, 1.0, 0, 0, 1});
  forest.trees = {zero, one};
  EXPECT_EQ(predict(forest, Vector{3.0}), 0.5);
  forest.trees = {one, one, one};
  EXPECT_EQ(predict(forest, Vector{3.0}), one.predict(Vector{3.0}));
  try {
    predict(forest, Vector{1.0, 2.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension);
  }
}

TEST(PredictTest, ForestStaysInLabelRange) {
  Pcg32 rng(7);
  std::vector<Vector> xs(50, Vector(2));
  std::vector<double> ys(50);
  for (std::size_t i = 0; i < 50; ++i) {
    for (double& v : xs[i]) v = rng.uniform(-1, 1);
    ys[i] = rng.uniform(3, 8);
  }
  ForestConfig cfg;
  cfg.n_trees = 9;
  auto forest = fit_forest(xs, ys, cfg);
  for (int probe = 0; probe < 200; ++probe) {
    const double y = predict(forest, Vector{rng.uniform(-5, 5), rng.uniform(-5, 5)});
    EXPECT_GE(y, 3.0);
    EXPECT_LE(y, 8.0);
  }
}

TEST(ClassificationTest, LeavesAreClassProbabilities) {
  Pcg32 rng(8);
  std::vector<Vector> xs(100, Vector(2));
  std::vector<double> ys(100);
  for (std::size_t i = 0; i < 100; ++i) {
    for (double& v : xs[i]) v = rng.uniform(-1, 1);
    ys[i] = xs[i][0] + 0.2 * rng.normal() > 0.0 ? 1.0 : 0.0;
  }
  ForestConfig cfg;
  cfg.task = ForestTask::classification;
  cfg.n_trees = 15;
  cfg.max_depth = 4;
  auto forest = fit_forest(xs, ys, cfg);
  for (const auto& t : forest.trees) {
    for (const auto& n : t.nodes) {
      if (n.leaf) {
        EXPECT_GE(n.value, 0.0);
        EXPECT_LE(n.value, 1.0);
      }
    }
  }
  EXPECT_GT(predict(forest, Vector{0.9, 0.0}), 0.5);
  EXPECT_LT(predict(forest, Vector{-0.9, 0.0}), 0.5);
}

TEST(ImportanceTest, SumsToOne) {
  Pcg32 rng(9);
  std::vector<Vector> xs(60, Vector(5));
  std::vector<double> ys(60);
  for (std::size_t i = 0; i < 60; ++i) {
    for (double& v : xs[i]) v = rng.uniform(-1, 1);
    ys[i] = xs[i][2] + xs[i][4] * 0.5;
  }
  ForestConfig cfg;
  cfg.n_trees = 10;
  cfg.features_per_split = 3;
  auto imp = feature_importance(fit_forest(xs, ys, cfg));
  double sum = 0.0;
  for (double v : imp) {
    EXPECT_GE(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(ImportanceTest, SingleFeatureAndUniformFallback) {
  std::vector<Vector> xs{{0.0}, {1.0}, {2.0}};
  std::vector<double> ys{0.0, 1.0, 2.0};
  ForestConfig cfg;
  cfg.n_trees = 3;
  EXPECT_EQ(feature_importance(fit_forest(xs, ys, cfg)), (Vector{1.0}));
  std::vector<Vector> xs2{{0.0, 1.0}, {1.0, 0.0}};
  std::vector<double> flat{2.0, 2.0};
  EXPECT_EQ(feature_importance(fit_forest(xs2, flat, cfg)), (Vector{0.5, 0.5}));
}

TEST(ImportanceTest, NoiseFeatureRanksLow) {
  Pcg32 rng(10);
  std::vector<Vector> xs(200, Vector(2));
  std::vector<double> ys(200);
  for (std::size_t i = 0; i < 200; ++i) {
    xs[i][0] = rng.uniform(0, 1);
    xs[i][1] = rng.uniform(0, 1);
    ys[i] = 10.0 * xs[i][0];
  }
  ForestConfig cfg;
  cfg.n_trees = 20;
  cfg.max_depth = 6;
  auto imp = feature_importance(fit_forest(xs, ys, cfg));
  EXPECT_GT(imp[0], 0.9);
}

TEST(ForestFileTest, RoundTripPreservesPredictionsAndImportance) {
  Pcg32 rng(11);
  std::vector<Vector> xs(50, Vector(3));
  std::vector<double> ys(50);
  for (std::size_t i = 0; i < 50; ++i) {
    for (double& v : xs[i]) v = rng.uniform(-1, 1);
    ys[i] = xs[i][1] > 0 ? 1.0 : 0.0;
  }
  ForestConfig cfg;
  cfg.task = ForestTask::classification;
  cfg.n_trees = 4;
  auto forest = fit_forest(xs, ys, cfg);
  auto back = decode_forest(encode_forest(forest));
  EXPECT_EQ(back, forest);
  EXPECT_EQ(back.config.task, ForestTask::classification);
  EXPECT_EQ(feature_importance(back), feature_importance(forest));
  for (const auto& x : xs) EXPECT_EQ(predict(back, x), predict(forest, x));
}

TEST(ForestFileTest, RejectsDamage) {
  std::vector<Vector> xs{{0.0}, {1.0}, {2.0}, {3.0}};
  std::vector<double> ys{0.0, 1.0, 4.0, 9.0};
  ForestConfig cfg;
  cfg.n_trees = 2;
  auto bytes = encode_forest(fit_forest(xs, ys, cfg));
  auto code_of = [](std::vector<std::uint8_t> b) {
    try {
      decode_forest(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::storage;  // sentinel: decode succeeded
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of(bad_magic), ErrorCode::format);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_EQ(code_of(bad_version), ErrorCode::version);
  for (std::size_t cut : {std::size_t{2}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_EQ(code_of(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + cut)), ErrorCode::corruption);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(code_of(trailing), ErrorCode::corruption);
}

TEST(ConfigTest, ValidationRejectsBadValues) {
  ForestConfig cfg;
  cfg.n_trees = 0;
  EXPECT_THROW(cfg.validate(3), Error);
  cfg = {};
  cfg.min_samples_leaf = 0;
  EXPECT_THROW(cfg.validate(3), Error);
  cfg = {};
  cfg.features_per_split = 4;
  EXPECT_THROW(cfg.validate(3), Error);
  cfg.features_per_split = 3;
  EXPECT_NO_THROW(cfg.validate(3));
}

TEST(SimulatorDataTest, ForestBeatsStump) {
  SimConfig sim;
  sim.rng_seed = 12;
  sim.zones = 2;
  sim.degradations.push_back({ParameterId::extruder_pressure(), DriftMode::linear, 0.01, 0});
  sim.modulations.push_back({ParameterId::machine_speed(), 4.0, 40'000, 0.0});
  sim.maintenance_resets = {500'000, 1'000'000};
  auto run = generate(sim, 1'500'000);
  auto stats = fit_normalizer(run.frames, NormalizationMode::min_max);
  auto frames = normalize_frames(run.frames, stats);
  auto ds = make_windows(frames, {6, 1, 1}, sim.maintenance_resets);
  auto [train, val] = chrono_split(ds, 0.8);
  const std::size_t target = 1;  // extruder pressure
  auto flatten = [&](const WindowedDataset& d, std::vector<Vector>& xs, std::vector<double>& ys) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      xs.push_back(flatten_window(d.inputs[i]));
      ys.push_back(d.targets[i][target]);
    }
  };
  std::vector<Vector> xtr, xva;
  std::vector<double> ytr, yva;
  flatten(train, xtr, ytr);
  flatten(val, xva, yva);

  ForestConfig forest_cfg;
  forest_cfg.n_trees = 20;
  forest_cfg.max_depth = 8;
  forest_cfg.features_per_split = xtr.front().size() / 3;
  auto forest = fit_forest(xtr, ytr, forest_cfg);
  ForestConfig stump_cfg;
  stump_cfg.n_trees = 1;
  stump_cfg.max_depth = 1;
  stump_cfg.bootstrap = false;
  auto stump = fit_forest(xtr, ytr, stump_cfg);
  double forest_mse = 0.0, stump_mse = 0.0;
  for (std::size_t i = 0; i < xva.size(); ++i) {
    forest_mse += std::pow(predict(forest, xva[i]) - yva[i], 2);
    stump_mse += std::pow(predict(stump, xva[i]) - yva[i], 2);
  }
  EXPECT_LE(forest_mse, stump_mse);
}

}  // namespace
}  // namespace pdm
