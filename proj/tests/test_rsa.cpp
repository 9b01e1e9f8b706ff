#include <gtest/gtest.h>

#include "lsteer/rsa.hpp"
#include "testutil.hpp"

using namespace lsteer;

namespace {

// normal rows {(0,0),(0,2)}, anomalous rows {(4,0),(4,2)}.
FeatureBank hand_bank() {
  return testutil::make_micro_bank(
      2, {0, 0, 1, 1},
      {{{0.0f, 0.0f}, {0.0f, 2.0f}, {4.0f, 0.0f}, {4.0f, 2.0f}}});
}

}  // namespace

TEST(HeadStats, HandComputedCentroidsAndScatter) {
  const HeadStats st = head_stats(hand_bank(), {0, 0});
  EXPECT_DOUBLE_EQ(st.mu_norm[0], 0.0);
  EXPECT_DOUBLE_EQ(st.mu_norm[1], 1.0);
  EXPECT_DOUBLE_EQ(st.mu_anom[0], 4.0);
  EXPECT_DOUBLE_EQ(st.mu_anom[1], 1.0);
  EXPECT_DOUBLE_EQ(st.sw_norm, 2.0);
  EXPECT_DOUBLE_EQ(st.sw_anom, 2.0);
  EXPECT_EQ(st.n_norm, 2u);
  EXPECT_EQ(st.n_anom, 2u);
}

TEST(HeadStats, SingleSamplePerClassHasZeroScatter) {
  const FeatureBank bank =
      testutil::make_micro_bank(2, {0, 1}, {{{1.0f, 2.0f}, {3.0f, 4.0f}}});
  const HeadStats st = head_stats(bank, {0, 0});
  EXPECT_DOUBLE_EQ(st.sw_norm, 0.0);
  EXPECT_DOUBLE_EQ(st.sw_anom, 0.0);
}

TEST(HeadStats, DuplicatingRowsDoublesScatterKeepsCentroids) {
  const FeatureBank bank = hand_bank();
  const FeatureBank doubled = testutil::make_micro_bank(
      2, {0, 0, 1, 1, 0, 0, 1, 1},
      {{{0.0f, 0.0f}, {0.0f, 2.0f}, {4.0f, 0.0f}, {4.0f, 2.0f},
        {0.0f, 0.0f}, {0.0f, 2.0f}, {4.0f, 0.0f}, {4.0f, 2.0f}}});
  const HeadStats a = head_stats(bank, {0, 0});
  const HeadStats b = head_stats(doubled, {0, 0});
  EXPECT_DOUBLE_EQ(b.sw_norm, 2.0 * a.sw_norm);
  EXPECT_DOUBLE_EQ(b.sw_anom, 2.0 * a.sw_anom);
  EXPECT_DOUBLE_EQ(b.mu_norm[1], a.mu_norm[1]);
  EXPECT_DOUBLE_EQ(b.mu_anom[0], a.mu_anom[0]);
}

TEST(HeadStats, ErrorsOnMissingHeadAndSingleClass) {
  EXPECT_THROW(head_stats(hand_bank(), {3, 3}), usage_error);
  const FeatureBank single =
      testutil::make_micro_bank(2, {1, 1}, {{{0.0f, 0.0f}, {1.0f, 1.0f}}});
  EXPECT_THROW(head_stats(single, {0, 0}), usage_error);
}

TEST(RsaScore, HandArithmetic) {
  const double s = rsa_score(head_stats(hand_bank(), {0, 0}), 1e-8);
  EXPECT_NEAR(s, 16.0 / (4.0 + 1e-8), 1e-12);
}

TEST(RsaScore, CoincidentCentroidsScoreZero) {
  const FeatureBank bank = testutil::make_micro_bank(
      2, {0, 0, 1, 1},
      {{{-1.0f, 0.0f}, {1.0f, 0.0f}, {0.0f, -1.0f}, {0.0f, 1.0f}}});
  EXPECT_DOUBLE_EQ(rsa_score(head_stats(bank, {0, 0}), 1e-8), 0.0);
}

TEST(RsaScore, ZeroScatterDistinctCentroidsIsHugeButFinite) {
  const FeatureBank bank =
      testutil::make_micro_bank(2, {0, 1}, {{{0.0f, 0.0f}, {1.0f, 0.0f}}});
  const double s = rsa_score(head_stats(bank, {0, 0}), 1e-8);
  EXPECT_NEAR(s, 1.0 / 1e-8, 1.0);
  EXPECT_TRUE(std::isfinite(s));
}

TEST(RsaScore, ScatterFormEqualsVarianceFormOnBalancedBanks) {
  // With n samples per class, S_W = n * (var_norm + var_anom), so the
  // scatter ratio equals the variance form divided by n at epsilon = 0.
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const FeatureBank bank = testutil::make_random_balanced_bank(16, 6, seed);
    const HeadStats st = head_stats(bank, {0, 0});
    const double scatter_form = rsa_score(st, 0.0);
    const double n = static_cast<double>(st.n_norm);
    double sb = 0.0;
    for (std::size_t d = 0; d < st.mu_norm.size(); ++d) {
      const double diff = st.mu_anom[d] - st.mu_norm[d];
      sb += diff * diff;
    }
    const double variance_form = sb / (n * (st.sw_anom / n + st.sw_norm / n));
    EXPECT_LE(std::abs(scatter_form - variance_form) / variance_form, 1e-10)
        << "seed " << seed;
  }
}

TEST(RsaScore, TranslationInvariantAndScaleCovariant) {
  // Integer-valued features keep the f32 shift and scaling exact, so the
  // tolerance probes the score algebra rather than storage rounding.
  RngStream rng = make_stream(99, "int_bank");
  std::vector<int> labels;
  std::vector<std::vector<std::vector<float>>> rows(1);
  for (int i = 0; i < 40; ++i) {
    labels.push_back(i < 20 ? 0 : 1);
    std::vector<float> row(5);
    for (auto& x : row)
      x = static_cast<float>(static_cast<int>(rng.next_below(17)) - 8 + (i < 20 ? 0 : 2));
    rows[0].push_back(std::move(row));
  }
  const FeatureBank bank = testutil::make_micro_bank(5, labels, rows);
  const double base = rsa_score(head_stats(bank, {0, 0}), 0.0);

  FeatureBank shifted = bank;
  for (auto& [id, feat] : shifted.head_features)
    for (std::size_t i = 0; i < feat.rows; ++i)
      for (std::size_t j = 0; j < feat.cols; ++j) feat.at(i, j) += 7.5f;
  const double after_shift = rsa_score(head_stats(shifted, {0, 0}), 0.0);
  EXPECT_LE(std::abs(after_shift - base) / base, 1e-9);

  FeatureBank scaled = bank;
  for (auto& [id, feat] : scaled.head_features)
    for (auto& x : feat.data) x *= 2.0f;
  const double after_scale = rsa_score(head_stats(scaled, {0, 0}), 0.0);
  EXPECT_LE(std::abs(after_scale - base) / base, 1e-9);
}

TEST(RankHeads, SelectsPlantedHeadsOnSyntheticBank) {
  SynthSpec spec;
  spec.meta.d_model = 24;
  spec.meta.d_head = 8;
  spec.meta.n_layers = 4;
  spec.meta.n_heads_per_layer = 4;
  spec.n_normal = 150;
  spec.n_anomalous = 150;
  spec.planted_heads = {{{0, 1}, 8.0}, {{2, 3}, 8.0}};
  spec.seed = 5;
  const FeatureBank bank = synth_bank(spec);
  RsaConfig cfg;
  cfg.k = 2;
  const RsaReport report = rank_heads(bank, cfg);
  const std::set<HeadId> selected(report.selected.begin(), report.selected.end());
  EXPECT_EQ(selected, (std::set<HeadId>{{0, 1}, {2, 3}}));
}

TEST(RankHeads, TieBreakFallsBackToLayerHeadOrder) {
  // Two heads with identical data: identical scores, order by (layer, head).
  const std::vector<std::vector<float>> rows = {
      {0.0f, 0.0f}, {0.0f, 2.0f}, {4.0f, 0.0f}, {4.0f, 2.0f}};
  const FeatureBank bank =
      testutil::make_micro_bank(2, {0, 0, 1, 1}, {rows, rows, rows});
  RsaConfig cfg;
  cfg.k = 3;
  const RsaReport report = rank_heads(bank, cfg);
  ASSERT_EQ(report.ranking.size(), 3u);
  EXPECT_EQ(report.ranking[0], (HeadId{0, 0}));
  EXPECT_EQ(report.ranking[1], (HeadId{0, 1}));
  EXPECT_EQ(report.ranking[2], (HeadId{0, 2}));
}

TEST(RankHeads, KEqualToStoredHeadsSelectsAll) {
  const FeatureBank bank = testutil::make_random_balanced_bank(10, 4, 3);
  RsaConfig cfg;
  cfg.k = 1;
  EXPECT_EQ(rank_heads(bank, cfg).selected.size(), 1u);
  cfg.k = 2;
  EXPECT_THROW(rank_heads(bank, cfg), usage_error);  // only one stored head
}

TEST(RankHeads, BitIdenticalAcrossThreadCounts) {
  SynthSpec spec;
  spec.meta.d_model = 24;
  spec.meta.d_head = 8;
  spec.meta.n_layers = 4;
  spec.meta.n_heads_per_layer = 4;
  spec.n_normal = 60;
  spec.n_anomalous = 60;
  spec.planted_heads = {{{1, 1}, 3.0}};
  spec.seed = 12;
  const FeatureBank bank = synth_bank(spec);
  RsaConfig cfg;
  cfg.k = 2;
  setenv("LATENT_STEER_THREADS", "1", 1);
  const RsaReport serial = rank_heads(bank, cfg);
  unsetenv("LATENT_STEER_THREADS");
  const RsaReport parallel = rank_heads(bank, cfg);
  ASSERT_EQ(serial.scores.size(), parallel.scores.size());
  for (std::size_t i = 0; i < serial.scores.size(); ++i)
    EXPECT_EQ(serial.scores[i].score, parallel.scores[i].score);
  EXPECT_EQ(serial.ranking, parallel.ranking);
}

TEST(RankHeads, PureFunctionOfBankAndConfig) {
  const FeatureBank bank = testutil::make_random_balanced_bank(25, 6, 8);
  RsaConfig cfg;
  cfg.k = 1;
  const RsaReport a = rank_heads(bank, cfg);
  const RsaReport b = rank_heads(bank, cfg);
  ASSERT_EQ(a.scores.size(), b.scores.size());
  for (std::size_t i = 0; i < a.scores.size(); ++i)
    EXPECT_EQ(a.scores[i].score, b.scores[i].score);
  EXPECT_EQ(a.ranking, b.ranking);
  EXPECT_EQ(a.bank_fingerprint, b.bank_fingerprint);
}

TEST(Silhouette, TwoTightDistantClustersApproachOne) {
  const FeatureBank bank = testutil::make_micro_bank(
      2, {0, 0, 1, 1},
      {{{0.0f, 0.0f}, {0.0f, 0.1f}, {100.0f, 0.0f}, {100.0f, 0.1f}}});
  EXPECT_GT(silhouette_score(bank, {0, 0}), 0.99);
}

TEST(Silhouette, HandEvaluatedTwoClusterFormula) {
  const FeatureBank bank = testutil::make_micro_bank(
      2, {0, 0, 1, 1},
      {{{0.0f, 0.0f}, {0.0f, 1.0f}, {10.0f, 0.0f}, {10.0f, 1.0f}}});
  // Every point: a = 1, b = (10 + sqrt(101)) / 2.
  const double b = (10.0 + std::sqrt(101.0)) / 2.0;
  EXPECT_NEAR(silhouette_score(bank, {0, 0}), (b - 1.0) / b, 1e-12);
}

TEST(Silhouette, SharedDistributionScoresNearZero) {
  // Labels assigned independently of position: expect |score| < 0.1 at n=200.
  RngStream rng = make_stream(77, "silhouette_mc");
  std::vector<int> labels;
  std::vector<std::vector<std::vector<float>>> rows(1);
  for (int i = 0; i < 200; ++i) {
    labels.push_back(i % 2);
    rows[0].push_back({static_cast<float>(rng.next_normal()),
                       static_cast<float>(rng.next_normal()),
                       static_cast<float>(rng.next_normal())});
  }
  const FeatureBank bank = testutil::make_micro_bank(3, labels, rows);
  EXPECT_LT(std::abs(silhouette_score(bank, {0, 0})), 0.1);
}

TEST(KnnPurity, PerfectClustersScoreOneAtKOne) {
  const FeatureBank bank = testutil::make_micro_bank(
      2, {0, 0, 1, 1},
      {{{0.0f, 0.0f}, {0.1f, 0.0f}, {50.0f, 0.0f}, {50.1f, 0.0f}}});
  EXPECT_DOUBLE_EQ(knn_purity(bank, {0, 0}, 1), 1.0);
}

TEST(KnnPurity, RandomLabelsMatchClassPrior) {
  RngStream rng = make_stream(31, "knn_mc");
  std::vector<int> labels;
  std::vector<std::vector<std::vector<float>>> rows(1);
  for (int i = 0; i < 200; ++i) {
    labels.push_back(i % 2);
    rows[0].push_back({static_cast<float>(rng.next_normal()),
                       static_cast<float>(rng.next_normal())});
  }
  const FeatureBank bank = testutil::make_micro_bank(2, labels, rows);
  EXPECT_NEAR(knn_purity(bank, {0, 0}, 5), 0.5, 0.1);
}

TEST(KnnPurity, KEqualsAllOthersIsClosedForm) {
  RngStream rng = make_stream(32, "knn_cf");
  std::vector<int> labels;
  std::vector<std::vector<std::vector<float>>> rows(1);
  const std::size_t n = 12, n_pos = 5;
  for (std::size_t i = 0; i < n; ++i) {
    labels.push_back(i < n_pos ? 1 : 0);
    rows[0].push_back({static_cast<float>(rng.next_normal()),
                       static_cast<float>(rng.next_normal())});
  }
  const FeatureBank bank = testutil::make_micro_bank(2, labels, rows);
  // With k = n-1 every sample sees all others: purity_i = (n_class - 1) / (n - 1).
  const double expected =
      (static_cast<double>(n_pos) * (n_pos - 1.0) +
       static_cast<double>(n - n_pos) * (n - n_pos - 1.0)) /
      (static_cast<double>(n) * (n - 1.0));
  EXPECT_NEAR(knn_purity(bank, {0, 0}, static_cast<int>(n - 1)), expected, 1e-12);
  EXPECT_THROW(knn_purity(bank, {0, 0}, static_cast<int>(n)), usage_error);
}

TEST(Metrics, AgreeOnWellSeparatedPlantedBank) {
  SynthSpec spec;
  spec.meta.d_model = 24;
  spec.meta.d_head = 8;
  spec.meta.n_layers = 3;
  spec.meta.n_heads_per_layer = 3;
  spec.n_normal = 80;
  spec.n_anomalous = 80;
  spec.planted_heads = {{{0, 2}, 6.0}, {{2, 1}, 6.0}};  // delta >= 4 * sigma
  spec.seed = 21;
  const FeatureBank bank = synth_bank(spec);
  RsaConfig cfg;
  cfg.k = 2;
  std::set<HeadId> sets[3];
  int i = 0;
  for (SelectionMetric m :
       {SelectionMetric::rsa, SelectionMetric::silhouette, SelectionMetric::knn_purity}) {
    cfg.metric = m;
    const RsaReport r = rank_heads(bank, cfg);
    sets[i++] = std::set<HeadId>(r.selected.begin(), r.selected.end());
  }
  EXPECT_EQ(sets[0], sets[1]);
  EXPECT_EQ(sets[0], sets[2]);
}

TEST(Jaccard, IdenticalDisjointAndPartialOverlap) {
  auto report_with_ranking = [](std::vector<HeadId> ranking) {
    RsaReport r;
    r.ranking = std::move(ranking);
    return r;
  };
  const RsaReport a = report_with_ranking({{0, 0}, {0, 1}, {0, 2}, {0, 3}});
  const RsaReport b = report_with_ranking({{0, 1}, {0, 2}, {0, 0}, {0, 3}});
  const RsaReport c = report_with_ranking({{1, 0}, {1, 1}, {0, 0}, {0, 1}});

  const Mat<double> identical = jaccard_stability({a, a}, 2);
  EXPECT_DOUBLE_EQ(identical.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(identical.at(0, 0), 1.0);

  // Top-2 sets {h0,h1} and {h1,h2}: intersection 1, union 3.
  const Mat<double> partial = jaccard_stability({a, b}, 2);
  EXPECT_DOUBLE_EQ(partial.at(0, 1), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(partial.at(1, 0), 1.0 / 3.0);

  const Mat<double> disjoint = jaccard_stability({a, c}, 2);
  EXPECT_DOUBLE_EQ(disjoint.at(0, 1), 0.0);

  EXPECT_THROW(jaccard_stability({a, b}, 5), usage_error);
  EXPECT_THROW(jaccard_stability({a}, 2), usage_error);
}

TEST(ReportJson, RoundTrip) {
  const FeatureBank bank = testutil::make_random_balanced_bank(12, 4, 55);
  RsaConfig cfg;
  cfg.k = 1;
  cfg.metric = SelectionMetric::silhouette;
  const RsaReport a = rank_heads(bank, cfg);
  const RsaReport b = rsa_report_from_json(rsa_report_to_json(a));
  EXPECT_EQ(a.ranking, b.ranking);
  EXPECT_EQ(a.selected, b.selected);
  EXPECT_EQ(a.bank_fingerprint, b.bank_fingerprint);
  EXPECT_EQ(to_string(a.config.metric), to_string(b.config.metric));
  ASSERT_EQ(a.scores.size(), b.scores.size());
  for (std::size_t i = 0; i < a.scores.size(); ++i)
    EXPECT_DOUBLE_EQ(a.scores[i].score, b.scores[i].score);
}
