#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "wscam/metrics.hpp"

using namespace wscam;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

}  // namespace

TEST(Confusion, HandCounts) {
  const std::vector<double> s{0.9, 0.1};
  const std::vector<int> y{1, 0};
  EXPECT_EQ(confusion(s, y, 0.5), (ConfusionCounts{1, 0, 1, 0}));
  EXPECT_EQ(confusion(s, y, 0.0), (ConfusionCounts{1, 1, 0, 0}));
  const std::vector<double> tie{0.6, 0.6};
  EXPECT_EQ(confusion(tie, y, 0.5), (ConfusionCounts{1, 1, 0, 0}));
  EXPECT_EQ(confusion(std::vector<double>{0.5}, std::vector<int>{1}, 0.5).tp, 1u);  // inclusive cutoff
  EXPECT_THROW(confusion(s, std::vector<int>{1}, 0.5), std::invalid_argument);
}

TEST(Rates, HandValuesAndUndefined) {
  auto r = classification_rates({23, 0, 0, 9});
  EXPECT_DOUBLE_EQ(*r.tpr, 0.71875);
  EXPECT_DOUBLE_EQ(*r.fnr, 1.0 - 0.71875);
  EXPECT_FALSE(r.tnr.has_value());
  r = classification_rates({0, 3, 2, 0});
  EXPECT_FALSE(r.tpr.has_value());
  EXPECT_FALSE(r.fnr.has_value());
  r = classification_rates({1, 1, 1, 1});
  EXPECT_EQ(*r.tpr, 0.5);
  EXPECT_EQ(*r.tnr, 0.5);
  EXPECT_EQ(*r.fnr, 0.5);
  EXPECT_EQ(*r.accuracy, 0.5);
  EXPECT_FALSE(classification_rates({}).accuracy.has_value());
}

TEST(Auc, HandValues) {
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.4, 0.4, 0.4}, std::vector<int>{1, 0, 1}), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.8, 0.3}, std::vector<int>{1, 0, 1}), 0.5);
  EXPECT_THROW(auc(std::vector<double>{0.9, 0.8}, std::vector<int>{1, 1}), std::invalid_argument);
  EXPECT_THROW(auc(std::vector<double>{0.9}, std::vector<int>{1, 0}), std::invalid_argument);
}

TEST(Auc, MatchesPairEnumerationAndInvariances) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> n(2, 40), level(0, 9);
  for (int trial = 0; trial < 200; ++trial) {
    const int size = n(rng);
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < size; ++i) {
      s.push_back(level(rng) / 10.0);  // coarse grid forces ties
      y.push_back(i % 2 == 0 ? 1 : static_cast<int>(rng() % 2));
    }
    y[1] = 0;
    const double a = auc(s, y);
    EXPECT_NEAR(a, brute_auc(s, y), 1e-12);

    std::vector<double> warped;
    for (double v : s) warped.push_back(std::exp(3.0 * v) - 7.0);
    EXPECT_NEAR(auc(warped, y), a, 1e-12);

    std::vector<int> flipped;
    for (int v : y) flipped.push_back(1 - v);
    EXPECT_NEAR(a + auc(s, flipped), 1.0, 1e-12);

    const auto c = confusion(s, y, 0.45);
    EXPECT_EQ(c.total(), s.size());
  }
}

TEST(Report, JsonKeysAndTable) {
  const std::vector<double> s{0.9, 0.7, 0.4, 0.2};
  const std::vector<int> y{1, 0, 1, 0};
  const auto rep = classification_report(s, y);
  const auto j = to_json(rep);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"accuracy", "auc", "tpr", "tnr", "fnr", "counts"}));
  EXPECT_EQ(j["counts"]["tp"], 1);
  EXPECT_EQ(j["counts"]["fp"], 1);
  EXPECT_DOUBLE_EQ(j["auc"].get<double>(), 0.75);
  const std::string table = format_table("model", rep);
  for (const char* col : {"Accuracy", "AUC", "TPR", "TNR", "FNR"}) EXPECT_NE(table.find(col), std::string::npos);
  EXPECT_NE(table.find("75.00"), std::string::npos);
}
