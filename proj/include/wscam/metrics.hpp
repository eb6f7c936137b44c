#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

namespace wscam {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Predicted positive iff score >= cutoff.
ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double cutoff);

// Undefined rates (zero denominator) are empty.
struct ClassificationRates {
  std::optional<double> tpr;
  std::optional<double> tnr;
  std::optional<double> fnr;
  std::optional<double> accuracy;
};

ClassificationRates classification_rates(const ConfusionCounts& c);

// Mann-Whitney AUC with ties counted 1/2. Throws unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

struct ClassificationReport {
  ConfusionCounts counts;
  ClassificationRates rates;
  double auc = 0.0;
  double cutoff = 0.5;
};

ClassificationReport classification_report(std::span<const double> scores, std::span<const int> labels,
                                           double cutoff = 0.5);

// {accuracy, auc, tpr, tnr, fnr, counts{tp,fp,tn,fn}}; undefined rates are null.
nlohmann::ordered_json to_json(const ClassificationReport& report);

// Aligned text table with Accuracy / AUC / TPR / TNR / FNR columns (percent).
std::string format_table(const std::string& row_label, const ClassificationReport& report);

}  // namespace wscam
