#include "wscam/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace wscam {

ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double cutoff) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= cutoff;
    const bool actual = labels[i] != 0;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ClassificationRates classification_rates(const ConfusionCounts& c) {
  ClassificationRates r;
  if (c.tp + c.fn > 0) {
    r.tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    r.fnr = 1.0 - *r.tpr;
  }
  if (c.tn + c.fp > 0) r.tnr = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  if (c.total() > 0) r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  return r;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of the positives.
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc needs at least one positive and one negative sample");
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

ClassificationReport classification_report(std::span<const double> scores, std::span<const int> labels,
                                           double cutoff) {
  ClassificationReport r;
  r.cutoff = cutoff;
  r.counts = confusion(scores, labels, cutoff);
  r.rates = classification_rates(r.counts);
  r.auc = auc(scores, labels);
  return r;
}

namespace {
nlohmann::ordered_json optional_value(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::string percent(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
  return buf;
}
}  // namespace

nlohmann::ordered_json to_json(const ClassificationReport& report) {
  nlohmann::ordered_json j;
  j["accuracy"] = optional_value(report.rates.accuracy);
  j["auc"] = report.auc;
  j["tpr"] = optional_value(report.rates.tpr);
  j["tnr"] = optional_value(report.rates.tnr);
  j["fnr"] = optional_value(report.rates.fnr);
  j["counts"] = {{"tp", report.counts.tp}, {"fp", report.counts.fp}, {"tn", report.counts.tn}, {"fn", report.counts.fn}};
  return j;
}

std::string format_table(const std::string& row_label, const ClassificationReport& report) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-16s %10s %8s %8s %8s %8s\n", "Model", "Accuracy", "AUC", "TPR", "TNR", "FNR");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-16s %10s %8s %8s %8s %8s\n", row_label.c_str(), percent(report.rates.accuracy).c_str(),
                percent(report.auc).c_str(), percent(report.rates.tpr).c_str(), percent(report.rates.tnr).c_str(),
                percent(report.rates.fnr).c_str());
  out += buf;
  return out;
}

}  // namespace wscam
