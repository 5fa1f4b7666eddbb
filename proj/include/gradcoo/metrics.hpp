#pragma once

#include <cstddef>
#include <vector>

namespace gradcoo {

struct PRPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
};

struct MetricsReport {
  double auprc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double threshold = 0.0;
  ConfusionCounts counts;
  std::vector<PRPoint> curve;
};

// Average precision: rank by score descending (ties keep input order), then
// the mean of precision-at-rank over the positive items. Labels are 0/1;
// at least one positive is required.
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

// One point per distinct score value, scanned from the highest down;
// each point is the precision/recall of predicting scores >= threshold.
std::vector<PRPoint> pr_curve(const std::vector<double>& scores,
                              const std::vector<int>& labels);

// Prediction rule: score > t. Zero denominators yield zero metrics.
// Only the threshold-dependent fields of the report are populated.
MetricsReport prf1_at_threshold(const std::vector<double>& scores,
                                const std::vector<int>& labels, double t);

// prf1_at_threshold plus AUPRC and the full curve.
MetricsReport evaluate_scores(const std::vector<double>& scores,
                              const std::vector<int>& labels, double t);

// Threshold maximizing F1: candidates are the midpoints of adjacent distinct
// sorted scores plus one value below the minimum (predict-everything-unsafe);
// ties resolve to the smallest candidate. Needs both classes present.
double calibrate_threshold(const std::vector<double>& scores,
                           const std::vector<int>& labels);

}  // namespace gradcoo
