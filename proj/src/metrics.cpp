#include "gradcoo/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "gradcoo/errors.hpp"

namespace gradcoo {

namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("scores and labels differ in length: " +
                        std::to_string(scores.size()) + " vs " +
                        std::to_string(labels.size()));
  }
  if (scores.empty()) throw ContractError("no scores given");
}

std::size_t count_positives(const std::vector<int>& labels) {
  std::size_t p = 0;
  for (int l : labels) p += l != 0 ? 1 : 0;
  return p;
}

// Indices sorted by score descending; equal scores keep input order.
std::vector<std::size_t> ranking(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const std::size_t positives = count_positives(labels);
  if (positives == 0) {
    throw UndefinedMetricError("AUPRC needs at least one positive label");
  }
  const std::vector<std::size_t> idx = ranking(scores);
  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (labels[idx[k]] != 0) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

std::vector<PRPoint> pr_curve(const std::vector<double>& scores,
                              const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const std::size_t positives = count_positives(labels);
  if (positives == 0) {
    throw UndefinedMetricError("a precision-recall curve needs at least one positive");
  }
  const std::vector<std::size_t> idx = ranking(scores);
  std::vector<PRPoint> curve;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (labels[idx[k]] != 0) ++hits;
    const bool last_of_tie_group =
        k + 1 == idx.size() || scores[idx[k + 1]] != scores[idx[k]];
    if (last_of_tie_group) {
      PRPoint p;
      p.threshold = scores[idx[k]];
      p.precision = static_cast<double>(hits) / static_cast<double>(k + 1);
      p.recall = static_cast<double>(hits) / static_cast<double>(positives);
      curve.push_back(p);
    }
  }
  return curve;
}

MetricsReport prf1_at_threshold(const std::vector<double>& scores,
                                const std::vector<int>& labels, double t) {
  check_inputs(scores, labels);
  MetricsReport r;
  r.threshold = t;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] > t;
    const bool actual = labels[i] != 0;
    if (predicted && actual) ++r.counts.tp;
    else if (predicted && !actual) ++r.counts.fp;
    else if (!predicted && actual) ++r.counts.fn;
    else ++r.counts.tn;
  }
  const std::size_t pred_pos = r.counts.tp + r.counts.fp;
  const std::size_t actual_pos = r.counts.tp + r.counts.fn;
  r.precision = pred_pos == 0 ? 0.0
                              : static_cast<double>(r.counts.tp) /
                                    static_cast<double>(pred_pos);
  r.recall = actual_pos == 0 ? 0.0
                             : static_cast<double>(r.counts.tp) /
                                   static_cast<double>(actual_pos);
  r.f1 = r.precision + r.recall == 0.0
             ? 0.0
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

MetricsReport evaluate_scores(const std::vector<double>& scores,
                              const std::vector<int>& labels, double t) {
  MetricsReport r = prf1_at_threshold(scores, labels, t);
  r.auprc = auprc(scores, labels);
  r.curve = pr_curve(scores, labels);
  return r;
}

double calibrate_threshold(const std::vector<double>& scores,
                           const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const std::size_t positives = count_positives(labels);
  if (positives == 0 || positives == labels.size()) {
    throw CalibrationError("threshold calibration needs both classes present");
  }

  std::vector<double> distinct = scores;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<double> candidates;
  candidates.push_back(distinct.front() - 1.0);  // predict everything unsafe
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
    candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
  }

  double best_t = candidates.front();
  double best_f1 = -1.0;
  for (double t : candidates) {  // ascending, so ties keep the smallest t
    const double f1 = prf1_at_threshold(scores, labels, t).f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace gradcoo
