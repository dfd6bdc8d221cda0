#pragma once

#include <map>
#include <string>
#include <vector>

namespace simmil {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// Mann-Whitney statistic P(score+ > score-) + 0.5 P(tie) by exhaustive pair
// counting. Throws std::invalid_argument when only one class is present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Macro-averaged one-vs-rest AUC; scores is row-major [n, classes].
double roc_auc_ovr(const std::vector<double>& scores, int classes,
                   const std::vector<int>& labels);

// Concordance over comparable pairs (shorter-time member uncensored, strict
// time inequality); risk ties count 0.5. Throws when no pair is comparable.
double c_index(const std::vector<double>& risks, const std::vector<double>& times,
               const std::vector<bool>& censored);

// Per-task metric report with per-seed values and mean/std across them.
struct Report {
  std::string task;
  std::string dataset;
  std::string method;
  std::string aggregator;
  uint64_t seed = 0;
  std::map<std::string, double> metrics;

  std::string to_json() const;
  // flat rows: run_id, task, metric, value
  std::string to_csv(const std::string& run_id) const;
};

double sample_std(const std::vector<double>& values);  // n-1; 0 for a single run

}  // namespace simmil
