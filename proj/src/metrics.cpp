#include "metrics.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "json.hpp"

namespace simmil {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw std::invalid_argument("accuracy: prediction/label length mismatch");
  int64_t hits = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++hits;
  return double(hits) / double(predictions.size());
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("roc_auc: score/label length mismatch");
  int64_t pos = 0, neg = 0;
  for (int l : labels) (l != 0 ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("roc_auc: undefined with a single class");
  double concordant = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) concordant += 1.0;
      else if (scores[i] == scores[j]) concordant += 0.5;
    }
  }
  return concordant / (double(pos) * double(neg));
}

double roc_auc_ovr(const std::vector<double>& scores, int classes,
                   const std::vector<int>& labels) {
  if (classes < 2) throw std::invalid_argument("roc_auc_ovr: needs at least two classes");
  if (scores.size() != labels.size() * size_t(classes))
    throw std::invalid_argument("roc_auc_ovr: score matrix shape mismatch");
  double total = 0.0;
  int counted = 0;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> s(labels.size());
    std::vector<int> y(labels.size());
    bool has_pos = false, has_neg = false;
    for (size_t i = 0; i < labels.size(); ++i) {
      s[i] = scores[i * size_t(classes) + size_t(c)];
      y[i] = labels[i] == c ? 1 : 0;
      (y[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;  // absent class contributes nothing
    total += roc_auc(s, y);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("roc_auc_ovr: no class is scoreable");
  return total / double(counted);
}

double c_index(const std::vector<double>& risks, const std::vector<double>& times,
               const std::vector<bool>& censored) {
  if (risks.size() != times.size() || risks.size() != censored.size())
    throw std::invalid_argument("c_index: input length mismatch");
  double concordant = 0.0;
  int64_t comparable = 0;
  for (size_t i = 0; i < times.size(); ++i) {
    if (censored[i]) continue;
    for (size_t j = 0; j < times.size(); ++j) {
      if (i == j || !(times[i] < times[j])) continue;
      ++comparable;
      if (risks[i] > risks[j]) concordant += 1.0;
      else if (risks[i] == risks[j]) concordant += 0.5;
    }
  }
  if (comparable == 0)
    throw std::invalid_argument("c_index: no comparable pair exists");
  return concordant / double(comparable);
}

std::string Report::to_json() const {
  nlohmann::json j{{"task", task},
                   {"dataset", dataset},
                   {"method", method},
                   {"aggregator", aggregator},
                   {"seed", seed},
                   {"metrics", metrics}};
  return j.dump(2);
}

std::string Report::to_csv(const std::string& run_id) const {
  std::string out = "run_id,task,metric,value\n";
  for (const auto& [name, value] : metrics) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    out += run_id + "," + task + "," + name + "," + buf + "\n";
  }
  return out;
}

double sample_std(const std::vector<double>& values) {
  if (values.size() <= 1) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= double(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / double(values.size() - 1));
}

}  // namespace simmil
