#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace simmil {

// Central finite-difference verification of every training component:
// the losses (CE, SCE, ranking, survival NLL, NT-Xent), the extractor, the
// prediction head, and both attention aggregators.
struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t coordinates_checked = 0;
  std::map<std::string, double> per_component;  // component -> worst rel err

  bool passed(double tol = 1e-3) const { return max_rel_err < tol; }
};

GradCheckResult run_gradcheck(int trials, uint64_t seed);

}  // namespace simmil
