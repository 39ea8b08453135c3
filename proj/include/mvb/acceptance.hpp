#pragma once
#include <iosfwd>
#include <string>
#include <vector>

#include "mvb/scenario.hpp"

namespace mvb {

struct CriterionResult {
  int number = 0;
  std::string name;
  bool passed = false;
  std::string detail;
};

struct AcceptanceReport {
  std::vector<CriterionResult> criteria;
  std::vector<ResultRow> rows;  // every stochastic row the suite produced
  bool all_passed = false;
};

std::string criterion_line(const CriterionResult& c);

// criteria 1..10 at a fixed worker cap; deterministic given the frozen seeds
AcceptanceReport run_suite(int threads);

// both passes (1 and 4 workers) plus the cross-thread determinism criterion;
// prints one line per criterion to out as results become available
AcceptanceReport run_all(std::ostream& out);

}  // namespace mvb
