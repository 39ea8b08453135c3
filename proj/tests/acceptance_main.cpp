#include <iostream>

#include "mvb/acceptance.hpp"

int main() {
  mvb::AcceptanceReport rep = mvb::run_all(std::cout);
  int passed = 0;
  for (const auto& c : rep.criteria)
    if (c.passed) ++passed;
  std::cout << "acceptance: " << passed << "/" << rep.criteria.size() << " criteria passed\n";
  return rep.all_passed ? 0 : 1;
}
