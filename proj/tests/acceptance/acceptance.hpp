#pragma once

#include <string>

namespace acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome synthetic_pipeline();
Outcome throughput();

}  // namespace acceptance
