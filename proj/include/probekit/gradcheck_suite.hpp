#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace probekit {

inline constexpr double kOpGradTolerance = 1e-6;
inline constexpr double kProbeGradTolerance = 1e-5;

struct GradcheckOptions {
  std::size_t instances = 20;
  std::uint64_t seed = 0x5EEDu;
  // Components whose analytic gradient gets its sign flipped (fault injection
  // for exercising the failure path).
  std::set<std::string> inject_faults;
};

struct ComponentResult {
  std::string name;
  double worst_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t instances = 0;

  bool passed() const { return worst_rel_error < tolerance; }
};

std::vector<std::string> gradcheck_components();

// Finite-difference check of every op, the probe building blocks, and all four
// (strategy, head) probes end to end, on fixed-seed random instances.
std::vector<ComponentResult> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace probekit
